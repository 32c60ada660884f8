use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dynberg::batching::{batch_graph, load_batches, save_batches, BatchCacheKey, BatchingConfig, TimestepBatches};
use dynberg::graph::{
    dataset_hash, generate_synthetic, load_cache, load_elliptic_dir, save_cache, GraphView, Standardizer, TemporalGraph,
    ELLIPTIC_CLASSES, ELLIPTIC_EDGES, ELLIPTIC_FEATURES,
};
use dynberg::model::{load_checkpoint, save_checkpoint, DynBerg};
use dynberg::stats::{acf, shutdown_analysis, timestep_mean_pca_clusters, ShutdownOptions};
use dynberg::training::{
    aggregate_csv, aggregate_seeds, epoch_window_csv, epoch_window_table, evaluate, pretrain, render_aggregate,
    render_epoch_window_table, shutdown_windows, Dataset, Evaluation, FineTuner, MeanStd, MetricsReport, RunLog,
    TrainConfig,
};
use log::info;
use sha2::{Digest, Sha256};

use crate::config::{Resolver, RunConfig};
use crate::CliError;

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))
}

struct Layout {
    root: PathBuf,
}

impl Layout {
    fn create(root: PathBuf) -> Result<Self, CliError> {
        for sub in ["checkpoints", "logs", "reports"] {
            mkdir(&root.join(sub))?;
        }
        Ok(Self { root })
    }

    fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

/// Identifies the configured data source for cache file names. For files
/// the key covers their paths, sizes and modification times.
fn source_key(cfg: &RunConfig) -> Result<String, CliError> {
    let desc = if cfg.data.synthetic {
        serde_json::to_string(&cfg.data.generator).expect("generator serializes")
    } else {
        let dir = cfg.data.dir.as_ref().expect("checked by load_graph");
        let mut parts = vec![dir.display().to_string()];
        for name in [ELLIPTIC_FEATURES, ELLIPTIC_CLASSES, ELLIPTIC_EDGES] {
            let path = dir.join(name);
            let meta = fs::metadata(&path).map_err(|e| CliError::Core(dynberg::Error::Io { path: path.clone(), source: e }))?;
            let mtime = meta
                .modified()
                .ok()
                .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
                .map_or(0, |d| d.as_secs());
            parts.push(format!("{name}:{}:{mtime}", meta.len()));
        }
        parts.join("|")
    };
    let digest = Sha256::digest(desc.as_bytes());
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

fn load_graph(cfg: &RunConfig) -> Result<TemporalGraph, CliError> {
    if cfg.data.synthetic && cfg.data.dir.is_some() {
        return Err(CliError::Config("--synthetic and --data-dir are exclusive".into()));
    }
    if !cfg.data.synthetic && cfg.data.dir.is_none() {
        return Err(CliError::Config("no data source: pass --data-dir or --synthetic".into()));
    }
    if let Some(cache) = &cfg.data.cache_dir {
        let path = cache.join(format!("graph-{}.bin", source_key(cfg)?));
        if path.exists() {
            info!("loading graph cache {}", path.display());
            return Ok(load_cache(&path)?);
        }
    }
    let g = if cfg.data.synthetic {
        generate_synthetic(&cfg.data.generator)?
    } else {
        let dir = cfg.data.dir.as_ref().expect("checked above");
        info!("loading Elliptic files from {}", dir.display());
        load_elliptic_dir(dir)?
    };
    Ok(g)
}

fn batch_cache_path(cache: &Path, hash: &str, b: &BatchingConfig) -> PathBuf {
    let ranking = serde_json::to_value(b.ranking).expect("ranking serializes");
    cache.join(format!(
        "batches-{}-k{}-a{}-{}.bin",
        &hash[..16],
        b.k,
        b.alpha,
        ranking.as_str().unwrap_or("row")
    ))
}

fn batches_for(cfg: &RunConfig, graph: &TemporalGraph, b: &BatchingConfig) -> Result<Vec<TimestepBatches>, CliError> {
    let Some(cache) = &cfg.data.cache_dir else {
        return Ok(batch_graph(graph, b)?);
    };
    let hash = dataset_hash(graph);
    let key = BatchCacheKey::new(hash.clone(), b);
    let path = batch_cache_path(cache, &hash, b);
    if path.exists() {
        if let Some(all) = load_batches(&path, &key)? {
            info!("loaded batch cache {}", path.display());
            return Ok(all);
        }
    }
    let started = Instant::now();
    let all = batch_graph(graph, b)?;
    info!("batched {} timesteps in {:.1}s", all.len(), started.elapsed().as_secs_f64());
    mkdir(cache)?;
    save_batches(&path, &key, &all)?;
    Ok(all)
}

fn dataset(cfg: &RunConfig, raw: &TemporalGraph, b: &BatchingConfig) -> Result<Dataset, CliError> {
    let batches = batches_for(cfg, raw, b)?;
    let graph = if cfg.data.standardize {
        Standardizer::fit(&GraphView::new(raw, cfg.split.train)?)?.apply(raw)
    } else {
        raw.clone()
    };
    Ok(Dataset::new(graph, batches, cfg.split)?)
}

/// Fills fields that depend on the data and checks cross-section conflicts.
fn finish_config(cfg: &mut RunConfig, r: &Resolver, graph: &TemporalGraph) -> Result<(), CliError> {
    let d_x = graph.feature_dim();
    if r.is_explicit("model.d_x") && cfg.model.d_x != d_x {
        return Err(CliError::Config(format!(
            "model.d_x is {} but the data has {d_x} features",
            cfg.model.d_x
        )));
    }
    cfg.model.d_x = d_x;
    if r.is_explicit("model.k") && r.is_explicit("batching.k") && cfg.model.k != cfg.batching.k {
        return Err(CliError::Config(format!(
            "model.k = {} conflicts with batching.k = {}",
            cfg.model.k, cfg.batching.k
        )));
    }
    if r.is_explicit("model.k") && !r.is_explicit("batching.k") {
        cfg.batching.k = cfg.model.k;
    }
    cfg.model.k = cfg.batching.k;
    if cfg.run.seeds.is_empty() {
        return Err(CliError::Config("run.seeds is empty".into()));
    }
    if cfg.sweep.k.contains(&0) {
        return Err(CliError::Config("sweep.k contains 0".into()));
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    cfg.batching.validate()?;
    cfg.split.validate(graph.num_timesteps())?;
    let b = cfg.train.shutdown_boundary;
    if b == 0 || b > graph.num_timesteps() {
        return Err(CliError::Config(format!(
            "shutdown boundary {b} is outside 1..{}",
            graph.num_timesteps()
        )));
    }
    Ok(())
}

pub fn run(cmd: &str, mut cfg: RunConfig, r: &Resolver) -> Result<(), CliError> {
    let out = cfg.run.out.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("{}-{cmd}", chrono::Local::now().format("%Y%m%d-%H%M%S")))
    });
    cfg.run.out = Some(out.clone());
    let graph = load_graph(&cfg)?;
    let ckpt = if cmd == "evaluate" {
        let path = cfg
            .run
            .checkpoint
            .clone()
            .ok_or_else(|| CliError::Config("evaluate needs --checkpoint".into()))?;
        let c = load_checkpoint(&path)?;
        let explicit_model = ["d_h", "layers", "k", "heads", "residual", "hidden_state"]
            .iter()
            .any(|k| r.is_explicit(&format!("model.{k}")));
        if explicit_model && c.model != cfg.model {
            return Err(CliError::Core(dynberg::Error::Checkpoint(format!(
                "model config differs from the checkpoint:\n  config:     {}\n  checkpoint: {}",
                serde_json::to_string(&cfg.model).expect("serializes"),
                serde_json::to_string(&c.model).expect("serializes")
            ))));
        }
        if r.is_explicit("batching.k") && cfg.batching.k != c.model.k {
            return Err(CliError::Core(dynberg::Error::Checkpoint(format!(
                "batching.k = {} but the checkpoint was trained with k = {}",
                cfg.batching.k, c.model.k
            ))));
        }
        cfg.model = c.model.clone();
        cfg.batching.k = c.model.k;
        Some(c)
    } else {
        None
    };
    finish_config(&mut cfg, r, &graph)?;
    let layout = Layout::create(out)?;
    write(&layout.root.join("config.json"), &cfg.to_flat_json())?;
    info!("writing {} outputs to {}", cmd, layout.root.display());
    match cmd {
        "preprocess" => preprocess(&cfg, &graph, &layout),
        "train" => train(&cfg, &graph, &layout),
        "sweep-k" => sweep_k(&cfg, &graph, &layout),
        "evaluate" => evaluate_cmd(&cfg, &graph, &layout, ckpt.expect("loaded above")),
        "analyze" => analyze(&cfg, &graph, &layout),
        _ => unreachable!("clap restricts commands"),
    }
}

fn preprocess(cfg: &RunConfig, graph: &TemporalGraph, layout: &Layout) -> Result<(), CliError> {
    let c = graph.label_counts();
    println!(
        "{} nodes, {} edges, {} timesteps; labels: {} illicit, {} licit, {} unknown",
        graph.num_nodes(),
        graph.num_edges(),
        graph.num_timesteps(),
        c.illicit,
        c.licit,
        c.unknown
    );
    let mut csv = String::from("timestep,nodes,edges,illicit,licit,unknown\n");
    for s in graph.snapshots() {
        let c = s.label_counts();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.timestep,
            s.num_nodes(),
            s.edges.len(),
            c.illicit,
            c.licit,
            c.unknown
        ));
    }
    write(&layout.reports().join("graph_summary.csv"), &csv)?;
    let mut cfg = cfg.clone();
    let cache = cfg.data.cache_dir.clone().unwrap_or_else(|| layout.root.join("cache"));
    mkdir(&cache)?;
    cfg.data.cache_dir = Some(cache.clone());
    let path = cache.join(format!("graph-{}.bin", source_key(&cfg)?));
    save_cache(graph, &path)?;
    println!("graph cache: {}", path.display());
    let batches = batches_for(&cfg, graph, &cfg.batching)?;
    let hash = dataset_hash(graph);
    println!(
        "batch cache: {} ({} timesteps, k = {})",
        batch_cache_path(&cache, &hash, &cfg.batching).display(),
        batches.len(),
        cfg.batching.k
    );
    Ok(())
}

struct SeedOutcome {
    seed: u64,
    log: RunLog,
    final_eval: Evaluation,
}

fn run_seed(cfg: &RunConfig, data: &Dataset, model_cfg: &dynberg::model::ModelConfig, seed: u64, tag: &str, layout: &Layout) -> Result<SeedOutcome, CliError> {
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let started = Instant::now();
    let mut model = DynBerg::new(model_cfg.clone(), seed)?;
    if !cfg.run.skip_pretrain && train_cfg.pretrain_epochs > 0 {
        let p = pretrain(&mut model, data, &train_cfg)?;
        info!(
            "{tag}: pretrain reconstruction loss {:.4} -> {:.4}",
            p.initial_loss, p.final_loss
        );
        let mut csv = String::from("epoch,reconstruction_loss\n");
        for (i, l) in p.epoch_losses.iter().enumerate() {
            csv.push_str(&format!("{},{l:.6}\n", i + 1));
        }
        write(&layout.logs().join(format!("{tag}-pretrain.csv")), &csv)?;
    }
    let mut tuner = FineTuner::new(model, data, train_cfg)?;
    tuner.run()?;
    save_checkpoint(&layout.checkpoints().join(format!("{tag}.ckpt")), &tuner.checkpoint())?;
    let final_eval = tuner
        .last_evaluation()
        .cloned()
        .ok_or_else(|| CliError::Core(dynberg::Error::Invariant("final epoch was not evaluated".into())))?;
    let (_, mut log) = tuner.finish();
    log.wall_seconds = started.elapsed().as_secs_f64();
    write(&layout.logs().join(format!("{tag}.csv")), &log.to_csv())?;
    write(
        &layout.reports().join(format!("{tag}-timesteps.csv")),
        &final_eval.test.timesteps_csv(),
    )?;
    write(
        &layout.reports().join(format!("{tag}-windows.csv")),
        &final_eval.test.windows_csv(),
    )?;
    info!(
        "{tag}: test illicit F1 {:.4}, micro F1 {:.4} ({:.1}s)",
        final_eval.test.illicit_f1, final_eval.test.micro_f1, log.wall_seconds
    );
    Ok(SeedOutcome { seed, log, final_eval })
}

fn run_seeds(cfg: &RunConfig, data: &Dataset, model_cfg: &dynberg::model::ModelConfig, prefix: &str, layout: &Layout) -> Result<Vec<SeedOutcome>, CliError> {
    let tag = |s: u64| format!("{prefix}seed-{s}");
    if cfg.run.parallel_seeds && cfg.run.seeds.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = cfg
                .run
                .seeds
                .iter()
                .map(|&s| scope.spawn(move || run_seed(cfg, data, model_cfg, s, &tag(s), layout)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed thread panicked"))
                .collect()
        })
    } else {
        cfg.run
            .seeds
            .iter()
            .map(|&s| run_seed(cfg, data, model_cfg, s, &tag(s), layout))
            .collect()
    }
}

fn model_title(cfg: &RunConfig) -> &'static str {
    if cfg.train.ablation_no_gru {
        "DynBERG without GRU"
    } else {
        "DynBERG"
    }
}

fn train(cfg: &RunConfig, graph: &TemporalGraph, layout: &Layout) -> Result<(), CliError> {
    let data = dataset(cfg, graph, &cfg.batching)?;
    let outcomes = run_seeds(cfg, &data, &cfg.model, "", layout)?;
    let reports: Vec<MetricsReport> = outcomes.iter().map(|o| o.final_eval.test.clone()).collect();
    let rows = aggregate_seeds(&reports);
    let title = format!(
        "{} (illicit / micro F1 mean(stddev) over {} seed{})",
        model_title(cfg),
        outcomes.len(),
        if outcomes.len() == 1 { "" } else { "s" }
    );
    let table = render_aggregate(&title, &rows);
    print!("{table}");
    write(&layout.reports().join("summary.txt"), &table)?;
    write(&layout.reports().join("summary.csv"), &aggregate_csv(&rows))?;

    let windows = shutdown_windows(cfg.split.test, cfg.train.shutdown_boundary);
    let logs: Vec<RunLog> = outcomes.iter().map(|o| o.log.clone()).collect();
    let epochs = epoch_window_table(&logs, &windows);
    let title = format!("{} illicit F1 mean(stddev) by epoch", model_title(cfg));
    write(
        &layout.reports().join("epochs.txt"),
        &render_epoch_window_table(&title, &windows, &epochs),
    )?;
    write(&layout.reports().join("epochs.csv"), &epoch_window_csv(&windows, &epochs))?;
    let mut seeds = String::from("seed,test_illicit_f1,test_micro_f1,train_illicit_f1,wall_seconds\n");
    for o in &outcomes {
        seeds.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.3}\n",
            o.seed, o.final_eval.test.illicit_f1, o.final_eval.test.micro_f1, o.final_eval.train.illicit_f1, o.log.wall_seconds
        ));
    }
    // wall time varies between runs; kept apart from the reproducible outputs
    write(&layout.logs().join("seeds.csv"), &seeds)?;
    Ok(())
}

fn sweep_k(cfg: &RunConfig, graph: &TemporalGraph, layout: &Layout) -> Result<(), CliError> {
    let mut text = format!("{:>4}  {:<16}  {:<16}\n", "k", "illicit F1", "micro F1");
    let mut csv = String::from("k,illicit_f1_mean,illicit_f1_std,micro_f1_mean,micro_f1_std,seeds\n");
    for &k in &cfg.sweep.k {
        let batching = BatchingConfig {
            k,
            ..cfg.batching
        };
        let model_cfg = dynberg::model::ModelConfig {
            k,
            ..cfg.model.clone()
        };
        let data = dataset(cfg, graph, &batching)?;
        let outcomes = run_seeds(cfg, &data, &model_cfg, &format!("k{k}-"), layout)?;
        let f1: Vec<f64> = outcomes.iter().map(|o| o.final_eval.test.illicit_f1).collect();
        let micro: Vec<f64> = outcomes.iter().map(|o| o.final_eval.test.micro_f1).collect();
        let (f1, micro) = (MeanStd::of(&f1), MeanStd::of(&micro));
        text.push_str(&format!("{k:>4}  {:<16}  {:<16}\n", f1.to_string(), micro.to_string()));
        csv.push_str(&format!(
            "{k},{:.6},{:.6},{:.6},{:.6},{}\n",
            f1.mean, f1.std, micro.mean, micro.std, f1.n
        ));
    }
    print!("{text}");
    write(&layout.reports().join("sweep_k.txt"), &text)?;
    write(&layout.reports().join("sweep_k.csv"), &csv)?;
    Ok(())
}

fn evaluate_cmd(cfg: &RunConfig, graph: &TemporalGraph, layout: &Layout, ckpt: dynberg::model::Checkpoint) -> Result<(), CliError> {
    let data = dataset(cfg, graph, &cfg.batching)?;
    let mut model = DynBerg::new(ckpt.model.clone(), ckpt.seed)?;
    model.load_params(&ckpt)?;
    if cfg.train.ablation_no_gru {
        model.set_ablation();
    }
    let ev = evaluate(&model, &data, &cfg.train)?;
    let rep = &ev.test;
    write(&layout.reports().join("eval_timesteps.csv"), &rep.timesteps_csv())?;
    write(&layout.reports().join("eval_windows.csv"), &rep.windows_csv())?;
    println!(
        "test illicit F1 {:.4}, micro F1 {:.4} (epoch {} checkpoint, seed {})",
        rep.illicit_f1, rep.micro_f1, ckpt.epoch, ckpt.seed
    );
    println!("{:<16} {:<16} {:<16}", "window", "illicit F1", "micro F1");
    for w in &rep.windows {
        println!(
            "{:<16} {:<16} {:<16}",
            w.window.name,
            w.illicit_f1.to_string(),
            w.micro_f1.to_string()
        );
    }
    Ok(())
}

fn analyze(cfg: &RunConfig, graph: &TemporalGraph, layout: &Layout) -> Result<(), CliError> {
    let a = &cfg.analysis;
    let opts = ShutdownOptions {
        boundary: cfg.train.shutdown_boundary,
        top: a.top,
        bins: a.bins,
        skip_timestep: a.shutdown_skip_timestep,
    };
    let report = shutdown_analysis(graph, &opts)?;
    let text = report.render();
    print!("{text}");
    let rep = layout.reports();
    write(&rep.join("shutdown.txt"), &text)?;
    write(&rep.join("chi2.csv"), &report.chi2_csv())?;
    write(&rep.join("moments.csv"), &report.summary_csv())?;
    write(&rep.join("ks.csv"), &report.ks_csv())?;

    let clusters = timestep_mean_pca_clusters(graph, a.clusters.min(graph.num_timesteps()), a.pca_skip_timestep)?;
    let mut csv = String::from("timestep,pc1_mean,pc2_mean,cluster\n");
    for (i, (m, c)) in clusters.means.iter().zip(&clusters.assignments).enumerate() {
        csv.push_str(&format!("{},{:.10e},{:.10e},{c}\n", i + 1, m[0], m[1]));
    }
    write(&rep.join("pca_clusters.csv"), &csv)?;
    let lags = a.acf_lags.min(graph.num_timesteps().saturating_sub(1));
    let pc = |c: usize| clusters.means.iter().map(|m| m[c]).collect::<Vec<f64>>();
    let (r1, r2) = (acf(&pc(0), lags)?, acf(&pc(1), lags)?);
    let mut csv = String::from("lag,pc1,pc2\n");
    for h in 0..=lags {
        csv.push_str(&format!("{h},{:.10},{:.10}\n", r1[h], r2[h]));
    }
    write(&rep.join("acf.csv"), &csv)?;
    println!(
        "\nPCA explained variance {:.4}, {:.4}; {} timestep clusters, inertia {:.4}",
        clusters.explained_variance[0],
        clusters.explained_variance[1],
        a.clusters,
        clusters.inertia
    );
    Ok(())
}
