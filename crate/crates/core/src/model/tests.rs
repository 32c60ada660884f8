use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::batching::{batch_graph, BatchingConfig};
use crate::graph::{generate_synthetic, SyntheticConfig};

const H: f64 = 1e-6;

fn cfg(d_x: usize, d_h: usize, layers: usize, k: usize) -> ModelConfig {
    ModelConfig {
        d_x,
        d_h,
        layers,
        k,
        dropout: 0.0,
        ..Default::default()
    }
}

fn set(model: &mut DynBerg, name: &str, data: &[f64]) {
    let id = model.store().id(name).unwrap();
    model.store_mut().get_mut(id).data_mut().copy_from_slice(data);
}

fn zero_all(model: &mut DynBerg) {
    let ids: Vec<_> = model.store().ids().collect();
    for id in ids {
        model.store_mut().get_mut(id).data_mut().fill(0.0);
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(x).to_vec();
    let n = shape.iter().product();
    let r = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let r = tape.constant(&r);
    let p = tape.mul(x, r).unwrap();
    tape.sum(p)
}

/// Central differences on every entry of the named parameters (all
/// trainable ones when `names` is empty).
fn gradcheck<F>(model: &mut DynBerg, names: &[&str], rtol: f64, atol: f64, f: F)
where
    F: Fn(&DynBerg, &mut Tape) -> Var,
{
    model.store_mut().clear_grads();
    let mut tape = Tape::new();
    let loss = f(model, &mut tape);
    let mut store = std::mem::take(model.store_mut());
    tape.backward(loss, &mut store).unwrap();
    *model.store_mut() = store;
    let ids: Vec<ParamId> = model
        .store()
        .ids()
        .filter(|&id| {
            model.store().get(id).requires_grad() && (names.is_empty() || names.contains(&model.store().name(id)))
        })
        .collect();
    assert!(!ids.is_empty());
    for id in ids {
        let analytic = model
            .store()
            .get(id)
            .grad()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; model.store().get(id).numel()]);
        for k in 0..analytic.len() {
            let orig = model.store().get(id).data()[k];
            let mut eval = |v: f64| {
                model.store_mut().get_mut(id).data_mut()[k] = v;
                let mut t = Tape::inference();
                let l = f(model, &mut t);
                t.scalar_value(l)
            };
            let numeric = (eval(orig + H) - eval(orig - H)) / (2.0 * H);
            model.store_mut().get_mut(id).data_mut()[k] = orig;
            let a = analytic[k];
            assert!(
                (a - numeric).abs() <= rtol * a.abs().max(numeric.abs()) + atol,
                "{}[{k}]: analytic {a} vs numeric {numeric}",
                model.store().name(id)
            );
        }
    }
}

#[test]
fn embed_examples() {
    let mut m = DynBerg::new(cfg(2, 2, 1, 1), 0).unwrap();
    zero_all(&mut m);
    let mut t = Tape::inference();
    let x = t.constant_matrix(2, 2, vec![0.0; 4]).unwrap();
    let h = m.embed(&mut t, x, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(t.value(h), &[0.0; 4]);

    set(&mut m, "embed.w", &[1.0, 0.0, 0.0, 1.0]);
    let mut t = Tape::inference();
    let x = t.constant_matrix(1, 2, vec![1.0, -1.0]).unwrap();
    let h = m.embed(&mut t, x, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(t.value(h), &[1.0, 0.0]);
}

#[test]
fn embed_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_matrix(&mut rng, 4, 3);
    let mut m = DynBerg::new(cfg(3, 5, 1, 3), 1).unwrap();
    gradcheck(&mut m, &["embed.w", "embed.b"], 1e-5, 1e-8, |m, t| {
        let x = t.constant_matrix(4, 3, x.data().to_vec()).unwrap();
        let h = m.embed(t, x, &mut ForwardCtx::eval()).unwrap();
        project(t, h, 7)
    });
}

#[test]
fn single_real_node_attends_to_itself() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = DynBerg::new(cfg(3, 4, 1, 3), 2).unwrap();
    let mut t = Tape::inference();
    let x = t.constant_matrix(4, 3, random_matrix(&mut rng, 4, 3).into_data()).unwrap();
    let h0 = t.constant_matrix(4, 4, random_matrix(&mut rng, 4, 4).into_data()).unwrap();
    let mask = [true, false, false, false];
    let out = m.g_transformer_layer(&mut t, 0, h0, x, &mask, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(&t.value(out.attention)[..4], &[1.0, 0.0, 0.0, 0.0]);
    let wv = t.param(m.store(), m.store().id("layer0.wv").unwrap());
    let r = t.param(m.store(), m.store().id("layer0.r").unwrap());
    let v = t.matmul(h0, wv).unwrap();
    let res = t.matmul(x, r).unwrap();
    let want = t.add(v, res).unwrap();
    for c in 0..4 {
        assert!((t.value(out.h)[c] - t.value(want)[c]).abs() < 1e-15);
    }
}

#[test]
fn identical_rows_give_identical_attention_output() {
    let mut m = DynBerg::new(
        ModelConfig {
            residual: Residual::None,
            ..cfg(2, 3, 1, 3)
        },
        3,
    )
    .unwrap();
    set(&mut m, "layer0.wq", &[0.3, -0.2, 0.5, 0.1, 0.4, -0.6, 0.7, 0.2, 0.9]);
    let mut t = Tape::inference();
    let x = t.constant_matrix(4, 2, vec![0.0; 8]).unwrap();
    let h0 = t.constant_matrix(4, 3, [0.5, -1.0, 2.0].repeat(4)).unwrap();
    let out = m.g_transformer_layer(&mut t, 0, h0, x, &[true; 4], &mut ForwardCtx::eval()).unwrap();
    let a = t.value(out.attention);
    assert!(a.iter().all(|&w| (w - 0.25).abs() < 1e-15));
    let h = t.value(out.h);
    for r in 1..4 {
        assert_eq!(&h[r * 3..r * 3 + 3], &h[..3]);
    }
}

#[test]
fn layer_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_matrix(&mut rng, 4, 2);
    let h0 = random_matrix(&mut rng, 4, 3);
    let mut m = DynBerg::new(cfg(2, 3, 1, 3), 4).unwrap();
    let mask = [true, true, true, false];
    gradcheck(&mut m, &["layer0.wq", "layer0.wk", "layer0.wv", "layer0.r"], 1e-4, 1e-8, |m, t| {
        let x = t.constant_matrix(4, 2, x.data().to_vec()).unwrap();
        let h0 = t.constant_matrix(4, 3, h0.data().to_vec()).unwrap();
        let out = m.g_transformer_layer(t, 0, h0, x, &mask, &mut ForwardCtx::eval()).unwrap();
        project(t, out.h, 11)
    });
}

#[test]
fn attention_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = DynBerg::new(cfg(3, 6, 2, 5), 5).unwrap();
    for real in 1..=6 {
        let mask: Vec<bool> = (0..6).map(|i| i < real).collect();
        let mut t = Tape::inference();
        let x = t.constant_matrix(6, 3, random_matrix(&mut rng, 6, 3).into_data()).unwrap();
        let h0 = t.constant_matrix(6, 6, random_matrix(&mut rng, 6, 6).into_data()).unwrap();
        let out = m.g_transformer_layer(&mut t, 1, h0, x, &mask, &mut ForwardCtx::eval()).unwrap();
        for row in t.value(out.attention).chunks(6) {
            let real_sum: f64 = row.iter().zip(&mask).filter(|(_, &k)| k).map(|(a, _)| a).sum();
            assert!((real_sum - 1.0).abs() < 1e-12);
            assert!(row.iter().zip(&mask).filter(|(_, &k)| !k).all(|(&a, _)| a == 0.0));
        }
    }
}

#[test]
fn fusion_examples() {
    let mut t = Tape::inference();
    let h = t.constant_matrix(2, 2, vec![1.0, 1.0, 3.0, 3.0]).unwrap();
    let z = DynBerg::fusion(&mut t, h, &[true, true]).unwrap();
    assert_eq!(t.value(z), &[2.0, 2.0]);
    let z = DynBerg::fusion(&mut t, h, &[false, true]).unwrap();
    assert_eq!(t.value(z), &[3.0, 3.0]);
    assert!(DynBerg::fusion(&mut t, h, &[false, false]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = random_matrix(&mut rng, 4, 3);
    let h = t.constant_matrix(4, 3, m.data().to_vec()).unwrap();
    let z = DynBerg::fusion(&mut t, h, &[true, false, true, true]).unwrap();
    for c in 0..3 {
        let want = (m.get(0, c) + m.get(2, c) + m.get(3, c)) / 3.0;
        assert!((t.value(z)[c] - want).abs() < 1e-15);
    }
}

#[test]
fn reconstruction_examples() {
    let mut m = DynBerg::new(cfg(1, 1, 1, 1), 0).unwrap();
    zero_all(&mut m);
    let mut t = Tape::inference();
    let z = t.constant_matrix(1, 1, vec![0.0]).unwrap();
    let xh = m.reconstruct(&mut t, z).unwrap();
    assert_eq!(t.value(xh), &[0.0]);
    set(&mut m, "rec.w", &[2.0]);
    set(&mut m, "rec.b", &[1.0]);
    let mut t = Tape::inference();
    let z = t.constant_matrix(1, 1, vec![3.0]).unwrap();
    let xh = m.reconstruct(&mut t, z).unwrap();
    assert_eq!(t.value(xh), &[7.0]);

    let x = t.constant_matrix(1, 2, vec![3.0, 4.0]).unwrap();
    let zero = t.constant_matrix(1, 2, vec![0.0, 0.0]).unwrap();
    let l = DynBerg::reconstruction_loss(&mut t, x, zero).unwrap();
    assert!((t.scalar_value(l) - 5.0).abs() < 1e-12);
    let l = DynBerg::reconstruction_loss(&mut t, x, x).unwrap();
    assert!(t.scalar_value(l) <= 1e-6);
    let empty = t.constant_matrix(0, 2, vec![]).unwrap();
    assert!(DynBerg::reconstruction_loss(&mut t, empty, empty).is_err());
}

#[test]
fn reconstruction_loss_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z = random_matrix(&mut rng, 5, 3);
    let x = random_matrix(&mut rng, 5, 4);
    let mut m = DynBerg::new(cfg(4, 3, 1, 1), 7).unwrap();
    gradcheck(&mut m, &["rec.w", "rec.b"], 1e-4, 1e-8, |m, t| {
        let z = t.constant_matrix(5, 3, z.data().to_vec()).unwrap();
        let x = t.constant_matrix(5, 4, x.data().to_vec()).unwrap();
        let xh = m.reconstruct(t, z).unwrap();
        DynBerg::reconstruction_loss(t, x, xh).unwrap()
    });
}

#[test]
fn gru_examples() {
    let mut m = DynBerg::new(cfg(2, 3, 1, 1), 0).unwrap();
    zero_all(&mut m);
    let mut t = Tape::inference();
    let x = t.constant_matrix(1, 3, vec![0.7, -0.2, 0.4]).unwrap();
    let h = t.constant_matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
    let hs = m.gru_step(&mut t, x, h).unwrap();
    assert_eq!(t.value(hs), &[0.5, -1.0, 0.25]);
    let zero = t.constant_matrix(1, 3, vec![0.0; 3]).unwrap();
    let hs = m.gru_step(&mut t, zero, zero).unwrap();
    assert_eq!(t.value(hs), &[0.0; 3]);
}

#[test]
fn gru_gradcheck_all_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_matrix(&mut rng, 1, 4);
    let h = random_matrix(&mut rng, 1, 4);
    let mut m = DynBerg::new(cfg(2, 4, 1, 1), 8).unwrap();
    for b in ["gru.b_r", "gru.b_u", "gru.b_c"] {
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
        set(&mut m, b, &v);
    }
    let blocks = [
        "gru.w_r", "gru.w_u", "gru.w_c", "gru.u_r", "gru.u_u", "gru.u_c", "gru.b_r", "gru.b_u", "gru.b_c",
    ];
    gradcheck(&mut m, &blocks, 1e-4, 1e-8, |m, t| {
        let x = t.constant_matrix(1, 4, x.data().to_vec()).unwrap();
        let h = t.constant_matrix(1, 4, h.data().to_vec()).unwrap();
        let hs = m.gru_step(t, x, h).unwrap();
        project(t, hs, 13)
    });
}

#[test]
fn pooling_examples() {
    let mut t = Tape::inference();
    let one = t.constant_matrix(1, 2, vec![0.3, -0.4]).unwrap();
    let p = DynBerg::pool_timestep(&mut t, one).unwrap();
    assert_eq!(t.value(p), &[0.3, -0.4]);
    let two = t.constant_matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let p = DynBerg::pool_timestep(&mut t, two).unwrap();
    assert_eq!(t.value(p), &[0.5, 0.5]);
    let none = t.constant_matrix(0, 2, vec![]).unwrap();
    assert!(DynBerg::pool_timestep(&mut t, none).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let zs = random_matrix(&mut rng, 100, 3);
    let v = t.constant_matrix(100, 3, zs.data().to_vec()).unwrap();
    let p = DynBerg::pool_timestep(&mut t, v).unwrap();
    for c in 0..3 {
        let want = zs.column(c).iter().sum::<f64>() / 100.0;
        assert!((t.value(p)[c] - want).abs() < 1e-12);
    }
}

#[test]
fn classify_examples() {
    let mut m = DynBerg::new(cfg(2, 3, 1, 1), 0).unwrap();
    let mut t = Tape::inference();
    zero_all(&mut m);
    let z = t.constant_matrix(1, 3, vec![0.3, 0.1, -0.2]).unwrap();
    let hs = t.constant_matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
    let p = m.classify(&mut t, z, Some(hs)).unwrap();
    assert_eq!(t.value(p), &[0.5, 0.5]);

    let mut m = DynBerg::new(cfg(2, 3, 1, 1), 1).unwrap();
    m.set_ablation();
    assert!(m.is_ablation());
    let other = t.constant_matrix(1, 3, vec![-5.0, 9.0, 0.5]).unwrap();
    let a = m.classify(&mut t, z, Some(hs)).unwrap();
    let b = m.classify(&mut t, z, Some(other)).unwrap();
    assert_eq!(t.value(a), t.value(b));

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let m = DynBerg::new(cfg(2, 3, 1, 1), 2).unwrap();
    for _ in 0..20 {
        let z = t.constant_matrix(4, 3, random_matrix(&mut rng, 4, 3).into_data()).unwrap();
        let hs = t.constant_matrix(1, 3, random_matrix(&mut rng, 1, 3).into_data()).unwrap();
        let p = m.classify(&mut t, z, Some(hs)).unwrap();
        for row in t.value(p).chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
    }
}

fn tiny_graph() -> (crate::graph::TemporalGraph, Vec<crate::batching::TimestepBatches>) {
    let g = generate_synthetic(&SyntheticConfig {
        feature_dim: 4,
        informative_dims: 2,
        ..SyntheticConfig::new(2, 5, 0.4, 3)
    })
    .unwrap();
    let b = batch_graph(&g, &BatchingConfig { k: 2, ..Default::default() }).unwrap();
    (g, b)
}

fn total_ce(m: &DynBerg, t: &mut Tape, g: &crate::graph::TemporalGraph, b: &[crate::batching::TimestepBatches]) -> Var {
    let mut hs = m.initial_hidden(t);
    let mut losses = Vec::new();
    for (s, tb) in g.snapshots().iter().zip(b) {
        let out = m.forward_timestep(t, s, &tb.batches, hs, &mut ForwardCtx::eval(), true).unwrap();
        hs = out.hs;
        let targets: Vec<usize> = s.labels.iter().map(|l| l.class_index().unwrap_or(0)).collect();
        let w: Vec<f64> = s.labels.iter().map(|l| if l.is_labeled() { 1.0 } else { 0.5 }).collect();
        losses.push(t.softmax_cross_entropy(out.logits, &targets, &w).unwrap());
    }
    let both = t.add(losses[0], losses[1]).unwrap();
    t.scale(both, 1.0)
}

#[test]
fn full_model_gradcheck() {
    let (g, b) = tiny_graph();
    let mut m = DynBerg::new(cfg(4, 4, 1, 2), 21).unwrap();
    gradcheck(&mut m, &[], 1e-4, 1e-6, |m, t| total_ce(m, t, &g, &b));
}

#[test]
fn padded_features_never_reach_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let m = DynBerg::new(cfg(3, 4, 2, 5), 12).unwrap();
    let mask = [true, true, true, false, false, false];
    let base = random_matrix(&mut rng, 6, 3);
    let mut noisy = base.clone();
    for r in 3..6 {
        for c in 0..3 {
            noisy.set(r, c, rng.random_range(-1e6..1e6));
        }
    }
    let run = |x: &Matrix| {
        let mut t = Tape::inference();
        let e = m.encode(&mut t, x, &mask, &mut ForwardCtx::eval()).unwrap();
        let p = m.classify(&mut t, e.z, None).unwrap();
        (t.value(e.z).to_vec(), t.value(p).to_vec())
    };
    assert_eq!(run(&base), run(&noisy));
}

#[test]
fn frozen_gru_weight_matches_gru_free_run() {
    let (g, b) = tiny_graph();
    let mut m = DynBerg::new(cfg(4, 4, 2, 2), 30).unwrap();
    m.set_ablation();
    let logits = |run_gru: bool| {
        let mut t = Tape::inference();
        let mut hs = m.initial_hidden(&mut t);
        let mut out = Vec::new();
        for (s, tb) in g.snapshots().iter().zip(&b) {
            let o = m.forward_timestep(&mut t, s, &tb.batches, hs, &mut ForwardCtx::eval(), run_gru).unwrap();
            hs = o.hs;
            out.push(t.value(o.logits).to_vec());
        }
        out
    };
    assert_eq!(logits(true), logits(false));
}

#[test]
fn ablation_excludes_fusion_weights_from_training() {
    let mut m = DynBerg::new(cfg(4, 4, 1, 2), 0).unwrap();
    let n = m.classifier_param_ids().len();
    m.set_ablation();
    assert_eq!(m.classifier_param_ids().len(), n - 2);
    assert_eq!(m.fusion_weights(), (1.0, 0.0));
}

#[test]
fn dropout_only_in_training_and_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let m = DynBerg::new(
        ModelConfig {
            dropout: 0.5,
            ..cfg(3, 8, 1, 3)
        },
        14,
    )
    .unwrap();
    let x = random_matrix(&mut rng, 4, 3);
    let mask = [true; 4];
    let run = |ctx: &mut ForwardCtx| {
        let mut t = Tape::inference();
        let e = m.encode(&mut t, &x, &mask, ctx).unwrap();
        t.value(e.z).to_vec()
    };
    assert_eq!(run(&mut ForwardCtx::eval()), run(&mut ForwardCtx::eval()));
    assert_eq!(run(&mut ForwardCtx::train(1)), run(&mut ForwardCtx::train(1)));
    assert_ne!(run(&mut ForwardCtx::train(1)), run(&mut ForwardCtx::eval()));
}

#[test]
fn config_validation() {
    assert!(DynBerg::new(cfg(3, 0, 1, 1), 0).is_err());
    assert!(DynBerg::new(cfg(3, 2, 0, 1), 0).is_err());
    assert!(DynBerg::new(ModelConfig { heads: 2, ..cfg(3, 2, 1, 1) }, 0).is_err());
    let shape = |m: &DynBerg, n: &str| m.store().get(m.store().id(n).unwrap()).shape().to_vec();
    let m = DynBerg::new(cfg(5, 3, 2, 4), 0).unwrap();
    assert_eq!(shape(&m, "embed.w"), vec![5, 3]);
    assert_eq!(shape(&m, "layer1.r"), vec![5, 3]);
    assert_eq!(shape(&m, "rec.w"), vec![3, 5]);
    assert_eq!(shape(&m, "cls.w"), vec![3, 2]);
    assert_eq!(shape(&m, "gru.u_c"), vec![3, 3]);
    assert_eq!(m.fusion_weights(), (0.5, 0.5));
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let m = DynBerg::new(cfg(4, 3, 1, 2), 5).unwrap();
    let mut ckpt = Checkpoint::from_model(&m, 5, 17);
    let mut adam = crate::autodiff::Adam::for_trainable(Default::default(), m.store()).unwrap();
    let mut store = m.store().clone();
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.get(id).numel();
        store.get_mut(id).accumulate_grad(&vec![0.1; n]).unwrap();
    }
    adam.step(&mut store).unwrap();
    ckpt.optimizers.push(("finetune".into(), AdamState::capture(&adam, &store)));
    ckpt.meta = serde_json::json!({"lr": 0.001});
    let back = read_checkpoint(&write_checkpoint(&ckpt).unwrap()).unwrap();
    assert_eq!(back, ckpt);

    let mut fresh = crate::autodiff::Adam::for_trainable(Default::default(), m.store()).unwrap();
    back.optimizer("finetune").unwrap().restore_into(&mut fresh, &store).unwrap();
    assert_eq!(fresh, adam);

    let mut other = DynBerg::new(cfg(4, 5, 1, 2), 5).unwrap();
    let err = other.load_params(&back).unwrap_err().to_string();
    assert!(err.contains("embed.w"), "{err}");
    let mut same = DynBerg::new(cfg(4, 3, 1, 2), 99).unwrap();
    same.load_params(&back).unwrap();
    assert_eq!(same.export_params(), m.export_params());

    let bytes = write_checkpoint(&ckpt).unwrap();
    assert!(read_checkpoint(&bytes[..bytes.len() - 8]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn fusion_and_pooling_ignore_order(seed in 0u64..1000, n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, n, 3);
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let shuffled = m.select_rows(&perm);
        let mut t = Tape::inference();
        let a = t.constant_matrix(n, 3, m.data().to_vec()).unwrap();
        let b = t.constant_matrix(n, 3, shuffled.data().to_vec()).unwrap();
        let pa = DynBerg::pool_timestep(&mut t, a).unwrap();
        let pb = DynBerg::pool_timestep(&mut t, b).unwrap();
        let fa = DynBerg::fusion(&mut t, a, &vec![true; n]).unwrap();
        let fb = DynBerg::fusion(&mut t, b, &vec![true; n]).unwrap();
        for c in 0..3 {
            prop_assert!((t.value(pa)[c] - t.value(pb)[c]).abs() < 1e-12);
            prop_assert!((t.value(fa)[c] - t.value(fb)[c]).abs() < 1e-12);
        }
    }
}
