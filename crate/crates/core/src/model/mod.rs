//! The DynBERG network.
//!
//! A subgraph's raw features `X` ((k+1)×d_x, target first) are embedded,
//! passed through `D` graph-transformer layers with a raw-feature residual,
//! and averaged into one vector `z`. Per timestep the `z` of every target is
//! average-pooled into a GRU update, and each target is classified from
//! `w_BERG·z + w_GRU·HS_p`. All vectors are `1×d` rows.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{xavier_uniform, ParamId, ParamStore, Tape, Tensor, Var};
use crate::batching::SubgraphBatch;
use crate::error::{Error, Result};
use crate::graph::GraphSnapshot;
use crate::matrix::Matrix;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, AdamState, Checkpoint};

/// Smoothing inside the reconstruction norm `√(‖r‖² + ε)`.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Residual {
    /// Add `X·R` of the raw subgraph features after every layer.
    #[default]
    Raw,
    None,
}

/// Which GRU state the classifier of timestep `p` reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenState {
    /// `HS_p`, already updated with timestep `p`.
    #[default]
    Post,
    /// `HS_{p-1}`.
    Pre,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_x: usize,
    pub d_h: usize,
    pub layers: usize,
    pub k: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub heads: usize,
    pub residual: Residual,
    pub hidden_state: HiddenState,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_x: 166,
            d_h: 32,
            layers: 2,
            k: 11,
            num_classes: 2,
            dropout: 0.1,
            heads: 1,
            residual: Residual::Raw,
            hidden_state: HiddenState::Post,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.d_x >= 1, "d_x must be >= 1"),
            (self.d_h >= 1, "d_h must be >= 1"),
            (self.layers >= 1, "layers must be >= 1"),
            (self.k >= 1, "k must be >= 1"),
            (self.num_classes == 2, "num_classes must be 2"),
            ((0.0..1.0).contains(&self.dropout), "dropout must lie in [0, 1)"),
            (self.heads == 1, "only single-head attention is implemented"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::contract(msg));
            }
        }
        Ok(())
    }
}

/// Dropout source for one forward pass. Evaluation passes carry no RNG.
pub struct ForwardCtx {
    rng: Option<ChaCha8Rng>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self { rng: None }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }
}

#[derive(Clone, Debug)]
struct LayerIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    r: Option<ParamId>,
}

#[derive(Clone, Debug)]
struct GruIds {
    w: [ParamId; 3],
    u: [ParamId; 3],
    b: [ParamId; 3],
}

#[derive(Clone, Debug)]
struct Ids {
    embed_w: ParamId,
    embed_b: ParamId,
    layers: Vec<LayerIds>,
    rec_w: ParamId,
    rec_b: ParamId,
    cls_w: ParamId,
    cls_b: ParamId,
    gru: GruIds,
    w_berg: ParamId,
    w_gru: ParamId,
}

pub struct LayerOutput {
    pub h: Var,
    /// `(k+1)×(k+1)` attention weights; masked columns are exactly 0.
    pub attention: Var,
}

pub struct EncoderOutput {
    /// Final-layer states, `(k+1)×d_h`.
    pub h: Var,
    /// Fused target representation, `1×d_h`.
    pub z: Var,
}

pub struct TimestepOutput {
    /// One fused row per target, `n×d_h`.
    pub z: Var,
    pub pooled: Var,
    /// Hidden state after this timestep.
    pub hs: Var,
    /// `n×2` class logits.
    pub logits: Var,
}

/// Parameters and forward pass of the network.
pub struct DynBerg {
    config: ModelConfig,
    store: ParamStore,
    ids: Ids,
}

impl DynBerg {
    /// Xavier-uniform weights, zero biases, fusion weights 0.5.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dx, dh, c) = (config.d_x, config.d_h, config.num_classes);
        let mut store = ParamStore::new();
        let zeros = |n| Tensor::zeros(vec![1, n]);

        let embed_w = store.register("embed.w", xavier_uniform(&mut rng, dx, dh))?;
        let embed_b = store.register("embed.b", zeros(dh))?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let wq = store.register(format!("layer{l}.wq"), xavier_uniform(&mut rng, dh, dh))?;
            let wk = store.register(format!("layer{l}.wk"), xavier_uniform(&mut rng, dh, dh))?;
            let wv = store.register(format!("layer{l}.wv"), xavier_uniform(&mut rng, dh, dh))?;
            let r = match config.residual {
                Residual::Raw => Some(store.register(format!("layer{l}.r"), xavier_uniform(&mut rng, dx, dh))?),
                Residual::None => None,
            };
            layers.push(LayerIds { wq, wk, wv, r });
        }
        let rec_w = store.register("rec.w", xavier_uniform(&mut rng, dh, dx))?;
        let rec_b = store.register("rec.b", zeros(dx))?;
        let cls_w = store.register("cls.w", xavier_uniform(&mut rng, dh, c))?;
        let cls_b = store.register("cls.b", zeros(c))?;
        let mut gate = |store: &mut ParamStore, kind: &str, g: &str| {
            store.register(format!("gru.{kind}_{g}"), xavier_uniform(&mut rng, dh, dh))
        };
        let w = [gate(&mut store, "w", "r")?, gate(&mut store, "w", "u")?, gate(&mut store, "w", "c")?];
        let u = [gate(&mut store, "u", "r")?, gate(&mut store, "u", "u")?, gate(&mut store, "u", "c")?];
        let b = [
            store.register("gru.b_r", zeros(dh))?,
            store.register("gru.b_u", zeros(dh))?,
            store.register("gru.b_c", zeros(dh))?,
        ];
        let w_berg = store.register("fuse.w_berg", Tensor::scalar(0.5))?;
        let w_gru = store.register("fuse.w_gru", Tensor::scalar(0.5))?;
        Ok(Self {
            config,
            store,
            ids: Ids {
                embed_w,
                embed_b,
                layers,
                rec_w,
                rec_b,
                cls_w,
                cls_b,
                gru: GruIds { w, u, b },
                w_berg,
                w_gru,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// The counterpart without temporal modelling: `w_BERG = 1`, `w_GRU = 0`,
    /// both frozen.
    pub fn set_ablation(&mut self) {
        for (id, v) in [(self.ids.w_berg, 1.0), (self.ids.w_gru, 0.0)] {
            self.store.get_mut(id).data_mut()[0] = v;
            self.store.set_trainable(id, false);
        }
    }

    pub fn is_ablation(&self) -> bool {
        !self.store.get(self.ids.w_gru).requires_grad() && self.store.get(self.ids.w_gru).data()[0] == 0.0
    }

    pub fn fusion_weights(&self) -> (f64, f64) {
        (
            self.store.get(self.ids.w_berg).data()[0],
            self.store.get(self.ids.w_gru).data()[0],
        )
    }

    /// Parameters used by reconstruction pre-training.
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.ids.embed_w, self.ids.embed_b];
        for l in &self.ids.layers {
            ids.extend([l.wq, l.wk, l.wv]);
            ids.extend(l.r);
        }
        ids.extend([self.ids.rec_w, self.ids.rec_b]);
        ids
    }

    /// Trainable parameters used by classification.
    pub fn classifier_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.ids.embed_w, self.ids.embed_b];
        for l in &self.ids.layers {
            ids.extend([l.wq, l.wk, l.wv]);
            ids.extend(l.r);
        }
        ids.extend([self.ids.cls_w, self.ids.cls_b]);
        ids.extend(self.ids.gru.w);
        ids.extend(self.ids.gru.u);
        ids.extend(self.ids.gru.b);
        ids.extend([self.ids.w_berg, self.ids.w_gru]);
        ids.retain(|&id| self.store.get(id).requires_grad());
        ids
    }

    fn p(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param(&self.store, id)
    }

    fn dropout(&self, tape: &mut Tape, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let rate = self.config.dropout;
        let Some(rng) = ctx.rng.as_mut() else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = tape.shape(x).to_vec();
        let mask = (0..tape.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let m = tape.constant(&Tensor::new(shape, mask)?);
        tape.mul(x, m)
    }

    /// `relu(X·W + b)`.
    pub fn embed(&self, tape: &mut Tape, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let (w, b) = (self.p(tape, self.ids.embed_w), self.p(tape, self.ids.embed_b));
        let xw = tape.matmul(x, w)?;
        let a = tape.add_row(xw, b)?;
        let h = tape.relu(a);
        self.dropout(tape, h, ctx)
    }

    /// `softmax(QKᵀ/√d_h)·V + X·R`, with masked key columns at probability 0.
    pub fn g_transformer_layer(
        &self,
        tape: &mut Tape,
        layer: usize,
        h_prev: Var,
        x: Var,
        mask: &[bool],
        ctx: &mut ForwardCtx,
    ) -> Result<LayerOutput> {
        let ids = self
            .ids
            .layers
            .get(layer)
            .ok_or_else(|| Error::contract(format!("layer {layer} out of range")))?
            .clone();
        let (wq, wk, wv) = (self.p(tape, ids.wq), self.p(tape, ids.wk), self.p(tape, ids.wv));
        let q = tape.matmul(h_prev, wq)?;
        let k = tape.matmul(h_prev, wk)?;
        let v = tape.matmul(h_prev, wv)?;
        let kt = tape.transpose(k)?;
        let qk = tape.matmul(q, kt)?;
        let logits = tape.scale(qk, 1.0 / (self.config.d_h as f64).sqrt());
        let attention = tape.masked_softmax_rows(logits, mask)?;
        let av = tape.matmul(attention, v)?;
        let av = self.dropout(tape, av, ctx)?;
        let h = match ids.r {
            Some(r) => {
                let r = self.p(tape, r);
                let res = tape.matmul(x, r)?;
                tape.add(av, res)?
            }
            None => av,
        };
        Ok(LayerOutput { h, attention })
    }

    /// Mean of the unmasked rows of `h`.
    pub fn fusion(tape: &mut Tape, h: Var, mask: &[bool]) -> Result<Var> {
        let real: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if real.is_empty() {
            return Err(Error::contract("fusion over a fully masked subgraph"));
        }
        if tape.shape(h).first() != Some(&mask.len()) {
            return Err(Error::Dimension {
                op: "fusion",
                left: tape.shape(h).to_vec(),
                right: vec![mask.len()],
            });
        }
        let rows = tape.select_rows(h, &real)?;
        tape.mean_rows(rows)
    }

    /// Full encoder on one subgraph. Padded rows of `features` are zeroed
    /// before use.
    pub fn encode(&self, tape: &mut Tape, features: &Matrix, mask: &[bool], ctx: &mut ForwardCtx) -> Result<EncoderOutput> {
        if features.cols() != self.config.d_x || features.rows() != mask.len() {
            return Err(Error::Dimension {
                op: "encode",
                left: vec![features.rows(), features.cols()],
                right: vec![mask.len(), self.config.d_x],
            });
        }
        let mut data = features.data().to_vec();
        for (r, &m) in mask.iter().enumerate() {
            if !m {
                data[r * features.cols()..(r + 1) * features.cols()].fill(0.0);
            }
        }
        let x = tape.constant_matrix(features.rows(), features.cols(), data)?;
        let mut h = self.embed(tape, x, ctx)?;
        for l in 0..self.config.layers {
            h = self.g_transformer_layer(tape, l, h, x, mask, ctx)?.h;
        }
        let z = Self::fusion(tape, h, mask)?;
        Ok(EncoderOutput { h, z })
    }

    pub fn encode_batch(
        &self,
        tape: &mut Tape,
        snapshot: &GraphSnapshot,
        batch: &SubgraphBatch,
        ctx: &mut ForwardCtx,
    ) -> Result<EncoderOutput> {
        self.encode(tape, &batch.features(snapshot), &batch.mask, ctx)
    }

    /// Affine `d_h → d_x` map, applied row-wise.
    pub fn reconstruct(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let (w, b) = (self.p(tape, self.ids.rec_w), self.p(tape, self.ids.rec_b));
        let zw = tape.matmul(z, w)?;
        tape.add_row(zw, b)
    }

    /// Mean over rows of `√(‖x − x̂‖² + ε)`.
    pub fn reconstruction_loss(tape: &mut Tape, x: Var, x_hat: Var) -> Result<Var> {
        if tape.shape(x).first().copied().unwrap_or(0) == 0 {
            return Err(Error::contract("reconstruction loss over no samples"));
        }
        let r = tape.sub(x, x_hat)?;
        let norms = tape.row_l2_norm(r, NORM_EPS)?;
        Ok(tape.mean(norms))
    }

    /// One GRU update from the pooled timestep vector.
    pub fn gru_step(&self, tape: &mut Tape, pooled: Var, hs_prev: Var) -> Result<Var> {
        let g = self.ids.gru.clone();
        let gate = |tape: &mut Tape, i: usize, h: Var| -> Result<Var> {
            let (w, u, b) = (self.p(tape, g.w[i]), self.p(tape, g.u[i]), self.p(tape, g.b[i]));
            let xw = tape.matmul(pooled, w)?;
            let hu = tape.matmul(h, u)?;
            let s = tape.add(xw, hu)?;
            tape.add_row(s, b)
        };
        let r_pre = gate(tape, 0, hs_prev)?;
        let r = tape.sigmoid(r_pre);
        let u_pre = gate(tape, 1, hs_prev)?;
        let u = tape.sigmoid(u_pre);
        let rh = tape.mul(r, hs_prev)?;
        let c_pre = gate(tape, 2, rh)?;
        let c = tape.tanh(c_pre);
        let ones = tape.constant(&Tensor::new(tape.shape(u).to_vec(), vec![1.0; tape.value(u).len()])?);
        let keep = tape.sub(ones, u)?;
        let old = tape.mul(keep, hs_prev)?;
        let new = tape.mul(u, c)?;
        tape.add(old, new)
    }

    /// Mean of the stacked `z` rows.
    pub fn pool_timestep(tape: &mut Tape, z: Var) -> Result<Var> {
        if tape.shape(z).first().copied().unwrap_or(0) == 0 {
            return Err(Error::contract("pooling an empty timestep"));
        }
        tape.mean_rows(z)
    }

    /// `FC(w_BERG·z + w_GRU·HS)` for every row of `z`; `hs = None` evaluates
    /// `FC(w_BERG·z)` without touching the GRU state.
    pub fn classify_logits(&self, tape: &mut Tape, z: Var, hs: Option<Var>) -> Result<Var> {
        let wb = self.p(tape, self.ids.w_berg);
        let mut mix = tape.scale_by(wb, z)?;
        if let Some(hs) = hs {
            let wg = self.p(tape, self.ids.w_gru);
            let g = tape.scale_by(wg, hs)?;
            mix = tape.add_row(mix, g)?;
        }
        let (w, b) = (self.p(tape, self.ids.cls_w), self.p(tape, self.ids.cls_b));
        let l = tape.matmul(mix, w)?;
        tape.add_row(l, b)
    }

    pub fn classify(&self, tape: &mut Tape, z: Var, hs: Option<Var>) -> Result<Var> {
        let l = self.classify_logits(tape, z, hs)?;
        tape.softmax_rows(l)
    }

    pub fn initial_hidden(&self, tape: &mut Tape) -> Var {
        tape.constant(&Tensor::zeros(vec![1, self.config.d_h]))
    }

    /// Encodes every batch of a snapshot, updates the GRU and classifies.
    /// With `run_gru = false` the GRU is skipped entirely and `hs` is
    /// returned unchanged.
    pub fn forward_timestep(
        &self,
        tape: &mut Tape,
        snapshot: &GraphSnapshot,
        batches: &[SubgraphBatch],
        hs_prev: Var,
        ctx: &mut ForwardCtx,
        run_gru: bool,
    ) -> Result<TimestepOutput> {
        if batches.is_empty() {
            return Err(Error::contract(format!("timestep {} has no batches", snapshot.timestep)));
        }
        let zs = batches
            .iter()
            .map(|b| Ok(self.encode_batch(tape, snapshot, b, ctx)?.z))
            .collect::<Result<Vec<_>>>()?;
        let z = tape.concat_rows(&zs)?;
        let pooled = Self::pool_timestep(tape, z)?;
        let (hs, logits) = if run_gru {
            let hs = self.gru_step(tape, pooled, hs_prev)?;
            let read = match self.config.hidden_state {
                HiddenState::Post => hs,
                HiddenState::Pre => hs_prev,
            };
            (hs, self.classify_logits(tape, z, Some(read))?)
        } else {
            (hs_prev, self.classify_logits(tape, z, None)?)
        };
        Ok(TimestepOutput { z, pooled, hs, logits })
    }

    /// Copies parameter values from a checkpoint, requiring identical names
    /// and shapes.
    pub fn load_params(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let mut diff = Vec::new();
        for (_, p) in self.store.iter() {
            match ckpt.params.iter().find(|(n, _)| n == &p.name) {
                None => diff.push(format!("missing {}", p.name)),
                Some((_, t)) if t.shape() != p.tensor.shape() => diff.push(format!(
                    "{}: checkpoint shape {:?}, model shape {:?}",
                    p.name,
                    t.shape(),
                    p.tensor.shape()
                )),
                Some(_) => {}
            }
        }
        for (n, _) in &ckpt.params {
            if self.store.id(n).is_none() {
                diff.push(format!("unexpected {n}"));
            }
        }
        if !diff.is_empty() {
            return Err(Error::Checkpoint(format!("parameter mismatch: {}", diff.join("; "))));
        }
        for (n, t) in &ckpt.params {
            let id = self.store.id(n).expect("checked above");
            self.store.get_mut(id).data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    /// Named copies of every parameter, in registration order.
    pub fn export_params(&self) -> Vec<(String, Tensor)> {
        self.store
            .iter()
            .map(|(_, p)| {
                let t = Tensor::new(p.tensor.shape().to_vec(), p.tensor.data().to_vec()).expect("valid shape");
                (p.name.clone(), t)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
