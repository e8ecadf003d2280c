//! Deep Koopformer: a Transformer encoder maps a window of states to a
//! latent vector, a stable linear Koopman operator advances it one step,
//! and a linear decoder reads out the next `H` states.
//!
//! The operator is `K = orth(U_raw)·diag(0.99·σ(S_raw))·orth(V_raw)ᵀ`, so
//! its singular values are the clamped `S_i` and `‖K‖₂ < 0.99` whatever the
//! raw parameters are.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::blocks::{avg_pool_tokens, decompose, encoder_layer, sinusoidal_pe, AttentionKind, EncoderLayerWeights, Linear, MhaConfig};
use crate::error::{shape_err, Error, Result};
use crate::models::Family;
use crate::params::{Bound, ParamId, ParamStore};
use crate::probsparse::ProbSparseConfig;
use crate::dynsys::{simulate, System};
use crate::rng::{derive_seed, label_hash, prng, Prng};
use crate::tape::{sigmoid, Tape, Var};
use crate::tensor::Tensor;

/// Upper bound on every singular value of `K`.
pub const SPECTRAL_CAP: f64 = 0.99;
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Raw parameters of `K`; `n` is the latent dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KoopmanOperator {
    pub u_raw: ParamId,
    pub v_raw: ParamId,
    pub s_raw: ParamId,
    pub n: usize,
}

impl KoopmanOperator {
    /// `U_raw, V_raw ~ U(±1/√n)`, `S_raw = 0` (all singular values 0.495).
    pub fn init(store: &mut ParamStore, n: usize, rng: &mut Prng) -> Self {
        Self {
            u_raw: store.weight("koopman.u_raw", n, n, rng),
            v_raw: store.weight("koopman.v_raw", n, n, rng),
            s_raw: store.zeros("koopman.s_raw", &[n]),
            n,
        }
    }

    pub fn matrix(&self, tape: &mut Tape, p: &Bound) -> Result<Var> {
        koopman_matrix(tape, p[self.u_raw], p[self.v_raw], p[self.s_raw])
    }
}

/// Effective singular values `0.99·σ(S_raw)`.
pub fn singular_values(s_raw: &Tensor) -> Vec<f64> {
    s_raw.data().iter().map(|&s| SPECTRAL_CAP * sigmoid(s)).collect()
}

/// `K = orth(U_raw)·diag(0.99·σ(S_raw))·orth(V_raw)ᵀ` on the tape.
pub fn koopman_matrix(tape: &mut Tape, u_raw: Var, v_raw: Var, s_raw: Var) -> Result<Var> {
    let u = tape.orthogonalize(u_raw)?;
    let v = tape.orthogonalize(v_raw)?;
    let sg = tape.sigmoid(s_raw);
    let s = tape.scale(sg, SPECTRAL_CAP);
    let us = tape.mul_broadcast(u, s)?;
    let vt = tape.transpose(v)?;
    tape.matmul(us, vt)
}

/// `K` as a plain matrix.
pub fn koopman_matrix_value(u_raw: &Tensor, v_raw: &Tensor, s_raw: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (u, v, s) = (tape.constant(u_raw.clone()), tape.constant(v_raw.clone()), tape.constant(s_raw.clone()));
    let k = koopman_matrix(&mut tape, u, v, s)?;
    Ok(tape.value(k).clone())
}

/// Batch mean of `ReLU(‖z_next‖² − ‖z‖²)` over rows of `[B, n]`.
pub fn lyapunov_loss(tape: &mut Tape, z: Var, z_next: Var) -> Result<Var> {
    if tape.shape(z) != tape.shape(z_next) || tape.shape(z).len() != 2 {
        return Err(shape_err("lyapunov_loss", tape.shape(z), tape.shape(z_next)));
    }
    let zz = tape.mul(z, z)?;
    let e0 = tape.sum_last(zz);
    let nn = tape.mul(z_next, z_next)?;
    let e1 = tape.sum_last(nn);
    let growth = tape.sub(e1, e0)?;
    let gate = tape.relu(growth);
    Ok(tape.mean(gate))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KoopformerConfig {
    pub backbone: Family,
    pub d_state: usize,
    pub patch: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub enc_layers: usize,
    pub latent: usize,
    pub lambda: f64,
    /// Moving-average width of the Autoformer backbone.
    pub k_ma: usize,
    /// Attention sparsity of the Informer backbone.
    pub probsparse: ProbSparseConfig,
}

impl Default for KoopformerConfig {
    fn default() -> Self {
        Self {
            backbone: Family::PatchTst,
            d_state: 2,
            patch: 16,
            horizon: 5,
            d_model: 16,
            heads: 2,
            d_ff: 64,
            enc_layers: 2,
            latent: 16,
            lambda: DEFAULT_LAMBDA,
            k_ma: 3,
            probsparse: ProbSparseConfig::default(),
        }
    }
}

impl KoopformerConfig {
    pub fn validate(&self) -> Result<()> {
        MhaConfig::new(self.d_model, self.heads)?;
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!("d_model must be even, got {}", self.d_model)));
        }
        if [self.d_state, self.patch, self.horizon, self.latent, self.enc_layers, self.d_ff].contains(&0) {
            return Err(Error::Config("Koopformer dimensions must all be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.k_ma.is_multiple_of(2) {
            return Err(Error::Config(format!("k_ma must be odd, got {}", self.k_ma)));
        }
        Ok(())
    }

    fn attention(&self) -> AttentionKind {
        match self.backbone {
            Family::Informer => AttentionKind::ProbSparse(self.probsparse),
            _ => AttentionKind::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct KoopLayout {
    embed: Linear,
    pe: Tensor,
    encoder: Vec<EncoderLayerWeights>,
    to_latent: Linear,
    /// Autoformer backbone only: flattened trend window to latent.
    trend: Option<Linear>,
    op: KoopmanOperator,
    decoder: Linear,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct KoopForward {
    /// `[B, H, d_state]`.
    pub y_hat: Var,
    /// `[B, n]`.
    pub z: Var,
    /// `[B, n]`, equal to `z·Kᵀ`.
    pub z_next: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub mse: Var,
    pub lyapunov: Var,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub lyapunov: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Koopformer {
    config: KoopformerConfig,
    params: ParamStore,
    layout: KoopLayout,
}

impl Koopformer {
    pub fn build(config: KoopformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = prng(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let embed = Linear::init(&mut store, "enc.w_e", config.d_state, d, &mut rng);
        let encoder = (0..config.enc_layers)
            .map(|i| EncoderLayerWeights::init(&mut store, &format!("enc{i}"), d, config.d_ff, &mut rng))
            .collect();
        let to_latent = Linear::init(&mut store, "to_latent", d, config.latent, &mut rng);
        let trend = (config.backbone == Family::Autoformer).then(|| {
            Linear::init(&mut store, "trend", config.patch * config.d_state, config.latent, &mut rng)
        });
        let op = KoopmanOperator::init(&mut store, config.latent, &mut rng);
        let decoder = Linear::init(&mut store, "decoder", config.latent, config.horizon * config.d_state, &mut rng);
        Ok(Self {
            config,
            params: store,
            layout: KoopLayout {
                embed,
                pe: sinusoidal_pe(config.patch, d)?.table,
                encoder,
                to_latent,
                trend,
                op,
                decoder,
            },
        })
    }

    pub fn config(&self) -> &KoopformerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn operator(&self) -> &KoopmanOperator {
        &self.layout.op
    }

    /// Current singular values of `K`.
    pub fn singular_values(&self) -> Vec<f64> {
        singular_values(self.params.get(self.layout.op.s_raw))
    }

    pub fn max_singular_value(&self) -> f64 {
        self.singular_values().into_iter().fold(0.0, f64::max)
    }

    pub fn koopman(&self) -> Result<Tensor> {
        let op = &self.layout.op;
        koopman_matrix_value(self.params.get(op.u_raw), self.params.get(op.v_raw), self.params.get(op.s_raw))
    }

    /// Latent code of `x ∈ R^{B×P×d_state}`.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, x: &Tensor) -> Result<Var> {
        let cfg = &self.config;
        let &[b, l, c] = x.shape() else {
            return Err(shape_err("koopformer", x.shape(), &[0, cfg.patch, cfg.d_state]));
        };
        if l != cfg.patch || c != cfg.d_state || b == 0 {
            return Err(shape_err("koopformer", x.shape(), &[b.max(1), cfg.patch, cfg.d_state]));
        }
        let (enc_in, trend) = if cfg.backbone == Family::Autoformer {
            let (t, s) = decompose_channels(x, cfg.k_ma)?;
            (s, Some(t))
        } else {
            (x.clone(), None)
        };
        let tokens = tape.constant(enc_in);
        let z = self.layout.embed.apply(tape, tokens, p)?;
        let pe = tape.constant(self.layout.pe.clone());
        let mut h = tape.add_broadcast(z, pe)?;
        let kind = cfg.attention();
        let mha = MhaConfig {
            d_model: cfg.d_model,
            heads: cfg.heads,
        };
        for w in &self.layout.encoder {
            h = encoder_layer(tape, h, mha, w, p, &kind)?;
        }
        let pooled = avg_pool_tokens(tape, h)?;
        let latent = self.layout.to_latent.apply(tape, pooled, p)?;
        match (trend, &self.layout.trend) {
            (Some(t), Some(lin)) => {
                let flat = tape.constant(t.reshape([b, l * c])?);
                let tz = lin.apply(tape, flat, p)?;
                tape.add(latent, tz)
            }
            _ => Ok(latent),
        }
    }

    /// `z = Encoder(x)`, `z' = K·z`, `ŷ = Decoder(z')`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: &Tensor) -> Result<KoopForward> {
        let b = x.shape()[0];
        let z = self.encode(tape, p, x)?;
        let k = self.layout.op.matrix(tape, p)?;
        let kt = tape.transpose(k)?;
        let z_next = tape.matmul(z, kt)?;
        let flat = self.layout.decoder.apply(tape, z_next, p)?;
        let y_hat = tape.reshape(flat, &[b, self.config.horizon, self.config.d_state])?;
        Ok(KoopForward { y_hat, z, z_next })
    }

    /// `total = mse(ŷ, y) + λ·lyapunov(z, z')`.
    pub fn loss(&self, tape: &mut Tape, p: &Bound, x: &Tensor, y: &Tensor) -> Result<LossVars> {
        let f = self.forward(tape, p, x)?;
        let target = tape.constant(y.clone());
        koopformer_loss(tape, f, target, self.config.lambda)
    }

    /// Loss parts and forecast RMSE over a dataset, evaluated in chunks.
    pub fn evaluate(&self, ds: &KoopDataset) -> Result<KoopEval> {
        if ds.len == 0 {
            return Err(Error::EmptySplit("test"));
        }
        let (mut se, mut mse_sum, mut lyap_sum) = (0.0, 0.0, 0.0);
        let mut count = 0usize;
        for start in (0..ds.len).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(ds.len)).collect();
            let (x, y) = ds.gather(&idx);
            let mut tape = Tape::new();
            let p = self.params.bind_frozen(&mut tape);
            let f = self.forward(&mut tape, &p, &x)?;
            let yt = tape.constant(y.clone());
            let l = koopformer_loss(&mut tape, f, yt, self.config.lambda)?;
            let w = idx.len() as f64;
            mse_sum += tape.value(l.mse).item() * w;
            lyap_sum += tape.value(l.lyapunov).item() * w;
            se += tape
                .value(f.y_hat)
                .data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            count += y.numel();
        }
        let n = ds.len as f64;
        let mse = mse_sum / n;
        let lyapunov = lyap_sum / n;
        Ok(KoopEval {
            loss: LossBreakdown {
                mse,
                lyapunov,
                total: mse + self.config.lambda * lyapunov,
            },
            rmse: (se / count as f64).sqrt(),
        })
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let f = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(f.y_hat).clone())
    }
}

const EVAL_CHUNK: usize = 64;

pub fn koopformer_loss(tape: &mut Tape, f: KoopForward, target: Var, lambda: f64) -> Result<LossVars> {
    let mse = tape.mse(f.y_hat, target)?;
    let lyapunov = lyapunov_loss(tape, f.z, f.z_next)?;
    let weighted = tape.scale(lyapunov, lambda);
    let total = tape.add(mse, weighted)?;
    Ok(LossVars { mse, lyapunov, total })
}

/// Trend and seasonal parts of every state channel of `[B, P, c]`.
fn decompose_channels(x: &Tensor, k: usize) -> Result<(Tensor, Tensor)> {
    let &[b, l, c] = x.shape() else {
        return Err(shape_err("decompose_channels", x.shape(), &[0, 0, 0]));
    };
    let mut trend = vec![0.0; x.numel()];
    let mut seasonal = vec![0.0; x.numel()];
    let mut col = vec![0.0; l];
    for bi in 0..b {
        for ch in 0..c {
            for (t, v) in col.iter_mut().enumerate() {
                *v = x.data()[(bi * l + t) * c + ch];
            }
            let d = decompose(&col, k)?;
            for t in 0..l {
                trend[(bi * l + t) * c + ch] = d.trend[t];
                seasonal[(bi * l + t) * c + ch] = d.seasonal[t];
            }
        }
    }
    Ok((Tensor::from_vec([b, l, c], trend), Tensor::from_vec([b, l, c], seasonal)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KoopEval {
    pub loss: LossBreakdown,
    pub rmse: f64,
}

/// Multivariate `(P × d, H × d)` windows over a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopDataset {
    pub states: Vec<f64>,
    pub d_state: usize,
    pub patch: usize,
    pub horizon: usize,
    /// Window `i` reads `states[i .. i + P + H]`.
    pub starts: Vec<usize>,
    pub len: usize,
}

impl KoopDataset {
    pub fn new(states: &Tensor, patch: usize, horizon: usize) -> Result<Self> {
        let &[n, d] = states.shape() else {
            return Err(shape_err("koop windows", states.shape(), &[0, 0]));
        };
        if patch == 0 || horizon == 0 || n < patch + horizon {
            return Err(Error::SeriesTooShort {
                len: n,
                required: patch + horizon,
            });
        }
        let len = n - patch - horizon + 1;
        Ok(Self {
            states: states.data().to_vec(),
            d_state: d,
            patch,
            horizon,
            starts: (0..len).collect(),
            len,
        })
    }

    /// Chronological split: the first `⌊frac·N⌋` windows train.
    pub fn split(&self, frac: f64) -> Result<(KoopDataset, KoopDataset)> {
        let n_train = (frac * self.len as f64).floor() as usize;
        if n_train == 0 {
            return Err(Error::EmptySplit("train"));
        }
        if n_train >= self.len {
            return Err(Error::EmptySplit("test"));
        }
        let part = |r: std::ops::Range<usize>| KoopDataset {
            starts: self.starts[r.clone()].to_vec(),
            len: r.len(),
            ..self.clone()
        };
        Ok((part(0..n_train), part(n_train..self.len)))
    }

    /// `(x [B, P, d], y [B, H, d])` for the given window indices.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let d = self.d_state;
        let mut x = Vec::with_capacity(idx.len() * self.patch * d);
        let mut y = Vec::with_capacity(idx.len() * self.horizon * d);
        for &i in idx {
            let s = self.starts[i];
            x.extend_from_slice(&self.states[s * d..(s + self.patch) * d]);
            y.extend_from_slice(&self.states[(s + self.patch) * d..(s + self.patch + self.horizon) * d]);
        }
        (
            Tensor::from_vec([idx.len(), self.patch, d], x),
            Tensor::from_vec([idx.len(), self.horizon, d], y),
        )
    }
}

/// Per-column min-max scaling to `[0, 1]`; constant columns map to zero.
pub fn normalize_columns(states: &Tensor) -> (Tensor, Vec<(f64, f64)>) {
    let &[n, d] = states.shape() else {
        return (states.clone(), Vec::new());
    };
    let ranges: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            (0..n)
                .map(|i| states.at(i, j))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        })
        .collect();
    let mut out = states.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let (lo, hi) = ranges[i % d];
        *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
    }
    (out, ranges)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KoopTrainConfig {
    /// Number of Adam updates.
    pub epochs: usize,
    pub lr: f64,
    /// Windows drawn without replacement for each update.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for KoopTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoopEpoch {
    pub epoch: usize,
    pub mse: f64,
    pub lyapunov: f64,
    pub total: f64,
    /// `max_i S_i` after the update.
    pub max_singular_value: f64,
    /// All `S_i` after the update.
    pub singular_values: Vec<f64>,
}

/// Adam on the Koopformer loss. Every epoch is one update on a seeded
/// random batch of training windows.
pub fn train_koopformer(model: &mut Koopformer, ds: &KoopDataset, cfg: &KoopTrainConfig) -> Result<Vec<KoopEpoch>> {
    if ds.len == 0 {
        return Err(Error::EmptySplit("train"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let batch = cfg.batch_size.min(ds.len);
    let mut rng = prng(cfg.seed);
    let mut adam = AdamState::new(model.params().tensors(), cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut idx = sample(&mut rng, ds.len, batch).into_vec();
        idx.sort_unstable();
        let (x, y) = ds.gather(&idx);
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape);
        let l = model.loss(&mut tape, &p, &x, &y)?;
        let row = (tape.value(l.mse).item(), tape.value(l.lyapunov).item(), tape.value(l.total).item());
        let grads = tape.backward(l.total)?;
        let g: Vec<Tensor> = p.vars().iter().map(|&v| grads.wrt(v)).collect();
        adam.step(model.params_mut().tensors_mut(), &g)?;
        let singular_values = model.singular_values();
        log.push(KoopEpoch {
            epoch,
            mse: row.0,
            lyapunov: row.1,
            total: row.2,
            max_singular_value: singular_values.iter().copied().fold(0.0, f64::max),
            singular_values,
        });
    }
    Ok(log)
}

/// Everything needed to reproduce one Koopformer experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KoopRunSpec {
    pub system: System,
    pub model: KoopformerConfig,
    pub train: KoopTrainConfig,
    pub split_fraction: f64,
    /// Seeds the trajectory noise, the initialization and the batch draws.
    pub seed: u64,
}

impl KoopRunSpec {
    /// Van der Pol: `P = 16`, 1000 updates of 64 windows. Lorenz: `P = 200`,
    /// 3000 updates of 8 windows. Both forecast `H = 5` steps.
    pub fn defaults(system: System) -> Self {
        let (patch, epochs, batch_size) = match system {
            System::Vdp => (16, 1000, 64),
            System::Lorenz => (200, 3000, 8),
        };
        Self {
            system,
            model: KoopformerConfig {
                d_state: system.dim(),
                patch,
                horizon: 5,
                ..KoopformerConfig::default()
            },
            train: KoopTrainConfig {
                epochs,
                batch_size,
                ..KoopTrainConfig::default()
            },
            split_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Result of [`run_koopformer`].
#[derive(Debug, Clone, PartialEq)]
pub struct KoopRunOutput {
    pub log: Vec<KoopEpoch>,
    /// Full training-set loss before the first and after the last update.
    pub train_before: LossBreakdown,
    pub train_after: LossBreakdown,
    pub test: KoopEval,
    /// `[N_test, H, d_state]` forecasts and targets, normalized units.
    pub forecast: Tensor,
    pub truth: Tensor,
    pub model: Koopformer,
}

/// Simulates the system, min-max normalizes each state, splits windows
/// chronologically, trains and evaluates.
pub fn run_koopformer(spec: &KoopRunSpec) -> Result<KoopRunOutput> {
    if spec.model.d_state != spec.system.dim() {
        return Err(Error::Config(format!(
            "{} has {} states but the model expects {}",
            spec.system,
            spec.system.dim(),
            spec.model.d_state
        )));
    }
    let traj = simulate(spec.system, derive_seed(spec.seed, &[label_hash("trajectory")]))?;
    let (states, _) = normalize_columns(&traj.states);
    let ds = KoopDataset::new(&states, spec.model.patch, spec.model.horizon)?;
    let (train_ds, test_ds) = ds.split(spec.split_fraction)?;
    let mut model = Koopformer::build(spec.model, derive_seed(spec.seed, &[label_hash("init")]))?;
    let train_before = model.evaluate(&train_ds)?.loss;
    let cfg = KoopTrainConfig {
        seed: derive_seed(spec.seed, &[label_hash("batches")]),
        ..spec.train
    };
    let log = train_koopformer(&mut model, &train_ds, &cfg)?;
    let train_after = model.evaluate(&train_ds)?.loss;
    let test = model.evaluate(&test_ds)?;
    let idx: Vec<usize> = (0..test_ds.len).collect();
    let (mut forecast, mut truth) = (Vec::new(), Vec::new());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = test_ds.gather(chunk);
        forecast.extend(model.predict(&x)?.into_data());
        truth.extend(y.into_data());
    }
    let shape = [test_ds.len, spec.model.horizon, spec.model.d_state];
    Ok(KoopRunOutput {
        log,
        train_before,
        train_after,
        test,
        forecast: Tensor::from_vec(shape, forecast),
        truth: Tensor::from_vec(shape, truth),
        model,
    })
}
