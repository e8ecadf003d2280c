//! Building blocks shared by every forecaster: embeddings, positional
//! encodings, multi-head attention, feed-forward nets, encoder and decoder
//! layers, token pooling and moving-average decomposition.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::probsparse::{sparse_head, ProbSparseConfig};
use crate::rng::Prng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MhaConfig {
    pub d_model: usize,
    pub heads: usize,
}

impl Default for MhaConfig {
    fn default() -> Self {
        Self {
            d_model: 8,
            heads: 2,
        }
    }
}

impl MhaConfig {
    pub fn new(d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        Ok(Self { d_model, heads })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// How attention weights are formed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AttentionKind {
    #[default]
    Full,
    ProbSparse(ProbSparseConfig),
}

/// Affine map `x·W + b`; `W` is `fan_in × fan_out`, `b` starts at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn init(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Prng) -> Self {
        Self {
            w: store.weight(format!("{name}.w"), fan_in, fan_out, rng),
            b: store.zeros(format!("{name}.b"), &[fan_out]),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var, p: &Bound) -> Result<Var> {
        let y = tape.matmul(x, p[self.w])?;
        tape.add_broadcast(y, p[self.b])
    }
}

/// Fixed sinusoidal table, `L × d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidalPe {
    pub table: Tensor,
}

pub fn sinusoidal_pe(len: usize, d_model: usize) -> Result<SinusoidalPe> {
    if len == 0 || d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "sinusoidal encoding needs L >= 1 and even d_model (got L = {len}, d_model = {d_model})"
        )));
    }
    let mut table = vec![0.0; len * d_model];
    for pos in 0..len {
        for k in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * k as f64 / d_model as f64);
            table[pos * d_model + 2 * k] = angle.sin();
            table[pos * d_model + 2 * k + 1] = angle.cos();
        }
    }
    Ok(SinusoidalPe {
        table: Tensor::from_vec([len, d_model], table),
    })
}

/// Per-step linear embedding: `[B, L, c] · W_e[c, d_model]`.
pub fn embed(tape: &mut Tape, x: Var, w_e: Var) -> Result<Var> {
    if tape.value(x).rank() != 3 {
        return Err(shape_err("embed", tape.shape(x), tape.shape(w_e)));
    }
    tape.matmul(x, w_e)
}

pub fn avg_pool_tokens(tape: &mut Tape, x: Var) -> Result<Var> {
    tape.mean_tokens(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl AttentionWeights {
    pub fn init(store: &mut ParamStore, prefix: &str, d_model: usize, rng: &mut Prng) -> Self {
        Self {
            wq: Linear::init(store, &format!("{prefix}.wq"), d_model, d_model, rng),
            wk: Linear::init(store, &format!("{prefix}.wk"), d_model, d_model, rng),
            wv: Linear::init(store, &format!("{prefix}.wv"), d_model, d_model, rng),
            wo: Linear::init(store, &format!("{prefix}.wo"), d_model, d_model, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FfnWeights {
    pub w1: Linear,
    pub w2: Linear,
}

impl FfnWeights {
    pub fn init(store: &mut ParamStore, prefix: &str, d_model: usize, d_ff: usize, rng: &mut Prng) -> Self {
        Self {
            w1: Linear::init(store, &format!("{prefix}.w1"), d_model, d_ff, rng),
            w2: Linear::init(store, &format!("{prefix}.w2"), d_ff, d_model, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormWeights {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormWeights {
    pub fn init(store: &mut ParamStore, prefix: &str, d_model: usize) -> Self {
        Self {
            gamma: store.ones(format!("{prefix}.gamma"), &[d_model]),
            beta: store.zeros(format!("{prefix}.beta"), &[d_model]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayerWeights {
    pub attn: AttentionWeights,
    pub norm1: NormWeights,
    pub ffn: FfnWeights,
    pub norm2: NormWeights,
}

impl EncoderLayerWeights {
    pub fn init(store: &mut ParamStore, prefix: &str, d_model: usize, d_ff: usize, rng: &mut Prng) -> Self {
        Self {
            attn: AttentionWeights::init(store, &format!("{prefix}.attn"), d_model, rng),
            norm1: NormWeights::init(store, &format!("{prefix}.norm1"), d_model),
            ffn: FfnWeights::init(store, &format!("{prefix}.ffn"), d_model, d_ff, rng),
            norm2: NormWeights::init(store, &format!("{prefix}.norm2"), d_model),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderLayerWeights {
    pub self_attn: AttentionWeights,
    pub norm1: NormWeights,
    pub cross_attn: AttentionWeights,
    pub norm2: NormWeights,
    pub ffn: FfnWeights,
    pub norm3: NormWeights,
}

impl DecoderLayerWeights {
    pub fn init(store: &mut ParamStore, prefix: &str, d_model: usize, d_ff: usize, rng: &mut Prng) -> Self {
        Self {
            self_attn: AttentionWeights::init(store, &format!("{prefix}.self_attn"), d_model, rng),
            norm1: NormWeights::init(store, &format!("{prefix}.norm1"), d_model),
            cross_attn: AttentionWeights::init(store, &format!("{prefix}.cross_attn"), d_model, rng),
            norm2: NormWeights::init(store, &format!("{prefix}.norm2"), d_model),
            ffn: FfnWeights::init(store, &format!("{prefix}.ffn"), d_model, d_ff, rng),
            norm3: NormWeights::init(store, &format!("{prefix}.norm3"), d_model),
        }
    }
}

/// `Concat_i(softmax(Q_i K_iᵀ / √(d_model/h)) V_i) · W_O` (affine projections) over `[B, L, d_model]` tokens.
pub fn multi_head_attention(
    tape: &mut Tape,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    cfg: MhaConfig,
    w: &AttentionWeights,
    p: &Bound,
    kind: &AttentionKind,
) -> Result<Var> {
    for x in [q_in, k_in, v_in] {
        let s = tape.shape(x);
        if s.len() != 3 || s[2] != cfg.d_model {
            return Err(shape_err("multi_head_attention", s, &[0, 0, cfg.d_model]));
        }
    }
    if tape.shape(k_in)[..2] != tape.shape(v_in)[..2] || tape.shape(q_in)[0] != tape.shape(k_in)[0] {
        return Err(shape_err("multi_head_attention", tape.shape(k_in), tape.shape(v_in)));
    }
    let q = w.wq.apply(tape, q_in, p)?;
    let k = w.wk.apply(tape, k_in, p)?;
    let v = w.wv.apply(tape, v_in, p)?;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (qh, kh, vh) = if cfg.heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_last(q, h * hd, hd)?,
                tape.slice_last(k, h * hd, hd)?,
                tape.slice_last(v, h * hd, hd)?,
            )
        };
        let raw = tape.batch_matmul(qh, kh, true)?;
        let scores = tape.scale(raw, scale);
        let head = match kind {
            AttentionKind::Full => {
                let a = tape.softmax(scores);
                tape.batch_matmul(a, vh, false)?
            }
            AttentionKind::ProbSparse(ps) => sparse_head(tape, scores, vh, ps)?,
        };
        heads.push(head);
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_last(&heads)?
    };
    w.wo.apply(tape, cat, p)
}

/// `ReLU(x·W1 + b1)·W2 + b2`.
pub fn ffn(tape: &mut Tape, x: Var, w: &FfnWeights, p: &Bound) -> Result<Var> {
    let h = w.w1.apply(tape, x, p)?;
    let a = tape.relu(h);
    w.w2.apply(tape, a, p)
}

fn add_norm(tape: &mut Tape, x: Var, update: Var, n: &NormWeights, p: &Bound) -> Result<Var> {
    let s = tape.add(x, update)?;
    tape.layer_norm(s, p[n.gamma], p[n.beta])
}

/// `x ← LN(x + MHA(x, x, x))`, then `x ← LN(x + FFN(x))`.
pub fn encoder_layer(
    tape: &mut Tape,
    x: Var,
    cfg: MhaConfig,
    w: &EncoderLayerWeights,
    p: &Bound,
    kind: &AttentionKind,
) -> Result<Var> {
    let a = multi_head_attention(tape, x, x, x, cfg, &w.attn, p, kind)?;
    let x = add_norm(tape, x, a, &w.norm1, p)?;
    let f = ffn(tape, x, &w.ffn, p)?;
    add_norm(tape, x, f, &w.norm2, p)
}

/// Self-attention, then cross-attention onto `enc`, then FFN; each a
/// residual block followed by LayerNorm. Cross-attention is always dense.
pub fn decoder_layer(
    tape: &mut Tape,
    x_dec: Var,
    enc: Var,
    cfg: MhaConfig,
    w: &DecoderLayerWeights,
    p: &Bound,
    self_kind: &AttentionKind,
) -> Result<Var> {
    let s = multi_head_attention(tape, x_dec, x_dec, x_dec, cfg, &w.self_attn, p, self_kind)?;
    let x = add_norm(tape, x_dec, s, &w.norm1, p)?;
    let c = multi_head_attention(tape, x, enc, enc, cfg, &w.cross_attn, p, &AttentionKind::Full)?;
    let x = add_norm(tape, x, c, &w.norm2, p)?;
    let f = ffn(tape, x, &w.ffn, p)?;
    add_norm(tape, x, f, &w.norm3, p)
}

/// Trend and seasonal parts of a series: `trend + seasonal == input`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompPair {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub k: usize,
}

/// Centered moving average of odd width `k` with edge-replicated padding.
pub fn moving_average(x: &[f64], k: usize) -> Result<Vec<f64>> {
    if k.is_multiple_of(2) {
        return Err(Error::Config(format!("moving-average kernel must be odd, got {k}")));
    }
    if x.is_empty() {
        return Err(Error::Contract("cannot decompose an empty series".into()));
    }
    let half = (k / 2) as isize;
    let last = x.len() as isize - 1;
    Ok((0..x.len() as isize)
        .map(|t| {
            let sum: f64 = (t - half..=t + half).map(|j| x[j.clamp(0, last) as usize]).sum();
            sum / k as f64
        })
        .collect())
}

pub fn decompose(x: &[f64], k: usize) -> Result<DecompPair> {
    let trend = moving_average(x, k)?;
    let seasonal = x.iter().zip(&trend).map(|(v, t)| v - t).collect();
    Ok(DecompPair { trend, seasonal, k })
}

/// Decomposes every row of a `[B, L]` batch; returns `(trend, seasonal)`.
pub fn decompose_rows(x: &Tensor, k: usize) -> Result<(Tensor, Tensor)> {
    if x.rank() != 2 {
        return Err(shape_err("decompose_rows", x.shape(), &[0, 0]));
    }
    let l = x.shape()[1];
    let mut trend = Vec::with_capacity(x.numel());
    let mut seasonal = Vec::with_capacity(x.numel());
    for row in x.data().chunks(l) {
        let d = decompose(row, k)?;
        trend.extend(d.trend);
        seasonal.extend(d.seasonal);
    }
    Ok((
        Tensor::from_vec(x.shape().to_vec(), trend),
        Tensor::from_vec(x.shape().to_vec(), seasonal),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::prng;

    #[test]
    fn sinusoidal_table_values() {
        let pe = sinusoidal_pe(4, 8).unwrap();
        for j in 0..8 {
            assert_eq!(pe.table.at(0, j), if j % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!((pe.table.at(1, 0) - 0.841471).abs() < 1e-6);
        assert!(pe.table.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(sinusoidal_pe(4, 3).is_err());
    }

    #[test]
    fn embed_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec([1, 1, 1], vec![2.0]));
        let mut w = vec![0.0; 8];
        w[0] = 1.0;
        let we = tape.constant(Tensor::from_vec([1, 8], w));
        let z = embed(&mut tape, x, we).unwrap();
        let mut expected = vec![0.0; 8];
        expected[0] = 2.0;
        assert_eq!(tape.value(z).data(), expected.as_slice());

        let zero = tape.constant(Tensor::zeros([1, 8]));
        let xs = tape.constant(Tensor::from_vec([2, 3, 1], vec![0.1, 0.5, 0.9, 0.2, 0.4, 0.6]));
        let z = embed(&mut tape, xs, zero).unwrap();
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pooling_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec([1, 2, 2], vec![1.0, 3.0, 3.0, 5.0]));
        let p = avg_pool_tokens(&mut tape, x).unwrap();
        assert_eq!(tape.value(p).data(), &[2.0, 4.0]);
        let swapped = tape.constant(Tensor::from_vec([1, 2, 2], vec![3.0, 5.0, 1.0, 3.0]));
        let ps = avg_pool_tokens(&mut tape, swapped).unwrap();
        assert_eq!(tape.value(ps).data(), tape.value(p).data());
        let one = tape.constant(Tensor::from_vec([1, 1, 2], vec![7.0, -1.0]));
        let po = avg_pool_tokens(&mut tape, one).unwrap();
        assert_eq!(tape.value(po).data(), &[7.0, -1.0]);
    }

    fn fixed_linear(store: &mut ParamStore, name: &str, w: Tensor) -> Linear {
        let n = w.shape()[1];
        Linear {
            w: store.push(format!("{name}.w"), w),
            b: store.zeros(format!("{name}.b"), &[n]),
        }
    }

    fn identity_attention(store: &mut ParamStore, d: usize) -> AttentionWeights {
        AttentionWeights {
            wq: fixed_linear(store, "wq", Tensor::eye(d)),
            wk: fixed_linear(store, "wk", Tensor::eye(d)),
            wv: fixed_linear(store, "wv", Tensor::eye(d)),
            wo: fixed_linear(store, "wo", Tensor::eye(d)),
        }
    }

    #[test]
    fn single_token_attention_returns_value() {
        let mut store = ParamStore::new();
        let w = identity_attention(&mut store, 2);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let q = tape.constant(Tensor::from_vec([1, 1, 2], vec![0.3, -0.1]));
        let v = tape.constant(Tensor::from_vec([1, 1, 2], vec![1.5, 2.5]));
        let cfg = MhaConfig::new(2, 1).unwrap();
        let out = multi_head_attention(&mut tape, q, v, v, cfg, &w, &p, &AttentionKind::Full).unwrap();
        assert_eq!(tape.value(out).data(), &[1.5, 2.5]);
    }

    #[test]
    fn identical_keys_and_values_give_common_row() {
        let mut store = ParamStore::new();
        let w = identity_attention(&mut store, 4);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let q = tape.constant(Tensor::from_vec([1, 3, 4], (0..12).map(|i| i as f64 * 0.1 - 0.5).collect()));
        let row = [0.2, -0.4, 0.6, 0.1];
        let kv = tape.constant(Tensor::from_vec([1, 2, 4], [row, row].concat()));
        let cfg = MhaConfig::new(4, 2).unwrap();
        let out = multi_head_attention(&mut tape, q, kv, kv, cfg, &w, &p, &AttentionKind::Full).unwrap();
        for r in tape.value(out).data().chunks(4) {
            for (a, b) in r.iter().zip(&row) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ffn_relu_gate() {
        let mut store = ParamStore::new();
        let w = FfnWeights {
            w1: fixed_linear(&mut store, "w1", Tensor::from_vec([2, 3], vec![1.0; 6])),
            w2: fixed_linear(&mut store, "w2", Tensor::from_vec([3, 2], vec![0.7, -0.3, 0.2, 0.9, -1.1, 0.4])),
        };
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(Tensor::from_vec([1, 2, 2], vec![-1.0, -2.0, -0.5, -0.1]));
        let y = ffn(&mut tape, x, &w, &p).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

        let mut zero = ParamStore::new();
        let wz = FfnWeights {
            w1: fixed_linear(&mut zero, "w1", Tensor::zeros([2, 3])),
            w2: fixed_linear(&mut zero, "w2", Tensor::zeros([3, 2])),
        };
        let mut tape = Tape::new();
        let pz = zero.bind(&mut tape);
        let x = tape.constant(Tensor::from_vec([1, 1, 2], vec![0.4, 0.9]));
        let y = ffn(&mut tape, x, &wz, &pz).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn encoder_layer_preserves_shape_and_stays_finite() {
        let mut rng = prng(4);
        let mut store = ParamStore::new();
        let cfg = MhaConfig::default();
        let layers: Vec<_> = (0..2)
            .map(|i| EncoderLayerWeights::init(&mut store, &format!("enc{i}"), 8, 32, &mut rng))
            .collect();
        for (b, l) in [(1, 1), (3, 5), (2, 20)] {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape);
            let data = (0..b * l * 8).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
            let mut x = tape.constant(Tensor::from_vec([b, l, 8], data));
            for w in &layers {
                x = encoder_layer(&mut tape, x, cfg, w, &p, &AttentionKind::Full).unwrap();
                assert_eq!(tape.shape(x), &[b, l, 8]);
            }
            assert!(tape.value(x).is_finite());
        }
    }

    #[test]
    fn zero_weight_encoder_layer_is_double_layer_norm() {
        let mut store = ParamStore::new();
        let w = EncoderLayerWeights {
            attn: AttentionWeights {
                wq: fixed_linear(&mut store, "wq", Tensor::zeros([4, 4])),
                wk: fixed_linear(&mut store, "wk", Tensor::zeros([4, 4])),
                wv: fixed_linear(&mut store, "wv", Tensor::zeros([4, 4])),
                wo: fixed_linear(&mut store, "wo", Tensor::zeros([4, 4])),
            },
            norm1: NormWeights::init(&mut store, "n1", 4),
            ffn: FfnWeights {
                w1: fixed_linear(&mut store, "w1", Tensor::zeros([4, 6])),
                w2: fixed_linear(&mut store, "w2", Tensor::zeros([6, 4])),
            },
            norm2: NormWeights::init(&mut store, "n2", 4),
        };
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(Tensor::from_vec([1, 2, 4], vec![0.1, 0.7, 0.3, 0.2, 0.9, 0.4, 0.5, 0.0]));
        let cfg = MhaConfig::new(4, 2).unwrap();
        let y = encoder_layer(&mut tape, x, cfg, &w, &p, &AttentionKind::Full).unwrap();
        let n = store.find("n1.gamma").unwrap();
        let b = store.find("n1.beta").unwrap();
        let once = tape.layer_norm(x, p[n], p[b]).unwrap();
        let twice = tape.layer_norm(once, p[n], p[b]).unwrap();
        assert!(tape.value(y).max_abs_diff(tape.value(twice)) < 1e-15);
    }

    #[test]
    fn decoder_single_token_cross_attention_reads_encoder() {
        // With identity projections and one encoder token, cross-attention
        // returns that token exactly.
        let mut store = ParamStore::new();
        let w = identity_attention(&mut store, 2);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let dec = tape.constant(Tensor::from_vec([1, 1, 2], vec![0.9, 0.1]));
        let enc = tape.constant(Tensor::from_vec([1, 1, 2], vec![-0.3, 0.8]));
        let cfg = MhaConfig::new(2, 2).unwrap();
        let c = multi_head_attention(&mut tape, dec, enc, enc, cfg, &w, &p, &AttentionKind::Full).unwrap();
        assert_eq!(tape.value(c).data(), &[-0.3, 0.8]);
    }

    #[test]
    fn decoder_output_shape() {
        let mut rng = prng(8);
        let mut store = ParamStore::new();
        let w = DecoderLayerWeights::init(&mut store, "dec", 8, 32, &mut rng);
        for (b, h, l) in [(1, 1, 1), (2, 3, 5), (4, 8, 20)] {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape);
            let xd = tape.constant(Tensor::full([b, h, 8], 0.3));
            let enc = tape.constant(Tensor::full([b, l, 8], -0.2));
            let y = decoder_layer(&mut tape, xd, enc, MhaConfig::default(), &w, &p, &AttentionKind::Full).unwrap();
            assert_eq!(tape.shape(y), &[b, h, 8]);
        }
    }

    #[test]
    fn decompose_examples() {
        let c = decompose(&[3.0; 6], 3).unwrap();
        assert_eq!(c.trend, vec![3.0; 6]);
        assert_eq!(c.seasonal, vec![0.0; 6]);

        let d = decompose(&[0.0, 3.0, 0.0, 3.0, 0.0], 3).unwrap();
        assert_eq!(d.trend, vec![1.0, 1.0, 2.0, 1.0, 1.0]);
        assert_eq!(d.seasonal, vec![-1.0, 2.0, -2.0, 2.0, -1.0]);
        for ((t, s), x) in d.trend.iter().zip(&d.seasonal).zip([0.0, 3.0, 0.0, 3.0, 0.0]) {
            assert_eq!(t + s, x);
        }
        assert!(decompose(&[1.0, 2.0], 4).is_err());
    }

    #[test]
    fn ramp_trend_is_the_ramp_in_the_interior() {
        let ramp: Vec<f64> = (0..30).map(|t| 0.5 * t as f64).collect();
        let d = decompose(&ramp, 5).unwrap();
        for t in 2..28 {
            assert!((d.trend[t] - ramp[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn mha_config_rejects_indivisible_heads() {
        assert!(MhaConfig::new(8, 3).is_err());
        assert_eq!(MhaConfig::default().head_dim(), 4);
    }
}
