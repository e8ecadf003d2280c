//! ProbSparse attention.
//!
//! Each query is scored by how peaked its scaled dot products are,
//! `M(q_i) = max_j s_ij − mean_j s_ij` with `s_ij = q_i·k_j / √d`. Only the
//! `u = min(L_Q, ⌈c·ln L_K⌉)` highest-scoring ("active") queries attend over
//! every key. The remaining ("lazy") queries either output the mean of `V`
//! or attend over only the `u` keys with the largest column maxima of `s`.
//!
//! Scoring needs all `L_Q·L_K` dot products; no sampling shortcut is used,
//! so [`OpCounter`] instruments only the attention-output phase.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tape::{softmax_rows, Tape, Var};
use crate::tensor::{kernels, Tensor};

pub const DEFAULT_C: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LazyMode {
    /// Lazy queries output the column mean of `V`.
    #[default]
    #[serde(rename = "mean")]
    Mean,
    /// Lazy queries attend over the top-`u` keys by column-max score.
    #[serde(rename = "topk")]
    TopK,
}

impl FromStr for LazyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(LazyMode::Mean),
            "topk" => Ok(LazyMode::TopK),
            other => Err(Error::Unknown {
                kind: "probsparse.lazy_mode",
                value: other.to_string(),
            }),
        }
    }
}

impl fmt::Display for LazyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LazyMode::Mean => "mean",
            LazyMode::TopK => "topk",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbSparseConfig {
    pub c: f64,
    pub lazy_mode: LazyMode,
    /// Forces `u` (clamped to `L_Q`) instead of `⌈c·ln L_K⌉`.
    pub u: Option<usize>,
}

impl Default for ProbSparseConfig {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            lazy_mode: LazyMode::Mean,
            u: None,
        }
    }
}

impl ProbSparseConfig {
    pub fn active_count(&self, l_q: usize, l_k: usize) -> usize {
        match self.u {
            Some(u) => u.clamp(1, l_q),
            None => sample_size(self.c, l_q, l_k),
        }
    }
}

/// `min(L_Q, ⌈c·ln L_K⌉)`, at least one.
pub fn sample_size(c: f64, l_q: usize, l_k: usize) -> usize {
    let u = (c * (l_k as f64).ln()).ceil();
    (u.max(1.0) as usize).min(l_q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityScores {
    pub m: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseSelection {
    pub u: usize,
    /// Strictly increasing query indices.
    pub active: Vec<usize>,
}

impl SparseSelection {
    pub fn mask(&self, len: usize) -> Vec<bool> {
        let mut m = vec![false; len];
        for &i in &self.active {
            m[i] = true;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub dot_products: u64,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub out: Tensor,
    pub ops: OpCounter,
}

fn check_qkv(q: &Tensor, k: &Tensor, v: Option<&Tensor>) -> Result<()> {
    if q.rank() != 2 || k.rank() != 2 || q.shape()[1] != k.shape()[1] {
        return Err(shape_err("attention q/k", q.shape(), k.shape()));
    }
    if let Some(v) = v {
        if v.rank() != 2 || v.shape()[0] != k.shape()[0] {
            return Err(shape_err("attention k/v", k.shape(), v.shape()));
        }
    }
    Ok(())
}

/// Max-minus-mean of one row of scaled scores.
pub fn row_sparsity(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    (max - mean).max(0.0)
}

fn scaled_scores(q: &Tensor, k: &Tensor) -> Vec<f64> {
    let (lq, d, lk) = (q.shape()[0], q.shape()[1], k.shape()[0]);
    let mut s = vec![0.0; lq * lk];
    kernels::gemm_nt(q.data(), k.data(), &mut s, lq, d, lk);
    let scale = 1.0 / (d as f64).sqrt();
    s.iter_mut().for_each(|x| *x *= scale);
    s
}

/// `M(q_i)` for every query row of `q` against `k`, scaled by `√d`.
pub fn sparsity_score(q: &Tensor, k: &Tensor) -> Result<SparsityScores> {
    check_qkv(q, k, None)?;
    let lk = k.shape()[0];
    let s = scaled_scores(q, k);
    Ok(SparsityScores {
        m: s.chunks(lk).map(row_sparsity).collect(),
    })
}

/// Indices of the `u` largest values; ties go to the lower index.
pub fn top_indices(values: &[f64], u: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut picked = order[..u].to_vec();
    picked.sort_unstable();
    picked
}

pub fn select_top_u(scores: &SparsityScores, u: usize) -> Result<SparseSelection> {
    if u == 0 || u > scores.m.len() {
        return Err(Error::Contract(format!(
            "u = {u} outside 1..={}",
            scores.m.len()
        )));
    }
    Ok(SparseSelection {
        u,
        active: top_indices(&scores.m, u),
    })
}

fn attend_row(
    q_row: &[f64],
    k: &Tensor,
    v: &Tensor,
    keys: Option<&[usize]>,
    scale: f64,
    ops: &mut OpCounter,
) -> Vec<f64> {
    let lk = k.shape()[0];
    let dv = v.shape()[1];
    let mut logits = vec![0.0; lk];
    let mut keep = vec![keys.is_none(); lk];
    let mut visit = |j: usize, logits: &mut [f64]| {
        logits[j] = kernels::dot(q_row, k.row(j)) * scale;
        ops.dot_products += 1;
    };
    match keys {
        None => (0..lk).for_each(|j| visit(j, &mut logits)),
        Some(ks) => {
            for &j in ks {
                visit(j, &mut logits);
                keep[j] = true;
            }
        }
    }
    let w = softmax_rows(&Tensor::from_vec([1, lk], logits), Some(&keep));
    let mut out = vec![0.0; dv];
    for (j, &wj) in w.data().iter().enumerate() {
        if keep[j] {
            for (o, vv) in out.iter_mut().zip(v.row(j)) {
                *o += wj * vv;
            }
        }
    }
    out
}

/// Dense softmax attention `softmax(QKᵀ/√d)V`, counting `L_Q·L_K` dot products.
pub fn full_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<AttentionOutput> {
    check_qkv(q, k, Some(v))?;
    let scale = 1.0 / (q.shape()[1] as f64).sqrt();
    let mut ops = OpCounter::default();
    let mut out = Vec::with_capacity(q.shape()[0] * v.shape()[1]);
    for i in 0..q.shape()[0] {
        out.extend(attend_row(q.row(i), k, v, None, scale, &mut ops));
    }
    Ok(AttentionOutput {
        out: Tensor::from_vec([q.shape()[0], v.shape()[1]], out),
        ops,
    })
}

/// ProbSparse attention for a precomputed selection. Active rows are computed
/// exactly as [`full_attention`] computes them.
pub fn probsparse_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    selection: &SparseSelection,
    lazy_mode: LazyMode,
) -> Result<AttentionOutput> {
    check_qkv(q, k, Some(v))?;
    let (lq, d) = (q.shape()[0], q.shape()[1]);
    let (lk, dv) = (k.shape()[0], v.shape()[1]);
    if selection.active.len() != selection.u
        || selection.active.windows(2).any(|w| w[0] >= w[1])
        || selection.active.last().is_some_and(|&i| i >= lq)
    {
        return Err(Error::Contract("selection does not fit the query matrix".into()));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let active = selection.mask(lq);
    let mut ops = OpCounter::default();

    let lazy_keys = match lazy_mode {
        LazyMode::TopK => {
            // Column maxima come from the (uncounted) scoring phase.
            let s = scaled_scores(q, k);
            let colmax: Vec<f64> = (0..lk)
                .map(|j| (0..lq).map(|i| s[i * lk + j]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            Some(top_indices(&colmax, selection.u.min(lk)))
        }
        LazyMode::Mean => None,
    };
    let v_mean: Vec<f64> = (0..dv)
        .map(|c| (0..lk).map(|j| v.row(j)[c]).sum::<f64>() / lk as f64)
        .collect();

    let mut out = Vec::with_capacity(lq * dv);
    for (i, &is_active) in active.iter().enumerate() {
        if is_active {
            out.extend(attend_row(q.row(i), k, v, None, scale, &mut ops));
        } else if let Some(keys) = &lazy_keys {
            out.extend(attend_row(q.row(i), k, v, Some(keys), scale, &mut ops));
        } else {
            out.extend_from_slice(&v_mean);
        }
    }
    Ok(AttentionOutput {
        out: Tensor::from_vec([lq, dv], out),
        ops,
    })
}

/// Scores, selects and attends in one call with `u` from `cfg`.
pub fn probsparse_auto(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    cfg: &ProbSparseConfig,
) -> Result<(AttentionOutput, SparseSelection)> {
    let scores = sparsity_score(q, k)?;
    let u = cfg.active_count(q.shape()[0], k.shape()[0]);
    let sel = select_top_u(&scores, u)?;
    let out = probsparse_attention(q, k, v, &sel, cfg.lazy_mode)?;
    Ok((out, sel))
}

/// Upper bound on counted dot products in top-k mode.
pub fn topk_op_bound(l_q: usize, l_k: usize, u: usize) -> u64 {
    (u * l_k + (l_q - u) * u.min(l_k)) as u64
}

/// Differentiable ProbSparse head on a tape.
///
/// `scores` holds the scaled logits `[B, L_Q, L_K]`, `values` is `[B, L_K, d]`.
/// The query/key selection is piecewise constant in the inputs, so it is
/// taken from the forward values and enters backward as a fixed mask.
pub fn sparse_head(tape: &mut Tape, scores: Var, values: Var, cfg: &ProbSparseConfig) -> Result<Var> {
    let s = tape.value(scores).clone();
    let &[b, lq, lk] = s.shape() else {
        return Err(shape_err("sparse_head", s.shape(), &[0, 0, 0]));
    };
    let u = cfg.active_count(lq, lk);
    let mut row_active = Vec::with_capacity(b * lq);
    let mut key_mask = match cfg.lazy_mode {
        LazyMode::TopK => Vec::with_capacity(b * lq * lk),
        LazyMode::Mean => Vec::new(),
    };
    for bi in 0..b {
        let block = &s.data()[bi * lq * lk..(bi + 1) * lq * lk];
        let m: Vec<f64> = block.chunks(lk).map(row_sparsity).collect();
        let active = SparseSelection {
            u,
            active: top_indices(&m, u),
        }
        .mask(lq);
        if cfg.lazy_mode == LazyMode::TopK {
            let colmax: Vec<f64> = (0..lk)
                .map(|j| (0..lq).map(|i| block[i * lk + j]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let mut keys = vec![false; lk];
            for j in top_indices(&colmax, u.min(lk)) {
                keys[j] = true;
            }
            for &a in &active {
                if a {
                    key_mask.extend(std::iter::repeat_n(true, lk));
                } else {
                    key_mask.extend_from_slice(&keys);
                }
            }
        }
        row_active.extend(active);
    }
    match cfg.lazy_mode {
        LazyMode::TopK => {
            let w = tape.softmax_masked(scores, key_mask)?;
            tape.batch_matmul(w, values, false)
        }
        LazyMode::Mean => {
            let w = tape.softmax(scores);
            let full = tape.batch_matmul(w, values, false)?;
            let mean = tape.mean_tokens(values)?;
            let lazy = tape.broadcast_tokens(mean, lq)?;
            tape.where_rows(row_active, full, lazy)
        }
    }
}
