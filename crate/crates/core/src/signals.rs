//! The ten closed-form benchmark signals, the three-stage noise model,
//! min-max normalization and supervised windowing.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal, prng};

/// Default series length (`t = 0..499`).
pub const DEFAULT_LEN: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalId {
    Sine,
    CosineTrend,
    ExpDecaySine,
    Poly2,
    LogSine,
    GaussianBump,
    LongSine,
    Cubic,
    ExpGrowth,
    EnvelopeSine,
}

impl SignalId {
    pub const ALL: [SignalId; 10] = [
        SignalId::Sine,
        SignalId::CosineTrend,
        SignalId::ExpDecaySine,
        SignalId::Poly2,
        SignalId::LogSine,
        SignalId::GaussianBump,
        SignalId::LongSine,
        SignalId::Cubic,
        SignalId::ExpGrowth,
        SignalId::EnvelopeSine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SignalId::Sine => "sine",
            SignalId::CosineTrend => "cosine_trend",
            SignalId::ExpDecaySine => "exp_decay_sine",
            SignalId::Poly2 => "poly2",
            SignalId::LogSine => "log_sine",
            SignalId::GaussianBump => "gaussian_bump",
            SignalId::LongSine => "long_sine",
            SignalId::Cubic => "cubic",
            SignalId::ExpGrowth => "exp_growth",
            SignalId::EnvelopeSine => "envelope_sine",
        }
    }

    /// Clean value `s(t)`.
    pub fn eval(self, t: f64) -> f64 {
        let tau = 2.0 * PI;
        match self {
            SignalId::Sine => (tau * t / 40.0).sin(),
            SignalId::CosineTrend => 0.01 * t + (tau * t / 50.0).cos(),
            SignalId::ExpDecaySine => (-0.01 * t).exp() * (tau * t / 50.0).sin(),
            SignalId::Poly2 => 0.0001 * t * t - 0.03 * t + 3.0,
            SignalId::LogSine => (1.0 + t).ln() * (tau * t / 80.0).sin(),
            SignalId::GaussianBump => (-(t - 250.0).powi(2) / (2.0 * 50.0 * 50.0)).exp(),
            SignalId::LongSine => (tau * t / 100.0).sin(),
            SignalId::Cubic => 0.00001 * (t - 250.0).powi(3) + 0.05 * t,
            SignalId::ExpGrowth => (0.005 * t).exp(),
            SignalId::EnvelopeSine => {
                (1.0 + 0.5 * (tau * t / 100.0).cos()) * (tau * t / 30.0).sin()
            }
        }
    }
}

impl fmt::Display for SignalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SignalId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SignalId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "signal",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub values: Vec<f64>,
    pub signal_id: SignalId,
    pub noisy: bool,
}

impl Series {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_add: f64,
    pub sigma_mult: f64,
    pub shift_prob: f64,
    pub shift_range: i64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_add: 0.10,
            sigma_mult: 0.08,
            shift_prob: 0.10,
            shift_range: 10,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    /// A configuration under which [`add_noise`] is the identity.
    pub fn silent() -> Self {
        Self {
            sigma_add: 0.0,
            sigma_mult: 0.0,
            shift_prob: 0.0,
            shift_range: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_add >= 0.0 && self.sigma_mult >= 0.0) {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.shift_prob) || self.shift_range < 0 {
            return Err(Error::Config(
                "shift_prob must lie in [0, 1] and shift_range must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Evaluates `id` at `t = 0..len`.
pub fn generate(id: SignalId, len: usize) -> Result<Series> {
    if len == 0 {
        return Err(Error::Contract("series length must be at least 1".into()));
    }
    Ok(Series {
        values: (0..len).map(|t| id.eval(t as f64)).collect(),
        signal_id: id,
        noisy: false,
    })
}

/// Additive Gaussian noise, then multiplicative jitter, then (with
/// probability `shift_prob`) one global integer time shift with edge
/// replication. Deterministic in `cfg.seed`.
pub fn add_noise(series: &Series, cfg: &NoiseConfig) -> Result<Series> {
    cfg.validate()?;
    let mut rng = prng(cfg.seed);
    let mut v: Vec<f64> = series
        .values
        .iter()
        .map(|&s| s + normal(&mut rng, cfg.sigma_add))
        .collect();
    for x in v.iter_mut() {
        *x *= 1.0 + normal(&mut rng, cfg.sigma_mult);
    }
    let shift_draw: f64 = rng.gen();
    if cfg.shift_prob > 0.0 && shift_draw < cfg.shift_prob {
        let dt = rng.gen_range(-cfg.shift_range..=cfg.shift_range);
        v = shift_series(&v, dt);
    }
    Ok(Series {
        values: v,
        signal_id: series.signal_id,
        noisy: true,
    })
}

/// `out[t] = v[clamp(t + dt)]`.
pub fn shift_series(v: &[f64], dt: i64) -> Vec<f64> {
    let last = v.len() as i64 - 1;
    (0..v.len() as i64)
        .map(|t| v[(t + dt).clamp(0, last) as usize])
        .collect()
}

/// Min-max scaling to `[0, 1]`; a constant series maps to zeros.
pub fn normalize(series: &Series) -> Series {
    Series {
        values: normalize_values(&series.values),
        ..series.clone()
    }
}

pub fn normalize_values(v: &[f64]) -> Vec<f64> {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - min) / range).collect()
}

/// Supervised `(input P, target H)` windows.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    /// `N × P`, row-major.
    pub inputs: Vec<f64>,
    /// `N × H`, row-major.
    pub targets: Vec<f64>,
    pub patch: usize,
    pub horizon: usize,
    pub len: usize,
}

impl SeriesDataset {
    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.patch..(i + 1) * self.patch]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.horizon..(i + 1) * self.horizon]
    }

    /// Windows `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SeriesDataset {
        SeriesDataset {
            inputs: self.inputs[range.start * self.patch..range.end * self.patch].to_vec(),
            targets: self.targets[range.start * self.horizon..range.end * self.horizon].to_vec(),
            patch: self.patch,
            horizon: self.horizon,
            len: range.len(),
        }
    }
}

/// Slides a window of `patch + horizon` over `values`: `N = T − P − H + 1`.
pub fn window_values(values: &[f64], patch: usize, horizon: usize) -> Result<SeriesDataset> {
    let required = patch + horizon;
    if patch == 0 || horizon == 0 || values.len() < required {
        return Err(Error::SeriesTooShort {
            len: values.len(),
            required: required.max(2),
        });
    }
    let n = values.len() - required + 1;
    let mut inputs = Vec::with_capacity(n * patch);
    let mut targets = Vec::with_capacity(n * horizon);
    for i in 0..n {
        inputs.extend_from_slice(&values[i..i + patch]);
        targets.extend_from_slice(&values[i + patch..i + required]);
    }
    Ok(SeriesDataset {
        inputs,
        targets,
        patch,
        horizon,
        len: n,
    })
}

pub fn window(series: &Series, patch: usize, horizon: usize) -> Result<SeriesDataset> {
    window_values(&series.values, patch, horizon)
}

/// The benchmark series for one signal: generated, optionally noised, normalized.
pub fn benchmark_series(id: SignalId, len: usize, noise: Option<&NoiseConfig>) -> Result<Series> {
    let clean = generate(id, len)?;
    let s = match noise {
        Some(cfg) => add_noise(&clean, cfg)?,
        None => clean,
    };
    Ok(normalize(&s))
}
