//! The nine forecasters: PatchTST, Informer and Autoformer, each in a
//! minimal, standard and full variant.
//!
//! Every model reads a normalized window `x ∈ R^{B×P}` one step per token
//! and returns `ŷ ∈ R^{B×H}`. Encoder-only variants pool the encoder tokens
//! and project to `H`; full variants run a one-layer decoder over `H` query
//! tokens and project each token to one value.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::blocks::{
    avg_pool_tokens, decoder_layer, decompose_rows, encoder_layer, sinusoidal_pe, AttentionKind,
    DecoderLayerWeights, EncoderLayerWeights, Linear, MhaConfig,
};
use crate::error::{shape_err, Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::probsparse::ProbSparseConfig;
use crate::rng::{prng, uniform};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "cfv1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    PatchTst,
    Informer,
    Autoformer,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::PatchTst, Family::Informer, Family::Autoformer];

    pub fn name(self) -> &'static str {
        match self {
            Family::PatchTst => "patchtst",
            Family::Informer => "informer",
            Family::Autoformer => "autoformer",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "family",
                value: s.to_string(),
            })
    }
}

/// Ordered `Minimal < Standard < Full`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Minimal,
    Standard,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Minimal, Variant::Standard, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Minimal => "minimal",
            Variant::Standard => "standard",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "variant",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    pub variant: Variant,
    pub patch: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub k_ma: usize,
    pub probsparse: ProbSparseConfig,
}

/// Hyperparameters shared by every model of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Moving-average width for Autoformer minimal and standard.
    pub k_ma: usize,
    /// Moving-average width for Autoformer full.
    pub k_ma_full: usize,
    pub probsparse: ProbSparseConfig,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            d_model: 8,
            heads: 2,
            d_ff: 32,
            enc_layers: 2,
            dec_layers: 1,
            k_ma: 3,
            k_ma_full: 25,
            probsparse: ProbSparseConfig::default(),
        }
    }
}

impl ModelShape {
    pub fn config(&self, family: Family, variant: Variant, patch: usize, horizon: usize) -> ModelConfig {
        let k_ma = if family == Family::Autoformer && variant == Variant::Full {
            self.k_ma_full
        } else {
            self.k_ma
        };
        ModelConfig {
            family,
            variant,
            patch,
            horizon,
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            k_ma,
            probsparse: self.probsparse,
        }
    }
}

impl ModelConfig {
    /// Defaults: `d_model = 8`, two heads, `d_ff = 32`, two encoder layers,
    /// one decoder layer, `k = 25` for Autoformer full and `3` otherwise.
    pub fn new(family: Family, variant: Variant, patch: usize, horizon: usize) -> Self {
        ModelShape::default().config(family, variant, patch, horizon)
    }

    pub fn validate(&self) -> Result<()> {
        MhaConfig::new(self.d_model, self.heads)?;
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!("d_model must be even, got {}", self.d_model)));
        }
        if self.patch == 0 || self.horizon == 0 {
            return Err(Error::Config(format!(
                "patch and horizon must be at least 1 (got P = {}, H = {})",
                self.patch, self.horizon
            )));
        }
        if self.k_ma.is_multiple_of(2) {
            return Err(Error::Config(format!("k_ma must be odd, got {}", self.k_ma)));
        }
        if self.enc_layers == 0 || self.d_ff == 0 {
            return Err(Error::Config("need at least one encoder layer and d_ff >= 1".into()));
        }
        if self.variant == Variant::Full && self.dec_layers == 0 {
            return Err(Error::Config("full variants need at least one decoder layer".into()));
        }
        if !(self.probsparse.c > 0.0) {
            return Err(Error::Config(format!("probsparse c must be positive, got {}", self.probsparse.c)));
        }
        Ok(())
    }

    pub fn mha(&self) -> MhaConfig {
        MhaConfig {
            d_model: self.d_model,
            heads: self.heads,
        }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.family, self.variant)
    }

    fn encoder_attention(&self) -> AttentionKind {
        match (self.family, self.variant) {
            (Family::Informer, Variant::Standard | Variant::Full) => AttentionKind::ProbSparse(self.probsparse),
            _ => AttentionKind::Full,
        }
    }

    fn decoder_self_attention(&self) -> AttentionKind {
        self.encoder_attention()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum PositionalEncoding {
    Fixed(Tensor),
    Learnable(ParamId),
}

#[derive(Debug, Clone, PartialEq)]
enum Head {
    Pooled {
        w_o: Linear,
    },
    Decoder {
        w_e: Linear,
        pe: Tensor,
        layers: Vec<DecoderLayerWeights>,
        w_o: Linear,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    w_e: Linear,
    pe: PositionalEncoding,
    encoder: Vec<EncoderLayerWeights>,
    head: Head,
    w_t: Option<Linear>,
}

/// Forecast with its additive parts. For Autoformer,
/// `forecast == seasonal + trend`; other families have no trend head.
#[derive(Debug, Clone, Copy)]
pub struct ForecastParts {
    pub forecast: Var,
    pub seasonal: Var,
    pub trend: Option<Var>,
}

/// A configured model and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl Forecaster {
    /// Initializes every parameter from `seed`. Weight matrices are drawn
    /// from `U(±1/√fan_in)`, LayerNorm starts at `γ = 1, β = 0`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = prng(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let w_e = Linear::init(&mut store, "enc.w_e", 1, d, &mut rng);
        let pe = if config.family == Family::PatchTst && config.variant == Variant::Standard {
            let bound = 1.0 / (d as f64).sqrt();
            let data = (0..config.patch * d).map(|_| uniform(&mut rng, -bound, bound)).collect();
            PositionalEncoding::Learnable(store.push("enc.pe", Tensor::from_vec([config.patch, d], data)))
        } else {
            PositionalEncoding::Fixed(sinusoidal_pe(config.patch, d)?.table)
        };
        let encoder = (0..config.enc_layers)
            .map(|i| EncoderLayerWeights::init(&mut store, &format!("enc{i}"), d, config.d_ff, &mut rng))
            .collect();
        let head = if config.variant == Variant::Full {
            let w_e = Linear::init(&mut store, "dec.w_e", 1, d, &mut rng);
            let layers = (0..config.dec_layers)
                .map(|i| DecoderLayerWeights::init(&mut store, &format!("dec{i}"), d, config.d_ff, &mut rng))
                .collect();
            let w_o = Linear::init(&mut store, "w_o", d, 1, &mut rng);
            Head::Decoder {
                w_e,
                pe: sinusoidal_pe(config.horizon, d)?.table,
                layers,
                w_o,
            }
        } else {
            Head::Pooled {
                w_o: Linear::init(&mut store, "w_o", d, config.horizon, &mut rng),
            }
        };
        let w_t = (config.family == Family::Autoformer)
            .then(|| Linear::init(&mut store, "w_t", config.patch, config.horizon, &mut rng));
        Ok(Self {
            config,
            params: store,
            layout: Layout {
                w_e,
                pe,
                encoder,
                head,
                w_t,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.params.bind(tape)
    }

    /// `ŷ ∈ R^{B×H}` for a batch `x ∈ R^{B×P}`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: &Tensor) -> Result<Var> {
        Ok(self.forward_parts(tape, p, x)?.forecast)
    }

    pub fn forward_parts(&self, tape: &mut Tape, p: &Bound, x: &Tensor) -> Result<ForecastParts> {
        let cfg = &self.config;
        let &[b, l] = x.shape() else {
            return Err(shape_err("forward", x.shape(), &[0, cfg.patch]));
        };
        if l != cfg.patch || b == 0 {
            return Err(shape_err("forward", x.shape(), &[b.max(1), cfg.patch]));
        }

        let (enc_in, trend) = if cfg.family == Family::Autoformer {
            let (trend, seasonal) = decompose_rows(x, cfg.k_ma)?;
            (seasonal, Some(trend))
        } else {
            (x.clone(), None)
        };

        let tokens = tape.constant(enc_in.reshape([b, l, 1])?);
        let z = self.layout.w_e.apply(tape, tokens, p)?;
        let pe = match &self.layout.pe {
            PositionalEncoding::Fixed(table) => tape.constant(table.clone()),
            PositionalEncoding::Learnable(id) => p[*id],
        };
        let mut h = tape.add_broadcast(z, pe)?;
        let enc_kind = cfg.encoder_attention();
        for w in &self.layout.encoder {
            h = encoder_layer(tape, h, cfg.mha(), w, p, &enc_kind)?;
        }

        let seasonal = match &self.layout.head {
            Head::Pooled { w_o } => {
                let pooled = avg_pool_tokens(tape, h)?;
                w_o.apply(tape, pooled, p)?
            }
            Head::Decoder { w_e, pe, layers, w_o } => {
                let dec_in = if cfg.family == Family::Autoformer {
                    Tensor::zeros([b, cfg.horizon, 1])
                } else {
                    let data = (0..b)
                        .flat_map(|i| std::iter::repeat_n(x.at(i, l - 1), cfg.horizon))
                        .collect();
                    Tensor::from_vec([b, cfg.horizon, 1], data)
                };
                let dec_tokens = tape.constant(dec_in);
                let zd = w_e.apply(tape, dec_tokens, p)?;
                let pe_d = tape.constant(pe.clone());
                let mut hd = tape.add_broadcast(zd, pe_d)?;
                let self_kind = cfg.decoder_self_attention();
                for w in layers {
                    hd = decoder_layer(tape, hd, h, cfg.mha(), w, p, &self_kind)?;
                }
                let out = w_o.apply(tape, hd, p)?;
                tape.reshape(out, &[b, cfg.horizon])?
            }
        };

        match (trend, self.layout.w_t) {
            (Some(trend), Some(w_t)) => {
                let tv = tape.constant(trend);
                let trend_out = w_t.apply(tape, tv, p)?;
                let forecast = tape.add(seasonal, trend_out)?;
                Ok(ForecastParts {
                    forecast,
                    seasonal,
                    trend: Some(trend_out),
                })
            }
            _ => Ok(ForecastParts {
                forecast: seasonal,
                seasonal,
                trend: None,
            }),
        }
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let y = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(y).clone())
    }

    /// Mean squared error of the forecast against `y ∈ R^{B×H}`.
    pub fn loss(&self, tape: &mut Tape, p: &Bound, x: &Tensor, y: &Tensor) -> Result<Var> {
        let pred = self.forward(tape, p, x)?;
        let target = tape.constant(y.clone());
        tape.mse(pred, target)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config,
            params: self
                .params
                .names()
                .iter()
                .zip(self.params.tensors())
                .map(|(name, t)| NamedTensor {
                    name: name.clone(),
                    tensor: t.clone(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?}, expected {CHECKPOINT_FORMAT:?}",
                ck.format
            )));
        }
        let mut model = Self::build(ck.config, 0)?;
        if ck.params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                ck.params.len()
            )));
        }
        for (i, nt) in ck.params.iter().enumerate() {
            let id = ParamId(i);
            if model.params.name(id) != nt.name || model.params.get(id).shape() != nt.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i} is {} {:?}, expected {} {:?}",
                    nt.name,
                    nt.tensor.shape(),
                    model.params.name(id),
                    model.params.get(id).shape()
                )));
            }
            if nt.tensor.numel() != nt.tensor.data().len() {
                return Err(Error::Checkpoint(format!("tensor {} has inconsistent data length", nt.name)));
            }
            *model.params.get_mut(id) = nt.tensor.clone();
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// JSON parameter dump with its config header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
