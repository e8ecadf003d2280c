//! The JSON run configuration.

use anyhow::{bail, Context, Result};
use compactformer::bench::GridSpec;
use compactformer::dynsys::{LorenzConfig, System, VdpConfig};
use compactformer::koopman::{KoopRunSpec, KoopTrainConfig, KoopformerConfig};
use compactformer::models::Family;
use compactformer::probsparse::ProbSparseConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

/// Everything a command can be configured with. Missing sections and keys
/// take their defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    pub grid: GridSpec,
    pub koopformer: KoopSettings,
    pub dynsys: DynsysSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            grid: GridSpec::default(),
            koopformer: KoopSettings::default(),
            dynsys: DynsysSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).context("malformed configuration")?;
        if raw.get("config_version").is_none() {
            bail!("configuration lacks config_version");
        }
        let cfg: RunConfig = serde_json::from_str(text).context("malformed configuration")?;
        if cfg.config_version != CONFIG_VERSION {
            bail!(
                "unsupported config_version {} (this build reads version {CONFIG_VERSION})",
                cfg.config_version
            );
        }
        cfg.grid.validate()?;
        for system in [System::Vdp, System::Lorenz] {
            cfg.koopformer.spec(system, 0).model.validate()?;
        }
        cfg.dynsys.vdp.steps()?;
        cfg.dynsys.lorenz.steps()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }
}

/// Per-system Koopformer settings; `None` keeps the system default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct KoopSystemSettings {
    pub patch: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KoopSettings {
    pub backbone: Family,
    pub horizon: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub enc_layers: usize,
    pub latent: usize,
    pub lambda: f64,
    pub k_ma: usize,
    pub probsparse: ProbSparseConfig,
    pub lr: f64,
    pub split_fraction: f64,
    pub vdp: KoopSystemSettings,
    pub lorenz: KoopSystemSettings,
}

impl Default for KoopSettings {
    fn default() -> Self {
        let model = KoopformerConfig::default();
        let base = KoopRunSpec::defaults(System::Vdp);
        Self {
            backbone: model.backbone,
            horizon: model.horizon,
            d_model: model.d_model,
            heads: model.heads,
            d_ff: model.d_ff,
            enc_layers: model.enc_layers,
            latent: model.latent,
            lambda: model.lambda,
            k_ma: model.k_ma,
            probsparse: model.probsparse,
            lr: base.train.lr,
            split_fraction: base.split_fraction,
            vdp: KoopSystemSettings::default(),
            lorenz: KoopSystemSettings::default(),
        }
    }
}

impl KoopSettings {
    pub fn spec(&self, system: System, seed: u64) -> KoopRunSpec {
        let per = match system {
            System::Vdp => self.vdp,
            System::Lorenz => self.lorenz,
        };
        let d = KoopRunSpec::defaults(system);
        KoopRunSpec {
            system,
            model: KoopformerConfig {
                backbone: self.backbone,
                d_state: system.dim(),
                patch: per.patch.unwrap_or(d.model.patch),
                horizon: self.horizon,
                d_model: self.d_model,
                heads: self.heads,
                d_ff: self.d_ff,
                enc_layers: self.enc_layers,
                latent: self.latent,
                lambda: self.lambda,
                k_ma: self.k_ma,
                probsparse: self.probsparse,
            },
            train: KoopTrainConfig {
                epochs: per.epochs.unwrap_or(d.train.epochs),
                lr: self.lr,
                batch_size: per.batch_size.unwrap_or(d.train.batch_size),
                seed: 0,
            },
            split_fraction: self.split_fraction,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DynsysSettings {
    pub vdp: VdpConfig,
    pub lorenz: LorenzConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json(r#"{"config_version": 1}"#).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.grid.cells().len(), 750);
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = RunConfig::default();
        cfg.grid.seed = 42;
        cfg.koopformer.lorenz.epochs = Some(7);
        cfg.dynsys.vdp.mu = 2.5;
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        assert!(RunConfig::from_json(r#"{"config_version": 1, "grid": {"patchs": [4]}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"config_version": 1, "extra": true}"#).is_err());
        assert!(RunConfig::from_json(r#"{"config_version": 2}"#).is_err());
        assert!(RunConfig::from_json("{}").is_err());
        assert!(RunConfig::from_json(r#"{"config_version": 1, "grid": {"lr": -1.0}}"#).is_err());
    }

    #[test]
    fn koopformer_defaults_follow_the_system() {
        let k = KoopSettings::default();
        let v = k.spec(System::Vdp, 3);
        let l = k.spec(System::Lorenz, 3);
        assert_eq!((v.model.patch, v.model.horizon, v.train.epochs, v.model.d_state), (16, 5, 1000, 2));
        assert_eq!((l.model.patch, l.model.horizon, l.train.epochs, l.model.d_state), (200, 5, 3000, 3));
        assert_eq!(v.model.latent, 16);
        assert_eq!(v, KoopRunSpec { seed: 3, ..KoopRunSpec::defaults(System::Vdp) });
        let cfg = RunConfig::from_json(r#"{"config_version": 1, "koopformer": {"lorenz": {"epochs": 10}}}"#).unwrap();
        let l = cfg.koopformer.spec(System::Lorenz, 0);
        assert_eq!((l.model.patch, l.train.epochs, l.train.batch_size), (200, 10, 8));
    }
}
