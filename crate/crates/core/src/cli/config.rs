use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::OlsOptions;
use crate::disagg::DisaggMethod;
use crate::error::{Error, Result};
use crate::evalkit::SplitSpec;
use crate::explain::Perturbation;
use crate::features::{ConfigId, DEFAULT_TAU};
use crate::neuralnet::TrainSpec;

/// Either a synthetic spec or the three raw sources.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub synthetic: Option<PathBuf>,
    pub gerd: Option<PathBuf>,
    pub svi_dir: Option<PathBuf>,
    pub macros: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSettings {
    /// Configurations whose models get SHAP tables.
    pub models: Vec<ConfigId>,
    /// Model behind the elasticity table and the network allocation.
    pub allocation_model: ConfigId,
    pub background_per_country: usize,
    /// Most recent observed rows explained per country.
    pub rows_per_country: usize,
    pub n_coalitions: Option<usize>,
    pub perturbation: Perturbation,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self {
            models: vec![ConfigId::AGT],
            allocation_model: ConfigId::AGT,
            background_per_country: 3,
            rows_per_country: 12,
            n_coalitions: None,
            perturbation: Perturbation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisaggSettings {
    /// Chow-Lin indicators: the topics of the top-ranked SHAP features of
    /// the allocation model.
    pub chow_lin_topics: usize,
    /// Pick the sparse method's penalty by this many cross-validation folds
    /// instead of BIC.
    pub sparse_cv_folds: Option<usize>,
}

impl Default for DisaggSettings {
    fn default() -> Self {
        Self {
            chow_lin_topics: 6,
            sparse_cv_folds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSettings {
    /// `country,year,month,value`; defaults to the synthetic truth.
    pub external: Option<PathBuf>,
    pub max_lag: usize,
    pub alpha: f64,
}

impl Default for ValidateSettings {
    fn default() -> Self {
        Self {
            external: None,
            max_lag: 6,
            alpha: 0.01,
        }
    }
}

fn default_configs() -> Vec<ConfigId> {
    ConfigId::ALL.to_vec()
}

fn default_methods() -> Vec<DisaggMethod> {
    vec![DisaggMethod::ChowLin, DisaggMethod::SpTd, DisaggMethod::NnElasticity]
}

fn default_tau() -> usize {
    DEFAULT_TAU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file. Not part of the hash.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_tau")]
    pub tau: usize,
    #[serde(default = "default_configs")]
    pub configs: Vec<ConfigId>,
    #[serde(default = "default_methods")]
    pub methods: Vec<DisaggMethod>,
    pub data: DataSource,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub ols: OlsOptions,
    #[serde(default)]
    pub explain: ExplainSettings,
    #[serde(default)]
    pub disagg: DisaggSettings,
    #[serde(default)]
    pub validate: ValidateSettings,
}

impl RunConfig {
    /// Parses a TOML file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(v) = p.as_mut() {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        resolve(&mut cfg.data.synthetic);
        resolve(&mut cfg.data.gerd);
        resolve(&mut cfg.data.svi_dir);
        resolve(&mut cfg.data.macros);
        resolve(&mut cfg.validate.external);
        resolve(&mut cfg.out);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let raw = [&d.gerd, &d.svi_dir, &d.macros];
        match (&d.synthetic, raw.iter().filter(|p| p.is_some()).count()) {
            (Some(_), 0) | (None, 3) => {}
            (Some(_), _) => {
                return Err(Error::Config(
                    "give either `data.synthetic` or the raw sources, not both".into(),
                ))
            }
            (None, _) => {
                return Err(Error::Config(
                    "`data` needs `synthetic` or all of `gerd`, `svi_dir`, `macros`".into(),
                ))
            }
        }
        for p in raw.into_iter().chain([&d.synthetic, &self.validate.external]).flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if self.configs.is_empty() {
            return Err(Error::Config("no configurations selected".into()));
        }
        if self.tau == 0 {
            return Err(Error::Config("tau must be at least 1".into()));
        }
        if self.disagg.sparse_cv_folds.is_some_and(|k| k < 2) {
            return Err(Error::Config("disagg.sparse_cv_folds must be at least 2".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    /// Hex prefix of the SHA-256 of the effective settings.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("run config serializes");
        Sha256::digest(&json)[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
