//! Pipeline configuration, read from a TOML file.
//!
//! Every section and key is optional; unknown keys are rejected. Relative
//! paths in `[data]` resolve against the config file's directory.
//!
//! ```toml
//! [data]
//! trips = "trips.csv"
//! bin_width = 3600
//!
//! [fusion]
//! n_patterns = 7
//!
//! [train]
//! epochs = 500
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fusion::{FuseOp, Linkage};
use crate::ingest::{parse_timestamp, Seconds, HOUR, WEEK};
use crate::mgd::{MgdConfig, Normalization, TemporalConfig};
use crate::model::ModelDims;
use crate::synth::SynthConfig;
use crate::training::{Ablations, OptimizerKind, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataSection,
    pub synth: SynthConfig,
    pub mgd: MgdSection,
    pub fusion: FusionSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Trip CSV `origin,destination,timestamp`, consumed by the ingest stage.
    pub trips: Option<PathBuf>,
    /// Region CSV `id,label`; without it the region count is inferred from trips.
    pub regions: Option<PathBuf>,
    /// Regression targets `region_id,value`; defaults to the synthetic targets in the output directory.
    pub targets_value: Option<PathBuf>,
    /// Clustering targets `region_id,label`; defaults like `targets_value`.
    pub targets_label: Option<PathBuf>,
    pub bin_width: Seconds,
    /// Window bounds as epoch seconds or RFC 3339; defaults to the span of the trips.
    pub window_start: Option<String>,
    pub window_end: Option<String>,
    pub period: Seconds,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            trips: None,
            regions: None,
            targets_value: None,
            targets_label: None,
            bin_width: HOUR,
            window_start: None,
            window_end: None,
            period: WEEK,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MgdSection {
    /// `(c_mean, c_var, c_unif, c_ss)`.
    pub weights: [f64; 4],
    pub normalization: Normalization,
    pub lambda: f64,
    pub use_circular: bool,
}

impl Default for MgdSection {
    fn default() -> Self {
        let d = MgdConfig::default();
        Self {
            weights: d.component_weights,
            normalization: d.normalization,
            lambda: d.temporal.lambda,
            use_circular: d.temporal.use_circular,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub n_patterns: usize,
    pub linkage: Linkage,
    pub fuse_op: FuseOp,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self { n_patterns: 7, linkage: Linkage::Average, fuse_op: FuseOp::Mean }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { d: 96, heads: 4, layers: 1, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub optimizer: OptimizerName,
    pub lr: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub no_mgf: bool,
    pub no_ipmp: bool,
    pub no_ipmca: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            optimizer: OptimizerName::Adam,
            lr: d.learning_rate,
            epochs: d.epochs,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            no_mgf: false,
            no_ipmp: false,
            no_ipmca: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub alpha: f64,
    pub folds: usize,
    /// Cluster count; defaults to the number of distinct target labels.
    pub k: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { alpha: 1.0, folds: 5, k: None }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a config file, resolving relative data paths
    /// against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => e.into(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.data.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Applies one seed to synthesis, initialisation, and k-means.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.model.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.bin_width <= 0 || self.data.period <= 0 {
            return Err(Error::config("bin_width and period must be positive"));
        }
        self.window()?;
        self.synth.validate()?;
        self.mgd_config().validate()?;
        if self.fusion.n_patterns < 1 {
            return Err(Error::config("n_patterns must be at least 1"));
        }
        // region count is unknown until data is loaded; 2 is the smallest valid one
        self.dims(2)?;
        self.train_config().validate()?;
        if !(self.eval.alpha.is_finite() && self.eval.alpha > 0.0) {
            return Err(Error::config("eval alpha must be positive"));
        }
        if self.eval.folds < 2 {
            return Err(Error::config("eval folds must be at least 2"));
        }
        if self.eval.k == Some(0) {
            return Err(Error::config("eval k must be at least 1"));
        }
        Ok(())
    }

    /// Parsed `(window_start, window_end)`, each optional.
    pub fn window(&self) -> Result<(Option<Seconds>, Option<Seconds>)> {
        let parse = |v: &Option<String>, key: &str| {
            v.as_deref()
                .map(|s| parse_timestamp(s).ok_or_else(|| Error::config(format!("cannot parse {key} `{s}`"))))
                .transpose()
        };
        Ok((parse(&self.data.window_start, "window_start")?, parse(&self.data.window_end, "window_end")?))
    }

    pub fn mgd_config(&self) -> MgdConfig {
        MgdConfig {
            component_weights: self.mgd.weights,
            normalization: self.mgd.normalization,
            temporal: TemporalConfig { lambda: self.mgd.lambda, use_circular: self.mgd.use_circular },
        }
    }

    pub fn dims(&self, n_regions: usize) -> Result<ModelDims> {
        ModelDims::new(n_regions, self.fusion.n_patterns, self.model.d, self.model.heads, self.model.layers)
    }

    pub fn ablations(&self) -> Ablations {
        Ablations { no_mgf: self.train.no_mgf, no_ipmp: self.train.no_ipmp, no_ipmca: self.train.no_ipmca }
    }

    pub fn train_config(&self) -> TrainConfig {
        let optimizer = match self.train.optimizer {
            OptimizerName::Adam => OptimizerKind::Adam {
                beta1: self.train.beta1,
                beta2: self.train.beta2,
                epsilon: self.train.epsilon,
            },
            OptimizerName::Sgd => OptimizerKind::Sgd,
        };
        TrainConfig {
            epochs: self.train.epochs,
            learning_rate: self.train.lr,
            optimizer,
            seed: self.model.seed,
            ablation: self.ablations(),
        }
    }
}

impl DataSection {
    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.trips, &mut self.regions, &mut self.targets_value, &mut self.targets_label]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_hyperparameters() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg.model.d, 96);
        assert_eq!(cfg.model.heads, 4);
        assert_eq!(cfg.model.layers, 1);
        assert_eq!(cfg.fusion.n_patterns, 7);
        assert_eq!(cfg.mgd.weights, [1.0; 4]);
        assert_eq!(cfg.data.bin_width, 3600);
        assert_eq!(cfg.eval.folds, 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("[model]\ndepth = 3\n").is_err());
        assert!(PipelineConfig::from_toml("[nonsense]\n").is_err());
    }

    #[test]
    fn zero_epochs_rejected() {
        let err = PipelineConfig::from_toml("[train]\nepochs = 0\n").unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn heads_must_divide_dimension() {
        assert!(PipelineConfig::from_toml("[model]\nd = 10\nheads = 4\n").is_err());
    }

    #[test]
    fn sections_parse() {
        let cfg = PipelineConfig::from_toml(
            "[mgd]\nweights = [1.0, 0.0, 0.0, 0.0]\nnormalization = \"identity\"\n\
             [fusion]\nlinkage = \"complete\"\nfuse_op = \"sum\"\n\
             [train]\noptimizer = \"sgd\"\nno_ipmca = true\n\
             [data]\nwindow_start = \"2024-01-01T00:00:00Z\"\n",
        )
        .unwrap();
        assert_eq!(cfg.mgd_config(), MgdConfig { normalization: Normalization::Identity, ..MgdConfig::mean_only() });
        assert_eq!(cfg.fusion.linkage, Linkage::Complete);
        assert_eq!(cfg.train_config().optimizer, OptimizerKind::Sgd);
        assert!(cfg.ablations().no_ipmca);
        assert_eq!(cfg.window().unwrap().0, Some(1_704_067_200));
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.set_seed(11);
        cfg.eval.k = Some(3);
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "[data]\ntrips = \"t.csv\"\n").unwrap();
        let cfg = PipelineConfig::from_file(&path).unwrap();
        assert_eq!(cfg.data.trips.unwrap(), dir.path().join("t.csv"));
    }
}
