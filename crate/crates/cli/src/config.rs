use std::path::{Path, PathBuf};

use fairdcov::model::{EarlyStopping, OptimiserConfig, RegulariserKind};
use fairdcov::pipeline::{Candidate, DatasetSchema, EvalConfig, SearchSpace};
use fairdcov::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub schema: DatasetSchema,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optimiser: OptimiserConfig,
    #[serde(default)]
    pub stopping: EarlyStopping,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub report: ReportSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
    pub subtrain_fraction: f64,
    /// Subgroups of the fitting rows are topped up to this many rows; 0
    /// turns oversampling off.
    pub oversample_min_count: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            subtrain_fraction: 0.7,
            oversample_min_count: fairdcov::pipeline::DEFAULT_MIN_COUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_layers: usize,
    pub width: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            width: 32,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub budget: usize,
    pub n_rand: usize,
    pub space: SearchSpace,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            budget: 10,
            n_rand: 10,
            space: SearchSpace::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub regularisers: Vec<RegulariserKind>,
    /// Explicit grid; when absent the grid is `multiples` times the
    /// suggested scale.
    pub grid: Option<Vec<f64>>,
    pub multiples: Vec<f64>,
    pub seeds: usize,
    pub weights: Option<Vec<f64>>,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            regularisers: vec![RegulariserKind::Ccdcov, RegulariserKind::Jdcov],
            grid: None,
            multiples: vec![0.0, 1.0, 10.0],
            seeds: 10,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lambda: Option<f64>,
    pub regulariser: RegulariserKind,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lambda: None,
            regulariser: RegulariserKind::Ccdcov,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Subgroups with fewer rows stay in the tables but not the figures.
    pub min_display: usize,
    pub lowess_span: f64,
    pub histogram_bins: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            min_display: 100,
            lowess_span: 1.0,
            histogram_bins: 20,
        }
    }
}

impl RunConfig {
    /// Parses and validates a TOML config. Relative paths resolve against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data.is_relative() {
            cfg.data = base.join(&cfg.data);
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.schema.validate()?;
        if self.model.hidden_layers == 0 || self.model.width == 0 {
            return Err(Error::Config(
                "the network needs at least one hidden unit".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.model.dropout
            )));
        }
        if self.calibration.seeds == 0 {
            return Err(Error::Config("calibration needs at least one seed".into()));
        }
        if self.report.lowess_span.is_nan()
            || self.report.lowess_span <= 0.0
            || self.report.histogram_bins == 0
        {
            return Err(Error::Config(
                "report span and bins must be positive".into(),
            ));
        }
        self.eval.binning.validate()?;
        Ok(())
    }

    /// Network and optimiser from the config, for runs without a tuned
    /// candidate.
    pub fn candidate(&self) -> Candidate {
        Candidate {
            hidden_layers: self.model.hidden_layers,
            width: self.model.width,
            dropout: self.model.dropout,
            optimiser: self.optimiser.clone(),
        }
    }
}
