use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{default_grid, AlignConfig, Aggregation};
use crate::basisnet::{EnsembleConfig, NetConfig, TrainConfig};
use crate::dataio::{generate_synthetic, load_m5, Frame, PanelDataset, HORIZON};
use crate::error::{Error, Result};
use crate::gbm::GbmConfig;
use crate::metrics::ScaleConvention;

/// M5-format input files, either a directory or explicit paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub dir: Option<PathBuf>,
    pub sales: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    pub prices: Option<PathBuf>,
}

const SALES_NAMES: [&str; 3] = ["sales_train.csv", "sales_train_evaluation.csv", "sales_train_validation.csv"];

impl DataPaths {
    /// Resolved `(sales, calendar, prices)`; every file must exist.
    pub fn resolve(&self) -> Result<(PathBuf, PathBuf, PathBuf)> {
        let pick = |explicit: &Option<PathBuf>, names: &[&str]| -> Result<PathBuf> {
            if let Some(p) = explicit {
                return Ok(p.clone());
            }
            let dir = self
                .dir
                .as_ref()
                .ok_or_else(|| Error::Config("data needs `dir` or explicit file paths".into()))?;
            names
                .iter()
                .map(|n| dir.join(n))
                .find(|p| p.exists())
                .ok_or_else(|| Error::Config(format!("none of {names:?} found in {}", dir.display())))
        };
        let sales = pick(&self.sales, &SALES_NAMES)?;
        let calendar = pick(&self.calendar, &["calendar.csv"])?;
        let prices = pick(&self.prices, &["sell_prices.csv"])?;
        for p in [&sales, &calendar, &prices] {
            if !p.exists() {
                return Err(Error::Config(format!("data file {} does not exist", p.display())));
            }
        }
        Ok((sales, calendar, prices))
    }
}

/// Generator settings for a synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub items: usize,
    pub stores: usize,
    pub days: usize,
    pub intermittency: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            items: 20,
            stores: 2,
            days: 400,
            intermittency: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisNetSection {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    /// Levels `1..=top_levels` form the top model's training set.
    pub top_levels: usize,
}

impl Default for BasisNetSection {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            train: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            top_levels: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentSection {
    pub grid: Vec<f64>,
    /// Aligned level; anything but 1 is experimental.
    pub level: usize,
    pub aggregation: Aggregation,
    pub refine: bool,
}

impl Default for AlignmentSection {
    fn default() -> Self {
        let a = AlignConfig::default();
        Self {
            grid: default_grid(),
            level: a.level,
            aggregation: a.aggregation,
            refine: a.refine,
        }
    }
}

impl AlignmentSection {
    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            level: self.level,
            aggregation: self.aggregation,
            refine: self.refine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub scale_convention: ScaleConvention,
    /// Levels with per-node rows in the report.
    pub detail_levels: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            scale_convention: ScaleConvention::default(),
            detail_levels: 5,
        }
    }
}

/// A complete pipeline run description, read from one TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub frame: Frame,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Trailing training days used for dollar-sales weights.
    pub weight_window: usize,
    /// Reuse a persisted top-level forecast from the output directory.
    pub resume: bool,
    pub data: Option<DataPaths>,
    pub synthetic: Option<SyntheticSpec>,
    pub gbm: GbmConfig,
    pub basisnet: BasisNetSection,
    pub alignment: AlignmentSection,
    pub report: ReportSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frame: Frame::Validation,
            out: None,
            weight_window: HORIZON,
            resume: false,
            data: None,
            synthetic: None,
            gbm: GbmConfig::default(),
            basisnet: BasisNetSection::default(),
            alignment: AlignmentSection::default(),
            report: ReportSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that can be checked before loading data.
    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.synthetic) {
            (Some(d), None) => {
                d.resolve()?;
            }
            (None, Some(s)) => {
                if s.items == 0 || s.stores == 0 {
                    return Err(Error::Config("synthetic panel needs items and stores".into()));
                }
                if s.days <= 2 * HORIZON {
                    return Err(Error::Config(format!("synthetic panel needs more than {} days", 2 * HORIZON)));
                }
                if !(0.0..=1.0).contains(&s.intermittency) {
                    return Err(Error::Config("synthetic intermittency must lie in [0, 1]".into()));
                }
            }
            _ => return Err(Error::Config("exactly one of [data] or [synthetic] must be given".into())),
        }
        if self.out.is_none() {
            return Err(Error::Config("no output directory (`out` or --out)".into()));
        }
        if self.weight_window == 0 {
            return Err(Error::Config("weight_window must be positive".into()));
        }
        if self.basisnet.top_levels == 0 {
            return Err(Error::Config("basisnet.top_levels must be at least 1".into()));
        }
        if self.alignment.level == 0 {
            return Err(Error::Config("alignment.level is 1-based".into()));
        }
        if self.alignment.grid.is_empty() || self.alignment.grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::Config("alignment.grid must hold positive values".into()));
        }
        self.gbm.validate()?;
        self.basisnet.train.validate()?;
        self.basisnet.net.shape(HORIZON, HORIZON).validate()?;
        Ok(())
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("no output directory (`out` or --out)".into()))
    }

    /// Loads or generates the full panel described by the config.
    pub fn dataset(&self) -> Result<PanelDataset> {
        match (&self.data, &self.synthetic) {
            (Some(d), _) => {
                let (s, c, p) = d.resolve()?;
                load_m5(&s, &c, &p)
            }
            (None, Some(s)) => generate_synthetic(
                crate::seed::derive_seed(self.seed, "synthetic"),
                s.items,
                s.stores,
                s.days,
                s.intermittency,
            ),
            (None, None) => Err(Error::Config("no data source".into())),
        }
    }
}
