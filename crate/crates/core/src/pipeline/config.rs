//! Run configuration (TOML). Every table is optional; missing keys take
//! their defaults.
//!
//! ```toml
//! seed = 0
//! data_dir = "data"
//! out_dir = "out"
//! workers = 0            # 0 = one per core
//!
//! [stages]               # registration, filtering, mpca, gat, fusion, evaluation
//! filtering = true
//!
//! [split]
//! train_fraction = 0.7
//! test_segments = 5
//! validation_fraction = 0.2
//!
//! [fusion.plan]
//! strategy = "hybrid_intermediate"
//! modalities = ["short_axis", "four_chamber", "ehr"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::classifier::GridSearchOptions;
use crate::data::{CleaningConfig, LoadOptions, SyntheticSpec};
use crate::fusion::{FusionConfig, FusionPlan, LateCombination, Strategy};
use crate::gat::GatConfig;
use crate::metrics::default_thresholds;
use crate::modality::Modality;
use crate::mpca::MpcaOptions;
use crate::preprocess::FilterConfig;

/// Environment variable that overrides `out_dir`.
pub const OUT_DIR_ENV: &str = "HEMOFUSE_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    pub registration: bool,
    pub filtering: bool,
    pub mpca: bool,
    pub gat: bool,
    pub fusion: bool,
    pub evaluation: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles { registration: true, filtering: true, mpca: true, gat: true, fusion: true, evaluation: true }
    }
}

impl StageToggles {
    pub fn none() -> Self {
        StageToggles { registration: false, filtering: false, mpca: false, gat: false, fusion: false, evaluation: false }
    }

    pub fn any(&self) -> bool {
        self.registration || self.filtering || self.mpca || self.gat || self.fusion || self.evaluation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub test_segments: usize,
    /// Share of the training split held out for filtering and feature ranking.
    pub validation_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_fraction: 0.7, test_segments: 5, validation_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterStageConfig {
    #[serde(flatten)]
    pub filter: FilterConfig,
    /// Imaging pipeline whose validation AUROC drives the filter.
    pub eval_plan: FusionPlan,
    pub eval_folds: usize,
}

impl Default for FilterStageConfig {
    fn default() -> Self {
        FilterStageConfig {
            filter: FilterConfig::default(),
            eval_plan: FusionPlan::new(Strategy::Intermediate, &[Modality::ShortAxis, Modality::FourChamber]),
            eval_folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionStageConfig {
    pub plan: FusionPlan,
    pub combination: LateCombination,
    pub fisher_in_folds: bool,
}

impl Default for FusionStageConfig {
    fn default() -> Self {
        FusionStageConfig { plan: FusionPlan::hybrid_default(), combination: LateCombination::ZScore, fisher_in_folds: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcaConfig {
    pub thresholds: Vec<f64>,
}

impl Default for DcaConfig {
    fn default() -> Self {
        DcaConfig { thresholds: default_thresholds() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub synthetic: SyntheticSpec,
    pub load: LoadOptions,
    pub split: SplitConfig,
    pub cleaning: CleaningConfig,
    pub stages: StageToggles,
    pub filter: FilterStageConfig,
    pub mpca: MpcaOptions,
    pub gat: GatConfig,
    pub classifier: GridSearchOptions,
    pub fusion: FusionStageConfig,
    pub dca: DcaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            workers: 0,
            synthetic: SyntheticSpec::default(),
            load: LoadOptions::default(),
            split: SplitConfig::default(),
            cleaning: CleaningConfig::default(),
            stages: StageToggles::default(),
            filter: FilterStageConfig::default(),
            mpca: MpcaOptions::default(),
            gat: GatConfig::default(),
            classifier: GridSearchOptions::default(),
            fusion: FusionStageConfig::default(),
            dca: DcaConfig::default(),
        }
    }
}

/// Independent stream for one consumer of the run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const STREAM_VALIDATION: u64 = 1;
pub(crate) const STREAM_GAT: u64 = 2;
pub(crate) const STREAM_CV: u64 = 3;

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Rewrites every nested seed from the run seed.
    pub fn resolve_seeds(&mut self) {
        self.synthetic.seed = self.seed;
        self.gat.seed = derive_seed(self.seed, STREAM_GAT);
        self.classifier.seed = derive_seed(self.seed, STREAM_CV);
    }

    pub fn validation_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_VALIDATION)
    }

    pub fn fusion_config(&self) -> FusionConfig {
        let mut mpca = self.mpca.clone();
        if !self.stages.mpca {
            // Without reduction the projections are full rank.
            mpca.variance_fraction = 1.0;
            mpca.target_dims = None;
        }
        FusionConfig {
            mpca,
            cv: self.classifier.clone(),
            combination: self.fusion.combination,
            fisher_in_folds: self.fusion.fisher_in_folds,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let split = &self.split;
        if !(0.0..=1.0).contains(&split.train_fraction) || !(0.0..1.0).contains(&split.validation_fraction) {
            return Err(PipelineError::Config("split fractions must lie in [0, 1]".into()));
        }
        if split.test_segments == 0 {
            return Err(PipelineError::Config("test_segments must be at least 1".into()));
        }
        if self.dca.thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(PipelineError::Config("DCA thresholds must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.seed = 11;
        c.stages.gat = false;
        c.fusion.plan = FusionPlan::new(Strategy::Late, &[Modality::Ehr]);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_tables_and_bad_values() {
        let c = RunConfig::from_toml(
            "seed = 3\n[stages]\ngat = false\n[fusion.plan]\nstrategy = \"late\"\nmodalities = [\"ehr\"]\n[filter]\nquantiles = 10\n",
        )
        .unwrap();
        assert!(!c.stages.gat && c.stages.fusion);
        assert_eq!(c.filter.filter.quantiles, 10);
        assert_eq!(c.fusion.plan.modalities, vec![Modality::Ehr]);
        assert!(RunConfig::from_toml("seed = \"x\"").is_err());
        let mut bad = RunConfig::default();
        bad.split.test_segments = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn derived_seeds_differ_and_repeat() {
        let mut a = RunConfig { seed: 5, ..Default::default() };
        a.resolve_seeds();
        let mut b = RunConfig { seed: 5, ..Default::default() };
        b.resolve_seeds();
        assert_eq!(a, b);
        assert_ne!(a.gat.seed, a.classifier.seed);
        assert_ne!(derive_seed(5, 1), derive_seed(6, 1));
    }
}
