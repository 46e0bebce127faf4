//! Transfer-matrix experiments: temporal splits, the train-on-one /
//! evaluate-on-all matrix, the static-feature ablation and report output.

mod matrix;
mod report;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::{Store, VariableId};
use crate::grid::RegionId;
use crate::hours::HourRange;
use crate::model::ModelConfig;
use crate::preprocess::StatsScope;

pub use matrix::{
    load_results, run_ablation, run_matrix, transfer_properties, AblationRun, Cell, CellStatus, MatrixRun, RunOptions,
    TransferMatrix, TransferProperties, Winner, FAILURE_FACTOR, JOURNAL_FILE,
};
pub use report::{emit_report, render_map, ReportSummary, VariantSummary, MAP_LOG10_RANGE};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("store covers {have}, split needs {need}")]
    CoverageGap { need: HourRange, have: HourRange },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("journal {path} line {line}: {reason}")]
    Journal { path: PathBuf, line: usize, reason: String },
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Store(#[from] crate::datastore::StoreError),
    #[error(transparent)]
    Preprocess(#[from] crate::preprocess::PreprocessError),
    #[error(transparent)]
    Verify(#[from] crate::verify::VerifyError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Baseline(#[from] crate::baseline::BaselineError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ExperimentError {
    let path = path.into();
    move |source| ExperimentError::Io { path, source }
}

/// How the store's hours are divided into train, validation and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Inclusive calendar-year spans; they must be contiguous.
    Years {
        train: [i32; 2],
        val: [i32; 2],
        test: [i32; 2],
    },
    /// Fractions of the store's coverage; the test split takes the rest.
    Proportional { train: f64, val: f64 },
}

impl SplitSpec {
    /// 2001-2018 / 2019-2020 / 2021-2022.
    pub fn paper() -> Self {
        SplitSpec::Years {
            train: [2001, 2018],
            val: [2019, 2020],
            test: [2021, 2022],
        }
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Proportional { train: 0.8, val: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: HourRange,
    pub val: HourRange,
    pub test: HourRange,
}

impl Splits {
    pub fn span(&self) -> HourRange {
        HourRange::new(self.train.start, self.test.end)
    }
}

/// Static-input flags at training and inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub train_geo: bool,
    pub infer_geo: bool,
}

impl Ablation {
    pub fn geo(on: bool) -> Self {
        Self {
            train_geo: on,
            infer_geo: on,
        }
    }

    /// Label used in journal entries and file names.
    pub fn variant(&self) -> &'static str {
        if self.train_geo {
            "geo"
        } else {
            "nogeo"
        }
    }
}

impl Default for Ablation {
    fn default() -> Self {
        Self::geo(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub train_regions: Vec<RegionId>,
    pub eval_regions: Vec<RegionId>,
    pub split: SplitSpec,
    pub ablation: Ablation,
    pub members: usize,
    pub seed: u64,
    pub model: ModelConfig,
    /// Normalization statistics are computed over the training hours of
    /// this scope.
    pub stats_scope: StatsScope,
    /// Training regions processed concurrently.
    pub workers: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            train_regions: RegionId::ATOMIC.iter().chain(&RegionId::COMPOSITE).copied().collect(),
            eval_regions: RegionId::ATOMIC.to_vec(),
            split: SplitSpec::default(),
            ablation: Ablation::default(),
            members: 8,
            seed: 0,
            model: ModelConfig::desk(),
            stats_scope: StatsScope::FullDomain,
            workers: 1,
        }
    }
}

impl ExperimentPlan {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let plan: Self =
            serde_json::from_str(&text).map_err(|e| ExperimentError::Plan(format!("{}: {e}", path.display())))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Plan(m));
        if self.train_regions.is_empty() || self.eval_regions.is_empty() {
            return bad("train and eval regions must be non-empty".into());
        }
        if let Some(r) = self.eval_regions.iter().find(|r| !r.is_atomic()) {
            return bad(format!("eval region {r} is not atomic"));
        }
        for list in [&self.train_regions, &self.eval_regions] {
            let mut seen = list.clone();
            seen.sort();
            seen.dedup();
            if seen.len() != list.len() {
                return bad("duplicate region in plan".into());
            }
        }
        if self.ablation.train_geo != self.ablation.infer_geo {
            return bad("infer_geo must equal train_geo".into());
        }
        if self.members == 0 || self.workers == 0 {
            return bad("members and workers must be positive".into());
        }
        self.model.validate()?;
        Ok(())
    }

    /// The model config with the plan's seed and static-input flag applied.
    pub fn model_config(&self) -> ModelConfig {
        let mut c = self.model.clone().with_static_inputs(self.ablation.train_geo);
        c.train.seed = self.seed;
        c
    }
}

/// Hours covered by the target and every predictor.
pub fn store_coverage(store: &Store) -> Option<HourRange> {
    VariableId::PREDICTORS
        .into_iter()
        .chain([VariableId::TargetPrecip])
        .map(|v| store.coverage(v, 0))
        .try_fold(None::<HourRange>, |acc, c| {
            let c = c?;
            Some(Some(acc.map_or(c, |a| a.intersect(&c))))
        })
        .flatten()
}

/// Three disjoint, contiguous ranges over the configured span of `coverage`.
pub fn temporal_split(spec: &SplitSpec, coverage: HourRange) -> Result<Splits> {
    let splits = match *spec {
        SplitSpec::Years { train, val, test } => {
            let s = Splits {
                train: HourRange::years(train[0], train[1]),
                val: HourRange::years(val[0], val[1]),
                test: HourRange::years(test[0], test[1]),
            };
            if s.train.end != s.val.start || s.val.end != s.test.start {
                return Err(ExperimentError::Plan("year splits must be contiguous".into()));
            }
            if !coverage.covers(&s.span()) {
                return Err(ExperimentError::CoverageGap {
                    need: s.span(),
                    have: coverage,
                });
            }
            s
        }
        SplitSpec::Proportional { train, val } => {
            if !(train > 0.0 && val > 0.0 && train + val < 1.0) {
                return Err(ExperimentError::Plan(format!("bad split fractions {train}/{val}")));
            }
            let n = coverage.len() as f64;
            let a = coverage.start + (n * train).round() as i64;
            let b = a + (n * val).round() as i64;
            Splits {
                train: HourRange::new(coverage.start, a),
                val: HourRange::new(a, b),
                test: HourRange::new(b, coverage.end),
            }
        }
    };
    if [splits.train, splits.val, splits.test].iter().any(HourRange::is_empty) {
        return Err(ExperimentError::CoverageGap {
            need: splits.span(),
            have: coverage,
        });
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hours::{from_ymdh, year_start};

    #[test]
    fn paper_split_boundaries() {
        let cov = HourRange::years(2001, 2022);
        let s = temporal_split(&SplitSpec::paper(), cov).unwrap();
        assert_eq!(s.train.end - 1, from_ymdh(2018, 12, 31, 23));
        assert_eq!(s.val.start, from_ymdh(2019, 1, 1, 0));
        assert_eq!(s.test.end, year_start(2023));
        assert_eq!(s.span(), cov);
        let short = HourRange::years(2001, 2021);
        assert!(matches!(
            temporal_split(&SplitSpec::paper(), short),
            Err(ExperimentError::CoverageGap { .. })
        ));
    }

    #[test]
    fn proportional_split() {
        let s = temporal_split(&SplitSpec::default(), HourRange::new(1000, 1100)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        assert!(s.train.intersect(&s.val).is_empty() && s.val.intersect(&s.test).is_empty());
        assert!(temporal_split(&SplitSpec::default(), HourRange::new(0, 3)).is_err());
    }

    #[test]
    fn plan_validation() {
        let mut p = ExperimentPlan::default();
        p.validate().unwrap();
        assert_eq!(p.train_regions.len(), 15);
        p.ablation.infer_geo = false;
        assert!(p.validate().is_err());
        let p = ExperimentPlan {
            eval_regions: vec![RegionId::N],
            ..ExperimentPlan::default()
        };
        assert!(p.validate().is_err());
        let json = serde_json::to_string(&ExperimentPlan::default()).unwrap();
        assert_eq!(
            serde_json::from_str::<ExperimentPlan>(&json).unwrap(),
            ExperimentPlan::default()
        );
    }
}
