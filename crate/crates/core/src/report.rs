//! Machine-readable run reports.
//!
//! A report carries the dataset summary, every setting needed to rerun the
//! analysis, and for each split the observed metric, ROC points, null
//! distributions (in full, or as a histogram plus quantiles when large) and
//! the normal-approximation p-values.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSummary, RecordDataset};
use crate::error::Result;
use crate::forest::ForestParams;
use crate::metrics::{self, TieStructure};
use crate::perm::{Direction, Metric, NullDistribution, NullKind, NullSummary, quantile_sorted};
use crate::seed::Seed;
use crate::shuffle::{SplitIndexes, SplitStrategy};
use crate::workflow::{Analysis, AnalyticP, LadderExit, Recommendation, TestSelection};

pub const SCHEMA_VERSION: &str = "1.0";

/// JSON schema for [`TestReport`].
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

/// Null samples are embedded in full up to this many values.
pub const FULL_SAMPLE_LIMIT: usize = 10_000;
pub const HISTOGRAM_BINS: usize = 1_000;
pub const REPORT_QUANTILES: [f64; 9] = [0.01, 0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975, 0.99];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        ToolInfo {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// Everything that determines the numbers in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seed: Seed,
    pub strategy: Option<SplitStrategy>,
    pub train_fraction: f64,
    pub perms: usize,
    pub label_perms: usize,
    pub feature_perms: usize,
    pub metric: Metric,
    pub tests: TestSelection,
    pub alpha: f64,
    pub recommend: bool,
    pub forest: ForestParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDescriptor {
    pub strategy: SplitStrategy,
    pub train_records: usize,
    pub test_records: usize,
    pub train_subjects: usize,
    pub test_subjects: usize,
}

impl SplitDescriptor {
    pub fn of(ds: &RecordDataset, split: &SplitIndexes) -> Self {
        let count = |rows: &[usize]| {
            let mut seen = vec![false; ds.n_subjects()];
            rows.iter().for_each(|&r| seen[ds.subject_of_row()[r]] = true);
            seen.iter().filter(|&&s| s).count()
        };
        SplitDescriptor {
            strategy: split.strategy,
            train_records: split.train_rows.len(),
            test_records: split.test_rows.len(),
            train_subjects: count(&split.train_rows),
            test_subjects: count(&split.test_rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; the last bin is closed.
    pub fn new(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0u64; bins.max(1)];
        let width = (hi - lo) / counts.len() as f64;
        for &v in values {
            let b = if width > 0.0 {
                (((v - lo) / width) as usize).min(counts.len() - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Histogram { lo, hi, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullReport {
    pub kind: NullKind,
    pub direction: Direction,
    pub observed: f64,
    pub median: f64,
    pub p_value: f64,
    pub p_value_smoothed: f64,
    pub exceedances: usize,
    pub n_samples: usize,
    pub resamples: usize,
    pub summary: NullSummary,
    /// `(level, value)` pairs.
    pub quantiles: Vec<(f64, f64)>,
    pub samples: Option<Vec<f64>>,
    pub histogram: Option<Histogram>,
}

impl NullReport {
    pub fn new(null: &NullDistribution) -> Self {
        let mut sorted = null.samples.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let full = null.samples.len() <= FULL_SAMPLE_LIMIT;
        NullReport {
            kind: null.kind,
            direction: null.direction,
            observed: null.observed,
            median: null.median(),
            p_value: null.p_value,
            p_value_smoothed: null.p_value_smoothed,
            exceedances: null.exceedances,
            n_samples: null.samples.len(),
            resamples: null.resamples,
            summary: NullSummary::of(&null.samples),
            quantiles: REPORT_QUANTILES
                .iter()
                .map(|&q| (q, quantile_sorted(&sorted, q)))
                .collect(),
            samples: full.then(|| null.samples.clone()),
            histogram: (!full).then(|| Histogram::new(&null.samples, HISTOGRAM_BINS)),
        }
    }
}

/// Test-set class counts and ties, with the normal null they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetReport {
    pub negatives: usize,
    pub positives: usize,
    pub tie_groups: Vec<usize>,
    /// Mean and variance of the normal AUC null.
    pub null_mean: f64,
    pub null_variance: Option<f64>,
}

impl TestSetReport {
    fn new(ties: &TieStructure) -> Self {
        TestSetReport {
            negatives: ties.n_neg,
            positives: ties.n_pos,
            tie_groups: ties.tie_group_sizes.clone(),
            null_mean: 0.5,
            null_variance: metrics::phi_squared(ties).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: SplitDescriptor,
    pub metric: Metric,
    pub observed: f64,
    pub roc_points: Vec<(f64, f64)>,
    pub test_set: TestSetReport,
    pub disease_recognition: Option<NullReport>,
    pub identity_confounding: Option<NullReport>,
    pub pseudo_p: Option<AnalyticP>,
    pub analytic_p: Option<AnalyticP>,
}

impl SplitReport {
    pub fn new(ds: &RecordDataset, a: &Analysis, metric: Metric) -> Result<Self> {
        Ok(SplitReport {
            split: SplitDescriptor::of(ds, &a.split),
            metric,
            observed: a.observed.metric_value,
            roc_points: metrics::roc_points(&a.observed.scores, &a.observed.test_labels)?,
            test_set: TestSetReport::new(&a.observed.ties),
            disease_recognition: a.disease_recognition.as_ref().map(NullReport::new),
            identity_confounding: a.identity_confounding.as_ref().map(NullReport::new),
            pseudo_p: a.pseudo,
            analytic_p: a.analytic,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationReport {
    pub alpha: f64,
    pub exit: LadderExit,
    pub recommended: SplitStrategy,
    pub pseudo_permutation_disagree: bool,
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub schema_version: String,
    pub tool: ToolInfo,
    pub dataset: DatasetSummary,
    pub settings: RunSettings,
    pub runs: Vec<SplitReport>,
    pub recommendation: Option<RecommendationReport>,
}

impl TestReport {
    pub fn from_analysis(ds: &RecordDataset, settings: RunSettings, a: &Analysis) -> Result<Self> {
        Ok(TestReport {
            schema_version: SCHEMA_VERSION.into(),
            tool: ToolInfo::default(),
            dataset: ds.summarize(),
            runs: vec![SplitReport::new(ds, a, settings.metric)?],
            settings,
            recommendation: None,
        })
    }

    pub fn from_recommendation(ds: &RecordDataset, settings: RunSettings, r: &Recommendation) -> Result<Self> {
        let mut runs = vec![SplitReport::new(ds, &r.record_wise, settings.metric)?];
        if let Some(sub) = &r.subject_wise {
            runs.push(SplitReport::new(ds, sub, settings.metric)?);
        }
        Ok(TestReport {
            schema_version: SCHEMA_VERSION.into(),
            tool: ToolInfo::default(),
            dataset: ds.summarize(),
            settings,
            runs,
            recommendation: Some(RecommendationReport {
                alpha: r.alpha,
                exit: r.exit,
                recommended: r.recommended,
                pseudo_permutation_disagree: r.pseudo_permutation_disagree,
                steps: r.steps.clone(),
            }),
        })
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// Long-format null samples: `split,test,index,value`. Nulls stored as a
    /// histogram are skipped.
    pub fn write_null_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["split", "test", "index", "value"])?;
        for run in &self.runs {
            for null in [&run.disease_recognition, &run.identity_confounding].into_iter().flatten() {
                let kind = match null.kind {
                    NullKind::DiseaseRecognition => "disease_recognition",
                    NullKind::IdentityConfounding => "identity_confounding",
                };
                for (i, v) in null.samples.iter().flatten().enumerate() {
                    w.write_record([run.split.strategy.name(), kind, &i.to_string(), &format!("{v:?}")])?;
                }
            }
        }
        w.flush().map_err(|e| crate::error::Error::io("<csv output>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn null_of(samples: Vec<f64>) -> NullDistribution {
        NullDistribution {
            kind: NullKind::DiseaseRecognition,
            observed: 0.7,
            direction: Direction::LargerIsBetter,
            exceedances: 0,
            p_value: 0.0,
            p_value_smoothed: 0.0,
            resamples: 0,
            samples,
        }
    }

    #[test]
    fn small_nulls_are_embedded() {
        let r = NullReport::new(&null_of(vec![0.5, 0.4, 0.6]));
        assert_eq!(r.samples.as_deref(), Some(&[0.5, 0.4, 0.6][..]));
        assert!(r.histogram.is_none());
        assert_eq!(r.median, 0.5);
    }

    #[test]
    fn large_nulls_become_histograms() {
        let v: Vec<f64> = (0..FULL_SAMPLE_LIMIT + 1).map(|i| i as f64 / 10_000.0).collect();
        let r = NullReport::new(&null_of(v));
        assert!(r.samples.is_none());
        let h = r.histogram.unwrap();
        assert_eq!(h.counts.len(), HISTOGRAM_BINS);
        assert_eq!(h.counts.iter().sum::<u64>(), FULL_SAMPLE_LIMIT as u64 + 1);
        assert_eq!((h.lo, h.hi), (0.0, 1.0));
        assert_eq!(r.quantiles.len(), REPORT_QUANTILES.len());
    }

    #[test]
    fn constant_histogram() {
        let h = Histogram::new(&[0.5; 4], 10);
        assert_eq!(h.counts[0], 4);
    }
}
