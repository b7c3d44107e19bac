//! Type-I calibration on simulated null data.
//!
//! Datasets follow `c·V + d·E` (no disease and no identity signal), with
//! `c`, `d`, cohort sizes and records per subject taken from a Latin
//! hypercube over the parameter box. Each dataset is tested under both
//! split strategies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::Classifier;
use crate::perm::{Metric, PermConfig, PermEngine};
use crate::seed::{Purpose, Seed};
use crate::shuffle::SplitStrategy;
use crate::sim::lhs::{latin_hypercube, unit_to_int, unit_to_range};
use crate::sim::model::{simulate_dataset, SimSpec};
use crate::workflow::{analyze, TestSelection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub coef: (f64, f64),
    pub cases: (usize, usize),
    pub controls: (usize, usize),
    pub records: (usize, usize),
}

impl Default for ParameterBox {
    fn default() -> Self {
        ParameterBox {
            coef: (0.1, 2.0),
            cases: (5, 10),
            controls: (5, 10),
            records: (10, 20),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullStudyConfig {
    pub n_datasets: usize,
    /// Disease-recognition shuffles, and feature shuffles for the
    /// identity-confounding test.
    pub perms: usize,
    /// Label shuffles inside each feature shuffle.
    pub label_perms: usize,
    pub train_fraction: f64,
    pub seed: Seed,
    pub space: ParameterBox,
}

impl NullStudyConfig {
    pub fn new(n_datasets: usize, perms: usize, seed: Seed) -> Self {
        NullStudyConfig {
            n_datasets,
            perms,
            label_perms: perms,
            train_fraction: 0.5,
            seed,
            space: ParameterBox::default(),
        }
    }
}

/// One dataset's generating parameters. Every subject in the dataset has
/// `records` records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub c: f64,
    pub d: f64,
    pub n_cases: usize,
    pub n_controls: usize,
    pub records: usize,
}

impl DesignPoint {
    pub fn spec(&self) -> SimSpec {
        SimSpec {
            n_cases: self.n_cases,
            n_controls: self.n_controls,
            min_records: self.records,
            max_records: self.records,
            c: self.c,
            d: self.d,
            ..SimSpec::default()
        }
    }
}

pub fn design(n_datasets: usize, space: &ParameterBox, seed: Seed) -> Vec<DesignPoint> {
    let u = latin_hypercube(n_datasets, 5, &mut seed.derive(Purpose::Design, 0).rng());
    u.rows()
        .into_iter()
        .map(|r| DesignPoint {
            c: unit_to_range(r[0], space.coef.0, space.coef.1),
            d: unit_to_range(r[1], space.coef.0, space.coef.1),
            n_cases: unit_to_int(r[2], space.cases.0, space.cases.1),
            n_controls: unit_to_int(r[3], space.controls.0, space.controls.1),
            records: unit_to_int(r[4], space.records.0, space.records.1),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PTest {
    DiseaseRecognition,
    IdentityConfounding,
    Pseudo,
    Analytic,
}

impl PTest {
    pub const ALL: [PTest; 4] = [
        PTest::DiseaseRecognition,
        PTest::IdentityConfounding,
        PTest::Pseudo,
        PTest::Analytic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PTest::DiseaseRecognition => "disease_recognition",
            PTest::IdentityConfounding => "identity_confounding",
            PTest::Pseudo => "pseudo",
            PTest::Analytic => "analytic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub dataset: usize,
    pub strategy: SplitStrategy,
    pub test: PTest,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullStudy {
    pub config: NullStudyConfig,
    pub design: Vec<DesignPoint>,
    pub rows: Vec<CalibrationRow>,
    /// `(dataset, strategy, message)` for runs that failed.
    pub failures: Vec<(usize, SplitStrategy, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformitySummary {
    pub strategy: SplitStrategy,
    pub test: PTest,
    pub count: usize,
    /// `(level, fraction of p-values below level)`.
    pub below: Vec<(f64, f64)>,
    pub median: f64,
}

pub const SUMMARY_LEVELS: [f64; 3] = [0.01, 0.05, 0.1];

impl NullStudy {
    pub fn p_values(&self, strategy: SplitStrategy, test: PTest) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.strategy == strategy && r.test == test)
            .map(|r| r.p_value)
            .collect()
    }

    pub fn fraction_below(&self, strategy: SplitStrategy, test: PTest, level: f64) -> f64 {
        let p = self.p_values(strategy, test);
        p.iter().filter(|&&v| v < level).count() as f64 / p.len().max(1) as f64
    }

    pub fn summary(&self) -> Vec<UniformitySummary> {
        let mut out = Vec::new();
        for strategy in [SplitStrategy::RecordWise, SplitStrategy::SubjectWise] {
            for test in PTest::ALL {
                let p = self.p_values(strategy, test);
                if p.is_empty() {
                    continue;
                }
                out.push(UniformitySummary {
                    strategy,
                    test,
                    count: p.len(),
                    below: SUMMARY_LEVELS
                        .iter()
                        .map(|&l| (l, self.fraction_below(strategy, test, l)))
                        .collect(),
                    median: crate::metrics::median(&p).unwrap_or(f64::NAN),
                });
            }
        }
        out
    }
}

/// Runs both tests under both split strategies on every design point.
/// Failures are recorded and the study continues.
pub fn null_study<C: Classifier>(engine: &PermEngine<C>, cfg: &NullStudyConfig) -> Result<NullStudy> {
    if cfg.n_datasets == 0 || cfg.perms == 0 || cfg.label_perms == 0 {
        return Err(Error::InvalidParameter(
            "datasets and permutation counts must be at least 1".into(),
        ));
    }
    let points = design(cfg.n_datasets, &cfg.space, cfg.seed);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (k, point) in points.iter().enumerate() {
        let ds = match simulate_dataset(&point.spec(), cfg.seed.derive(Purpose::Dataset, k as u64)) {
            Ok(ds) => ds,
            Err(e) => {
                for s in [SplitStrategy::RecordWise, SplitStrategy::SubjectWise] {
                    failures.push((k, s, e.to_string()));
                }
                continue;
            }
        };
        for (si, strategy) in [SplitStrategy::RecordWise, SplitStrategy::SubjectWise].into_iter().enumerate() {
            let perm_cfg = PermConfig {
                perms: cfg.perms,
                label_perms: cfg.label_perms,
                feature_perms: cfg.perms,
                metric: Metric::Auc,
                seed: cfg.seed.derive2(Purpose::Replicate, k as u64, si as u64),
            };
            match analyze(engine, &ds, strategy, cfg.train_fraction, TestSelection::BOTH, &perm_cfg) {
                Ok(a) => {
                    let mut push = |test, p_value| {
                        rows.push(CalibrationRow {
                            dataset: k,
                            strategy,
                            test,
                            p_value,
                        })
                    };
                    if let Some(n) = &a.disease_recognition {
                        push(PTest::DiseaseRecognition, n.p_value);
                    }
                    if let Some(n) = &a.identity_confounding {
                        push(PTest::IdentityConfounding, n.p_value);
                    }
                    if let Some(p) = a.pseudo {
                        push(PTest::Pseudo, p.p_value);
                    }
                    if let Some(p) = a.analytic {
                        push(PTest::Analytic, p.p_value);
                    }
                }
                Err(Error::Cancelled) => return Err(Error::Cancelled),
                Err(e) => {
                    log::warn!("dataset {k} ({}): {e}", strategy.name());
                    failures.push((k, strategy, e.to_string()));
                }
            }
        }
        log::info!("null study: dataset {}/{} done", k + 1, cfg.n_datasets);
    }
    Ok(NullStudy {
        config: *cfg,
        design: points,
        rows,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{ForestParams, RandomForest};

    #[test]
    fn design_respects_box() {
        let pts = design(50, &ParameterBox::default(), Seed::new(3));
        assert_eq!(pts.len(), 50);
        for p in &pts {
            assert!((0.1..=2.0).contains(&p.c) && (0.1..=2.0).contains(&p.d));
            assert!((5..=10).contains(&p.n_cases) && (5..=10).contains(&p.n_controls));
            assert!((10..=20).contains(&p.records));
        }
        let spec = pts[0].spec();
        assert_eq!((spec.a, spec.b), (0.0, 0.0));
    }

    #[test]
    fn tiny_study_produces_all_rows() {
        let eng = PermEngine::new(RandomForest::new(ForestParams::with_trees(5)));
        let mut cfg = NullStudyConfig::new(2, 4, Seed::new(1));
        cfg.label_perms = 2;
        cfg.space.records = (3, 4);
        let study = null_study(&eng, &cfg).unwrap();
        assert!(study.failures.is_empty(), "{:?}", study.failures);
        assert_eq!(study.rows.len(), 2 * 2 * 4);
        assert!(study.rows.iter().all(|r| (0.0..=1.0).contains(&r.p_value)));
        let summary = study.summary();
        assert_eq!(summary.len(), 8);
        assert!(null_study(&eng, &NullStudyConfig::new(0, 4, Seed::new(1))).is_err());
    }
}
