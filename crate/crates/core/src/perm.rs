//! Permutation nulls for disease recognition and identity confounding.
//!
//! Disease recognition: the train/test split is fixed, labels are shuffled
//! subject-wise, the classifier is retrained and scored on the test side.
//! Identity confounding: feature rows are shuffled record-wise, and for each
//! shuffle the median of a fresh disease-recognition null is recorded. The
//! observed statistic is the median of the disease-recognition null on the
//! original features.
//!
//! Every iteration draws from its own derived stream, so the samples are
//! identical for any number of worker threads.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RecordDataset;
use crate::error::{Error, Result};
use crate::forest::{Classifier, ScoreModel};
use crate::metrics::{self, median, TieStructure};
use crate::seed::{Purpose, Seed};
use crate::shuffle::{self, has_both_classes, SplitIndexes, SplitStrategy};

/// Redraws allowed for one permutation whose shuffled labels leave a side
/// single-class.
pub const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LargerIsBetter,
    SmallerIsBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auc,
    /// Misclassification rate at a 0.5 probability cut-off.
    ErrorRate,
}

impl Metric {
    pub fn direction(self) -> Direction {
        match self {
            Metric::Auc => Direction::LargerIsBetter,
            Metric::ErrorRate => Direction::SmallerIsBetter,
        }
    }

    pub fn evaluate(self, scores: &[f64], labels: &[bool]) -> Result<f64> {
        match self {
            Metric::Auc => Ok(metrics::roc_auc(scores, labels)?.value()),
            Metric::ErrorRate => {
                if scores.len() != labels.len() || scores.is_empty() {
                    return Err(Error::InvalidParameter("score/label length mismatch".into()));
                }
                let wrong = scores
                    .iter()
                    .zip(labels)
                    .filter(|(&s, &y)| (s > 0.5) != y)
                    .count();
                Ok(wrong as f64 / scores.len() as f64)
            }
        }
    }

    /// Value expected from a classifier that guesses at random.
    pub fn baseline(self) -> f64 {
        0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermConfig {
    /// Label shuffles for the disease-recognition null.
    pub perms: usize,
    /// Label shuffles inside each feature shuffle of the identity-confounding null.
    pub label_perms: usize,
    /// Feature shuffles for the identity-confounding null.
    pub feature_perms: usize,
    pub metric: Metric,
    pub seed: Seed,
}

impl Default for PermConfig {
    fn default() -> Self {
        PermConfig {
            perms: 10_000,
            label_perms: 300,
            feature_perms: 1_000,
            metric: Metric::Auc,
            seed: Seed::new(0),
        }
    }
}

impl PermConfig {
    pub fn validate(&self) -> Result<()> {
        if self.perms == 0 || self.label_perms == 0 || self.feature_perms == 0 {
            return Err(Error::InvalidParameter(
                "permutation counts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullKind {
    DiseaseRecognition,
    IdentityConfounding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    pub kind: NullKind,
    /// One value per permutation, in permutation-index order.
    pub samples: Vec<f64>,
    pub observed: f64,
    pub direction: Direction,
    /// Number of samples at least as good as `observed`.
    pub exceedances: usize,
    /// `exceedances / samples.len()`.
    pub p_value: f64,
    /// `(exceedances + 1) / (samples.len() + 1)`.
    pub p_value_smoothed: f64,
    /// Permutations redrawn because a side became single-class.
    pub resamples: usize,
}

impl NullDistribution {
    fn new(kind: NullKind, samples: Vec<f64>, observed: f64, direction: Direction, resamples: usize) -> Self {
        let pv = permutation_pvalue(&samples, observed, direction);
        NullDistribution {
            kind,
            samples,
            observed,
            direction,
            exceedances: pv.exceedances,
            p_value: pv.p_value,
            p_value_smoothed: pv.smoothed,
            resamples,
        }
    }

    pub fn median(&self) -> f64 {
        median(&self.samples).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PValue {
    pub exceedances: usize,
    pub p_value: f64,
    pub smoothed: f64,
}

/// Share of null samples at least as good as the observed value (`>=` for
/// larger-is-better metrics, `<=` otherwise), plus the add-one variant.
pub fn permutation_pvalue(samples: &[f64], observed: f64, direction: Direction) -> PValue {
    let exceedances = samples
        .iter()
        .filter(|&&m| match direction {
            Direction::LargerIsBetter => m >= observed,
            Direction::SmallerIsBetter => m <= observed,
        })
        .count();
    let p = samples.len();
    PValue {
        exceedances,
        p_value: if p == 0 { f64::NAN } else { exceedances as f64 / p as f64 },
        smoothed: (exceedances + 1) as f64 / (p + 1) as f64,
    }
}

/// Test-set scores of the classifier trained on the original labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedRun {
    pub metric_value: f64,
    pub scores: Vec<f64>,
    pub test_labels: Vec<bool>,
    pub ties: TieStructure,
}

/// Callback receiving `(stage, completed, total)`.
pub type ProgressHook = Arc<dyn Fn(&str, usize, usize) + Send + Sync>;

/// Runs permutation nulls for one classifier, optionally on a dedicated
/// thread pool, honouring a cancellation flag between iterations.
pub struct PermEngine<C: Classifier> {
    classifier: C,
    pool: Option<Arc<rayon::ThreadPool>>,
    progress: Option<ProgressHook>,
    cancel: Arc<AtomicBool>,
}

/// Train/test feature blocks for a fixed split.
struct SplitData {
    x_train: Array2<f64>,
    x_test: Array2<f64>,
}

impl SplitData {
    fn new(features: &Array2<f64>, split: &SplitIndexes, row_map: Option<&[usize]>) -> Self {
        let pick = |rows: &[usize]| -> Array2<f64> {
            match row_map {
                Some(perm) => {
                    let mapped: Vec<usize> = rows.iter().map(|&r| perm[r]).collect();
                    features.select(Axis(0), &mapped)
                }
                None => features.select(Axis(0), rows),
            }
        };
        SplitData {
            x_train: pick(&split.train_rows),
            x_test: pick(&split.test_rows),
        }
    }
}

impl<C: Classifier> PermEngine<C> {
    pub fn new(classifier: C) -> Self {
        PermEngine {
            classifier,
            pool: None,
            progress: None,
            cancel: Arc::new(AtomicBool::new(false)),
        }
    }

    /// Caps worker threads; `0` uses the global rayon pool.
    pub fn with_threads(mut self, threads: usize) -> Result<Self> {
        if threads > 0 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            self.pool = Some(Arc::new(pool));
        } else {
            self.pool = None;
        }
        Ok(self)
    }

    pub fn with_progress(mut self, hook: ProgressHook) -> Self {
        self.progress = Some(hook);
        self
    }

    /// Shares a cancellation flag; setting it stops the run at the next iteration.
    pub fn with_cancel_flag(mut self, flag: Arc<AtomicBool>) -> Self {
        self.cancel = flag;
        self
    }

    pub fn cancel_flag(&self) -> Arc<AtomicBool> {
        self.cancel.clone()
    }

    pub fn classifier(&self) -> &C {
        &self.classifier
    }

    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }

    /// Maps `f` over `0..n` in parallel, keeping index order.
    fn par_indexed<T: Send>(&self, stage: &str, n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
        let done = AtomicUsize::new(0);
        self.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    if self.cancel.load(Ordering::Relaxed) {
                        return Err(Error::Cancelled);
                    }
                    let out = f(i)?;
                    let k = done.fetch_add(1, Ordering::Relaxed) + 1;
                    if let Some(hook) = &self.progress {
                        hook(stage, k, n);
                    }
                    Ok(out)
                })
                .collect()
        })
    }

    fn score(&self, data: &SplitData, y_train: &[bool], seed: Seed) -> Result<Vec<f64>> {
        let model = self.classifier.fit(data.x_train.view(), y_train, seed)?;
        model.predict_proba(data.x_test.view())
    }

    /// Fits on the original labels and scores the test side.
    pub fn observed_run(&self, ds: &RecordDataset, split: &SplitIndexes, cfg: &PermConfig) -> Result<ObservedRun> {
        split.validate(ds)?;
        let data = SplitData::new(ds.features(), split, None);
        let pick = |rows: &[usize]| rows.iter().map(|&r| ds.labels()[r]).collect::<Vec<bool>>();
        let (y_train, y_test) = (pick(&split.train_rows), pick(&split.test_rows));
        let scores = self.score(&data, &y_train, cfg.seed.derive(Purpose::Observed, 0))?;
        Ok(ObservedRun {
            metric_value: cfg.metric.evaluate(&scores, &y_test)?,
            ties: metrics::tie_structure(&scores, &y_test)?,
            scores,
            test_labels: y_test,
        })
    }

    /// One label-shuffled fit. Redraws the shuffle while either side is
    /// single-class; returns the metric and the number of redraws.
    fn label_permutation(
        &self,
        ds: &RecordDataset,
        split: &SplitIndexes,
        data: &SplitData,
        metric: Metric,
        seed: Seed,
        index: usize,
    ) -> Result<(f64, usize)> {
        for attempt in 0..=MAX_RESAMPLES {
            let y = shuffle::subject_wise_label_shuffle(
                ds,
                seed.derive2(Purpose::LabelShuffle, index as u64, attempt as u64),
            );
            if !has_both_classes(&y, &split.train_rows) || !has_both_classes(&y, &split.test_rows) {
                continue;
            }
            let y_train: Vec<bool> = split.train_rows.iter().map(|&r| y[r]).collect();
            let y_test: Vec<bool> = split.test_rows.iter().map(|&r| y[r]).collect();
            let scores = self.score(
                data,
                &y_train,
                seed.derive2(Purpose::Classifier, index as u64, attempt as u64),
            )?;
            return Ok((metric.evaluate(&scores, &y_test)?, attempt));
        }
        Err(Error::Degenerate {
            index,
            attempts: MAX_RESAMPLES + 1,
        })
    }

    fn label_null_samples(
        &self,
        ds: &RecordDataset,
        split: &SplitIndexes,
        data: &SplitData,
        n: usize,
        metric: Metric,
        seed: Seed,
        parallel: bool,
    ) -> Result<(Vec<f64>, usize)> {
        let run = |i: usize| self.label_permutation(ds, split, data, metric, seed, i);
        let out: Vec<(f64, usize)> = if parallel {
            self.par_indexed("disease-recognition", n, run)?
        } else {
            (0..n)
                .map(|i| {
                    if self.cancel.load(Ordering::Relaxed) {
                        Err(Error::Cancelled)
                    } else {
                        run(i)
                    }
                })
                .collect::<Result<_>>()?
        };
        let resamples = out.iter().map(|&(_, r)| r).sum();
        Ok((out.into_iter().map(|(m, _)| m).collect(), resamples))
    }

    /// Disease-recognition null: `cfg.perms` subject-wise label shuffles on a
    /// fixed split. The observed value comes from the unshuffled labels.
    pub fn disease_recognition_null(
        &self,
        ds: &RecordDataset,
        split: &SplitIndexes,
        cfg: &PermConfig,
    ) -> Result<NullDistribution> {
        let observed = self.observed_run(ds, split, cfg)?;
        self.disease_recognition_null_with(ds, split, cfg, observed.metric_value)
    }

    pub(crate) fn disease_recognition_null_with(
        &self,
        ds: &RecordDataset,
        split: &SplitIndexes,
        cfg: &PermConfig,
        observed: f64,
    ) -> Result<NullDistribution> {
        cfg.validate()?;
        split.validate(ds)?;
        let data = SplitData::new(ds.features(), split, None);
        let seed = cfg.seed.derive(Purpose::DiseaseTest, 0);
        let (samples, resamples) =
            self.label_null_samples(ds, split, &data, cfg.perms, cfg.metric, seed, true)?;
        if resamples > 0 {
            log::info!("disease-recognition null: {resamples} degenerate label shuffles redrawn");
        }
        Ok(NullDistribution::new(
            NullKind::DiseaseRecognition,
            samples,
            observed,
            cfg.metric.direction(),
            resamples,
        ))
    }

    /// Identity-confounding null: `cfg.feature_perms` record-wise feature
    /// shuffles, each summarised by the median of `cfg.label_perms` label
    /// shuffles. The observed statistic is the median of `disease_null`
    /// (computed here with `cfg.perms` shuffles when not supplied).
    pub fn identity_confounding_null(
        &self,
        ds: &RecordDataset,
        split: &SplitIndexes,
        cfg: &PermConfig,
        disease_null: Option<&NullDistribution>,
    ) -> Result<NullDistribution> {
        cfg.validate()?;
        split.validate(ds)?;
        if split.strategy == SplitStrategy::SubjectWise {
            log::warn!("subject-wise splits already neutralise identity confounding; running the test anyway");
        }
        let observed = match disease_null {
            Some(null) => null.median(),
            None => self.disease_recognition_null(ds, split, cfg)?.median(),
        };
        let seed = cfg.seed.derive(Purpose::IdentityTest, 0);
        let n = ds.n_records();
        let medians = self.par_indexed("identity-confounding", cfg.feature_perms, |j| {
            let perm = shuffle::row_permutation(n, seed.derive(Purpose::FeatureShuffle, j as u64));
            let data = SplitData::new(ds.features(), split, Some(&perm));
            let inner = seed.derive(Purpose::Replicate, j as u64);
            let (samples, resamples) =
                self.label_null_samples(ds, split, &data, cfg.label_perms, cfg.metric, inner, false)?;
            Ok((median(&samples).unwrap_or(f64::NAN), resamples))
        })?;
        let resamples = medians.iter().map(|&(_, r)| r).sum();
        Ok(NullDistribution::new(
            NullKind::IdentityConfounding,
            medians.into_iter().map(|(m, _)| m).collect(),
            observed,
            cfg.metric.direction(),
            resamples,
        ))
    }

    /// Repeats the disease-recognition test over `n_splits` independent
    /// splits. Failures are recorded per split; the run continues.
    pub fn multi_split(
        &self,
        ds: &RecordDataset,
        strategy: SplitStrategy,
        train_fraction: f64,
        n_splits: usize,
        cfg: &PermConfig,
    ) -> Result<Vec<SplitOutcome>> {
        if n_splits == 0 {
            return Err(Error::InvalidParameter("n_splits must be at least 1".into()));
        }
        Ok((0..n_splits)
            .map(|k| {
                let split_seed = cfg.seed.derive(Purpose::Split, k as u64);
                let run_cfg = PermConfig {
                    seed: cfg.seed.derive(Purpose::Replicate, k as u64),
                    ..*cfg
                };
                let result = shuffle::split(ds, strategy, train_fraction, split_seed)
                    .and_then(|split| self.disease_recognition_null(ds, &split, &run_cfg));
                match result {
                    Ok(null) => SplitOutcome {
                        split_id: k,
                        observed: Some(null.observed),
                        null_summary: Some(NullSummary::of(&null.samples)),
                        p_value: Some(null.p_value),
                        error: None,
                    },
                    Err(e) => SplitOutcome {
                        split_id: k,
                        observed: None,
                        null_summary: None,
                        p_value: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub split_id: usize,
    pub observed: Option<f64>,
    pub null_summary: Option<NullSummary>,
    pub p_value: Option<f64>,
    pub error: Option<String>,
}

/// Five-number summary plus mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl NullSummary {
    pub fn of(samples: &[f64]) -> Self {
        let mut v = samples.to_vec();
        v.sort_unstable_by(f64::total_cmp);
        NullSummary {
            min: v.first().copied().unwrap_or(f64::NAN),
            q1: quantile_sorted(&v, 0.25),
            median: median(&v).unwrap_or(f64::NAN),
            q3: quantile_sorted(&v, 0.75),
            max: v.last().copied().unwrap_or(f64::NAN),
            mean: v.iter().sum::<f64>() / v.len().max(1) as f64,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::schematic;
    use crate::forest::{ForestParams, RandomForest};

    #[test]
    fn pvalue_edge_cases() {
        let s = [0.1, 0.2, 0.3];
        let lb = Direction::LargerIsBetter;
        assert_eq!(permutation_pvalue(&s, 0.9, lb).p_value, 0.0);
        assert_eq!(permutation_pvalue(&s, 0.05, lb).p_value, 1.0);
        assert_eq!(permutation_pvalue(&[0.4; 4], 0.4, lb).p_value, 1.0);
        let pv = permutation_pvalue(&s, 0.2, lb);
        assert_eq!((pv.exceedances, pv.smoothed), (2, 0.75));
        let sb = Direction::SmallerIsBetter;
        assert_eq!(permutation_pvalue(&s, 0.2, sb).exceedances, 2);
        assert_eq!(permutation_pvalue(&s, 0.0, sb).p_value, 0.0);
    }

    #[test]
    fn error_rate_metric() {
        let m = Metric::ErrorRate;
        assert_eq!(m.evaluate(&[0.9, 0.1, 0.6, 0.4], &[true, false, false, false]).unwrap(), 0.25);
        assert_eq!(m.direction(), Direction::SmallerIsBetter);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        let s = NullSummary::of(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((s.min, s.median, s.max, s.mean), (1.0, 2.5, 4.0, 2.5));
    }

    fn small_engine() -> PermEngine<RandomForest> {
        PermEngine::new(RandomForest::new(ForestParams::with_trees(5)))
    }

    fn small_cfg(seed: u64) -> PermConfig {
        PermConfig {
            perms: 20,
            label_perms: 5,
            feature_perms: 4,
            metric: Metric::Auc,
            seed: Seed::new(seed),
        }
    }

    #[test]
    fn disease_null_has_configured_size_and_integral_pvalue() {
        let ds = schematic();
        let split = shuffle::record_wise_split(&ds, 0.5, Seed::new(2)).unwrap();
        let null = small_engine().disease_recognition_null(&ds, &split, &small_cfg(1)).unwrap();
        assert_eq!(null.samples.len(), 20);
        let k = null.p_value * 20.0;
        assert_eq!(k, k.round());
        assert_eq!(null.exceedances, null.samples.iter().filter(|&&m| m >= null.observed).count());
    }

    #[test]
    fn identity_null_has_configured_size() {
        let ds = schematic();
        let split = shuffle::record_wise_split(&ds, 0.5, Seed::new(2)).unwrap();
        let eng = small_engine();
        let cfg = small_cfg(3);
        let dr = eng.disease_recognition_null(&ds, &split, &cfg).unwrap();
        let ic = eng.identity_confounding_null(&ds, &split, &cfg, Some(&dr)).unwrap();
        assert_eq!(ic.samples.len(), 4);
        assert_eq!(ic.observed, dr.median());
        assert_eq!(ic.kind, NullKind::IdentityConfounding);
    }

    #[test]
    fn thread_count_does_not_change_samples() {
        let ds = schematic();
        let split = shuffle::subject_wise_split(&ds, 0.5, Seed::new(4), true).unwrap();
        let cfg = small_cfg(9);
        let one = small_engine().with_threads(1).unwrap();
        let four = small_engine().with_threads(4).unwrap();
        let a = one.disease_recognition_null(&ds, &split, &cfg).unwrap();
        let b = four.disease_recognition_null(&ds, &split, &cfg).unwrap();
        assert_eq!(a, b);
        let a = one.identity_confounding_null(&ds, &split, &cfg, None).unwrap();
        let b = four.identity_confounding_null(&ds, &split, &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cancelled_engine_stops() {
        let ds = schematic();
        let split = shuffle::record_wise_split(&ds, 0.5, Seed::new(2)).unwrap();
        let eng = small_engine();
        eng.cancel_flag().store(true, Ordering::Relaxed);
        let err = eng.disease_recognition_null(&ds, &split, &small_cfg(1)).unwrap_err();
        assert!(matches!(err, Error::Cancelled));
    }

    #[test]
    fn progress_hook_sees_every_iteration() {
        let ds = schematic();
        let split = shuffle::record_wise_split(&ds, 0.5, Seed::new(2)).unwrap();
        let seen = Arc::new(AtomicUsize::new(0));
        let s2 = seen.clone();
        let eng = small_engine().with_progress(Arc::new(move |_, _, total| {
            assert_eq!(total, 20);
            s2.fetch_add(1, Ordering::Relaxed);
        }));
        eng.disease_recognition_null(&ds, &split, &small_cfg(1)).unwrap();
        assert_eq!(seen.load(Ordering::Relaxed), 20);
    }

    #[test]
    fn multi_split_single_split_matches_direct_run() {
        let ds = schematic();
        let cfg = small_cfg(5);
        let eng = small_engine();
        let outcomes = eng.multi_split(&ds, SplitStrategy::RecordWise, 0.5, 1, &cfg).unwrap();
        assert_eq!(outcomes.len(), 1);
        let split = shuffle::split(&ds, SplitStrategy::RecordWise, 0.5, cfg.seed.derive(Purpose::Split, 0)).unwrap();
        let direct = eng
            .disease_recognition_null(
                &ds,
                &split,
                &PermConfig {
                    seed: cfg.seed.derive(Purpose::Replicate, 0),
                    ..cfg
                },
            )
            .unwrap();
        assert_eq!(outcomes[0].p_value, Some(direct.p_value));
        assert_eq!(outcomes[0].observed, Some(direct.observed));
        assert!(eng.multi_split(&ds, SplitStrategy::RecordWise, 0.5, 0, &cfg).is_err());
    }
}
