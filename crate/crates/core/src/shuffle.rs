//! Train/test splits and the two permutation schemes.
//!
//! * record-wise split: rows are assigned to train/test irrespective of subject.
//! * subject-wise split: every subject's rows land on exactly one side.
//! * subject-wise label shuffle: permutes subject-level labels, keeping each
//!   subject's records on a single label.
//! * record-wise feature shuffle: permutes whole feature rows, breaking the
//!   link between features and both subjects and labels.

use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::RecordDataset;
use crate::error::{Error, Result};
use crate::seed::{Purpose, Seed};

/// Number of redraws before a split that leaves one side single-class is an error.
pub const MAX_SPLIT_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    RecordWise,
    SubjectWise,
}

impl SplitStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SplitStrategy::RecordWise => "record",
            SplitStrategy::SubjectWise => "subject",
        }
    }
}

impl std::str::FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "record" | "record-wise" | "record_wise" => Ok(SplitStrategy::RecordWise),
            "subject" | "subject-wise" | "subject_wise" => Ok(SplitStrategy::SubjectWise),
            other => Err(Error::InvalidParameter(format!("unknown split strategy '{other}'"))),
        }
    }
}

/// Disjoint sorted train/test row sets covering every row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndexes {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub strategy: SplitStrategy,
}

impl SplitIndexes {
    /// Checks the split invariants against `ds`.
    pub fn validate(&self, ds: &RecordDataset) -> Result<()> {
        let n = ds.n_records();
        let mut side = vec![0u8; n];
        for (rows, tag) in [(&self.train_rows, 1u8), (&self.test_rows, 2u8)] {
            for &r in rows {
                if r >= n {
                    return Err(Error::Split(format!("row {r} out of range")));
                }
                if side[r] != 0 {
                    return Err(Error::Split(format!("row {r} assigned twice")));
                }
                side[r] = tag;
            }
        }
        if side.contains(&0) {
            return Err(Error::Split("split does not cover every row".into()));
        }
        if !has_both_classes(ds.labels(), &self.train_rows)
            || !has_both_classes(ds.labels(), &self.test_rows)
        {
            return Err(Error::Split("each side needs both classes".into()));
        }
        if self.strategy == SplitStrategy::SubjectWise {
            for s in ds.subjects() {
                let first = side[s.rows[0]];
                if s.rows.iter().any(|&r| side[r] != first) {
                    return Err(Error::Split(format!("subject '{}' on both sides", s.id)));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn has_both_classes(labels: &[bool], rows: &[usize]) -> bool {
    let pos = rows.iter().filter(|&&r| labels[r]).count();
    pos > 0 && pos < rows.len()
}

fn check_fraction(train_fraction: f64) -> Result<()> {
    if train_fraction > 0.0 && train_fraction < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )))
    }
}

fn complement(n: usize, mut train: Vec<usize>, strategy: SplitStrategy) -> SplitIndexes {
    train.sort_unstable();
    let mut in_train = vec![false; n];
    for &r in &train {
        in_train[r] = true;
    }
    let test = (0..n).filter(|&r| !in_train[r]).collect();
    SplitIndexes {
        train_rows: train,
        test_rows: test,
        strategy,
    }
}

/// Samples `round(train_fraction * n)` rows uniformly without replacement.
/// Redraws (up to [`MAX_SPLIT_RETRIES`]) when a side ends up single-class.
pub fn record_wise_split(ds: &RecordDataset, train_fraction: f64, seed: Seed) -> Result<SplitIndexes> {
    check_fraction(train_fraction)?;
    let n = ds.n_records();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Split(format!(
            "train fraction {train_fraction} leaves an empty side with {n} records"
        )));
    }
    for attempt in 0..MAX_SPLIT_RETRIES {
        let mut rng = seed.derive(Purpose::Split, attempt as u64).rng();
        let train = index::sample(&mut rng, n, n_train).into_vec();
        let split = complement(n, train, SplitStrategy::RecordWise);
        if has_both_classes(ds.labels(), &split.train_rows)
            && has_both_classes(ds.labels(), &split.test_rows)
        {
            return Ok(split);
        }
    }
    Err(Error::Split(format!(
        "no two-class record-wise split found in {MAX_SPLIT_RETRIES} draws"
    )))
}

/// Per-class number of training subjects: largest-remainder apportionment of
/// `round(train_fraction * total)` with random tie-breaks, then clamped so
/// each side keeps at least one subject of every class.
fn stratified_quotas(class_sizes: [usize; 2], train_fraction: f64, rng: &mut impl Rng) -> Result<[usize; 2]> {
    if class_sizes.iter().any(|&c| c < 2) {
        return Err(Error::Split(format!(
            "stratified subject-wise split needs at least 2 subjects per class, got {class_sizes:?}"
        )));
    }
    let total: usize = class_sizes.iter().sum();
    let target = (train_fraction * total as f64).round() as usize;
    let exact = class_sizes.map(|c| train_fraction * c as f64);
    let mut quota = exact.map(|q| q.floor() as usize);
    let rem = [exact[0] - exact[0].floor(), exact[1] - exact[1].floor()];
    let mut missing = target.saturating_sub(quota[0] + quota[1]);
    while missing > 0 {
        let pick = if rem[0] > rem[1] {
            0
        } else if rem[1] > rem[0] {
            1
        } else {
            rng.random_range(0..2)
        };
        // Never give one class more than one extra seat.
        if quota[pick] as f64 >= exact[pick].ceil() {
            quota[1 - pick] += 1;
        } else {
            quota[pick] += 1;
        }
        missing -= 1;
    }
    for (q, &c) in quota.iter_mut().zip(&class_sizes) {
        *q = (*q).clamp(1, c - 1);
    }
    Ok(quota)
}

/// Assigns whole subjects to train/test. With `stratify_by_class`, per-class
/// subject counts follow `train_fraction` to within rounding.
pub fn subject_wise_split(
    ds: &RecordDataset,
    train_fraction: f64,
    seed: Seed,
    stratify_by_class: bool,
) -> Result<SplitIndexes> {
    check_fraction(train_fraction)?;
    let subjects = ds.subjects();
    let by_class: [Vec<usize>; 2] = [
        (0..subjects.len()).filter(|&s| !subjects[s].is_case).collect(),
        (0..subjects.len()).filter(|&s| subjects[s].is_case).collect(),
    ];
    if by_class.iter().any(|c| c.len() < 2) {
        return Err(Error::Split(
            "subject-wise split needs at least 2 subjects of each class".into(),
        ));
    }

    for attempt in 0..MAX_SPLIT_RETRIES {
        let mut rng = seed.derive(Purpose::Split, attempt as u64).rng();
        let chosen: Vec<usize> = if stratify_by_class {
            let quota = stratified_quotas([by_class[0].len(), by_class[1].len()], train_fraction, &mut rng)?;
            by_class
                .iter()
                .zip(quota)
                .flat_map(|(members, k)| {
                    index::sample(&mut rng, members.len(), k)
                        .into_iter()
                        .map(|i| members[i])
                        .collect::<Vec<_>>()
                })
                .collect()
        } else {
            let k = (train_fraction * subjects.len() as f64).round() as usize;
            if k == 0 || k >= subjects.len() {
                return Err(Error::Split("train fraction leaves an empty side".into()));
            }
            index::sample(&mut rng, subjects.len(), k).into_vec()
        };
        let train: Vec<usize> = chosen
            .iter()
            .flat_map(|&s| subjects[s].rows.iter().copied())
            .collect();
        let split = complement(ds.n_records(), train, SplitStrategy::SubjectWise);
        if has_both_classes(ds.labels(), &split.train_rows)
            && has_both_classes(ds.labels(), &split.test_rows)
        {
            return Ok(split);
        }
    }
    Err(Error::Split(format!(
        "no two-class subject-wise split found in {MAX_SPLIT_RETRIES} draws"
    )))
}

pub fn split(
    ds: &RecordDataset,
    strategy: SplitStrategy,
    train_fraction: f64,
    seed: Seed,
) -> Result<SplitIndexes> {
    match strategy {
        SplitStrategy::RecordWise => record_wise_split(ds, train_fraction, seed),
        SplitStrategy::SubjectWise => subject_wise_split(ds, train_fraction, seed, true),
    }
}

/// Uniformly permutes subject-level labels and broadcasts them to every record.
pub fn subject_wise_label_shuffle(ds: &RecordDataset, seed: Seed) -> Vec<bool> {
    let mut subject_labels: Vec<bool> = ds.subjects().iter().map(|s| s.is_case).collect();
    subject_labels.shuffle(&mut seed.rng());
    ds.subject_of_row().iter().map(|&s| subject_labels[s]).collect()
}

/// A uniform permutation of `0..n`: row `i` of the shuffled matrix is row `perm[i]`.
pub fn row_permutation(n: usize, seed: Seed) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed.rng());
    perm
}

/// Permutes whole feature rows; labels and subject ids stay in place.
pub fn record_wise_feature_shuffle(ds: &RecordDataset, seed: Seed) -> Array2<f64> {
    let perm = row_permutation(ds.n_records(), seed);
    ds.features().select(Axis(0), &perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::schematic;
    use std::collections::HashMap;

    fn cohort(cases: usize, controls: usize, records: usize) -> RecordDataset {
        let n_sub = cases + controls;
        let n = n_sub * records;
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for s in 0..n_sub {
            for _ in 0..records {
                labels.push(s < cases);
                ids.push(format!("s{s}"));
            }
        }
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        RecordDataset::new(x, labels, ids, vec!["x".into()]).unwrap()
    }

    #[test]
    fn record_wise_half_split_of_schematic() {
        let ds = schematic();
        let s = record_wise_split(&ds, 0.5, Seed::new(1)).unwrap();
        assert_eq!((s.train_rows.len(), s.test_rows.len()), (8, 8));
        s.validate(&ds).unwrap();
    }

    #[test]
    fn record_wise_rejects_degenerate_fractions() {
        let ds = schematic();
        assert!(record_wise_split(&ds, 1.0, Seed::new(1)).is_err());
        assert!(record_wise_split(&ds, 0.0, Seed::new(1)).is_err());
        assert!(record_wise_split(&ds, 0.01, Seed::new(1)).is_err());
    }

    #[test]
    fn subject_wise_stratified_schematic() {
        let ds = schematic();
        for i in 0..50 {
            let s = subject_wise_split(&ds, 0.5, Seed::new(i), true).unwrap();
            s.validate(&ds).unwrap();
            let train_subjects: Vec<&crate::data::Subject> = ds
                .subjects()
                .iter()
                .filter(|sub| s.train_rows.contains(&sub.rows[0]))
                .collect();
            assert_eq!(train_subjects.len(), 4);
            assert_eq!(train_subjects.iter().filter(|s| s.is_case).count(), 2);
        }
    }

    #[test]
    fn subject_wise_thirteen_seven_cohort() {
        // 13 * 0.5 = 6.5 and 7 * 0.5 = 3.5: ten train subjects, 6 or 7 of them cases.
        let ds = cohort(13, 7, 3);
        let mut seen = HashMap::new();
        for i in 0..200 {
            let s = subject_wise_split(&ds, 0.5, Seed::new(i), true).unwrap();
            let train_subj: Vec<_> = ds
                .subjects()
                .iter()
                .filter(|sub| s.train_rows.contains(&sub.rows[0]))
                .collect();
            assert_eq!(train_subj.len(), 10);
            let cases = train_subj.iter().filter(|s| s.is_case).count();
            assert!(cases == 6 || cases == 7, "{cases}");
            *seen.entry(cases).or_insert(0) += 1;
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn subject_wise_needs_two_per_class() {
        let ds = cohort(1, 1, 4);
        assert!(subject_wise_split(&ds, 0.5, Seed::new(0), true).is_err());
        assert!(subject_wise_split(&ds, 0.5, Seed::new(0), false).is_err());
    }

    #[test]
    fn unstratified_subject_split_is_valid() {
        let ds = cohort(5, 5, 2);
        for i in 0..20 {
            subject_wise_split(&ds, 0.5, Seed::new(i), false)
                .unwrap()
                .validate(&ds)
                .unwrap();
        }
    }

    #[test]
    fn label_shuffle_keeps_subject_structure() {
        let ds = schematic();
        for i in 0..100 {
            let y = subject_wise_label_shuffle(&ds, Seed::new(9).derive(Purpose::LabelShuffle, i));
            for s in ds.subjects() {
                assert!(s.rows.iter().all(|&r| y[r] == y[s.rows[0]]));
            }
            assert_eq!(y.iter().filter(|&&v| v).count(), 8);
        }
    }

    #[test]
    fn one_subject_per_class_has_two_label_assignments() {
        let x = Array2::zeros((3, 1));
        let ds = RecordDataset::new(
            x,
            vec![true, true, false],
            vec!["a".into(), "a".into(), "b".into()],
            vec!["x".into()],
        )
        .unwrap();
        let mut seen = std::collections::HashSet::new();
        for i in 0..64 {
            seen.insert(subject_wise_label_shuffle(&ds, Seed::new(i)));
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn feature_shuffle_of_single_row_is_identity() {
        let x = Array2::from_elem((1, 3), 2.5);
        let perm = row_permutation(1, Seed::new(3));
        assert_eq!(perm, vec![0]);
        assert_eq!(x.select(Axis(0), &perm), x);
    }

    #[test]
    fn feature_shuffle_preserves_column_means() {
        let ds = schematic();
        let shuffled = record_wise_feature_shuffle(&ds, Seed::new(5));
        let a = ds.features().mean_axis(Axis(0)).unwrap();
        let b = shuffled.mean_axis(Axis(0)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn strategy_parses() {
        assert_eq!("record".parse::<SplitStrategy>().unwrap(), SplitStrategy::RecordWise);
        assert_eq!("subject-wise".parse::<SplitStrategy>().unwrap(), SplitStrategy::SubjectWise);
        assert!("fold".parse::<SplitStrategy>().is_err());
    }
}
