use idconf::forest::{ForestParams, RandomForest};
use idconf::perm::{permutation_pvalue, Direction, Metric, PermConfig, PermEngine};
use idconf::seed::Seed;
use idconf::shuffle::{self, SplitStrategy};
use idconf::sim::{simulate_dataset, simulate_preset, Preset, SimSpec};
use proptest::prelude::*;

fn engine() -> PermEngine<RandomForest> {
    PermEngine::new(RandomForest::new(ForestParams::with_trees(10)))
}

fn cfg(perms: usize, feature_perms: usize, label_perms: usize, seed: u64) -> PermConfig {
    PermConfig {
        perms,
        label_perms,
        feature_perms,
        metric: Metric::Auc,
        seed: Seed::new(seed),
    }
}

proptest! {
    #[test]
    fn exceedances_match_brute_force(
        samples in prop::collection::vec(0u8..20, 1..200),
        observed in 0u8..20,
    ) {
        let samples: Vec<f64> = samples.into_iter().map(|v| v as f64 / 19.0).collect();
        let observed = observed as f64 / 19.0;
        let p = samples.len() as f64;
        let up = permutation_pvalue(&samples, observed, Direction::LargerIsBetter);
        let down = permutation_pvalue(&samples, observed, Direction::SmallerIsBetter);
        prop_assert_eq!(up.exceedances, samples.iter().filter(|&&m| m >= observed).count());
        prop_assert_eq!(down.exceedances, samples.iter().filter(|&&m| m <= observed).count());
        prop_assert_eq!((up.p_value * p).round() as usize, up.exceedances);
        prop_assert!((up.p_value * p - up.exceedances as f64).abs() < 1e-9);
        prop_assert_eq!(up.smoothed, (up.exceedances + 1) as f64 / (p + 1.0));
    }
}

#[test]
fn subject_wise_disease_null_is_centered_even_with_signal() {
    for (preset, seed) in [(Preset::Example1, 11), (Preset::Example2, 12)] {
        let ds = simulate_preset(preset, Seed::new(seed)).unwrap();
        let split = shuffle::split(&ds, SplitStrategy::SubjectWise, 0.5, Seed::new(seed)).unwrap();
        let null = engine().disease_recognition_null(&ds, &split, &cfg(1000, 1, 1, seed)).unwrap();
        assert_eq!(null.samples.len(), 1000);
        assert!((null.median() - 0.5).abs() < 0.05, "{}: median {}", preset.name(), null.median());
    }
}

#[test]
fn identity_null_is_centered_under_a_confounded_record_split() {
    let ds = simulate_preset(Preset::Example1, Seed::new(13)).unwrap();
    let split = shuffle::split(&ds, SplitStrategy::RecordWise, 0.5, Seed::new(13)).unwrap();
    let c = cfg(200, 100, 20, 13);
    let eng = engine();
    let disease = eng.disease_recognition_null(&ds, &split, &c).unwrap();
    let null = eng.identity_confounding_null(&ds, &split, &c, Some(&disease)).unwrap();
    assert_eq!(null.samples.len(), 100);
    assert!((null.median() - 0.5).abs() < 0.05, "median {}", null.median());
    assert_eq!(null.observed, disease.median());
    assert!(null.observed > 0.65, "confounded record split should inflate the observed median");
    assert_eq!(null.p_value, 0.0);
}

#[test]
fn white_noise_gives_a_centered_disease_null() {
    let ds = simulate_preset(Preset::Example6, Seed::new(14)).unwrap();
    for strategy in [SplitStrategy::RecordWise, SplitStrategy::SubjectWise] {
        let split = shuffle::split(&ds, strategy, 0.5, Seed::new(14)).unwrap();
        let null = engine().disease_recognition_null(&ds, &split, &cfg(500, 1, 1, 14)).unwrap();
        assert!((null.median() - 0.5).abs() < 0.05, "{}: median {}", strategy.name(), null.median());
        assert!((null.observed - 0.5).abs() < 0.2, "{}: observed {}", strategy.name(), null.observed);
    }
}

#[test]
fn multi_split_runs_independent_splits() {
    let ds = simulate_preset(Preset::Example2, Seed::new(15)).unwrap();
    let out = engine()
        .multi_split(&ds, SplitStrategy::RecordWise, 0.5, 4, &cfg(50, 1, 1, 15))
        .unwrap();
    assert_eq!(out.len(), 4);
    assert!(out.iter().all(|o| o.error.is_none()));
    let observed: Vec<f64> = out.iter().map(|o| o.observed.unwrap()).collect();
    assert!(observed.windows(2).any(|w| w[0] != w[1]), "splits should differ");
    assert!(out.iter().all(|o| o.p_value.unwrap() <= 0.1), "strong signal: {out:?}");
    assert!(engine().multi_split(&ds, SplitStrategy::RecordWise, 0.5, 0, &cfg(5, 1, 1, 15)).is_err());
}

#[test]
fn multi_split_records_per_split_failures() {
    // A single case subject cannot sit on both sides of a subject-wise split.
    let spec = SimSpec {
        n_cases: 1,
        n_controls: 3,
        c: 1.0,
        ..SimSpec::default()
    };
    let ds = simulate_dataset(&spec, Seed::new(16)).unwrap();
    let out = engine()
        .multi_split(&ds, SplitStrategy::SubjectWise, 0.5, 2, &cfg(5, 1, 1, 16))
        .unwrap();
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|o| o.error.is_some() && o.p_value.is_none()));
}
