//! Subject-level generative model and the built-in example presets.
//!
//! Each subject's record block is
//! `(mu_s + a·y_s) + b·U_s + c·sigma_s·V_s + d·E_s`, with `y_s = ±1`,
//! `U_s` serially correlated across records (AR(1) rows), `V_s` i.i.d.
//! standard normal and `E_s` correlated across features (compound
//! symmetric columns). Subjects are generated independently.

use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::RecordDataset;
use crate::error::{Error, Result};
use crate::seed::{Purpose, Seed};
use crate::sim::cov::{build_cov, CovKind, CovSpec};
use crate::sim::matnorm::{cholesky_lower, MatrixNormal};

/// A per-subject scalar: fixed, or drawn once per subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectDraw {
    Fixed(f64),
    Normal { mean: f64, sd: f64 },
    /// Square root of a uniform draw on `[lo, hi]` (a scale whose square is uniform).
    SqrtUniform { lo: f64, hi: f64 },
}

impl SubjectDraw {
    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            SubjectDraw::Fixed(v) => v,
            SubjectDraw::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            SubjectDraw::SqrtUniform { lo, hi } => rng.random_range(lo..=hi).sqrt(),
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            SubjectDraw::Fixed(v) => v.is_finite(),
            SubjectDraw::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            SubjectDraw::SqrtUniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
        }
    }

    fn is_positive(&self) -> bool {
        match *self {
            SubjectDraw::Fixed(v) => v > 0.0,
            SubjectDraw::Normal { .. } => false,
            SubjectDraw::SqrtUniform { lo, .. } => lo > 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n_cases: usize,
    pub n_controls: usize,
    /// Records per subject, drawn uniformly on `min..=max` for each subject.
    pub min_records: usize,
    pub max_records: usize,
    pub n_features: usize,
    /// Disease shift.
    pub a: f64,
    /// Weight of the serially correlated term.
    pub b: f64,
    /// Weight of the i.i.d. term.
    pub c: f64,
    /// Weight of the feature-correlated term.
    pub d: f64,
    pub mu: SubjectDraw,
    pub sigma: SubjectDraw,
    pub rho_r: f64,
    pub rho_f: f64,
}

impl Default for SimSpec {
    /// The standard cohort with every generative term switched off.
    fn default() -> Self {
        SimSpec {
            n_cases: 13,
            n_controls: 7,
            min_records: 10,
            max_records: 20,
            n_features: 10,
            a: 0.0,
            b: 0.0,
            c: 0.0,
            d: 0.0,
            mu: SubjectDraw::Fixed(0.0),
            sigma: SubjectDraw::Fixed(1.0),
            rho_r: 0.95,
            rho_f: 0.5,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.n_cases == 0 || self.n_controls == 0 {
            return bad("need at least one case and one control");
        }
        if self.min_records == 0 || self.min_records > self.max_records {
            return bad("records per subject must satisfy 1 <= min <= max");
        }
        if self.n_features == 0 {
            return bad("need at least one feature");
        }
        if ![self.a, self.b, self.c, self.d].iter().all(|v| v.is_finite()) {
            return bad("coefficients must be finite");
        }
        if !self.mu.is_finite() || !self.sigma.is_finite() {
            return bad("subject draws must have finite parameters");
        }
        if !self.sigma.is_positive() {
            return bad("subject scale must be positive");
        }
        CovSpec::new(CovKind::Ar1(self.rho_r), self.max_records).validate()?;
        CovSpec::new(CovKind::CompoundSymmetric(self.rho_f), self.n_features).validate()?;
        Ok(())
    }

    /// Applies comma-separated `key=value` overrides, e.g. `a=1,b=2,c=1,d=0.5`.
    ///
    /// Keys: `a b c d cases controls min_records max_records features rho_r
    /// rho_f mu mu_sd sigma sigma2_min sigma2_max`.
    pub fn with_assignments(mut self, text: &str) -> Result<Self> {
        let mut sigma2 = None;
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("expected key=value, got {item:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = || -> Result<f64> {
                value
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidParameter(format!("{key}: not a number: {value:?}")))
            };
            let count = || -> Result<usize> {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidParameter(format!("{key}: not a count: {value:?}")))
            };
            match key {
                "a" => self.a = num()?,
                "b" => self.b = num()?,
                "c" => self.c = num()?,
                "d" => self.d = num()?,
                "cases" => self.n_cases = count()?,
                "controls" => self.n_controls = count()?,
                "min_records" => self.min_records = count()?,
                "max_records" => self.max_records = count()?,
                "features" => self.n_features = count()?,
                "rho_r" => self.rho_r = num()?,
                "rho_f" => self.rho_f = num()?,
                "mu" => {
                    self.mu = match self.mu {
                        SubjectDraw::Normal { sd, .. } => SubjectDraw::Normal { mean: num()?, sd },
                        _ => SubjectDraw::Fixed(num()?),
                    }
                }
                "mu_sd" => {
                    let mean = match self.mu {
                        SubjectDraw::Fixed(m) | SubjectDraw::Normal { mean: m, .. } => m,
                        SubjectDraw::SqrtUniform { .. } => 0.0,
                    };
                    self.mu = SubjectDraw::Normal { mean, sd: num()? };
                }
                "sigma" => self.sigma = SubjectDraw::Fixed(num()?),
                "sigma2_min" => sigma2 = Some((num()?, sigma2.map_or(f64::NAN, |s: (f64, f64)| s.1))),
                "sigma2_max" => sigma2 = Some((sigma2.map_or(f64::NAN, |s: (f64, f64)| s.0), num()?)),
                _ => return Err(Error::InvalidParameter(format!("unknown simulation key {key:?}"))),
            }
        }
        if let Some((lo, hi)) = sigma2 {
            if lo.is_nan() || hi.is_nan() {
                return Err(Error::InvalidParameter("sigma2_min and sigma2_max go together".into()));
            }
            self.sigma = SubjectDraw::SqrtUniform { lo, hi };
        }
        self.validate()?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Example1,
    Example2,
    Example3,
    Example4,
    Example5,
    Example6,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Example1,
        Preset::Example2,
        Preset::Example3,
        Preset::Example4,
        Preset::Example5,
        Preset::Example6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Example1 => "example1",
            Preset::Example2 => "example2",
            Preset::Example3 => "example3",
            Preset::Example4 => "example4",
            Preset::Example5 => "example5",
            Preset::Example6 => "example6",
        }
    }

    pub fn spec(self) -> SimSpec {
        let base = SimSpec::default();
        match self {
            // Serial dependence only: identity without disease signal.
            Preset::Example1 => SimSpec {
                b: 2.0,
                c: 1.0,
                d: 0.5,
                ..base
            },
            Preset::Example2 => SimSpec {
                a: 1.0,
                b: 2.0,
                c: 1.0,
                d: 0.5,
                ..base
            },
            // Subject-specific means.
            Preset::Example3 => SimSpec {
                c: 1.0,
                mu: SubjectDraw::Normal { mean: 0.0, sd: 2.0 },
                ..base
            },
            Preset::Example4 => SimSpec { a: 1.0, c: 1.0, ..base },
            // Subject-specific scales.
            Preset::Example5 => SimSpec {
                c: 1.0,
                sigma: SubjectDraw::SqrtUniform { lo: 1.0, hi: 10.0 },
                ..base
            },
            Preset::Example6 => SimSpec { c: 1.0, ..base },
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let digit = t
            .strip_prefix("example")
            .or_else(|| t.strip_prefix("ex"))
            .unwrap_or(&t);
        match digit {
            "1" => Ok(Preset::Example1),
            "2" => Ok(Preset::Example2),
            "3" => Ok(Preset::Example3),
            "4" => Ok(Preset::Example4),
            "5" => Ok(Preset::Example5),
            "6" => Ok(Preset::Example6),
            _ => Err(Error::InvalidParameter(format!(
                "unknown preset {s:?} (expected example1..example6)"
            ))),
        }
    }
}

/// Generates one subject's `n_records × n_features` block. The subject's
/// mean and scale are drawn from `seed`, and each noise term uses its own
/// derived stream.
pub fn simulate_subject(spec: &SimSpec, is_case: bool, n_records: usize, seed: Seed) -> Result<Array2<f64>> {
    spec.validate()?;
    if n_records == 0 {
        return Err(Error::InvalidParameter("a subject needs at least one record".into()));
    }
    let row_chol = if spec.b != 0.0 && spec.rho_r != 0.0 {
        Some(cholesky_lower(&build_cov(CovSpec::new(CovKind::Ar1(spec.rho_r), n_records))?)?)
    } else {
        None
    };
    let col_chol = if spec.d != 0.0 && spec.rho_f != 0.0 {
        Some(cholesky_lower(&build_cov(CovSpec::new(
            CovKind::CompoundSymmetric(spec.rho_f),
            spec.n_features,
        ))?)?)
    } else {
        None
    };
    simulate_block(spec, is_case, n_records, seed, row_chol, col_chol)
}

fn simulate_block(
    spec: &SimSpec,
    is_case: bool,
    n_records: usize,
    seed: Seed,
    row_chol: Option<Array2<f64>>,
    col_chol: Option<Array2<f64>>,
) -> Result<Array2<f64>> {
    let mut rng = seed.derive(Purpose::Subject, 0).rng();
    let mu = spec.mu.draw(&mut rng);
    let sigma = spec.sigma.draw(&mut rng);
    let y = if is_case { 1.0 } else { -1.0 };
    let shape = (n_records, spec.n_features);
    let mut x = Array2::from_elem(shape, mu + spec.a * y);
    let iid = MatrixNormal::new(shape.0, shape.1, None, None)?;
    if spec.b != 0.0 {
        let u = MatrixNormal::new(shape.0, shape.1, row_chol, None)?;
        x.scaled_add(spec.b, &u.sample(&mut seed.derive(Purpose::Subject, 1).rng()));
    }
    if spec.c != 0.0 {
        x.scaled_add(spec.c * sigma, &iid.sample(&mut seed.derive(Purpose::Subject, 2).rng()));
    }
    if spec.d != 0.0 {
        let e = MatrixNormal::new(shape.0, shape.1, None, col_chol)?;
        x.scaled_add(spec.d, &e.sample(&mut seed.derive(Purpose::Subject, 3).rng()));
    }
    Ok(x)
}

/// Simulates a full cohort: cases first, then controls, subject ids
/// `s01, s02, ...` and features `f1..fN`. Labels are exported as booleans
/// (case = true).
pub fn simulate_dataset(spec: &SimSpec, seed: Seed) -> Result<RecordDataset> {
    spec.validate()?;
    let n_subjects = spec.n_cases + spec.n_controls;
    let width = n_subjects.to_string().len().max(2);
    let col_chol = if spec.d != 0.0 && spec.rho_f != 0.0 {
        Some(cholesky_lower(&build_cov(CovSpec::new(
            CovKind::CompoundSymmetric(spec.rho_f),
            spec.n_features,
        ))?)?)
    } else {
        None
    };
    let mut row_chols: Vec<Option<Array2<f64>>> = vec![None; spec.max_records + 1];
    let mut blocks = Vec::with_capacity(n_subjects);
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for s in 0..n_subjects {
        let is_case = s < spec.n_cases;
        let subject_seed = seed.derive(Purpose::Subject, s as u64);
        let n = subject_seed
            .derive(Purpose::Dataset, 0)
            .rng()
            .random_range(spec.min_records..=spec.max_records);
        let row_chol = if spec.b != 0.0 && spec.rho_r != 0.0 {
            if row_chols[n].is_none() {
                row_chols[n] = Some(cholesky_lower(&build_cov(CovSpec::new(CovKind::Ar1(spec.rho_r), n))?)?);
            }
            row_chols[n].clone()
        } else {
            None
        };
        blocks.push(simulate_block(spec, is_case, n, subject_seed, row_chol, col_chol.clone())?);
        labels.extend(std::iter::repeat_n(is_case, n));
        ids.extend(std::iter::repeat_n(format!("s{:0width$}", s + 1), n));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let features = ndarray::concatenate(ndarray::Axis(0), &views)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let names = (1..=spec.n_features).map(|j| format!("f{j}")).collect();
    RecordDataset::new(features, labels, ids, names)
}

pub fn simulate_preset(preset: Preset, seed: Seed) -> Result<RecordDataset> {
    simulate_dataset(&preset.spec(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn all_terms_off_gives_constant_block() {
        let spec = SimSpec {
            mu: SubjectDraw::Fixed(3.0),
            ..SimSpec::default()
        };
        let x = simulate_subject(&spec, true, 7, Seed::new(1)).unwrap();
        assert_eq!(x.dim(), (7, 10));
        assert!(x.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn example6_block_is_standard_normal() {
        let spec = Preset::Example6.spec();
        let mut vals = Vec::new();
        for r in 0..200 {
            vals.extend(simulate_subject(&spec, r % 2 == 0, 15, Seed::new(r)).unwrap());
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn example2_case_block_mean_is_one() {
        let spec = Preset::Example2.spec();
        let means: Vec<f64> = (0..500)
            .map(|r| simulate_subject(&spec, true, 15, Seed::new(r)).unwrap().mean().unwrap())
            .collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        assert!((m - 1.0).abs() < 0.1, "{m}");
    }

    #[test]
    fn subject_scale_sets_variance() {
        let spec = SimSpec {
            c: 1.0,
            sigma: SubjectDraw::Fixed(3.0),
            ..SimSpec::default()
        };
        let mut vals = Vec::new();
        for r in 0..1000 {
            vals.extend(simulate_subject(&spec, false, 10, Seed::new(r)).unwrap());
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 9.0 - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn dataset_cohort_shape() {
        let ds = simulate_preset(Preset::Example1, Seed::new(1)).unwrap();
        let s = ds.summarize();
        assert_eq!((s.subjects, s.cases, s.controls, s.features), (20, 13, 7, 10));
        assert!(s.min_records_per_subject >= 10 && s.max_records_per_subject <= 20);
        let again = simulate_preset(Preset::Example1, Seed::new(1)).unwrap();
        assert_eq!(ds.features(), again.features());
        let other = simulate_preset(Preset::Example1, Seed::new(2)).unwrap();
        assert_ne!(ds.features(), other.features());
    }

    #[test]
    fn serial_term_is_correlated_across_records() {
        let spec = SimSpec {
            b: 1.0,
            ..SimSpec::default()
        };
        let (mut num, mut den) = (0.0, 0.0);
        for r in 0..300 {
            let x = simulate_subject(&spec, true, 12, Seed::new(r)).unwrap();
            for j in 0..x.ncols() {
                for i in 0..x.nrows() - 1 {
                    num += x[[i, j]] * x[[i + 1, j]];
                    den += x[[i, j]] * x[[i, j]];
                }
            }
        }
        assert_relative_eq!(num / den, 0.95, epsilon = 0.02);
    }

    #[test]
    fn preset_names_parse() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert_eq!("ex3".parse::<Preset>().unwrap(), Preset::Example3);
        assert!("example7".parse::<Preset>().is_err());
    }

    #[test]
    fn preset_models() {
        let e5 = Preset::Example5.spec();
        assert_eq!(e5.sigma, SubjectDraw::SqrtUniform { lo: 1.0, hi: 10.0 });
        let e4 = Preset::Example4.spec();
        assert_eq!((e4.a, e4.b, e4.c, e4.d), (1.0, 0.0, 1.0, 0.0));
        let e1 = Preset::Example1.spec();
        assert_eq!((e1.a, e1.b, e1.c, e1.d), (0.0, 2.0, 1.0, 0.5));
    }

    #[test]
    fn assignments_override_fields() {
        let s = SimSpec::default().with_assignments("a=1, b=2,c=1,d=0.5,cases=4").unwrap();
        assert_eq!((s.a, s.b, s.c, s.d, s.n_cases), (1.0, 2.0, 1.0, 0.5, 4));
        let s = SimSpec::default().with_assignments("sigma2_min=1,sigma2_max=10,mu_sd=2").unwrap();
        assert_eq!(s.sigma, SubjectDraw::SqrtUniform { lo: 1.0, hi: 10.0 });
        assert_eq!(s.mu, SubjectDraw::Normal { mean: 0.0, sd: 2.0 });
        assert!(SimSpec::default().with_assignments("zz=1").is_err());
        assert!(SimSpec::default().with_assignments("a").is_err());
        assert!(SimSpec::default().with_assignments("rho_r=1").is_err());
        assert!(SimSpec::default().with_assignments("sigma=0").is_err());
        assert!(SimSpec::default().with_assignments("sigma2_min=1").is_err());
    }
}
