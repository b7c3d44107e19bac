//! End-to-end runs: a single analysis on one split, and the split
//! recommendation ladder.

use serde::{Deserialize, Serialize};

use crate::data::RecordDataset;
use crate::error::{Error, Result};
use crate::forest::Classifier;
use crate::metrics::{self, AucValue};
use crate::perm::{Metric, NullDistribution, ObservedRun, PermConfig, PermEngine};
use crate::seed::Purpose;
use crate::shuffle::{self, SplitIndexes, SplitStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSelection {
    pub disease_recognition: bool,
    pub identity_confounding: bool,
}

impl TestSelection {
    pub const BOTH: TestSelection = TestSelection {
        disease_recognition: true,
        identity_confounding: true,
    };
}

/// Normal-approximation p-values on the AUC scale, with log10 tails that
/// stay finite when the p-value itself underflows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticP {
    pub p_value: f64,
    pub log10_p: f64,
    pub z: f64,
}

impl AnalyticP {
    fn of(auc: f64, ob: &ObservedRun) -> Result<Self> {
        let auc = AucValue::new(auc)?;
        let z = metrics::auc_z_score(auc, &ob.ties)?;
        Ok(AnalyticP {
            p_value: metrics::auc_analytic_pvalue(auc, &ob.ties)?,
            log10_p: metrics::normal_upper_tail_log10(z),
            z,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub split: SplitIndexes,
    pub observed: ObservedRun,
    pub disease_recognition: Option<NullDistribution>,
    pub identity_confounding: Option<NullDistribution>,
    /// Observed AUC against the record-wise label-shuffle normal null.
    pub analytic: Option<AnalyticP>,
    /// Median of the disease-recognition null against the same normal null.
    pub pseudo: Option<AnalyticP>,
}

/// Splits `ds` and runs the selected tests on that split. The
/// identity-confounding test always needs the disease-recognition null, so
/// it is computed (and reported) whenever either test is selected.
pub fn analyze<C: Classifier>(
    engine: &PermEngine<C>,
    ds: &RecordDataset,
    strategy: SplitStrategy,
    train_fraction: f64,
    tests: TestSelection,
    cfg: &PermConfig,
) -> Result<Analysis> {
    if !tests.disease_recognition && !tests.identity_confounding {
        return Err(Error::InvalidParameter("no test selected".into()));
    }
    let split = shuffle::split(ds, strategy, train_fraction, cfg.seed.derive(Purpose::Split, 0))?;
    analyze_split(engine, ds, split, tests, cfg)
}

pub fn analyze_split<C: Classifier>(
    engine: &PermEngine<C>,
    ds: &RecordDataset,
    split: SplitIndexes,
    tests: TestSelection,
    cfg: &PermConfig,
) -> Result<Analysis> {
    let observed = engine.observed_run(ds, &split, cfg)?;
    let disease = engine.disease_recognition_null_with(ds, &split, cfg, observed.metric_value)?;
    let identity = if tests.identity_confounding {
        Some(engine.identity_confounding_null(ds, &split, cfg, Some(&disease))?)
    } else {
        None
    };
    let (analytic, pseudo) = if cfg.metric == Metric::Auc {
        (
            Some(AnalyticP::of(observed.metric_value, &observed)?),
            Some(AnalyticP::of(disease.median(), &observed)?),
        )
    } else {
        (None, None)
    };
    Ok(Analysis {
        split,
        observed,
        disease_recognition: Some(disease),
        identity_confounding: identity,
        analytic,
        pseudo,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadderExit {
    /// The pseudo p-value already flags identity confounding.
    PseudoSignificant,
    /// The permutation test finds no identity confounding.
    NoConfounding,
    /// The permutation test finds identity confounding.
    ConfoundingDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub alpha: f64,
    pub record_wise: Analysis,
    pub subject_wise: Option<Analysis>,
    pub exit: LadderExit,
    pub recommended: SplitStrategy,
    /// The pseudo p-value missed confounding the permutation test found.
    pub pseudo_permutation_disagree: bool,
    pub steps: Vec<String>,
}

/// Decides between record-wise and subject-wise splitting.
///
/// 1. Record-wise disease-recognition test.
/// 2. Pseudo p-value; below `alpha` means subject-wise.
/// 3. Otherwise the identity-confounding permutation test; not significant
///    means record-wise is acceptable.
/// 4. Otherwise subject-wise, with its own disease-recognition test.
///
/// The subject-wise disease-recognition test also runs after step 2 so that
/// every subject-wise recommendation comes with a usable test.
pub fn recommend_split<C: Classifier>(
    engine: &PermEngine<C>,
    ds: &RecordDataset,
    train_fraction: f64,
    alpha: f64,
    cfg: &PermConfig,
) -> Result<Recommendation> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if cfg.metric != Metric::Auc {
        return Err(Error::InvalidParameter("the recommendation needs the AUC metric".into()));
    }
    let mut steps = Vec::new();
    let only_dr = TestSelection {
        disease_recognition: true,
        identity_confounding: false,
    };
    let mut record = analyze(engine, ds, SplitStrategy::RecordWise, train_fraction, only_dr, cfg)?;
    let dr = record.disease_recognition.as_ref().expect("disease null always computed");
    steps.push(format!(
        "record-wise disease recognition: observed {:.4}, null median {:.4}, p = {}",
        dr.observed,
        dr.median(),
        dr.p_value
    ));
    let pseudo = record.pseudo.expect("AUC metric gives a pseudo p-value").p_value;
    steps.push(format!("pseudo p-value = {pseudo:e}"));

    let mut disagree = false;
    let exit = if pseudo < alpha {
        steps.push(format!("pseudo p-value below {alpha}: identity confounding flagged"));
        LadderExit::PseudoSignificant
    } else {
        let ic = engine.identity_confounding_null(ds, &record.split, cfg, Some(dr))?;
        steps.push(format!(
            "record-wise identity confounding: observed median {:.4}, p = {}",
            ic.observed, ic.p_value
        ));
        let significant = ic.p_value < alpha;
        record.identity_confounding = Some(ic);
        if significant {
            disagree = true;
            steps.push("permutation test detects confounding the pseudo p-value missed".into());
            LadderExit::ConfoundingDetected
        } else {
            LadderExit::NoConfounding
        }
    };

    let (recommended, subject_wise) = match exit {
        LadderExit::NoConfounding => {
            steps.push("record-wise splitting is acceptable".into());
            (SplitStrategy::RecordWise, None)
        }
        _ => {
            let sub = analyze(engine, ds, SplitStrategy::SubjectWise, train_fraction, only_dr, cfg)?;
            let null = sub.disease_recognition.as_ref().expect("disease null always computed");
            steps.push(format!(
                "subject-wise disease recognition: observed {:.4}, p = {}",
                null.observed, null.p_value
            ));
            steps.push("use subject-wise splitting".into());
            (SplitStrategy::SubjectWise, Some(sub))
        }
    };
    Ok(Recommendation {
        alpha,
        record_wise: record,
        subject_wise,
        exit,
        recommended,
        pseudo_permutation_disagree: disagree,
        steps,
    })
}
