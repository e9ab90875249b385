//! Missing-data machinery: single imputation of covariates (pooled mean /
//! modal level), the missing-indicator method, inverse-probability-of-
//! missingness weights (IPMW), and multiple imputation of a binary outcome
//! separately by arm with Rubin's rules for combination.

use nalgebra::{Cholesky, DVector};
use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::estimators::{EffectEstimate, EstimandSpec, Method};
use crate::glm::{self, Family, Link};
use crate::inference::{wald_ci, Ci, CiMethod};
use crate::trialdata::{
    build_matrix, CovariateDef, CovariateKind, CovariateSchema, OutcomeKind, Participant, Term,
    TrialDataset, Value,
};

/// Fitted missingness probabilities below this are treated as perfect
/// prediction of missingness and refused.
const MIN_MISSINGNESS_PROB: f64 = 1e-6;

fn pooled_fill(dataset: &TrialDataset, cov_idx: usize) -> Result<Value> {
    let def = &dataset.schema().entries[cov_idx];
    match def.kind {
        CovariateKind::Continuous => {
            let mut sum = 0.0;
            let mut n = 0.0;
            for p in dataset.rows() {
                if let Some(Value::Number(v)) = p.covariates[cov_idx] {
                    sum += v;
                    n += 1.0;
                }
            }
            if n == 0.0 {
                return Err(Error::AllMissing(def.name.clone()));
            }
            Ok(Value::Number(sum / n))
        }
        CovariateKind::Categorical => {
            // Modal level, ties broken towards the first-declared level.
            let mut counts = vec![0usize; def.levels.len()];
            for p in dataset.rows() {
                if let Some(Value::Level(l)) = p.covariates[cov_idx] {
                    counts[l] += 1;
                }
            }
            if counts.iter().all(|&c| c == 0) {
                return Err(Error::AllMissing(def.name.clone()));
            }
            let mode = counts
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            Ok(Value::Level(mode))
        }
    }
}

/// Replace missing values of one covariate with the pooled (both-arms) mean,
/// or the modal level for a categorical covariate. Marks the result as
/// covariate-imputed, which blocks direct adjustment on non-collapsible
/// summaries downstream.
pub fn mean_impute(dataset: &TrialDataset, covariate: &str) -> Result<TrialDataset> {
    let idx = dataset
        .schema()
        .index(covariate)
        .ok_or_else(|| Error::UnknownTerm(covariate.into()))?;
    let fill = pooled_fill(dataset, idx)?;
    let rows = dataset
        .rows()
        .iter()
        .map(|p| {
            let mut p = p.clone();
            if p.covariates[idx].is_none() {
                p.covariates[idx] = Some(fill);
            }
            p
        })
        .collect();
    let mut out = dataset.with_rows(rows);
    out.provenance.covariate_imputed = true;
    Ok(out)
}

/// The missing-indicator method: fill the covariate as in [`mean_impute`]
/// and add a binary covariate `<name>_missing` flagging the filled rows.
pub fn missing_indicator(dataset: &TrialDataset, covariate: &str) -> Result<TrialDataset> {
    let idx = dataset
        .schema()
        .index(covariate)
        .ok_or_else(|| Error::UnknownTerm(covariate.into()))?;
    let indicator_name = format!("{covariate}_missing");
    if dataset.schema().index(&indicator_name).is_some() {
        return Err(Error::InvalidConfig(format!(
            "covariate {indicator_name} already exists"
        )));
    }
    let fill = pooled_fill(dataset, idx)?;
    let mut entries = dataset.schema().entries.clone();
    entries.push(CovariateDef {
        name: indicator_name,
        kind: CovariateKind::Categorical,
        levels: vec!["0".into(), "1".into()],
    });
    let schema = CovariateSchema::new(entries)?;
    let rows = dataset
        .rows()
        .iter()
        .map(|p| {
            let mut p = p.clone();
            let was_missing = p.covariates[idx].is_none();
            if was_missing {
                p.covariates[idx] = Some(fill);
            }
            p.covariates.push(Some(Value::Level(usize::from(was_missing))));
            p
        })
        .collect();
    let mut out = dataset.with_schema(schema, rows);
    out.provenance.covariate_imputed = true;
    Ok(out)
}

/// Inverse-probability-of-missingness weights from a logistic model for
/// P(outcome observed | covariates, arm) with covariate-by-arm interactions.
/// Weights are aligned with the dataset's rows; rows the model cannot score
/// carry NaN. Only rows with an observed outcome receive a usable weight.
pub fn ipmw_weights(
    dataset: &TrialDataset,
    covariates: &[String],
) -> Result<crate::estimators::WeightSet> {
    dataset.check_analyzable()?;
    let mut terms = vec![Term::Treatment];
    terms.extend(covariates.iter().cloned().map(Term::Covariate));
    terms.extend(covariates.iter().cloned().map(Term::TreatmentByCovariate));
    let dm = dataset.design_matrix(&terms)?;
    let r: Vec<f64> = dm
        .rows
        .iter()
        .map(|&i| f64::from(dataset.rows()[i].outcome.is_some()))
        .collect();
    if r.iter().all(|&v| v == 0.0) {
        return Err(Error::AllMissing("outcome".into()));
    }
    let fit = glm::fit_raw(
        Family::Binomial,
        Link::Logit,
        &dm.x,
        &dm.labels,
        &DVector::from_row_slice(&r),
        None,
    )?;
    if !fit.status.is_usable() {
        return Err(Error::NonConverged("missingness model did not converge".into()));
    }
    let mut weights = vec![f64::NAN; dataset.n()];
    for (k, &i) in dm.rows.iter().enumerate() {
        if dataset.rows()[i].outcome.is_some() {
            let p = fit.fitted_means[k];
            if p < MIN_MISSINGNESS_PROB {
                return Err(Error::PerfectPredictionOfMissingness);
            }
            weights[i] = 1.0 / p;
        }
    }
    Ok(crate::estimators::WeightSet {
        weights,
        source: crate::estimators::WeightSource::MissingnessModel,
    })
}

/// Multiple imputation of a missing binary outcome, separately by arm.
///
/// Within each arm a logistic model of the outcome on the covariate main
/// effects is fitted to the observed rows; for each imputation a coefficient
/// vector is drawn from the normal approximation to the posterior (Cholesky
/// of the model covariance) and the missing outcomes are drawn Bernoulli
/// with the implied probabilities. Streams of a counter-based generator keyed
/// by (imputation, arm) make each completed dataset reproducible in
/// isolation.
pub fn mi_by_arm(
    dataset: &TrialDataset,
    covariates: &[String],
    m: usize,
    seed: u64,
) -> Result<Vec<TrialDataset>> {
    if m < 2 {
        return Err(Error::InvalidConfig(
            "multiple imputation needs at least 2 imputations".into(),
        ));
    }
    if dataset.outcome_kind() != OutcomeKind::Binary {
        return Err(Error::InvalidConfig(
            "outcome multiple imputation is implemented for binary outcomes".into(),
        ));
    }
    dataset.check_analyzable()?;
    let terms: Vec<Term> = covariates.iter().cloned().map(Term::Covariate).collect();

    // Per-arm fits on the observed outcomes.
    let mut arm_fits = Vec::new();
    for arm in [0u8, 1u8] {
        let rows: Vec<Participant> = dataset
            .rows()
            .iter()
            .filter(|p| p.treat == arm && p.outcome.is_some())
            .cloned()
            .collect();
        if rows.is_empty() {
            return Err(Error::AllMissing(format!("outcome in arm {arm}")));
        }
        let arm_data = dataset.with_rows(rows);
        let dm = arm_data.design_matrix(&terms)?;
        let y: Vec<f64> = dm
            .rows
            .iter()
            .map(|&i| arm_data.rows()[i].outcome.unwrap())
            .collect();
        let fit = glm::fit_raw(
            Family::Binomial,
            Link::Logit,
            &dm.x,
            &dm.labels,
            &DVector::from_row_slice(&y),
            None,
        )?;
        if !fit.status.is_usable() {
            return Err(Error::NonConverged(format!(
                "arm-{arm} imputation model did not converge"
            )));
        }
        let chol = cholesky_with_jitter(&fit.model_covariance)?;
        arm_fits.push((arm, fit, chol));
    }

    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut completed = Vec::with_capacity(m);
    for imp in 0..m {
        let mut rows: Vec<Participant> = dataset.rows().to_vec();
        for (arm, fit, chol) in &arm_fits {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((imp as u64) * 2 + u64::from(*arm));
            let p_len = fit.coefficients.len();
            let z = DVector::from_iterator(p_len, (0..p_len).map(|_| std_normal.sample(&mut rng)));
            let beta = &fit.coefficients + chol.l() * z;

            // Score the arm's missing-outcome rows under the drawn
            // coefficients.
            let missing_rows: Vec<Participant> = rows
                .iter()
                .filter(|p| p.treat == *arm && p.outcome.is_none())
                .cloned()
                .collect();
            if missing_rows.is_empty() {
                continue;
            }
            let target = dataset.with_rows(missing_rows);
            let dm = build_matrix(&target, &terms, dataset.schema(), None)?;
            if !dm.excluded.is_empty() {
                return Err(Error::PredictionGap {
                    n_rows: dm.excluded.len(),
                });
            }
            let col_idx: Vec<usize> = fit
                .labels
                .iter()
                .map(|l| dm.labels.iter().position(|dl| dl == l).unwrap())
                .collect();
            let mut draws = Vec::with_capacity(dm.rows.len());
            for i in 0..dm.x.nrows() {
                let mut eta = 0.0;
                for (k, &j) in col_idx.iter().enumerate() {
                    eta += dm.x[(i, j)] * beta[k];
                }
                let p = 1.0 / (1.0 + (-eta.clamp(-700.0, 700.0)).exp());
                let u: f64 = rand::Rng::gen(&mut rng);
                draws.push(f64::from(u < p));
            }
            let mut draw_iter = draws.into_iter();
            for p in rows.iter_mut() {
                if p.treat == *arm && p.outcome.is_none() {
                    p.outcome = Some(draw_iter.next().unwrap());
                }
            }
        }
        completed.push(dataset.with_rows(rows));
    }
    Ok(completed)
}

fn cholesky_with_jitter(cov: &nalgebra::DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let sym = (cov + cov.transpose()) * 0.5;
    let mut jitter = 0.0;
    for _ in 0..6 {
        let mut m = sym.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok(c);
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 100.0 };
    }
    Err(Error::DegenerateInput(
        "imputation-model covariance is not positive definite".into(),
    ))
}

/// Rubin's rules for combining an estimate across imputations.
#[derive(Debug, Clone, Copy)]
pub struct RubinPooled {
    pub estimate: f64,
    pub se: f64,
    /// Degrees of freedom; infinite when the between-imputation variance is
    /// zero.
    pub df: f64,
    pub within: f64,
    pub between: f64,
}

/// Combine per-imputation (estimate, standard error) pairs:
/// T = W + (1 + 1/m) B with the classic Rubin degrees of freedom.
pub fn rubin_combine(points: &[(f64, f64)]) -> Result<RubinPooled> {
    let m = points.len();
    if m < 2 {
        return Err(Error::InvalidConfig(
            "Rubin's rules need at least 2 imputations".into(),
        ));
    }
    let mf = m as f64;
    // Identical estimates (e.g., no missingness, so every imputation is the
    // same dataset) must give exactly zero between-imputation variance; the
    // averaged mean would otherwise inject bit-level noise.
    let identical = points.iter().all(|p| p.0 == points[0].0);
    let estimate = if identical {
        points[0].0
    } else {
        points.iter().map(|p| p.0).sum::<f64>() / mf
    };
    let within = points.iter().map(|p| p.1 * p.1).sum::<f64>() / mf;
    let between = if identical {
        0.0
    } else {
        points.iter().map(|p| (p.0 - estimate).powi(2)).sum::<f64>() / (mf - 1.0)
    };
    let total = within + (1.0 + 1.0 / mf) * between;
    let df = if between == 0.0 {
        f64::INFINITY
    } else {
        let r = (1.0 + 1.0 / mf) * between;
        (mf - 1.0) * (1.0 + within / r).powi(2)
    };
    Ok(RubinPooled {
        estimate,
        se: total.sqrt(),
        df,
        within,
        between,
    })
}

/// Package a Rubin-pooled result as an [`EffectEstimate`] with a t-based
/// confidence interval and p-value.
pub fn pooled_effect(
    estimand: EstimandSpec,
    method: Method,
    pooled: &RubinPooled,
    diagnostics: Vec<String>,
) -> EffectEstimate {
    let level = 0.95;
    let (ci, p) = if pooled.df.is_infinite() || pooled.df > 1e8 {
        let ci = wald_ci(pooled.estimate, pooled.se, level);
        let z = pooled.estimate / pooled.se;
        let n = Normal::new(0.0, 1.0).unwrap();
        (ci, 2.0 * (1.0 - n.cdf(z.abs())))
    } else {
        let t = StudentsT::new(0.0, 1.0, pooled.df).unwrap();
        let q = t.inverse_cdf(0.5 + level / 2.0);
        let ci = Ci {
            level,
            lower: pooled.estimate - q * pooled.se,
            upper: pooled.estimate + q * pooled.se,
            method: CiMethod::Wald,
        };
        let z = pooled.estimate / pooled.se;
        (ci, 2.0 * (1.0 - t.cdf(z.abs())))
    };
    EffectEstimate {
        estimand,
        method,
        estimate: pooled.estimate,
        se: pooled.se,
        ci,
        p,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trialdata::{CovariateDecl, SchemaConfig};

    fn dataset_with_missing() -> TrialDataset {
        let csv = "\
id,treat,y,x,age
a,1,1,A,30
b,1,0,A,
c,1,1,B,40
d,1,,B,50
e,0,0,A,20
f,0,1,,30
g,0,0,B,40
h,0,,B,60
";
        let cfg = SchemaConfig {
            id: "id".into(),
            treat: "treat".into(),
            outcome: "y".into(),
            outcome_kind: OutcomeKind::Binary,
            covariates: vec![
                CovariateDecl {
                    name: "x".into(),
                    kind: CovariateKind::Categorical,
                    levels: None,
                },
                CovariateDecl {
                    name: "age".into(),
                    kind: CovariateKind::Continuous,
                    levels: None,
                },
            ],
        };
        TrialDataset::from_csv_str(csv, &cfg).unwrap()
    }

    #[test]
    fn mean_impute_fills_with_pooled_mean() {
        let data = dataset_with_missing();
        let imputed = mean_impute(&data, "age").unwrap();
        assert!(imputed.provenance.covariate_imputed);
        let idx = imputed.schema().index("age").unwrap();
        let expected = (30.0 + 40.0 + 50.0 + 20.0 + 30.0 + 40.0 + 60.0) / 7.0;
        match imputed.rows()[1].covariates[idx] {
            Some(Value::Number(v)) => assert!((v - expected).abs() < 1e-12),
            ref other => panic!("unexpected value {other:?}"),
        }
        // Observed values untouched.
        assert_eq!(imputed.rows()[0].covariates[idx], Some(Value::Number(30.0)));
    }

    #[test]
    fn modal_impute_for_categorical() {
        let data = dataset_with_missing();
        let imputed = mean_impute(&data, "x").unwrap();
        let idx = imputed.schema().index("x").unwrap();
        // Levels: A appears 3 times, B 4 times -> mode is B.
        let b = imputed
            .schema()
            .get("x")
            .unwrap()
            .levels
            .iter()
            .position(|l| l == "B")
            .unwrap();
        assert_eq!(imputed.rows()[5].covariates[idx], Some(Value::Level(b)));
    }

    #[test]
    fn missing_indicator_adds_flag_column() {
        let data = dataset_with_missing();
        let flagged = missing_indicator(&data, "age").unwrap();
        let fidx = flagged.schema().index("age_missing").unwrap();
        assert_eq!(flagged.rows()[1].covariates[fidx], Some(Value::Level(1)));
        assert_eq!(flagged.rows()[0].covariates[fidx], Some(Value::Level(0)));
        assert!(flagged.provenance.covariate_imputed);
    }

    #[test]
    fn ipmw_weights_average_to_inverse_response_rate() {
        let data = dataset_with_missing();
        let ws = ipmw_weights(&data, &[]).unwrap();
        // With no covariates the model has treatment only; within each arm the
        // weight is n_arm / n_observed_arm.
        for (i, p) in data.rows().iter().enumerate() {
            if p.outcome.is_some() {
                assert!((ws.weights[i] - 4.0 / 3.0).abs() < 1e-6, "row {i}");
            } else {
                assert!(ws.weights[i].is_nan());
            }
        }
    }

    #[test]
    fn mi_by_arm_reproducible_and_complete() {
        let data = dataset_with_missing();
        let a = mi_by_arm(&data, &["x".into()], 3, 7).unwrap();
        let b = mi_by_arm(&data, &["x".into()], 3, 7).unwrap();
        assert_eq!(a.len(), 3);
        for (da, db) in a.iter().zip(&b) {
            assert_eq!(da.n_observed_outcomes(), da.n());
            for (ra, rb) in da.rows().iter().zip(db.rows()) {
                assert_eq!(ra.outcome, rb.outcome);
            }
        }
        // Observed outcomes are never altered.
        for d in &a {
            assert_eq!(d.rows()[0].outcome, Some(1.0));
        }
        // A different seed may change the draws but stays complete.
        let c = mi_by_arm(&data, &["x".into()], 3, 8).unwrap();
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn rubin_zero_between_gives_infinite_df() {
        let pooled = rubin_combine(&[(0.5, 0.1), (0.5, 0.1), (0.5, 0.1)]).unwrap();
        assert_eq!(pooled.estimate, 0.5);
        assert!((pooled.se - 0.1).abs() < 1e-12);
        assert!(pooled.df.is_infinite());
    }

    #[test]
    fn rubin_matches_hand_computation() {
        let pts = [(0.4, 0.10), (0.6, 0.12), (0.5, 0.11)];
        let pooled = rubin_combine(&pts).unwrap();
        let w: f64 = (0.01 + 0.0144 + 0.0121) / 3.0;
        let b: f64 = 0.01; // variance of 0.4, 0.6, 0.5
        let t = w + (1.0 + 1.0 / 3.0) * b;
        assert!((pooled.estimate - 0.5).abs() < 1e-12);
        assert!((pooled.se - t.sqrt()).abs() < 1e-12);
        let r = (1.0 + 1.0 / 3.0) * b;
        let df = 2.0 * (1.0 + w / r).powi(2);
        assert!((pooled.df - df).abs() < 1e-9);
    }
}
