//! Delta-method propagation, test-based confidence intervals, Wald inference
//! and a design-mimicking nonparametric bootstrap.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::trialdata::{CovariateKind, Scheme, TrialDataset, Value};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Wald,
    TestBased,
    BootstrapPercentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ci {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: CiMethod,
}

impl Ci {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Two-sided Wald p-value for estimate/se.
pub fn wald_p(estimate: f64, se: f64) -> f64 {
    if se <= 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    let n = Normal::new(0.0, 1.0).unwrap();
    2.0 * (1.0 - n.cdf((estimate / se).abs()))
}

pub fn wald_ci(estimate: f64, se: f64, level: f64) -> Ci {
    let q = normal_quantile(0.5 + level / 2.0);
    Ci {
        level,
        lower: estimate - q * se,
        upper: estimate + q * se,
        method: CiMethod::Wald,
    }
}

/// First-order variance propagation: se = sqrt(g' Sigma g).
pub fn delta_method(gradient: &DVector<f64>, covariance: &DMatrix<f64>) -> Result<f64> {
    if gradient.len() != covariance.nrows() || covariance.nrows() != covariance.ncols() {
        return Err(Error::InvalidConfig(
            "gradient length must match covariance dimension".into(),
        ));
    }
    let var = (gradient.transpose() * covariance * gradient)[(0, 0)];
    // Tolerate harmless negative round-off, reject genuinely indefinite input.
    if var < -1e-10 * (1.0 + covariance.amax()) {
        return Err(Error::NegativeVariance);
    }
    Ok(var.max(0.0).sqrt())
}

/// Confidence interval on a collapsible summary scale built from the Wald
/// statistic of the estimation-scale model, so the p-value and interval agree:
/// estimate +/- (q/z) * estimate.
pub fn test_based_ci(estimate: f64, z: f64, level: f64) -> Result<Ci> {
    if z == 0.0 || estimate == 0.0 {
        return Err(Error::DegenerateInput(
            "test-based interval needs a nonzero estimate and z statistic".into(),
        ));
    }
    let q = normal_quantile(0.5 + level / 2.0);
    let half = (q / z.abs()) * estimate.abs();
    Ok(Ci {
        level,
        lower: estimate - half,
        upper: estimate + half,
        method: CiMethod::TestBased,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    Simple,
    WithinStratum,
    WithinStratumBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub replicates: usize,
    pub resampling: Resampling,
    #[serde(default)]
    pub strata: Vec<String>,
    pub seed: u64,
    /// Minimisation designs have no faithful resampling scheme; an explicit
    /// opt-in runs a stratified approximation anyway.
    #[serde(default)]
    pub approximate_minimisation: bool,
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub se: f64,
    pub ci: Ci,
    pub failures: usize,
    pub estimates: Vec<f64>,
}

/// Group rows for resampling. Groups are keyed in first-appearance order so
/// the index stream is reproducible.
fn resampling_groups(
    data: &TrialDataset,
    plan: &BootstrapPlan,
) -> Result<Vec<Vec<usize>>> {
    match plan.resampling {
        Resampling::Simple => Ok(vec![(0..data.n()).collect()]),
        Resampling::WithinStratum | Resampling::WithinStratumBlock => {
            let mut var_idx = Vec::new();
            for name in &plan.strata {
                let def = data
                    .schema()
                    .get(name)
                    .ok_or_else(|| Error::UnknownTerm(name.clone()))?;
                if def.kind != CovariateKind::Categorical {
                    return Err(Error::InvalidConfig(format!(
                        "stratum variable `{name}` must be categorical"
                    )));
                }
                var_idx.push(data.schema().index(name).unwrap());
            }
            if var_idx.is_empty() {
                return Err(Error::InvalidConfig(
                    "within-stratum resampling needs stratum variables".into(),
                ));
            }
            let mut order: Vec<String> = Vec::new();
            let mut groups: HashMap<String, Vec<usize>> = HashMap::new();
            for (i, p) in data.rows().iter().enumerate() {
                let mut key = String::new();
                for &v in &var_idx {
                    match p.covariates[v] {
                        Some(Value::Level(l)) => key.push_str(&l.to_string()),
                        Some(Value::Number(x)) => key.push_str(&x.to_string()),
                        None => key.push_str("<missing>"),
                    }
                    key.push('|');
                }
                if plan.resampling == Resampling::WithinStratumBlock {
                    key.push_str(&p.treat.to_string());
                }
                groups.entry(key.clone()).or_insert_with(|| {
                    order.push(key.clone());
                    Vec::new()
                });
                groups.get_mut(&key).unwrap().push(i);
            }
            Ok(order.into_iter().map(|k| groups.remove(&k).unwrap()).collect())
        }
    }
}

/// Draw one resample. The RNG stream for replicate `r` is derived
/// deterministically from (seed, r), so replicates are parallel-safe and the
/// index stream is bit-reproducible.
pub fn resample_indices(groups: &[Vec<usize>], seed: u64, replicate: u64) -> Vec<usize> {
    let mut rng = replicate_rng(seed, replicate);
    let mut out = Vec::new();
    for g in groups {
        for _ in 0..g.len() {
            out.push(g[rng.gen_range(0..g.len())]);
        }
    }
    out
}

/// ChaCha8 with the plan seed as key and the replicate index as stream id.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

fn check_design_compatibility(data: &TrialDataset, plan: &BootstrapPlan) -> Result<()> {
    if let Some(design) = &data.design {
        match &design.scheme {
            Scheme::Minimisation { .. } => {
                if !plan.approximate_minimisation {
                    return Err(Error::DesignMismatch(
                        "no resampling scheme mimics minimisation; pass the explicit \
                         approximation flag to run a stratified approximation"
                            .into(),
                    ));
                }
            }
            Scheme::StratifiedBlocks { strata, .. } => {
                if matches!(
                    plan.resampling,
                    Resampling::WithinStratum | Resampling::WithinStratumBlock
                ) && &plan.strata != strata
                {
                    return Err(Error::DesignMismatch(format!(
                        "plan strata {:?} do not match the design strata {:?}",
                        plan.strata, strata
                    )));
                }
            }
            Scheme::Simple { .. } => {}
        }
    }
    Ok(())
}

/// Nonparametric bootstrap of an estimator over design-mimicking resamples.
/// Replicates where the estimator errors are counted, not imputed; more than
/// 10% failures aborts.
pub fn bootstrap<F>(
    data: &TrialDataset,
    estimator: F,
    plan: &BootstrapPlan,
    level: f64,
) -> Result<BootstrapResult>
where
    F: Fn(&TrialDataset) -> Result<f64> + Sync,
{
    if plan.replicates < 100 {
        return Err(Error::InvalidConfig("bootstrap needs at least 100 replicates".into()));
    }
    check_design_compatibility(data, plan)?;
    let groups = resampling_groups(data, plan)?;

    let outcomes: Vec<Option<f64>> = (0..plan.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let idx = resample_indices(&groups, plan.seed, r);
            let rows = idx.iter().map(|&i| data.rows()[i].clone()).collect();
            let resampled = data.with_rows(rows);
            estimator(&resampled).ok().filter(|v| v.is_finite())
        })
        .collect();

    let mut estimates: Vec<f64> = outcomes.iter().filter_map(|o| *o).collect();
    let failures = plan.replicates - estimates.len();
    if failures * 10 > plan.replicates {
        return Err(Error::TooManyFailures {
            failed: failures,
            total: plan.replicates,
        });
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    estimates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = (1.0 - level) / 2.0;
    let ci = Ci {
        level,
        lower: percentile(&estimates, alpha),
        upper: percentile(&estimates, 1.0 - alpha),
        method: CiMethod::BootstrapPercentile,
    };
    Ok(BootstrapResult {
        se: var.sqrt(),
        ci,
        failures,
        estimates,
    })
}

/// Linear-interpolation quantile of a sorted slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trialdata::{OutcomeKind, SchemaConfig, CovariateDecl};

    fn stratified_toy() -> TrialDataset {
        let mut csv = String::from("id,treat,y,s\n");
        for i in 0..40 {
            let s = if i < 20 { "A" } else { "B" };
            let z = i % 2;
            let y = (i * 7 % 3 == 0) as u8;
            csv.push_str(&format!("p{i},{z},{y},{s}\n"));
        }
        let cfg = SchemaConfig {
            id: "id".into(),
            treat: "treat".into(),
            outcome: "y".into(),
            outcome_kind: OutcomeKind::Binary,
            covariates: vec![CovariateDecl {
                name: "s".into(),
                kind: CovariateKind::Categorical,
                levels: None,
            }],
        };
        TrialDataset::from_csv_str(&csv, &cfg).unwrap()
    }

    #[test]
    fn delta_method_identity_transform() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 9.0]);
        let g = DVector::from_row_slice(&[1.0, 0.0]);
        assert_eq!(delta_method(&g, &cov).unwrap(), 2.0);
    }

    #[test]
    fn delta_method_zero_gradient() {
        let cov = DMatrix::from_row_slice(1, 1, &[5.0]);
        let g = DVector::from_row_slice(&[0.0]);
        assert_eq!(delta_method(&g, &cov).unwrap(), 0.0);
    }

    #[test]
    fn delta_method_exact_for_linear_combination() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, -0.5, -0.5, 3.0]);
        let g = DVector::from_row_slice(&[1.5, -2.0]);
        let exact = (1.5f64 * 1.5 * 2.0 + 2.0 * 1.5 * -2.0 * -0.5 + 4.0 * 3.0).sqrt();
        assert!((delta_method(&g, &cov).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn test_based_ci_worked_example() {
        let ci = test_based_ci(0.1, 2.0, 0.95).unwrap();
        assert!((ci.lower - 0.002).abs() < 2e-6);
        assert!((ci.upper - 0.198).abs() < 2e-6);
    }

    #[test]
    fn test_based_ci_excludes_zero_when_significant() {
        let ci = test_based_ci(0.3, 2.5, 0.95).unwrap();
        assert!(ci.lower > 0.0);
    }

    #[test]
    fn test_based_ci_boundary_at_exact_quantile() {
        let q = normal_quantile(0.975);
        let ci = test_based_ci(0.1, q, 0.95).unwrap();
        assert!(ci.lower.abs() < 1e-12);
    }

    #[test]
    fn test_based_ci_scale_equivariant() {
        let a = test_based_ci(0.07, 1.7, 0.95).unwrap();
        let b = test_based_ci(0.21, 1.7, 0.95).unwrap();
        assert!((b.lower - 3.0 * a.lower).abs() < 1e-12);
        assert!((b.upper - 3.0 * a.upper).abs() < 1e-12);
    }

    #[test]
    fn test_based_ci_degenerate_inputs() {
        assert!(test_based_ci(0.0, 2.0, 0.95).is_err());
        assert!(test_based_ci(0.1, 0.0, 0.95).is_err());
    }

    #[test]
    fn bootstrap_reproducible() {
        let data = stratified_toy();
        let plan = BootstrapPlan {
            replicates: 200,
            resampling: Resampling::WithinStratum,
            strata: vec!["s".into()],
            seed: 42,
            approximate_minimisation: false,
        };
        let f = |d: &TrialDataset| -> Result<f64> {
            Ok(d.rows().iter().filter_map(|p| p.outcome).sum::<f64>() / d.n() as f64)
        };
        let a = bootstrap(&data, f, &plan, 0.95).unwrap();
        let b = bootstrap(&data, f, &plan, 0.95).unwrap();
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.se, b.se);
    }

    #[test]
    fn within_stratum_block_preserves_cell_counts() {
        let data = stratified_toy();
        let plan = BootstrapPlan {
            replicates: 100,
            resampling: Resampling::WithinStratumBlock,
            strata: vec!["s".into()],
            seed: 7,
            approximate_minimisation: false,
        };
        let groups = resampling_groups(&data, &plan).unwrap();
        let idx = resample_indices(&groups, plan.seed, 3);
        // 4 (stratum, arm) cells of 10 rows each.
        let mut counts = HashMap::new();
        for i in idx {
            let p = &data.rows()[i];
            let s = match p.covariates[0] {
                Some(Value::Level(l)) => l,
                _ => unreachable!(),
            };
            *counts.entry((s, p.treat)).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&c| c == 10));
    }

    #[test]
    fn always_failing_estimator_aborts() {
        let data = stratified_toy();
        let plan = BootstrapPlan {
            replicates: 100,
            resampling: Resampling::Simple,
            strata: vec![],
            seed: 1,
            approximate_minimisation: false,
        };
        let f = |_: &TrialDataset| -> Result<f64> { Err(Error::ZeroCells) };
        assert!(matches!(
            bootstrap(&data, f, &plan, 0.95),
            Err(Error::TooManyFailures { .. })
        ));
    }

    #[test]
    fn minimisation_design_refused() {
        let mut data = stratified_toy();
        data.design = Some(crate::trialdata::DesignInfo {
            scheme: Scheme::Minimisation {
                factors: vec!["s".into()],
                weights: vec![1.0],
                favoured_prob: 0.8,
            },
        });
        let plan = BootstrapPlan {
            replicates: 100,
            resampling: Resampling::WithinStratum,
            strata: vec!["s".into()],
            seed: 1,
            approximate_minimisation: false,
        };
        let f = |_: &TrialDataset| -> Result<f64> { Ok(0.0) };
        assert!(matches!(
            bootstrap(&data, f, &plan, 0.95),
            Err(Error::DesignMismatch(_))
        ));
    }
}
