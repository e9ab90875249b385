//! The three broad covariate-adjustment approaches (direct adjustment,
//! standardisation, inverse-probability-of-treatment weighting) and the
//! unadjusted comparator, each producing an [`EffectEstimate`] for a declared
//! estimand.
//!
//! All estimators are pure functions of their inputs and safe to evaluate
//! concurrently over bootstrap replicates or imputations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{self, Family, FitResult, Link, ModelSpec, PredictScale};
use crate::inference::{wald_ci, wald_p, Ci};
use crate::trialdata::{build_matrix, OutcomeKind, Term, TrialDataset};

/// Ratio of the largest to smallest IPTW weight above which a warning is
/// attached to the estimate.
const EXTREME_WEIGHT_RATIO: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Summary {
    RiskDifference,
    LogRiskRatio,
    LogOddsRatio,
}

impl Summary {
    /// Collapsible summaries have coinciding marginal and conditional values.
    pub fn collapsible(self) -> bool {
        !matches!(self, Summary::LogOddsRatio)
    }

    fn outcome_link(self) -> Link {
        match self {
            Summary::RiskDifference => Link::Identity,
            Summary::LogRiskRatio => Link::Log,
            Summary::LogOddsRatio => Link::Logit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Marginal,
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    CompleteCase,
    AllRandomised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimandSpec {
    pub summary: Summary,
    pub level: Level,
    pub population: Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    Standardisation,
    Iptw,
    Unadjusted,
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectEstimate {
    pub estimand: EstimandSpec,
    pub method: Method,
    /// On the summary scale; log scale for ratio summaries.
    pub estimate: f64,
    pub se: f64,
    pub ci: Ci,
    pub p: f64,
    pub diagnostics: Vec<String>,
}

impl EffectEstimate {
    fn wald(
        estimand: EstimandSpec,
        method: Method,
        estimate: f64,
        se: f64,
        diagnostics: Vec<String>,
    ) -> Self {
        Self {
            estimand,
            method,
            estimate,
            se,
            ci: wald_ci(estimate, se, 0.95),
            p: wald_p(estimate, se),
            diagnostics,
        }
    }
}

/// Map a pair of marginal risks onto the summary scale.
pub fn transform_summary(p1: f64, p0: f64, summary: Summary) -> Result<f64> {
    match summary {
        Summary::RiskDifference => {
            if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p0) {
                return Err(Error::DomainError(format!("risk pair ({p1}, {p0})")));
            }
            Ok(p1 - p0)
        }
        Summary::LogRiskRatio => {
            if p1 <= 0.0 || p1 >= 1.0 || p0 <= 0.0 || p0 >= 1.0 {
                return Err(Error::DomainError(format!("risk pair ({p1}, {p0})")));
            }
            Ok((p1 / p0).ln())
        }
        Summary::LogOddsRatio => {
            if p1 <= 0.0 || p1 >= 1.0 || p0 <= 0.0 || p0 >= 1.0 {
                return Err(Error::DomainError(format!("risk pair ({p1}, {p0})")));
            }
            Ok((p1 / (1.0 - p1)).ln() - (p0 / (1.0 - p0)).ln())
        }
    }
}

/// (d/dp1, d/dp0) of the summary transform.
fn transform_gradient(p1: f64, p0: f64, summary: Summary) -> (f64, f64) {
    match summary {
        Summary::RiskDifference => (1.0, -1.0),
        Summary::LogRiskRatio => (1.0 / p1, -1.0 / p0),
        Summary::LogOddsRatio => (1.0 / (p1 * (1.0 - p1)), -1.0 / (p0 * (1.0 - p0))),
    }
}

fn reject_covariate_imputed(dataset: &TrialDataset, summary: Summary) -> Result<()> {
    if dataset.provenance.covariate_imputed && !summary.collapsible() {
        return Err(Error::InvalidEstimand(
            "mean imputation / missing indicator cannot target a conditional \
             non-collapsible summary through direct adjustment"
                .into(),
        ));
    }
    Ok(())
}

fn diagnostics_from_fit(fit: &FitResult) -> Vec<String> {
    let report = glm::diagnose(fit);
    let mut out = Vec::new();
    if !report.dropped_columns.is_empty() {
        out.push(format!(
            "rank-deficient; dropped: {}",
            report.dropped_columns.join(", ")
        ));
    }
    if report.separation_suspected {
        out.push(format!(
            "separation suspected (max standardized coefficient {:.3}, boundary means {})",
            report.max_standardized_coefficient, report.boundary_mean_count
        ));
    }
    out
}

fn fit_or_diagnose(spec: &ModelSpec, dataset: &TrialDataset) -> Result<FitResult> {
    let fit = glm::fit(spec, dataset)?;
    if !fit.status.is_usable() {
        let reason = match &fit.status {
            glm::FitStatus::NonConverged(r) => r.clone(),
            _ => unreachable!(),
        };
        return Err(Error::NonConverged(format!(
            "{reason} ({:?}/{:?} after {} iterations)",
            spec.family, spec.link, fit.iterations
        )));
    }
    Ok(fit)
}

/// Engine for the directly-adjusted log risk ratio. The log-link binomial
/// model targets it directly; the poisson model with robust standard errors
/// is the usual fallback when the log-binomial fit will not converge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskRatioEngine {
    #[default]
    LogBinomial,
    PoissonRobust,
}

#[derive(Debug, Clone, Default)]
pub struct DirectOptions {
    pub rr_engine: RiskRatioEngine,
}

/// Direct adjustment: the treatment coefficient of an outcome regression
/// with covariate main effects and no treatment-covariate interactions.
/// Targets a conditional summary.
pub fn direct_adjust(
    dataset: &TrialDataset,
    covariates: &[String],
    estimand: EstimandSpec,
    opts: &DirectOptions,
) -> Result<EffectEstimate> {
    if estimand.level == Level::Marginal {
        return Err(Error::InvalidEstimand(
            "direct adjustment targets a conditional summary; request standardisation \
             or IPTW for a marginal one"
                .into(),
        ));
    }
    reject_covariate_imputed(dataset, estimand.summary)?;
    let analysis = analysis_population(dataset, covariates, estimand.population)?;

    let mut terms = vec![Term::Treatment];
    terms.extend(covariates.iter().cloned().map(Term::Covariate));

    let (family, link, robust) = match (analysis.outcome_kind(), estimand.summary) {
        (OutcomeKind::Continuous, Summary::RiskDifference) => {
            (Family::Gaussian, Link::Identity, false)
        }
        (OutcomeKind::Continuous, _) => {
            return Err(Error::InvalidEstimand(
                "ratio summaries need a binary outcome".into(),
            ))
        }
        (OutcomeKind::Binary, Summary::LogOddsRatio) => (Family::Binomial, Link::Logit, false),
        (OutcomeKind::Binary, Summary::RiskDifference) => {
            (Family::Binomial, Link::Identity, false)
        }
        (OutcomeKind::Binary, Summary::LogRiskRatio) => match opts.rr_engine {
            RiskRatioEngine::LogBinomial => (Family::Binomial, Link::Log, false),
            RiskRatioEngine::PoissonRobust => (Family::Poisson, Link::Log, true),
        },
    };
    let spec = ModelSpec::new(family, link, terms)?;
    let mut fit = fit_or_diagnose(&spec, &analysis)?;
    if robust {
        fit = glm::with_robust(fit)?;
    }
    let estimate = fit
        .coefficient("treat")
        .ok_or_else(|| Error::UnknownTerm("treat".into()))?;
    let se = if robust {
        fit.robust_se("treat").unwrap()
    } else {
        fit.se("treat").unwrap()
    };
    Ok(EffectEstimate::wald(
        estimand,
        Method::Direct,
        estimate,
        se,
        diagnostics_from_fit(&fit),
    ))
}

/// Resolve the analysis rows for a declared target population. Complete-case
/// analyses subset on the outcome and the referenced covariates; an
/// all-randomised request on data that still has missing outcomes must go
/// through the missing-data machinery instead.
fn analysis_population(
    dataset: &TrialDataset,
    covariates: &[String],
    population: Population,
) -> Result<TrialDataset> {
    let mut vars: Vec<String> = vec!["outcome".into()];
    vars.extend(covariates.iter().cloned());
    match population {
        Population::CompleteCase => dataset.complete_cases(&vars),
        Population::AllRandomised => {
            if dataset.n_observed_outcomes() < dataset.n() {
                return Err(Error::InvalidEstimand(
                    "all-randomised targeting with missing outcomes requires \
                     standardisation to the all-randomised sample, IPTW with IPMW, \
                     or multiple imputation by arm"
                        .into(),
                ));
            }
            dataset.complete_cases(&vars)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StandardizeOptions {
    /// Include treatment-by-covariate interactions in the outcome model.
    pub interactions: bool,
    /// Drop standardisation-population rows the fit cannot score instead of
    /// refusing; the output is then flagged "almost-all-randomised".
    pub drop_unscorable: bool,
}

/// Standardisation (G-computation): fit an outcome model on the complete
/// cases, predict every participant's outcome under each arm, average, and
/// contrast the averages on the summary scale. The standardisation
/// population is chosen by the estimand: complete cases, or every randomised
/// participant.
pub fn standardize(
    dataset: &TrialDataset,
    covariates: &[String],
    estimand: EstimandSpec,
    opts: &StandardizeOptions,
) -> Result<EffectEstimate> {
    if estimand.level == Level::Conditional {
        return Err(Error::InvalidEstimand(
            "standardisation targets a marginal summary".into(),
        ));
    }
    let mut vars: Vec<String> = vec!["outcome".into()];
    vars.extend(covariates.iter().cloned());
    let fit_data = dataset.complete_cases(&vars)?;

    let mut terms = vec![Term::Treatment];
    terms.extend(covariates.iter().cloned().map(Term::Covariate));
    if opts.interactions {
        terms.extend(covariates.iter().cloned().map(Term::TreatmentByCovariate));
    }
    let family = match fit_data.outcome_kind() {
        OutcomeKind::Binary => Family::Binomial,
        OutcomeKind::Continuous => Family::Gaussian,
    };
    let link = match family {
        Family::Binomial => Link::Logit,
        _ => Link::Identity,
    };
    let spec = ModelSpec::new(family, link, terms.clone())?;
    let fit = fit_or_diagnose(&spec, &fit_data)?;
    let mut diagnostics = diagnostics_from_fit(&fit);

    let population = match estimand.population {
        Population::CompleteCase => &fit_data,
        Population::AllRandomised => dataset,
    };

    let pred1 = glm::predict_with_treat(&fit, population, Some(1), PredictScale::Response)?;
    let pred0 = glm::predict_with_treat(&fit, population, Some(0), PredictScale::Response)?;
    if !pred1.unscorable.is_empty() {
        if opts.drop_unscorable {
            diagnostics.push(format!(
                "almost-all-randomised: {} unscorable rows dropped from the \
                 standardisation population",
                pred1.unscorable.len()
            ));
        } else {
            return Err(Error::PredictionGap {
                n_rows: pred1.unscorable.len(),
            });
        }
    }
    let n = pred1.values.len() as f64;
    let p1 = pred1.values.iter().sum::<f64>() / n;
    let p0 = pred0.values.iter().sum::<f64>() / n;
    let estimate = match fit_data.outcome_kind() {
        OutcomeKind::Binary => transform_summary(p1, p0, estimand.summary)?,
        OutcomeKind::Continuous => {
            if estimand.summary != Summary::RiskDifference {
                return Err(Error::InvalidEstimand(
                    "ratio summaries need a binary outcome".into(),
                ));
            }
            p1 - p0
        }
    };

    // Delta method: analytic gradient of the averaged counterfactual
    // predictions through the inverse link.
    let se = standardize_se(&fit, population, p1, p0, estimand.summary)?;
    Ok(EffectEstimate::wald(
        estimand,
        Method::Standardisation,
        estimate,
        se,
        diagnostics,
    ))
}

fn inv_link_derivative(link: Link, eta: f64) -> f64 {
    match link {
        Link::Identity => 1.0,
        Link::Logit => {
            let m = 1.0 / (1.0 + (-eta.clamp(-700.0, 700.0)).exp());
            m * (1.0 - m)
        }
        Link::Log => eta.exp(),
    }
}

fn standardize_se(
    fit: &FitResult,
    population: &TrialDataset,
    p1: f64,
    p0: f64,
    summary: Summary,
) -> Result<f64> {
    let (terms, schema) = (fit.terms.as_ref().unwrap(), fit.schema.as_ref().unwrap());
    let mut grads = Vec::new();
    for z in [1u8, 0u8] {
        let dm = build_matrix(population, terms, schema, Some(z))?;
        let col_idx: Vec<usize> = fit
            .labels
            .iter()
            .map(|l| dm.labels.iter().position(|dl| dl == l).unwrap())
            .collect();
        let n = dm.x.nrows() as f64;
        let mut grad = DVector::zeros(fit.labels.len());
        for i in 0..dm.x.nrows() {
            let mut eta = 0.0;
            for (k, &j) in col_idx.iter().enumerate() {
                eta += dm.x[(i, j)] * fit.coefficients[k];
            }
            let h = inv_link_derivative(fit.link, eta);
            for (k, &j) in col_idx.iter().enumerate() {
                grad[k] += h * dm.x[(i, j)] / n;
            }
        }
        grads.push(grad);
    }
    let (d1, d0) = match population.outcome_kind() {
        OutcomeKind::Binary => transform_gradient(p1, p0, summary),
        OutcomeKind::Continuous => (1.0, -1.0),
    };
    let grad = &grads[0] * d1 + &grads[1] * d0;
    crate::inference::delta_method(&grad, &fit.model_covariance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    TreatmentModel,
    MissingnessModel,
    Product,
}

/// Per-participant weights, aligned with the dataset's row order. Rows a
/// weight model could not score carry NaN and must not enter any analysis.
#[derive(Debug, Clone)]
pub struct WeightSet {
    pub weights: Vec<f64>,
    pub source: WeightSource,
}

impl WeightSet {
    pub fn product(&self, other: &WeightSet) -> WeightSet {
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| a * b)
            .collect();
        WeightSet {
            weights,
            source: WeightSource::Product,
        }
    }
}

/// Inverse-probability-of-treatment weights from a logistic model for
/// P(Z = z_i | x_i), together with the fitted model and the rows it scored.
pub fn treatment_weights(
    dataset: &TrialDataset,
    covariates: &[String],
) -> Result<(WeightSet, FitResult, Vec<usize>)> {
    dataset.check_analyzable()?;
    let terms: Vec<Term> = covariates.iter().cloned().map(Term::Covariate).collect();
    let dm = dataset.design_matrix(&terms)?;
    let y: Vec<f64> = dm.rows.iter().map(|&i| dataset.rows()[i].treat as f64).collect();
    let fit = glm::fit_raw(
        Family::Binomial,
        Link::Logit,
        &dm.x,
        &dm.labels,
        &DVector::from_row_slice(&y),
        None,
    )?;
    if !fit.status.is_usable() {
        return Err(Error::NonConverged("treatment model did not converge".into()));
    }
    let mut weights = vec![f64::NAN; dataset.n()];
    for (k, &i) in dm.rows.iter().enumerate() {
        let e = fit.fitted_means[k];
        let p_assigned = if dataset.rows()[i].treat == 1 { e } else { 1.0 - e };
        weights[i] = 1.0 / p_assigned;
    }
    Ok((
        WeightSet {
            weights,
            source: WeightSource::TreatmentModel,
        },
        fit,
        dm.rows,
    ))
}

#[derive(Debug, Clone, Default)]
pub struct IptwOptions {
    /// Skip the joint-estimating-equation correction and treat the weights
    /// as known. Conservative; kept for comparison.
    pub weights_as_fixed: bool,
}

/// IPTW: weight each participant by the inverse modelled probability of the
/// arm actually received, then contrast the arms in the weighted sample with
/// a covariate-free outcome model on the summary's link. The standard error
/// stacks the treatment-model and outcome-model estimating equations unless
/// `weights_as_fixed` is set. Missingness weights, when supplied, multiply
/// the treatment weights and are treated as fixed in the sandwich.
pub fn iptw(
    dataset: &TrialDataset,
    covariates: &[String],
    estimand: EstimandSpec,
    missingness_weights: Option<&WeightSet>,
    opts: &IptwOptions,
) -> Result<EffectEstimate> {
    if estimand.level == Level::Conditional {
        return Err(Error::InvalidEstimand("IPTW targets a marginal summary".into()));
    }
    // Treatment model population: the complete cases for a complete-case
    // estimand; every covariate-complete randomised row otherwise.
    let model_data = match estimand.population {
        Population::CompleteCase => {
            let mut vars: Vec<String> = vec!["outcome".into()];
            vars.extend(covariates.iter().cloned());
            dataset.complete_cases(&vars)?
        }
        Population::AllRandomised => {
            if dataset.n_observed_outcomes() < dataset.n() && missingness_weights.is_none() {
                return Err(Error::InvalidEstimand(
                    "all-randomised IPTW with missing outcomes needs missingness weights".into(),
                ));
            }
            dataset.clone()
        }
    };
    let (tw, tfit, tmodel_rows) = treatment_weights(&model_data, covariates)?;

    // Outcome-contrast rows: scored by the treatment model and outcome
    // observed, with combined weights.
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for &i in &tmodel_rows {
        let p = &model_data.rows()[i];
        if let Some(out) = p.outcome {
            let mut wi = tw.weights[i];
            if let Some(mw) = missingness_weights {
                // Missingness weights are aligned with the original dataset;
                // for the all-randomised path model_data shares its row order.
                wi *= mw.weights[i];
            }
            if !wi.is_finite() || wi <= 0.0 {
                continue;
            }
            rows.push(i);
            y.push(out);
            w.push(wi);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset("IPTW outcome contrast".into()));
    }

    let mut diagnostics = Vec::new();
    let wmin = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let wmax = w.iter().cloned().fold(0.0_f64, f64::max);
    if wmax / wmin > EXTREME_WEIGHT_RATIO {
        diagnostics.push(format!(
            "extreme weights: max/min ratio {:.1} exceeds {EXTREME_WEIGHT_RATIO}",
            wmax / wmin
        ));
    }

    let (family, link) = match model_data.outcome_kind() {
        OutcomeKind::Binary => (Family::Binomial, estimand.summary.outcome_link()),
        OutcomeKind::Continuous => {
            if estimand.summary != Summary::RiskDifference {
                return Err(Error::InvalidEstimand(
                    "ratio summaries need a binary outcome".into(),
                ));
            }
            (Family::Gaussian, Link::Identity)
        }
    };
    let n_out = rows.len();
    let mut xo = DMatrix::zeros(n_out, 2);
    for (k, &i) in rows.iter().enumerate() {
        xo[(k, 0)] = 1.0;
        xo[(k, 1)] = model_data.rows()[i].treat as f64;
    }
    let labels = vec!["(intercept)".to_string(), "treat".to_string()];
    let ofit = glm::fit_raw(family, link, &xo, &labels, &DVector::from_row_slice(&y), Some(&w))?;
    if !ofit.status.is_usable() {
        return Err(Error::NonConverged("weighted outcome contrast did not converge".into()));
    }
    let estimate = ofit.coefficient("treat").unwrap();

    let se = if opts.weights_as_fixed {
        let rfit = glm::with_robust(ofit.clone())?;
        rfit.robust_se("treat").unwrap()
    } else {
        stacked_sandwich_se(&model_data, &tfit, &tmodel_rows, &ofit, &rows, &w)?
    };
    diagnostics.extend(diagnostics_from_fit(&ofit));
    Ok(EffectEstimate::wald(
        estimand,
        Method::Iptw,
        estimate,
        se,
        diagnostics,
    ))
}

/// Joint estimating equations over the treatment model (parameters gamma)
/// and the weighted outcome contrast (parameters beta): the sandwich
/// A^-1 B A^-T of the stacked score, with the off-diagonal block carrying
/// the dependence of the weights on gamma. Returns the SE of the treatment
/// coefficient.
fn stacked_sandwich_se(
    data: &TrialDataset,
    tfit: &FitResult,
    tmodel_rows: &[usize],
    ofit: &FitResult,
    outcome_rows: &[usize],
    outcome_weights: &[f64],
) -> Result<f64> {
    let pg = tfit.x.ncols();
    let pb = ofit.x.ncols();
    let p = pg + pb;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DMatrix::<f64>::zeros(p, p);

    // Row lookup: dataset row -> position in each fit.
    let mut tpos = vec![usize::MAX; data.n()];
    for (k, &i) in tmodel_rows.iter().enumerate() {
        tpos[i] = k;
    }
    let mut opos = vec![usize::MAX; data.n()];
    for (k, &i) in outcome_rows.iter().enumerate() {
        opos[i] = k;
    }

    for i in 0..data.n() {
        let mut psi = DVector::<f64>::zeros(p);
        let tk = tpos[i];
        if tk != usize::MAX {
            let e = tfit.fitted_means[tk];
            let z = tfit.y[tk];
            let xi = tfit.x.row(tk).transpose();
            for j in 0..pg {
                psi[j] = (z - e) * xi[j];
            }
            let info = &xi * xi.transpose() * (e * (1.0 - e));
            for r in 0..pg {
                for c in 0..pg {
                    a[(r, c)] += info[(r, c)];
                }
            }
            let ok = opos[i];
            if ok != usize::MAX {
                let mu = ofit.fitted_means[ok];
                let (dmu, var) = outcome_link_terms(ofit, mu);
                let u = (ofit.y[ok] - mu) * dmu / var;
                let di = ofit.x.row(ok).transpose();
                let wi = outcome_weights[ok];
                for j in 0..pb {
                    psi[pg + j] = wi * u * di[j];
                }
                // A_beta,beta: expected information of the weighted contrast.
                let infob = &di * di.transpose() * (wi * dmu * dmu / var);
                for r in 0..pb {
                    for c in 0..pb {
                        a[(pg + r, pg + c)] += infob[(r, c)];
                    }
                }
                // A_beta,gamma = -d psi_beta / d gamma': the weight depends on
                // gamma through d log w / d gamma = (e - z) x.
                for r in 0..pb {
                    for c in 0..pg {
                        a[(pg + r, c)] += -psi[pg + r] * (e - z) * xi[c];
                    }
                }
            }
        }
        b += &psi * psi.transpose();
    }
    let a_inv = a.try_inverse().ok_or(Error::SingularInformation)?;
    let v = &a_inv * b * a_inv.transpose();
    let idx = p - 1; // treat is the last outcome-model column
    Ok(v[(idx, idx)].max(0.0).sqrt())
}

fn outcome_link_terms(fit: &FitResult, mu: f64) -> (f64, f64) {
    let mu = match fit.family {
        Family::Binomial => mu.clamp(1e-10, 1.0 - 1e-10),
        _ => mu,
    };
    let dmu = match fit.link {
        Link::Identity => 1.0,
        Link::Logit => mu * (1.0 - mu),
        Link::Log => mu,
    };
    let var = match fit.family {
        Family::Gaussian => 1.0,
        Family::Binomial => mu * (1.0 - mu),
        Family::Poisson => mu,
    };
    (dmu, var)
}

/// Unadjusted arm contrast on the summary scale with delta-method standard
/// errors from the binomial variances.
pub fn unadjusted(dataset: &TrialDataset, estimand: EstimandSpec) -> Result<EffectEstimate> {
    if estimand.level == Level::Conditional {
        return Err(Error::InvalidEstimand(
            "the unadjusted contrast is marginal".into(),
        ));
    }
    if dataset.outcome_kind() != OutcomeKind::Binary {
        return Err(Error::InvalidEstimand(
            "unadjusted contrasts are implemented for binary outcomes".into(),
        ));
    }
    let cc = dataset.complete_cases(&["outcome".into()])?;
    cc.check_analyzable()?;
    let (mut e1, mut n1, mut e0, mut n0) = (0.0, 0.0, 0.0, 0.0);
    for p in cc.rows() {
        let y = p.outcome.unwrap();
        if p.treat == 1 {
            e1 += y;
            n1 += 1.0;
        } else {
            e0 += y;
            n0 += 1.0;
        }
    }
    let p1 = e1 / n1;
    let p0 = e0 / n0;
    if estimand.summary != Summary::RiskDifference
        && (p1 == 0.0 || p1 == 1.0 || p0 == 0.0 || p0 == 1.0)
    {
        return Err(Error::ZeroCells);
    }
    let estimate = transform_summary(p1, p0, estimand.summary)?;
    let se = match estimand.summary {
        Summary::RiskDifference => (p1 * (1.0 - p1) / n1 + p0 * (1.0 - p0) / n0).sqrt(),
        Summary::LogRiskRatio => ((1.0 - p1) / (n1 * p1) + (1.0 - p0) / (n0 * p0)).sqrt(),
        Summary::LogOddsRatio => {
            (1.0 / e1 + 1.0 / (n1 - e1) + 1.0 / e0 + 1.0 / (n0 - e0)).sqrt()
        }
    };
    Ok(EffectEstimate::wald(
        estimand,
        Method::Unadjusted,
        estimate,
        se,
        Vec::new(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trialdata::{CovariateDecl, CovariateKind, SchemaConfig};

    pub fn binary_table_dataset(cells: &[(&str, u8, u8, usize)]) -> TrialDataset {
        let mut csv = String::from("id,treat,y,x\n");
        let mut n = 0;
        for &(x, z, y, count) in cells {
            for _ in 0..count {
                csv.push_str(&format!("p{n},{z},{y},{x}\n"));
                n += 1;
            }
        }
        let cfg = SchemaConfig {
            id: "id".into(),
            treat: "treat".into(),
            outcome: "y".into(),
            outcome_kind: OutcomeKind::Binary,
            covariates: vec![CovariateDecl {
                name: "x".into(),
                kind: CovariateKind::Categorical,
                levels: None,
            }],
        };
        TrialDataset::from_csv_str(&csv, &cfg).unwrap()
    }

    fn marginal(summary: Summary) -> EstimandSpec {
        EstimandSpec {
            summary,
            level: Level::Marginal,
            population: Population::CompleteCase,
        }
    }

    #[test]
    fn transform_summary_examples() {
        assert!((transform_summary(0.166, 0.222, Summary::RiskDifference).unwrap() + 0.056).abs() < 1e-12);
        assert_eq!(transform_summary(0.3, 0.3, Summary::LogRiskRatio).unwrap(), 0.0);
        assert!(
            (transform_summary(0.9, 0.3, Summary::LogOddsRatio).unwrap() - 21.0_f64.ln()).abs()
                < 1e-12
        );
        assert!(transform_summary(1.0, 0.5, Summary::LogRiskRatio).is_err());
    }

    #[test]
    fn unadjusted_table2_marginal_odds_ratio() {
        // Two strata collapsed: intervention 14/6, control 6/14.
        let data = binary_table_dataset(&[
            ("A", 1, 1, 9), ("A", 1, 0, 1), ("A", 0, 1, 5), ("A", 0, 0, 5),
            ("B", 1, 1, 5), ("B", 1, 0, 5), ("B", 0, 1, 1), ("B", 0, 0, 9),
        ]);
        let est = unadjusted(&data, marginal(Summary::LogOddsRatio)).unwrap();
        assert!((est.estimate.exp() - 49.0 / 9.0).abs() < 1e-10);
    }

    #[test]
    fn unadjusted_null_case() {
        let data = binary_table_dataset(&[
            ("A", 1, 1, 3), ("A", 1, 0, 7), ("A", 0, 1, 3), ("A", 0, 0, 7),
        ]);
        for s in [Summary::RiskDifference, Summary::LogRiskRatio, Summary::LogOddsRatio] {
            assert_eq!(unadjusted(&data, marginal(s)).unwrap().estimate, 0.0);
        }
    }

    #[test]
    fn unadjusted_zero_cells() {
        let data = binary_table_dataset(&[("A", 1, 1, 5), ("A", 0, 1, 3), ("A", 0, 0, 2)]);
        assert!(matches!(
            unadjusted(&data, marginal(Summary::LogRiskRatio)),
            Err(Error::ZeroCells)
        ));
    }

    #[test]
    fn direct_rejects_marginal_level() {
        let data = binary_table_dataset(&[
            ("A", 1, 1, 3), ("A", 1, 0, 7), ("A", 0, 1, 5), ("A", 0, 0, 5),
        ]);
        let err = direct_adjust(&data, &["x".into()], marginal(Summary::LogOddsRatio), &DirectOptions::default());
        assert!(matches!(err, Err(Error::InvalidEstimand(_))));
    }

    #[test]
    fn iptw_constant_weights_match_unadjusted() {
        // Treatment model with zero covariates and 1:1 allocation: weights
        // are constant, so the IPTW point estimate is the unadjusted one.
        let data = binary_table_dataset(&[
            ("A", 1, 1, 4), ("A", 1, 0, 6), ("A", 0, 1, 7), ("A", 0, 0, 3),
        ]);
        let est = iptw(&data, &[], marginal(Summary::LogOddsRatio), None, &IptwOptions::default())
            .unwrap();
        let un = unadjusted(&data, marginal(Summary::LogOddsRatio)).unwrap();
        assert!(
            (est.estimate - un.estimate).abs() < 1e-7,
            "{} vs {}",
            est.estimate,
            un.estimate
        );
    }

    #[test]
    fn standardize_and_iptw_agree_when_saturated() {
        let data = binary_table_dataset(&[
            ("A", 0, 1, 7), ("A", 0, 0, 13), ("A", 1, 1, 11), ("A", 1, 0, 5),
            ("B", 0, 1, 3), ("B", 0, 0, 17), ("B", 1, 1, 6), ("B", 1, 0, 12),
        ]);
        for s in [Summary::RiskDifference, Summary::LogRiskRatio, Summary::LogOddsRatio] {
            let st = standardize(
                &data,
                &["x".into()],
                marginal(s),
                &StandardizeOptions { interactions: true, drop_unscorable: false },
            )
            .unwrap();
            let ip = iptw(&data, &["x".into()], marginal(s), None, &IptwOptions::default()).unwrap();
            assert!(
                (st.estimate - ip.estimate).abs() < 1e-8,
                "{s:?}: {} vs {}",
                st.estimate,
                ip.estimate
            );
        }
    }
}
