//! Generalized linear model fitting by iteratively reweighted least squares
//! with step-halving, plus model-based and robust (HC0 sandwich) covariance,
//! prediction on new data and convergence/separation/rank diagnostics.
//!
//! Supported family/link pairs: gaussian/identity, binomial/{logit,log,identity}
//! and poisson/log. The non-canonical binomial links are deliberately allowed
//! to fail: when no domain-feasible step exists within the halving budget the
//! fit terminates `NonConverged` rather than returning garbage.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trialdata::{build_matrix, CovariateSchema, Term, TrialDataset};

pub const DEVIANCE_REL_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
pub const MAX_HALVINGS: usize = 20;
pub const RANK_REL_TOL: f64 = 1e-9;
/// Fitted-mean clamp away from the family boundary, for arithmetic only.
const MEAN_EPS: f64 = 1e-10;
/// Boundary proximity that triggers a separation flag.
const SEPARATION_BOUNDARY: f64 = 1e-7;
/// Standardized-coefficient magnitude that triggers a separation flag.
const SEPARATION_COEF: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Binomial,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logit,
    Log,
}

impl Family {
    pub fn allows(self, link: Link) -> bool {
        matches!(
            (self, link),
            (Family::Gaussian, Link::Identity)
                | (Family::Binomial, Link::Logit)
                | (Family::Binomial, Link::Log)
                | (Family::Binomial, Link::Identity)
                | (Family::Poisson, Link::Log)
        )
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub family: Family,
    pub link: Link,
    pub terms: Vec<Term>,
    pub prior_weights: Option<Vec<f64>>,
}

impl ModelSpec {
    pub fn new(family: Family, link: Link, terms: Vec<Term>) -> Result<Self> {
        if !family.allows(link) {
            return Err(Error::InvalidConfig(format!(
                "unsupported family/link pair {family:?}/{link:?}"
            )));
        }
        Ok(Self {
            family,
            link,
            terms,
            prior_weights: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitStatus {
    Converged,
    NonConverged(String),
    /// Converged on a reduced basis after dropping the listed columns.
    RankDeficient(Vec<String>),
}

impl FitStatus {
    pub fn is_usable(&self) -> bool {
        !matches!(self, FitStatus::NonConverged(_))
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub family: Family,
    pub link: Link,
    /// Coefficients for the kept columns, aligned with `labels`.
    pub coefficients: DVector<f64>,
    pub labels: Vec<String>,
    pub model_covariance: DMatrix<f64>,
    pub robust_covariance: Option<DMatrix<f64>>,
    pub deviance: f64,
    pub iterations: usize,
    pub status: FitStatus,
    pub fitted_means: Vec<f64>,
    pub deviance_history: Vec<f64>,
    /// Kept design matrix, response and prior weights, retained for robust
    /// covariance, stacked estimating equations and diagnostics.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub prior_weights: DVector<f64>,
    /// Final IRLS working weights.
    pub irls_weights: DVector<f64>,
    /// Present when fitted through [`fit`]; required by [`predict`].
    pub terms: Option<Vec<Term>>,
    pub schema: Option<CovariateSchema>,
}

impl FitResult {
    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.coefficients[i])
    }

    pub fn se(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.model_covariance[(i, i)].max(0.0).sqrt())
    }

    pub fn robust_se(&self, label: &str) -> Option<f64> {
        let cov = self.robust_covariance.as_ref()?;
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| cov[(i, i)].max(0.0).sqrt())
    }
}

fn inv_link(link: Link, eta: f64) -> f64 {
    match link {
        Link::Identity => eta,
        Link::Logit => {
            let e = eta.clamp(-700.0, 700.0);
            1.0 / (1.0 + (-e).exp())
        }
        Link::Log => eta.exp(),
    }
}

fn apply_link(link: Link, mu: f64) -> f64 {
    match link {
        Link::Identity => mu,
        Link::Logit => (mu / (1.0 - mu)).ln(),
        Link::Log => mu.ln(),
    }
}

/// dmu/deta at a given eta.
fn dmu_deta(link: Link, eta: f64) -> f64 {
    match link {
        Link::Identity => 1.0,
        Link::Logit => {
            let m = inv_link(Link::Logit, eta);
            m * (1.0 - m)
        }
        Link::Log => eta.exp(),
    }
}

fn variance(family: Family, mu: f64) -> f64 {
    match family {
        Family::Gaussian => 1.0,
        Family::Binomial => mu * (1.0 - mu),
        Family::Poisson => mu,
    }
}

/// Is a candidate mean admissible for this family/link? Links whose range is
/// the family's mean domain are always admissible (floating-point saturation
/// at the boundary is handled by clamping, not rejection).
fn step_feasible(family: Family, link: Link, mu: f64) -> bool {
    match (family, link) {
        (Family::Binomial, Link::Logit) => true,
        (Family::Binomial, Link::Log) => mu < 1.0,
        (Family::Binomial, Link::Identity) => mu > 0.0 && mu < 1.0,
        (Family::Poisson, _) => mu.is_finite(),
        (Family::Gaussian, _) => mu.is_finite(),
    }
}

fn clamp_mean(family: Family, mu: f64) -> f64 {
    match family {
        Family::Gaussian => mu,
        Family::Binomial => mu.clamp(MEAN_EPS, 1.0 - MEAN_EPS),
        Family::Poisson => mu.max(MEAN_EPS),
    }
}

fn deviance(family: Family, y: &DVector<f64>, mu: &[f64], w: &DVector<f64>) -> f64 {
    let mut dev = 0.0;
    for i in 0..y.len() {
        let (yi, mi, wi) = (y[i], clamp_mean(family, mu[i]), w[i]);
        dev += match family {
            Family::Gaussian => wi * (yi - mi) * (yi - mi),
            Family::Binomial => {
                let mut d = 0.0;
                if yi > 0.0 {
                    d += yi * (yi / mi).ln();
                }
                if yi < 1.0 {
                    d += (1.0 - yi) * ((1.0 - yi) / (1.0 - mi)).ln();
                }
                2.0 * wi * d
            }
            Family::Poisson => {
                let d = if yi > 0.0 {
                    yi * (yi / mi).ln() - (yi - mi)
                } else {
                    mi
                };
                2.0 * wi * d
            }
        };
    }
    dev
}

/// Weighted least squares via thin QR of sqrt(W)X.
fn wls_solve(x: &DMatrix<f64>, z: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    let n = x.nrows();
    let p = x.ncols();
    let mut wx = x.clone();
    let mut wz = z.clone();
    for i in 0..n {
        let s = w[i].max(0.0).sqrt();
        for j in 0..p {
            wx[(i, j)] *= s;
        }
        wz[i] *= s;
    }
    let qr = wx.qr();
    let qtz = qr.q().transpose() * wz;
    let r = qr.r();
    r.solve_upper_triangular(&qtz)
        .ok_or(Error::SingularInformation)
}

/// Rank-revealing column selection: greedy pivoted orthogonalization with a
/// relative tolerance on the residual column norms. Earlier columns win ties,
/// so a duplicated covariate drops the duplicate, not the original.
fn detect_rank(x: &DMatrix<f64>) -> (Vec<usize>, Vec<usize>) {
    let p = x.ncols();
    let mut residuals: Vec<DVector<f64>> = (0..p).map(|j| x.column(j).into_owned()).collect();
    let base = residuals
        .iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut available: Vec<usize> = (0..p).collect();
    let mut kept = Vec::new();
    while !available.is_empty() {
        let mut pos = 0;
        let mut norm = residuals[available[0]].norm();
        for (i, &k) in available.iter().enumerate().skip(1) {
            let nk = residuals[k].norm();
            if nk > norm {
                pos = i;
                norm = nk;
            }
        }
        let j = available[pos];
        if norm <= RANK_REL_TOL * base {
            break;
        }
        kept.push(j);
        available.remove(pos);
        let q = residuals[j].clone() / norm;
        for &k in &available {
            let proj = q.dot(&residuals[k]);
            residuals[k] -= &q * proj;
        }
    }
    kept.sort_unstable();
    let dropped: Vec<usize> = (0..p).filter(|j| !kept.contains(j)).collect();
    (kept, dropped)
}

fn starting_means(family: Family, y: &DVector<f64>, w: &DVector<f64>) -> Vec<f64> {
    (0..y.len())
        .map(|i| match family {
            Family::Gaussian => y[i],
            Family::Binomial => (w[i] * y[i] + 0.5) / (w[i] + 1.0),
            Family::Poisson => y[i] + 0.1,
        })
        .collect()
}

/// Fit a GLM from an explicit design matrix. Rank-deficient columns are
/// dropped (pivoted QR, relative tolerance 1e-9) and reported through the
/// status; coefficients and covariances cover the kept columns only.
pub fn fit_raw(
    family: Family,
    link: Link,
    x_full: &DMatrix<f64>,
    labels_full: &[String],
    y: &DVector<f64>,
    prior_weights: Option<&[f64]>,
) -> Result<FitResult> {
    if !family.allows(link) {
        return Err(Error::InvalidConfig(format!(
            "unsupported family/link pair {family:?}/{link:?}"
        )));
    }
    let n = x_full.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset("model fitting".into()));
    }
    let w = match prior_weights {
        Some(pw) => {
            if pw.len() != n || pw.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidConfig(
                    "prior weights must be nonnegative, finite and match row count".into(),
                ));
            }
            DVector::from_row_slice(pw)
        }
        None => DVector::from_element(n, 1.0),
    };

    let (kept, dropped) = detect_rank(x_full);
    if kept.is_empty() {
        return Err(Error::SingularInformation);
    }
    let x = x_full.select_columns(kept.iter());
    let labels: Vec<String> = kept.iter().map(|&j| labels_full[j].clone()).collect();
    let dropped_labels: Vec<String> = dropped.iter().map(|&j| labels_full[j].clone()).collect();

    // Non-canonical binomial links start from the logit fit's implied means,
    // which maximises the chance of a legitimate path into the domain.
    let mut mu: Vec<f64> = if family == Family::Binomial && link != Link::Logit {
        match fit_raw(Family::Binomial, Link::Logit, x_full, labels_full, y, prior_weights) {
            Ok(logit_fit) if logit_fit.status.is_usable() => {
                logit_fit.fitted_means.iter().map(|&m| clamp_mean(family, m)).collect()
            }
            _ => starting_means(family, y, &w),
        }
    } else {
        starting_means(family, y, &w)
    };
    mu.iter_mut().for_each(|m| *m = clamp_mean(family, *m));

    let mut eta: Vec<f64> = mu.iter().map(|&m| apply_link(link, m)).collect();
    let mut dev = deviance(family, y, &mu, &w);
    // Accepted coefficient iterates only; the starting value is not one.
    let mut history: Vec<f64> = Vec::new();
    let mut beta: Option<DVector<f64>> = None;
    let mut irls_w = DVector::from_element(n, 1.0);
    let mut status = FitStatus::NonConverged("iteration limit reached".into());
    let mut iterations = 0;
    // After the stopping rule fires, one extra polishing iteration is run:
    // near the optimum Newton steps converge quadratically, so the final
    // iterate is accurate well beyond the deviance tolerance.
    let mut polishing = false;

    for iter in 1..=MAX_ITERATIONS {
        iterations = iter;
        // Working response and weights at the current eta.
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let d = dmu_deta(link, eta[i]).max(MEAN_EPS);
            let v = variance(family, clamp_mean(family, mu[i])).max(MEAN_EPS);
            irls_w[i] = w[i] * d * d / v;
            z[i] = eta[i] + (y[i] - mu[i]) / d;
        }
        let beta_target = wls_solve(&x, &z, &irls_w)?;

        // Fallback point for halving: previous coefficients, or on the first
        // iteration the WLS projection of the starting eta.
        let beta_prev = match &beta {
            Some(b) => b.clone(),
            None => wls_solve(&x, &DVector::from_row_slice(&eta), &irls_w)?,
        };

        let mut accepted = false;
        let mut frac = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let cand = &beta_prev + (&beta_target - &beta_prev) * frac;
            let eta_c: Vec<f64> = (0..n).map(|i| x.row(i).transpose().dot(&cand)).collect();
            let mu_c: Vec<f64> = eta_c.iter().map(|&e| inv_link(link, e)).collect();
            let feasible = mu_c.iter().all(|&m| step_feasible(family, link, m));
            if feasible {
                let dev_c = deviance(family, y, &mu_c, &w);
                // The starting-value deviance is not a coefficient iterate;
                // the non-increase test starts from the second accepted step.
                let first_step = beta.is_none();
                if dev_c.is_finite() && (first_step || dev_c <= dev + 1e-10 * (1.0 + dev.abs())) {
                    let rel_change = (dev - dev_c).abs() / (0.1 + dev.abs());
                    beta = Some(cand);
                    eta = eta_c;
                    mu = mu_c;
                    let converged = rel_change < DEVIANCE_REL_TOL;
                    dev = dev_c;
                    history.push(dev);
                    accepted = true;
                    if converged {
                        status = FitStatus::Converged;
                    }
                    break;
                }
            }
            frac *= 0.5;
        }
        if !accepted {
            if polishing {
                // The polishing step could not improve further; the fit
                // already met the stopping rule.
                break;
            }
            status = FitStatus::NonConverged(if beta.is_none() {
                "no domain-feasible step exists".into()
            } else {
                "step-halving budget exhausted".into()
            });
            break;
        }
        if status == FitStatus::Converged {
            if polishing {
                break;
            }
            polishing = true;
        }
    }

    let beta = match beta {
        Some(b) => b,
        None => {
            // Never found a feasible step; report the failure with the
            // starting state so diagnostics still render.
            return Ok(FitResult {
                family,
                link,
                coefficients: DVector::zeros(x.ncols()),
                labels,
                model_covariance: DMatrix::zeros(x.ncols(), x.ncols()),
                robust_covariance: None,
                deviance: dev,
                iterations,
                status,
                fitted_means: mu,
                deviance_history: history,
                x,
                y: y.clone(),
                prior_weights: w.clone(),
                irls_weights: irls_w,
                terms: None,
                schema: None,
            });
        }
    };

    if status == FitStatus::Converged && !dropped_labels.is_empty() {
        status = FitStatus::RankDeficient(dropped_labels);
    }

    // Model-based covariance: phi * (X'WX)^-1 with the final IRLS weights.
    // phi is 1 for binomial/poisson and the ML dispersion for gaussian.
    let p = x.ncols();
    let mut xtwx = DMatrix::zeros(p, p);
    for i in 0..n {
        let xi = x.row(i).transpose();
        xtwx += &xi * xi.transpose() * irls_w[i];
    }
    let phi = match family {
        Family::Gaussian => dev / n as f64,
        _ => 1.0,
    };
    let model_covariance = xtwx
        .clone()
        .try_inverse()
        .map(|inv| inv * phi)
        .unwrap_or_else(|| DMatrix::from_element(p, p, f64::NAN));

    Ok(FitResult {
        family,
        link,
        coefficients: beta,
        labels,
        model_covariance,
        robust_covariance: None,
        deviance: dev,
        iterations,
        status,
        fitted_means: mu,
        deviance_history: history,
        x,
        y: y.clone(),
        prior_weights: w,
        irls_weights: irls_w,
        terms: None,
        schema: None,
    })
}

/// Fit a model spec against a trial dataset. Rows missing the outcome or any
/// referenced covariate are excluded before fitting; the caller is expected
/// to have decided the analysis population already.
pub fn fit(spec: &ModelSpec, dataset: &TrialDataset) -> Result<FitResult> {
    dataset.check_analyzable()?;
    let dm = dataset.design_matrix(&spec.terms)?;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (mi, &ri) in dm.rows.iter().enumerate() {
        if let Some(out) = dataset.rows()[ri].outcome {
            rows.push(mi);
            y.push(out);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset("all rows missing outcome".into()));
    }
    let x = dm.x.select_rows(rows.iter());
    let pw = spec.prior_weights.as_ref().map(|pw| {
        // Prior weights are aligned with the dataset; select the fitted rows.
        rows.iter()
            .map(|&mi| pw[dm.rows[mi]])
            .collect::<Vec<f64>>()
    });
    let mut fit = fit_raw(
        spec.family,
        spec.link,
        &x,
        &dm.labels,
        &DVector::from_row_slice(&y),
        pw.as_deref(),
    )?;
    fit.terms = Some(spec.terms.clone());
    fit.schema = Some(dataset.schema().clone());
    Ok(fit)
}

/// HC0 sandwich A^-1 B A^-1 with A the expected information and B the outer
/// product of per-row score contributions (prior weights included).
pub fn robust_covariance(fit: &FitResult) -> Result<DMatrix<f64>> {
    if !fit.status.is_usable() {
        return Err(Error::NonConverged(
            "robust covariance requires a converged fit".into(),
        ));
    }
    let n = fit.x.nrows();
    let p = fit.x.ncols();
    if n <= p {
        return Err(Error::SingularInformation);
    }
    let mut a = DMatrix::zeros(p, p);
    let mut b = DMatrix::zeros(p, p);
    for i in 0..n {
        let xi = fit.x.row(i).transpose();
        a += &xi * xi.transpose() * fit.irls_weights[i];
        let mu = clamp_mean(fit.family, fit.fitted_means[i]);
        let eta = apply_link(fit.link, mu);
        let s = fit.prior_weights[i] * (fit.y[i] - mu) * dmu_deta(fit.link, eta)
            / variance(fit.family, mu).max(MEAN_EPS);
        let si = &xi * s;
        b += &si * si.transpose();
    }
    let a_inv = a.try_inverse().ok_or(Error::SingularInformation)?;
    Ok(&a_inv * b * &a_inv)
}

/// Attach the robust covariance to a fit.
pub fn with_robust(mut fit: FitResult) -> Result<FitResult> {
    fit.robust_covariance = Some(robust_covariance(&fit)?);
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictScale {
    Linear,
    Response,
}

/// Predict for new data, optionally forcing the treatment indicator (the
/// standardisation counterfactual). Categorical levels are coded against the
/// fitted model's schema; a level absent from the fit is an error.
pub fn predict_with_treat(
    fit: &FitResult,
    newdata: &TrialDataset,
    force_treat: Option<u8>,
    scale: PredictScale,
) -> Result<PredictionResult> {
    if !fit.status.is_usable() {
        return Err(Error::NonConverged("prediction requires a converged fit".into()));
    }
    let (terms, schema) = match (&fit.terms, &fit.schema) {
        (Some(t), Some(s)) => (t, s),
        _ => {
            return Err(Error::InvalidConfig(
                "fit carries no term/schema metadata; refit through glm::fit".into(),
            ))
        }
    };
    let dm = build_matrix(newdata, terms, schema, force_treat)?;
    // Align with the kept columns of the fit.
    let col_idx: Vec<usize> = fit
        .labels
        .iter()
        .map(|l| {
            dm.labels
                .iter()
                .position(|dl| dl == l)
                .expect("kept label missing from rebuilt design matrix")
        })
        .collect();
    let mut values = Vec::with_capacity(dm.rows.len());
    for i in 0..dm.x.nrows() {
        let mut eta = 0.0;
        for (k, &j) in col_idx.iter().enumerate() {
            eta += dm.x[(i, j)] * fit.coefficients[k];
        }
        values.push(match scale {
            PredictScale::Linear => eta,
            PredictScale::Response => inv_link(fit.link, eta),
        });
    }
    Ok(PredictionResult {
        values,
        rows: dm.rows,
        unscorable: dm.excluded,
    })
}

pub fn predict(fit: &FitResult, newdata: &TrialDataset, scale: PredictScale) -> Result<PredictionResult> {
    predict_with_treat(fit, newdata, None, scale)
}

#[derive(Debug, Clone)]
pub struct PredictionResult {
    pub values: Vec<f64>,
    /// Dataset row indices the predictions correspond to.
    pub rows: Vec<usize>,
    /// Dataset row indices that could not be scored (missing covariates).
    pub unscorable: Vec<usize>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DiagnosticsReport {
    pub separation_suspected: bool,
    /// Labels whose standardized coefficient magnitude exceeds the threshold.
    pub offending_labels: Vec<String>,
    pub boundary_mean_count: usize,
    pub max_standardized_coefficient: f64,
    pub dropped_columns: Vec<String>,
    pub iterations: usize,
    pub converged: bool,
    pub non_convergence_reason: Option<String>,
}

/// Heuristic separation screen: fitted means hugging the domain boundary or
/// standardized coefficients (|beta| times the column SD) above 10.
pub fn diagnose(fit: &FitResult) -> DiagnosticsReport {
    let mut report = DiagnosticsReport {
        iterations: fit.iterations,
        converged: fit.status.is_usable(),
        ..Default::default()
    };
    match &fit.status {
        FitStatus::RankDeficient(d) => report.dropped_columns = d.clone(),
        FitStatus::NonConverged(r) => report.non_convergence_reason = Some(r.clone()),
        FitStatus::Converged => {}
    }
    if fit.family != Family::Gaussian {
        report.boundary_mean_count = fit
            .fitted_means
            .iter()
            .filter(|&&m| match fit.family {
                Family::Binomial => m < SEPARATION_BOUNDARY || m > 1.0 - SEPARATION_BOUNDARY,
                Family::Poisson => m < SEPARATION_BOUNDARY,
                Family::Gaussian => false,
            })
            .count();
    }
    let n = fit.x.nrows() as f64;
    for (j, label) in fit.labels.iter().enumerate() {
        if label == "(intercept)" {
            continue;
        }
        let col = fit.x.column(j);
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let std_coef = fit.coefficients[j].abs() * sd;
        if std_coef > report.max_standardized_coefficient {
            report.max_standardized_coefficient = std_coef;
        }
        if std_coef > SEPARATION_COEF {
            report.offending_labels.push(label.clone());
        }
    }
    report.separation_suspected =
        report.boundary_mean_count > 0 || !report.offending_labels.is_empty();
    report
}

impl std::fmt::Display for DiagnosticsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "converged: {} (iterations: {})",
            self.converged, self.iterations
        )?;
        if let Some(r) = &self.non_convergence_reason {
            writeln!(f, "non-convergence reason: {r}")?;
        }
        if !self.dropped_columns.is_empty() {
            writeln!(f, "rank-deficient; dropped: {}", self.dropped_columns.join(", "))?;
        }
        if self.separation_suspected {
            writeln!(
                f,
                "separation suspected (boundary means: {}, max standardized coefficient: {:.3})",
                self.boundary_mean_count, self.max_standardized_coefficient
            )?;
            if !self.offending_labels.is_empty() {
                writeln!(f, "offending terms: {}", self.offending_labels.join(", "))?;
            }
        }
        Ok(())
    }
}

/// Max-norm of the weighted score X'W(y - mu) at the fit; near zero at a
/// genuine maximum for canonical links.
pub fn score_max_norm(fit: &FitResult) -> f64 {
    let n = fit.x.nrows();
    let p = fit.x.ncols();
    let mut score = DVector::zeros(p);
    for i in 0..n {
        let mu = clamp_mean(fit.family, fit.fitted_means[i]);
        let eta = apply_link(fit.link, mu);
        let s = fit.prior_weights[i] * (fit.y[i] - mu) * dmu_deta(fit.link, eta)
            / variance(fit.family, mu).max(MEAN_EPS);
        score += fit.x.row(i).transpose() * s;
    }
    score.amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix_from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
        let n = rows.len();
        let p = rows[0].len();
        DMatrix::from_fn(n, p, |i, j| rows[i][j])
    }

    #[test]
    fn intercept_only_logistic_half_events() {
        // 10 events in 20 -> intercept logit(0.5) = 0.
        let x = DMatrix::from_element(20, 1, 1.0);
        let y = DVector::from_fn(20, |i, _| if i < 10 { 1.0 } else { 0.0 });
        let fit = fit_raw(Family::Binomial, Link::Logit, &x, &["(intercept)".into()], &y, None)
            .unwrap();
        assert_eq!(fit.status, FitStatus::Converged);
        assert!(fit.coefficients[0].abs() < 1e-9);
    }

    #[test]
    fn gaussian_identity_matches_closed_form() {
        let x = matrix_from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 2.0],
            vec![1.0, 3.0],
            vec![1.0, 4.0],
        ]);
        let y = DVector::from_row_slice(&[1.1, 1.9, 3.2, 3.8, 5.1]);
        let fit = fit_raw(
            Family::Gaussian,
            Link::Identity,
            &x,
            &["(intercept)".into(), "x".into()],
            &y,
            None,
        )
        .unwrap();
        assert_eq!(fit.status, FitStatus::Converged);
        // Closed form (X'X)^-1 X'y and sigma2_ML (X'X)^-1.
        let xtx = x.transpose() * &x;
        let beta = xtx.clone().try_inverse().unwrap() * x.transpose() * &y;
        assert!((fit.coefficients.clone() - beta).amax() < 1e-10);
        let resid = &y - &x * &fit.coefficients;
        let sigma2 = resid.norm_squared() / y.len() as f64;
        let cov = xtx.try_inverse().unwrap() * sigma2;
        let rel = (&fit.model_covariance - &cov).amax() / cov.amax();
        assert!(rel < 1e-10, "relative error {rel}");
    }

    #[test]
    fn score_equations_hold_at_convergence() {
        let x = matrix_from_rows(&[
            vec![1.0, 0.2],
            vec![1.0, 1.4],
            vec![1.0, -0.7],
            vec![1.0, 2.0],
            vec![1.0, 0.9],
            vec![1.0, -1.2],
            vec![1.0, 0.4],
            vec![1.0, 1.1],
        ]);
        let y = DVector::from_row_slice(&[0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let fit = fit_raw(Family::Binomial, Link::Logit, &x, &["(intercept)".into(), "x".into()], &y, None)
            .unwrap();
        assert_eq!(fit.status, FitStatus::Converged);
        assert!(score_max_norm(&fit) < 1e-6);
    }

    #[test]
    fn deviance_non_increasing() {
        let x = matrix_from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ]);
        let y = DVector::from_row_slice(&[0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let fit = fit_raw(Family::Binomial, Link::Logit, &x, &["(intercept)".into(), "x".into()], &y, None)
            .unwrap();
        for win in fit.deviance_history.windows(2) {
            assert!(win[1] <= win[0] + 1e-10 * (1.0 + win[0].abs()));
        }
    }

    #[test]
    fn saturated_logistic_reproduces_cell_proportions() {
        // 2x2x2 cells with nonzero counts; fully interacted model.
        let cells = [
            (0.0, 0.0, 7usize, 3usize),
            (0.0, 1.0, 5, 9),
            (1.0, 0.0, 2, 11),
            (1.0, 1.0, 8, 4),
        ];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for &(xv, z, ev, nev) in &cells {
            for k in 0..(ev + nev) {
                rows.push(vec![1.0, z, xv, z * xv]);
                y.push(if k < ev { 1.0 } else { 0.0 });
            }
        }
        let labels: Vec<String> = ["(intercept)", "z", "x", "z:x"].iter().map(|s| s.to_string()).collect();
        let fit = fit_raw(
            Family::Binomial,
            Link::Logit,
            &matrix_from_rows(&rows),
            &labels,
            &DVector::from_row_slice(&y),
            None,
        )
        .unwrap();
        assert_eq!(fit.status, FitStatus::Converged);
        let mut idx = 0;
        for &(_, _, ev, nev) in &cells {
            let expect = ev as f64 / (ev + nev) as f64;
            for _ in 0..(ev + nev) {
                assert!((fit.fitted_means[idx] - expect).abs() < 1e-8);
                idx += 1;
            }
        }
    }

    #[test]
    fn duplicated_column_reported_rank_deficient() {
        let x = matrix_from_rows(&[
            vec![1.0, 1.0, 1.0],
            vec![1.0, 0.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ]);
        let labels: Vec<String> = ["(intercept)", "x", "x_dup"].iter().map(|s| s.to_string()).collect();
        let y = DVector::from_row_slice(&[1.0, 0.0, 0.0, 1.0]);
        let fit = fit_raw(Family::Binomial, Link::Logit, &x, &labels, &y, None).unwrap();
        match &fit.status {
            FitStatus::RankDeficient(d) => assert_eq!(d.len(), 1),
            s => panic!("expected rank deficiency, got {s:?}"),
        }
    }

    #[test]
    fn separation_flagged_on_perfectly_separated_data() {
        let x = matrix_from_rows(&[
            vec![1.0, -2.0],
            vec![1.0, -1.0],
            vec![1.0, -0.5],
            vec![1.0, 0.5],
            vec![1.0, 1.0],
            vec![1.0, 2.0],
        ]);
        let y = DVector::from_row_slice(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let fit = fit_raw(Family::Binomial, Link::Logit, &x, &["(intercept)".into(), "x".into()], &y, None)
            .unwrap();
        let report = diagnose(&fit);
        assert!(report.separation_suspected);
    }

    #[test]
    fn clean_balanced_fit_not_flagged() {
        let x = matrix_from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        ]);
        let y = DVector::from_row_slice(&[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let fit = fit_raw(Family::Binomial, Link::Logit, &x, &["(intercept)".into(), "x".into()], &y, None)
            .unwrap();
        let report = diagnose(&fit);
        assert!(!report.separation_suspected);
    }

    #[test]
    fn robust_covariance_singular_on_degenerate_fit() {
        // A single row drives the binomial mean to the boundary; the
        // information collapses.
        let x = DMatrix::from_element(1, 1, 1.0);
        let y = DVector::from_row_slice(&[1.0]);
        let fit = fit_raw(Family::Binomial, Link::Logit, &x, &["(intercept)".into()], &y, None)
            .unwrap();
        assert!(matches!(robust_covariance(&fit), Err(_)));
    }
}
