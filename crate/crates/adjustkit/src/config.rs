//! Analysis configuration (the statistical-analysis-plan artifact) and the
//! pipeline that executes it: load → missing-data strategy → estimator →
//! inference. Shared by the command-line front end and the C ABI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    direct_adjust, iptw, standardize, unadjusted, DirectOptions, EffectEstimate, EstimandSpec,
    IptwOptions, Level, Method, RiskRatioEngine, StandardizeOptions, Summary, WeightSet,
};
use crate::inference::{bootstrap, test_based_ci, BootstrapPlan, Resampling};
use crate::missing::{ipmw_weights, mean_impute, mi_by_arm, missing_indicator, pooled_effect, rubin_combine};
use crate::trialdata::{SchemaConfig, TrialDataset};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodConfig {
    pub kind: Method,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Standardisation: include treatment-by-covariate interactions.
    #[serde(default)]
    pub interactions: bool,
    /// Standardisation: drop unscorable standardisation-population rows.
    #[serde(default)]
    pub drop_unscorable: bool,
    /// Direct adjustment of the log risk ratio: model engine.
    #[serde(default)]
    pub rr_engine: RiskRatioEngine,
    /// IPTW: skip the joint-estimating-equation variance correction.
    #[serde(default)]
    pub weights_as_fixed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingStrategy {
    #[default]
    CompleteCase,
    MeanImpute,
    MissingIndicator,
    Ipmw,
    MiByArm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingConfig {
    #[serde(default)]
    pub strategy: MissingStrategy,
    /// Covariates the strategy operates on; defaults to the method's
    /// covariates.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    /// Multiple imputation: number of imputed datasets.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Multiple imputation: base seed.
    #[serde(default)]
    pub seed: u64,
}

fn default_m() -> usize {
    20
}

impl Default for MissingConfig {
    fn default() -> Self {
        Self {
            strategy: MissingStrategy::CompleteCase,
            covariates: None,
            m: default_m(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceKind {
    #[default]
    Wald,
    TestBased,
    Bootstrap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceConfig {
    #[serde(default)]
    pub method: InferenceKind,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_resampling")]
    pub resampling: Resampling,
    #[serde(default)]
    pub strata: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub approximate_minimisation: bool,
}

fn default_replicates() -> usize {
    1000
}

fn default_resampling() -> Resampling {
    Resampling::Simple
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            method: InferenceKind::Wald,
            replicates: default_replicates(),
            resampling: default_resampling(),
            strata: Vec::new(),
            seed: 0,
            approximate_minimisation: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// CSV column roles. Optional because datasets can also arrive already
    /// constructed (builtin datasets, the C ABI's dataset handles).
    #[serde(default)]
    pub schema: Option<SchemaConfig>,
    pub estimand: EstimandSpec,
    pub method: MethodConfig,
    #[serde(default)]
    pub missing: MissingConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
}

impl AnalysisConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("analysis config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field validation of the estimand / method / missing-data /
    /// inference combination.
    pub fn validate(&self) -> Result<()> {
        match (self.estimand.level, self.method.kind) {
            (Level::Conditional, Method::Direct) => {}
            (Level::Conditional, other) => {
                return Err(Error::InvalidConfig(format!(
                    "a conditional summary requires direct adjustment, not {other:?}"
                )))
            }
            (Level::Marginal, Method::Direct) => {
                return Err(Error::InvalidConfig(
                    "direct adjustment targets a conditional summary; choose \
                     standardisation, iptw or unadjusted for a marginal one"
                        .into(),
                ))
            }
            (Level::Marginal, _) => {}
        }
        if matches!(
            self.missing.strategy,
            MissingStrategy::MeanImpute | MissingStrategy::MissingIndicator
        ) && self.estimand.level == Level::Conditional
            && !self.estimand.summary.collapsible()
        {
            return Err(Error::InvalidConfig(
                "covariate imputation strategies cannot target a conditional \
                 non-collapsible summary"
                    .into(),
            ));
        }
        if self.missing.strategy == MissingStrategy::Ipmw && self.method.kind != Method::Iptw {
            return Err(Error::InvalidConfig(
                "missingness weighting (ipmw) pairs with the iptw method".into(),
            ));
        }
        if self.missing.strategy == MissingStrategy::MiByArm {
            if self.missing.m < 2 {
                return Err(Error::InvalidConfig(
                    "mi_by_arm needs at least 2 imputations".into(),
                ));
            }
            if self.inference.method == InferenceKind::Bootstrap {
                return Err(Error::InvalidConfig(
                    "bootstrap inference over multiple imputation is not supported; \
                     use Rubin's rules (wald)"
                        .into(),
                ));
            }
        }
        if self.inference.method == InferenceKind::Bootstrap && self.inference.replicates < 100 {
            return Err(Error::InvalidConfig(
                "bootstrap needs at least 100 replicates".into(),
            ));
        }
        if self.method.kind == Method::Unadjusted && !self.method.covariates.is_empty() {
            return Err(Error::InvalidConfig(
                "the unadjusted method takes no covariates".into(),
            ));
        }
        Ok(())
    }

    fn missing_covariates(&self) -> Vec<String> {
        self.missing
            .covariates
            .clone()
            .unwrap_or_else(|| self.method.covariates.clone())
    }
}

/// The pipeline's output: the estimate plus run-level diagnostics and the
/// provenance of every seed that influenced the numbers.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisOutput {
    pub result: EffectEstimate,
    pub diagnostics: Vec<String>,
    pub seed_provenance: Vec<String>,
}

fn apply_estimator(
    config: &AnalysisConfig,
    data: &TrialDataset,
    missingness_weights: Option<&WeightSet>,
) -> Result<EffectEstimate> {
    let covs = &config.method.covariates;
    match config.method.kind {
        Method::Direct => direct_adjust(
            data,
            covs,
            config.estimand,
            &DirectOptions {
                rr_engine: config.method.rr_engine,
            },
        ),
        Method::Standardisation => standardize(
            data,
            covs,
            config.estimand,
            &StandardizeOptions {
                interactions: config.method.interactions,
                drop_unscorable: config.method.drop_unscorable,
            },
        ),
        Method::Iptw => iptw(
            data,
            covs,
            config.estimand,
            missingness_weights,
            &IptwOptions {
                weights_as_fixed: config.method.weights_as_fixed,
            },
        ),
        Method::Unadjusted => unadjusted(data, config.estimand),
    }
}

/// One pass of missing-data strategy + estimator. Used directly and as the
/// bootstrap replicate body.
fn run_once(config: &AnalysisConfig, data: &TrialDataset) -> Result<EffectEstimate> {
    match config.missing.strategy {
        MissingStrategy::CompleteCase => apply_estimator(config, data, None),
        MissingStrategy::MeanImpute => {
            let mut d = data.clone();
            for c in config.missing_covariates() {
                d = mean_impute(&d, &c)?;
            }
            apply_estimator(config, &d, None)
        }
        MissingStrategy::MissingIndicator => {
            let mut d = data.clone();
            for c in config.missing_covariates() {
                d = missing_indicator(&d, &c)?;
            }
            apply_estimator(config, &d, None)
        }
        MissingStrategy::Ipmw => {
            let w = ipmw_weights(data, &config.missing_covariates())?;
            apply_estimator(config, data, Some(&w))
        }
        MissingStrategy::MiByArm => {
            let completed = mi_by_arm(
                data,
                &config.missing_covariates(),
                config.missing.m,
                config.missing.seed,
            )?;
            let mut points = Vec::with_capacity(completed.len());
            let mut diagnostics = Vec::new();
            for d in &completed {
                let est = apply_estimator(config, d, None)?;
                for note in est.diagnostics {
                    if !diagnostics.contains(&note) {
                        diagnostics.push(note);
                    }
                }
                points.push((est.estimate, est.se));
            }
            let pooled = rubin_combine(&points)?;
            if config.method.kind == Method::Iptw {
                diagnostics.push(
                    "Rubin's variance may be inconsistent for IPTW after multiple \
                     imputation (uncongenial models)"
                        .into(),
                );
            }
            Ok(pooled_effect(
                config.estimand,
                config.method.kind,
                &pooled,
                diagnostics,
            ))
        }
    }
}

/// Execute the configured pipeline on a loaded dataset.
pub fn run_analysis(config: &AnalysisConfig, data: &TrialDataset) -> Result<AnalysisOutput> {
    config.validate()?;
    let mut result = run_once(config, data)?;
    let mut seed_provenance = Vec::new();
    if config.missing.strategy == MissingStrategy::MiByArm {
        seed_provenance.push(format!(
            "mi_by_arm: base seed {}, one generator stream per (imputation, arm)",
            config.missing.seed
        ));
    }
    match config.inference.method {
        InferenceKind::Wald => {}
        InferenceKind::TestBased => {
            let z = result.estimate / result.se;
            result.ci = test_based_ci(result.estimate, z, 0.95)?;
        }
        InferenceKind::Bootstrap => {
            let plan = BootstrapPlan {
                replicates: config.inference.replicates,
                resampling: config.inference.resampling,
                strata: config.inference.strata.clone(),
                seed: config.inference.seed,
                approximate_minimisation: config.inference.approximate_minimisation,
            };
            let boot = bootstrap(data, |d| run_once(config, d).map(|e| e.estimate), &plan, 0.95)?;
            result.se = boot.se;
            result.ci = boot.ci;
            if boot.failures > 0 {
                result
                    .diagnostics
                    .push(format!("bootstrap: {} failed replicates", boot.failures));
            }
            seed_provenance.push(format!(
                "bootstrap: seed {}, one generator stream per replicate",
                config.inference.seed
            ));
        }
    }
    let diagnostics = result.diagnostics.clone();
    Ok(AnalysisOutput {
        result,
        diagnostics,
        seed_provenance,
    })
}

/// Ratio summaries are estimated and combined on the log scale; the CLI
/// exponentiates for display.
pub fn is_log_scale(summary: Summary) -> bool {
    !matches!(summary, Summary::RiskDifference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Population;
    use crate::scenarios::{appendix1_full_data, appendix1_missing_data};
    use crate::trialdata::{CovariateDecl, CovariateKind, OutcomeKind};

    fn schema() -> SchemaConfig {
        SchemaConfig {
            id: "id".into(),
            treat: "treat".into(),
            outcome: "y".into(),
            outcome_kind: OutcomeKind::Binary,
            covariates: vec![CovariateDecl {
                name: "x".into(),
                kind: CovariateKind::Categorical,
                levels: None,
            }],
        }
    }

    fn base_config(kind: Method, level: Level) -> AnalysisConfig {
        AnalysisConfig {
            schema: Some(schema()),
            estimand: EstimandSpec {
                summary: Summary::LogOddsRatio,
                level,
                population: Population::CompleteCase,
            },
            method: MethodConfig {
                kind,
                covariates: vec!["x".into()],
                interactions: false,
                drop_unscorable: false,
                rr_engine: RiskRatioEngine::default(),
                weights_as_fixed: false,
            },
            missing: MissingConfig::default(),
            inference: InferenceConfig::default(),
        }
    }

    #[test]
    fn conditional_requires_direct() {
        let cfg = base_config(Method::Standardisation, Level::Conditional);
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let cfg = base_config(Method::Direct, Level::Marginal);
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        assert!(base_config(Method::Direct, Level::Conditional).validate().is_ok());
    }

    #[test]
    fn mean_impute_conditional_logor_rejected() {
        let mut cfg = base_config(Method::Direct, Level::Conditional);
        cfg.missing.strategy = MissingStrategy::MeanImpute;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        // Collapsible summary is fine.
        cfg.estimand.summary = Summary::RiskDifference;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn pipeline_standardisation_on_embedded_data() {
        let cfg = base_config(Method::Standardisation, Level::Marginal);
        let out = run_analysis(&cfg, &appendix1_full_data()).unwrap();
        assert!((out.result.estimate.exp() - 0.698).abs() < 5e-4);
    }

    #[test]
    fn pipeline_iptw_with_ipmw_recovers_all_randomised() {
        let mut cfg = base_config(Method::Iptw, Level::Marginal);
        cfg.estimand.population = Population::AllRandomised;
        cfg.missing.strategy = MissingStrategy::Ipmw;
        let out = run_analysis(&cfg, &appendix1_missing_data()).unwrap();
        assert!((out.result.estimate.exp() - 0.698).abs() < 1e-3);
    }

    #[test]
    fn pipeline_bootstrap_inference_runs() {
        let mut cfg = base_config(Method::Standardisation, Level::Marginal);
        cfg.inference.method = InferenceKind::Bootstrap;
        cfg.inference.replicates = 120;
        cfg.inference.seed = 5;
        let out = run_analysis(&cfg, &appendix1_full_data()).unwrap();
        assert!(out.result.se > 0.0);
        assert!(out
            .seed_provenance
            .iter()
            .any(|s| s.contains("bootstrap: seed 5")));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let text = r#"
[schema]
id = "id"
treat = "treat"
outcome = "y"
outcome_kind = "binary"

[[schema.covariates]]
name = "x"
kind = "categorical"

[estimand]
summary = "log_odds_ratio"
level = "marginal"
population = "complete_case"

[method]
kind = "standardisation"
covariates = ["x"]

[inference]
method = "wald"
"#;
        let cfg = AnalysisConfig::from_toml(text).unwrap();
        assert_eq!(cfg.method.kind, Method::Standardisation);
        let echoed = toml::to_string(&cfg).unwrap();
        let again = AnalysisConfig::from_toml(&echoed).unwrap();
        assert_eq!(again.estimand, cfg.estimand);
    }
}
