//! Command-line front end: run analyses from CSV + TOML config, run the
//! built-in demonstration scenarios, run simulations, or just validate a
//! config.
//!
//! Exit codes are a contract: 0 success, 2 configuration error, 3 data
//! error, 4 estimation failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use adjustkit::config::{is_log_scale, run_analysis, AnalysisConfig};
use adjustkit::design::{simulate_logistic, simulate_quadratic, LogisticScenario, QuadraticScenario, XDesign};
use adjustkit::error::{Error, ErrorClass};
use adjustkit::estimators::{EstimandSpec, Level, Method, Population, Summary};
use adjustkit::inference::replicate_rng;
use adjustkit::scenarios;
use adjustkit::trialdata::{DesignInfo, TrialDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Parser)]
#[command(name = "adjustkit", version, about = "Covariate adjustment for randomised trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write output to a file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an analysis described by a TOML config on a CSV dataset.
    Analyze {
        /// CSV path, or builtin:appendix1 | builtin:appendix1_missing |
        /// builtin:table2.
        #[arg(long)]
        data: String,
        /// Analysis configuration (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a built-in demonstration scenario.
    Demo {
        /// collapsibility | appendix1 | misspecification | balance
        name: String,
    },
    /// Simulate replicated trials and summarise estimator behaviour.
    Simulate {
        /// Simulation configuration (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Validate an analysis configuration without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help/version requests are successes; everything else is a
            // configuration error.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Ok(threads) = std::env::var("ADJUSTKIT_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    match run(&cli) {
        Ok(rendered) => {
            if emit(&cli, &rendered).is_err() {
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(RunFailure::Estimation(err, rendered)) => {
            // Structured failure output (the diagnostic taxonomy), then the
            // estimation exit code.
            let _ = emit(&cli, &rendered);
            eprintln!("error: {err}");
            ExitCode::from(4)
        }
        Err(RunFailure::Plain(err)) => {
            eprintln!("error: {err}");
            let code = match err.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Estimation => 4,
            };
            ExitCode::from(code)
        }
        Err(RunFailure::DemoRowsFailed(rendered)) => {
            let _ = emit(&cli, &rendered);
            eprintln!("error: one or more reference rows failed");
            ExitCode::from(4)
        }
    }
}

enum RunFailure {
    Plain(Error),
    /// An estimation failure with structured output already rendered.
    Estimation(Error, String),
    DemoRowsFailed(String),
}

impl From<Error> for RunFailure {
    fn from(e: Error) -> Self {
        RunFailure::Plain(e)
    }
}

fn emit(cli: &Cli, rendered: &str) -> std::io::Result<()> {
    let mut text = rendered.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match &cli.out {
        Some(path) => std::fs::write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<String, RunFailure> {
    match &cli.command {
        Command::Analyze { data, config } => cmd_analyze(cli, data, config),
        Command::Demo { name } => cmd_demo(cli, name),
        Command::Simulate { config } => cmd_simulate(cli, config),
        Command::ValidateConfig { config } => cmd_validate(cli, config),
    }
}

fn load_config(path: &PathBuf) -> Result<AnalysisConfig, Error> {
    let text = std::fs::read_to_string(path)?;
    AnalysisConfig::from_toml(&text)
}

fn load_data(source: &str, config: &AnalysisConfig) -> Result<(TrialDataset, Option<String>), Error> {
    match source {
        "builtin:appendix1" => Ok((
            scenarios::appendix1_full_data(),
            Some("builtin dataset: schema section of the config is ignored".into()),
        )),
        "builtin:appendix1_missing" => Ok((
            scenarios::appendix1_missing_data(),
            Some("builtin dataset: schema section of the config is ignored".into()),
        )),
        "builtin:table2" => Ok((
            scenarios::table2_data(),
            Some("builtin dataset: schema section of the config is ignored".into()),
        )),
        other if other.starts_with("builtin:") => Err(Error::InvalidConfig(format!(
            "unknown builtin dataset `{other}`"
        ))),
        path => {
            let schema = config.schema.as_ref().ok_or_else(|| {
                Error::InvalidConfig(
                    "loading a CSV dataset requires a [schema] section in the config".into(),
                )
            })?;
            Ok((TrialDataset::load_csv(std::path::Path::new(path), schema)?, None))
        }
    }
}

/// The display-scale estimate: exponentiated for ratio summaries.
fn display_value(summary: Summary, v: f64) -> f64 {
    if is_log_scale(summary) {
        v.exp()
    } else {
        v
    }
}

fn summary_name(summary: Summary) -> &'static str {
    match summary {
        Summary::RiskDifference => "risk difference",
        Summary::LogRiskRatio => "risk ratio",
        Summary::LogOddsRatio => "odds ratio",
    }
}

fn cmd_analyze(cli: &Cli, data: &str, config_path: &PathBuf) -> Result<String, RunFailure> {
    let mut config = load_config(config_path)?;
    if let Some(seed) = cli.seed {
        config.missing.seed = seed;
        config.inference.seed = seed;
    }
    let (dataset, note) = load_data(data, &config)?;
    let output = match run_analysis(&config, &dataset) {
        Ok(o) => o,
        Err(err) => {
            // Estimation failures still print the structured taxonomy.
            if matches!(err.class(), ErrorClass::Estimation) {
                let rendered = render_failure(cli, &config, data, &err);
                return Err(RunFailure::Estimation(err, rendered));
            }
            return Err(err.into());
        }
    };
    let summary = config.estimand.summary;
    let mut diagnostics = output.diagnostics.clone();
    if let Some(n) = note {
        diagnostics.push(n);
    }
    match cli.format {
        Format::Json => {
            let mut result = serde_json::to_value(&output.result).unwrap();
            result["display_estimate"] = json!(display_value(summary, output.result.estimate));
            result["display_ci"] = json!([
                display_value(summary, output.result.ci.lower),
                display_value(summary, output.result.ci.upper)
            ]);
            let doc = json!({
                "command": "analyze",
                "config": serde_json::to_value(&config).unwrap(),
                "data": data,
                "results": [result],
                "diagnostics": diagnostics,
                "seed_provenance": output.seed_provenance,
            });
            Ok(doc.to_string())
        }
        Format::Text => {
            let r = &output.result;
            let mut s = String::new();
            s.push_str(&format!(
                "{} ({:?}, {:?}/{:?}): {:.3} (se {:.3})\n",
                summary_name(summary),
                r.method,
                r.estimand.level,
                r.estimand.population,
                display_value(summary, r.estimate),
                r.se,
            ));
            s.push_str(&format!(
                "95% CI ({:.3}, {:.3}) [{:?}], p = {:.4}\n",
                display_value(summary, r.ci.lower),
                display_value(summary, r.ci.upper),
                r.ci.method,
                r.p,
            ));
            if is_log_scale(summary) {
                s.push_str(&format!(
                    "log-scale estimate {:.4} (se {:.4})\n",
                    r.estimate, r.se
                ));
            }
            for d in &diagnostics {
                s.push_str(&format!("note: {d}\n"));
            }
            for p in &output.seed_provenance {
                s.push_str(&format!("seed: {p}\n"));
            }
            Ok(s)
        }
    }
}

fn render_failure(cli: &Cli, config: &AnalysisConfig, data: &str, err: &Error) -> String {
    let taxonomy = match err {
        Error::NonConverged(_) => "NonConverged",
        Error::PredictionGap { .. } => "PredictionGap",
        Error::SingularInformation => "SingularInformation",
        Error::ZeroCells => "ZeroCells",
        Error::PerfectPredictionOfMissingness => "PerfectPredictionOfMissingness",
        Error::TooManyFailures { .. } => "TooManyFailures",
        _ => "EstimationFailure",
    };
    match cli.format {
        Format::Json => json!({
            "command": "analyze",
            "config": serde_json::to_value(config).unwrap(),
            "data": data,
            "results": [],
            "diagnostics": [format!("{taxonomy}: {err}")],
            "seed_provenance": [],
        })
        .to_string(),
        Format::Text => format!("estimation failed: {taxonomy}: {err}\n"),
    }
}

fn cmd_demo(cli: &Cli, name: &str) -> Result<String, RunFailure> {
    let report = scenarios::run(name)?;
    let rendered = match cli.format {
        Format::Json => json!({
            "command": "demo",
            "config": {"scenario": name},
            "results": serde_json::to_value(&report.rows).unwrap(),
            "diagnostics": [],
            "seed_provenance": [],
        })
        .to_string(),
        Format::Text => report.to_string(),
    };
    if report.all_pass() {
        Ok(rendered)
    } else {
        Err(RunFailure::DemoRowsFailed(rendered))
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum GeneratorConfig {
    Logistic {
        intercept: f64,
        treatment_coef: f64,
        #[serde(default)]
        covariate_coefs: Vec<f64>,
        #[serde(default)]
        covariate_prevalence: Vec<f64>,
        n: usize,
    },
    Quadratic {
        alpha: f64,
        theta: f64,
        gamma: f64,
        x_interval: (f64, f64),
        n_per_arm: usize,
        #[serde(default)]
        uniform: bool,
    },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
struct SimAnalysis {
    method: Method,
    summary: Summary,
    #[serde(default)]
    covariates: Vec<String>,
    #[serde(default)]
    interactions: bool,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
struct SimulateConfig {
    generator: GeneratorConfig,
    scheme: DesignInfo,
    replications: usize,
    #[serde(default)]
    seed: u64,
    /// True value on the estimation (log for ratios) scale, for coverage.
    #[serde(default)]
    true_value: f64,
    analyses: Vec<SimAnalysis>,
}

#[derive(Debug, Serialize)]
struct SimRow {
    method: Method,
    summary: Summary,
    mean_estimate: f64,
    empirical_se: f64,
    mean_model_se: f64,
    coverage: f64,
    failure_rate: f64,
}

fn cmd_simulate(cli: &Cli, config_path: &PathBuf) -> Result<String, RunFailure> {
    let text = std::fs::read_to_string(config_path).map_err(Error::from)?;
    let mut config: SimulateConfig = toml::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("simulate config: {e}")))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if config.replications == 0 {
        return Err(Error::InvalidConfig("replications must be positive".into()).into());
    }
    if config.analyses.is_empty() {
        return Err(Error::InvalidConfig("at least one analysis is required".into()).into());
    }
    config.scheme.validate()?;

    let mut rows = Vec::new();
    for analysis in &config.analyses {
        let level = if analysis.method == Method::Direct {
            Level::Conditional
        } else {
            Level::Marginal
        };
        let estimand = EstimandSpec {
            summary: analysis.summary,
            level,
            population: Population::CompleteCase,
        };
        let mut estimates = Vec::new();
        let mut ses = Vec::new();
        let mut covered = 0usize;
        let mut failures = 0usize;
        for rep in 0..config.replications {
            let mut rng = replicate_rng(config.seed, rep as u64);
            let data = match &config.generator {
                GeneratorConfig::Logistic {
                    intercept,
                    treatment_coef,
                    covariate_coefs,
                    covariate_prevalence,
                    n,
                } => simulate_logistic(
                    &LogisticScenario {
                        intercept: *intercept,
                        treatment_coef: *treatment_coef,
                        covariate_coefs: covariate_coefs.clone(),
                        covariate_prevalence: covariate_prevalence.clone(),
                        n: *n,
                    },
                    &config.scheme,
                    &mut rng,
                )?,
                GeneratorConfig::Quadratic {
                    alpha,
                    theta,
                    gamma,
                    x_interval,
                    n_per_arm,
                    uniform,
                } => simulate_quadratic(
                    &QuadraticScenario {
                        alpha: *alpha,
                        theta: *theta,
                        gamma: *gamma,
                        x_interval: *x_interval,
                        n_per_arm: *n_per_arm,
                        design: if *uniform { XDesign::Uniform } else { XDesign::Grid },
                    },
                    &config.scheme,
                    &mut rng,
                )?,
            };
            let result = match analysis.method {
                Method::Direct => adjustkit::estimators::direct_adjust(
                    &data,
                    &analysis.covariates,
                    estimand,
                    &Default::default(),
                ),
                Method::Standardisation => adjustkit::estimators::standardize(
                    &data,
                    &analysis.covariates,
                    estimand,
                    &adjustkit::estimators::StandardizeOptions {
                        interactions: analysis.interactions,
                        drop_unscorable: false,
                    },
                ),
                Method::Iptw => adjustkit::estimators::iptw(
                    &data,
                    &analysis.covariates,
                    estimand,
                    None,
                    &Default::default(),
                ),
                Method::Unadjusted => adjustkit::estimators::unadjusted(&data, estimand),
            };
            match result {
                Ok(est) => {
                    if est.ci.contains(config.true_value) {
                        covered += 1;
                    }
                    estimates.push(est.estimate);
                    ses.push(est.se);
                }
                Err(_) => failures += 1,
            }
        }
        let n_ok = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n_ok.max(1.0);
        let emp_var = if estimates.len() > 1 {
            estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n_ok - 1.0)
        } else {
            f64::NAN
        };
        rows.push(SimRow {
            method: analysis.method,
            summary: analysis.summary,
            mean_estimate: mean,
            empirical_se: emp_var.sqrt(),
            mean_model_se: ses.iter().sum::<f64>() / n_ok.max(1.0),
            coverage: covered as f64 / (estimates.len() + failures) as f64,
            failure_rate: failures as f64 / config.replications as f64,
        });
    }

    match cli.format {
        Format::Json => Ok(json!({
            "command": "simulate",
            "config": serde_json::to_value(&config).unwrap(),
            "results": serde_json::to_value(&rows).unwrap(),
            "diagnostics": [],
            "seed_provenance": [format!(
                "simulate: seed {}, one generator stream per replication",
                config.seed
            )],
        })
        .to_string()),
        Format::Text => {
            let mut s = format!(
                "{} replications, seed {}\n{:<16} {:<16} {:>10} {:>10} {:>10} {:>9} {:>9}\n",
                config.replications,
                config.seed,
                "method",
                "summary",
                "mean",
                "emp_se",
                "model_se",
                "coverage",
                "fail",
            );
            for r in &rows {
                s.push_str(&format!(
                    "{:<16} {:<16} {:>10.4} {:>10.4} {:>10.4} {:>9.3} {:>9.3}\n",
                    format!("{:?}", r.method),
                    format!("{:?}", r.summary),
                    r.mean_estimate,
                    r.empirical_se,
                    r.mean_model_se,
                    r.coverage,
                    r.failure_rate,
                ));
            }
            Ok(s)
        }
    }
}

fn cmd_validate(cli: &Cli, config_path: &PathBuf) -> Result<String, RunFailure> {
    let config = load_config(config_path)?;
    match cli.format {
        Format::Json => Ok(json!({
            "command": "validate-config",
            "config": serde_json::to_value(&config).unwrap(),
            "results": [{"valid": true}],
            "diagnostics": [],
            "seed_provenance": [],
        })
        .to_string()),
        Format::Text => Ok("config is valid\n".into()),
    }
}
