//! Trial dataset model: CSV ingestion, schema validation, missingness
//! bookkeeping, complete-case subsetting and design-matrix construction.
//!
//! A [`TrialDataset`] is immutable after construction; every operation here
//! returns a new value and is safe to call concurrently.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens recognised as a missing cell in CSV input.
const MISSING_TOKENS: [&str; 2] = ["", "NA"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Categorical,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Binary,
    Continuous,
}

/// One covariate: its kind and, for categoricals, the ordered level list.
/// The first level is the reference for dummy coding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateDef {
    pub name: String,
    pub kind: CovariateKind,
    #[serde(default)]
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub entries: Vec<CovariateDef>,
}

impl CovariateSchema {
    pub fn new(entries: Vec<CovariateDef>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.name.clone()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate covariate name `{}`",
                    e.name
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&CovariateDef> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// A covariate cell value: a level index into the schema's level list, or a
/// finite real.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Level(usize),
    Number(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    pub id: String,
    pub treat: u8,
    pub outcome: Option<f64>,
    /// Aligned with the schema's entry order.
    pub covariates: Vec<Option<Value>>,
}

/// How treatment was allocated. Consumed by the bootstrap (which must mimic
/// the design) and by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme {
    Simple { allocation_prob: f64 },
    StratifiedBlocks { strata: Vec<String>, block_size: usize },
    Minimisation {
        factors: Vec<String>,
        weights: Vec<f64>,
        favoured_prob: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignInfo {
    #[serde(flatten)]
    pub scheme: Scheme,
}

impl DesignInfo {
    pub fn validate(&self) -> Result<()> {
        match &self.scheme {
            Scheme::Simple { allocation_prob } => {
                if !(*allocation_prob > 0.0 && *allocation_prob < 1.0) {
                    return Err(Error::InvalidConfig(
                        "allocation probability must be in (0,1)".into(),
                    ));
                }
            }
            Scheme::StratifiedBlocks { block_size, .. } => {
                if *block_size == 0 || *block_size % 2 != 0 {
                    return Err(Error::InvalidConfig(
                        "block size must be a positive multiple of 2".into(),
                    ));
                }
            }
            Scheme::Minimisation {
                factors,
                weights,
                favoured_prob,
            } => {
                if !(*favoured_prob >= 0.5 && *favoured_prob < 1.0) {
                    return Err(Error::InvalidConfig(
                        "favoured-arm probability must be in [0.5, 1)".into(),
                    ));
                }
                if factors.len() != weights.len() {
                    return Err(Error::InvalidConfig(
                        "minimisation factors and weights differ in length".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Bookkeeping about how a dataset came to be: complete-case subsetting and
/// covariate imputation both change which estimands downstream methods may
/// legitimately target.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub complete_case: bool,
    /// Set by mean imputation / missing-indicator; blocks direct adjustment
    /// with a non-collapsible summary.
    pub covariate_imputed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    participants: Vec<Participant>,
    schema: CovariateSchema,
    outcome_kind: OutcomeKind,
    pub design: Option<DesignInfo>,
    pub provenance: Provenance,
}

/// Declares which CSV columns play which role. Parsed from a TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub id: String,
    pub treat: String,
    pub outcome: String,
    pub outcome_kind: OutcomeKind,
    #[serde(default)]
    pub covariates: Vec<CovariateDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateDecl {
    pub name: String,
    pub kind: CovariateKind,
    #[serde(default)]
    pub levels: Option<Vec<String>>,
}

impl SchemaConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("schema config: {e}")))
    }
}

/// A model term. The intercept is implicit; categorical covariates expand to
/// reference-level dummies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Treatment,
    Covariate(String),
    TreatmentByCovariate(String),
}

/// A realised design matrix. `rows` maps matrix rows back to dataset row
/// indices; `excluded` lists rows dropped for missing values in referenced
/// terms.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub labels: Vec<String>,
    pub rows: Vec<usize>,
    pub excluded: Vec<usize>,
}

fn is_missing(cell: &str) -> bool {
    MISSING_TOKENS.contains(&cell.trim())
}

impl TrialDataset {
    pub fn new(
        schema: CovariateSchema,
        outcome_kind: OutcomeKind,
        participants: Vec<Participant>,
    ) -> Result<Self> {
        for (i, p) in participants.iter().enumerate() {
            if p.treat > 1 {
                return Err(Error::BadTreatValue {
                    row: i,
                    value: p.treat.to_string(),
                });
            }
            if p.covariates.len() != schema.entries.len() {
                return Err(Error::InvalidConfig(format!(
                    "row {i}: covariate count does not match schema"
                )));
            }
            for (def, v) in schema.entries.iter().zip(&p.covariates) {
                match (def.kind, v) {
                    (CovariateKind::Categorical, Some(Value::Level(l))) => {
                        if *l >= def.levels.len() {
                            return Err(Error::InvalidConfig(format!(
                                "row {i}: level index out of range for `{}`",
                                def.name
                            )));
                        }
                    }
                    (CovariateKind::Continuous, Some(Value::Number(x))) => {
                        if !x.is_finite() {
                            return Err(Error::ParseError {
                                row: i,
                                column: def.name.clone(),
                                value: x.to_string(),
                                reason: "non-finite continuous value".into(),
                            });
                        }
                    }
                    (_, None) => {}
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "row {i}: value kind does not match schema for `{}`",
                            def.name
                        )))
                    }
                }
            }
        }
        Ok(Self {
            participants,
            schema,
            outcome_kind,
            design: None,
            provenance: Provenance::default(),
        })
    }

    pub fn rows(&self) -> &[Participant] {
        &self.participants
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn n(&self) -> usize {
        self.participants.len()
    }

    pub fn n_observed_outcomes(&self) -> usize {
        self.participants
            .iter()
            .filter(|p| p.outcome.is_some())
            .count()
    }

    /// Analysis precondition: at least two rows and at least one per arm.
    pub fn check_analyzable(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::EmptyDataset("fewer than 2 rows".into()));
        }
        let n1 = self.participants.iter().filter(|p| p.treat == 1).count();
        if n1 == 0 || n1 == self.n() {
            return Err(Error::EmptyDataset("an arm has no participants".into()));
        }
        Ok(())
    }

    /// Rebuild this dataset with different rows, keeping schema and metadata.
    pub(crate) fn with_rows(&self, participants: Vec<Participant>) -> Self {
        Self {
            participants,
            schema: self.schema.clone(),
            outcome_kind: self.outcome_kind,
            design: self.design.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub(crate) fn with_schema(&self, schema: CovariateSchema, participants: Vec<Participant>) -> Self {
        Self {
            participants,
            schema,
            outcome_kind: self.outcome_kind,
            design: self.design.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Replace the outcome column, preserving row order. Used to inject
    /// simulated outcomes into an existing covariate/design structure.
    pub fn with_outcomes(&self, outcomes: Vec<Option<f64>>) -> Result<Self> {
        if outcomes.len() != self.n() {
            return Err(Error::InvalidConfig(format!(
                "outcome vector length {} does not match {} rows",
                outcomes.len(),
                self.n()
            )));
        }
        let participants = self
            .participants
            .iter()
            .zip(outcomes)
            .map(|(p, y)| {
                let mut p = p.clone();
                p.outcome = y;
                p
            })
            .collect();
        Ok(self.with_rows(participants))
    }

    /// Assemble a dataset from already-validated parts (the simulator's
    /// constructor).
    pub(crate) fn assemble(
        schema: CovariateSchema,
        outcome_kind: OutcomeKind,
        participants: Vec<Participant>,
        design: Option<DesignInfo>,
    ) -> Self {
        Self {
            participants,
            schema,
            outcome_kind,
            design,
            provenance: Provenance::default(),
        }
    }

    /// Load a dataset from an RFC-4180-style CSV file (header row required).
    /// Missing cells are the empty string or the literal `NA`.
    pub fn load_csv(path: &Path, config: &SchemaConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text, config)
    }

    pub fn from_csv_str(text: &str, config: &SchemaConfig) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let id_col = col(&config.id)?;
        let treat_col = col(&config.treat)?;
        let outcome_col = col(&config.outcome)?;
        let mut cov_cols = Vec::new();
        let mut schema_entries = Vec::new();
        for decl in &config.covariates {
            cov_cols.push(col(&decl.name)?);
            schema_entries.push(CovariateDef {
                name: decl.name.clone(),
                kind: decl.kind,
                levels: decl.levels.clone().unwrap_or_default(),
            });
        }
        let mut schema = CovariateSchema::new(schema_entries)?;
        let declared: Vec<bool> = config
            .covariates
            .iter()
            .map(|d| d.levels.is_some())
            .collect();

        let mut participants = Vec::new();
        for (row_idx, record) in reader.records().enumerate() {
            let record = record?;
            let cell = |c: usize| record.get(c).unwrap_or("").trim().to_string();

            let treat_raw = cell(treat_col);
            let treat = match treat_raw.as_str() {
                "0" => 0u8,
                "1" => 1u8,
                _ => {
                    return Err(Error::BadTreatValue {
                        row: row_idx,
                        value: treat_raw,
                    })
                }
            };

            let outcome_raw = cell(outcome_col);
            let outcome = if is_missing(&outcome_raw) {
                None
            } else {
                let v: f64 = outcome_raw.parse().map_err(|_| Error::ParseError {
                    row: row_idx,
                    column: config.outcome.clone(),
                    value: outcome_raw.clone(),
                    reason: "not numeric".into(),
                })?;
                if config.outcome_kind == OutcomeKind::Binary && v != 0.0 && v != 1.0 {
                    return Err(Error::ParseError {
                        row: row_idx,
                        column: config.outcome.clone(),
                        value: outcome_raw,
                        reason: "binary outcome must be 0 or 1".into(),
                    });
                }
                Some(v)
            };

            let mut covariates = Vec::with_capacity(cov_cols.len());
            for (k, &c) in cov_cols.iter().enumerate() {
                let raw = cell(c);
                if is_missing(&raw) {
                    covariates.push(None);
                    continue;
                }
                let def = &mut schema.entries[k];
                match def.kind {
                    CovariateKind::Continuous => {
                        let v: f64 = raw.parse().map_err(|_| Error::ParseError {
                            row: row_idx,
                            column: def.name.clone(),
                            value: raw.clone(),
                            reason: "not numeric".into(),
                        })?;
                        if !v.is_finite() {
                            return Err(Error::ParseError {
                                row: row_idx,
                                column: def.name.clone(),
                                value: raw,
                                reason: "non-finite".into(),
                            });
                        }
                        covariates.push(Some(Value::Number(v)));
                    }
                    CovariateKind::Categorical => {
                        let pos = def.levels.iter().position(|l| l == &raw);
                        let idx = match pos {
                            Some(i) => i,
                            None if declared[k] => {
                                return Err(Error::ParseError {
                                    row: row_idx,
                                    column: def.name.clone(),
                                    value: raw,
                                    reason: "level not in declared level list".into(),
                                })
                            }
                            None => {
                                // Accumulate levels in first-appearance order.
                                def.levels.push(raw.clone());
                                def.levels.len() - 1
                            }
                        };
                        covariates.push(Some(Value::Level(idx)));
                    }
                }
            }
            participants.push(Participant {
                id: cell(id_col),
                treat,
                outcome,
                covariates,
            });
        }
        if participants.is_empty() {
            return Err(Error::EmptyDataset("CSV load".into()));
        }
        Self::new(schema, config.outcome_kind, participants)
    }

    /// Serialize to CSV with the given missing token. Column order:
    /// id, treat, outcome, covariates in schema order.
    pub fn to_csv_string(&self, config: &SchemaConfig, missing_token: &str) -> String {
        let mut out = String::new();
        out.push_str(&config.id);
        out.push(',');
        out.push_str(&config.treat);
        out.push(',');
        out.push_str(&config.outcome);
        for e in &self.schema.entries {
            out.push(',');
            out.push_str(&e.name);
        }
        out.push('\n');
        for p in &self.participants {
            out.push_str(&p.id);
            out.push(',');
            out.push_str(&p.treat.to_string());
            out.push(',');
            match p.outcome {
                Some(v) => out.push_str(&format_num(v)),
                None => out.push_str(missing_token),
            }
            for (e, v) in self.schema.entries.iter().zip(&p.covariates) {
                out.push(',');
                match v {
                    None => out.push_str(missing_token),
                    Some(Value::Number(x)) => out.push_str(&format_num(*x)),
                    Some(Value::Level(l)) => out.push_str(&e.levels[*l]),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Subset to rows where every listed variable is observed. The name
    /// `outcome` refers to the outcome unless a covariate has that name.
    /// The result carries a complete-case provenance flag.
    pub fn complete_cases(&self, vars: &[String]) -> Result<Self> {
        let mut cov_idx = Vec::new();
        let mut want_outcome = false;
        for v in vars {
            if let Some(i) = self.schema.index(v) {
                cov_idx.push(i);
            } else if v == "outcome" {
                want_outcome = true;
            } else {
                return Err(Error::UnknownTerm(v.clone()));
            }
        }
        let kept: Vec<Participant> = self
            .participants
            .iter()
            .filter(|p| {
                (!want_outcome || p.outcome.is_some())
                    && cov_idx.iter().all(|&i| p.covariates[i].is_some())
            })
            .cloned()
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyDataset("complete-case subsetting".into()));
        }
        let mut out = self.with_rows(kept);
        out.provenance.complete_case = true;
        Ok(out)
    }

    /// Dataset-schema design matrix; see [`build_matrix`].
    pub fn design_matrix(&self, terms: &[Term]) -> Result<DesignMatrix> {
        build_matrix(self, terms, &self.schema, None)
    }

    /// Names of all variables a term list references.
    pub fn term_vars(terms: &[Term]) -> Vec<String> {
        let mut out = Vec::new();
        for t in terms {
            match t {
                Term::Covariate(n) | Term::TreatmentByCovariate(n) => {
                    if !out.contains(n) {
                        out.push(n.clone());
                    }
                }
                Term::Treatment => {}
            }
        }
        out
    }
}

fn format_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Expand `terms` into a numeric matrix for the rows of `data`, coding
/// categorical levels against `coding_schema` (the schema of the fitted
/// model, which may differ from `data`'s own when predicting on new data).
/// `force_treat` overrides the treatment column, as standardisation requires.
///
/// Column 0 is the intercept. Rows with a missing value in any referenced
/// term are excluded and reported.
pub fn build_matrix(
    data: &TrialDataset,
    terms: &[Term],
    coding_schema: &CovariateSchema,
    force_treat: Option<u8>,
) -> Result<DesignMatrix> {
    // Per-term column expansion, checked against the coding schema.
    struct Col {
        label: String,
        kind: ColKind,
    }
    enum ColKind {
        Intercept,
        Treatment,
        Dummy { var: usize, level: String },
        Linear { var: usize },
        TreatDummy { var: usize, level: String },
        TreatLinear { var: usize },
    }

    let mut cols = vec![Col {
        label: "(intercept)".into(),
        kind: ColKind::Intercept,
    }];
    for t in terms {
        match t {
            Term::Treatment => cols.push(Col {
                label: "treat".into(),
                kind: ColKind::Treatment,
            }),
            Term::Covariate(name) | Term::TreatmentByCovariate(name) => {
                let def = coding_schema
                    .get(name)
                    .ok_or_else(|| Error::UnknownTerm(name.clone()))?;
                let var = data
                    .schema()
                    .index(name)
                    .ok_or_else(|| Error::UnknownTerm(name.clone()))?;
                let interact = matches!(t, Term::TreatmentByCovariate(_));
                match def.kind {
                    CovariateKind::Continuous => cols.push(Col {
                        label: if interact {
                            format!("treat:{name}")
                        } else {
                            name.clone()
                        },
                        kind: if interact {
                            ColKind::TreatLinear { var }
                        } else {
                            ColKind::Linear { var }
                        },
                    }),
                    CovariateKind::Categorical => {
                        for level in def.levels.iter().skip(1) {
                            cols.push(Col {
                                label: if interact {
                                    format!("treat:{name}={level}")
                                } else {
                                    format!("{name}={level}")
                                },
                                kind: if interact {
                                    ColKind::TreatDummy {
                                        var,
                                        level: level.clone(),
                                    }
                                } else {
                                    ColKind::Dummy {
                                        var,
                                        level: level.clone(),
                                    }
                                },
                            });
                        }
                    }
                }
            }
        }
    }

    // Level name for a data row's categorical cell, mapped through the
    // data schema; the coding schema decides which dummy it activates.
    let level_name = |p: &Participant, var: usize| -> Option<&str> {
        match p.covariates[var] {
            Some(Value::Level(l)) => Some(&data.schema().entries[var].levels[l]),
            _ => None,
        }
    };
    // Predicting on new data must fail when a level was never seen in the fit.
    for p in data.rows() {
        for (var, def_data) in data.schema().entries.iter().enumerate() {
            if let Some(def_fit) = coding_schema.get(&def_data.name) {
                if def_fit.kind == CovariateKind::Categorical {
                    let referenced = terms.iter().any(|t| matches!(t, Term::Covariate(n) | Term::TreatmentByCovariate(n) if n == &def_data.name));
                    if referenced {
                        if let Some(name) = level_name(p, var) {
                            if !def_fit.levels.iter().any(|l| l == name) {
                                return Err(Error::UnseenLevel {
                                    var: def_data.name.clone(),
                                    level: name.to_string(),
                                });
                            }
                        }
                    }
                }
            }
        }
    }

    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    'row: for (i, p) in data.rows().iter().enumerate() {
        let treat = force_treat.unwrap_or(p.treat) as f64;
        let mut row_vals = Vec::with_capacity(cols.len());
        for c in &cols {
            let v = match &c.kind {
                ColKind::Intercept => 1.0,
                ColKind::Treatment => treat,
                ColKind::Dummy { var, level } | ColKind::TreatDummy { var, level } => {
                    match level_name(p, *var) {
                        None => {
                            excluded.push(i);
                            continue 'row;
                        }
                        Some(name) => {
                            let d = if name == level { 1.0 } else { 0.0 };
                            if matches!(c.kind, ColKind::TreatDummy { .. }) {
                                d * treat
                            } else {
                                d
                            }
                        }
                    }
                }
                ColKind::Linear { var } | ColKind::TreatLinear { var } => {
                    match p.covariates[*var] {
                        Some(Value::Number(x)) => {
                            if matches!(c.kind, ColKind::TreatLinear { .. }) {
                                x * treat
                            } else {
                                x
                            }
                        }
                        _ => {
                            excluded.push(i);
                            continue 'row;
                        }
                    }
                }
            };
            row_vals.push(v);
        }
        rows.push(i);
        values.extend_from_slice(&row_vals);
    }

    let ncols = cols.len();
    let x = DMatrix::from_row_slice(rows.len(), ncols, &values);
    Ok(DesignMatrix {
        x,
        labels: cols.into_iter().map(|c| c.label).collect(),
        rows,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_schema() -> SchemaConfig {
        SchemaConfig {
            id: "id".into(),
            treat: "treat".into(),
            outcome: "y".into(),
            outcome_kind: OutcomeKind::Binary,
            covariates: vec![CovariateDecl {
                name: "site".into(),
                kind: CovariateKind::Categorical,
                levels: None,
            }],
        }
    }

    #[test]
    fn load_inline_csv_round_trip() {
        let csv = "id,treat,y,site\na,0,1,A\nb,0,0,B\nc,1,1,A\nd,1,0,B\n";
        let cfg = toy_schema();
        let ds = TrialDataset::from_csv_str(csv, &cfg).unwrap();
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.n_observed_outcomes(), 4);
        assert_eq!(ds.schema().get("site").unwrap().levels, vec!["A", "B"]);
        // Round trip is bit-exact for non-missing cells.
        assert_eq!(ds.to_csv_string(&cfg, "NA"), csv);
    }

    #[test]
    fn missing_cells_preserved() {
        let csv = "id,treat,y,site\na,0,1,A\nb,0,NA,B\nc,1,,A\nd,1,0,\n";
        let ds = TrialDataset::from_csv_str(csv, &toy_schema()).unwrap();
        assert_eq!(ds.n_observed_outcomes(), 2);
        assert!(ds.rows()[3].covariates[0].is_none());
        let rt = ds.to_csv_string(&toy_schema(), "NA");
        assert_eq!(rt, "id,treat,y,site\na,0,1,A\nb,0,NA,B\nc,1,NA,A\nd,1,0,NA\n");
    }

    #[test]
    fn bad_treat_value_rejected() {
        let csv = "id,treat,y,site\na,2,1,A\n";
        let err = TrialDataset::from_csv_str(csv, &toy_schema()).unwrap_err();
        assert!(matches!(err, Error::BadTreatValue { .. }));
    }

    #[test]
    fn missing_column_rejected() {
        let csv = "id,treat,outcome\na,0,1\n";
        let err = TrialDataset::from_csv_str(csv, &toy_schema()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "y"));
    }

    #[test]
    fn complete_cases_idempotent_and_order_preserving() {
        let csv = "id,treat,y,site\na,0,1,A\nb,0,NA,B\nc,1,1,A\nd,1,NA,B\ne,1,0,A\n";
        let ds = TrialDataset::from_csv_str(csv, &toy_schema()).unwrap();
        let cc = ds.complete_cases(&["outcome".into()]).unwrap();
        assert_eq!(cc.n(), 3);
        assert!(cc.provenance.complete_case);
        let ids: Vec<&str> = cc.rows().iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["a", "c", "e"]);
        let cc2 = cc.complete_cases(&["outcome".into()]).unwrap();
        assert_eq!(cc, cc2);
    }

    #[test]
    fn complete_cases_empty_errors() {
        let csv = "id,treat,y,site\na,0,NA,A\nb,1,NA,B\n";
        let ds = TrialDataset::from_csv_str(csv, &toy_schema()).unwrap();
        assert!(matches!(
            ds.complete_cases(&["outcome".into()]),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn design_matrix_columns_and_exclusions() {
        let csv = "id,treat,y,site,age\na,0,1,A,30\nb,0,0,B,40\nc,1,1,C,\nd,1,0,A,50\n";
        let mut cfg = toy_schema();
        cfg.covariates.push(CovariateDecl {
            name: "age".into(),
            kind: CovariateKind::Continuous,
            levels: None,
        });
        let ds = TrialDataset::from_csv_str(csv, &cfg).unwrap();
        let dm = ds
            .design_matrix(&[
                Term::Treatment,
                Term::Covariate("site".into()),
                Term::Covariate("age".into()),
            ])
            .unwrap();
        // intercept + treat + 2 site dummies + age
        assert_eq!(dm.labels, vec!["(intercept)", "treat", "site=B", "site=C", "age"]);
        assert_eq!(dm.rows, vec![0, 1, 3]);
        assert_eq!(dm.excluded, vec![2]);
    }

    #[test]
    fn interaction_with_binary_covariate_has_four_columns() {
        let csv = "id,treat,y,site\na,0,1,A\nb,0,0,B\nc,1,1,A\nd,1,0,B\n";
        let ds = TrialDataset::from_csv_str(csv, &toy_schema()).unwrap();
        let dm = ds
            .design_matrix(&[
                Term::Treatment,
                Term::Covariate("site".into()),
                Term::TreatmentByCovariate("site".into()),
            ])
            .unwrap();
        assert_eq!(dm.labels.len(), 4);
        assert_eq!(dm.labels[3], "treat:site=B");
    }

    #[test]
    fn unknown_term_rejected() {
        let csv = "id,treat,y,site\na,0,1,A\nb,1,0,B\n";
        let ds = TrialDataset::from_csv_str(csv, &toy_schema()).unwrap();
        assert!(matches!(
            ds.design_matrix(&[Term::Covariate("nope".into())]),
            Err(Error::UnknownTerm(_))
        ));
    }
}
