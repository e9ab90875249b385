//! Randomisation schemes (simple Bernoulli, stratified permuted blocks,
//! Pocock–Simon minimisation) and trial simulation, including the
//! noise-free quadratic outcome generator used by the misspecification
//! demonstration.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::trialdata::{
    CovariateDef, CovariateKind, CovariateSchema, DesignInfo, OutcomeKind, Participant, Scheme,
    TrialDataset, Value,
};

/// Running allocation history consumed by [`assign`]. Assignments are
/// inherently sequential: each depends on everything assigned before it.
#[derive(Debug, Clone, Default)]
pub struct AssignmentState {
    /// Minimisation: (factor name, level) -> assignments per arm.
    counts: BTreeMap<(String, String), [usize; 2]>,
    /// Stratified blocks: stratum key -> remaining slots of the open block.
    open_blocks: BTreeMap<String, Vec<u8>>,
    /// Factor levels admitted on the fly (not pre-declared).
    pub warnings: Vec<String>,
}

impl AssignmentState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Per-arm count of previous assignments carrying this factor level.
    pub fn level_counts(&self, factor: &str, level: &str) -> [usize; 2] {
        self.counts
            .get(&(factor.to_string(), level.to_string()))
            .copied()
            .unwrap_or([0, 0])
    }
}

/// Assign the next participant's arm under the given design. `covariates`
/// maps variable names to level labels and must cover every factor or
/// stratum variable the scheme references.
pub fn assign<R: Rng + ?Sized>(
    design: &DesignInfo,
    covariates: &BTreeMap<String, String>,
    state: &mut AssignmentState,
    rng: &mut R,
) -> Result<u8> {
    design.validate()?;
    match &design.scheme {
        Scheme::Simple { allocation_prob } => {
            Ok(u8::from(rng.gen::<f64>() < *allocation_prob))
        }
        Scheme::StratifiedBlocks { strata, block_size } => {
            let mut key = String::new();
            for var in strata {
                let level = covariates
                    .get(var)
                    .ok_or_else(|| Error::UnknownTerm(var.clone()))?;
                key.push_str(level);
                key.push('\u{1f}');
            }
            let block = state.open_blocks.entry(key).or_default();
            if block.is_empty() {
                // New permuted block: half each arm, shuffled.
                let mut fresh: Vec<u8> = (0..*block_size).map(|i| u8::from(i % 2 == 1)).collect();
                fresh.shuffle(rng);
                *block = fresh;
            }
            Ok(block.pop().unwrap())
        }
        Scheme::Minimisation {
            factors,
            weights,
            favoured_prob,
        } => {
            // Weighted marginal imbalance: for each arm, the weighted sum of
            // assignments already sharing this participant's factor levels.
            let mut sums = [0.0f64; 2];
            for (f, w) in factors.iter().zip(weights) {
                let level = covariates
                    .get(f)
                    .ok_or_else(|| Error::UnknownTerm(f.clone()))?;
                let key = (f.clone(), level.clone());
                if !state.counts.contains_key(&key) {
                    state
                        .warnings
                        .push(format!("factor {f}: level `{level}` admitted on first use"));
                }
                let c = state.counts.entry(key).or_insert([0, 0]);
                sums[0] += w * c[0] as f64;
                sums[1] += w * c[1] as f64;
            }
            let p_arm1 = if sums[1] < sums[0] {
                *favoured_prob
            } else if sums[0] < sums[1] {
                1.0 - *favoured_prob
            } else {
                0.5
            };
            let arm = u8::from(rng.gen::<f64>() < p_arm1);
            for f in factors {
                let level = covariates.get(f).unwrap();
                let c = state.counts.get_mut(&(f.clone(), level.clone())).unwrap();
                c[arm as usize] += 1;
            }
            Ok(arm)
        }
    }
}

/// The noise-free quadratic outcome generator: Y = alpha + theta Z +
/// gamma X^2, with X either on a deterministic evenly-spaced grid given to
/// both arms in full (exactness for the misspecification demonstration) or
/// drawn uniformly with arms allocated by the randomisation scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XDesign {
    Grid,
    Uniform,
}

#[derive(Debug, Clone)]
pub struct QuadraticScenario {
    pub alpha: f64,
    pub theta: f64,
    pub gamma: f64,
    pub x_interval: (f64, f64),
    pub n_per_arm: usize,
    pub design: XDesign,
}

impl QuadraticScenario {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.x_interval;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidConfig("x interval must be finite with lo < hi".into()));
        }
        if self.n_per_arm < 2 {
            return Err(Error::InvalidConfig("need at least 2 participants per arm".into()));
        }
        for v in [self.alpha, self.theta, self.gamma] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig("generator parameters must be finite".into()));
            }
        }
        Ok(())
    }
}

/// A logistic-outcome generator over independent binary covariates:
/// logit P(Y=1) = intercept + treatment_coef Z + sum coef_j X_j, with
/// X_j ~ Bernoulli(prevalence_j).
#[derive(Debug, Clone)]
pub struct LogisticScenario {
    pub intercept: f64,
    pub treatment_coef: f64,
    pub covariate_coefs: Vec<f64>,
    pub covariate_prevalence: Vec<f64>,
    pub n: usize,
}

impl LogisticScenario {
    fn validate(&self) -> Result<()> {
        if self.covariate_coefs.len() != self.covariate_prevalence.len() {
            return Err(Error::InvalidConfig(
                "covariate coefficient and prevalence lists differ in length".into(),
            ));
        }
        if self.covariate_prevalence.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("prevalences must lie in [0, 1]".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidConfig("need at least 2 participants".into()));
        }
        Ok(())
    }
}

fn quadratic_schema() -> CovariateSchema {
    CovariateSchema::new(vec![CovariateDef {
        name: "x".into(),
        kind: CovariateKind::Continuous,
        levels: Vec::new(),
    }])
    .unwrap()
}

/// Simulate a continuous-outcome trial from the quadratic generator. The
/// grid design is fully deterministic: both arms receive the identical
/// evenly-spaced x grid and outcomes are computed exactly, with no residual
/// error.
pub fn simulate_quadratic<R: Rng + ?Sized>(
    scenario: &QuadraticScenario,
    scheme: &DesignInfo,
    rng: &mut R,
) -> Result<TrialDataset> {
    scenario.validate()?;
    scheme.validate()?;
    let (lo, hi) = scenario.x_interval;
    let n = scenario.n_per_arm;
    let mut participants = Vec::with_capacity(2 * n);
    let mut push = |id: usize, z: u8, x: f64| {
        let y = scenario.alpha + scenario.theta * f64::from(z) + scenario.gamma * x * x;
        participants.push(Participant {
            id: format!("s{id}"),
            treat: z,
            outcome: Some(y),
            covariates: vec![Some(Value::Number(x))],
        });
    };
    match scenario.design {
        XDesign::Grid => {
            for i in 0..n {
                let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                push(2 * i, 0, x);
                push(2 * i + 1, 1, x);
            }
        }
        XDesign::Uniform => {
            let mut state = AssignmentState::new();
            for i in 0..2 * n {
                let x = lo + (hi - lo) * rng.gen::<f64>();
                let z = assign(scheme, &BTreeMap::new(), &mut state, rng)?;
                push(i, z, x);
            }
        }
    }
    Ok(TrialDataset::assemble(
        quadratic_schema(),
        OutcomeKind::Continuous,
        participants,
        Some(scheme.clone()),
    ))
}

/// Simulate a binary-outcome trial: covariates drawn Bernoulli, arms
/// allocated by the scheme, outcomes drawn from the logistic model.
pub fn simulate_logistic<R: Rng + ?Sized>(
    scenario: &LogisticScenario,
    scheme: &DesignInfo,
    rng: &mut R,
) -> Result<TrialDataset> {
    scenario.validate()?;
    scheme.validate()?;
    let k = scenario.covariate_coefs.len();
    let schema = CovariateSchema::new(
        (0..k)
            .map(|j| CovariateDef {
                name: format!("x{}", j + 1),
                kind: CovariateKind::Categorical,
                levels: vec!["0".into(), "1".into()],
            })
            .collect(),
    )?;
    let mut state = AssignmentState::new();
    let mut participants = Vec::with_capacity(scenario.n);
    for i in 0..scenario.n {
        let levels: Vec<usize> = scenario
            .covariate_prevalence
            .iter()
            .map(|&p| usize::from(rng.gen::<f64>() < p))
            .collect();
        let mut cov_map = BTreeMap::new();
        for (j, &l) in levels.iter().enumerate() {
            cov_map.insert(format!("x{}", j + 1), l.to_string());
        }
        let z = assign(scheme, &cov_map, &mut state, rng)?;
        let mut eta = scenario.intercept + scenario.treatment_coef * f64::from(z);
        for (j, &l) in levels.iter().enumerate() {
            eta += scenario.covariate_coefs[j] * l as f64;
        }
        let p = 1.0 / (1.0 + (-eta).exp());
        let y = f64::from(rng.gen::<f64>() < p);
        participants.push(Participant {
            id: format!("s{i}"),
            treat: z,
            outcome: Some(y),
            covariates: levels.into_iter().map(|l| Some(Value::Level(l))).collect(),
        });
    }
    Ok(TrialDataset::assemble(
        schema,
        OutcomeKind::Binary,
        participants,
        Some(scheme.clone()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn minimisation_tie_gives_half_half() {
        let design = DesignInfo {
            scheme: Scheme::Minimisation {
                factors: vec!["g".into()],
                weights: vec![1.0],
                favoured_prob: 0.8,
            },
        };
        let covs: BTreeMap<String, String> = [("g".into(), "f".into())].into();
        let mut ones = 0;
        for seed in 0..2000 {
            let mut st = AssignmentState::new();
            let mut r = rng(seed);
            ones += assign(&design, &covs, &mut st, &mut r).unwrap() as usize;
        }
        // First assignment is always a tie -> probability exactly 0.5.
        let frac = ones as f64 / 2000.0;
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
    }

    #[test]
    fn minimisation_favours_lagging_arm() {
        let design = DesignInfo {
            scheme: Scheme::Minimisation {
                factors: vec!["g".into(), "o".into()],
                weights: vec![1.0, 1.0],
                favoured_prob: 0.8,
            },
        };
        let covs: BTreeMap<String, String> =
            [("g".into(), "f".into()), ("o".into(), "het".into())].into();
        // Arm 0 strictly behind on every factor -> P(arm 0) = 0.8.
        let mut zeros = 0;
        let trials = 4000;
        for seed in 0..trials {
            let mut st = AssignmentState::new();
            st.counts.insert(("g".into(), "f".into()), [1, 3]);
            st.counts.insert(("o".into(), "het".into()), [0, 2]);
            let mut r = rng(seed);
            if assign(&design, &covs, &mut st, &mut r).unwrap() == 0 {
                zeros += 1;
            }
        }
        let frac = zeros as f64 / trials as f64;
        assert!((frac - 0.8).abs() < 0.03, "{frac}");
    }

    #[test]
    fn minimisation_updates_counts_for_assigned_arm() {
        let design = DesignInfo {
            scheme: Scheme::Minimisation {
                factors: vec!["g".into()],
                weights: vec![1.0],
                favoured_prob: 0.8,
            },
        };
        let covs: BTreeMap<String, String> = [("g".into(), "m".into())].into();
        let mut st = AssignmentState::new();
        let mut r = rng(1);
        let arm = assign(&design, &covs, &mut st, &mut r).unwrap();
        let c = st.level_counts("g", "m");
        assert_eq!(c[arm as usize], 1);
        assert_eq!(c[1 - arm as usize], 0);
        assert_eq!(st.warnings.len(), 1);
    }

    #[test]
    fn blocks_of_four_balance_each_completed_block() {
        let design = DesignInfo {
            scheme: Scheme::StratifiedBlocks {
                strata: vec!["s".into()],
                block_size: 4,
            },
        };
        let mut st = AssignmentState::new();
        let mut r = rng(11);
        for stratum in ["a", "b"] {
            let covs: BTreeMap<String, String> = [("s".into(), stratum.into())].into();
            for _ in 0..3 {
                let block: Vec<u8> = (0..4)
                    .map(|_| assign(&design, &covs, &mut st, &mut r).unwrap())
                    .collect();
                assert_eq!(block.iter().filter(|&&z| z == 1).count(), 2, "{block:?}");
            }
        }
    }

    #[test]
    fn quadratic_grid_outcomes_exact() {
        let sc = QuadraticScenario {
            alpha: 0.0,
            theta: 1.0,
            gamma: 1.0,
            x_interval: (-0.5, 0.5),
            n_per_arm: 11,
            design: XDesign::Grid,
        };
        let scheme = DesignInfo {
            scheme: Scheme::Simple { allocation_prob: 0.5 },
        };
        let data = simulate_quadratic(&sc, &scheme, &mut rng(0)).unwrap();
        assert_eq!(data.n(), 22);
        for p in data.rows() {
            let x = match p.covariates[0] {
                Some(Value::Number(v)) => v,
                _ => unreachable!(),
            };
            assert_eq!(p.outcome.unwrap(), f64::from(p.treat) + x * x);
        }
        // Both arms see the identical grid.
        let xs = |arm: u8| -> Vec<f64> {
            data.rows()
                .iter()
                .filter(|p| p.treat == arm)
                .map(|p| match p.covariates[0] {
                    Some(Value::Number(v)) => v,
                    _ => unreachable!(),
                })
                .collect()
        };
        assert_eq!(xs(0), xs(1));
    }

    #[test]
    fn logistic_null_rates_near_target() {
        let sc = LogisticScenario {
            intercept: 0.0,
            treatment_coef: 0.0,
            covariate_coefs: vec![],
            covariate_prevalence: vec![],
            n: 4000,
        };
        let scheme = DesignInfo {
            scheme: Scheme::Simple { allocation_prob: 0.5 },
        };
        let data = simulate_logistic(&sc, &scheme, &mut rng(42)).unwrap();
        let rate =
            data.rows().iter().map(|p| p.outcome.unwrap()).sum::<f64>() / data.n() as f64;
        // Target 0.5; 3 binomial SEs = 3 * 0.5 / sqrt(4000) ~ 0.024.
        assert!((rate - 0.5).abs() < 0.024, "{rate}");
    }

    #[test]
    fn stratified_blocks_balance_per_stratum_in_simulation() {
        let sc = LogisticScenario {
            intercept: -0.5,
            treatment_coef: 0.3,
            covariate_coefs: vec![0.5],
            covariate_prevalence: vec![0.4],
            n: 400,
        };
        let scheme = DesignInfo {
            scheme: Scheme::StratifiedBlocks {
                strata: vec!["x1".into()],
                block_size: 4,
            },
        };
        let data = simulate_logistic(&sc, &scheme, &mut rng(3)).unwrap();
        for level in [0usize, 1] {
            let in_stratum: Vec<_> = data
                .rows()
                .iter()
                .filter(|p| p.covariates[0] == Some(Value::Level(level)))
                .collect();
            let n1 = in_stratum.iter().filter(|p| p.treat == 1).count();
            let n = in_stratum.len();
            // Imbalance bounded by an open block's worth.
            assert!((n1 as i64 - (n - n1) as i64).abs() <= 2, "stratum {level}");
        }
    }

    #[test]
    fn minimisation_beats_simple_on_marginal_imbalance() {
        let factors = vec!["x1".into(), "x2".into()];
        let min_design = DesignInfo {
            scheme: Scheme::Minimisation {
                factors: factors.clone(),
                weights: vec![1.0, 1.0],
                favoured_prob: 0.8,
            },
        };
        let simple = DesignInfo {
            scheme: Scheme::Simple { allocation_prob: 0.5 },
        };
        let imbalance = |design: &DesignInfo, seed: u64| -> i64 {
            let mut st = AssignmentState::new();
            let mut r = rng(seed);
            let mut counts: BTreeMap<(usize, usize), [i64; 2]> = BTreeMap::new();
            for _ in 0..2000 {
                let l1 = usize::from(r.gen::<f64>() < 0.5);
                let l2 = usize::from(r.gen::<f64>() < 0.3);
                let covs: BTreeMap<String, String> =
                    [("x1".into(), l1.to_string()), ("x2".into(), l2.to_string())].into();
                let z = assign(design, &covs, &mut st, &mut r).unwrap() as usize;
                counts.entry((0, l1)).or_insert([0, 0])[z] += 1;
                counts.entry((1, l2)).or_insert([0, 0])[z] += 1;
            }
            counts.values().map(|c| (c[0] - c[1]).abs()).max().unwrap()
        };
        assert!(imbalance(&min_design, 9) < imbalance(&simple, 9));
    }
}
