//! Policy × seed experiment runner.
//!
//! Contexts and targets are fixed by the scenario's `rng_seed`; a run seed
//! only drives the observation noise. Seeds fan out over a rayon pool and
//! every worker owns its policy, RNG and ledger.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{default_explore_len, ExperimentConfig, PolicyKind};
use crate::covariance::ExplorationSchedule;
use crate::domain::Allocation;
use crate::error::{invalid, Result};
use crate::eval::{aggregate_runs, oracle_from_means, RegretLedger, RoundRecord, RunSummary};
use crate::policy::{
    CyclicPolicy, FixedPolicy, GammaRule, Model1Policy, Model2Policy, OraclePolicy, Policy,
    RoundInput, TariffOnlyPolicy,
};
use crate::ridge::ConfidenceParams;
use crate::scalar::Scalar;
use crate::sim::{RoundTruth, Scenario};

/// Learner-side tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySettings<T> {
    pub lambda: T,
    pub delta: T,
    /// Exploration length of `model1`; `round(T^(2/3))` when absent.
    pub explore_len: Option<usize>,
    pub fixed_allocation: Allocation<T>,
    pub gamma_override: Option<T>,
    pub g_bound: Option<T>,
    /// Replaces the noise-derived sub-Gaussian constant.
    pub rho: Option<T>,
}

impl<T: Scalar> PolicySettings<T> {
    pub fn new(lambda: T, delta: T) -> Self {
        Self {
            lambda,
            delta,
            explore_len: None,
            fixed_allocation: Allocation::vertex(3, 1),
            gamma_override: None,
            g_bound: None,
            rho: None,
        }
    }

    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            lambda: T::lit(config.lambda),
            delta: T::lit(config.delta),
            explore_len: config.explore_len,
            fixed_allocation: Allocation::new(
                config.fixed_allocation.iter().map(|&v| T::lit(v)).collect(),
            )?,
            gamma_override: config.gamma_override.map(T::lit),
            g_bound: config.g_bound.map(T::lit),
            rho: None,
        })
    }

    pub fn with_explore_len(mut self, n: usize) -> Self {
        self.explore_len = Some(n);
        self
    }

    pub fn with_gamma_override(mut self, gamma: T) -> Self {
        self.gamma_override = Some(gamma);
        self
    }

    pub fn confidence_params(&self, scenario: &Scenario<T>) -> Result<ConfidenceParams<T>> {
        let rho = self.rho.unwrap_or_else(|| scenario.noise().rho());
        ConfidenceParams::new(rho, scenario.cap(), scenario.dim(), self.lambda)
    }
}

/// Exploration pairs whose vectors lie on the scenario grid.
pub fn grid_schedule<T: Scalar>(scenario: &Scenario<T>) -> Result<ExplorationSchedule> {
    ExplorationSchedule::restricted_to(scenario.tariffs(), scenario.grid())
}

fn known_gamma<T: Scalar>(
    scenario: &Scenario<T>,
    kind: PolicyKind,
) -> Result<crate::linalg::Matrix<T>> {
    let k = scenario.tariffs();
    Ok(match scenario.noise().gamma() {
        Some(g) => g.clone(),
        None if kind == PolicyKind::TariffOnly => crate::linalg::Matrix::zeros(k, k),
        None => {
            return Err(invalid(
                "policy",
                format!("{kind} needs a scenario with per-tariff noise"),
            ))
        }
    })
}

pub fn build_policy<T: Scalar>(
    kind: PolicyKind,
    scenario: &Arc<Scenario<T>>,
    settings: &PolicySettings<T>,
    horizon: usize,
) -> Result<Box<dyn Policy<T>>> {
    let params = settings.confidence_params(scenario)?;
    let delta = settings.delta;
    Ok(match kind {
        PolicyKind::Model1 => {
            let n = settings
                .explore_len
                .unwrap_or_else(|| default_explore_len(horizon));
            if n >= horizon {
                return Err(invalid("explore_len", "must be smaller than the horizon"));
            }
            let rule = settings
                .gamma_override
                .map_or(GammaRule::Theoretical, GammaRule::Fixed);
            let mut p = Model1Policy::new(params, delta, n, grid_schedule(scenario)?, rule)?;
            if let Some(g) = settings.g_bound {
                p = p.with_g_bound(g);
            }
            Box::new(p)
        }
        PolicyKind::Model1KnownGamma => {
            let mut p =
                Model1Policy::with_known_gamma(params, delta, known_gamma(scenario, kind)?)?;
            if let Some(g) = settings.g_bound {
                p = p.with_g_bound(g);
            }
            Box::new(p)
        }
        PolicyKind::Model2 => Box::new(Model2Policy::new(params, delta)?),
        PolicyKind::TariffOnly => Box::new(TariffOnlyPolicy::new(
            params,
            delta,
            known_gamma(scenario, kind)?,
        )?),
        PolicyKind::Fixed => Box::new(FixedPolicy::new(settings.fixed_allocation.clone())),
        PolicyKind::Cyclic => Box::new(CyclicPolicy::new(grid_schedule(scenario)?)),
        PolicyKind::Oracle => Box::new(OraclePolicy::new(Arc::clone(scenario))),
    })
}

/// Seed-independent part of a run: contexts, targets, features and the
/// per-round oracle.
#[derive(Debug, Clone)]
pub struct Environment<T> {
    scenario: Arc<Scenario<T>>,
    rounds: Vec<RoundTruth<T>>,
    oracle: Vec<T>,
}

impl<T: Scalar> Environment<T> {
    pub fn new(scenario: Arc<Scenario<T>>, horizon: usize) -> Result<Self> {
        let contexts = scenario.contexts(horizon);
        let rounds = contexts
            .iter()
            .map(|x| scenario.round_truth(x))
            .collect::<Result<Vec<_>>>()?;
        let oracle = rounds
            .iter()
            .map(|r| {
                oracle_from_means(&scenario, &r.means, r.target, scenario.grid()).map(|(v, _)| v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scenario,
            rounds,
            oracle,
        })
    }

    pub fn scenario(&self) -> &Arc<Scenario<T>> {
        &self.scenario
    }

    pub fn horizon(&self) -> usize {
        self.rounds.len()
    }

    pub fn rounds(&self) -> &[RoundTruth<T>] {
        &self.rounds
    }

    /// Plays `policy` once with noise seed `seed`.
    pub fn run(&self, policy: &mut dyn Policy<T>, seed: u64) -> Result<RegretLedger<T>> {
        self.run_with(policy, seed, |_, _| Ok(()))
    }

    /// As [`Self::run`], calling `inspect(t, policy)` after each update.
    pub fn run_with(
        &self,
        policy: &mut dyn Policy<T>,
        seed: u64,
        mut inspect: impl FnMut(usize, &dyn Policy<T>) -> Result<()>,
    ) -> Result<RegretLedger<T>> {
        let scenario = &*self.scenario;
        let grid = scenario.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ledger = RegretLedger::with_capacity(self.horizon());
        for (i, truth) in self.rounds.iter().enumerate() {
            let t = i + 1;
            let input = RoundInput {
                t,
                context: &truth.context,
                target: truth.target,
                features: &truth.features,
                grid,
            };
            let decision = policy.decide(&input)?;
            let p = &decision.allocation;
            let phi = truth.features.for_allocation(p)?;
            let expected = scenario.expected_loss(truth, truth.target, p);
            let mean = phi.dot(scenario.transfer().theta());
            let observed = mean + scenario.noise().sample(p, &mut rng);
            let realized = (observed - truth.target) * (observed - truth.target);
            ledger.record_round(RoundRecord {
                t,
                chosen_index: decision.index_in_grid,
                realized_loss: realized,
                expected_loss: expected,
                oracle_loss: self.oracle[i],
            })?;
            policy.observe(t, p, &phi, observed)?;
            inspect(t, policy)?;
        }
        Ok(ledger)
    }

    /// One ledger per seed, in seed order.
    pub fn run_seeds(
        &self,
        kind: PolicyKind,
        settings: &PolicySettings<T>,
        seeds: &[u64],
    ) -> Result<Vec<RegretLedger<T>>> {
        if seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        seeds
            .par_iter()
            .map(|&seed| {
                let mut policy = build_policy(kind, &self.scenario, settings, self.horizon())?;
                self.run(policy.as_mut(), seed)
            })
            .collect()
    }
}

/// Outputs of one policy over a seed set.
#[derive(Debug, Clone)]
pub struct ExperimentReport<T> {
    pub policy: PolicyKind,
    pub seeds: Vec<u64>,
    pub ledgers: Vec<RegretLedger<T>>,
    pub summary: RunSummary,
}

impl<T: Scalar> ExperimentReport<T> {
    /// `seed_<s>.csv` per run plus `aggregate.csv` under `dir/<policy>/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let out = dir.join(self.policy.name());
        std::fs::create_dir_all(&out)?;
        for (seed, ledger) in self.seeds.iter().zip(&self.ledgers) {
            ledger.save_csv(&out.join(format!("seed_{seed}.csv")))?;
        }
        self.summary.save_csv(&out.join("aggregate.csv"))
    }
}

pub fn run_experiment<T: Scalar>(
    scenario: Scenario<T>,
    kind: PolicyKind,
    settings: &PolicySettings<T>,
    seeds: &[u64],
) -> Result<ExperimentReport<T>> {
    let horizon = scenario.horizon();
    let env = Environment::new(Arc::new(scenario), horizon)?;
    let ledgers = env.run_seeds(kind, settings, seeds)?;
    let summary = aggregate_runs(&ledgers)?;
    Ok(ExperimentReport {
        policy: kind,
        seeds: seeds.to_vec(),
        ledgers,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;

    fn env(horizon: usize) -> Environment<f64> {
        let s = Scenario::from_config(&ScenarioConfig::default()).unwrap();
        Environment::new(Arc::new(s), horizon).unwrap()
    }

    #[test]
    fn runs_are_deterministic() {
        let e = env(300);
        let settings = PolicySettings::new(0.05, 0.1);
        let a = e.run_seeds(PolicyKind::Model2, &settings, &[3, 4]).unwrap();
        let b = e.run_seeds(PolicyKind::Model2, &settings, &[3, 4]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].rows()[5].realized_loss, a[1].rows()[5].realized_loss);
    }

    #[test]
    fn oracle_has_no_regret() {
        let e = env(500);
        let settings = PolicySettings::new(0.05, 0.1);
        for l in e.run_seeds(PolicyKind::Oracle, &settings, &[0, 1]).unwrap() {
            assert!(l.final_regret().abs() <= 1e-9);
        }
    }

    #[test]
    fn every_policy_runs() {
        let e = env(200);
        let settings = PolicySettings::new(0.05, 0.1).with_explore_len(20);
        for kind in PolicyKind::ALL {
            let l = e.run_seeds(kind, &settings, &[0]).unwrap();
            assert_eq!(l[0].len(), 200);
            assert!(l[0].min_instantaneous_regret().unwrap() >= -1e-12);
        }
    }

    #[test]
    fn model1_explores_on_grid() {
        let e = env(100);
        let settings = PolicySettings::new(0.05, 0.1).with_explore_len(30);
        let l = e.run_seeds(PolicyKind::Model1, &settings, &[0]).unwrap();
        assert!(l[0].rows().iter().all(|r| r.chosen_index.is_some()));
        assert!(e
            .run_seeds(
                PolicyKind::Model1,
                &settings.clone().with_explore_len(100),
                &[0]
            )
            .is_err());
    }
}
