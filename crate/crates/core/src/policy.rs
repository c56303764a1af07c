//! Decision rules.
//!
//! Every policy is a sequential state machine driven by [`Policy::decide`]
//! then [`Policy::observe`] once per round. Because `φ(x, p)` is linear in
//! `p`, the optimistic rules evaluate a whole grid from two `K`-sized
//! summaries per round: the tariff predictions `m_j = φ(x,e_j)ᵀθ̂` and the
//! Gram matrix `G_jk = φ(x,e_j)ᵀ V⁻¹ φ(x,e_k)`, giving `φ(x,p)ᵀθ̂ = pᵀm` and
//! `‖φ(x,p)‖²_{V⁻¹} = pᵀGp`.

use std::sync::Arc;

use crate::covariance::{
    estimate_covariance, gamma_error_bound, CovarianceEstimate, ExplorationRecord,
    ExplorationSchedule,
};
use crate::domain::{clip, Allocation, Context, FeatureVector, TariffFeatures};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::ridge::{check_delta, confidence_radius, ConfidenceParams, RidgeState};
use crate::scalar::Scalar;
use crate::sim::Scenario;

/// What a policy sees before choosing.
#[derive(Debug, Clone, Copy)]
pub struct RoundInput<'a, T> {
    /// 1-based round.
    pub t: usize,
    pub context: &'a Context,
    pub target: T,
    pub features: &'a TariffFeatures<T>,
    pub grid: &'a [Allocation<T>],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision<T> {
    pub allocation: Allocation<T>,
    pub index_in_grid: Option<usize>,
    /// `estimate − bonus`.
    pub score: T,
    pub bonus: T,
    pub estimate: T,
}

impl<T: Scalar> Decision<T> {
    fn plain(allocation: Allocation<T>, grid: &[Allocation<T>]) -> Self {
        let index_in_grid = grid_index(grid, &allocation);
        Self {
            allocation,
            index_in_grid,
            score: T::zero(),
            bonus: T::zero(),
            estimate: T::zero(),
        }
    }
}

pub trait Policy<T: Scalar>: Send {
    fn name(&self) -> &'static str;

    fn decide(&mut self, round: &RoundInput<'_, T>) -> Result<Decision<T>>;

    /// Feedback for the allocation chosen at round `t`.
    fn observe(
        &mut self,
        t: usize,
        chosen: &Allocation<T>,
        features: &FeatureVector<T>,
        observed: T,
    ) -> Result<()>;
}

/// Position of `p` in `grid`, if present.
pub fn grid_index<T: Scalar>(grid: &[Allocation<T>], p: &Allocation<T>) -> Option<usize> {
    grid.iter()
        .position(|q| q.approx_eq(p, T::simplex_tolerance()))
}

/// Lowest-index argmin of `estimate − bonus`.
fn argmin_grid<T: Scalar>(
    grid: &[Allocation<T>],
    mut objective: impl FnMut(&Allocation<T>) -> (T, T),
) -> Result<Decision<T>> {
    let mut best: Option<(usize, T, T, T)> = None;
    for (i, p) in grid.iter().enumerate() {
        let (estimate, bonus) = objective(p);
        let score = estimate - bonus;
        if best.is_none_or(|(_, s, _, _)| score < s) {
            best = Some((i, score, bonus, estimate));
        }
    }
    let (i, score, bonus, estimate) = best.ok_or(Error::EmptyGrid)?;
    Ok(Decision {
        allocation: grid[i].clone(),
        index_in_grid: Some(i),
        score,
        bonus,
        estimate,
    })
}

/// Per-round summaries of the ridge state restricted to one context.
struct Geometry<T> {
    means: Vec<T>,
    gram: Matrix<T>,
}

impl<T: Scalar> Geometry<T> {
    fn new(ridge: &RidgeState<T>, features: &TariffFeatures<T>) -> Result<Self> {
        let theta = ridge.estimate();
        let phis: Vec<Vec<T>> = (0..features.tariffs())
            .map(|j| features.tariff(j))
            .collect();
        Ok(Self {
            means: features.means(&theta),
            gram: ridge.ellipsoid_gram(&phis)?,
        })
    }

    fn prediction(&self, p: &Allocation<T>) -> T {
        dot(&self.means, p.weights())
    }

    fn norm_sq(&self, p: &Allocation<T>) -> T {
        p.quad(&self.gram).max(T::zero())
    }
}

/// `B_{t−1}(δ/t²)`.
pub fn round_radius<T: Scalar>(params: &ConfidenceParams<T>, t: usize, delta: T) -> Result<T> {
    if t == 0 {
        return Err(crate::error::invalid("t", "rounds are 1-based"));
    }
    let tf = T::from_usize_lossy(t);
    confidence_radius(params, t - 1, delta / (tf * tf))
}

/// `α = γ + min{L, 2C·B·‖φ‖_{V⁻¹}}`.
pub fn optimistic_bonus<T: Scalar>(
    gamma: T,
    loss_cap: T,
    cap: T,
    radius: T,
    ellipsoid_norm: T,
) -> T {
    gamma + loss_cap.min(T::lit(2.0) * cap * radius * ellipsoid_norm)
}

/// How the covariance error bound `γ` is set after exploration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaRule<T> {
    /// `(K + 8) κ_n √n / n₀` at confidence `δ/2`.
    Theoretical,
    Fixed(T),
}

/// Optimistic tracking under per-tariff noise: explore `n` rounds along
/// the schedule, estimate `Γ`, then pick `argmin ℓ̂ − α`.
#[derive(Debug, Clone)]
pub struct Model1Policy<T> {
    ridge: RidgeState<T>,
    params: ConfidenceParams<T>,
    delta: T,
    explore_len: usize,
    schedule: ExplorationSchedule,
    record: ExplorationRecord<T>,
    covariance: Option<CovarianceEstimate<T>>,
    gamma_rule: GammaRule<T>,
    g_override: Option<T>,
    g_bound: Option<T>,
}

impl<T: Scalar> Model1Policy<T> {
    pub fn new(
        params: ConfidenceParams<T>,
        delta: T,
        explore_len: usize,
        schedule: ExplorationSchedule,
        gamma_rule: GammaRule<T>,
    ) -> Result<Self> {
        check_delta(delta)?;
        if explore_len == 0 {
            return Err(crate::error::invalid(
                "n",
                "exploration needs at least one round",
            ));
        }
        if schedule.is_empty() {
            return Err(crate::error::invalid(
                "schedule",
                "empty exploration schedule",
            ));
        }
        Ok(Self {
            ridge: RidgeState::new(params.dim, params.lambda)?,
            params,
            delta,
            explore_len,
            schedule,
            record: ExplorationRecord::new(),
            covariance: None,
            gamma_rule,
            g_override: None,
            g_bound: None,
        })
    }

    /// No exploration and `γ = 0`.
    pub fn with_known_gamma(
        params: ConfidenceParams<T>,
        delta: T,
        gamma: Matrix<T>,
    ) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self {
            ridge: RidgeState::new(params.dim, params.lambda)?,
            params,
            delta,
            explore_len: 0,
            schedule: ExplorationSchedule::new(gamma.rows())?,
            record: ExplorationRecord::new(),
            covariance: Some(CovarianceEstimate::known(gamma)),
            gamma_rule: GammaRule::Fixed(T::zero()),
            g_override: None,
            g_bound: None,
        })
    }

    /// Fixes `G` instead of deriving it from the grid.
    pub fn with_g_bound(mut self, g: T) -> Self {
        self.g_override = Some(g);
        self
    }

    pub fn ridge(&self) -> &RidgeState<T> {
        &self.ridge
    }

    pub fn params(&self) -> &ConfidenceParams<T> {
        &self.params
    }

    pub fn explore_len(&self) -> usize {
        self.explore_len
    }

    /// `Γ̂` and `γ`, once exploration is over.
    pub fn covariance(&self) -> Option<&CovarianceEstimate<T>> {
        self.covariance.as_ref()
    }

    /// `G`, once known.
    pub fn g_bound(&self) -> Option<T> {
        self.g_bound
    }

    /// `L = C² + G`, once `G` is known.
    pub fn loss_cap(&self) -> Option<T> {
        self.g_bound.map(|g| self.params.cap * self.params.cap + g)
    }

    fn ensure_ready(&mut self, grid: &[Allocation<T>]) -> Result<()> {
        if self.covariance.is_none() {
            let theta = self.ridge.estimate();
            let est = estimate_covariance(&self.record, &theta, self.params.cap)?;
            let k = est.gamma_hat.rows();
            let gamma = match self.gamma_rule {
                GammaRule::Theoretical => {
                    gamma_error_bound(self.explore_len, self.delta / T::lit(2.0), &self.params, k)?
                }
                GammaRule::Fixed(g) => g,
            };
            self.covariance = Some(est.with_gamma_bound(gamma));
        }
        if self.g_bound.is_none() {
            let g = match self.g_override {
                Some(g) => g,
                None => {
                    let cov = self.covariance.as_ref().expect("set above");
                    grid.iter()
                        .map(|p| p.quad(&cov.gamma_hat))
                        .fold(T::zero(), T::max)
                }
            };
            self.g_bound = Some(g);
        }
        Ok(())
    }

    fn ready(&self) -> Result<(&CovarianceEstimate<T>, T)> {
        match (&self.covariance, self.loss_cap()) {
            (Some(c), Some(l)) => Ok((c, l)),
            _ => Err(Error::Invariant(
                "covariance estimate not available yet".into(),
            )),
        }
    }

    /// `ℓ̂ = ([φ(x,p)ᵀθ̂]_C − c)² + pᵀΓ̂p`.
    pub fn loss_estimate(
        &self,
        features: &TariffFeatures<T>,
        c: T,
        p: &Allocation<T>,
    ) -> Result<T> {
        let cov = self
            .covariance
            .as_ref()
            .ok_or_else(|| Error::Invariant("covariance estimate not available yet".into()))?;
        let pred = features.for_allocation(p)?.dot(&self.ridge.estimate());
        let gap = clip(pred, self.params.cap) - c;
        Ok(gap * gap + p.quad(&cov.gamma_hat))
    }

    /// `α_{t,p} = γ + min{L, 2C·B_{t−1}(δ/t²)·‖φ(x,p)‖_{V⁻¹}}`.
    pub fn bonus(&self, features: &TariffFeatures<T>, p: &Allocation<T>, t: usize) -> Result<T> {
        let (cov, loss_cap) = self.ready()?;
        let norm = self
            .ridge
            .ellipsoid_norm(features.for_allocation(p)?.values())?;
        let radius = round_radius(&self.params, t, self.delta)?;
        Ok(optimistic_bonus(
            cov.gamma_bound,
            loss_cap,
            self.params.cap,
            radius,
            norm,
        ))
    }

    /// `argmin ℓ̂ − α` over `grid` for `t > n`.
    pub fn select(
        &mut self,
        features: &TariffFeatures<T>,
        c: T,
        grid: &[Allocation<T>],
        t: usize,
    ) -> Result<Decision<T>> {
        if grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        self.ensure_ready(grid)?;
        let (cov, loss_cap) = self.ready()?;
        let geo = Geometry::new(&self.ridge, features)?;
        let radius = round_radius(&self.params, t, self.delta)?;
        let cap = self.params.cap;
        argmin_grid(grid, |p| {
            let gap = clip(geo.prediction(p), cap) - c;
            let estimate = gap * gap + p.quad(&cov.gamma_hat);
            let bonus = optimistic_bonus(
                cov.gamma_bound,
                loss_cap,
                cap,
                radius,
                geo.norm_sq(p).sqrt(),
            );
            (estimate, bonus)
        })
    }
}

impl<T: Scalar> Policy<T> for Model1Policy<T> {
    fn name(&self) -> &'static str {
        if self.explore_len == 0 {
            "model1_known_gamma"
        } else {
            "model1"
        }
    }

    fn decide(&mut self, round: &RoundInput<'_, T>) -> Result<Decision<T>> {
        if round.t <= self.explore_len {
            let p = self.schedule.at(round.t)?;
            return Ok(Decision::plain(p, round.grid));
        }
        self.select(round.features, round.target, round.grid, round.t)
    }

    fn observe(
        &mut self,
        t: usize,
        chosen: &Allocation<T>,
        features: &FeatureVector<T>,
        observed: T,
    ) -> Result<()> {
        self.ridge.update(features.values(), observed)?;
        if t <= self.explore_len {
            self.record.push(chosen.clone(), features.clone(), observed);
        }
        Ok(())
    }
}

/// Optimistic tracking under global noise: `argmin ℓ̃ − β`.
#[derive(Debug, Clone)]
pub struct Model2Policy<T> {
    ridge: RidgeState<T>,
    params: ConfidenceParams<T>,
    delta: T,
}

impl<T: Scalar> Model2Policy<T> {
    pub fn new(params: ConfidenceParams<T>, delta: T) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self {
            ridge: RidgeState::new(params.dim, params.lambda)?,
            params,
            delta,
        })
    }

    pub fn ridge(&self) -> &RidgeState<T> {
        &self.ridge
    }

    /// `ℓ̃ = (φ(x,p)ᵀθ̂ − c)²`, unclipped.
    pub fn loss_estimate(
        &self,
        features: &TariffFeatures<T>,
        c: T,
        p: &Allocation<T>,
    ) -> Result<T> {
        let gap = features.for_allocation(p)?.dot(&self.ridge.estimate()) - c;
        Ok(gap * gap)
    }

    /// `β_{t,p} = B_{t−1}(δ/t²)²·‖φ(x,p)‖²_{V⁻¹}`.
    pub fn bonus(&self, features: &TariffFeatures<T>, p: &Allocation<T>, t: usize) -> Result<T> {
        let norm = self
            .ridge
            .ellipsoid_norm(features.for_allocation(p)?.values())?;
        let radius = round_radius(&self.params, t, self.delta)?;
        Ok(radius * radius * norm * norm)
    }

    /// First grid element at `t = 1`, `argmin ℓ̃ − β` afterwards.
    pub fn select(
        &self,
        features: &TariffFeatures<T>,
        c: T,
        grid: &[Allocation<T>],
        t: usize,
    ) -> Result<Decision<T>> {
        let first = grid.first().ok_or(Error::EmptyGrid)?;
        if t <= 1 {
            let estimate = self.loss_estimate(features, c, first)?;
            return Ok(Decision {
                allocation: first.clone(),
                index_in_grid: Some(0),
                score: estimate,
                bonus: T::zero(),
                estimate,
            });
        }
        let geo = Geometry::new(&self.ridge, features)?;
        let radius = round_radius(&self.params, t, self.delta)?;
        let r2 = radius * radius;
        argmin_grid(grid, |p| {
            let gap = geo.prediction(p) - c;
            (gap * gap, r2 * geo.norm_sq(p))
        })
    }
}

impl<T: Scalar> Policy<T> for Model2Policy<T> {
    fn name(&self) -> &'static str {
        "model2"
    }

    fn decide(&mut self, round: &RoundInput<'_, T>) -> Result<Decision<T>> {
        self.select(round.features, round.target, round.grid, round.t)
    }

    fn observe(
        &mut self,
        _t: usize,
        _chosen: &Allocation<T>,
        features: &FeatureVector<T>,
        observed: T,
    ) -> Result<()> {
        self.ridge.update(features.values(), observed)
    }
}

/// `2C·B_{t−1}(δ/t²)·√(pᵀṼ⁻¹p)` with `Ṽ = λI_K + Σ p_s p_sᵀ`.
pub fn bonus_tariff_only<T: Scalar>(
    tilde: &RidgeState<T>,
    p: &Allocation<T>,
    t: usize,
    params: &ConfidenceParams<T>,
    delta: T,
) -> Result<T> {
    let radius = round_radius(params, t, delta)?;
    Ok(T::lit(2.0) * params.cap * radius * tilde.ellipsoid_norm(p.weights())?)
}

/// Model 1 selection with known `Γ` whose bonus only tracks how often each
/// allocation direction was played.
#[derive(Debug, Clone)]
pub struct TariffOnlyPolicy<T> {
    ridge: RidgeState<T>,
    tilde: RidgeState<T>,
    params: ConfidenceParams<T>,
    delta: T,
    gamma: Matrix<T>,
}

impl<T: Scalar> TariffOnlyPolicy<T> {
    pub fn new(params: ConfidenceParams<T>, delta: T, gamma: Matrix<T>) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self {
            ridge: RidgeState::new(params.dim, params.lambda)?,
            tilde: RidgeState::new(gamma.rows(), params.lambda)?,
            params,
            delta,
            gamma,
        })
    }

    /// `Ṽ` accumulator.
    pub fn design(&self) -> &RidgeState<T> {
        &self.tilde
    }
}

impl<T: Scalar> Policy<T> for TariffOnlyPolicy<T> {
    fn name(&self) -> &'static str {
        "tariff_only"
    }

    fn decide(&mut self, round: &RoundInput<'_, T>) -> Result<Decision<T>> {
        let geo = Geometry::new(&self.ridge, round.features)?;
        let radius = round_radius(&self.params, round.t, self.delta)?;
        let scale = T::lit(2.0) * self.params.cap * radius;
        let cap = self.params.cap;
        let v_inv = self.tilde.v_inverse();
        argmin_grid(round.grid, |p| {
            let gap = clip(geo.prediction(p), cap) - round.target;
            let estimate = gap * gap + p.quad(&self.gamma);
            (estimate, scale * p.quad(v_inv).max(T::zero()).sqrt())
        })
    }

    fn observe(
        &mut self,
        _t: usize,
        chosen: &Allocation<T>,
        features: &FeatureVector<T>,
        observed: T,
    ) -> Result<()> {
        self.ridge.update(features.values(), observed)?;
        self.tilde.update(chosen.weights(), T::zero())
    }
}

/// Always plays the same allocation.
#[derive(Debug, Clone)]
pub struct FixedPolicy<T> {
    allocation: Allocation<T>,
}

impl<T: Scalar> FixedPolicy<T> {
    pub fn new(allocation: Allocation<T>) -> Self {
        Self { allocation }
    }
}

impl<T: Scalar> Policy<T> for FixedPolicy<T> {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn decide(&mut self, round: &RoundInput<'_, T>) -> Result<Decision<T>> {
        Ok(Decision::plain(self.allocation.clone(), round.grid))
    }

    fn observe(&mut self, _: usize, _: &Allocation<T>, _: &FeatureVector<T>, _: T) -> Result<()> {
        Ok(())
    }
}

/// Cycles through an exploration schedule forever.
#[derive(Debug, Clone)]
pub struct CyclicPolicy {
    schedule: ExplorationSchedule,
}

impl CyclicPolicy {
    pub fn new(schedule: ExplorationSchedule) -> Self {
        Self { schedule }
    }
}

impl<T: Scalar> Policy<T> for CyclicPolicy {
    fn name(&self) -> &'static str {
        "cyclic"
    }

    fn decide(&mut self, round: &RoundInput<'_, T>) -> Result<Decision<T>> {
        Ok(Decision::plain(self.schedule.at(round.t)?, round.grid))
    }

    fn observe(&mut self, _: usize, _: &Allocation<T>, _: &FeatureVector<T>, _: T) -> Result<()> {
        Ok(())
    }
}

/// Plays the true per-round minimizer; uses the simulator's `θ` and noise.
#[derive(Debug, Clone)]
pub struct OraclePolicy<T> {
    scenario: Arc<Scenario<T>>,
}

impl<T: Scalar> OraclePolicy<T> {
    pub fn new(scenario: Arc<Scenario<T>>) -> Self {
        Self { scenario }
    }
}

impl<T: Scalar> Policy<T> for OraclePolicy<T> {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn decide(&mut self, round: &RoundInput<'_, T>) -> Result<Decision<T>> {
        let means = round.features.means(self.scenario.transfer().theta());
        let (loss, i) =
            crate::eval::oracle_from_means(&self.scenario, &means, round.target, round.grid)?;
        Ok(Decision {
            allocation: round.grid[i].clone(),
            index_in_grid: Some(i),
            score: loss,
            bonus: T::zero(),
            estimate: loss,
        })
    }

    fn observe(&mut self, _: usize, _: &Allocation<T>, _: &FeatureVector<T>, _: T) -> Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{allocation_grid, FeatureConfig};
    use crate::sim::default_gamma;

    fn tiny_features() -> FeatureConfig {
        FeatureConfig {
            tariffs: 3,
            half_hours: 1,
            temperature_range: [0.0, 1.0],
            temperature_knots: vec![],
            yearly_harmonics: 0,
            weekday_effects: false,
        }
    }

    fn ctx() -> Context {
        Context {
            time_index: 1,
            half_hour: 1,
            day_of_week: 1,
            year_position: 0.0,
            temperature: 0.0,
        }
    }

    fn params(d: usize) -> ConfidenceParams<f64> {
        ConfidenceParams::new(0.02, 1.0, d, 1.0).unwrap()
    }

    #[test]
    fn bonus_branches() {
        assert_eq!(optimistic_bonus::<f64>(0.0, 2.0, 1.0, 3.0, 1e6), 2.0);
        assert!((optimistic_bonus::<f64>(0.0, 2.0, 1.0, 3.0, 0.1) - 0.6).abs() < 1e-15);
        assert!((optimistic_bonus::<f64>(0.05, 2.0, 1.0, 3.0, 0.1) - 0.65).abs() < 1e-15);
    }

    #[test]
    fn model1_loss_estimate_with_default_gamma() {
        let f = tiny_features();
        let feats = f.tariff_features::<f64>(&ctx()).unwrap();
        let pol = Model1Policy::with_known_gamma(params(f.dim()), 0.1, default_gamma()).unwrap();
        // θ̂ = 0, so the clipped prediction is 0 and c = 0 matches it.
        let p = Allocation::vertex(3, 0);
        assert!((pol.loss_estimate(&feats, 0.0, &p).unwrap() - 4.44e-4).abs() < 1e-15);
        let p = Allocation::new(vec![0.0, 0.5, 0.5]).unwrap();
        assert!((pol.loss_estimate(&feats, 0.0, &p).unwrap() - 4.19e-4).abs() < 1e-15);

        let pol =
            Model1Policy::with_known_gamma(params(f.dim()), 0.1, Matrix::zeros(3, 3)).unwrap();
        assert_eq!(pol.loss_estimate(&feats, 0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn model1_clips_predictions() {
        let f = tiny_features();
        let feats = f.tariff_features::<f64>(&ctx()).unwrap();
        let mut pol =
            Model1Policy::with_known_gamma(params(f.dim()), 0.1, Matrix::zeros(3, 3)).unwrap();
        let phi = feats.for_allocation(&Allocation::vertex(3, 0)).unwrap();
        for t in 1..=50 {
            pol.observe(t, &Allocation::vertex(3, 0), &phi, 5.0)
                .unwrap();
        }
        // prediction ≈ 5 is clipped to C = 1.
        let l = pol
            .loss_estimate(&feats, 0.5, &Allocation::vertex(3, 0))
            .unwrap();
        assert!((l - 0.25).abs() < 1e-12);
    }

    #[test]
    fn model1_select_matches_direct_evaluation() {
        let f = FeatureConfig {
            half_hours: 2,
            temperature_knots: vec![0.5],
            ..tiny_features()
        };
        let grid = allocation_grid::<f64>(10).unwrap();
        let mut pol =
            Model1Policy::with_known_gamma(params(f.dim()), 0.1, default_gamma()).unwrap();
        let mut x = ctx();
        let mut rng = 0.37f64;
        for t in 1..=300 {
            x.half_hour = t % 2 + 1;
            x.temperature = rng;
            rng = (rng * 7.3).fract();
            let feats = f.tariff_features::<f64>(&x).unwrap();
            let round = RoundInput {
                t,
                context: &x,
                target: 0.3,
                features: &feats,
                grid: &grid,
            };
            let d = pol.decide(&round).unwrap();
            let i = d.index_in_grid.unwrap();
            let direct: Vec<f64> = grid
                .iter()
                .map(|p| {
                    pol.loss_estimate(&feats, 0.3, p).unwrap() - pol.bonus(&feats, p, t).unwrap()
                })
                .collect();
            let best = direct.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!((direct[i] - best).abs() < 1e-12);
            assert!((d.score - direct[i]).abs() < 1e-12);
            assert_eq!(d.score, d.estimate - d.bonus);
            let means = [0.2, 0.3, 0.45];
            let y = dot(&means, d.allocation.weights()) + 0.01 * (rng - 0.5);
            let phi = feats.for_allocation(&d.allocation).unwrap();
            pol.observe(t, &d.allocation, &phi, y).unwrap();
        }
        assert_eq!(pol.loss_cap(), Some(1.0 + 2.07 * 4e-4));
    }

    #[test]
    fn model1_explores_then_estimates() {
        let f = tiny_features();
        let feats = f.tariff_features::<f64>(&ctx()).unwrap();
        let grid = allocation_grid::<f64>(4).unwrap();
        let schedule = ExplorationSchedule::new(3).unwrap();
        let mut pol = Model1Policy::new(
            params(f.dim()),
            0.1,
            12,
            schedule.clone(),
            GammaRule::Fixed(0.01),
        )
        .unwrap();
        let x = ctx();
        for t in 1..=12 {
            let round = RoundInput {
                t,
                context: &x,
                target: 0.3,
                features: &feats,
                grid: &grid,
            };
            let d = pol.decide(&round).unwrap();
            assert_eq!(d.allocation, schedule.at::<f64>(t).unwrap());
            let phi = feats.for_allocation(&d.allocation).unwrap();
            pol.observe(t, &d.allocation, &phi, 0.3).unwrap();
        }
        assert!(pol.covariance().is_none());
        let round = RoundInput {
            t: 13,
            context: &x,
            target: 0.3,
            features: &feats,
            grid: &grid,
        };
        let d = pol.decide(&round).unwrap();
        let cov = pol.covariance().unwrap();
        assert_eq!(cov.gamma_bound, 0.01);
        assert_eq!(cov.n_explore, 12);
        assert!(d.bonus >= 0.01);
        let g = grid
            .iter()
            .map(|p| p.quad(&cov.gamma_hat))
            .fold(0.0, f64::max);
        assert_eq!(pol.loss_cap(), Some(1.0 + g));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let f = tiny_features();
        let feats = f.tariff_features::<f64>(&ctx()).unwrap();
        let pol =
            Model1Policy::with_known_gamma(params(f.dim()), 0.1, Matrix::zeros(3, 3)).unwrap();
        let mut pol = pol;
        // θ̂ = 0, Γ = 0, fresh V: all vertices are symmetric.
        let grid = vec![
            Allocation::vertex(3, 2),
            Allocation::vertex(3, 0),
            Allocation::vertex(3, 1),
        ];
        let d = pol.select(&feats, 0.2, &grid, 1).unwrap();
        assert_eq!(d.index_in_grid, Some(0));
        let single = vec![Allocation::vertex(3, 1)];
        assert_eq!(
            pol.select(&feats, 0.2, &single, 1).unwrap().index_in_grid,
            Some(0)
        );
        assert!(matches!(
            pol.select(&feats, 0.2, &[], 1),
            Err(Error::EmptyGrid)
        ));
    }

    #[test]
    fn argmin_is_shift_invariant() {
        let grid = allocation_grid::<f64>(5).unwrap();
        let vals: Vec<f64> = (0..grid.len())
            .map(|i| ((i * 37) % 11) as f64 * 0.1)
            .collect();
        let base = argmin_grid(&grid, |p| (vals[grid_index(&grid, p).unwrap()], 0.0)).unwrap();
        for shift in [-3.0, 0.5, 100.0] {
            let d = argmin_grid(&grid, |p| {
                (vals[grid_index(&grid, p).unwrap()] + shift, 0.0)
            })
            .unwrap();
            assert_eq!(d.index_in_grid, base.index_in_grid);
        }
    }

    #[test]
    fn model2_loss_estimate_is_unclipped() {
        let f = tiny_features();
        let feats = f.tariff_features::<f64>(&ctx()).unwrap();
        let pol = Model2Policy::new(params(f.dim()), 0.1).unwrap();
        let p = Allocation::vertex(3, 0);
        assert_eq!(pol.loss_estimate(&feats, 0.0, &p).unwrap(), 0.0);
        assert!((pol.loss_estimate(&feats, -0.1, &p).unwrap() - 0.01).abs() < 1e-15);
        // prediction 0 against c = 0.5 equals (−0.2 − 0.3)² up to a shift.
        assert!((pol.loss_estimate(&feats, 0.5, &p).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn model2_first_round_and_fresh_symmetry() {
        let f = tiny_features();
        let feats = f.tariff_features::<f64>(&ctx()).unwrap();
        let mut pol = Model2Policy::new(params(f.dim()), 0.1).unwrap();
        let grid = vec![Allocation::vertex(3, 1), Allocation::vertex(3, 0)];
        assert_eq!(
            pol.select(&feats, 0.3, &grid, 1).unwrap().index_in_grid,
            Some(0)
        );

        // vertices have equal β on a fresh state; ℓ̃ decides.
        let phi = feats.for_allocation(&Allocation::vertex(3, 1)).unwrap();
        let fresh = Model2Policy::new(params(f.dim()), 0.1).unwrap();
        let b0 = fresh.bonus(&feats, &Allocation::vertex(3, 0), 2).unwrap();
        let b1 = fresh.bonus(&feats, &Allocation::vertex(3, 1), 2).unwrap();
        assert!((b0 - b1).abs() < 1e-15);

        // after playing vertex 1 with y = 0, β favours the unexplored vertex.
        pol.observe(1, &Allocation::vertex(3, 1), &phi, 0.0)
            .unwrap();
        let d = pol.select(&feats, 0.0, &grid, 2).unwrap();
        assert_eq!(d.index_in_grid, Some(1));
        assert!(d.score < 0.0);
    }

    #[test]
    fn model2_two_candidate_oracle() {
        let f = tiny_features();
        let feats = f.tariff_features::<f64>(&ctx()).unwrap();
        let mut pol = Model2Policy::new(params(f.dim()), 0.1).unwrap();
        let grid = vec![Allocation::vertex(3, 0), Allocation::vertex(3, 2)];
        let ys = [(0usize, 0.10), (2, 0.30), (0, 0.12), (2, 0.28), (0, 0.11)];
        for (t, &(j, y)) in ys.iter().enumerate() {
            let phi = feats.for_allocation(&Allocation::vertex(3, j)).unwrap();
            pol.observe(t + 1, &Allocation::vertex(3, j), &phi, y)
                .unwrap();
        }
        // independent recomputation: V = I + Σ φφᵀ, θ̂ = V⁻¹ Σ yφ.
        let d = f.dim();
        let mut v = Matrix::<f64>::identity(d);
        let mut b = vec![0.0; d];
        for &(j, y) in &ys {
            let phi = feats.tariff(j);
            v.add_outer(&phi, &phi, 1.0);
            for i in 0..d {
                b[i] += y * phi[i];
            }
        }
        let vi = v.inverse().unwrap();
        let th = vi.mat_vec(&b);
        let radius = confidence_radius(&params(d), 5, 0.1 / 36.0).unwrap();
        let obj: Vec<f64> = [0usize, 2]
            .iter()
            .map(|&j| {
                let phi = feats.tariff(j);
                (dot(&phi, &th) - 0.2).powi(2) - radius * radius * vi.quad_form(&phi)
            })
            .collect();
        let dec = pol.select(&feats, 0.2, &grid, 6).unwrap();
        let best = if obj[0] <= obj[1] { 0 } else { 1 };
        assert_eq!(dec.index_in_grid, Some(best));
        assert!((dec.score - obj[best]).abs() < 1e-12);
    }

    #[test]
    fn tariff_only_bonus() {
        let p = params(4);
        let v = RidgeState::<f64>::new(3, 1.0).unwrap();
        let vertex = Allocation::vertex(3, 1);
        let b = round_radius(&p, 2, 0.1).unwrap();
        assert!((bonus_tariff_only(&v, &vertex, 2, &p, 0.1).unwrap() - 2.0 * b).abs() < 1e-12);
        let p4 = ConfidenceParams { lambda: 4.0, ..p };
        let v = RidgeState::<f64>::new(3, 4.0).unwrap();
        let b = round_radius(&p4, 2, 0.1).unwrap();
        assert!((bonus_tariff_only(&v, &vertex, 2, &p4, 0.1).unwrap() - b).abs() < 1e-12);

        let mut v = RidgeState::<f64>::new(3, 1.0).unwrap();
        let mut direct = Matrix::<f64>::identity(3);
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            v.update(vertex.weights(), 0.0).unwrap();
            direct.add_outer(vertex.weights(), vertex.weights(), 1.0);
            let now = bonus_tariff_only(&v, &vertex, 5, &p, 0.1).unwrap();
            let oracle = 2.0
                * round_radius(&p, 5, 0.1).unwrap()
                * direct.inverse().unwrap().quad_form(vertex.weights()).sqrt();
            assert!((now - oracle).abs() < 1e-12);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn baselines() {
        let f = tiny_features();
        let feats = f.tariff_features::<f64>(&ctx()).unwrap();
        let grid = allocation_grid::<f64>(2).unwrap();
        let x = ctx();
        let round = |t| RoundInput {
            t,
            context: &x,
            target: 0.1,
            features: &feats,
            grid: &grid,
        };
        let mut fixed = FixedPolicy::new(Allocation::vertex(3, 1));
        for t in [1, 7, 1000] {
            let d = Policy::<f64>::decide(&mut fixed, &round(t)).unwrap();
            assert_eq!(d.allocation.weights(), &[0.0, 1.0, 0.0]);
            assert_eq!(d.index_in_grid, Some(0));
        }
        let mut cyc = CyclicPolicy::new(ExplorationSchedule::new(3).unwrap());
        let d = Policy::<f64>::decide(&mut cyc, &round(4)).unwrap();
        assert_eq!(d.allocation.weights(), &[0.0, 1.0, 0.0]);
    }
}
