//! Synthetic demand-response environment.
//!
//! Consumption is exactly linear in the learner's feature map. Targets are
//! convex mixtures of the High and Low tariff envelopes, so every target is
//! attainable. Noise is Gaussian, either per tariff (`Y = φᵀθ + pᵀε`,
//! `ε ~ N(0, Γ)`) or global (`Y = φᵀθ + e`, `e ~ N(0, σ²)`).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{NoiseConfig, ScenarioConfig, TargetConfig, ThetaConfig, WeatherConfig};
use crate::domain::{
    allocation_grid, Allocation, Context, FeatureConfig, TariffFeatures, TransferModel,
};
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

/// Relative scale used in the matrix below.
pub const DEFAULT_NOISE_SCALE: f64 = 0.02;

const DEFAULT_GAMMA_SHAPE: [[f64; 3]; 3] =
    [[1.11, 0.46, 0.04], [0.46, 1.00, 0.56], [0.04, 0.56, 2.07]];

/// `0.02² · [[1.11, 0.46, 0.04], [0.46, 1.00, 0.56], [0.04, 0.56, 2.07]]`.
pub fn default_gamma<T: Scalar>() -> Matrix<T> {
    let s2 = DEFAULT_NOISE_SCALE * DEFAULT_NOISE_SCALE;
    Matrix::from_fn(3, 3, |i, j| T::lit(DEFAULT_GAMMA_SHAPE[i][j] * s2))
}

/// Observation noise of the environment.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel<T> {
    /// `ε ~ N(0, Γ)` per tariff; `factor · factorᵀ = Γ`.
    TariffDependent { gamma: Matrix<T>, factor: Matrix<T> },
    /// `e ~ N(0, σ²)`.
    Global { sigma: T },
}

impl<T: Scalar> NoiseModel<T> {
    /// Requires `Γ` symmetric positive semidefinite.
    pub fn tariff_dependent(gamma: Matrix<T>) -> Result<Self> {
        if !gamma.is_square() {
            return Err(invalid("gamma", "covariance must be square"));
        }
        let scale = gamma.max_abs().max(T::min_positive_value());
        let tol = scale * T::epsilon() * T::lit(64.0);
        if !gamma.is_symmetric(tol) {
            return Err(invalid("gamma", "covariance must be symmetric"));
        }
        let k = gamma.rows();
        let (vals, vecs) = gamma.symmetric_eigen();
        if vals.iter().any(|&l| l < -tol) {
            return Err(Error::NotPositiveDefinite);
        }
        let roots: Vec<T> = vals.iter().map(|&l| l.max(T::zero()).sqrt()).collect();
        let factor = Matrix::from_fn(k, k, |i, c| vecs[(i, c)] * roots[c]);
        Ok(Self::TariffDependent { gamma, factor })
    }

    pub fn global(sigma: T) -> Result<Self> {
        if !(sigma >= T::zero()) || !sigma.is_finite() {
            return Err(invalid("sigma", "must be finite and non-negative"));
        }
        Ok(Self::Global { sigma })
    }

    pub fn is_tariff_dependent(&self) -> bool {
        matches!(self, Self::TariffDependent { .. })
    }

    pub fn gamma(&self) -> Option<&Matrix<T>> {
        match self {
            Self::TariffDependent { gamma, .. } => Some(gamma),
            Self::Global { .. } => None,
        }
    }

    /// Sub-Gaussian constant: `√λ_max(Γ)` or `σ`.
    pub fn rho(&self) -> T {
        match self {
            Self::TariffDependent { gamma, .. } => {
                let (vals, _) = gamma.symmetric_eigen();
                vals.last()
                    .copied()
                    .unwrap_or(T::zero())
                    .max(T::zero())
                    .sqrt()
            }
            Self::Global { sigma } => *sigma,
        }
    }

    /// `Var(Y | p)`: `pᵀΓp` or `σ²`.
    pub fn variance(&self, p: &Allocation<T>) -> T {
        match self {
            Self::TariffDependent { gamma, .. } => p.quad(gamma),
            Self::Global { sigma } => *sigma * *sigma,
        }
    }

    /// One draw of the additive noise on `Y` at allocation `p`.
    pub fn sample<R: Rng + ?Sized>(&self, p: &Allocation<T>, rng: &mut R) -> T {
        match self {
            Self::TariffDependent { factor, .. } => {
                let k = factor.rows();
                let z: Vec<T> = (0..k).map(|_| T::sample_standard_normal(rng)).collect();
                let eps = factor.mat_vec(&z);
                dot(p.weights(), &eps)
            }
            Self::Global { sigma } => *sigma * T::sample_standard_normal(rng),
        }
    }
}

/// Mixing weight `w(h)` per 1-based half-hour.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetProfile {
    weights: Vec<f64>,
}

impl TargetProfile {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("targets", "empty weight profile"));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(invalid("targets", "weights must lie in [0, 1]"));
        }
        Ok(Self { weights })
    }

    /// `night` on the first third of the day, `evening` on the last third.
    pub fn by_thirds(half_hours: usize, night: f64, day: f64, evening: f64) -> Result<Self> {
        let weights = (0..half_hours)
            .map(|i| {
                if 3 * i < half_hours {
                    night
                } else if 3 * i >= 2 * half_hours {
                    evening
                } else {
                    day
                }
            })
            .collect();
        Self::new(weights)
    }

    pub fn weight(&self, half_hour: usize) -> f64 {
        self.weights[half_hour - 1]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Annual and diurnal temperature cycles plus an AR(1) perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherModel {
    pub mean: f64,
    pub annual_amplitude: f64,
    pub diurnal_amplitude: f64,
    pub ar_coefficient: f64,
    pub ar_scale: f64,
    pub days_per_year: usize,
    pub start_year_position: f64,
}

impl WeatherModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.ar_coefficient.abs() < 1.0) {
            return Err(invalid("weather.ar_coefficient", "must lie in (-1, 1)"));
        }
        if !(self.ar_scale >= 0.0) {
            return Err(invalid("weather.ar_scale", "must be non-negative"));
        }
        if self.days_per_year == 0 {
            return Err(invalid("weather.days_per_year", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.start_year_position) {
            return Err(invalid("weather.start_year_position", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

impl From<&WeatherConfig> for WeatherModel {
    fn from(c: &WeatherConfig) -> Self {
        Self {
            mean: c.mean,
            annual_amplitude: c.annual_amplitude,
            diurnal_amplitude: c.diurnal_amplitude,
            ar_coefficient: c.ar_coefficient,
            ar_scale: c.ar_scale,
            days_per_year: c.days_per_year,
            start_year_position: c.start_year_position,
        }
    }
}

/// Immutable description of one synthetic environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    transfer: TransferModel<T>,
    grid_n: usize,
    grid: Vec<Allocation<T>>,
    noise: NoiseModel<T>,
    horizon: usize,
    targets: TargetProfile,
    weather: WeatherModel,
    rng_seed: u64,
}

impl<T: Scalar> Scenario<T> {
    pub fn new(
        transfer: TransferModel<T>,
        grid_n: usize,
        noise: NoiseModel<T>,
        horizon: usize,
        targets: TargetProfile,
        weather: WeatherModel,
        rng_seed: u64,
    ) -> Result<Self> {
        let k = transfer.tariffs();
        let h = transfer.features().half_hours;
        if k != 3 {
            return Err(invalid(
                "tariffs",
                "the allocation grid is defined for K = 3",
            ));
        }
        if let Some(g) = noise.gamma() {
            if g.rows() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: g.rows(),
                });
            }
        }
        if targets.weights().len() != h {
            return Err(Error::DimensionMismatch {
                expected: h,
                got: targets.weights().len(),
            });
        }
        if horizon == 0 {
            return Err(invalid("horizon", "must be positive"));
        }
        weather.validate()?;
        let grid = allocation_grid(grid_n)?;
        Ok(Self {
            transfer,
            grid_n,
            grid,
            noise,
            horizon,
            targets,
            weather,
            rng_seed,
        })
    }

    pub fn from_config(config: &ScenarioConfig) -> Result<Self> {
        config.features.validate()?;
        let theta = match &config.theta {
            ThetaConfig::Explicit { values } => values.iter().map(|&v| T::lit(v)).collect(),
            ThetaConfig::Profile(profile) => profile.build(&config.features)?,
        };
        let transfer = TransferModel::new(config.features.clone(), theta, T::lit(config.cap))?;
        let noise = match &config.noise {
            NoiseConfig::Model1 { gamma, scale } => {
                let gamma = match gamma {
                    Some(rows) => {
                        let rows: Vec<Vec<T>> = rows
                            .iter()
                            .map(|r| r.iter().map(|&v| T::lit(v)).collect())
                            .collect();
                        Matrix::from_rows(&rows)?
                    }
                    None => {
                        let s2 = scale * scale;
                        Matrix::from_fn(3, 3, |i, j| T::lit(DEFAULT_GAMMA_SHAPE[i][j] * s2))
                    }
                };
                NoiseModel::tariff_dependent(gamma)?
            }
            NoiseConfig::Model2 { sigma } => NoiseModel::global(T::lit(*sigma))?,
        };
        let h = config.features.half_hours;
        let targets = match &config.targets {
            TargetConfig::Weights { weights } => TargetProfile::new(weights.clone())?,
            TargetConfig::Thirds {
                night,
                day,
                evening,
            } => TargetProfile::by_thirds(h, *night, *day, *evening)?,
        };
        Self::new(
            transfer,
            config.grid_n,
            noise,
            config.horizon,
            targets,
            WeatherModel::from(&config.weather),
            config.rng_seed,
        )
    }

    /// Same environment with the noise replaced.
    pub fn with_noise(&self, noise: NoiseModel<T>) -> Result<Self> {
        Self::new(
            self.transfer.clone(),
            self.grid_n,
            noise,
            self.horizon,
            self.targets.clone(),
            self.weather,
            self.rng_seed,
        )
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let mut s = self.clone();
        if horizon == 0 {
            return Err(invalid("horizon", "must be positive"));
        }
        s.horizon = horizon;
        Ok(s)
    }

    pub fn transfer(&self) -> &TransferModel<T> {
        &self.transfer
    }

    pub fn features(&self) -> &FeatureConfig {
        self.transfer.features()
    }

    pub fn tariffs(&self) -> usize {
        self.transfer.tariffs()
    }

    pub fn dim(&self) -> usize {
        self.transfer.dim()
    }

    pub fn cap(&self) -> T {
        self.transfer.cap()
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn grid(&self) -> &[Allocation<T>] {
        &self.grid
    }

    pub fn noise(&self) -> &NoiseModel<T> {
        &self.noise
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn targets(&self) -> &TargetProfile {
        &self.targets
    }

    pub fn weather(&self) -> &WeatherModel {
        &self.weather
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Contexts for rounds `1..=horizon`, fixed by `rng_seed`.
    pub fn contexts(&self, horizon: usize) -> Vec<Context> {
        let mut gen =
            ContextGenerator::new(self.features().half_hours, self.weather, self.rng_seed);
        (0..horizon).map(|_| gen.next_context()).collect()
    }

    /// `φ(x, e_j)ᵀθ` for 0-based tariff `j`.
    pub fn mean_consumption(&self, x: &Context, j: usize) -> Result<T> {
        let k = self.tariffs();
        if j >= k {
            return Err(invalid("tariff", format!("index {j} outside 0..{k}")));
        }
        Ok(self.tariff_means(x)?[j])
    }

    /// `φ(x, e_j)ᵀθ` for every tariff.
    pub fn tariff_means(&self, x: &Context) -> Result<Vec<T>> {
        Ok(self
            .features()
            .tariff_features(x)?
            .means(self.transfer.theta()))
    }

    /// `c = w(h)·φ(x,K)ᵀθ + (1 − w(h))·φ(x,1)ᵀθ`.
    pub fn gen_target(&self, x: &Context) -> Result<T> {
        let means = self.tariff_means(x)?;
        Ok(self.target_from_means(x, &means))
    }

    fn target_from_means(&self, x: &Context, means: &[T]) -> T {
        let w = T::lit(self.targets.weight(x.half_hour));
        w * means[means.len() - 1] + (T::one() - w) * means[0]
    }

    /// Draw `Y` at `(x, p)` and package the round.
    pub fn sample_outcome<R: Rng + ?Sized>(
        &self,
        x: &Context,
        target: T,
        p: &Allocation<T>,
        rng: &mut R,
    ) -> Result<RoundOutcome<T>> {
        let mean = self.transfer.mean(x, p)?;
        let noise = self.noise.sample(p, rng);
        Ok(RoundOutcome {
            context: *x,
            target,
            chosen: p.clone(),
            observed: mean + noise,
            noise_draw: noise,
        })
    }

    /// Everything the simulator knows about a round before a choice is made.
    pub fn round_truth(&self, x: &Context) -> Result<RoundTruth<T>> {
        let features = self.features().tariff_features(x)?;
        let means = features.means(self.transfer.theta());
        let target = self.target_from_means(x, &means);
        Ok(RoundTruth {
            context: *x,
            target,
            features,
            means,
        })
    }

    /// `(φ(x,p)ᵀθ − c)² + Var(Y | p)`.
    pub fn expected_loss(&self, truth: &RoundTruth<T>, target: T, p: &Allocation<T>) -> T {
        let gap = dot(&truth.means, p.weights()) - target;
        gap * gap + self.noise.variance(p)
    }
}

/// Precomputed per-round ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTruth<T> {
    pub context: Context,
    pub target: T,
    pub features: TariffFeatures<T>,
    /// `φ(x, e_j)ᵀθ`.
    pub means: Vec<T>,
}

/// One realized round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome<T> {
    pub context: Context,
    pub target: T,
    pub chosen: Allocation<T>,
    pub observed: T,
    noise_draw: T,
}

impl<T: Scalar> RoundOutcome<T> {
    /// Simulator-side diagnostic; learners only see `observed`.
    pub fn noise_draw(&self) -> T {
        self.noise_draw
    }
}

/// Sequential calendar and temperature generator.
#[derive(Debug, Clone)]
pub struct ContextGenerator {
    half_hours: usize,
    weather: WeatherModel,
    rng: ChaCha8Rng,
    ar: f64,
    t: usize,
}

impl ContextGenerator {
    pub fn new(half_hours: usize, weather: WeatherModel, seed: u64) -> Self {
        Self {
            half_hours,
            weather,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ar: 0.0,
            t: 0,
        }
    }

    pub fn next_context(&mut self) -> Context {
        self.t += 1;
        let h = self.half_hours;
        let w = &self.weather;
        let slot = self.t - 1;
        let day = slot / h;
        let half_hour = slot % h + 1;
        let year_slots = (w.days_per_year * h) as f64;
        let year_position = (w.start_year_position + (slot as f64) / year_slots).fract();
        let day_fraction = (half_hour - 1) as f64 / h as f64;

        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut self.rng);
        self.ar = w.ar_coefficient * self.ar + w.ar_scale * z;
        // coldest at year position 0, warmest mid-afternoon.
        let temperature = w.mean - w.annual_amplitude * (2.0 * PI * year_position).cos()
            + w.diurnal_amplitude * (2.0 * PI * (day_fraction - 0.625)).cos()
            + self.ar;
        Context {
            time_index: self.t,
            half_hour,
            day_of_week: day % 7 + 1,
            year_position,
            temperature,
        }
    }
}

impl Iterator for ContextGenerator {
    type Item = Context;

    fn next(&mut self) -> Option<Context> {
        Some(self.next_context())
    }
}

/// Context number `t` (1-based) of a scenario.
pub fn gen_context<T: Scalar>(scenario: &Scenario<T>, t: usize) -> Result<Context> {
    if t == 0 {
        return Err(invalid("t", "rounds are 1-based"));
    }
    let mut gen = ContextGenerator::new(
        scenario.features().half_hours,
        scenario.weather,
        scenario.rng_seed,
    );
    Ok(gen.nth(t - 1).expect("infinite generator"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;

    fn desk() -> Scenario<f64> {
        Scenario::from_config(&ScenarioConfig::default()).unwrap()
    }

    #[test]
    fn default_gamma_entries() {
        let g = default_gamma::<f64>();
        assert!((g[(0, 0)] - 4.44e-4).abs() < 1e-18);
        assert!((g[(0, 2)] - 1.6e-5).abs() < 1e-18);
        assert!(g.is_symmetric(0.0));
        let (vals, _) = g.symmetric_eigen();
        assert!(vals[0] > 0.0);
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let g = Matrix::<f64>::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(
            NoiseModel::tariff_dependent(g),
            Err(Error::NotPositiveDefinite)
        ));
        let g = Matrix::<f64>::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(NoiseModel::tariff_dependent(g).is_err());
        assert!(NoiseModel::<f64>::global(-1.0).is_err());
    }

    #[test]
    fn calendar_cycles() {
        let s = desk();
        let h = s.features().half_hours;
        let x1 = gen_context(&s, 1).unwrap();
        assert_eq!((x1.half_hour, x1.day_of_week), (1, 1));
        let x = gen_context(&s, h + 1).unwrap();
        assert_eq!((x.half_hour, x.day_of_week), (1, 2));
        let x = gen_context(&s, 7 * h + 1).unwrap();
        assert_eq!(x.day_of_week, 1);
        assert!(gen_context(&s, 0).is_err());
        let a = s.contexts(500);
        let b = s.contexts(500);
        assert_eq!(a, b);
        assert_eq!(
            (a[h].half_hour, a[h].day_of_week, a[h].time_index),
            (1, 2, h + 1)
        );
        assert_eq!(a[0], x1);
    }

    #[test]
    fn tariff_ordering_and_magnitudes() {
        for cfg in [ScenarioConfig::default(), ScenarioConfig::full_day()] {
            let s = Scenario::<f64>::from_config(&cfg).unwrap();
            let h = s.features().half_hours;
            for x in s.contexts(h * 800) {
                let m = s.tariff_means(&x).unwrap();
                assert!(m[0] <= m[1] && m[1] <= m[2]);
                for v in m {
                    assert!((0.08..=0.21).contains(&v), "mean {v} out of range");
                }
            }
        }
    }

    #[test]
    fn flat_offsets_make_tariffs_irrelevant() {
        let mut cfg = ScenarioConfig::default();
        if let ThetaConfig::Profile(p) = &mut cfg.theta {
            p.tariff_offsets = vec![0.0; 3];
        }
        let s = Scenario::<f64>::from_config(&cfg).unwrap();
        let x = gen_context(&s, 7).unwrap();
        let m = s.tariff_means(&x).unwrap();
        assert_eq!(m[0], m[1]);
        assert_eq!(m[1], m[2]);
    }

    #[test]
    fn targets_stay_attainable_on_grid() {
        let s = desk();
        let n = s.grid_n() as f64;
        for x in s.contexts(2000) {
            let m = s.tariff_means(&x).unwrap();
            let c = s.gen_target(&x).unwrap();
            assert!(m[0] <= c && c <= m[2]);
            assert!(c > 0.0 && c < s.cap());
            let best = s
                .grid()
                .iter()
                .map(|p| (dot(&m, p.weights()) - c).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(best <= (m[2] - m[0]) / (2.0 * n) + 1e-12);
        }
    }

    #[test]
    fn target_endpoints() {
        let mut cfg = ScenarioConfig::default();
        let h = cfg.features.half_hours;
        cfg.targets = TargetConfig::Weights {
            weights: (0..h).map(|i| (i % 2) as f64).collect(),
        };
        let s = Scenario::<f64>::from_config(&cfg).unwrap();
        for x in s.contexts(4) {
            let m = s.tariff_means(&x).unwrap();
            let c = s.gen_target(&x).unwrap();
            let expected = if x.half_hour % 2 == 0 { m[2] } else { m[0] };
            assert_eq!(c, expected);
        }
    }

    #[test]
    fn noiseless_outcome_is_the_mean() {
        let s = desk()
            .with_noise(NoiseModel::tariff_dependent(Matrix::zeros(3, 3)).unwrap())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gen_context(&s, 3).unwrap();
        let p = Allocation::new(vec![0.2, 0.3, 0.5]).unwrap();
        let out = s.sample_outcome(&x, 0.1, &p, &mut rng).unwrap();
        assert_eq!(out.observed, s.transfer().mean(&x, &p).unwrap());
        assert_eq!(out.noise_draw(), 0.0);
    }

    fn sample_variance(s: &Scenario<f64>, p: &Allocation<f64>, draws: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..draws).map(|_| s.noise().sample(p, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / draws as f64;
        xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64
    }

    #[test]
    fn monte_carlo_variance() {
        let s = desk()
            .with_noise(NoiseModel::tariff_dependent(default_gamma()).unwrap())
            .unwrap();
        let p = Allocation::vertex(3, 0);
        let v = sample_variance(&s, &p, 100_000, 9);
        assert!((v / 4.44e-4 - 1.0).abs() < 0.05);

        let s = desk()
            .with_noise(NoiseModel::global(0.02).unwrap())
            .unwrap();
        let v = sample_variance(&s, &p, 100_000, 10);
        assert!((v / 4e-4 - 1.0).abs() < 0.05);
    }

    #[test]
    fn rho_is_root_of_top_eigenvalue() {
        let n = NoiseModel::tariff_dependent(
            Matrix::<f64>::from_rows(&[[4.0, 0.0], [0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        assert!((n.rho() - 2.0).abs() < 1e-12);
        assert_eq!(NoiseModel::global(0.3).unwrap().rho(), 0.3);
    }
}
