//! TOML schema for scenarios and experiments.
//!
//! Every field has a default, so an empty `[scenario]` table describes the
//! desk-scale environment:
//!
//! ```toml
//! [scenario]
//! horizon = 20000
//! grid_n = 100
//! cap = 0.25
//! rng_seed = 1
//!
//! [scenario.features]
//! tariffs = 3
//! half_hours = 8
//! temperature_knots = [0.5]
//!
//! [scenario.noise]
//! model = "model1"        # or "model2" with `sigma`
//! scale = 0.02
//!
//! [scenario.targets]
//! kind = "thirds"
//! night = 0.9
//! day = 0.5
//! evening = 0.1
//!
//! [experiment]
//! policy = "model2"
//! lambda = 0.05
//! delta = 0.1
//! seeds = [0, 1, 2]
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::FeatureConfig;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub horizon: usize,
    pub grid_n: usize,
    /// Bound `C` on mean consumptions.
    pub cap: f64,
    /// Seed of the context stream.
    pub rng_seed: u64,
    pub features: FeatureConfig,
    pub theta: ThetaConfig,
    pub noise: NoiseConfig,
    pub targets: TargetConfig,
    pub weather: WeatherConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            horizon: 20_000,
            grid_n: 100,
            cap: 0.25,
            rng_seed: 1,
            features: FeatureConfig {
                tariffs: 3,
                half_hours: 8,
                temperature_range: [-5.0, 30.0],
                temperature_knots: vec![0.5],
                yearly_harmonics: 0,
                weekday_effects: false,
            },
            theta: ThetaConfig::Profile(ThetaProfile::default()),
            noise: NoiseConfig::Model1 {
                gamma: None,
                scale: 0.02,
            },
            targets: TargetConfig::Thirds {
                night: 0.9,
                day: 0.5,
                evening: 0.1,
            },
            weather: WeatherConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Forty-eight half-hours with yearly harmonics and weekday effects.
    pub fn full_day() -> Self {
        let mut c = Self::default();
        c.features.half_hours = 48;
        c.features.yearly_harmonics = 1;
        c.features.weekday_effects = true;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaConfig {
    Explicit { values: Vec<f64> },
    Profile(ThetaProfile),
}

/// Parametric `θ`: one intercept curve over the day, shared temperature and
/// calendar slopes, and per-tariff offsets `ξ_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThetaProfile {
    pub base: f64,
    pub diurnal_amplitude: f64,
    /// Fraction of the day at which the intercept peaks.
    pub peak: f64,
    /// Slope on the normalized temperature.
    pub heating: f64,
    /// Slope on each temperature hinge.
    pub cooling: f64,
    /// Coefficient of the first yearly cosine.
    pub seasonal: f64,
    /// Saturday and Sunday indicators.
    pub weekend: f64,
    pub tariff_offsets: Vec<f64>,
}

impl Default for ThetaProfile {
    fn default() -> Self {
        Self {
            base: 0.149,
            diurnal_amplitude: 0.009,
            peak: 0.79,
            heating: -0.016,
            cooling: 0.012,
            seasonal: 0.001,
            weekend: 0.001,
            tariff_offsets: vec![-0.05, 0.0, 0.05],
        }
    }
}

impl ThetaProfile {
    pub fn build<T: Scalar>(&self, features: &FeatureConfig) -> Result<Vec<T>> {
        features.validate()?;
        if self.tariff_offsets.len() != features.tariffs {
            return Err(Error::DimensionMismatch {
                expected: features.tariffs,
                got: self.tariff_offsets.len(),
            });
        }
        let mut theta = vec![0.0; features.dim()];
        theta[..features.tariffs].copy_from_slice(&self.tariff_offsets);
        let h = features.half_hours;
        for hh in 1..=h {
            let at = features.block_offset(hh);
            let frac = (hh - 1) as f64 / h as f64;
            theta[at] = self.base + self.diurnal_amplitude * (2.0 * PI * (frac - self.peak)).cos();
            theta[at + 1] = self.heating;
            let mut k = at + 2;
            for _ in &features.temperature_knots {
                theta[k] = self.cooling;
                k += 1;
            }
            if features.yearly_harmonics > 0 {
                theta[k + 1] = self.seasonal;
            }
        }
        for day in [6, 7] {
            if let Some(w) = features.weekday_offset(day) {
                theta[w] = self.weekend;
            }
        }
        Ok(theta.into_iter().map(T::lit).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    /// Per-tariff noise. Without `gamma`, the built-in correlation shape
    /// scaled by `scale²`.
    Model1 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<Vec<Vec<f64>>>,
        #[serde(default = "default_noise_scale")]
        scale: f64,
    },
    /// Global noise with standard deviation `sigma`.
    Model2 {
        #[serde(default = "default_noise_scale")]
        sigma: f64,
    },
}

fn default_noise_scale() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    /// `w(h)` on the first, middle and last third of the day.
    Thirds { night: f64, day: f64, evening: f64 },
    /// One `w(h)` per half-hour.
    Weights { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeatherConfig {
    pub mean: f64,
    pub annual_amplitude: f64,
    pub diurnal_amplitude: f64,
    pub ar_coefficient: f64,
    pub ar_scale: f64,
    pub days_per_year: usize,
    pub start_year_position: f64,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        Self {
            mean: 11.0,
            annual_amplitude: 7.0,
            diurnal_amplitude: 3.0,
            ar_coefficient: 0.95,
            ar_scale: 0.5,
            days_per_year: 365,
            start_year_position: 0.0,
        }
    }
}

/// Decision rule selected for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Model1,
    Model1KnownGamma,
    Model2,
    TariffOnly,
    Fixed,
    Cyclic,
    Oracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        Self::Model1,
        Self::Model1KnownGamma,
        Self::Model2,
        Self::TariffOnly,
        Self::Fixed,
        Self::Cyclic,
        Self::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Model1 => "model1",
            Self::Model1KnownGamma => "model1_known_gamma",
            Self::Model2 => "model2",
            Self::TariffOnly => "tariff_only",
            Self::Fixed => "fixed",
            Self::Cyclic => "cyclic",
            Self::Oracle => "oracle",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "policy",
                name: s.to_string(),
            })
    }
}

/// Scenario given inline or as a path relative to the experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    Path(PathBuf),
    Inline(Box<ScenarioConfig>),
}

impl Default for ScenarioSource {
    fn default() -> Self {
        Self::Inline(Box::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub policy: PolicyKind,
    pub lambda: f64,
    pub delta: f64,
    /// Exploration length; `round(T^(2/3))` when absent.
    pub explore_len: Option<usize>,
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
    /// Allocation of the `fixed` policy.
    pub fixed_allocation: Vec<f64>,
    /// Replaces the theoretical `γ` of `model1`.
    pub gamma_override: Option<f64>,
    /// Replaces the grid maximum of `pᵀΓ̂p` in `L = C² + G`.
    pub g_bound: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Model2,
            lambda: 0.05,
            delta: 0.1,
            explore_len: None,
            seeds: (0..20).collect(),
            output: None,
            fixed_allocation: vec![0.0, 1.0, 0.0],
            gamma_override: None,
            g_bound: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", "must lie in (0, 1)"));
        }
        if !(self.lambda > 0.0) {
            return Err(invalid("lambda", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if self.explore_length(horizon) >= horizon {
            return Err(invalid("explore_len", "must be smaller than the horizon"));
        }
        Ok(())
    }

    pub fn explore_length(&self, horizon: usize) -> usize {
        self.explore_len
            .unwrap_or_else(|| default_explore_len(horizon))
    }
}

/// `round(T^(2/3))`.
pub fn default_explore_len(horizon: usize) -> usize {
    (horizon as f64).powf(2.0 / 3.0).round() as usize
}

/// Top-level experiment file: an `[experiment]` table and a scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentFile {
    pub experiment: ExperimentConfig,
    pub scenario: ScenarioSource,
}

impl ExperimentFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads the file and resolves a scenario path against its directory.
    pub fn load(path: &Path) -> Result<(ExperimentConfig, ScenarioConfig)> {
        let text = std::fs::read_to_string(path)?;
        let file = Self::from_toml(&text)?;
        let scenario = match file.scenario {
            ScenarioSource::Inline(s) => *s,
            ScenarioSource::Path(p) => {
                let full = match path.parent() {
                    Some(dir) if p.is_relative() => dir.join(&p),
                    _ => p,
                };
                ScenarioConfig::from_toml(&std::fs::read_to_string(&full)?)?
            }
        };
        file.experiment.validate(scenario.horizon)?;
        Ok((file.experiment, scenario))
    }
}

/// Parses `a..b` (half-open), `a..=b` or a single seed.
pub fn parse_seed_range(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("invalid seed range `{text}`"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = text.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        vec![num(text)?]
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_gives_defaults() {
        let f = ExperimentFile::from_toml("[experiment]\n[scenario]\n").unwrap();
        assert_eq!(f.experiment, ExperimentConfig::default());
        assert_eq!(f.scenario, ScenarioSource::Inline(Box::default()));
    }

    #[test]
    fn scenario_round_trips() {
        for cfg in [ScenarioConfig::default(), ScenarioConfig::full_day()] {
            let text = cfg.to_toml().unwrap();
            assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn tagged_variants_parse() {
        let c = ScenarioConfig::from_toml(
            "[noise]\nmodel = \"model2\"\nsigma = 0.03\n[targets]\nkind = \"weights\"\nweights = [0.5]\n",
        )
        .unwrap();
        assert_eq!(c.noise, NoiseConfig::Model2 { sigma: 0.03 });
        assert_eq!(c.targets, TargetConfig::Weights { weights: vec![0.5] });
        assert!(ScenarioConfig::from_toml("bogus = 1\n").is_err());
        assert!(ScenarioConfig::from_toml("[noise]\nmodel = \"model3\"\n").is_err());
    }

    #[test]
    fn policy_names() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("ucb".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_range("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seed_range("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_seed_range("7").unwrap(), vec![7]);
        assert!(parse_seed_range("3..3").is_err());
        assert!(parse_seed_range("a..b").is_err());
    }

    #[test]
    fn experiment_validation() {
        let mut e = ExperimentConfig::default();
        assert!(e.validate(1000).is_ok());
        assert_eq!(e.explore_length(1000), 100);
        e.delta = 1.0;
        assert!(e.validate(1000).is_err());
        e.delta = 0.1;
        e.explore_len = Some(1000);
        assert!(e.validate(1000).is_err());
        e.explore_len = None;
        e.seeds.clear();
        assert!(e.validate(1000).is_err());
    }

    #[test]
    fn profile_layout() {
        let f = ScenarioConfig::full_day().features;
        let theta: Vec<f64> = ThetaProfile::default().build(&f).unwrap();
        assert_eq!(theta.len(), f.dim());
        assert_eq!(&theta[..3], &[-0.05, 0.0, 0.05]);
        let at = f.block_offset(1);
        assert_eq!(theta[at + 1], -0.016);
        assert_eq!(theta[at + 2], 0.012);
        assert_eq!(theta[at + 3], 0.0);
        assert_eq!(theta[at + 4], 0.001);
        assert_eq!(theta[f.weekday_offset(1).unwrap()], 0.0);
        assert_eq!(theta[f.weekday_offset(7).unwrap()], 0.001);
    }
}
