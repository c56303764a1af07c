//! Allocations, contexts, the transfer feature map and clipping.
//!
//! The feature layout is fixed: the first `K` coordinates carry the tariff
//! proportions `p`, then one block per half-hour (intercept, normalized
//! temperature, temperature hinges, yearly harmonics) of which only the block
//! of the current half-hour is non-zero, then optional day-of-week
//! indicators. Every coordinate lies in `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::dot;
use crate::scalar::Scalar;

/// Convex weight vector over the `K` tariffs.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<T> {
    weights: Vec<T>,
}

impl<T: Scalar> Allocation<T> {
    /// Validate `weights` as a point of the probability simplex.
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyAllocation);
        }
        for (index, &w) in weights.iter().enumerate() {
            if !(w >= T::zero() && w <= T::one()) {
                return Err(Error::WeightOutOfRange {
                    index,
                    value: w.to_f64_lossy(),
                });
            }
        }
        let sum: T = weights.iter().copied().sum();
        if (sum - T::one()).abs() > T::simplex_tolerance() {
            return Err(Error::NotOnSimplex {
                sum: sum.to_f64_lossy(),
            });
        }
        Ok(Self { weights })
    }

    /// Dirac mass on tariff `j` (0-based).
    pub fn vertex(k: usize, j: usize) -> Self {
        assert!(j < k, "tariff index out of range");
        let mut weights = vec![T::zero(); k];
        weights[j] = T::one();
        Self { weights }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// `pᵀ A p` for a `K × K` matrix.
    pub fn quad(&self, a: &crate::linalg::Matrix<T>) -> T {
        a.quad_form(&self.weights)
    }

    /// Entrywise closeness, used to locate allocations in a grid.
    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        self.k() == other.k()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(&a, &b)| (a - b).abs() <= tol)
    }
}

/// Convenience wrapper around [`Allocation::new`].
pub fn make_allocation<T: Scalar>(weights: &[T]) -> Result<Allocation<T>> {
    Allocation::new(weights.to_vec())
}

/// The restricted three-tariff grid where High (1) and Low (3) are never sent
/// in the same round: `2N + 1` allocations.
///
/// Order: `(i/N, 1 - i/N, 0)` for `i = 0..=N`, then `(0, 1 - i/N, i/N)` for
/// `i = 1..=N`. The first element is the all-Normal allocation `(0, 1, 0)`;
/// argmins break ties towards the lowest index.
pub fn allocation_grid<T: Scalar>(n: usize) -> Result<Vec<Allocation<T>>> {
    if n == 0 {
        return Err(invalid("N", "grid resolution must be at least 1"));
    }
    let nn = T::from_usize_lossy(n);
    let frac = |i: usize| T::from_usize_lossy(i) / nn;
    let mut grid = Vec::with_capacity(2 * n + 1);
    for i in 0..=n {
        grid.push(Allocation {
            weights: vec![frac(i), frac(n - i), T::zero()],
        });
    }
    for i in 1..=n {
        grid.push(Allocation {
            weights: vec![T::zero(), frac(n - i), frac(i)],
        });
    }
    Ok(grid)
}

/// `min{max{x, 0}, C}`.
#[inline]
pub fn clip<T: Scalar>(x: T, cap: T) -> T {
    x.max(T::zero()).min(cap)
}

/// Calendar and weather context of one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub time_index: usize,
    /// 1-based half-hour of the day, in `1..=H`.
    pub half_hour: usize,
    /// 1 = Monday.
    pub day_of_week: usize,
    /// Position in the year, in `[0, 1]`.
    pub year_position: f64,
    /// Degrees Celsius.
    pub temperature: f64,
}

impl Context {
    pub fn validate(&self, half_hours: usize) -> Result<()> {
        if self.half_hour == 0 || self.half_hour > half_hours {
            return Err(Error::InvalidContext(format!(
                "half_hour {} outside 1..={half_hours}",
                self.half_hour
            )));
        }
        if !(1..=7).contains(&self.day_of_week) {
            return Err(Error::InvalidContext(format!(
                "day_of_week {} outside 1..=7",
                self.day_of_week
            )));
        }
        if !(0.0..=1.0).contains(&self.year_position) {
            return Err(Error::InvalidContext(format!(
                "year_position {} outside [0, 1]",
                self.year_position
            )));
        }
        if !self.temperature.is_finite() {
            return Err(Error::InvalidContext("non-finite temperature".into()));
        }
        Ok(())
    }
}

/// Feature vector `φ(x, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(v.abs() <= T::one())) {
            return Err(invalid(
                "feature",
                format!("coordinate {bad} violates the sup-norm bound 1"),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, theta: &[T]) -> T {
        dot(&self.values, theta)
    }

    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Basis description for the transfer function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub tariffs: usize,
    #[serde(default = "default_half_hours")]
    pub half_hours: usize,
    /// Temperatures mapped linearly onto `[0, 1]` (then clamped).
    #[serde(default = "default_temperature_range")]
    pub temperature_range: [f64; 2],
    /// Interior hinge knots on the normalized temperature scale, each in `(0, 1)`.
    #[serde(default)]
    pub temperature_knots: Vec<f64>,
    /// Number of `(sin, cos)` pairs of the yearly position per half-hour block.
    #[serde(default)]
    pub yearly_harmonics: usize,
    #[serde(default)]
    pub weekday_effects: bool,
}

fn default_half_hours() -> usize {
    48
}

fn default_temperature_range() -> [f64; 2] {
    [-5.0, 30.0]
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tariffs < 2 {
            return Err(invalid("tariffs", "need at least two tariffs"));
        }
        if self.half_hours == 0 {
            return Err(invalid("half_hours", "must be positive"));
        }
        let [lo, hi] = self.temperature_range;
        if !(hi > lo) {
            return Err(invalid(
                "temperature_range",
                "upper bound must exceed lower",
            ));
        }
        if self
            .temperature_knots
            .iter()
            .any(|&k| !(k > 0.0 && k < 1.0))
        {
            return Err(invalid("temperature_knots", "knots must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn block_len(&self) -> usize {
        2 + self.temperature_knots.len() + 2 * self.yearly_harmonics
    }

    pub fn dim(&self) -> usize {
        self.tariffs + self.half_hours * self.block_len() + if self.weekday_effects { 7 } else { 0 }
    }

    /// Index of the first coordinate of the block for 1-based half-hour `h`.
    pub fn block_offset(&self, h: usize) -> usize {
        self.tariffs + (h - 1) * self.block_len()
    }

    /// Index of the indicator for 1-based day `w`, if weekday effects are on.
    pub fn weekday_offset(&self, w: usize) -> Option<usize> {
        self.weekday_effects
            .then(|| self.tariffs + self.half_hours * self.block_len() + (w - 1))
    }

    pub fn normalized_temperature(&self, celsius: f64) -> f64 {
        let [lo, hi] = self.temperature_range;
        ((celsius - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    /// Context part of the features: the full `d`-vector with zero tariff coordinates.
    pub fn context_features<T: Scalar>(&self, x: &Context) -> Result<Vec<T>> {
        x.validate(self.half_hours)?;
        let mut out = vec![T::zero(); self.dim()];
        let base = self.block_offset(x.half_hour);
        let z = self.normalized_temperature(x.temperature);
        out[base] = T::one();
        out[base + 1] = T::lit(z);
        let mut at = base + 2;
        for &knot in &self.temperature_knots {
            out[at] = T::lit((z - knot).max(0.0) / (1.0 - knot));
            at += 1;
        }
        for m in 1..=self.yearly_harmonics {
            let angle = 2.0 * std::f64::consts::PI * m as f64 * x.year_position;
            out[at] = T::lit(angle.sin());
            out[at + 1] = T::lit(angle.cos());
            at += 2;
        }
        if let Some(w) = self.weekday_offset(x.day_of_week) {
            out[w] = T::one();
        }
        Ok(out)
    }

    /// Per-tariff features `φ(x, e_j)` for one context.
    pub fn tariff_features<T: Scalar>(&self, x: &Context) -> Result<TariffFeatures<T>> {
        Ok(TariffFeatures {
            tariffs: self.tariffs,
            context: self.context_features(x)?,
        })
    }
}

/// Features of one context for every tariff; `φ(x, p)` is linear in `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct TariffFeatures<T> {
    tariffs: usize,
    context: Vec<T>,
}

impl<T: Scalar> TariffFeatures<T> {
    pub fn tariffs(&self) -> usize {
        self.tariffs
    }

    pub fn dim(&self) -> usize {
        self.context.len()
    }

    /// `φ(x, e_j)` for 0-based tariff `j`.
    pub fn tariff(&self, j: usize) -> Vec<T> {
        let mut v = self.context.clone();
        v[j] = T::one();
        v
    }

    /// `φ(x, p) = Σ_j p_j φ(x, e_j)`.
    pub fn for_allocation(&self, p: &Allocation<T>) -> Result<FeatureVector<T>> {
        if p.k() != self.tariffs {
            return Err(Error::DimensionMismatch {
                expected: self.tariffs,
                got: p.k(),
            });
        }
        // Σ p_j = 1, so the shared context part passes through unchanged.
        let mut v = self.context.clone();
        v[..self.tariffs].copy_from_slice(p.weights());
        Ok(FeatureVector { values: v })
    }

    /// `φ(x, e_j)ᵀ θ` for every tariff.
    pub fn means(&self, theta: &[T]) -> Vec<T> {
        let shared = dot(&self.context, theta);
        (0..self.tariffs).map(|j| shared + theta[j]).collect()
    }
}

/// Feature map `φ(x, p)`.
pub fn feature_map<T: Scalar>(
    config: &FeatureConfig,
    x: &Context,
    p: &Allocation<T>,
) -> Result<FeatureVector<T>> {
    config.tariff_features(x)?.for_allocation(p)
}

/// Ground-truth transfer model: feature basis, parameter `θ` and cap `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferModel<T> {
    features: FeatureConfig,
    theta: Vec<T>,
    cap: T,
}

impl<T: Scalar> TransferModel<T> {
    pub fn new(features: FeatureConfig, theta: Vec<T>, cap: T) -> Result<Self> {
        features.validate()?;
        if !(cap > T::zero()) {
            return Err(invalid("cap", "consumption cap C must be positive"));
        }
        if theta.len() != features.dim() {
            return Err(Error::DimensionMismatch {
                expected: features.dim(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|t| !(t.abs() <= cap)) {
            return Err(invalid("theta", "sup-norm of theta exceeds C"));
        }
        Ok(Self {
            features,
            theta,
            cap,
        })
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn cap(&self) -> T {
        self.cap
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn tariffs(&self) -> usize {
        self.features.tariffs
    }

    /// `φ(x, p)ᵀ θ`.
    pub fn mean(&self, x: &Context, p: &Allocation<T>) -> Result<T> {
        Ok(feature_map(&self.features, x, p)?.dot(&self.theta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FeatureConfig {
        FeatureConfig {
            tariffs: 3,
            half_hours: 4,
            temperature_range: [0.0, 20.0],
            temperature_knots: vec![0.5],
            yearly_harmonics: 1,
            weekday_effects: true,
        }
    }

    fn ctx(h: usize, temp: f64) -> Context {
        Context {
            time_index: 1,
            half_hour: h,
            day_of_week: 2,
            year_position: 0.25,
            temperature: temp,
        }
    }

    #[test]
    fn make_allocation_examples() {
        assert!(make_allocation(&[1.0, 0.0, 0.0]).is_ok());
        assert!(make_allocation(&[0.5, 0.5, 0.0]).is_ok());
        assert!(matches!(
            make_allocation(&[0.5, 0.6, 0.0]),
            Err(Error::NotOnSimplex { .. })
        ));
        assert!(matches!(
            make_allocation(&[-0.1, 1.1]),
            Err(Error::WeightOutOfRange { index: 0, .. })
        ));
        assert!(make_allocation::<f64>(&[]).is_err());
        assert!(make_allocation(&[0.5, 0.5 + 5e-10]).is_ok());
    }

    #[test]
    fn grid_examples() {
        let g1: Vec<Allocation<f64>> = allocation_grid(1).unwrap();
        let w: Vec<&[f64]> = g1.iter().map(|a| a.weights()).collect();
        assert_eq!(
            w,
            vec![&[0.0, 1.0, 0.0][..], &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]
        );

        let g2: Vec<Allocation<f64>> = allocation_grid(2).unwrap();
        let w: Vec<&[f64]> = g2.iter().map(|a| a.weights()).collect();
        assert_eq!(
            w,
            vec![
                &[0.0, 1.0, 0.0][..],
                &[0.5, 0.5, 0.0],
                &[1.0, 0.0, 0.0],
                &[0.0, 0.5, 0.5],
                &[0.0, 0.0, 1.0]
            ]
        );
        assert_eq!(allocation_grid::<f64>(100).unwrap().len(), 201);
        assert!(allocation_grid::<f64>(0).is_err());
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(-0.3, 1.0), 0.0);
        assert_eq!(clip(0.5, 1.0), 0.5);
        assert_eq!(clip(7.0, 1.0), 1.0);
    }

    #[test]
    fn layout_and_dimension() {
        let c = cfg();
        assert_eq!(c.block_len(), 5);
        assert_eq!(c.dim(), 3 + 4 * 5 + 7);
        let x = ctx(2, 15.0);
        let p = Allocation::vertex(3, 1);
        let phi = feature_map::<f64>(&c, &x, &p).unwrap();
        let v = phi.values();
        assert_eq!(&v[..3], &[0.0, 1.0, 0.0]);
        let b = c.block_offset(2);
        assert_eq!(v[b], 1.0);
        assert!((v[b + 1] - 0.75).abs() < 1e-15);
        assert!((v[b + 2] - 0.5).abs() < 1e-15);
        assert!((v[b + 3] - 1.0).abs() < 1e-15); // sin(π/2)
        assert_eq!(v[c.weekday_offset(2).unwrap()], 1.0);
        // other blocks are empty
        assert!(v[c.block_offset(1)..b].iter().all(|&x| x == 0.0));
        assert!(phi.sup_norm() <= 1.0);
    }

    #[test]
    fn vertex_and_mixture_features() {
        let c = cfg();
        let x = ctx(3, 4.0);
        let f1 = feature_map::<f64>(&c, &x, &Allocation::vertex(3, 0)).unwrap();
        let f2 = feature_map::<f64>(&c, &x, &Allocation::vertex(3, 1)).unwrap();
        let mid = feature_map(&c, &x, &make_allocation(&[0.5, 0.5, 0.0]).unwrap()).unwrap();
        for i in 0..c.dim() {
            let want = 0.5 * (f1.values()[i] + f2.values()[i]);
            assert!((mid.values()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn distinct_contexts_share_tariff_coordinates() {
        let c = cfg();
        let p = make_allocation(&[0.2, 0.3, 0.5]).unwrap();
        let a = feature_map(&c, &ctx(1, 2.0), &p).unwrap();
        let b = feature_map(&c, &ctx(4, 18.0), &p).unwrap();
        assert_eq!(&a.values()[..3], p.weights());
        assert_eq!(&b.values()[..3], p.weights());
        assert_ne!(a.values()[3..], b.values()[3..]);
    }

    #[test]
    fn rejects_bad_context() {
        let c = cfg();
        let p = Allocation::<f64>::vertex(3, 0);
        assert!(feature_map(&c, &ctx(5, 1.0), &p).is_err());
        assert!(feature_map(&c, &ctx(0, 1.0), &p).is_err());
        let mut x = ctx(1, 1.0);
        x.year_position = 1.5;
        assert!(feature_map(&c, &x, &p).is_err());
        assert!(feature_map(&c, &ctx(1, 1.0), &Allocation::<f64>::vertex(2, 0)).is_err());
    }

    #[test]
    fn transfer_model_checks() {
        let c = cfg();
        let d = c.dim();
        assert!(TransferModel::new(c.clone(), vec![0.1; d], 1.0).is_ok());
        assert!(TransferModel::new(c.clone(), vec![2.0; d], 1.0).is_err());
        assert!(TransferModel::new(c.clone(), vec![0.1; d - 1], 1.0).is_err());
        assert!(TransferModel::new(c, vec![0.1; d], 0.0).is_err());
    }

    #[test]
    fn tariff_means_match_feature_map() {
        let c = cfg();
        let theta: Vec<f64> = (0..c.dim()).map(|i| 0.01 * i as f64).collect();
        let x = ctx(2, 9.0);
        let tf = c.tariff_features::<f64>(&x).unwrap();
        let means = tf.means(&theta);
        for j in 0..3 {
            let direct = feature_map(&c, &x, &Allocation::vertex(3, j))
                .unwrap()
                .dot(&theta);
            assert!((means[j] - direct).abs() < 1e-15);
            assert_eq!(
                tf.tariff(j),
                feature_map(&c, &x, &Allocation::vertex(3, j))
                    .unwrap()
                    .values()
            );
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn simplex3() -> impl Strategy<Value = Allocation<f64>> {
            (0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                Allocation::new(vec![lo, hi - lo, 1.0 - hi]).unwrap()
            })
        }

        proptest! {
            #[test]
            fn grid_members_validate(n in 1usize..60) {
                let g = allocation_grid::<f64>(n).unwrap();
                prop_assert_eq!(g.len(), 2 * n + 1);
                for a in &g {
                    prop_assert!(make_allocation(a.weights()).is_ok());
                }
                for i in 0..g.len() {
                    for j in 0..i {
                        prop_assert!(!g[i].approx_eq(&g[j], 1e-12));
                    }
                }
            }

            #[test]
            fn feature_map_is_linear(p in simplex3(), q in simplex3(), lam in 0.0f64..=1.0,
                                     h in 1usize..=4, temp in -10.0f64..40.0) {
                let c = cfg();
                let x = ctx(h, temp);
                let mix: Vec<f64> = p.weights().iter().zip(q.weights())
                    .map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
                let m = feature_map(&c, &x, &Allocation::new(mix).unwrap()).unwrap();
                let fp = feature_map(&c, &x, &p).unwrap();
                let fq = feature_map(&c, &x, &q).unwrap();
                for i in 0..c.dim() {
                    let want = lam * fp.values()[i] + (1.0 - lam) * fq.values()[i];
                    prop_assert!((m.values()[i] - want).abs() <= 1e-12);
                }
                prop_assert!(m.sup_norm() <= 1.0);
            }

            #[test]
            fn clip_idempotent(x in -10.0f64..10.0, cap in 0.01f64..5.0) {
                let once = clip(x, cap);
                prop_assert_eq!(clip(once, cap), once);
                prop_assert!((0.0..=cap).contains(&once));
            }
        }
    }
}
