//! Online ridge regression with rank-one inverse updates.
//!
//! `V_t = λI + Σ φ_s φ_sᵀ`, its inverse and `ln det V_t` are maintained
//! incrementally in `O(d²)` per observation:
//!
//! ```text
//! V⁻¹ ← V⁻¹ − (V⁻¹φ)(V⁻¹φ)ᵀ / (1 + φᵀV⁻¹φ)
//! ln det V ← ln det V + ln(1 + φᵀV⁻¹φ)
//! ```
//!
//! Every [`REFRESH_INTERVAL`] updates the inverse and log-determinant are
//! recomputed from `V` through a Cholesky factorization.

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

pub const REFRESH_INTERVAL: usize = 1000;

const DENOM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RidgeState<T> {
    dim: usize,
    lambda: T,
    v: Matrix<T>,
    v_inv: Matrix<T>,
    response: Vec<T>,
    log_det: T,
    rounds: usize,
    since_refresh: usize,
}

impl<T: Scalar> RidgeState<T> {
    pub fn new(dim: usize, lambda: T) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("d", "dimension must be positive"));
        }
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(invalid("lambda", "regularization must be positive"));
        }
        Ok(Self {
            dim,
            lambda,
            v: Matrix::scaled_identity(dim, lambda),
            v_inv: Matrix::scaled_identity(dim, lambda.recip()),
            response: vec![T::zero(); dim],
            log_det: T::from_usize_lossy(dim) * lambda.ln(),
            rounds: 0,
            since_refresh: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn v_matrix(&self) -> &Matrix<T> {
        &self.v
    }

    pub fn v_inverse(&self) -> &Matrix<T> {
        &self.v_inv
    }

    /// `Σ Y_s φ_s`.
    pub fn response(&self) -> &[T] {
        &self.response
    }

    pub fn log_det_v(&self) -> T {
        self.log_det
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: len,
            });
        }
        Ok(())
    }

    /// Add the observation `(φ, y)`.
    pub fn update(&mut self, phi: &[T], y: T) -> Result<()> {
        self.check_dim(phi.len())?;
        let u = self.v_inv.mat_vec(phi);
        let denom = T::one() + dot(phi, &u);

        self.v.add_symmetric_outer(phi, T::one());
        for (r, &p) in self.response.iter_mut().zip(phi) {
            *r = *r + y * p;
        }
        self.rounds += 1;
        self.since_refresh += 1;

        if !(denom >= T::lit(DENOM_GUARD)) || self.since_refresh >= REFRESH_INTERVAL {
            return self.refactorize();
        }
        self.v_inv.add_symmetric_outer(&u, -denom.recip());
        self.log_det = self.log_det + denom.ln();
        Ok(())
    }

    /// Recompute `V⁻¹` and `ln det V` from `V`.
    pub fn refactorize(&mut self) -> Result<()> {
        self.v_inv = self.v.spd_inverse()?;
        self.log_det = self.v.spd_log_det()?;
        self.since_refresh = 0;
        Ok(())
    }

    /// `θ̂ = V⁻¹ Σ Y_s φ_s`.
    pub fn estimate(&self) -> Vec<T> {
        self.v_inv.mat_vec(&self.response)
    }

    /// `‖V^{-1/2} φ‖ = √(φᵀ V⁻¹ φ)`.
    pub fn ellipsoid_norm(&self, phi: &[T]) -> Result<T> {
        self.check_dim(phi.len())?;
        Ok(self.v_inv.quad_form(phi).max(T::zero()).sqrt())
    }

    /// Gram matrix `G_jk = φ_jᵀ V⁻¹ φ_k` of a few feature vectors.
    ///
    /// For features linear in the allocation, `‖V^{-1/2} φ(x, p)‖² = pᵀ G p`
    /// with `φ_j = φ(x, e_j)`.
    pub fn ellipsoid_gram(&self, phis: &[Vec<T>]) -> Result<Matrix<T>> {
        let mut w = Vec::with_capacity(phis.len());
        for phi in phis {
            self.check_dim(phi.len())?;
            w.push(self.v_inv.mat_vec(phi));
        }
        let k = phis.len();
        let mut g = Matrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = dot(&phis[a], &w[b]);
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        Ok(g)
    }

    /// `‖V^{1/2}(θ̂ − θ)‖` against a known parameter.
    pub fn self_normalized_error(&self, theta: &[T]) -> Result<T> {
        self.check_dim(theta.len())?;
        let diff: Vec<T> = self
            .estimate()
            .iter()
            .zip(theta)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(self.v.quad_form(&diff).max(T::zero()).sqrt())
    }
}

/// Constants of the confidence radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceParams<T> {
    /// Sub-Gaussian constant of the noise.
    pub rho: T,
    /// Bound `C` on mean consumptions.
    pub cap: T,
    pub dim: usize,
    pub lambda: T,
}

impl<T: Scalar> ConfidenceParams<T> {
    /// `rho` may be zero (noise-free); everything else must be positive.
    pub fn new(rho: T, cap: T, dim: usize, lambda: T) -> Result<Self> {
        if !(rho >= T::zero()) {
            return Err(invalid("rho", "must be non-negative"));
        }
        if !(cap > T::zero()) {
            return Err(invalid("cap", "must be positive"));
        }
        if dim == 0 {
            return Err(invalid("d", "must be positive"));
        }
        if !(lambda > T::zero()) {
            return Err(invalid("lambda", "must be positive"));
        }
        Ok(Self {
            rho,
            cap,
            dim,
            lambda,
        })
    }
}

pub(crate) fn check_delta<T: Scalar>(delta: T) -> Result<()> {
    if !(delta > T::zero() && delta < T::one()) {
        return Err(invalid("delta", format!("{delta} outside (0, 1)")));
    }
    Ok(())
}

/// `B_t(δ) = √(λd)·C + ρ·√(2 ln(1/δ) + d ln(1 + t/λ))`.
pub fn confidence_radius<T: Scalar>(params: &ConfidenceParams<T>, t: usize, delta: T) -> Result<T> {
    check_delta(delta)?;
    let d = T::from_usize_lossy(params.dim);
    let bias = (params.lambda * d).sqrt() * params.cap;
    let inner = T::lit(2.0) * delta.recip().ln()
        + d * (T::one() + T::from_usize_lossy(t) / params.lambda).ln();
    Ok(bias + params.rho * inner.sqrt())
}
