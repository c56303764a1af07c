//! Estimation of the per-tariff noise covariance `Γ` from an exploration phase.
//!
//! The exploration design cycles through the `K(K+1)/2` allocations
//! `p^(i,j)` (mass 1 on tariff `i` when `i = j`, mass 1/2 on `i` and `j`
//! otherwise) in lexicographic order. Squared residuals `Ẑ_t²` are then
//! regressed on the quadratic forms `p_tᵀ Γ p_t` by least squares over
//! symmetric matrices.

use num_traits::Num;

use crate::domain::{clip, Allocation, FeatureVector};
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::ridge::{check_delta, confidence_radius, ConfidenceParams};
use crate::scalar::Scalar;

/// Ordered list of exploration pairs `(i, j)`, 1-based with `i ≤ j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplorationSchedule {
    k: usize,
    pairs: Vec<(usize, usize)>,
}

impl ExplorationSchedule {
    /// All `K(K+1)/2` pairs in lexicographic order.
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("K", "need at least one tariff"));
        }
        let pairs = (1..=k).flat_map(|i| (i..=k).map(move |j| (i, j))).collect();
        Ok(Self { k, pairs })
    }

    /// Only the pairs whose exploration vector belongs to `grid`, keeping the
    /// lexicographic order.
    pub fn restricted_to<T: Scalar>(k: usize, grid: &[Allocation<T>]) -> Result<Self> {
        let full = Self::new(k)?;
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(8.0));
        let pairs: Vec<_> = full
            .pairs
            .iter()
            .copied()
            .filter(|&(i, j)| {
                let p = exploration_vector::<T>(i, j, k).expect("valid pair");
                grid.iter().any(|g| g.approx_eq(&p, tol))
            })
            .collect();
        if pairs.is_empty() {
            return Err(invalid("grid", "contains no exploration vector"));
        }
        Ok(Self { k, pairs })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Allocation played at 1-based round `t`.
    pub fn at<T: Scalar>(&self, t: usize) -> Result<Allocation<T>> {
        if t == 0 {
            return Err(invalid("t", "rounds are 1-based"));
        }
        let (i, j) = self.pairs[(t - 1) % self.pairs.len()];
        exploration_vector(i, j, self.k)
    }
}

/// `p^(i,j)` for 1-based `1 ≤ i ≤ j ≤ K`.
pub fn exploration_vector<T: Scalar>(i: usize, j: usize, k: usize) -> Result<Allocation<T>> {
    if i == 0 || i > j || j > k {
        return Err(Error::InvalidPair { i, j, k });
    }
    let mut w = vec![T::zero(); k];
    if i == j {
        w[i - 1] = T::one();
    } else {
        w[i - 1] = T::lit(0.5);
        w[j - 1] = T::lit(0.5);
    }
    Allocation::new(w)
}

/// Lexicographic exploration vector for 1-based round `t`.
pub fn schedule_at<T: Scalar>(t: usize, k: usize) -> Result<Allocation<T>> {
    ExplorationSchedule::new(k)?.at(t)
}

/// `n₀ = ⌊2n / (K(K+1))⌋`.
pub fn min_visits(n: usize, k: usize) -> usize {
    2 * n / (k * (k + 1))
}

#[derive(Debug, Clone)]
pub struct ExplorationRow<T> {
    pub allocation: Allocation<T>,
    pub features: FeatureVector<T>,
    pub observed: T,
}

/// Rounds `1..=n` of the exploration phase.
#[derive(Debug, Clone, Default)]
pub struct ExplorationRecord<T> {
    rows: Vec<ExplorationRow<T>>,
}

impl<T: Scalar> ExplorationRecord<T> {
    pub fn new() -> Self {
        Self { rows: Vec::new() }
    }

    pub fn push(&mut self, allocation: Allocation<T>, features: FeatureVector<T>, observed: T) {
        self.rows.push(ExplorationRow {
            allocation,
            features,
            observed,
        });
    }

    pub fn rows(&self) -> &[ExplorationRow<T>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate<T> {
    pub gamma_hat: Matrix<T>,
    /// Uniform bound `γ` on `|pᵀ(Γ̂ − Γ)p|` over the allocation set.
    pub gamma_bound: T,
    pub n_explore: usize,
    pub n0: usize,
}

impl<T: Scalar> CovarianceEstimate<T> {
    /// A known covariance: `γ = 0`, no exploration.
    pub fn known(gamma: Matrix<T>) -> Self {
        Self {
            gamma_hat: gamma,
            gamma_bound: T::zero(),
            n_explore: 0,
            n0: 0,
        }
    }

    pub fn with_gamma_bound(mut self, gamma_bound: T) -> Self {
        self.gamma_bound = gamma_bound;
        self
    }

    /// Eigenvalues clipped at zero.
    pub fn clipped_psd(&self) -> Self {
        let k = self.gamma_hat.rows();
        let (vals, vecs) = self.gamma_hat.symmetric_eigen();
        let mut m = Matrix::zeros(k, k);
        for (c, &l) in vals.iter().enumerate() {
            if l <= T::zero() {
                continue;
            }
            let col: Vec<T> = (0..k).map(|r| vecs[(r, c)]).collect();
            m.add_symmetric_outer(&col, l);
        }
        Self {
            gamma_hat: m,
            ..self.clone()
        }
    }

    /// `sup_p |pᵀ(Γ̂ − Γ)p|` over `allocations`.
    pub fn sup_error(&self, truth: &Matrix<T>, allocations: &[Allocation<T>]) -> T {
        let diff = self.gamma_hat.sub(truth);
        allocations
            .iter()
            .fold(T::zero(), |m, p| m.max(p.quad(&diff).abs()))
    }
}

/// Coordinates of `pᵀ Γ p` on the free entries of a symmetric `Γ`, scaled so
/// the Euclidean norm of the coordinates is the Frobenius norm of `Γ`.
fn quad_design<T: Scalar>(p: &[T]) -> Vec<T> {
    let k = p.len();
    let r2 = T::lit(2.0).sqrt();
    let mut out = Vec::with_capacity(k * (k + 1) / 2);
    for i in 0..k {
        out.push(p[i] * p[i]);
        for j in i + 1..k {
            out.push(r2 * p[i] * p[j]);
        }
    }
    out
}

/// Least-squares symmetric `Γ̂` with `p_tᵀ Γ̂ p_t ≈ targets_t`; minimum
/// Frobenius-norm solution when the design does not identify every entry.
pub fn fit_quadratic_forms<T: Scalar>(
    allocations: &[&Allocation<T>],
    targets: &[T],
) -> Result<Matrix<T>> {
    let first = allocations.first().ok_or(Error::EmptyRecord)?;
    let k = first.k();
    let m = k * (k + 1) / 2;
    let mut normal = Matrix::zeros(m, m);
    let mut rhs = vec![T::zero(); m];
    for (p, &z2) in allocations.iter().zip(targets) {
        if p.k() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: p.k(),
            });
        }
        let w = quad_design(p.weights());
        normal.add_symmetric_outer(&w, T::one());
        for (r, &wi) in rhs.iter_mut().zip(&w) {
            *r = *r + z2 * wi;
        }
    }
    let h = normal.min_norm_solve(&rhs, T::epsilon() * T::lit(1024.0));
    let r2 = T::lit(2.0).sqrt();
    let mut gamma = Matrix::zeros(k, k);
    let mut at = 0;
    for i in 0..k {
        gamma[(i, i)] = h[at];
        at += 1;
        for j in i + 1..k {
            let v = h[at] / r2;
            gamma[(i, j)] = v;
            gamma[(j, i)] = v;
            at += 1;
        }
    }
    Ok(gamma)
}

/// `Γ̂ₙ` from the exploration record and the ridge estimate `θ̂ₙ` fitted on it.
///
/// Residuals are `Ẑ_t = Y_t − [φ_tᵀ θ̂ₙ]_C`. The returned estimate carries
/// `γ = 0`; attach a bound with [`CovarianceEstimate::with_gamma_bound`].
pub fn estimate_covariance<T: Scalar>(
    record: &ExplorationRecord<T>,
    theta_hat: &[T],
    cap: T,
) -> Result<CovarianceEstimate<T>> {
    if record.is_empty() {
        return Err(Error::EmptyRecord);
    }
    let mut allocs = Vec::with_capacity(record.len());
    let mut z2 = Vec::with_capacity(record.len());
    for row in record.rows() {
        if row.features.dim() != theta_hat.len() {
            return Err(Error::DimensionMismatch {
                expected: theta_hat.len(),
                got: row.features.dim(),
            });
        }
        let z = row.observed - clip(row.features.dot(theta_hat), cap);
        allocs.push(&row.allocation);
        z2.push(z * z);
    }
    let gamma_hat = fit_quadratic_forms(&allocs, &z2)?;
    let k = gamma_hat.rows();
    let n = record.len();
    Ok(CovarianceEstimate {
        gamma_hat,
        gamma_bound: T::zero(),
        n_explore: n,
        n0: min_visits(n, k),
    })
}

/// Constants of the high-probability bound on `sup_p |pᵀ(Γ̂ₙ − Γ)p|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaBound<T> {
    /// `M_n = ρ/2 + ln(6n/δ)`.
    pub m: T,
    /// `M'_n = M_n² √(2 ln(3K²/δ)) + 2 √(e^{2ρ} δ / 6)`.
    pub m_prime: T,
    /// `κ_n = (C + 2M_n) B_n(δ/3) + M'_n`.
    pub kappa: T,
    /// `γ = (K + 8) κ_n √n / n₀`.
    pub gamma: T,
}

pub fn gamma_bound_terms<T: Scalar>(
    n: usize,
    delta: T,
    params: &ConfidenceParams<T>,
    k: usize,
) -> Result<GammaBound<T>> {
    check_delta(delta)?;
    let n0 = min_visits(n, k);
    if n0 == 0 {
        return Err(invalid(
            "n",
            format!("exploration length {n} gives n0 = 0 for K = {k}"),
        ));
    }
    let nf = T::from_usize_lossy(n);
    let kf = T::from_usize_lossy(k);
    let two = T::lit(2.0);
    let m = params.rho / two + (T::lit(6.0) * nf / delta).ln();
    let m_prime = m * m * (two * (T::lit(3.0) * kf * kf / delta).ln()).sqrt()
        + two * ((two * params.rho).exp() * delta / T::lit(6.0)).sqrt();
    let b = confidence_radius(params, n, delta / T::lit(3.0))?;
    let kappa = (params.cap + two * m) * b + m_prime;
    let gamma = (kf + T::lit(8.0)) * kappa * nf.sqrt() / T::from_usize_lossy(n0);
    Ok(GammaBound {
        m,
        m_prime,
        kappa,
        gamma,
    })
}

/// `γ = (K + 8) κ_n √n / n₀`.
pub fn gamma_error_bound<T: Scalar>(
    n: usize,
    delta: T,
    params: &ConfidenceParams<T>,
    k: usize,
) -> Result<T> {
    Ok(gamma_bound_terms(n, delta, params, k)?.gamma)
}

/// Coefficients `u(i, j)` with `q qᵀ = Σ_{i,j} u(i,j) p^(i,j) p^(i,j)ᵀ`,
/// indexed 0-based and symmetric (`p^(i,j) = p^(j,i)`).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticDecomposition<T> {
    coeffs: Vec<Vec<T>>,
}

impl<T: Num + Clone> QuadraticDecomposition<T> {
    pub fn k(&self) -> usize {
        self.coeffs.len()
    }

    pub fn u(&self, i: usize, j: usize) -> T {
        self.coeffs[i][j].clone()
    }

    /// `Σ_{i,j} u(i,j) p^(i,j) p^(i,j)ᵀ` as a dense `K × K` array.
    pub fn reconstruct(&self) -> Vec<Vec<T>> {
        let k = self.k();
        let half = T::one() / (T::one() + T::one());
        let mut out = vec![vec![T::zero(); k]; k];
        for i in 0..k {
            for j in 0..k {
                let u = self.u(i, j);
                if i == j {
                    out[i][i] = out[i][i].clone() + u;
                } else {
                    // p^(i,j) p^(i,j)ᵀ has 1/4 on the four entries {i,j}².
                    let w = u * half.clone() * half.clone();
                    for a in [i, j] {
                        for b in [i, j] {
                            out[a][b] = out[a][b].clone() + w.clone();
                        }
                    }
                }
            }
        }
        out
    }
}

/// `u(i,j) = 2 q_i q_j` for `i ≠ j`, `u(i,i) = 2 q_i² − q_i`.
///
/// Generic over any numeric field so the identity can be checked in exact
/// rational arithmetic. Requires `Σ q_i = 1`.
pub fn decompose_quadratic<T: Num + Clone>(q: &[T]) -> QuadraticDecomposition<T> {
    let k = q.len();
    let two = T::one() + T::one();
    let coeffs = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let prod = two.clone() * q[i].clone() * q[j].clone();
                    if i == j {
                        prod - q[i].clone()
                    } else {
                        prod
                    }
                })
                .collect()
        })
        .collect();
    QuadraticDecomposition { coeffs }
}
