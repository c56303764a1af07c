//! Ground-truth losses, the per-round regret ledger and multi-run summaries.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::domain::{Allocation, Context};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::Scenario;

/// Absolute slack on `r_t ≥ 0`.
pub const REGRET_TOLERANCE: f64 = 1e-12;

/// `ℓ_{t,p} = (φ(x,p)ᵀθ − c)² + Var(Y | p)`.
pub fn true_expected_loss<T: Scalar>(
    scenario: &Scenario<T>,
    x: &Context,
    c: T,
    p: &Allocation<T>,
) -> Result<T> {
    let gap = scenario.transfer().mean(x, p)? - c;
    Ok(gap * gap + scenario.noise().variance(p))
}

/// Exhaustive `min_p ℓ_{t,p}` over `grid` and its lowest argmin.
pub fn oracle_loss<T: Scalar>(
    scenario: &Scenario<T>,
    x: &Context,
    c: T,
    grid: &[Allocation<T>],
) -> Result<(T, usize)> {
    let means = scenario.tariff_means(x)?;
    oracle_from_means(scenario, &means, c, grid)
}

pub(crate) fn oracle_from_means<T: Scalar>(
    scenario: &Scenario<T>,
    means: &[T],
    c: T,
    grid: &[Allocation<T>],
) -> Result<(T, usize)> {
    let mut best: Option<(T, usize)> = None;
    for (i, p) in grid.iter().enumerate() {
        let gap = crate::linalg::dot(means, p.weights()) - c;
        let loss = gap * gap + scenario.noise().variance(p);
        if best.is_none_or(|(b, _)| loss < b) {
            best = Some((loss, i));
        }
    }
    best.ok_or(Error::EmptyGrid)
}

/// Inputs of one ledger row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord<T> {
    pub t: usize,
    pub chosen_index: Option<usize>,
    /// `(Y_t − c_t)²`.
    pub realized_loss: T,
    /// `ℓ_{t,p_t}`.
    pub expected_loss: T,
    /// `min_p ℓ_{t,p}`.
    pub oracle_loss: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerRow<T> {
    pub t: usize,
    pub chosen_index: Option<usize>,
    pub realized_loss: T,
    pub expected_loss: T,
    pub oracle_loss: T,
    pub instantaneous_regret: T,
    pub cumulative_regret: T,
    pub cumulative_realized: T,
    pub cumulative_expected: T,
}

/// Append-only per-round table with running sums.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegretLedger<T> {
    rows: Vec<LedgerRow<T>>,
    min_regret: Option<T>,
}

impl<T: Scalar> RegretLedger<T> {
    pub fn new() -> Self {
        Self {
            rows: Vec::new(),
            min_regret: None,
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            rows: Vec::with_capacity(n),
            min_regret: None,
        }
    }

    /// Rounds must arrive as `1, 2, 3, …`; `r_t < −1e−12` is rejected.
    pub fn record_round(&mut self, round: RoundRecord<T>) -> Result<&LedgerRow<T>> {
        let expected = self.rows.len() + 1;
        if round.t != expected {
            return Err(Error::OutOfOrder {
                expected,
                got: round.t,
            });
        }
        let regret = round.expected_loss - round.oracle_loss;
        let scale = round.expected_loss.abs().max(round.oracle_loss.abs());
        let tol = T::lit(REGRET_TOLERANCE) + T::lit(4.0) * T::epsilon() * scale;
        if !(regret >= -tol) {
            return Err(Error::OracleViolated {
                t: round.t,
                regret: regret.to_f64_lossy(),
            });
        }
        let (cr, cl, ce) = self
            .rows
            .last()
            .map_or((T::zero(), T::zero(), T::zero()), |r| {
                (
                    r.cumulative_regret,
                    r.cumulative_realized,
                    r.cumulative_expected,
                )
            });
        self.min_regret = Some(self.min_regret.map_or(regret, |m| m.min(regret)));
        self.rows.push(LedgerRow {
            t: round.t,
            chosen_index: round.chosen_index,
            realized_loss: round.realized_loss,
            expected_loss: round.expected_loss,
            oracle_loss: round.oracle_loss,
            instantaneous_regret: regret,
            cumulative_regret: cr + regret,
            cumulative_realized: cl + round.realized_loss,
            cumulative_expected: ce + round.expected_loss,
        });
        Ok(self.rows.last().expect("just pushed"))
    }

    pub fn rows(&self) -> &[LedgerRow<T>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `R̄_T`, zero for an empty ledger.
    pub fn final_regret(&self) -> T {
        self.rows.last().map_or(T::zero(), |r| r.cumulative_regret)
    }

    /// `R̄_t` at 1-based round `t`.
    pub fn regret_at(&self, t: usize) -> Option<T> {
        t.checked_sub(1)
            .and_then(|i| self.rows.get(i))
            .map(|r| r.cumulative_regret)
    }

    /// Smallest instantaneous regret recorded.
    pub fn min_instantaneous_regret(&self) -> Option<T> {
        self.min_regret
    }

    pub fn cumulative_regret_curve(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.cumulative_regret.to_f64_lossy())
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(LEDGER_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                r.chosen_index.map_or(String::new(), |i| i.to_string()),
                r.realized_loss.to_string(),
                r.expected_loss.to_string(),
                r.oracle_loss.to_string(),
                r.instantaneous_regret.to_string(),
                r.cumulative_regret.to_string(),
                r.cumulative_realized.to_string(),
                r.cumulative_expected.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

pub const LEDGER_COLUMNS: [&str; 9] = [
    "t",
    "chosen_index",
    "realized_loss",
    "expected_loss",
    "oracle_loss",
    "instantaneous_regret",
    "cumulative_regret",
    "cumulative_realized",
    "cumulative_expected",
];

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileBand {
    pub t: usize,
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
}

/// Cross-run quantiles of cumulative regret.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub bands: Vec<QuantileBand>,
    /// `R̄_T` of every run, in input order.
    pub final_regrets: Vec<f64>,
}

impl RunSummary {
    pub fn horizon(&self) -> usize {
        self.bands.len()
    }

    pub fn final_band(&self) -> QuantileBand {
        *self.bands.last().expect("summaries are never empty")
    }

    pub fn median_curve(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.median).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for b in &self.bands {
            w.serialize(b)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Per-round 10/50/90% quantiles of cumulative regret across ledgers.
pub fn aggregate_runs<T: Scalar>(ledgers: &[RegretLedger<T>]) -> Result<RunSummary> {
    let first = ledgers
        .first()
        .ok_or_else(|| crate::error::invalid("ledgers", "nothing to aggregate"))?;
    let horizon = first.len();
    if horizon == 0 {
        return Err(crate::error::invalid("ledgers", "empty ledger"));
    }
    if let Some(other) = ledgers.iter().find(|l| l.len() != horizon) {
        return Err(Error::HorizonMismatch {
            first: horizon,
            other: other.len(),
        });
    }
    let mut column = vec![0.0; ledgers.len()];
    let bands = (0..horizon)
        .map(|i| {
            for (c, l) in column.iter_mut().zip(ledgers) {
                *c = l.rows[i].cumulative_regret.to_f64_lossy();
            }
            column.sort_by(f64::total_cmp);
            QuantileBand {
                t: i + 1,
                q10: quantile_sorted(&column, 0.1),
                median: quantile_sorted(&column, 0.5),
                q90: quantile_sorted(&column, 0.9),
            }
        })
        .collect();
    Ok(RunSummary {
        bands,
        final_regrets: ledgers
            .iter()
            .map(|l| l.final_regret().to_f64_lossy())
            .collect(),
    })
}

/// Growth shapes for regret curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateModel {
    /// `√T ln T`.
    SqrtTLogT,
    /// `ln² T`.
    Log2T,
    /// `T^(2/3)`.
    T23,
}

impl RateModel {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            Self::SqrtTLogT => t.sqrt() * t.ln(),
            Self::Log2T => t.ln().powi(2),
            Self::T23 => t.powf(2.0 / 3.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub constant: f64,
    /// `‖curve − c·g‖ / ‖curve‖` over the fitted window.
    pub residual: f64,
}

/// Least-squares `c·g(t)` through the last half of a 1-based curve.
pub fn rate_fit(curve: &[f64], model: RateModel) -> Result<RateFit> {
    if curve.len() < 10 {
        return Err(crate::error::invalid("curve", "need at least 10 rounds"));
    }
    let start = curve.len() / 2;
    let (mut gy, mut gg, mut yy) = (0.0, 0.0, 0.0);
    for (i, &y) in curve.iter().enumerate().skip(start) {
        let g = model.eval((i + 1) as f64);
        gy += g * y;
        gg += g * g;
        yy += y * y;
    }
    if yy == 0.0 {
        return Ok(RateFit {
            constant: 0.0,
            residual: 0.0,
        });
    }
    let c = gy / gg;
    let rss: f64 = curve
        .iter()
        .enumerate()
        .skip(start)
        .map(|(i, &y)| (y - c * model.eval((i + 1) as f64)).powi(2))
        .sum();
    Ok(RateFit {
        constant: c,
        residual: (rss / yy).sqrt(),
    })
}
