//! Iterative proportional fitting for the zero-rate case: find positive
//! scaling sequences so that the support carries masses with prescribed
//! row and column sums. The per-rectangle density of the zero-rate limit
//! shape is the cell mass divided by the cell area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::RegionSpec;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Masses below this trigger a rerun of the whole iteration in log space.
const UNDERFLOW_GUARD: f64 = 1e-300;

/// Converged row/column scalings with the induced cell masses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingSolution {
    /// Per-x-strip scaling, length `k`.
    pub lambda: Vec<f64>,
    /// Per-y-strip scaling, length `ell`.
    pub mu: Vec<f64>,
    /// Cell masses `lambda[u] * mu[v]` on the support, indexed `u * ell + v`.
    pub masses: Vec<f64>,
    pub iterations: usize,
    /// Max marginal violation of the returned masses.
    pub residual: f64,
    ell: usize,
}

impl ScalingSolution {
    pub fn mass(&self, u: usize, v: usize) -> f64 {
        self.masses[u * self.ell + v]
    }

    /// Constant density on rectangle `(u, v)`: mass over area.
    pub fn density(&self, spec: &RegionSpec, u: usize, v: usize) -> f64 {
        self.mass(u, v) / (spec.row_width(u) * spec.col_height(v))
    }
}

fn masses_from(spec: &RegionSpec, lambda: &[f64], mu: &[f64]) -> Vec<f64> {
    let (k, ell) = (spec.k(), spec.ell());
    let mut m = vec![0.0; k * ell];
    for u in 0..k {
        for v in 0..ell {
            if spec.support.get(u, v) {
                m[u * ell + v] = lambda[u] * mu[v];
            }
        }
    }
    m
}

fn marginal_residual(spec: &RegionSpec, masses: &[f64]) -> f64 {
    let (k, ell) = (spec.k(), spec.ell());
    let mut res: f64 = 0.0;
    for u in 0..k {
        let s: f64 = (0..ell).map(|v| masses[u * ell + v]).sum();
        res = res.max((s - spec.row_width(u)).abs());
    }
    for v in 0..ell {
        let s: f64 = (0..k).map(|u| masses[u * ell + v]).sum();
        res = res.max((s - spec.col_height(v)).abs());
    }
    res
}

fn solve_direct(
    spec: &RegionSpec,
    tol: f64,
    max_iter: usize,
    mut history: Option<&mut Vec<f64>>,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let (k, ell) = (spec.k(), spec.ell());
    let mut lambda = vec![0.0; k];
    let mut mu = vec![1.0; ell];
    for n in 1..=max_iter {
        for u in 0..k {
            let denom: f64 = (0..ell)
                .filter(|&v| spec.support.get(u, v))
                .map(|v| mu[v])
                .sum();
            if !(denom > 0.0) {
                return Err(Error::NonPositiveDenominator { axis: "row", index: u });
            }
            lambda[u] = spec.row_width(u) / denom;
        }
        for v in 0..ell {
            let denom: f64 = (0..k)
                .filter(|&u| spec.support.get(u, v))
                .map(|u| lambda[u])
                .sum();
            if !(denom > 0.0) {
                return Err(Error::NonPositiveDenominator { axis: "column", index: v });
            }
            mu[v] = spec.col_height(v) / denom;
        }
        let masses = masses_from(spec, &lambda, &mu);
        if masses
            .iter()
            .any(|&m| m != 0.0 && m.abs() < UNDERFLOW_GUARD)
        {
            return solve_logspace(spec, tol, max_iter, history);
        }
        let res = marginal_residual(spec, &masses);
        if let Some(h) = history.as_deref_mut() {
            h.push(res);
        }
        if res < tol {
            return Ok((lambda, mu, n));
        }
    }
    let masses = masses_from(spec, &lambda, &mu);
    Err(Error::NotConverged {
        max_iter,
        residual: marginal_residual(spec, &masses),
    })
}

/// Same iteration on log scalings; only reached if a mass underflows.
fn solve_logspace(
    spec: &RegionSpec,
    tol: f64,
    max_iter: usize,
    mut history: Option<&mut Vec<f64>>,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let (k, ell) = (spec.k(), spec.ell());
    let log_sum_exp = |terms: &[f64]| -> f64 {
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    };
    let mut log_lambda = vec![0.0; k];
    let mut log_mu = vec![0.0; ell];
    for n in 1..=max_iter {
        for u in 0..k {
            let terms: Vec<f64> = (0..ell)
                .filter(|&v| spec.support.get(u, v))
                .map(|v| log_mu[v])
                .collect();
            log_lambda[u] = spec.row_width(u).ln() - log_sum_exp(&terms);
        }
        for v in 0..ell {
            let terms: Vec<f64> = (0..k)
                .filter(|&u| spec.support.get(u, v))
                .map(|u| log_lambda[u])
                .collect();
            log_mu[v] = spec.col_height(v).ln() - log_sum_exp(&terms);
        }
        // Residual in mass space; valid because row widths are O(1) so the
        // relevant sums do not underflow even when single masses do.
        let lambda: Vec<f64> = log_lambda.iter().map(|l| l.exp()).collect();
        let mu: Vec<f64> = log_mu.iter().map(|l| l.exp()).collect();
        let res = marginal_residual(spec, &masses_from(spec, &lambda, &mu));
        if let Some(h) = history.as_deref_mut() {
            h.push(res);
        }
        if res < tol {
            return Ok((lambda, mu, n));
        }
    }
    let lambda: Vec<f64> = log_lambda.iter().map(|l| l.exp()).collect();
    let mu: Vec<f64> = log_mu.iter().map(|l| l.exp()).collect();
    Err(Error::NotConverged {
        max_iter,
        residual: marginal_residual(spec, &masses_from(spec, &lambda, &mu)),
    })
}

/// Alternating row/column rescaling from `mu = (1,..,1)` until the max
/// marginal violation drops below `tol`.
///
/// Failure to converge within the budget signals (near-)degenerate data.
/// The returned scalings are normalized so that `lambda[0]` equals the first
/// row width divided by the number of support cells in that strip — a fixed
/// convention for reproducible serialized output.
pub fn solve_r0(spec: &RegionSpec, tol: f64, max_iter: usize) -> Result<ScalingSolution> {
    solve_r0_recording(spec, tol, max_iter, None)
}

pub(crate) fn solve_r0_recording(
    spec: &RegionSpec,
    tol: f64,
    max_iter: usize,
    history: Option<&mut Vec<f64>>,
) -> Result<ScalingSolution> {
    spec.validate()?;
    assert!(tol > 0.0, "tolerance must be positive");
    let (mut lambda, mut mu, iterations) = solve_direct(spec, tol, max_iter, history)?;
    let target = spec.row_width(0) / spec.support.column_support(0).len() as f64;
    let c = target / lambda[0];
    for l in &mut lambda {
        *l *= c;
    }
    for m in &mut mu {
        *m /= c;
    }
    let masses = masses_from(spec, &lambda, &mu);
    let residual = marginal_residual(spec, &masses);
    Ok(ScalingSolution {
        lambda,
        mu,
        masses,
        iterations,
        residual,
        ell: spec.ell(),
    })
}
