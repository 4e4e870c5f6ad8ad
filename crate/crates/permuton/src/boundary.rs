//! Breakpoint values of the two parametrizing functions.
//!
//! The limit-shape density on each rectangle is generated by two
//! one-variable functions evaluated at the breakpoints. This module solves
//! the algebraic systems those values satisfy: an exact recursion for simple
//! support arrays, rate continuation from the scaling solution for general
//! convex arrays, and the explicit quadratic for the two non-simple 3x3
//! arrays.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipf;
use crate::proj::{cell_cross_ratio, Moebius, ProjectiveValue};
use crate::region::{self, ReductionRule, RegionSpec, SupportGrid};

/// Which of the two parametrizing functions a value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FuncTag {
    Phi,
    Psi,
}

/// Gauge conventions under which a [`BoundaryValues`] is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaugeKind {
    /// Three projective values pinned outright.
    ThreePoint,
    /// Affine coordinates of the rate-continuation frame: `phi = 1/(r chi)`
    /// with `chi(x_0) = 0`, `psi(y_0) = 0`, `chi(x_k) = 1`. At `r = 0` the
    /// `phi` array stores `chi` itself.
    ChiAffine,
}

/// One pinned value of the gauge.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaugePin {
    pub func: FuncTag,
    pub index: usize,
    pub value: ProjectiveValue,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaugeRecord {
    pub kind: GaugeKind,
    pub pins: Vec<GaugePin>,
}

/// Solved breakpoint values `phi(x_0..x_k)`, `psi(y_0..y_ell)` in projective
/// form, together with the rate and the gauge they are expressed in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryValues {
    pub phi: Vec<ProjectiveValue>,
    pub psi: Vec<ProjectiveValue>,
    pub r: f64,
    pub gauge: GaugeRecord,
}

impl BoundaryValues {
    /// Apply one real Moebius map to every value of both functions; the
    /// density is unchanged.
    pub fn transformed(&self, m: &Moebius, gauge: GaugeRecord) -> Self {
        Self {
            phi: self.phi.iter().map(|p| m.apply(*p)).collect(),
            psi: self.psi.iter().map(|p| m.apply(*p)).collect(),
            r: self.r,
            gauge,
        }
    }
}

/// Move `bv` to the gauge in which the three anchor values equal the given
/// targets. Sources and targets must each be pairwise distinct.
pub fn align_to(
    bv: &BoundaryValues,
    anchors: &[(FuncTag, usize, ProjectiveValue); 3],
) -> Result<BoundaryValues> {
    let lookup = |&(func, index, _): &(FuncTag, usize, ProjectiveValue)| match func {
        FuncTag::Phi => bv.phi[index],
        FuncTag::Psi => bv.psi[index],
    };
    let src = [lookup(&anchors[0]), lookup(&anchors[1]), lookup(&anchors[2])];
    let dst = [anchors[0].2, anchors[1].2, anchors[2].2];
    let m = Moebius::map_points(src, dst)?;
    let pins = anchors
        .iter()
        .map(|&(func, index, value)| GaugePin { func, index, value })
        .collect();
    Ok(bv.transformed(
        &m,
        GaugeRecord {
            kind: GaugeKind::ThreePoint,
            pins,
        },
    ))
}

/// Mass of rectangle `(u, v)` read off the boundary values:
/// `(1/r) * ln` of the cell cross-ratio.
pub fn cell_mass(bv: &BoundaryValues, u: usize, v: usize) -> f64 {
    let cr = cell_cross_ratio(bv.phi[u], bv.phi[u + 1], bv.psi[v], bv.psi[v + 1]);
    cr.ln() / bv.r
}

/// All `k * ell` rectangle masses (zero off the support).
pub fn cell_masses(spec: &RegionSpec, bv: &BoundaryValues) -> Vec<f64> {
    let (k, ell) = (spec.k(), spec.ell());
    let mut out = vec![0.0; k * ell];
    for u in 0..k {
        for v in 0..ell {
            if spec.support.get(u, v) {
                out[u * ell + v] = if bv.r == 0.0 {
                    let lam = bv.phi[u + 1].to_f64() - bv.phi[u].to_f64();
                    let mu = bv.psi[v + 1].to_f64() - bv.psi[v].to_f64();
                    lam * mu
                } else {
                    cell_mass(bv, u, v)
                };
            }
        }
    }
    out
}

/// Signed residuals of the `k + ell` breakpoint equations in log form:
/// `r * delta - sum_v I_uv ln(cross ratio)` for each x-strip, then the same
/// per y-strip. At `r = 0` the linearized (increment-product) form is used.
/// Non-positive cross-ratios yield NaN entries.
pub fn residual(spec: &RegionSpec, bv: &BoundaryValues) -> Vec<f64> {
    let (k, ell) = (spec.k(), spec.ell());
    let mut out = Vec::with_capacity(k + ell);
    if bv.r == 0.0 {
        let lam: Vec<f64> = (0..k)
            .map(|u| bv.phi[u + 1].to_f64() - bv.phi[u].to_f64())
            .collect();
        let mu: Vec<f64> = (0..ell)
            .map(|v| bv.psi[v + 1].to_f64() - bv.psi[v].to_f64())
            .collect();
        for u in 0..k {
            let s: f64 = (0..ell)
                .filter(|&v| spec.support.get(u, v))
                .map(|v| lam[u] * mu[v])
                .sum();
            out.push(spec.row_width(u) - s);
        }
        for v in 0..ell {
            let s: f64 = (0..k)
                .filter(|&u| spec.support.get(u, v))
                .map(|u| lam[u] * mu[v])
                .sum();
            out.push(spec.col_height(v) - s);
        }
        return out;
    }
    let log_cr = |u: usize, v: usize| -> f64 {
        cell_cross_ratio(bv.phi[u], bv.phi[u + 1], bv.psi[v], bv.psi[v + 1]).ln()
    };
    for u in 0..k {
        let s: f64 = (0..ell)
            .filter(|&v| spec.support.get(u, v))
            .map(|v| log_cr(u, v))
            .sum();
        out.push(bv.r * spec.row_width(u) - s);
    }
    for v in 0..ell {
        let s: f64 = (0..k)
            .filter(|&u| spec.support.get(u, v))
            .map(|u| log_cr(u, v))
            .sum();
        out.push(bv.r * spec.col_height(v) - s);
    }
    out
}

// ---------------------------------------------------------------------------
// Exact recursion for simple arrays
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum UnknownSlot {
    PhiLo,
    PhiHi,
    PsiLo,
    PsiHi,
}

/// One un-reduction equation: `exp(r * delta)` equals the cross-ratio of the
/// recorded cell, with exactly one of the four breakpoint values unknown.
#[derive(Debug, Clone, Copy)]
struct SolveStep {
    phi_lo: usize,
    phi_hi: usize,
    psi_lo: usize,
    psi_hi: usize,
    unknown: UnknownSlot,
    delta: f64,
}

/// Solve the single cross-ratio equation of `step` for its unknown. The
/// cross-ratio is a Moebius function of the unknown, so the solution is a
/// ratio of two linear forms in `exp(r * delta)`.
fn solve_step(
    e: f64,
    phi_lo: ProjectiveValue,
    phi_hi: ProjectiveValue,
    psi_lo: ProjectiveValue,
    psi_hi: ProjectiveValue,
    unknown: UnknownSlot,
) -> Result<ProjectiveValue> {
    let (num, den) = match unknown {
        UnknownSlot::PhiHi => {
            let k1 = psi_hi.det(&phi_lo);
            let k2 = psi_lo.det(&phi_lo);
            (
                e * k2 * psi_hi.num - k1 * psi_lo.num,
                e * k2 * psi_hi.den - k1 * psi_lo.den,
            )
        }
        UnknownSlot::PhiLo => {
            let k1 = psi_lo.det(&phi_hi);
            let k2 = psi_hi.det(&phi_hi);
            (
                e * k2 * psi_lo.num - k1 * psi_hi.num,
                e * k2 * psi_lo.den - k1 * psi_hi.den,
            )
        }
        UnknownSlot::PsiHi => {
            let k1 = psi_lo.det(&phi_hi);
            let k2 = psi_lo.det(&phi_lo);
            (
                k1 * phi_lo.num - e * k2 * phi_hi.num,
                k1 * phi_lo.den - e * k2 * phi_hi.den,
            )
        }
        UnknownSlot::PsiLo => {
            let k1 = psi_hi.det(&phi_lo);
            let k2 = psi_hi.det(&phi_hi);
            (
                k1 * phi_hi.num - e * k2 * phi_lo.num,
                k1 * phi_hi.den - e * k2 * phi_lo.den,
            )
        }
    };
    if num == 0.0 && den == 0.0 {
        return Err(Error::DegenerateMoebius(
            "un-reduction equation collapsed".into(),
        ));
    }
    Ok(ProjectiveValue::new(num, den))
}

/// Exact solver for simple support arrays: replay the reduction sequence in
/// reverse, starting from the 1x1 base cell in the gauge
/// `phi(base x-lo) = 0`, `psi(base y-lo) = inf`, `psi(base y-hi) = 1`.
pub fn solve_simple(spec: &RegionSpec) -> Result<BoundaryValues> {
    spec.validate()?;
    if spec.r == 0.0 {
        return Err(Error::RZero);
    }
    if !region::is_convex(&spec.support)? {
        return Err(Error::NotSimple);
    }
    let sequence = region::is_simple(&spec.support).ok_or(Error::NotSimple)?;
    let (k, ell) = (spec.k(), spec.ell());

    // Forward replay on breakpoint bookkeeping: original indices of the
    // surviving breakpoints plus effective strip widths/heights.
    let mut xb: Vec<usize> = (0..=k).collect();
    let mut yb: Vec<usize> = (0..=ell).collect();
    let mut w: Vec<f64> = (0..k).map(|u| spec.row_width(u)).collect();
    let mut h: Vec<f64> = (0..ell).map(|v| spec.col_height(v)).collect();
    let mut steps: Vec<SolveStep> = Vec::with_capacity(sequence.len());
    for step in &sequence {
        let solve = match step.rule {
            ReductionRule::UniqueExtremeRow => {
                let (v, u) = (step.index, step.pivot);
                let s = SolveStep {
                    phi_lo: xb[u],
                    phi_hi: xb[u + 1],
                    psi_lo: yb[v],
                    psi_hi: yb[v + 1],
                    unknown: if v == 0 {
                        UnknownSlot::PsiLo
                    } else {
                        UnknownSlot::PsiHi
                    },
                    delta: h[v],
                };
                w[u] -= h[v];
                if v == 0 {
                    yb.remove(0);
                } else {
                    yb.pop();
                }
                h.remove(v);
                s
            }
            ReductionRule::UniqueExtremeColumn => {
                let (u, v) = (step.index, step.pivot);
                let s = SolveStep {
                    phi_lo: xb[u],
                    phi_hi: xb[u + 1],
                    psi_lo: yb[v],
                    psi_hi: yb[v + 1],
                    unknown: if u == 0 {
                        UnknownSlot::PhiLo
                    } else {
                        UnknownSlot::PhiHi
                    },
                    delta: w[u],
                };
                h[v] -= w[u];
                if u == 0 {
                    xb.remove(0);
                } else {
                    xb.pop();
                }
                w.remove(u);
                s
            }
            ReductionRule::DuplicateFullRows => {
                let v = step.index;
                let s = SolveStep {
                    phi_lo: xb[0],
                    phi_hi: *xb.last().unwrap(),
                    psi_lo: yb[v],
                    psi_hi: yb[v + 1],
                    unknown: UnknownSlot::PsiHi,
                    delta: h[v],
                };
                h[v] += h[v + 1];
                h.remove(v + 1);
                yb.remove(v + 1);
                s
            }
            ReductionRule::DuplicateFullColumns => {
                let u = step.index;
                let s = SolveStep {
                    phi_lo: xb[u],
                    phi_hi: xb[u + 1],
                    psi_lo: yb[0],
                    psi_hi: *yb.last().unwrap(),
                    unknown: UnknownSlot::PhiHi,
                    delta: w[u],
                };
                w[u] += w[u + 1];
                w.remove(u + 1);
                xb.remove(u + 1);
                s
            }
        };
        if solve.delta <= 0.0 {
            return Err(Error::Degenerate(format!(
                "reduction produced a non-positive strip extent ({:.3e})",
                solve.delta
            )));
        }
        steps.push(solve);
    }
    debug_assert_eq!(xb.len(), 2);
    debug_assert_eq!(yb.len(), 2);

    // Backward replay: pin the base gauge, solve the base cell, then undo
    // the reductions, each determining exactly one new value.
    let mut phi: Vec<Option<ProjectiveValue>> = vec![None; k + 1];
    let mut psi: Vec<Option<ProjectiveValue>> = vec![None; ell + 1];
    phi[xb[0]] = Some(ProjectiveValue::finite(0.0));
    psi[yb[0]] = Some(ProjectiveValue::infinity());
    psi[yb[1]] = Some(ProjectiveValue::finite(1.0));
    let gauge = GaugeRecord {
        kind: GaugeKind::ThreePoint,
        pins: vec![
            GaugePin {
                func: FuncTag::Phi,
                index: xb[0],
                value: ProjectiveValue::finite(0.0),
            },
            GaugePin {
                func: FuncTag::Psi,
                index: yb[0],
                value: ProjectiveValue::infinity(),
            },
            GaugePin {
                func: FuncTag::Psi,
                index: yb[1],
                value: ProjectiveValue::finite(1.0),
            },
        ],
    };
    let base = SolveStep {
        phi_lo: xb[0],
        phi_hi: xb[1],
        psi_lo: yb[0],
        psi_hi: yb[1],
        unknown: UnknownSlot::PhiHi,
        delta: w[0],
    };
    debug_assert!((w[0] - h[0]).abs() < 1e-9, "base cell must be balanced");
    // The unknown slot's entry is never read by solve_step; a placeholder
    // stands in for it.
    let placeholder = ProjectiveValue::finite(0.0);
    for step in std::iter::once(base).chain(steps.into_iter().rev()) {
        let e = (spec.r * step.delta).exp();
        let slots = [
            (UnknownSlot::PhiLo, phi[step.phi_lo]),
            (UnknownSlot::PhiHi, phi[step.phi_hi]),
            (UnknownSlot::PsiLo, psi[step.psi_lo]),
            (UnknownSlot::PsiHi, psi[step.psi_hi]),
        ];
        let fetch = |slot: UnknownSlot, val: Option<ProjectiveValue>| {
            if matches!(
                (slot, step.unknown),
                (UnknownSlot::PhiLo, UnknownSlot::PhiLo)
                    | (UnknownSlot::PhiHi, UnknownSlot::PhiHi)
                    | (UnknownSlot::PsiLo, UnknownSlot::PsiLo)
                    | (UnknownSlot::PsiHi, UnknownSlot::PsiHi)
            ) {
                placeholder
            } else {
                val.expect("solve order violated")
            }
        };
        let value = solve_step(
            e,
            fetch(slots[0].0, slots[0].1),
            fetch(slots[1].0, slots[1].1),
            fetch(slots[2].0, slots[2].1),
            fetch(slots[3].0, slots[3].1),
            step.unknown,
        )?;
        match step.unknown {
            UnknownSlot::PhiLo => phi[step.phi_lo] = Some(value),
            UnknownSlot::PhiHi => phi[step.phi_hi] = Some(value),
            UnknownSlot::PsiLo => psi[step.psi_lo] = Some(value),
            UnknownSlot::PsiHi => psi[step.psi_hi] = Some(value),
        }
    }
    let bv = BoundaryValues {
        phi: phi
            .into_iter()
            .map(|p| p.expect("all phi values determined"))
            .collect(),
        psi: psi
            .into_iter()
            .map(|p| p.expect("all psi values determined"))
            .collect(),
        r: spec.r,
        gauge,
    };
    for u in 0..k {
        for v in 0..ell {
            if spec.support.get(u, v) && !(cell_mass(&bv, u, v) > 0.0) {
                return Err(Error::Degenerate(format!(
                    "solved mass on cell ({u},{v}) is not positive"
                )));
            }
        }
    }
    Ok(bv)
}

// ---------------------------------------------------------------------------
// Rate continuation for convex arrays
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ContinuationOptions {
    /// Initial (and maximal) step in `r`.
    pub dr: f64,
    /// Newton convergence target on the per-strip equations, in units of
    /// strip extent (the log-form residual is `|r|` times this).
    pub tol: f64,
    pub max_newton: usize,
    pub max_halvings: u32,
    /// Checked once per `r`-step; setting it aborts the run.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            dr: 1e-3,
            tol: 1e-12,
            max_newton: 50,
            max_halvings: 10,
            cancel: None,
        }
    }
}

/// Affine state of the continuation frame.
struct ChiState {
    chi: Vec<f64>, // k+1, chi[0] = 0, chi[k] = 1 fixed
    psi: Vec<f64>, // ell+1, psi[0] = 0 fixed
}

impl ChiState {
    fn q(&self, r: f64, i: usize, j: usize) -> f64 {
        1.0 - r * self.chi[i] * self.psi[j]
    }
}

/// Per-strip equations in the affine frame, divided by `r` so that the
/// `r -> 0` limit is the scaling system. Equation layout: one per x-strip,
/// then one per y-strip except the last (whose equation is the product of
/// the others).
fn continuation_residual(spec: &RegionSpec, st: &ChiState, r: f64) -> Option<Vec<f64>> {
    let (k, ell) = (spec.k(), spec.ell());
    let mut by_x = vec![0.0; k];
    let mut by_y = vec![0.0; ell];
    for u in 0..k {
        for v in 0..ell {
            if !spec.support.get(u, v) {
                continue;
            }
            let contrib = if r == 0.0 {
                (st.chi[u + 1] - st.chi[u]) * (st.psi[v + 1] - st.psi[v])
            } else {
                let (q_ll, q_lh) = (st.q(r, u, v), st.q(r, u, v + 1));
                let (q_hl, q_hh) = (st.q(r, u + 1, v), st.q(r, u + 1, v + 1));
                if q_ll <= 1e-13 || q_lh <= 1e-13 || q_hl <= 1e-13 || q_hh <= 1e-13 {
                    return None; // crossed a pole of the cross-ratio
                }
                (q_lh.ln() + q_hl.ln() - q_ll.ln() - q_hh.ln()) / r
            };
            by_x[u] += contrib;
            by_y[v] += contrib;
        }
    }
    let mut res = Vec::with_capacity(k + ell - 1);
    for u in 0..k {
        res.push(by_x[u] - spec.row_width(u));
    }
    for (v, s) in by_y.iter().enumerate().take(ell - 1) {
        res.push(s - spec.col_height(v));
    }
    Some(res)
}

/// Dense Jacobian of [`continuation_residual`] with respect to the free
/// variables `chi[1..k], psi[1..=ell]`. The x-strip equation for strip `u`
/// occupies row `u`; the y-strip equation for strip `v < ell - 1` occupies
/// row `k + v`.
fn continuation_jacobian(spec: &RegionSpec, st: &ChiState, r: f64) -> Vec<Vec<f64>> {
    let (k, ell) = (spec.k(), spec.ell());
    let n = k - 1 + ell;
    let chi_col = |i: usize| -> Option<usize> { (i >= 1 && i < k).then(|| i - 1) };
    let psi_col = |j: usize| -> Option<usize> { (j >= 1).then(|| k - 1 + j - 1) };
    let mut jac = vec![vec![0.0; n]; k + ell - 1];
    for u in 0..k {
        for v in 0..ell {
            if !spec.support.get(u, v) {
                continue;
            }
            // Derivatives of the per-cell contribution; at r = 0 all q are 1
            // and these reduce to the derivatives of the increment product.
            let (q_ll, q_lh) = (st.q(r, u, v), st.q(r, u, v + 1));
            let (q_hl, q_hh) = (st.q(r, u + 1, v), st.q(r, u + 1, v + 1));
            let terms = [
                (chi_col(u), st.psi[v] / q_ll - st.psi[v + 1] / q_lh),
                (chi_col(u + 1), st.psi[v + 1] / q_hh - st.psi[v] / q_hl),
                (psi_col(v), st.chi[u] / q_ll - st.chi[u + 1] / q_hl),
                (psi_col(v + 1), st.chi[u + 1] / q_hh - st.chi[u] / q_lh),
            ];
            for (col, val) in terms {
                let Some(c) = col else { continue };
                jac[u][c] += val;
                if v + 1 < ell {
                    jac[k + v][c] += val;
                }
            }
        }
    }
    jac
}

/// Gaussian elimination with partial pivoting; `None` if singular.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for c in row + 1..n {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn newton_solve(
    spec: &RegionSpec,
    st: &mut ChiState,
    r: f64,
    tol: f64,
    max_iter: usize,
) -> bool {
    let (k, ell) = (spec.k(), spec.ell());
    for _ in 0..max_iter {
        let Some(res) = continuation_residual(spec, st, r) else {
            return false;
        };
        let worst = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !worst.is_finite() || worst > 1e6 {
            return false;
        }
        if worst < tol {
            return true;
        }
        let jac = continuation_jacobian(spec, st, r);
        let Some(delta) = solve_dense(jac, res.iter().map(|v| -v).collect()) else {
            return false;
        };
        for i in 1..k {
            st.chi[i] += delta[i - 1];
        }
        for j in 1..=ell {
            st.psi[j] += delta[k - 1 + j - 1];
        }
    }
    continuation_residual(spec, st, r)
        .map(|res| res.iter().all(|v| v.abs() < tol))
        .unwrap_or(false)
}

/// Numerical continuation in the rate: start from the scaling solution at
/// `r = 0` and walk to `r_target` in small steps, re-solving the breakpoint
/// equations at each step in the affine frame.
pub fn solve_continuation(
    spec: &RegionSpec,
    r_target: f64,
    dr: f64,
    tol: f64,
) -> Result<BoundaryValues> {
    solve_continuation_opts(
        spec,
        r_target,
        &ContinuationOptions {
            dr,
            tol,
            ..Default::default()
        },
    )
}

pub fn solve_continuation_opts(
    spec: &RegionSpec,
    r_target: f64,
    opts: &ContinuationOptions,
) -> Result<BoundaryValues> {
    spec.validate()?;
    if !region::is_convex(&spec.support)? {
        return Err(Error::InvalidSpec(
            "continuation requires a convex support array".into(),
        ));
    }
    let k = spec.k();
    let scaling = ipf::solve_r0(spec, opts.tol.max(1e-14), ipf::DEFAULT_MAX_ITER)?;
    let total: f64 = scaling.lambda.iter().sum();
    let mut st = ChiState {
        chi: std::iter::once(0.0)
            .chain(scaling.lambda.iter().scan(0.0, |acc, l| {
                *acc += l / total;
                Some(*acc)
            }))
            .collect(),
        psi: std::iter::once(0.0)
            .chain(scaling.mu.iter().scan(0.0, |acc, m| {
                *acc += m * total;
                Some(*acc)
            }))
            .collect(),
    };
    st.chi[k] = 1.0; // exact endpoint regardless of rounding in the prefix sum

    let chi_affine = |st: &ChiState, r: f64| -> BoundaryValues {
        let phi = if r == 0.0 {
            st.chi.iter().map(|&c| ProjectiveValue::finite(c)).collect()
        } else {
            st.chi
                .iter()
                .map(|&c| ProjectiveValue::new(1.0, r * c))
                .collect()
        };
        BoundaryValues {
            phi,
            psi: st.psi.iter().map(|&p| ProjectiveValue::finite(p)).collect(),
            r,
            gauge: GaugeRecord {
                kind: GaugeKind::ChiAffine,
                pins: vec![],
            },
        }
    };

    if r_target == 0.0 {
        return Ok(chi_affine(&st, 0.0));
    }

    let sign = r_target.signum();
    let mut r_cur = 0.0;
    let mut dr_cur = opts.dr.abs();
    let mut halvings_left = opts.max_halvings;
    while (r_target - r_cur).abs() > 0.0 {
        if let Some(cancel) = &opts.cancel {
            if cancel.load(Ordering::Relaxed) {
                return Err(Error::StepBlowup {
                    last_good_r: r_cur,
                    target_r: r_target,
                    reason: "cancelled".into(),
                });
            }
        }
        let step = dr_cur.min((r_target - r_cur).abs());
        let landing = r_cur + sign * step;
        let r_next = if (landing - r_target).abs() < 1e-12 * r_target.abs().max(1.0) {
            r_target
        } else {
            landing
        };
        let mut trial = ChiState {
            chi: st.chi.clone(),
            psi: st.psi.clone(),
        };
        if newton_solve(spec, &mut trial, r_next, opts.tol, opts.max_newton) {
            st = trial;
            r_cur = r_next;
            if dr_cur < opts.dr.abs() {
                dr_cur = (dr_cur * 2.0).min(opts.dr.abs());
            }
        } else {
            if halvings_left == 0 {
                return Err(Error::StepBlowup {
                    last_good_r: r_cur,
                    target_r: r_target,
                    reason: "Newton corrector failed at the minimal step".into(),
                });
            }
            halvings_left -= 1;
            dr_cur *= 0.5;
        }
    }
    Ok(chi_affine(&st, r_target))
}

// ---------------------------------------------------------------------------
// The two non-simple convex 3x3 arrays
// ---------------------------------------------------------------------------

/// Hole layout of the canonical non-simple 3x3 array: support everywhere
/// except the top-left and bottom-right corner cells.
fn nonsimple_3x3_kind(support: &SupportGrid) -> Option<bool> {
    if support.k() != 3 || support.ell() != 3 {
        return None;
    }
    let holes: Vec<(usize, usize)> = (0..3)
        .flat_map(|u| (0..3).map(move |v| (u, v)))
        .filter(|&(u, v)| !support.get(u, v))
        .collect();
    match holes.as_slice() {
        [(0, 2), (2, 0)] => Some(true),  // canonical: analyzed directly
        [(0, 0), (2, 2)] => Some(false), // mirror image, solved at -r
        _ => None,
    }
}

/// Explicit solver for the two non-simple convex 3x3 arrays: a quadratic for
/// the top-left hole cross-ratio, a linear relation for the bottom-right
/// one, then back-substitution in the gauge `phi(0) = 0`, `phi(1) = 1`,
/// `psi(0) = inf`. The root is selected by strict positivity of all seven
/// rectangle masses.
pub fn solve_3x3_nonsimple(spec: &RegionSpec) -> Result<BoundaryValues> {
    spec.validate()?;
    if spec.r == 0.0 {
        return Err(Error::RZero);
    }
    match nonsimple_3x3_kind(&spec.support) {
        Some(true) => solve_3x3_canonical(spec),
        Some(false) => {
            let mirrored = RegionSpec::new(
                spec.x.iter().rev().map(|x| 1.0 - x).collect(),
                spec.y.clone(),
                SupportGrid::from_ints(&[
                    (0..3).map(|v| u8::from(spec.support.get(2, v))).collect(),
                    (0..3).map(|v| u8::from(spec.support.get(1, v))).collect(),
                    (0..3).map(|v| u8::from(spec.support.get(0, v))).collect(),
                ])?,
                -spec.r,
            )?;
            let bv = solve_3x3_canonical(&mirrored)?;
            // Reversing phi relabels the pinned indices: phi now runs 1 -> 0.
            Ok(BoundaryValues {
                phi: bv.phi.iter().rev().copied().collect(),
                psi: bv.psi,
                r: spec.r,
                gauge: GaugeRecord {
                    kind: GaugeKind::ThreePoint,
                    pins: vec![
                        GaugePin {
                            func: FuncTag::Phi,
                            index: 0,
                            value: ProjectiveValue::finite(1.0),
                        },
                        GaugePin {
                            func: FuncTag::Phi,
                            index: 3,
                            value: ProjectiveValue::finite(0.0),
                        },
                        GaugePin {
                            func: FuncTag::Psi,
                            index: 0,
                            value: ProjectiveValue::infinity(),
                        },
                    ],
                },
            })
        }
        None => Err(Error::InvalidSpec(
            "not one of the two non-simple convex 3x3 arrays".into(),
        )),
    }
}

/// The branch polynomial for the canonical array: coefficients of
/// `A X^2 + B X + C = 0` in the top-left hole cross-ratio `X`.
///
/// Written in terms of `1 - exp(-r t)` so the coefficients stay accurate as
/// `r -> 0`, where all three shrink like `r`.
pub fn quadratic_coefficients(spec: &RegionSpec) -> (f64, f64, f64) {
    let r = spec.r;
    let (a1, a2) = (spec.x[1], spec.x[2]);
    let (b1, b2) = (spec.y[1], spec.y[2]);
    let em = |t: f64| -(-r * t).exp_m1(); // 1 - exp(-r t)
    let a = em(b2 - a1);
    let b = em(1.0 - b1) + em(a2) - em(1.0 - a1) - em(b2) - em(a2 - a1 + b2 - b1);
    let c = em(1.0 - a1 + a2 - b1) + em(b2 + a2 - b1) + em(1.0)
        - em(1.0 - b1)
        - em(a2)
        - em(1.0 + a2 - b1);
    (a, b, c)
}

fn solve_3x3_canonical(spec: &RegionSpec) -> Result<BoundaryValues> {
    let r = spec.r;
    let (a1, a2) = (spec.x[1], spec.x[2]);
    let (b1, b2) = (spec.y[1], spec.y[2]);
    let ex = |t: f64| (-r * t).exp();
    let (qa, qb, qc) = quadratic_coefficients(spec);
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return Err(Error::AmbiguousBranch(format!(
            "negative discriminant {disc:.3e}"
        )));
    }
    let sq = disc.sqrt();
    let roots = [(-qb + sq) / (2.0 * qa), (-qb - sq) / (2.0 * qa)];

    let em = |t: f64| -(-r * t).exp_m1();
    let build = |x_cr: f64| -> Option<BoundaryValues> {
        // Linear relation for the other hole cross-ratio, in the same
        // cancellation-free form as the quadratic.
        let y_cr = (em(1.0 - b1) + em(a2) - em(1.0 - a1) - em(b2) + x_cr * em(b2 - a1))
            / em(a2 - b1);
        // Back-substitution in the gauge phi(0)=0, phi(1)=1, psi(0)=inf.
        let psi1 = 1.0 / (1.0 - ex(b1) / y_cr);
        let psi2 = 1.0 / (1.0 - ex(b2) / y_cr);
        let psi3 = 1.0 / (1.0 - ex(1.0) / (x_cr * y_cr));
        let phi1 = (1.0 - ex(a1) / x_cr) / (1.0 - ex(1.0) / (x_cr * y_cr));
        let phi2 = (1.0 - ex(a2) / x_cr) / (1.0 - ex(1.0) / (x_cr * y_cr));
        let vals = [psi1, psi2, psi3, phi1, phi2];
        if vals.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(BoundaryValues {
            phi: vec![
                ProjectiveValue::finite(0.0),
                ProjectiveValue::finite(phi1),
                ProjectiveValue::finite(phi2),
                ProjectiveValue::finite(1.0),
            ],
            psi: vec![
                ProjectiveValue::infinity(),
                ProjectiveValue::finite(psi1),
                ProjectiveValue::finite(psi2),
                ProjectiveValue::finite(psi3),
            ],
            r,
            gauge: GaugeRecord {
                kind: GaugeKind::ThreePoint,
                pins: vec![
                    GaugePin {
                        func: FuncTag::Phi,
                        index: 0,
                        value: ProjectiveValue::finite(0.0),
                    },
                    GaugePin {
                        func: FuncTag::Phi,
                        index: 3,
                        value: ProjectiveValue::finite(1.0),
                    },
                    GaugePin {
                        func: FuncTag::Psi,
                        index: 0,
                        value: ProjectiveValue::infinity(),
                    },
                ],
            },
        })
    };

    const MASS_MARGIN: f64 = 1e-12;
    let passes = |bv: &BoundaryValues| -> bool {
        (0..3).all(|u| {
            (0..3).all(|v| {
                !spec.support.get(u, v) || cell_mass(bv, u, v) > MASS_MARGIN
            })
        })
    };
    let candidates: Vec<(f64, BoundaryValues)> = roots
        .iter()
        .filter_map(|&x| build(x).map(|bv| (x, bv)))
        .filter(|(_, bv)| passes(bv))
        .collect();
    match candidates.len() {
        1 => Ok(candidates.into_iter().next().unwrap().1),
        n => Err(Error::AmbiguousBranch(format!(
            "{n} of 2 roots give strictly positive masses at r = {r}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(cols: &[&[u8]]) -> SupportGrid {
        SupportGrid::from_ints(&cols.iter().map(|c| c.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn staircase(a: f64, b: f64, r: f64) -> RegionSpec {
        RegionSpec::new(
            vec![0.0, a, 1.0],
            vec![0.0, b, 1.0],
            grid(&[&[1, 1], &[1, 0]]),
            r,
        )
        .unwrap()
    }

    /// Closed-form staircase values in the print gauge phi(0)=0, psi(0)=inf,
    /// psi(b)=1.
    fn staircase_closed_form(a: f64, b: f64, r: f64) -> (f64, f64, f64) {
        let e = |t: f64| -(-(r * t)).exp_m1(); // 1 - exp(-r t)
        (e(a + b - 1.0), e(b), e(a + b - 1.0) / e(a))
    }

    #[test]
    fn dwbc_base_case() {
        let spec = RegionSpec::new(
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            grid(&[&[1]]),
            2.0,
        )
        .unwrap();
        let bv = solve_simple(&spec).unwrap();
        assert!((bv.phi[1].to_f64() - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        let res = residual(&spec, &bv);
        assert!(res.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn staircase_matches_print_gauge_after_alignment() {
        for r in [-5.0, -1.0, 0.1, 1.0, 5.0] {
            let spec = staircase(0.5, 0.75, r);
            let bv = solve_simple(&spec).unwrap();
            let aligned = align_to(
                &bv,
                &[
                    (FuncTag::Phi, 0, ProjectiveValue::finite(0.0)),
                    (FuncTag::Psi, 0, ProjectiveValue::infinity()),
                    (FuncTag::Psi, 1, ProjectiveValue::finite(1.0)),
                ],
            )
            .unwrap();
            let (phi_a, phi_1, psi_1) = staircase_closed_form(0.5, 0.75, r);
            assert!(
                (aligned.phi[1].to_f64() - phi_a).abs() < 1e-12,
                "phi(a) at r={r}: {} vs {}",
                aligned.phi[1].to_f64(),
                phi_a
            );
            assert!((aligned.phi[2].to_f64() - phi_1).abs() < 1e-12);
            assert!((aligned.psi[2].to_f64() - psi_1).abs() < 1e-12);
        }
    }

    #[test]
    fn staircase_masses_are_rate_independent() {
        // Tree-structured support: masses are pinned by the marginals alone.
        for r in [-3.0, 0.5, 4.0] {
            let spec = staircase(0.5, 0.75, r);
            let bv = solve_simple(&spec).unwrap();
            assert!((cell_mass(&bv, 0, 0) - 0.25).abs() < 1e-12);
            assert!((cell_mass(&bv, 1, 0) - 0.5).abs() < 1e-12);
            assert!((cell_mass(&bv, 0, 1) - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_detects_perturbation() {
        let spec = staircase(0.5, 0.75, 1.0);
        let mut bv = solve_simple(&spec).unwrap();
        assert!(residual(&spec, &bv).iter().all(|v| v.abs() < 1e-12));
        bv.phi[1] = ProjectiveValue::finite(bv.phi[1].to_f64() + 1e-3);
        assert!(residual(&spec, &bv).iter().any(|v| v.abs() > 1e-5));
    }

    #[test]
    fn moebius_gauge_invariance_of_residuals() {
        let spec = staircase(0.4, 0.9, 2.0);
        let bv = solve_simple(&spec).unwrap();
        let m = Moebius {
            a: 1.4,
            b: 0.3,
            c: -0.2,
            d: 2.1,
        };
        let moved = bv.transformed(
            &m,
            GaugeRecord {
                kind: GaugeKind::ThreePoint,
                pins: vec![],
            },
        );
        let r0 = residual(&spec, &bv);
        let r1 = residual(&spec, &moved);
        for (a, b) in r0.iter().zip(r1.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn simple_solver_is_deterministic() {
        let spec = staircase(0.5, 0.75, 1.3);
        let a = solve_simple(&spec).unwrap();
        let b = solve_simple(&spec).unwrap();
        for (p, q) in a.phi.iter().zip(b.phi.iter()) {
            assert_eq!(p.num.to_bits(), q.num.to_bits());
            assert_eq!(p.den.to_bits(), q.den.to_bits());
        }
    }

    #[test]
    fn product_redundancy_of_equations() {
        // Sum of the k x-strip residuals equals the sum of the ell y-strip
        // residuals (log form of "the two aggregated products agree").
        let spec = RegionSpec::new(
            vec![0.0, 0.2, 0.55, 1.0],
            vec![0.0, 0.35, 0.7, 1.0],
            grid(&[&[0, 0, 1], &[1, 1, 1], &[1, 1, 0]]),
            1.7,
        )
        .unwrap();
        let bv = solve_simple(&spec).unwrap();
        let res = residual(&spec, &bv);
        let k = spec.k();
        let sx: f64 = res[..k].iter().sum();
        let sy: f64 = res[k..].iter().sum();
        assert!((sx - sy).abs() < 1e-12);
    }

    #[test]
    fn continuation_zero_steps_returns_scaling_lift() {
        let spec = staircase(0.5, 0.75, 0.0);
        let bv = solve_continuation(&spec, 0.0, 1e-3, 1e-12).unwrap();
        assert_eq!(bv.r, 0.0);
        // chi increments proportional to the scaling lambdas, normalized to
        // chi(x_k) = 1.
        let lam0 = bv.phi[1].to_f64() - bv.phi[0].to_f64();
        let lam1 = bv.phi[2].to_f64() - bv.phi[1].to_f64();
        assert!((lam0 + lam1 - 1.0).abs() < 1e-12);
        let res = residual(&spec, &bv);
        assert!(res.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn continuation_matches_simple_after_alignment() {
        for r in [-2.0, -1.0, 1.0, 2.0] {
            let spec = staircase(0.5, 0.75, r);
            let cont = solve_continuation(&spec, r, 1e-2, 1e-13).unwrap();
            let simp = solve_simple(&spec).unwrap();
            let anchors = [
                (FuncTag::Phi, 0, simp.phi[0]),
                (FuncTag::Psi, 0, simp.psi[0]),
                (FuncTag::Psi, 1, simp.psi[1]),
            ];
            let aligned = align_to(&cont, &anchors).unwrap();
            for (p, q) in aligned.phi.iter().zip(simp.phi.iter()) {
                assert!(
                    p.det(q).abs() < 1e-8,
                    "r={r}: {:?} vs {:?}",
                    p,
                    q
                );
            }
            for (p, q) in aligned.psi.iter().zip(simp.psi.iter()) {
                assert!(p.det(q).abs() < 1e-8, "r={r}: {:?} vs {:?}", p, q);
            }
        }
    }

    #[test]
    fn quadratic_3x3_small_rate_root() {
        let spec = RegionSpec::new(
            vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
            vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
            grid(&[&[1, 1, 0], &[1, 1, 1], &[0, 1, 1]]),
            1e-4,
        )
        .unwrap();
        let (qa, qb, qc) = quadratic_coefficients(&spec);
        // Numerically solve and rescale: X = 1 + r X0.
        let disc = (qb * qb - 4.0 * qa * qc).sqrt();
        let x = (-qb + disc) / (2.0 * qa);
        let x0 = (x - 1.0) / spec.r;
        let expected = (5.0f64.sqrt() - 1.0) / 6.0;
        assert!(
            (x0 - expected).abs() < 1e-4,
            "X0 = {x0}, expected {expected}"
        );
        let bv = solve_3x3_nonsimple(&spec).unwrap();
        assert!(residual(&spec, &bv).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn quadratic_3x3_solves_both_patterns() {
        for r in [1.0, -1.0] {
            for cols in [
                // canonical: holes at top-left and bottom-right corners
                [&[1u8, 1, 0][..], &[1, 1, 1][..], &[0, 1, 1][..]],
                // mirror: holes at bottom-left and top-right
                [&[0, 1, 1][..], &[1, 1, 1][..], &[1, 1, 0][..]],
            ] {
                let spec = RegionSpec::new(
                    vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
                    vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
                    grid(&cols),
                    r,
                )
                .unwrap();
                let bv = solve_3x3_nonsimple(&spec).unwrap();
                let res = residual(&spec, &bv);
                assert!(
                    res.iter().all(|v| v.abs() < 1e-10),
                    "r={r}, res={res:?}"
                );
                for u in 0..3 {
                    for v in 0..3 {
                        if spec.support.get(u, v) {
                            assert!(cell_mass(&bv, u, v) > 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn quadratic_3x3_equal_spacing_symmetry() {
        // On the equally spaced grid the two hole cross-ratios coincide.
        let spec = RegionSpec::new(
            vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
            vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
            grid(&[&[1, 1, 0], &[1, 1, 1], &[0, 1, 1]]),
            1.0,
        )
        .unwrap();
        let bv = solve_3x3_nonsimple(&spec).unwrap();
        // Recover X and Y from the solved values as the hole cross-ratios.
        let x_cr = cell_cross_ratio(bv.phi[0], bv.phi[1], bv.psi[2], bv.psi[3]);
        let y_cr = cell_cross_ratio(bv.phi[2], bv.phi[3], bv.psi[0], bv.psi[1]);
        assert!((x_cr - y_cr).abs() < 1e-12, "X={x_cr}, Y={y_cr}");
    }
}
