//! The limit-shape density as a closed-form object: per-rectangle rational
//! coefficients in `exp(r x)`, `exp(r y)`, with exact masses, marginals, and
//! height evaluation. No quadrature anywhere in this module.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryValues, GaugeKind};
use crate::error::{Error, Result};
use crate::ipf::ScalingSolution;
use crate::proj::{Moebius, ProjectiveValue};
use crate::region::{self, RegionSpec};

/// Which side of a breakpoint a limit is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Minus,
    Plus,
}

/// Coefficients of the rational density on one rectangle:
///
/// ```text
/// g(x, y) = -(a d - b c) r e^{r(x+y)} / (a + b e^{ry} + c e^{rx} + d e^{r(x+y)})^2
/// ```
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RectCoeffs {
    pub u: usize,
    pub v: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl RectCoeffs {
    fn denom(&self, r: f64, x: f64, y: f64) -> f64 {
        self.a + self.b * (r * y).exp() + self.c * (r * x).exp() + self.d * (r * (x + y)).exp()
    }

    fn eval(&self, r: f64, x: f64, y: f64) -> f64 {
        let n = self.denom(r, x, y);
        -(self.a * self.d - self.b * self.c) * r * (r * (x + y)).exp() / (n * n)
    }

    /// Exact mass of a sub-box, as an alternating sum of `ln |denominator|`
    /// at the four corners.
    fn mass(&self, r: f64, x1: f64, x2: f64, y1: f64, y2: f64) -> f64 {
        if x1 == x2 || y1 == y2 {
            return 0.0;
        }
        -(self.denom(r, x2, y2).abs().ln() - self.denom(r, x1, y2).abs().ln()
            - self.denom(r, x2, y1).abs().ln()
            + self.denom(r, x1, y1).abs().ln())
            / r
    }

    /// Exact `int_{y1}^{y2} g(x, y) dy` at fixed `x`.
    fn y_integral(&self, r: f64, x: f64, y1: f64, y2: f64) -> f64 {
        let ex = (r * x).exp();
        let dln = |y: f64| ex * (self.c + self.d * (r * y).exp()) / self.denom(r, x, y);
        -(dln(y2) - dln(y1))
    }

    /// Exact `int_{x1}^{x2} g(x, y) dx` at fixed `y`.
    fn x_integral(&self, r: f64, y: f64, x1: f64, x2: f64) -> f64 {
        let ey = (r * y).exp();
        let dln = |x: f64| ey * (self.b + self.d * (r * x).exp()) / self.denom(r, x, y);
        -(dln(x2) - dln(x1))
    }
}

/// Density restricted to one rectangle of the partition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum RectDensity {
    /// Off the support.
    Zero,
    /// Zero-rate case: constant density.
    Constant(f64),
    Rational(RectCoeffs),
}

/// Which solver produced a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSource {
    Ipf,
    Simple,
    Continuation,
    Quadratic3x3,
    Oracle,
}

/// The limit-shape density over the whole square, evaluable in closed form
/// everywhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityField {
    pub spec: RegionSpec,
    pub source: FieldSource,
    /// One entry per rectangle, indexed `u * ell + v`.
    pub rects: Vec<RectDensity>,
}

/// Probe resolution per rectangle for pole/positivity screening.
const PROBE: usize = 32;

fn locate(breaks: &[f64], t: f64, side: Side) -> usize {
    let cells = breaks.len() - 1;
    let idx = match side {
        Side::Minus => breaks.partition_point(|&b| b < t),
        Side::Plus => breaks.partition_point(|&b| b <= t),
    };
    idx.saturating_sub(1).min(cells - 1)
}

/// Interior extension: the Moebius map in `E = exp(r (t - lo))` determined
/// by `M(0) = at_zero`, `M(1) = at_anchor`, `M(inf) = at_inf`, re-expressed
/// in the global variable `exp(r t)`.
fn interval_map(
    at_zero: ProjectiveValue,
    at_anchor: ProjectiveValue,
    at_inf: ProjectiveValue,
    r: f64,
    lo: f64,
) -> Result<Moebius> {
    let m = Moebius::from_values_at_zero_one_inf(at_zero, at_anchor, at_inf)?;
    let s = (-r * lo).exp();
    Ok(Moebius {
        a: m.a * s,
        b: m.b,
        c: m.c * s,
        d: m.d,
    }
    .normalized())
}

fn combine(u: usize, v: usize, phi: &Moebius, psi: &Moebius) -> RectCoeffs {
    let d = phi.a * psi.c - psi.a * phi.c;
    let c = phi.a * psi.d - psi.b * phi.c;
    let b = phi.b * psi.c - psi.a * phi.d;
    let a = phi.b * psi.d - psi.b * phi.d;
    let s = a.abs().max(b.abs()).max(c.abs()).max(d.abs());
    RectCoeffs {
        u,
        v,
        a: a / s,
        b: b / s,
        c: c / s,
        d: d / s,
    }
}

/// Assemble the closed-form field from solved boundary values.
///
/// For each strip the interior function is the Moebius map of the local
/// exponential pinned by the strip's support edges and its left anchor
/// value; convexity makes the strip products telescope to exactly this
/// three-point form.
pub fn build_field(
    spec: &RegionSpec,
    bv: &BoundaryValues,
    source: FieldSource,
) -> Result<DensityField> {
    spec.validate()?;
    let (k, ell) = (spec.k(), spec.ell());
    if bv.phi.len() != k + 1 || bv.psi.len() != ell + 1 {
        return Err(Error::InvalidSpec(
            "boundary values do not match the region shape".into(),
        ));
    }
    if bv.r == 0.0 {
        if bv.gauge.kind != GaugeKind::ChiAffine {
            return Err(Error::InvalidSpec(
                "zero-rate fields require chi-affine boundary values".into(),
            ));
        }
        let mut rects = vec![RectDensity::Zero; k * ell];
        for u in 0..k {
            let lam = bv.phi[u + 1].to_f64() - bv.phi[u].to_f64();
            for v in 0..ell {
                if spec.support.get(u, v) {
                    let mu = bv.psi[v + 1].to_f64() - bv.psi[v].to_f64();
                    rects[u * ell + v] = RectDensity::Constant(
                        lam * mu / (spec.row_width(u) * spec.col_height(v)),
                    );
                }
            }
        }
        return Ok(DensityField {
            spec: spec.clone(),
            source,
            rects,
        });
    }
    if !region::is_convex(&spec.support)? {
        return Err(Error::InvalidSpec(
            "field assembly requires a convex support array".into(),
        ));
    }
    let r = bv.r;
    let mut phi_maps = Vec::with_capacity(k);
    for u in 0..k {
        let sup = spec.support.column_support(u);
        let (vlo, vhi) = (sup[0], *sup.last().unwrap());
        phi_maps.push(interval_map(
            bv.psi[vlo],
            bv.phi[u],
            bv.psi[vhi + 1],
            r,
            spec.x[u],
        )?);
    }
    let mut psi_maps = Vec::with_capacity(ell);
    for v in 0..ell {
        let sup = spec.support.row_support(v);
        let (ulo, uhi) = (sup[0], *sup.last().unwrap());
        psi_maps.push(interval_map(
            bv.phi[ulo],
            bv.psi[v],
            bv.phi[uhi + 1],
            r,
            spec.y[v],
        )?);
    }
    let mut rects = vec![RectDensity::Zero; k * ell];
    for u in 0..k {
        for v in 0..ell {
            if !spec.support.get(u, v) {
                continue;
            }
            let rc = combine(u, v, &phi_maps[u], &psi_maps[v]);
            screen_rectangle(spec, r, &rc)?;
            rects[u * ell + v] = RectDensity::Rational(rc);
        }
    }
    Ok(DensityField {
        spec: spec.clone(),
        source,
        rects,
    })
}

/// Pole and sign screening on a probe grid plus corners.
fn screen_rectangle(spec: &RegionSpec, r: f64, rc: &RectCoeffs) -> Result<()> {
    let (x_lo, x_hi) = (spec.x[rc.u], spec.x[rc.u + 1]);
    let (y_lo, y_hi) = (spec.y[rc.v], spec.y[rc.v + 1]);
    let mut sign = 0.0f64;
    for i in 0..=PROBE {
        let x = x_lo + (x_hi - x_lo) * i as f64 / PROBE as f64;
        for j in 0..=PROBE {
            let y = y_lo + (y_hi - y_lo) * j as f64 / PROBE as f64;
            let n = rc.denom(r, x, y);
            let scale = rc.a.abs()
                + (rc.b * (r * y).exp()).abs()
                + (rc.c * (r * x).exp()).abs()
                + (rc.d * (r * (x + y)).exp()).abs();
            if !n.is_finite() || n.abs() <= 1e-12 * scale {
                return Err(Error::PoleOnRectangle { u: rc.u, v: rc.v });
            }
            if sign == 0.0 {
                sign = n.signum();
            } else if n.signum() != sign {
                return Err(Error::PoleOnRectangle { u: rc.u, v: rc.v });
            }
            if rc.eval(r, x, y) < 0.0 {
                return Err(Error::PoleOnRectangle { u: rc.u, v: rc.v });
            }
        }
    }
    Ok(())
}

impl DensityField {
    /// Zero-rate field straight from a scaling solution.
    pub fn from_scaling(spec: &RegionSpec, sol: &ScalingSolution) -> Result<Self> {
        spec.validate()?;
        let (k, ell) = (spec.k(), spec.ell());
        let mut rects = vec![RectDensity::Zero; k * ell];
        for u in 0..k {
            for v in 0..ell {
                if spec.support.get(u, v) {
                    rects[u * ell + v] = RectDensity::Constant(sol.density(spec, u, v));
                }
            }
        }
        Ok(Self {
            spec: spec.clone(),
            source: FieldSource::Ipf,
            rects,
        })
    }

    pub fn r(&self) -> f64 {
        self.spec.r
    }

    pub fn rect(&self, u: usize, v: usize) -> &RectDensity {
        &self.rects[u * self.spec.ell() + v]
    }

    /// Density at `(x, y)`; at breakpoint lines the lower-left limit.
    pub fn eval_g(&self, x: f64, y: f64) -> f64 {
        self.eval_g_limit(x, y, Side::Minus, Side::Minus)
    }

    /// One-sided limit of the density: `Side::Minus` approaches a
    /// breakpoint from below/left, `Side::Plus` from above/right. Away from
    /// breakpoints the side does not matter.
    pub fn eval_g_limit(&self, x: f64, y: f64, sx: Side, sy: Side) -> f64 {
        let u = locate(&self.spec.x, x, sx);
        let v = locate(&self.spec.y, y, sy);
        match self.rect(u, v) {
            RectDensity::Zero => 0.0,
            RectDensity::Constant(c) => *c,
            RectDensity::Rational(rc) => rc.eval(self.r(), x, y),
        }
    }

    /// Exact mass of a sub-box of rectangle `(u, v)`.
    pub fn rect_mass(&self, u: usize, v: usize, x1: f64, x2: f64, y1: f64, y2: f64) -> Result<f64> {
        let eps = 1e-12;
        if x1 > x2
            || y1 > y2
            || x1 < self.spec.x[u] - eps
            || x2 > self.spec.x[u + 1] + eps
            || y1 < self.spec.y[v] - eps
            || y2 > self.spec.y[v + 1] + eps
        {
            return Err(Error::OutOfRectangle {
                u,
                v,
                x1,
                x2,
                y1,
                y2,
            });
        }
        Ok(match self.rect(u, v) {
            RectDensity::Zero => 0.0,
            RectDensity::Constant(c) => c * (x2 - x1) * (y2 - y1),
            RectDensity::Rational(rc) => rc.mass(self.r(), x1, x2, y1, y2),
        })
    }

    /// Exact mass of an arbitrary box, summed over clipped rectangles.
    pub fn box_mass(&self, x1: f64, x2: f64, y1: f64, y2: f64) -> f64 {
        let (k, ell) = (self.spec.k(), self.spec.ell());
        let mut total = 0.0;
        for u in 0..k {
            let cx1 = x1.max(self.spec.x[u]);
            let cx2 = x2.min(self.spec.x[u + 1]);
            if cx1 >= cx2 {
                continue;
            }
            for v in 0..ell {
                let cy1 = y1.max(self.spec.y[v]);
                let cy2 = y2.min(self.spec.y[v + 1]);
                if cy1 >= cy2 {
                    continue;
                }
                total += self
                    .rect_mass(u, v, cx1, cx2, cy1, cy2)
                    .expect("clipped box is inside its rectangle");
            }
        }
        total
    }

    /// Height function `h(x, y)`: mass of `[x, 1] x [0, y]`, exact.
    pub fn eval_height(&self, x: f64, y: f64) -> f64 {
        self.box_mass(x, 1.0, 0.0, y)
    }

    /// Exact `int_0^1 g(x, y) dy` at fixed `x` (vertical marginal), taking
    /// the x-strip on the given side of a breakpoint.
    pub fn marginal_x(&self, x: f64, sx: Side) -> f64 {
        let u = locate(&self.spec.x, x, sx);
        let mut total = 0.0;
        for v in 0..self.spec.ell() {
            total += match self.rect(u, v) {
                RectDensity::Zero => 0.0,
                RectDensity::Constant(c) => c * self.spec.col_height(v),
                RectDensity::Rational(rc) => {
                    rc.y_integral(self.r(), x, self.spec.y[v], self.spec.y[v + 1])
                }
            };
        }
        total
    }

    /// Exact `int_0^1 g(x, y) dx` at fixed `y` (horizontal marginal).
    pub fn marginal_y(&self, y: f64, sy: Side) -> f64 {
        let v = locate(&self.spec.y, y, sy);
        let mut total = 0.0;
        for u in 0..self.spec.k() {
            total += match self.rect(u, v) {
                RectDensity::Zero => 0.0,
                RectDensity::Constant(c) => c * self.spec.row_width(u),
                RectDensity::Rational(rc) => {
                    rc.x_integral(self.r(), y, self.spec.x[u], self.spec.x[u + 1])
                }
            };
        }
        total
    }

    /// Sample onto an `n x n` grid: density at cell centers, height at cell
    /// corners.
    pub fn grid(&self, n: usize) -> DensityGrid {
        assert!(n >= 2, "grid resolution must be at least 2");
        let nf = n as f64;
        let g_values: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (j, i) = (idx / n, idx % n);
                self.eval_g((i as f64 + 0.5) / nf, (j as f64 + 0.5) / nf)
            })
            .collect();
        let h_values: Vec<f64> = (0..(n + 1) * (n + 1))
            .into_par_iter()
            .map(|idx| {
                let (j, i) = (idx / (n + 1), idx % (n + 1));
                self.eval_height(i as f64 / nf, j as f64 / nf)
            })
            .collect();
        DensityGrid {
            n,
            g_values,
            h_values,
            r: self.r(),
        }
    }
}

/// Sampled field: density at the `n x n` cell centers, height at the
/// `(n+1) x (n+1)` cell corners. Index layout is `j * width + i` with `i`
/// along x.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityGrid {
    pub n: usize,
    pub g_values: Vec<f64>,
    pub h_values: Vec<f64>,
    pub r: f64,
}

impl DensityGrid {
    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.g_values[j * self.n + i]
    }

    pub fn h(&self, i: usize, j: usize) -> f64 {
        self.h_values[j * (self.n + 1) + i]
    }

    /// CSV with header `x,y,g,h`: one row per grid corner, row-major from
    /// the bottom row up, 17 significant digits. `g` carries the lower-left
    /// limit at each corner (computed from `field`), `h` the exact height.
    pub fn to_csv(&self, field: &DensityField) -> String {
        let n = self.n;
        let mut out = String::with_capacity((n + 1) * (n + 1) * 80);
        out.push_str("x,y,g,h\n");
        for j in 0..=n {
            let y = j as f64 / n as f64;
            for i in 0..=n {
                let x = i as f64 / n as f64;
                let g = field.eval_g_limit(x, y, Side::Minus, Side::Minus);
                out.push_str(&format!(
                    "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                    x,
                    y,
                    g,
                    self.h(i, j)
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{solve_continuation, solve_simple};
    use crate::ipf;
    use crate::region::SupportGrid;

    fn staircase(a: f64, b: f64, r: f64) -> RegionSpec {
        RegionSpec::new(
            vec![0.0, a, 1.0],
            vec![0.0, b, 1.0],
            SupportGrid::from_ints(&[vec![1, 1], vec![1, 0]]).unwrap(),
            r,
        )
        .unwrap()
    }

    fn staircase_field(a: f64, b: f64, r: f64) -> DensityField {
        let spec = staircase(a, b, r);
        let bv = solve_simple(&spec).unwrap();
        build_field(&spec, &bv, FieldSource::Simple).unwrap()
    }

    #[test]
    fn uniform_field_is_one() {
        let spec = RegionSpec::new(
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            SupportGrid::from_ints(&[vec![1]]).unwrap(),
            0.0,
        )
        .unwrap();
        let sol = ipf::solve_r0(&spec, 1e-13, 10).unwrap();
        let f = DensityField::from_scaling(&spec, &sol).unwrap();
        assert_eq!(f.eval_g(0.3, 0.8), 1.0);
        assert!((f.eval_height(0.25, 0.5) - 0.5 * 0.75).abs() < 1e-14);
        let grid = f.grid(2);
        assert!(grid.g_values.iter().all(|&g| (g - 1.0).abs() < 1e-14));
    }

    #[test]
    fn staircase_psi_branch_matches_print() {
        // On the lower band the second parametrizing function is
        // (1 - e^{-rb}) / (1 - e^{-ry}); check g against a direct evaluation
        // of the two printed branch families.
        let (a, b, r) = (0.5, 0.75, 1.0);
        let f = staircase_field(a, b, r);
        let em = |t: f64| -(-(r * t)).exp_m1();
        let phi = |x: f64| {
            if x <= a {
                em(a + b - 1.0) / em(a) * em(x)
            } else {
                em(x + b - 1.0)
            }
        };
        let dphi = |x: f64| {
            if x <= a {
                em(a + b - 1.0) / em(a) * r * (-r * x).exp()
            } else {
                r * (-r * (x + b - 1.0)).exp()
            }
        };
        for (x, y) in [(0.2, 0.3), (0.7, 0.5), (0.3, 0.9), (0.45, 0.1)] {
            let expected = if x > a && y > b {
                0.0
            } else if y <= b {
                // psi = C / w with C = 1 - e^{-rb}, w = 1 - e^{-ry}:
                // g = phi' C e^{-ry} / (phi w - C)^2.
                let c = em(b);
                let w = em(y);
                dphi(x) * c * (-r * y).exp() / (phi(x) * w - c).powi(2)
            } else {
                let c = em(a + b - 1.0);
                let w = em(a + y - 1.0);
                dphi(x) * c * (-r * (a + y - 1.0)).exp() / (phi(x) * w - c).powi(2)
            };
            let got = f.eval_g(x, y);
            assert!(
                (got - expected).abs() < 1e-12 * expected.abs().max(1.0),
                "g({x},{y}) = {got}, want {expected}"
            );
        }
    }

    #[test]
    fn full_domain_mass_is_one() {
        for r in [-3.0, 0.7, 2.5] {
            let f = staircase_field(0.5, 0.75, r);
            assert!((f.box_mass(0.0, 1.0, 0.0, 1.0) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn staircase_cell_mass_closed_form() {
        // Tree support: the lower-left cell mass equals a + b - 1 at any r.
        let (a, b) = (0.5, 0.75);
        for r in [-2.0, 1.0, 4.0] {
            let f = staircase_field(a, b, r);
            let m = f.rect_mass(0, 0, 0.0, a, 0.0, b).unwrap();
            assert!((m - (a + b - 1.0)).abs() < 1e-11, "r={r}: {m}");
        }
    }

    #[test]
    fn degenerate_sub_rectangle_mass_is_zero() {
        let f = staircase_field(0.5, 0.75, 1.0);
        assert_eq!(f.rect_mass(0, 0, 0.3, 0.3, 0.1, 0.6).unwrap(), 0.0);
        assert!(f.rect_mass(0, 0, 0.3, 0.6, 0.1, 0.8).is_err());
    }

    #[test]
    fn height_boundary_conditions() {
        for r in [-1.0, 2.0] {
            let f = staircase_field(0.5, 0.75, r);
            assert!((f.eval_height(0.0, 1.0) - 1.0).abs() < 1e-10);
            assert!(f.eval_height(0.37, 0.0).abs() < 1e-14);
            assert!((f.eval_height(0.0, 0.62) - 0.62).abs() < 1e-10);
            assert!(f.eval_height(1.0, 0.62).abs() < 1e-14);
            assert!((f.eval_height(0.3, 1.0) - 0.7).abs() < 1e-10);
        }
    }

    #[test]
    fn small_rate_field_approaches_scaling_densities() {
        let spec = staircase(0.5, 0.75, 1e-8);
        let bv = solve_simple(&spec).unwrap();
        let f = build_field(&spec, &bv, FieldSource::Simple).unwrap();
        for (x, y, want) in [
            (0.25, 0.3, 2.0 / 3.0),
            (0.75, 0.3, 4.0 / 3.0),
            (0.25, 0.9, 2.0),
        ] {
            let got = f.eval_g(x, y);
            assert!((got - want).abs() < 1e-4, "g({x},{y}) = {got}, want {want}");
        }
    }

    #[test]
    fn marginals_are_exact() {
        for r in [-2.0, 1.0] {
            let f = staircase_field(0.5, 0.75, r);
            for t in [0.05, 0.3, 0.55, 0.8, 0.95] {
                assert!(
                    (f.marginal_x(t, Side::Minus) - 1.0).abs() < 1e-11,
                    "marginal_x({t}) at r={r}"
                );
                assert!(
                    (f.marginal_y(t, Side::Minus) - 1.0).abs() < 1e-11,
                    "marginal_y({t}) at r={r}"
                );
            }
        }
    }

    #[test]
    fn continuation_field_matches_simple_field() {
        let spec = staircase(0.5, 0.75, 1.5);
        let f1 = staircase_field(0.5, 0.75, 1.5);
        let bv = solve_continuation(&spec, 1.5, 1e-2, 1e-13).unwrap();
        let f2 = build_field(&spec, &bv, FieldSource::Continuation).unwrap();
        for (x, y) in [(0.2, 0.2), (0.7, 0.4), (0.1, 0.85)] {
            let (a, b) = (f1.eval_g(x, y), f2.eval_g(x, y));
            assert!((a - b).abs() < 1e-8 * a.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn liouville_pde_holds() {
        // (ln g)_xy = 2 r g by central finite differences.
        let r = 1.3;
        let f = staircase_field(0.5, 0.75, r);
        let h = 1e-4;
        for (x, y) in [(0.25, 0.4), (0.7, 0.35), (0.2, 0.85)] {
            let lg = |x: f64, y: f64| f.eval_g(x, y).ln();
            let mixed = (lg(x + h, y + h) - lg(x + h, y - h) - lg(x - h, y + h)
                + lg(x - h, y - h))
                / (4.0 * h * h);
            let rhs = 2.0 * r * f.eval_g(x, y);
            assert!(
                (mixed - rhs).abs() < 1e-3 * rhs.abs().max(1.0),
                "({x},{y}): {mixed} vs {rhs}"
            );
        }
    }

    #[test]
    fn grid_rows_integrate_to_one() {
        let f = staircase_field(0.5, 0.75, 1.0);
        let n = 100;
        let grid = f.grid(n);
        for j in 0..n {
            let row: f64 = (0..n).map(|i| grid.g(i, j)).sum::<f64>() / n as f64;
            assert!((row - 1.0).abs() < 0.01, "row {j}: {row}");
        }
        // Corner heights satisfy the class boundary conditions.
        for i in 0..=n {
            let x = i as f64 / n as f64;
            assert!(grid.h(i, 0).abs() < 1e-9);
            assert!((grid.h(i, n) - (1.0 - x)).abs() < 1e-9);
            assert!((grid.h(0, i) - x).abs() < 1e-9);
            assert!(grid.h(n, i).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_shape_and_header() {
        let f = staircase_field(0.5, 0.75, 1.0);
        let grid = f.grid(4);
        let csv = grid.to_csv(&f);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,y,g,h");
        assert_eq!(lines.len(), 1 + 5 * 5);
    }
}
