//! Reference densities transcribed from worked closed forms, used as ground
//! truth in tests and re-verified by the battery through quadrature rather
//! than through the solver's own mass formulas.

use crate::density::Side;
use crate::error::{Error, Result};
use crate::quad;
use crate::verify::{DensityModel, FourPointScope};

/// Identifies one of the frozen reference densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleId {
    /// Two-by-two staircase with breakpoints `a`, `b` (requires `a + b > 1`).
    Staircase2x2 { a: f64, b: f64 },
    /// The non-convex 3x2 region with the hole in the middle of the top row.
    Nonconvex3x2,
    /// Zero-rate region above the line `a x + b y = 1` (requires `a, b > 1`,
    /// `a != b`).
    Triangle { a: f64, b: f64 },
}

impl OracleId {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OracleId::Staircase2x2 { a, b } => {
                if !(0.0 < a && a < 1.0 && 0.0 < b && b < 1.0 && a + b > 1.0) {
                    return Err(Error::InvalidSpec(format!(
                        "staircase needs 0 < a, b < 1 and a + b > 1, got a={a}, b={b}"
                    )));
                }
            }
            OracleId::Nonconvex3x2 => {}
            OracleId::Triangle { a, b } => {
                if !(a > 1.0 && b > 1.0 && a != b) {
                    return Err(Error::InvalidSpec(format!(
                        "triangle needs a, b > 1 and a != b, got a={a}, b={b}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `1 - exp(-r t)`, accurate for small `r t`.
fn em(r: f64, t: f64) -> f64 {
    -(-r * t).exp_m1()
}

fn pick(t: f64, cut: f64, side: Side) -> bool {
    // true: beyond the cut (upper/right branch)
    t > cut || (t == cut && side == Side::Plus)
}

/// Staircase density from the four displayed branch formulas of the two
/// parametrizing functions, combined through the quotient ansatz. Written
/// with the `1/(1 - e^{-ry})`-type factors cleared so the expression stays
/// finite at the domain edges.
pub fn oracle_staircase_2x2_sided(
    a: f64,
    b: f64,
    r: f64,
    x: f64,
    y: f64,
    sx: Side,
    sy: Side,
) -> f64 {
    let right = pick(x, a, sx);
    let top = pick(y, b, sy);
    if right && top {
        return 0.0;
    }
    let (phi, dphi) = if right {
        (em(r, x + b - 1.0), r * (-r * (x + b - 1.0)).exp())
    } else {
        let t = em(r, a + b - 1.0) / em(r, a);
        (t * em(r, x), t * r * (-r * x).exp())
    };
    if top {
        // psi = S / (1 - e^{-r(a+y-1)}) with S = 1 - e^{-r(a+b-1)}.
        let s = em(r, a + b - 1.0);
        let w = em(r, a + y - 1.0);
        dphi * s * (-r * (a + y - 1.0)).exp() / (phi * w - s).powi(2)
    } else {
        // psi = C / (1 - e^{-ry}) with C = 1 - e^{-rb}.
        let c = em(r, b);
        let w = em(r, y);
        dphi * c * (-r * y).exp() / (phi * w - c).powi(2)
    }
}

pub fn oracle_staircase_2x2(a: f64, b: f64, r: f64, x: f64, y: f64) -> f64 {
    oracle_staircase_2x2_sided(a, b, r, x, y, Side::Minus, Side::Minus)
}

/// The six-branch density of the non-convex 3x2 region with breakpoints
/// `x = (0, 1/3, 2/3, 1)`, `y = (0, 2/3, 1)`, transcribed term by term.
pub fn oracle_nonconvex_3x2_sided(r: f64, x: f64, y: f64, sx: Side, sy: Side) -> f64 {
    let u = if pick(x, 2.0 / 3.0, sx) {
        2
    } else if pick(x, 1.0 / 3.0, sx) {
        1
    } else {
        0
    };
    let v = usize::from(pick(y, 2.0 / 3.0, sy));
    let ex = |t: f64| (-r * t).exp();
    // (prefactor, q0, qy, qx, qxy) with denominator
    // q0 + qy e^{ry} + qx e^{rx} + qxy e^{r(x+y)}.
    let (p, q0, qy, qx, qxy) = match (u, v) {
        (0, 0) => (
            (1.0 + ex(0.5)) * (1.0 - ex(2.0 / 3.0)),
            1.0,
            -1.0,
            -1.0,
            -ex(0.5) + ex(2.0 / 3.0) + ex(7.0 / 6.0),
        ),
        (0, 1) => (
            (1.0 - ex(1.0 / 3.0)) * (ex(1.0 / 6.0) + ex(2.0 / 3.0)),
            1.0,
            -ex(1.0 / 6.0) + ex(0.5) - ex(2.0 / 3.0),
            -1.0,
            ex(1.0),
        ),
        (1, 0) => (
            (1.0 - ex(1.0 / 6.0) + ex(1.0 / 3.0)) * (1.0 - ex(2.0 / 3.0)),
            1.0,
            -1.0,
            ex(1.0 / 6.0) - 1.0 - ex(1.0 / 3.0),
            ex(2.0 / 3.0) - ex(5.0 / 6.0) + ex(1.0),
        ),
        (1, 1) => return 0.0,
        (2, 0) => (
            (1.0 - ex(2.0 / 3.0)) * (ex(1.0 / 6.0) + ex(2.0 / 3.0)),
            ex(1.0 / 6.0),
            -ex(1.0 / 6.0),
            -ex(0.5) + ex(2.0 / 3.0) - 1.0,
            ex(7.0 / 6.0),
        ),
        (2, 1) => (
            ex(4.0 / 3.0) * (1.0 - ex(1.0 / 3.0)) * (1.0 + ex(0.5)),
            1.0 - ex(1.0 / 6.0) + ex(0.5),
            -ex(2.0 / 3.0),
            -ex(2.0 / 3.0),
            ex(5.0 / 3.0),
        ),
        _ => unreachable!(),
    };
    let den = q0 + qy * (r * y).exp() + qx * (r * x).exp() + qxy * (r * (x + y)).exp();
    r * (r * (x + y)).exp() * p / (den * den)
}

pub fn oracle_nonconvex_3x2(r: f64, x: f64, y: f64) -> f64 {
    oracle_nonconvex_3x2_sided(r, x, y, Side::Minus, Side::Minus)
}

/// Zero-rate density above the line `a x + b y = 1`: piecewise power laws
/// in the two linear forms, constant on the far corner, zero below the
/// line.
pub fn oracle_triangle(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if a * x + b * y < 1.0 {
        return 0.0;
    }
    let lam = ((a - b) * x + b - 1.0).powf(a / (b - a));
    let mu = ((b - a) * y + a - 1.0).powf(b / (a - b));
    let left = x < 1.0 / a;
    let low = y < 1.0 / b;
    match (left, low) {
        (true, false) => b * (b - 1.0).powf(b / (a - b)) * lam,
        (false, true) => a * (a - 1.0).powf(a / (b - a)) * mu,
        (true, true) => b.powf(a / (a - b)) * a.powf(b / (b - a)) * lam * mu,
        (false, false) => (b / (b - 1.0)).powf(b / (b - a)) * (a / (a - 1.0)).powf(a / (a - b)),
    }
}

type SidedEval = Box<dyn Fn(f64, f64, Side, Side) -> f64 + Sync + Send>;
type DynamicSplit = Box<dyn Fn(f64) -> Option<f64> + Sync + Send>;

/// A reference density wrapped for the verification battery: pointwise
/// closed-form evaluation, masses and marginals by adaptive quadrature.
pub struct OracleDensity {
    x_breaks: Vec<f64>,
    y_breaks: Vec<f64>,
    ell: usize,
    support: Vec<bool>,
    r: f64,
    scope: FourPointScope,
    eval: SidedEval,
    /// Interior kink of `y -> g(x, y)` for the given `x`, if any.
    y_split_at: Option<DynamicSplit>,
    /// Interior kink of `x -> g(x, y)` for the given `y`, if any.
    x_split_at: Option<DynamicSplit>,
}

/// Absolute tolerance of the oracle-side quadrature.
const QUAD_TOL: f64 = 1e-10;

impl OracleDensity {
    pub fn new(id: OracleId, r: f64) -> Result<Self> {
        id.validate()?;
        match id {
            OracleId::Staircase2x2 { a, b } => {
                if r == 0.0 {
                    return Err(Error::RZero);
                }
                Ok(Self {
                    x_breaks: vec![0.0, a, 1.0],
                    y_breaks: vec![0.0, b, 1.0],
                    ell: 2,
                    support: vec![true, true, true, false],
                    r,
                    scope: FourPointScope::Global,
                    eval: Box::new(move |x, y, sx, sy| {
                        oracle_staircase_2x2_sided(a, b, r, x, y, sx, sy)
                    }),
                    y_split_at: None,
                    x_split_at: None,
                })
            }
            OracleId::Nonconvex3x2 => {
                if r == 0.0 {
                    return Err(Error::RZero);
                }
                Ok(Self {
                    x_breaks: vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
                    y_breaks: vec![0.0, 2.0 / 3.0, 1.0],
                    ell: 2,
                    support: vec![true, true, true, false, true, true],
                    r,
                    scope: FourPointScope::WithinRects,
                    eval: Box::new(move |x, y, sx, sy| {
                        oracle_nonconvex_3x2_sided(r, x, y, sx, sy)
                    }),
                    y_split_at: None,
                    x_split_at: None,
                })
            }
            OracleId::Triangle { a, b } => {
                if r != 0.0 {
                    return Err(Error::InvalidSpec(
                        "the triangle reference density is a zero-rate object".into(),
                    ));
                }
                Ok(Self {
                    x_breaks: vec![0.0, 1.0 / a, 1.0],
                    y_breaks: vec![0.0, 1.0 / b, 1.0],
                    ell: 2,
                    support: vec![true; 4],
                    r: 0.0,
                    scope: FourPointScope::Global,
                    eval: Box::new(move |x, y, _, _| oracle_triangle(a, b, x, y)),
                    y_split_at: Some(Box::new(move |x| {
                        let y = (1.0 - a * x) / b;
                        (y > 0.0 && y < 1.0).then_some(y)
                    })),
                    x_split_at: Some(Box::new(move |y| {
                        let x = (1.0 - b * y) / a;
                        (x > 0.0 && x < 1.0).then_some(x)
                    })),
                })
            }
        }
    }

    fn y_integral(&self, x: f64, y1: f64, y2: f64, tol: f64) -> f64 {
        let mut splits = self.y_breaks.clone();
        if let Some(split) = &self.y_split_at {
            if let Some(y) = split(x) {
                splits.push(y);
            }
        }
        let f = |y: f64| (self.eval)(x, y, Side::Minus, Side::Minus);
        quad::integrate_split(&f, y1, y2, &splits, tol)
    }

    fn x_integral(&self, y: f64, x1: f64, x2: f64, tol: f64) -> f64 {
        let mut splits = self.x_breaks.clone();
        if let Some(split) = &self.x_split_at {
            if let Some(x) = split(y) {
                splits.push(x);
            }
        }
        let f = |x: f64| (self.eval)(x, y, Side::Minus, Side::Minus);
        quad::integrate_split(&f, x1, x2, &splits, tol)
    }
}

impl DensityModel for OracleDensity {
    fn r(&self) -> f64 {
        self.r
    }

    fn x_breaks(&self) -> &[f64] {
        &self.x_breaks
    }

    fn y_breaks(&self) -> &[f64] {
        &self.y_breaks
    }

    fn supported(&self, u: usize, v: usize) -> bool {
        self.support[u * self.ell + v]
    }

    fn eval_limit(&self, x: f64, y: f64, sx: Side, sy: Side) -> f64 {
        (self.eval)(x, y, sx, sy)
    }

    fn mass(&self, x1: f64, x2: f64, y1: f64, y2: f64) -> f64 {
        // Iterated adaptive quadrature; the inner integrals run much tighter
        // than the outer so the outer error model stays valid.
        let outer = |x: f64| self.y_integral(x, y1, y2, QUAD_TOL * 1e-2);
        quad::integrate_split(&outer, x1, x2, &self.x_breaks, QUAD_TOL)
    }

    fn marginal_x(&self, x: f64) -> f64 {
        self.y_integral(x, 0.0, 1.0, QUAD_TOL)
    }

    fn marginal_y(&self, y: f64) -> f64 {
        self.x_integral(y, 0.0, 1.0, QUAD_TOL)
    }

    fn four_point_scope(&self) -> FourPointScope {
        self.scope
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staircase_hole_is_zero() {
        assert_eq!(oracle_staircase_2x2(0.5, 0.75, 1.0, 0.8, 0.9), 0.0);
    }

    #[test]
    fn staircase_small_rate_limit_is_piecewise_constant() {
        let (a, b, r) = (0.5, 0.75, 1e-8);
        for (x, y, want) in [
            (0.25, 0.4, 2.0 / 3.0),
            (0.8, 0.4, 4.0 / 3.0),
            (0.25, 0.9, 2.0),
        ] {
            let got = oracle_staircase_2x2(a, b, r, x, y);
            assert!((got - want).abs() < 1e-6, "g({x},{y}) = {got}, want {want}");
        }
    }

    #[test]
    fn nonconvex_hole_is_zero() {
        assert_eq!(oracle_nonconvex_3x2(7.0, 0.5, 0.8), 0.0);
        assert!(oracle_nonconvex_3x2(7.0, 0.5, 0.5) > 0.0);
    }

    #[test]
    fn nonconvex_marginals_by_quadrature() {
        for r in [-1.0, 7.0] {
            let model = OracleDensity::new(OracleId::Nonconvex3x2, r).unwrap();
            for i in 0..20 {
                let t = (i as f64 + 0.5) / 20.0;
                let mx = model.marginal_x(t);
                let my = model.marginal_y(t);
                assert!((mx - 1.0).abs() < 1e-8, "r={r}: marginal_x({t}) = {mx}");
                assert!((my - 1.0).abs() < 1e-8, "r={r}: marginal_y({t}) = {my}");
            }
        }
    }

    #[test]
    fn triangle_plateau_value() {
        // a = 3/2, b = 2: the constant far branch is 2^4 3^{-3} = 16/27.
        let got = oracle_triangle(1.5, 2.0, 0.8, 0.7);
        assert!((got - 16.0 / 27.0).abs() < 1e-12, "{got}");
    }

    #[test]
    fn triangle_vanishes_below_the_line() {
        assert_eq!(oracle_triangle(1.5, 2.0, 0.1, 0.1), 0.0);
        assert!(oracle_triangle(1.5, 2.0, 0.1, 0.43) > 0.0);
    }

    #[test]
    fn triangle_marginals_by_quadrature() {
        let model = OracleDensity::new(OracleId::Triangle { a: 1.5, b: 2.0 }, 0.0).unwrap();
        for i in 0..20 {
            let t = (i as f64 + 0.5) / 20.0;
            let mx = model.marginal_x(t);
            let my = model.marginal_y(t);
            assert!((mx - 1.0).abs() < 1e-8, "marginal_x({t}) = {mx}");
            assert!((my - 1.0).abs() < 1e-8, "marginal_y({t}) = {my}");
        }
    }

    #[test]
    fn triangle_is_continuous_across_interior_lines() {
        let (a, b) = (1.5, 2.0);
        for t in [0.3, 0.55, 0.8, 0.95] {
            let eps = 1e-9;
            let across_x =
                oracle_triangle(a, b, 1.0 / a - eps, t) - oracle_triangle(a, b, 1.0 / a + eps, t);
            assert!(across_x.abs() < 1e-6, "x-line at y={t}: {across_x}");
            let across_y =
                oracle_triangle(a, b, t, 1.0 / b - eps) - oracle_triangle(a, b, t, 1.0 / b + eps);
            assert!(across_y.abs() < 1e-6, "y-line at x={t}: {across_y}");
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(OracleId::Staircase2x2 { a: 0.4, b: 0.5 }.validate().is_err());
        assert!(OracleId::Triangle { a: 2.0, b: 2.0 }.validate().is_err());
        assert!(OracleId::Triangle { a: 0.9, b: 2.0 }.validate().is_err());
    }
}
