//! Points on the extended real line in homogeneous coordinates, and real
//! Moebius transformations acting on them.
//!
//! Boundary values of the limit-shape equations live on RP^1: the gauge
//! conventions pin some of them at infinity, so all cross-ratio arithmetic
//! here is done on `[num : den]` pairs where infinity is `[1 : 0]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the extended real line, stored as a homogeneous pair
/// `[num : den]` normalized so that `max(|num|, |den|) = 1`.
///
/// Serializes as the two-element array `[num, den]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct ProjectiveValue {
    pub num: f64,
    pub den: f64,
}

impl From<(f64, f64)> for ProjectiveValue {
    fn from((num, den): (f64, f64)) -> Self {
        Self::new(num, den)
    }
}

impl From<ProjectiveValue> for (f64, f64) {
    fn from(p: ProjectiveValue) -> Self {
        (p.num, p.den)
    }
}

impl ProjectiveValue {
    pub fn new(num: f64, den: f64) -> Self {
        assert!(
            num != 0.0 || den != 0.0,
            "projective value [0:0] is not a point"
        );
        let s = num.abs().max(den.abs());
        Self {
            num: num / s,
            den: den / s,
        }
    }

    pub fn finite(v: f64) -> Self {
        if v.abs() <= 1.0 {
            Self { num: v, den: 1.0 }
        } else {
            Self {
                num: v.signum(),
                den: 1.0 / v.abs(),
            }
        }
    }

    pub fn infinity() -> Self {
        Self { num: 1.0, den: 0.0 }
    }

    pub fn is_infinite(&self) -> bool {
        self.den == 0.0
    }

    /// The value as a plain float; infinity maps to `f64::INFINITY`.
    pub fn to_f64(&self) -> f64 {
        self.num / self.den
    }

    /// `num_a * den_b - num_b * den_a`; vanishes iff the two points coincide.
    ///
    /// Differences of projective points only ever appear in cross-ratios,
    /// where the individual denominators cancel, so this determinant is the
    /// right primitive.
    pub fn det(&self, other: &ProjectiveValue) -> f64 {
        self.num * other.den - other.num * self.den
    }

    /// Approximate equality on RP^1 (scale-free).
    pub fn approx_eq(&self, other: &ProjectiveValue, tol: f64) -> bool {
        self.det(other).abs() <= tol
    }
}

/// A real Moebius transformation `z -> (a z + b) / (c z + d)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Moebius {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Moebius {
    pub fn identity() -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    /// Rescale the coefficient vector to unit max-norm.
    pub fn normalized(self) -> Self {
        let s = self
            .a
            .abs()
            .max(self.b.abs())
            .max(self.c.abs())
            .max(self.d.abs());
        Self {
            a: self.a / s,
            b: self.b / s,
            c: self.c / s,
            d: self.d / s,
        }
    }

    pub fn apply(&self, p: ProjectiveValue) -> ProjectiveValue {
        ProjectiveValue::new(
            self.a * p.num + self.b * p.den,
            self.c * p.num + self.d * p.den,
        )
    }

    /// Evaluate at a finite argument, returning a projective point.
    pub fn apply_f64(&self, z: f64) -> ProjectiveValue {
        self.apply(ProjectiveValue::finite(z))
    }

    pub fn inverse(&self) -> Self {
        Self {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    /// `self` after `other`: `(self ∘ other)(z) = self(other(z))`.
    pub fn compose(&self, other: &Moebius) -> Self {
        Self {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
        }
        .normalized()
    }

    /// The unique map sending `z0 -> 0`, `z1 -> 1`, `z2 -> inf`.
    ///
    /// Requires the three points to be pairwise distinct.
    pub fn to_zero_one_inf(
        z0: ProjectiveValue,
        z1: ProjectiveValue,
        z2: ProjectiveValue,
    ) -> Result<Self> {
        let d10 = z1.det(&z0);
        let d12 = z1.det(&z2);
        if d10 == 0.0 || d12 == 0.0 || z0.det(&z2) == 0.0 {
            return Err(Error::DegenerateMoebius(
                "anchor points are not pairwise distinct".into(),
            ));
        }
        // Rows built so that z0 kills the numerator and z2 the denominator;
        // the d12 / d10 scaling makes z1 land exactly on 1.
        Ok(Self {
            a: z0.den * d12,
            b: -z0.num * d12,
            c: z2.den * d10,
            d: -z2.num * d10,
        }
        .normalized())
    }

    /// The unique map sending `src[i] -> dst[i]` for three pairwise distinct
    /// sources and three pairwise distinct targets.
    pub fn map_points(src: [ProjectiveValue; 3], dst: [ProjectiveValue; 3]) -> Result<Self> {
        let to_std_src = Self::to_zero_one_inf(src[0], src[1], src[2])?;
        let to_std_dst = Self::to_zero_one_inf(dst[0], dst[1], dst[2])?;
        Ok(to_std_dst.inverse().compose(&to_std_src))
    }

    /// The map with prescribed values at `0`, `1`, and `inf`:
    /// `M(0) = at_zero`, `M(1) = at_one`, `M(inf) = at_inf`.
    pub fn from_values_at_zero_one_inf(
        at_zero: ProjectiveValue,
        at_one: ProjectiveValue,
        at_inf: ProjectiveValue,
    ) -> Result<Self> {
        // M(E) = (alpha E + beta)/(gamma E + delta) with beta/delta = at_zero,
        // alpha/gamma = at_inf; the at_one condition fixes the relative scale.
        let s = at_one.det(&at_zero);
        let t = at_inf.det(&at_one);
        let m = Self {
            a: at_inf.num * s,
            b: at_zero.num * t,
            c: at_inf.den * s,
            d: at_zero.den * t,
        };
        if m.determinant() == 0.0 {
            return Err(Error::DegenerateMoebius(
                "prescribed values are not pairwise distinct".into(),
            ));
        }
        Ok(m.normalized())
    }
}

/// Cross-ratio attached to one rectangle of the support:
///
/// ```text
///   (psi_hi - phi_lo)(psi_lo - phi_hi)
///   ----------------------------------
///   (psi_lo - phi_lo)(psi_hi - phi_hi)
/// ```
///
/// Each point enters once upstairs and once downstairs, so homogeneous
/// denominators cancel and the determinant form is exact.
pub fn cell_cross_ratio(
    phi_lo: ProjectiveValue,
    phi_hi: ProjectiveValue,
    psi_lo: ProjectiveValue,
    psi_hi: ProjectiveValue,
) -> f64 {
    (psi_hi.det(&phi_lo) * psi_lo.det(&phi_hi)) / (psi_lo.det(&phi_lo) * psi_hi.det(&phi_hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: f64) -> ProjectiveValue {
        ProjectiveValue::finite(v)
    }

    #[test]
    fn map_points_hits_targets() {
        let src = [p(0.3), ProjectiveValue::infinity(), p(-2.0)];
        let dst = [p(0.0), p(1.0), ProjectiveValue::infinity()];
        let m = Moebius::map_points(src, dst).unwrap();
        for (s, d) in src.iter().zip(dst.iter()) {
            let got = m.apply(*s);
            assert!(got.approx_eq(d, 1e-12), "{:?} -> {:?}, want {:?}", s, got, d);
        }
    }

    #[test]
    fn from_values_at_zero_one_inf_matches() {
        let m = Moebius::from_values_at_zero_one_inf(
            ProjectiveValue::infinity(),
            p(0.0),
            p(0.75),
        )
        .unwrap();
        assert!(m.apply_f64(0.0).is_infinite());
        assert!(m.apply_f64(1.0).approx_eq(&p(0.0), 1e-14));
        assert!((m.a / m.c - 0.75).abs() < 1e-14);
    }

    #[test]
    fn cross_ratio_invariant_under_moebius() {
        let pts = [p(0.1), p(0.7), ProjectiveValue::infinity(), p(-1.3)];
        let before = cell_cross_ratio(pts[0], pts[1], pts[2], pts[3]);
        let m = Moebius {
            a: 2.0,
            b: -1.0,
            c: 0.5,
            d: 3.0,
        };
        let moved: Vec<_> = pts.iter().map(|q| m.apply(*q)).collect();
        let after = cell_cross_ratio(moved[0], moved[1], moved[2], moved[3]);
        assert!(
            (before - after).abs() < 1e-12 * before.abs().max(1.0),
            "{before} vs {after}"
        );
    }

    #[test]
    fn degenerate_anchor_is_rejected() {
        let r = Moebius::map_points([p(1.0), p(1.0), p(2.0)], [p(0.0), p(1.0), p(2.0)]);
        assert!(r.is_err());
    }
}
