//! Verification battery applied to any density model, solver-produced or
//! reference. Every check is seeded, reports its worst witness, and is
//! agnostic to how the field was obtained.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{DensityField, RectDensity, Side};

/// Whether four-point rectangles may span several cells of the partition.
///
/// Fields built from a single pair of parametrizing functions satisfy the
/// relation globally; per-rectangle reference densities (the non-convex
/// case) are checked within cells, with the cross-cell content carried by
/// the jump and corner identities instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FourPointScope {
    Global,
    WithinRects,
}

/// What the battery needs from a density.
pub trait DensityModel: Sync {
    fn r(&self) -> f64;
    fn x_breaks(&self) -> &[f64];
    fn y_breaks(&self) -> &[f64];
    fn supported(&self, u: usize, v: usize) -> bool;
    /// One-sided limit of the density at a point.
    fn eval_limit(&self, x: f64, y: f64, sx: Side, sy: Side) -> f64;
    /// Mass of an arbitrary box (closed form or quadrature, per model).
    fn mass(&self, x1: f64, x2: f64, y1: f64, y2: f64) -> f64;
    /// Marginals at a non-breakpoint abscissa.
    fn marginal_x(&self, x: f64) -> f64;
    fn marginal_y(&self, y: f64) -> f64;
    fn four_point_scope(&self) -> FourPointScope {
        FourPointScope::Global
    }
}

impl DensityModel for DensityField {
    fn r(&self) -> f64 {
        self.spec.r
    }

    fn x_breaks(&self) -> &[f64] {
        &self.spec.x
    }

    fn y_breaks(&self) -> &[f64] {
        &self.spec.y
    }

    fn supported(&self, u: usize, v: usize) -> bool {
        !matches!(self.rect(u, v), RectDensity::Zero)
    }

    fn eval_limit(&self, x: f64, y: f64, sx: Side, sy: Side) -> f64 {
        self.eval_g_limit(x, y, sx, sy)
    }

    fn mass(&self, x1: f64, x2: f64, y1: f64, y2: f64) -> f64 {
        self.box_mass(x1, x2, y1, y2)
    }

    fn marginal_x(&self, x: f64) -> f64 {
        DensityField::marginal_x(self, x, Side::Minus)
    }

    fn marginal_y(&self, y: f64) -> f64 {
        DensityField::marginal_y(self, y, Side::Minus)
    }
}

/// Worst offending sample of a failed (or passed) check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    /// `[x1, x2, y1, y2]` for rectangle checks, point or line data else.
    pub location: [f64; 4],
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub max_residual: f64,
    pub tol: f64,
    pub pass: bool,
    pub n_checked: usize,
    pub witness: Option<Witness>,
}

impl CheckReport {
    fn from_samples(name: &str, tol: f64, samples: Vec<(f64, Witness)>) -> Self {
        let n_checked = samples.len();
        let worst = samples
            .into_iter()
            .max_by(|a, b| a.0.total_cmp(&b.0));
        match worst {
            Some((max_residual, witness)) => Self {
                name: name.into(),
                max_residual,
                tol,
                pass: max_residual.is_finite() && max_residual < tol,
                n_checked,
                witness: Some(witness),
            },
            None => Self {
                name: name.into(),
                max_residual: 0.0,
                tol,
                pass: true,
                n_checked: 0,
                witness: None,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryReport {
    pub seed: u64,
    pub checks: Vec<CheckReport>,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct BatteryConfig {
    pub seed: u64,
    pub n_rects: usize,
    pub n_abscissae: usize,
    pub tol_four_point: f64,
    pub tol_marginals: f64,
    pub tol_jumps: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            seed: 0x6f70_7065,
            n_rects: 100,
            n_abscissae: 50,
            tol_four_point: 1e-8,
            tol_marginals: 1e-7,
            tol_jumps: 1e-8,
        }
    }
}

/// Number of evaluation points per interior breakpoint segment in the jump
/// check.
const JUMP_POINTS: usize = 16;

fn supported_cells(model: &dyn DensityModel) -> Vec<(usize, usize)> {
    let (k, ell) = (model.x_breaks().len() - 1, model.y_breaks().len() - 1);
    (0..k)
        .flat_map(|u| (0..ell).map(move |v| (u, v)))
        .filter(|&(u, v)| model.supported(u, v))
        .collect()
}

/// Sampled four-point relation: for random rectangles (including degenerate
/// ones and, in global scope, rectangles spanning holes), check
/// `ln g(x1-,y1-) + ln g(x2+,y2+) - ln g(x1-,y2+) - ln g(x2+,y1-) = 2 r m`.
pub fn check_four_point(
    model: &dyn DensityModel,
    n_rects: usize,
    tol: f64,
    seed: u64,
) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = model.r();
    let cells = supported_cells(model);
    let xb = model.x_breaks();
    let yb = model.y_breaks();
    let mut accepted: Vec<[f64; 4]> = Vec::with_capacity(n_rects);
    let mut attempts = 0usize;
    while accepted.len() < n_rects && attempts < n_rects * 500 {
        attempts += 1;
        let kind = rng.random_range(0..10u32);
        let (x1, x2, y1, y2) = match model.four_point_scope() {
            FourPointScope::Global => {
                let interior_x: Vec<f64> = xb[1..xb.len() - 1].to_vec();
                let interior_y: Vec<f64> = yb[1..yb.len() - 1].to_vec();
                let mut span = || -> (f64, f64) {
                    let a: f64 = rng.random_range(0.0..1.0);
                    let b: f64 = rng.random_range(0.0..1.0);
                    (a.min(b), a.max(b))
                };
                let (mut x1, mut x2) = span();
                let (mut y1, mut y2) = span();
                // Mix in degenerate rectangles, pinned at a breakpoint half
                // the time so the one-sided limits are actually exercised.
                if kind == 0 {
                    x1 = if !interior_x.is_empty() && rng.random_bool(0.5) {
                        interior_x[rng.random_range(0..interior_x.len())]
                    } else {
                        rng.random_range(0.05..0.95)
                    };
                    x2 = x1;
                } else if kind == 1 {
                    y1 = if !interior_y.is_empty() && rng.random_bool(0.5) {
                        interior_y[rng.random_range(0..interior_y.len())]
                    } else {
                        rng.random_range(0.05..0.95)
                    };
                    y2 = y1;
                }
                (x1, x2, y1, y2)
            }
            FourPointScope::WithinRects => {
                let (u, v) = cells[rng.random_range(0..cells.len())];
                let (xl, xr) = (xb[u], xb[u + 1]);
                let (yl, yr) = (yb[v], yb[v + 1]);
                let mut pair = |lo: f64, hi: f64| -> (f64, f64) {
                    let margin = 1e-9 * (hi - lo);
                    let a = rng.random_range(lo + margin..hi - margin);
                    let b = rng.random_range(lo + margin..hi - margin);
                    (a.min(b), a.max(b))
                };
                let (mut x1, mut x2) = pair(xl, xr);
                let (y1, y2) = pair(yl, yr);
                if kind == 0 {
                    x2 = x1;
                } else if kind == 1 {
                    x1 = x2;
                }
                (x1, x2, y1, y2)
            }
        };
        let corners_ok = model.eval_limit(x1, y1, Side::Minus, Side::Minus) > 0.0
            && model.eval_limit(x2, y2, Side::Plus, Side::Plus) > 0.0
            && model.eval_limit(x1, y2, Side::Minus, Side::Plus) > 0.0
            && model.eval_limit(x2, y1, Side::Plus, Side::Minus) > 0.0;
        if corners_ok {
            accepted.push([x1, x2, y1, y2]);
        }
    }
    let samples: Vec<(f64, Witness)> = accepted
        .into_par_iter()
        .map(|[x1, x2, y1, y2]| {
            let log_ratio = model.eval_limit(x1, y1, Side::Minus, Side::Minus).ln()
                + model.eval_limit(x2, y2, Side::Plus, Side::Plus).ln()
                - model.eval_limit(x1, y2, Side::Minus, Side::Plus).ln()
                - model.eval_limit(x2, y1, Side::Plus, Side::Minus).ln();
            let mass = if r == 0.0 || x1 == x2 || y1 == y2 {
                0.0
            } else {
                model.mass(x1, x2, y1, y2)
            };
            let res = (log_ratio - 2.0 * r * mass).abs();
            (
                res,
                Witness {
                    location: [x1, x2, y1, y2],
                    detail: format!("log-ratio {log_ratio:.3e}, 2 r mass {:.3e}", 2.0 * r * mass),
                },
            )
        })
        .collect();
    CheckReport::from_samples("four_point", tol, samples)
}

/// Both marginals equal 1 at sampled abscissae.
pub fn check_marginals(
    model: &dyn DensityModel,
    n_abscissae: usize,
    tol: f64,
    seed: u64,
) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let is_near_break = |t: f64, breaks: &[f64]| breaks.iter().any(|b| (b - t).abs() < 1e-9);
    let mut points = Vec::with_capacity(2 * n_abscissae);
    while points.len() < n_abscissae {
        let x = rng.random_range(0.0..1.0);
        if !is_near_break(x, model.x_breaks()) {
            points.push((x, true));
        }
    }
    while points.len() < 2 * n_abscissae {
        let y = rng.random_range(0.0..1.0);
        if !is_near_break(y, model.y_breaks()) {
            points.push((y, false));
        }
    }
    let samples: Vec<(f64, Witness)> = points
        .into_par_iter()
        .map(|(t, along_x)| {
            let m = if along_x {
                model.marginal_x(t)
            } else {
                model.marginal_y(t)
            };
            (
                (m - 1.0).abs(),
                Witness {
                    location: if along_x {
                        [t, t, 0.0, 1.0]
                    } else {
                        [0.0, 1.0, t, t]
                    },
                    detail: format!(
                        "{} marginal = {m:.12}",
                        if along_x { "vertical" } else { "horizontal" }
                    ),
                },
            )
        })
        .collect();
    CheckReport::from_samples("marginals", tol, samples)
}

/// Jump constancy across interior breakpoints (including over holes) and
/// the corner products around vertices and zero blocks.
pub fn check_jumps(model: &dyn DensityModel, tol: f64) -> CheckReport {
    let xb = model.x_breaks();
    let yb = model.y_breaks();
    let (k, ell) = (xb.len() - 1, yb.len() - 1);
    let mut samples: Vec<(f64, Witness)> = Vec::new();

    // Constancy of g(entering edge of the next support cell) over
    // g(leaving edge of the previous one), along the shared coordinate.
    let mut constancy = |ratios: &[f64], location: [f64; 4], what: &str| {
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let dev = ratios
            .iter()
            .map(|r| (r / mean - 1.0).abs())
            .fold(0.0f64, f64::max);
        samples.push((
            dev,
            Witness {
                location,
                detail: format!("{what}: jump constant {mean:.9}, max rel dev {dev:.3e}"),
            },
        ));
    };
    for v in 0..ell {
        let sup: Vec<usize> = (0..k).filter(|&u| model.supported(u, v)).collect();
        for w in sup.windows(2) {
            let (u1, u2) = (w[0], w[1]);
            let (x_leave, x_enter) = (xb[u1 + 1], xb[u2]);
            let ratios: Vec<f64> = (0..JUMP_POINTS)
                .map(|i| {
                    let y = yb[v] + (yb[v + 1] - yb[v]) * (i as f64 + 0.5) / JUMP_POINTS as f64;
                    model.eval_limit(x_enter, y, Side::Plus, Side::Minus)
                        / model.eval_limit(x_leave, y, Side::Minus, Side::Minus)
                })
                .collect();
            constancy(
                &ratios,
                [x_leave, x_enter, yb[v], yb[v + 1]],
                &format!("x-jump row {v}: cells {u1}->{u2}"),
            );
        }
    }
    for u in 0..k {
        let sup: Vec<usize> = (0..ell).filter(|&v| model.supported(u, v)).collect();
        for w in sup.windows(2) {
            let (v1, v2) = (w[0], w[1]);
            let (y_leave, y_enter) = (yb[v1 + 1], yb[v2]);
            let ratios: Vec<f64> = (0..JUMP_POINTS)
                .map(|i| {
                    let x = xb[u] + (xb[u + 1] - xb[u]) * (i as f64 + 0.5) / JUMP_POINTS as f64;
                    model.eval_limit(x, y_enter, Side::Minus, Side::Plus)
                        / model.eval_limit(x, y_leave, Side::Minus, Side::Minus)
                })
                .collect();
            constancy(
                &ratios,
                [xb[u], xb[u + 1], y_leave, y_enter],
                &format!("y-jump column {u}: cells {v1}->{v2}"),
            );
        }
    }

    // Corner products: four supported corner cells around an all-zero (or
    // empty) inner block multiply to 1.
    for u1 in 0..k {
        for u2 in u1 + 1..k {
            for v1 in 0..ell {
                for v2 in v1 + 1..ell {
                    let corners_ok = model.supported(u1, v1)
                        && model.supported(u1, v2)
                        && model.supported(u2, v1)
                        && model.supported(u2, v2);
                    if !corners_ok {
                        continue;
                    }
                    let block_zero = (u1 + 1..u2).all(|u| {
                        (v1 + 1..v2).all(|v| !model.supported(u, v))
                    });
                    if !block_zero {
                        continue;
                    }
                    let g11 = model.eval_limit(xb[u1 + 1], yb[v1 + 1], Side::Minus, Side::Minus);
                    let g22 = model.eval_limit(xb[u2], yb[v2], Side::Plus, Side::Plus);
                    let g12 = model.eval_limit(xb[u1 + 1], yb[v2], Side::Minus, Side::Plus);
                    let g21 = model.eval_limit(xb[u2], yb[v1 + 1], Side::Plus, Side::Minus);
                    let product = (g11 * g22) / (g12 * g21);
                    samples.push((
                        (product - 1.0).abs(),
                        Witness {
                            location: [xb[u1 + 1], xb[u2], yb[v1 + 1], yb[v2]],
                            detail: format!(
                                "corner product cells ({u1},{v1})-({u2},{v2}): {product:.12}"
                            ),
                        },
                    ));
                }
            }
        }
    }
    CheckReport::from_samples("jumps", tol, samples)
}

/// Per-rectangle positivity and boundedness of the density on a probe grid;
/// reports the empirical per-field bounds.
pub fn check_bounds(model: &dyn DensityModel) -> CheckReport {
    let xb = model.x_breaks();
    let yb = model.y_breaks();
    let (k, ell) = (xb.len() - 1, yb.len() - 1);
    let probe = 32;
    let mut samples = Vec::new();
    for u in 0..k {
        for v in 0..ell {
            if !model.supported(u, v) {
                continue;
            }
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for i in 0..=probe {
                let x = xb[u] + (xb[u + 1] - xb[u]) * i as f64 / probe as f64;
                for j in 0..=probe {
                    let y = yb[v] + (yb[v + 1] - yb[v]) * j as f64 / probe as f64;
                    let sx = if i == probe { Side::Minus } else { Side::Plus };
                    let sy = if j == probe { Side::Minus } else { Side::Plus };
                    let g = model.eval_limit(x, y, sx, sy);
                    lo = lo.min(g);
                    hi = hi.max(g);
                }
            }
            // Residual convention: negative when the cell is strictly
            // positive and bounded, so any violation fails the tol=0 gate.
            let res = if lo > 0.0 && hi.is_finite() { -lo } else { 0.0 };
            samples.push((
                res,
                Witness {
                    location: [xb[u], xb[u + 1], yb[v], yb[v + 1]],
                    detail: format!("cell ({u},{v}): {lo:.6e} <= g <= {hi:.6e}"),
                },
            ));
        }
    }
    CheckReport::from_samples("bounds", 0.0, samples)
}

/// Run the full battery.
pub fn run_battery(model: &dyn DensityModel, cfg: &BatteryConfig) -> BatteryReport {
    let checks = vec![
        check_four_point(model, cfg.n_rects, cfg.tol_four_point, cfg.seed),
        check_marginals(model, cfg.n_abscissae, cfg.tol_marginals, cfg.seed),
        check_jumps(model, cfg.tol_jumps),
        check_bounds(model),
    ];
    let pass = checks.iter().all(|c| c.pass);
    BatteryReport {
        seed: cfg.seed,
        checks,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{solve_3x3_nonsimple, solve_simple};
    use crate::density::{build_field, FieldSource};
    use crate::ipf;
    use crate::region::{RegionSpec, SupportGrid};

    fn staircase_field(r: f64) -> DensityField {
        let spec = RegionSpec::new(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.75, 1.0],
            SupportGrid::from_ints(&[vec![1, 1], vec![1, 0]]).unwrap(),
            r,
        )
        .unwrap();
        let bv = solve_simple(&spec).unwrap();
        build_field(&spec, &bv, FieldSource::Simple).unwrap()
    }

    #[test]
    fn battery_passes_on_simple_field() {
        let f = staircase_field(1.0);
        let report = run_battery(&f, &BatteryConfig::default());
        assert!(report.pass, "{report:#?}");
        let fp = &report.checks[0];
        assert!(fp.max_residual < 1e-10, "four-point: {}", fp.max_residual);
    }

    #[test]
    fn battery_passes_on_scaling_field() {
        let spec = RegionSpec::new(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.75, 1.0],
            SupportGrid::from_ints(&[vec![1, 1], vec![1, 0]]).unwrap(),
            0.0,
        )
        .unwrap();
        let sol = ipf::solve_r0(&spec, 1e-13, 100_000).unwrap();
        let f = DensityField::from_scaling(&spec, &sol).unwrap();
        let report = run_battery(&f, &BatteryConfig::default());
        assert!(report.pass, "{report:#?}");
        // Jump constants across x = 1/2 on the lower band: ratio of the two
        // constant densities.
        let jumps = &report.checks[2];
        assert!(jumps.pass);
    }

    #[test]
    fn battery_passes_on_quadratic_field() {
        let spec = RegionSpec::new(
            vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
            vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
            SupportGrid::from_ints(&[vec![1, 1, 0], vec![1, 1, 1], vec![0, 1, 1]]).unwrap(),
            1.0,
        )
        .unwrap();
        let bv = solve_3x3_nonsimple(&spec).unwrap();
        let f = build_field(&spec, &bv, FieldSource::Quadratic3x3).unwrap();
        let report = run_battery(&f, &BatteryConfig::default());
        assert!(report.pass, "{report:#?}");
    }

    #[test]
    fn corrupted_field_fails_four_point() {
        let mut f = staircase_field(1.0);
        // Perturb one rectangle's coefficients by 1%.
        let ell = f.spec.ell();
        if let RectDensity::Rational(rc) = &mut f.rects[ell] {
            rc.a *= 1.01;
        } else {
            panic!("expected rational rect");
        }
        let report = check_four_point(&f, 100, 1e-8, 7);
        assert!(!report.pass, "{report:#?}");
    }

    #[test]
    fn continuous_single_cell_field_has_unit_jumps() {
        let spec = RegionSpec::new(
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            SupportGrid::from_ints(&[vec![1]]).unwrap(),
            1.5,
        )
        .unwrap();
        let bv = solve_simple(&spec).unwrap();
        let f = build_field(&spec, &bv, FieldSource::Simple).unwrap();
        let report = check_jumps(&f, 1e-8);
        assert!(report.pass);
        assert_eq!(report.n_checked, 0); // no interior breakpoints
    }
}
