//! Adaptive Simpson quadrature for the oracle cross-checks. Solver fields
//! never integrate numerically; this exists so the reference densities can
//! be verified without reusing the closed-form mass machinery they are
//! meant to check.

/// Adaptive Simpson's rule on `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adapt(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Integrate over `[a, b]` split at the given interior points (piecewise
/// smooth integrands converge much faster when cut at their kinks).
pub fn integrate_split<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    splits: &[f64],
    tol: f64,
) -> f64 {
    let mut cuts: Vec<f64> = splits
        .iter()
        .copied()
        .filter(|&s| s > a && s < b)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    let mut lo = a;
    let panels = cuts.len() + 1;
    for hi in cuts.into_iter().chain(std::iter::once(b)) {
        total += integrate(f, lo, hi, tol / panels as f64);
        lo = hi;
    }
    total
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let got = integrate(&|x| 3.0 * x * x, 0.0, 2.0, 1e-12);
        assert!((got - 8.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_to_tolerance() {
        let got = integrate(&|x: f64| x.exp(), 0.0, 1.0, 1e-12);
        assert!((got - (1f64.exp() - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn split_handles_kinks() {
        // |x - 1/3| has a kink; splitting there makes each panel polynomial.
        let f = |x: f64| (x - 1.0 / 3.0).abs();
        let exact = (1.0 / 3.0f64).powi(2) / 2.0 + (2.0 / 3.0f64).powi(2) / 2.0;
        let got = integrate_split(&f, 0.0, 1.0, &[1.0 / 3.0], 1e-12);
        assert!((got - exact).abs() < 1e-12);
    }
}
