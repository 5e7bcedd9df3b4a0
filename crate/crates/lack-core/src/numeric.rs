//! Quadrature helpers shared by the survival-analysis code.

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance
/// `tol`, with the usual Richardson correction term.
///
/// Recursion depth is bounded; a cusp (e.g. `x^k` at zero for `k < 1`) costs
/// extra subdivisions but stays well inside the bound for the integrands used
/// here, all of which are bounded and monotone on each segment.
pub(crate) fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(a, b, fa, fm, fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    f: &dyn Fn(f64) -> f64,
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
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Cumulative integral of `f` from `a` on a uniform grid of `steps`
/// intervals up to `b`. Entry `i` holds the integral over `[a, a + i*h]`;
/// each interval contributes a three-point Simpson estimate.
pub(crate) fn cumulative_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, steps: usize) -> Vec<f64> {
    let h = (b - a) / steps as f64;
    let mut cum = Vec::with_capacity(steps + 1);
    cum.push(0.0);
    let mut total = 0.0;
    let mut f_left = f(a);
    for i in 0..steps {
        let x0 = a + i as f64 * h;
        let x1 = x0 + h;
        let f_right = f(x1);
        total += h / 6.0 * (f_left + 4.0 * f(x0 + 0.5 * h) + f_right);
        cum.push(total);
        f_left = f_right;
    }
    cum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_smooth_exponential() {
        let got = adaptive_simpson(&|x: f64| (-x).exp(), 0.0, 30.0, 1e-12);
        let want = 1.0 - (-30.0f64).exp();
        assert!((got - want).abs() < 1e-10, "got {got}");
    }

    #[test]
    fn handles_sqrt_cusp_at_left_edge() {
        // integral of sqrt(x) over [0, 1] = 2/3
        let got = adaptive_simpson(&|x: f64| x.sqrt(), 0.0, 1.0, 1e-10);
        assert!((got - 2.0 / 3.0).abs() < 1e-8, "got {got}");
    }

    #[test]
    fn cumulative_matches_closed_form() {
        let cum = cumulative_simpson(&|x: f64| x * x, 0.0, 3.0, 300);
        assert_eq!(cum.len(), 301);
        let got = cum[300];
        assert!((got - 9.0).abs() < 1e-10, "got {got}");
        let mid = cum[150]; // integral over [0, 1.5] = 1.125
        assert!((mid - 1.125).abs() < 1e-10, "got {mid}");
    }
}
