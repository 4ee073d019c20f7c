//! One-dimensional quadrature rules.
//!
//! Composite Simpson with successive halving for bounded integrands, and
//! tanh-sinh (double exponential) quadrature for integrands with integrable
//! endpoint singularities. Both accept interior breakpoints so that kinks and
//! jumps sit on subinterval ends.

/// Default relative tolerance between successive refinements.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

const SIMPSON_MAX_LEVEL: u32 = 22;
const TANH_SINH_MAX_LEVEL: u32 = 12;

/// Composite Simpson on `[a, b]`, doubling the number of panels until two
/// successive estimates differ by less than `rel_tol` relative to the size of
/// the integral of `|f|`.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    // Endpoints are sampled a hair inside the interval so that a jump
    // sitting on a breakpoint takes its one-sided value.
    let nudge = (b - a) * 1e-15;
    let fa = f(a + nudge);
    let fb = f(b - nudge);
    let mid = f(0.5 * (a + b));
    let ends = fa + fb;
    let ends_abs = fa.abs() + fb.abs();
    let mut sum_even = 0.0;
    let mut sum_even_abs = 0.0;
    let mut sum_odd = mid;
    let mut sum_odd_abs = mid.abs();
    let mut n: u64 = 2;
    let mut prev = (b - a) / 6.0 * (ends + 4.0 * sum_odd);
    for _ in 1..SIMPSON_MAX_LEVEL {
        n *= 2;
        let h = (b - a) / n as f64;
        sum_even += sum_odd;
        sum_even_abs += sum_odd_abs;
        sum_odd = 0.0;
        sum_odd_abs = 0.0;
        let mut k = 1;
        while k < n {
            let y = f(a + k as f64 * h);
            sum_odd += y;
            sum_odd_abs += y.abs();
            k += 2;
        }
        let est = h / 3.0 * (ends + 4.0 * sum_odd + 2.0 * sum_even);
        let scale = (h / 3.0 * (ends_abs + 4.0 * sum_odd_abs + 2.0 * sum_even_abs)).abs();
        if n >= 16 && (est - prev).abs() <= rel_tol * scale.max(f64::MIN_POSITIVE) {
            return est;
        }
        prev = est;
    }
    prev
}

/// Simpson quadrature split at every breakpoint strictly inside `(a, b)`.
pub fn simpson_piecewise<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    rel_tol: f64,
) -> f64 {
    split(a, b, breakpoints)
        .windows(2)
        .map(|w| simpson(&f, w[0], w[1], rel_tol))
        .sum()
}

/// Tanh-sinh quadrature on `[a, b]`. The integrand is never evaluated at the
/// endpoints; nodes that round onto an endpoint are skipped, as are
/// non-finite samples.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let half = 0.5 * (b - a);
    let centre = 0.5 * (a + b);
    let half_pi = std::f64::consts::FRAC_PI_2;

    let eval = |x: f64| -> f64 {
        if x <= a || x >= b {
            return 0.0;
        }
        let y = f(x);
        if y.is_finite() {
            y
        } else {
            0.0
        }
    };
    // Contribution of the symmetric node pair at t > 0.
    let pair = |t: f64| -> Option<(f64, f64)> {
        let u = half_pi * t.sinh();
        let e2u = (2.0 * u).exp();
        if !e2u.is_finite() {
            return None;
        }
        let offset = (b - a) / (1.0 + e2u);
        let cosh_u = u.cosh();
        let w = half * half_pi * t.cosh() / (cosh_u * cosh_u);
        if w == 0.0 || offset == 0.0 {
            return None;
        }
        let yl = eval(a + offset);
        let yr = eval(b - offset);
        Some((w * (yl + yr), w * (yl.abs() + yr.abs())))
    };

    let y0 = eval(centre);
    let w0 = half * half_pi;
    let mut sum = w0 * y0;
    let mut sum_abs = w0 * y0.abs();
    let mut h = 1.0;
    let mut k = 1;
    while let Some((s, s_abs)) = pair(k as f64 * h) {
        sum += s;
        sum_abs += s_abs;
        k += 1;
    }
    let mut prev = h * sum;
    for level in 1..=TANH_SINH_MAX_LEVEL {
        h *= 0.5;
        let mut k = 1;
        while let Some((s, s_abs)) = pair(k as f64 * h) {
            sum += s;
            sum_abs += s_abs;
            k += 2;
        }
        let est = h * sum;
        if level >= 3 && (est - prev).abs() <= rel_tol * (h * sum_abs).max(f64::MIN_POSITIVE) {
            return est;
        }
        prev = est;
    }
    prev
}

/// Tanh-sinh quadrature split at interior breakpoints.
pub fn tanh_sinh_piecewise<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    rel_tol: f64,
) -> f64 {
    split(a, b, breakpoints)
        .windows(2)
        .map(|w| tanh_sinh(&f, w[0], w[1], rel_tol))
        .sum()
}

fn split(a: f64, b: f64, breakpoints: &[f64]) -> Vec<f64> {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut pts = vec![a];
    let mut inner: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&p| p > lo && p < hi)
        .collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    if a > b {
        inner.reverse();
    }
    inner.dedup();
    pts.extend(inner);
    pts.push(b);
    pts
}
