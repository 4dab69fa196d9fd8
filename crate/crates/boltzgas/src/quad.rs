//! Scalar quadrature building blocks: Gauss–Legendre rules and an adaptive
//! driver used by the angular integrals.

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on [-1, 1].
///
/// Nodes are computed by Newton iteration on the Legendre polynomial starting
/// from the Chebyshev estimate; accurate to machine precision for the orders
/// used here (<= 64).
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fixed-order Gauss–Legendre integral of `f` over [a, b].
pub fn gl_integrate(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, order: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut sum = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        sum += w * f(mid + half * x);
    }
    sum * half
}

/// Adaptive Gauss–Legendre integration: compares a 7-point and a 15-point
/// rule on each panel and bisects until the panel discrepancy is below the
/// tolerance share. Errors out instead of looping when the interval budget
/// is exhausted.
pub fn adaptive_gl(
    f: &mut dyn FnMut(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    context: &str,
) -> Result<f64> {
    let coarse = gl_integrate(f, a, b, 7);
    let fine = gl_integrate(f, a, b, 15);
    // Scale grows as panels are accepted; a whole-interval estimate alone
    // can miss narrow peaks entirely.
    let mut scale = fine.abs().max(1e-300);
    let mut total = 0.0;
    let mut stack = vec![(a, b, coarse, fine, 0u32)];
    let mut panels = 0usize;
    while let Some((lo, hi, c, fi, depth)) = stack.pop() {
        panels += 1;
        if panels > 200_000 {
            return Err(Error::QuadratureNonConvergence {
                context: context.to_string(),
                estimate: total + fi,
                error: (fi - c).abs(),
            });
        }
        let err = (fi - c).abs();
        let frac = ((hi - lo) / (b - a)).max(1e-8);
        let machine_converged = err <= 8.0 * f64::EPSILON * fi.abs() + 1e-300;
        if machine_converged || err <= rel_tol * scale * frac {
            total += fi;
            scale = scale.max(total.abs());
            continue;
        }
        if depth >= 48 {
            if err > 1e3 * rel_tol * scale {
                return Err(Error::QuadratureNonConvergence {
                    context: context.to_string(),
                    estimate: total + fi,
                    error: err,
                });
            }
            total += fi;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        for (p, q) in [(lo, mid), (mid, hi)] {
            let c2 = gl_integrate(f, p, q, 7);
            let f2 = gl_integrate(f, p, q, 15);
            stack.push((p, q, c2, f2, depth + 1));
        }
    }
    Ok(total)
}

/// Composite Simpson rule with `intervals` subintervals (rounded up to even).
pub fn simpson(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals.max(2).next_multiple_of(2);
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + k as f64 * h);
    }
    sum * h / 3.0
}

/// Surface measure of the unit sphere S^{n-1}.
pub fn sphere_surface(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => panic!("sphere_surface: unsupported dimension {n}"),
    }
}
