//! Real roots of cubic polynomials.

use std::f64::consts::PI;

/// Real roots of `a x³ + b x² + c x + d`, ascending, each polished by two
/// Newton steps. Repeated roots may appear once or several times.
pub fn real_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    if a == 0.0 {
        return quadratic_roots(b, c, d);
    }
    let (b, c, d) = (b / a, c / a, d / a);
    let shift = b / 3.0;
    let p = c - b * shift;
    let q = 2.0 * shift * shift * shift - shift * c + d;

    let mut roots = Vec::with_capacity(3);
    let disc = 0.25 * q * q + p * p * p / 27.0;
    if p == 0.0 {
        roots.push((-q).cbrt() - shift);
    } else if disc > 0.0 {
        let big = -q.signum() * (0.5 * q.abs() + disc.sqrt()).cbrt();
        let small = if big != 0.0 { -p / (3.0 * big) } else { 0.0 };
        roots.push(big + small - shift);
    } else {
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = (1.5 * q / p * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        for k in 0..3 {
            roots.push(r * (theta - 2.0 * PI * k as f64 / 3.0).cos() - shift);
        }
    }

    for x in roots.iter_mut() {
        *x = polish(*x, 1.0, b, c, d);
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// Largest real root of `a x³ + b x² + c x + d` with `a != 0`.
pub fn largest_real_root(a: f64, b: f64, c: f64, d: f64) -> f64 {
    *real_roots(a, b, c, d)
        .last()
        .expect("a cubic has at least one real root")
}

fn polish(mut x: f64, a: f64, b: f64, c: f64, d: f64) -> f64 {
    for _ in 0..2 {
        let f = ((a * x + b) * x + c) * x + d;
        let df = (3.0 * a * x + 2.0 * b) * x + c;
        if df == 0.0 || !df.is_finite() {
            break;
        }
        let next = x - f / df;
        if !next.is_finite() {
            break;
        }
        let f_next = ((a * next + b) * next + c) * next + d;
        if f_next.abs() <= f.abs() {
            x = next;
        }
    }
    x
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { Vec::new() } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let s = disc.sqrt();
    let q = -0.5 * (b + b.signum() * s);
    let mut roots = if q == 0.0 { vec![0.0] } else { vec![q / a, c / q] };
    roots.sort_by(f64::total_cmp);
    roots
}
