//! One-dimensional stationary-point search used by the curve projections.

const SCAN: usize = 16;
const MAX_NEWTON: usize = 50;

/// Local minimizers in the open interval `(lo, hi)` of a function with first
/// derivative `d1` and second derivative `d2`.
///
/// The interval is scanned for sign changes of `d1` from negative to positive;
/// each bracket is then refined by Newton's method with a bisection fallback.
pub(crate) fn local_minima(lo: f64, hi: f64, d1: impl Fn(f64) -> f64, d2: impl Fn(f64) -> f64, out: &mut Vec<f64>) {
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return;
    }
    let h = (hi - lo) / SCAN as f64;
    let mut a = lo;
    let mut fa = d1(a);
    for i in 1..=SCAN {
        let b = if i == SCAN { hi } else { lo + h * i as f64 };
        let fb = d1(b);
        if fa < 0.0 && fb >= 0.0 {
            out.push(refine(a, b, &d1, &d2));
        }
        a = b;
        fa = fb;
    }
}

/// Root of `d1` in `[a, b]` given `d1(a) < 0 ≤ d1(b)`.
fn refine(mut a: f64, mut b: f64, d1: &impl Fn(f64) -> f64, d2: &impl Fn(f64) -> f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    let mut x = 0.5 * (a + b);
    for _ in 0..MAX_NEWTON {
        let f = d1(x);
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            a = x;
        } else {
            b = x;
        }
        if b - a <= 4.0 * f64::EPSILON * scale {
            break;
        }
        let df = d2(x);
        let newton = x - f / df;
        x = if df > 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    x
}
