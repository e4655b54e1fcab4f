//! Bounded one-dimensional maximization (Brent's golden-section / parabolic search).

const GOLDEN: f64 = 0.381_966_011_250_105_1; // (3 - sqrt 5) / 2

/// Maximizes `f` on `[lower, upper]`, returning `(argmax, max)`.
///
/// Combines golden-section steps with successive parabolic interpolation,
/// stopping when the bracket is narrower than `2 * (sqrt(eps)|x| + tol/3)`.
/// Endpoints are compared at the end, so a monotone objective returns its
/// boundary value.
pub fn maximize_bounded<F: FnMut(f64) -> f64>(mut f: F, lower: f64, upper: f64, tol: f64) -> (f64, f64) {
    assert!(lower <= upper, "empty bracket [{lower}, {upper}]");
    if lower == upper {
        return (lower, f(lower));
    }
    let mut neg = |x: f64| -f(x);
    let sqrt_eps = f64::EPSILON.sqrt();

    let (mut a, mut b) = (lower, upper);
    let mut v = a + GOLDEN * (b - a);
    let mut w = v;
    let mut x = v;
    let mut fx = neg(x);
    let mut fv = fx;
    let mut fw = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let tol3 = tol / 3.0;

    for _ in 0..500 {
        let xm = 0.5 * (a + b);
        let tol1 = sqrt_eps * x.abs() + tol3;
        let t2 = 2.0 * tol1;
        if (x - xm).abs() <= t2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            // parabola through x, v, w
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let r = e;
            e = d;
            if p.abs() < (0.5 * q * r).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < t2 || b - u < t2 {
                    d = if x < xm { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < xm { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else if d > 0.0 { x + tol1 } else { x - tol1 };
        let fu = neg(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }

    let mut best = (x, fx);
    for edge in [lower, upper] {
        let fe = neg(edge);
        if fe < best.1 {
            best = (edge, fe);
        }
    }
    (best.0, -best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_quadratic_max() {
        let (x, fx) = maximize_bounded(|x| -(x - 2.5).powi(2) + 1.0, 0.0, 10.0, 1e-9);
        assert!((x - 2.5).abs() < 1e-6);
        assert!((fx - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_objective_hits_boundary() {
        let (x, _) = maximize_bounded(|x| x, 1.0, 3.0, 1e-9);
        assert_eq!(x, 3.0);
        let (x, _) = maximize_bounded(|x| -x, 1.0, 3.0, 1e-9);
        assert_eq!(x, 1.0);
    }

    #[test]
    fn log_barrier_shape() {
        // -a ln t - b / t has its maximum at b / a
        let (a, b) = (3.0, 240.0);
        let (x, _) = maximize_bounded(|t| -a * t.ln() - b / t, 1.0, 1000.0, 1e-8);
        assert!((x - 80.0).abs() < 1e-5, "{x}");
    }
}
