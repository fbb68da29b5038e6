//! Roots of real quadratics and cubics.

use num_complex::Complex64;

/// Roots of `a x² + b x + c` (`a ≠ 0`), using the cancellation-free form.
pub fn quadratic_roots(a: f64, b: f64, c: f64) -> [Complex64; 2] {
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        let q = -0.5 * (b + b.signum_or_one() * sq);
        if q == 0.0 {
            return [Complex64::new(0.0, 0.0); 2];
        }
        let r1 = q / a;
        let r2 = c / q;
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        [Complex64::new(lo, 0.0), Complex64::new(hi, 0.0)]
    } else {
        let re = -b / (2.0 * a);
        let im = (-disc).sqrt() / (2.0 * a.abs());
        [Complex64::new(re, -im), Complex64::new(re, im)]
    }
}

trait SignumOrOne {
    fn signum_or_one(self) -> f64;
}

impl SignumOrOne for f64 {
    fn signum_or_one(self) -> f64 {
        if self < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

/// Discriminant `b²c² − 4ac³ − 4b³d − 27a²d² + 18abcd` of `a x³ + b x² + c x + d`.
pub fn cubic_discriminant(a: f64, b: f64, c: f64, d: f64) -> f64 {
    b * b * c * c - 4.0 * a * c * c * c - 4.0 * b * b * b * d - 27.0 * a * a * d * d + 18.0 * a * b * c * d
}

fn eval_cubic(a: f64, b: f64, c: f64, d: f64, x: f64) -> (f64, f64) {
    let p = ((a * x + b) * x + c) * x + d;
    let dp = (3.0 * a * x + 2.0 * b) * x + c;
    (p, dp)
}

/// Roots of `a x³ + b x² + c x + d` (`a ≠ 0`).
///
/// One real root is taken from the trigonometric/Cardano form, polished by
/// Newton, and the remaining pair comes from the deflated quadratic. Real
/// roots are returned before complex ones, real roots in ascending order.
pub fn cubic_roots(a: f64, b: f64, c: f64, d: f64) -> [Complex64; 3] {
    let (bn, cn, dn) = (b / a, c / a, d / a);
    // depressed cubic t³ + p t + q with x = t − bn/3
    let shift = bn / 3.0;
    let p = cn - bn * bn / 3.0;
    let q = 2.0 * bn * bn * bn / 27.0 - bn * cn / 3.0 + dn;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let t = if disc > 0.0 {
        let sq = disc.sqrt();
        (-q / 2.0 + sq).cbrt() + (-q / 2.0 - sq).cbrt()
    } else if p == 0.0 {
        (-q).cbrt()
    } else {
        // three real roots; take the largest
        let r = (-p / 3.0).sqrt();
        let arg = (3.0 * q / (2.0 * p) / r).clamp(-1.0, 1.0);
        2.0 * r * (arg.acos() / 3.0).cos()
    };
    let mut x = t - shift;
    for _ in 0..8 {
        let (v, dv) = eval_cubic(1.0, bn, cn, dn, x);
        if dv == 0.0 {
            break;
        }
        let step = v / dv;
        if !step.is_finite() {
            break;
        }
        x -= step;
        if step.abs() <= 1e-16 * x.abs().max(1.0) {
            break;
        }
    }
    // deflate: x³ + bn x² + cn x + dn = (x − r)(x² + e x + g)
    let e = bn + x;
    let g = cn + e * x;
    let [r1, r2] = quadratic_roots(1.0, e, g);
    let mut roots = [Complex64::new(x, 0.0), r1, r2];
    roots.sort_by(|u, v| {
        let ku = (u.im != 0.0, u.re);
        let kv = (v.im != 0.0, v.re);
        ku.partial_cmp(&kv).unwrap_or(std::cmp::Ordering::Equal)
    });
    roots
}

/// Real roots of the cubic, ascending. Roots whose imaginary part is below
/// `imag_tol` (relative to their magnitude) are treated as real.
pub fn cubic_real_roots(a: f64, b: f64, c: f64, d: f64, imag_tol: f64) -> Vec<f64> {
    let mut out: Vec<f64> = cubic_roots(a, b, c, d)
        .iter()
        .filter(|z| z.im.abs() <= imag_tol * z.norm().max(1.0))
        .map(|z| z.re)
        .collect();
    out.sort_by(|x, y| x.partial_cmp(y).unwrap());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_real_and_complex() {
        let [r1, r2] = quadratic_roots(1.0, -3.0, 2.0);
        assert_eq!((r1.re, r2.re), (1.0, 2.0));
        let [z1, z2] = quadratic_roots(1.0, 2.0, 5.0);
        assert_eq!((z1.re, z1.im, z2.im), (-1.0, -2.0, 2.0));
        let [a, b] = quadratic_roots(1.0, 1e8, 1.0);
        assert!((a.re + 1e8).abs() < 1e-6 && (b.re + 1e-8).abs() < 1e-20);
    }

    #[test]
    fn cubic_three_real() {
        let r = cubic_real_roots(1.0, -6.0, 11.0, -6.0, 1e-12);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(cubic_discriminant(1.0, -6.0, 11.0, -6.0) > 0.0);
    }

    #[test]
    fn cubic_one_real() {
        // (x + 2)(x² + 1)
        let z = cubic_roots(1.0, 2.0, 1.0, 2.0);
        assert!((z[0].re + 2.0).abs() < 1e-14 && z[0].im == 0.0);
        assert!((z[1].im.abs() - 1.0).abs() < 1e-12 && z[1].re.abs() < 1e-12);
        assert!(cubic_discriminant(1.0, 2.0, 1.0, 2.0) < 0.0);
    }

    #[test]
    fn cubic_triple_root() {
        // (x + 0.5)³
        let r = cubic_roots(1.0, 1.5, 0.75, 0.125);
        for z in r {
            assert!((z - Complex64::new(-0.5, 0.0)).norm() < 1e-5, "{z}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cubic_roots_reproduce_vieta(r1 in -50.0..50.0f64, re in -50.0..50.0f64, im in 0.0..30.0f64, a in 0.1..5.0f64) {
                // a (x − r1)(x² − 2 re x + re² + im²)
                let s = re * re + im * im;
                let b = a * (-2.0 * re - r1);
                let c = a * (s + 2.0 * re * r1);
                let d = a * (-r1 * s);
                let roots = cubic_roots(a, b, c, d);
                let scale = 1.0 + r1.abs().max(s.sqrt());
                for z in roots {
                    let v = ((Complex64::new(a, 0.0) * z + b) * z + c) * z + d;
                    prop_assert!(v.norm() <= 1e-7 * a * scale.powi(3), "residual {} at {}", v.norm(), z);
                }
                let sum: Complex64 = roots.iter().sum();
                prop_assert!((sum.re + b / a).abs() <= 1e-7 * scale);
            }
        }
    }
}
