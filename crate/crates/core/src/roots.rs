//! Scalar root brackets shared by the scalar-kernel paths.

/// Root of a continuous decreasing `g` on `[lo, hi]` with `g(lo) ≥ 0 ≥ g(hi)`.
/// Splits geometrically while the bracket spans decades so tiny roots keep
/// full relative precision.
pub fn bisect_decreasing<F: Fn(f64) -> f64>(g: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    for _ in 0..2000 {
        if hi - lo <= rel_tol * hi.abs().max(lo.abs()) {
            break;
        }
        let mid = if lo > 0.0 && hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else if lo == 0.0 && hi > 0.0 && hi > 1e-300 * 4.0 {
            // halve in log scale toward zero until a sign change shows up
            let m = hi * 0.25;
            if g(m) < 0.0 {
                hi = m;
                continue;
            }
            lo = m;
            continue;
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pn1) = if n == 1 { (z, 1.0) } else { (p1, p0) };
            let dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (mut q0, mut q1) = (1.0, z);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * z * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let (qn, qn1) = if n == 1 { (z, 1.0) } else { (q1, q0) };
                let d = n as f64 * (z * qn - qn1) / (z * z - 1.0);
                w[i] = 2.0 / ((1.0 - z * z) * d * d);
                break;
            }
        }
        x[i] = z;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt() {
        let r = bisect_decreasing(|x| 2.0 - x * x, 0.0, 2.0, 1e-15);
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn bisect_tiny_root() {
        let r = bisect_decreasing(|x| 1e-20 - x, 0.0, 1.0, 1e-14);
        assert!((r / 1e-20 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }
}
