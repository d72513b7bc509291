//! β(ζ), the Perron–Frobenius eigenvectors of B_ζ = D_{|a−ζ|²} − S, the
//! gradient of β, boundary density values and the edge cubic.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::AtomicProfile;
use crate::roots::bisect_decreasing;

#[derive(Clone, Debug, Serialize)]
pub struct BetaEval {
    pub zeta: Complex64,
    pub beta: f64,
    /// PF eigenvalue of S·D⁻¹; absent when ζ is an atom.
    pub lambda_pf: Option<f64>,
    pub b: Vec<f64>,
    pub ell: Vec<f64>,
    /// ∂_ζ β
    pub grad: Complex64,
    pub eig_residual: f64,
    pub at_atom: bool,
    pub far_field: bool,
}

impl BetaEval {
    /// (∂_x β, ∂_y β)
    pub fn gradient_xy(&self) -> [f64; 2] {
        [2.0 * self.grad.re, -2.0 * self.grad.im]
    }

    /// |∇β| in the Euclidean plane.
    pub fn grad_norm(&self) -> f64 {
        2.0 * self.grad.norm()
    }
}

pub fn beta_eval(profile: &AtomicProfile, zeta: Complex64) -> Result<BetaEval> {
    match profile.scalar_variance() {
        Some(t) => beta_scalar(profile, zeta, t),
        None => beta_general(profile, zeta),
    }
}

fn far_field(profile: &AtomicProfile, zeta: Complex64) -> bool {
    zeta.norm() > profile.max_abs_deformation() + 2.0 * profile.max_kernel().sqrt()
}

fn finish(profile: &AtomicProfile, zeta: Complex64, beta: f64, mut b: Vec<f64>, mut ell: Vec<f64>, lambda_pf: Option<f64>) -> Result<BetaEval> {
    let nb = profile.avg_unchecked(&b);
    let nl = profile.avg_unchecked(&ell);
    if !(nb > 0.0 && nl > 0.0) {
        return Err(Error::Numerical("eigenvector normalization failed".into()));
    }
    b.iter_mut().for_each(|x| *x /= nb);
    ell.iter_mut().for_each(|x| *x /= nl);
    let d = profile.dist_sq(zeta);
    let sb = profile.apply_s_unchecked(&b);
    let stl = profile.apply_s_star_unchecked(&ell);
    let mut res: f64 = 0.0;
    for i in 0..b.len() {
        res = res.max((d[i] * b[i] - sb[i] - beta * b[i]).abs());
        res = res.max((d[i] * ell[i] - stl[i] - beta * ell[i]).abs());
    }
    let mut eval = BetaEval {
        zeta,
        beta,
        lambda_pf,
        b,
        ell,
        grad: Complex64::new(0.0, 0.0),
        eig_residual: res,
        at_atom: d.contains(&0.0),
        far_field: far_field(profile, zeta),
    };
    eval.grad = grad_beta(profile, &eval)?;
    Ok(eval)
}

/// Scalar kernel: root of t⟨1/(|a−ζ|² − β)⟩ = 1 below min |a−ζ|².
pub fn beta_scalar(profile: &AtomicProfile, zeta: Complex64, t: f64) -> Result<BetaEval> {
    let d = profile.dist_sq(zeta);
    let mu = profile.weights();
    let m = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let jmin = (0..d.len()).min_by(|&i, &j| d[i].total_cmp(&d[j])).unwrap_or(0);
    // g(u) = t⟨1/(d − m + u)⟩ − 1 is convex and decreasing, so Newton from
    // a point with g ≥ 0 climbs monotonically to the root.
    let mut u = t * mu[jmin];
    let mut ok = false;
    for _ in 0..200 {
        let (mut f, mut fp) = (-1.0, 0.0);
        for (di, w) in d.iter().zip(mu) {
            let r = 1.0 / (di - m + u);
            f += t * w * r;
            fp -= t * w * r * r;
        }
        if f <= 0.0 {
            ok = f > -1e-14;
            break;
        }
        let step = -f / fp;
        u += step;
        if !(u.is_finite() && step >= 0.0) {
            break;
        }
        if step <= 1e-16 * u {
            ok = true;
            break;
        }
    }
    if !ok {
        let g = |u: f64| t * d.iter().zip(mu).map(|(di, w)| w / (di - m + u)).sum::<f64>() - 1.0;
        u = bisect_decreasing(g, 0.0, t, 1e-16);
    }
    let beta = m - u;
    let b: Vec<f64> = d.iter().map(|di| 1.0 / (di - m + u)).collect();
    let lambda_pf = (m > 0.0).then(|| t * d.iter().zip(mu).map(|(di, w)| w / di).sum::<f64>());
    finish(profile, zeta, beta, b.clone(), b, lambda_pf)
}

/// Dense B (or B* when `adjoint`) in the μ-weighted convention.
fn b_matrix(profile: &AtomicProfile, d: &[f64], adjoint: bool) -> DMatrix<f64> {
    let k = profile.len();
    let mu = profile.weights();
    DMatrix::from_fn(k, k, |i, j| {
        let s = if adjoint { profile.kernel_entry(j, i) } else { profile.kernel_entry(i, j) };
        let diag = if i == j { d[i] } else { 0.0 };
        diag - s * mu[j]
    })
}

/// Eigenpair of the minimal real eigenvalue of a Z-matrix with irreducible
/// pattern by shifted inverse iteration; the shift sits below the
/// Collatz–Wielandt lower bound so iterates stay positive.
fn min_eigenpair(b: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let k = b.nrows();
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let mut x = DVector::from_element(k, 1.0);
    let cw = |x: &DVector<f64>| {
        let bx = b * x;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..k {
            let r = bx[i] / x[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    };
    let (mut lo, mut hi) = cw(&x);
    for _ in 0..500 {
        if hi - lo <= 1e-15 * scale {
            break;
        }
        let gap = (hi - lo).max(1e-14 * scale);
        let sigma = lo - (1e-3 * gap).max(1e-10 * scale);
        let mut m = b.clone();
        for i in 0..k {
            m[(i, i)] -= sigma;
        }
        let nx = m.lu().solve(&x).ok_or_else(|| Error::Numerical("singular shifted matrix".into()))?;
        let norm = nx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(norm > 0.0 && norm.is_finite()) || nx.iter().any(|v| *v <= 0.0) {
            if hi - lo <= 1e-9 * scale {
                break;
            }
            return Err(Error::Numerical("inverse iteration lost positivity".into()));
        }
        x = nx / norm;
        let (l, h) = cw(&x);
        // bounds are monotone in exact arithmetic; keep the tightest
        lo = lo.max(l);
        hi = hi.min(h);
        if lo > hi {
            let mid = 0.5 * (lo + hi);
            lo = mid;
            hi = mid;
        }
    }
    if hi - lo > 1e-9 * scale {
        return Err(Error::Numerical(format!("eigenvalue bracket did not close ({lo}, {hi}); degeneracy suspected")));
    }
    Ok((0.5 * (lo + hi), x.as_slice().to_vec()))
}

pub fn beta_general(profile: &AtomicProfile, zeta: Complex64) -> Result<BetaEval> {
    let d = profile.dist_sq(zeta);
    let (beta_r, b) = min_eigenpair(&b_matrix(profile, &d, false))?;
    let (beta_l, ell) = min_eigenpair(&b_matrix(profile, &d, true))?;
    if (beta_r - beta_l).abs() > 1e-10 * (1.0 + beta_r.abs()) {
        return Err(Error::Numerical(format!("left/right eigenvalues disagree: {beta_r} vs {beta_l}")));
    }
    let lambda_pf = if d.iter().all(|x| *x > 0.0) { Some(pf_of_s_dinv(profile, &d)?) } else { None };
    finish(profile, zeta, 0.5 * (beta_r + beta_l), b, ell, lambda_pf)
}

/// Spectral radius of S·D⁻¹ by power iteration with Collatz–Wielandt bounds.
fn pf_of_s_dinv(profile: &AtomicProfile, d: &[f64]) -> Result<f64> {
    let k = profile.len();
    let mut x = vec![1.0; k];
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    for _ in 0..20_000 {
        let y: Vec<f64> = x.iter().zip(d).map(|(a, b)| a / b).collect();
        let nx = profile.apply_s_unchecked(&y);
        lo = f64::INFINITY;
        hi = 0.0f64;
        for i in 0..k {
            let r = nx[i] / x[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
        let n = nx.iter().cloned().fold(0.0, f64::max);
        x = nx.iter().map(|v| v / n).collect();
    }
    if hi - lo > 1e-8 * hi {
        return Err(Error::NoConvergence { iterations: 20_000, residual: hi - lo });
    }
    Ok(0.5 * (lo + hi))
}

/// ∂_ζβ = −⟨ℓ b conj(a−ζ)⟩/⟨ℓ b⟩
pub fn grad_beta(profile: &AtomicProfile, eval: &BetaEval) -> Result<Complex64> {
    let a = profile.deformation();
    let mu = profile.weights();
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    for i in 0..profile.len() {
        let lb = eval.ell[i] * eval.b[i] * mu[i];
        num += (a[i] - eval.zeta).conj() * lb;
        den += lb;
    }
    if !(den > 0.0) {
        return Err(Error::Numerical("degenerate eigenvectors; use finite differences".into()));
    }
    Ok(-num / den)
}

/// Hessian of β by central differences of the analytic gradient, symmetrized.
pub fn hessian_fd(profile: &AtomicProfile, zeta: Complex64, h: f64) -> Result<[[f64; 2]; 2]> {
    let g = |z: Complex64| beta_eval(profile, z).map(|e| e.gradient_xy());
    let gxp = g(zeta + h)?;
    let gxm = g(zeta - h)?;
    let gyp = g(zeta + Complex64::new(0.0, h))?;
    let gym = g(zeta - Complex64::new(0.0, h))?;
    let hxx = (gxp[0] - gxm[0]) / (2.0 * h);
    let hyy = (gyp[1] - gym[1]) / (2.0 * h);
    let hxy = 0.5 * ((gxp[1] - gxm[1]) / (2.0 * h) + (gyp[0] - gym[0]) / (2.0 * h));
    Ok([[hxx, hxy], [hxy, hyy]])
}

/// Natural length scale of the profile for finite-difference steps.
pub fn length_scale(profile: &AtomicProfile) -> f64 {
    (profile.max_abs_deformation() + profile.max_kernel().sqrt()).max(1e-3)
}

/// Boundary value (1/π)|⟨(a−ζ₀)ℓb⟩|²/⟨|a−ζ₀|⁴ℓ²b²⟩.
pub fn edge_sigma(profile: &AtomicProfile, zeta0: Complex64) -> Result<f64> {
    let e = beta_eval(profile, zeta0)?;
    if e.beta.abs() >= 1e-6 {
        return Err(Error::Argument(format!("point is not on the edge (beta = {:e})", e.beta)));
    }
    Ok(edge_sigma_from(profile, &e))
}

pub(crate) fn edge_sigma_from(profile: &AtomicProfile, e: &BetaEval) -> f64 {
    let a = profile.deformation();
    let mu = profile.weights();
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    for i in 0..profile.len() {
        let w = a[i] - e.zeta;
        num += w * (e.ell[i] * e.b[i] * mu[i]);
        den += w.norm_sqr().powi(2) * (e.ell[i] * e.b[i]).powi(2) * mu[i];
    }
    num.norm_sqr() / den / PI
}

/// Δσ at a singular point.
pub fn delta_sigma_at_singular(profile: &AtomicProfile, zeta0: Complex64) -> Result<f64> {
    let e = beta_eval(profile, zeta0)?;
    if e.beta.abs() >= 1e-6 || e.grad.norm() >= 1e-6 {
        return Err(Error::Argument(format!(
            "point is not singular (beta = {:e}, |grad| = {:e})",
            e.beta,
            e.grad.norm()
        )));
    }
    let k = profile.len();
    let a = profile.deformation();
    let mu = profile.weights();
    let d = profile.dist_sq(zeta0);
    // bordered system [[B0, b0], [μℓ0ᵀ, 0]] pins the component along b0
    let b0 = b_matrix(profile, &d, false);
    let mut m = DMatrix::<f64>::zeros(k + 1, k + 1);
    m.view_mut((0, 0), (k, k)).copy_from(&b0);
    for i in 0..k {
        m[(i, k)] = e.b[i];
        m[(k, i)] = mu[i] * e.ell[i];
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = smax / smin.max(1e-300);
    if cond > 1e12 {
        return Err(Error::IllConditioned(cond));
    }
    let lu = m.lu();
    let w: Vec<Complex64> = (0..k).map(|i| a[i] - zeta0).collect();
    let rhs_re = DVector::from_fn(k + 1, |i, _| if i < k { e.b[i] * w[i].re } else { 0.0 });
    let rhs_im = DVector::from_fn(k + 1, |i, _| if i < k { e.b[i] * w[i].im } else { 0.0 });
    let xr = lu.solve(&rhs_re).ok_or(Error::IllConditioned(cond))?;
    let xi = lu.solve(&rhs_im).ok_or(Error::IllConditioned(cond))?;
    let mut inner = Complex64::new(0.0, 0.0);
    let mut lb = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        let x = Complex64::new(xr[i], xi[i]);
        inner += w[i] * x * (e.ell[i] * mu[i]);
        lb += e.ell[i] * e.b[i] * mu[i];
        den += w[i].norm_sqr().powi(2) * (e.ell[i] * e.b[i]).powi(2) * mu[i];
    }
    let h = 1e-4 * length_scale(profile);
    let hess = hessian_fd(profile, zeta0, h)?;
    let lap = hess[0][0] + hess[1][1];
    let value = (32.0 * inner.norm_sqr() + lb * lb * lap * lap) / (2.0 * PI * den);
    if !(value > 0.0) {
        return Err(Error::Numerical(format!("non-positive Laplacian of sigma: {value}")));
    }
    Ok(value)
}

/// Coefficients (c3, c1) = (⟨ℓ b (S*ℓ)(S b)⟩, ⟨ℓ b⟩) of the edge cubic.
pub fn edge_cubic_coefficients(profile: &AtomicProfile, e: &BetaEval) -> (f64, f64) {
    let sb = profile.apply_s_unchecked(&e.b);
    let stl = profile.apply_s_star_unchecked(&e.ell);
    let lb: Vec<f64> = e.ell.iter().zip(&e.b).map(|(l, b)| l * b).collect();
    let c3: Vec<f64> = (0..lb.len()).map(|i| lb[i] * stl[i] * sb[i]).collect();
    (profile.avg_unchecked(&c3), profile.avg_unchecked(&lb))
}

/// Positive root of c3·ϑ³ + β·c1·ϑ − η = 0.
pub fn solve_edge_cubic(c3: f64, c1: f64, beta: f64, eta: f64) -> Result<f64> {
    if !(c3 > 0.0 && eta > 0.0) {
        return Err(Error::Argument("edge cubic needs c3 > 0 and eta > 0".into()));
    }
    // ϑ³ + pϑ − q = 0
    let p = beta * c1 / c3;
    let q = eta / c3;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut x = if disc >= 0.0 {
        let u = (q / 2.0 + disc.sqrt()).cbrt();
        let v = -p / (3.0 * u);
        if p > 0.0 {
            // u + v cancels; use (u³+v³)/(u²−uv+v²)
            q / (u * u + p / 3.0 + v * v)
        } else {
            u + v
        }
    } else {
        let r = (-p / 3.0).sqrt();
        let phi = ((-3.0 * q) / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0).acos();
        2.0 * r * (phi / 3.0).cos()
    };
    for _ in 0..3 {
        let f = x * x * x + p * x - q;
        let fp = 3.0 * x * x + p;
        if fp <= 0.0 {
            break;
        }
        let nx = x - f / fp;
        if !(nx > 0.0) {
            break;
        }
        x = nx;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn circular() -> AtomicProfile {
        AtomicProfile::scalar(vec![1.0], vec![c(0.0, 0.0)], 1.0).unwrap()
    }

    fn example31() -> AtomicProfile {
        AtomicProfile::scalar(vec![0.5, 0.5], vec![c(1.0, 0.0), c(-1.0, 0.0)], 1.0).unwrap()
    }

    #[test]
    fn circular_beta() {
        let p = circular();
        for z in [c(0.0, 0.0), c(0.3, 0.4), c(2.0, -1.0)] {
            let e = beta_eval(&p, z).unwrap();
            assert!((e.beta - (z.norm_sqr() - 1.0)).abs() < 1e-12);
            assert!((e.grad - z.conj()).norm() < 1e-12);
            assert!((e.b[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn example31_origin_is_singular() {
        let e = beta_eval(&example31(), c(0.0, 0.0)).unwrap();
        assert!(e.beta.abs() < 1e-14 && e.grad.norm() < 1e-14);
        assert!((e.lambda_pf.unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn general_path_matches_scalar() {
        let nu_atoms = vec![c(1.0, 0.5), c(-0.7, 0.2), c(0.1, -1.0)];
        let p = AtomicProfile::scalar(vec![0.2, 0.3, 0.5], nu_atoms, 1.3).unwrap();
        for z in [c(0.0, 0.0), c(1.0, 0.5), c(0.4, -0.2), c(3.0, 3.0)] {
            let a = beta_scalar(&p, z, 1.3).unwrap();
            let b = beta_general(&p, z).unwrap();
            assert!((a.beta - b.beta).abs() < 1e-9, "{} vs {}", a.beta, b.beta);
            assert!((a.grad - b.grad).norm() < 1e-8);
            assert!(b.eig_residual < 1e-10);
        }
    }

    #[test]
    fn nonsymmetric_kernel_eigen_residuals() {
        let p = AtomicProfile::new(
            vec![0.3, 0.7],
            vec![c(0.5, 0.2), c(-0.4, 0.1)],
            vec![vec![1.0, 0.5], vec![2.0, 1.5]],
        )
        .unwrap();
        let e = beta_eval(&p, c(0.2, 0.1)).unwrap();
        assert!(e.eig_residual < 1e-10);
        assert!(e.b.iter().chain(&e.ell).all(|x| *x > 0.0));
        let lam = e.lambda_pf.unwrap();
        assert_eq!(e.beta.signum(), (1.0 - lam).signum());
    }

    #[test]
    fn cubic_regimes() {
        let x = solve_edge_cubic(1.0, 1.0, 0.0, 0.008).unwrap();
        assert!((x - 0.2).abs() < 1e-14);
        let x = solve_edge_cubic(1.0, 1.0, -1.0, 1e-12).unwrap();
        assert!((x - 1.0).abs() < 1e-9);
        let x = solve_edge_cubic(1.0, 1.0, 1.0, 1e-6).unwrap();
        assert!((x / 1e-6 - 1.0).abs() < 1e-9);
        let x = solve_edge_cubic(2.0, 0.5, 3.0, 0.7).unwrap();
        assert!((2.0 * x * x * x + 1.5 * x - 0.7).abs() < 1e-14);
    }

    #[test]
    fn circle_edge_value() {
        let p = circular();
        for th in [0.0, 1.0, 2.5] {
            let z = Complex64::from_polar(1.0, th);
            assert!((edge_sigma(&p, z).unwrap() - 1.0 / PI).abs() < 1e-12);
        }
        assert!(edge_sigma(&p, c(0.5, 0.0)).is_err());
    }

    #[test]
    fn delta_sigma_example31_positive() {
        assert!(delta_sigma_at_singular(&example31(), c(0.0, 0.0)).unwrap() > 0.0);
        assert!(delta_sigma_at_singular(&circular(), c(0.0, 0.0)).is_err());
    }
}
