//! Example catalog, the threshold function f(ζ) = Σ νᵢ/|ζ−aᵢ|² with its
//! imaginary-axis derivatives, and the discrete truncated moment problems
//! that produce deformations with a prescribed singularity at 0.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Kind;
use crate::model::{AtomMeasure, AtomicProfile};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// f(ζ); `+∞` at an atom.
pub fn f_eval(nu: &AtomMeasure, zeta: Complex64) -> f64 {
    f_eval_weighted(&nu.atoms, &nu.masses, zeta)
}

/// f(ζ) for unnormalized masses.
pub fn f_eval_weighted(atoms: &[Complex64], masses: &[f64], zeta: Complex64) -> f64 {
    let mut s = 0.0;
    for (a, m) in atoms.iter().zip(masses) {
        let d = (zeta - a).norm_sqr();
        if d == 0.0 {
            return f64::INFINITY;
        }
        s += m / d;
    }
    s
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// ∂_y^k (1/|z|²) at z = w ≠ 0.
pub fn inv_abs_sq_dy(w: Complex64, k: usize) -> f64 {
    let wb = w.conj();
    let mut s = Complex64::new(0.0, 0.0);
    for l in 0..=k {
        let term = (wb.powi(l as i32 + 1) * w.powi((k - l) as i32 + 1)).inv();
        s += if l % 2 == 0 { term } else { -term };
    }
    (s * Complex64::new(0.0, -1.0).powi(k as i32)).re * factorial(k)
}

/// ∂_y^k f(0) for k = 1..=order_max.
pub fn f_axis_derivatives(nu: &AtomMeasure, order_max: usize) -> Result<Vec<f64>> {
    f_axis_derivatives_weighted(&nu.atoms, &nu.masses, order_max)
}

pub fn f_axis_derivatives_weighted(atoms: &[Complex64], masses: &[f64], order_max: usize) -> Result<Vec<f64>> {
    if atoms.iter().any(|a| a.norm_sqr() == 0.0) {
        return Err(Error::Argument("f is singular at 0: atom at the origin".into()));
    }
    Ok((1..=order_max)
        .map(|k| atoms.iter().zip(masses).map(|(a, m)| m * inv_abs_sq_dy(-a, k)).sum())
        .collect())
}

/// Δf(0) = 4 Σ νᵢ/|aᵢ|⁴.
pub fn f_laplacian_at_zero(atoms: &[Complex64], masses: &[f64]) -> f64 {
    atoms.iter().zip(masses).map(|(a, m)| 4.0 * m / a.norm_sqr().powi(2)).sum()
}

/// Atoms of f_a, each carrying a quarter of the mass.
pub fn f_a_atoms(a: Complex64) -> [Complex64; 4] {
    let inv = a.inv();
    [-inv, inv.conj(), -inv.conj(), inv]
}

/// Atoms of g_a, each carrying half of the mass.
pub fn g_a_atoms(a: Complex64) -> [Complex64; 2] {
    let inv = a.inv();
    [-inv, inv.conj()]
}

/// Merges coincident atoms and drops nothing else.
fn merge_atoms(raw: Vec<(Complex64, f64)>) -> (Vec<Complex64>, Vec<f64>) {
    let mut atoms: Vec<Complex64> = Vec::new();
    let mut masses: Vec<f64> = Vec::new();
    for (z, m) in raw {
        let scale = 1.0 + z.norm();
        match atoms.iter().position(|a| (a - z).norm() <= 1e-13 * scale) {
            Some(i) => masses[i] += m,
            None => {
                atoms.push(z);
                masses.push(m);
            }
        }
    }
    (atoms, masses)
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpectedPoint {
    pub location: Complex64,
    pub kind: Kind,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExampleSpec {
    pub name: String,
    pub nu: AtomMeasure,
    pub t: f64,
    pub expected: Vec<ExpectedPoint>,
    /// Radii of circular boundary components centred at 0, when known.
    pub boundary_radii: Vec<f64>,
    /// Radius of a circle of internal singularities of infinite order.
    pub singular_circle: Option<f64>,
}

pub const CATALOG: [&str; 6] = ["circular", "x2_minus_y2", "x2_plus_y2", "x2_y3", "x2_y4", "x2_infinity"];

pub fn example_x2_y3_constants() -> (f64, f64, Complex64) {
    let s7 = 7f64.sqrt();
    let t = 2.0 / 3.0 * (20.0 - 7.0 * s7);
    let delta = (-17.0 + 7.0 * s7) / 8.0;
    (t, delta, c(0.0, (s7 - 2.0) / 3.0))
}

pub fn make_example(name: &str) -> Result<(AtomicProfile, ExampleSpec)> {
    make_example_with(name, 256)
}

/// As `make_example`; `circle_atoms` sets the discretization of curves.
pub fn make_example_with(name: &str, circle_atoms: usize) -> Result<(AtomicProfile, ExampleSpec)> {
    let zero = c(0.0, 0.0);
    let (nu, t, expected, radii, circle) = match name {
        "circular" | "x2" => (AtomMeasure::new(vec![zero], vec![1.0])?, 1.0, vec![], vec![1.0], None),
        "x2_minus_y2" => (
            AtomMeasure::new(vec![c(1.0, 0.0), c(-1.0, 0.0)], vec![0.5, 0.5])?,
            1.0,
            vec![ExpectedPoint { location: zero, kind: Kind::Edge(1) }],
            vec![],
            None,
        ),
        "x2_plus_y2" => {
            let h = FRAC_1_SQRT_2;
            (
                AtomMeasure::new(vec![c(h, h), c(h, -h), c(-h, h), c(-h, -h)], vec![0.25; 4])?,
                1.0,
                vec![ExpectedPoint { location: zero, kind: Kind::Internal(1) }],
                vec![],
                None,
            )
        }
        "x2_y3" => {
            let (t, delta, z0) = example_x2_y3_constants();
            let w = 1.0 / (2.0 + delta);
            (
                AtomMeasure::new(vec![c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 1.0)], vec![w, w, delta * w])?,
                t,
                vec![ExpectedPoint { location: z0, kind: Kind::Edge(2) }],
                vec![],
                None,
            )
        }
        "x2_y4" => {
            let r = 3f64.sqrt();
            (
                AtomMeasure::new(vec![c(r, 1.0), c(r, -1.0), c(-r, 1.0), c(-r, -1.0)], vec![0.25; 4])?,
                4.0,
                vec![ExpectedPoint { location: zero, kind: Kind::Edge(3) }],
                vec![],
                None,
            )
        }
        "x2_infinity" => {
            if circle_atoms < 8 {
                return Err(Error::Argument("circle discretization needs at least 8 atoms".into()));
            }
            let mut atoms: Vec<Complex64> = (0..circle_atoms)
                .map(|j| Complex64::from_polar(2f64.sqrt(), 2.0 * PI * j as f64 / circle_atoms as f64))
                .collect();
            let mut masses = vec![0.5 / circle_atoms as f64; circle_atoms];
            atoms.push(zero);
            masses.push(0.5);
            (
                AtomMeasure::new(atoms, masses)?,
                1.0,
                vec![],
                vec![1.0, ((3.0 + 5f64.sqrt()) / 2.0).sqrt()],
                Some(1.0),
            )
        }
        _ => return Err(Error::Argument(format!("unknown example '{name}'; known: {}", CATALOG.join(", ")))),
    };
    let profile = AtomicProfile::from_measure(&nu, t)?;
    let spec = ExampleSpec { name: name.to_string(), nu, t, expected, boundary_radii: radii, singular_circle: circle };
    Ok((profile, spec))
}

// ---------------------------------------------------------------------------
// discrete truncated moment problems

/// Solution of a moment problem: masses `c` at first-quadrant points `z`.
#[derive(Clone, Debug, Serialize)]
pub struct MomentSolution {
    pub n: usize,
    pub c: Vec<f64>,
    pub z: Vec<Complex64>,
    /// Largest violation of the moment identities.
    pub residual: f64,
}

fn moment(c: &[f64], z: &[Complex64], p: i32) -> Complex64 {
    c.iter().zip(z).map(|(c, z)| z.powi(p) * *c).sum()
}

fn max_norm(v: impl Iterator<Item = Complex64>) -> f64 {
    v.map(|r| r.norm()).fold(0.0, |a: f64, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) })
}

/// Newton for Σᵢ cᵢ wᵢ^{pₖ} = rhsₖ, one equation per power.
fn newton_moments(c: &[f64], w0: &[Complex64], powers: &[i32], rhs: &[Complex64], iters: usize) -> Option<Vec<Complex64>> {
    use nalgebra::{DMatrix, DVector};
    let m = w0.len();
    let mut w = w0.to_vec();
    let scale = 1.0 + max_norm(rhs.iter().copied());
    let residual = |w: &[Complex64]| max_norm((0..m).map(|k| moment(c, w, powers[k]) - rhs[k]));
    for _ in 0..iters {
        let rn = residual(&w);
        if !rn.is_finite() {
            return None;
        }
        if rn <= 1e-14 * scale {
            return Some(w);
        }
        let res = DVector::from_fn(m, |k, _| moment(c, &w, powers[k]) - rhs[k]);
        let jac = DMatrix::from_fn(m, m, |k, i| w[i].powi(powers[k] - 1) * (powers[k] as f64 * c[i]));
        let step = jac.lu().solve(&res)?;
        for i in 0..m {
            w[i] -= step[i];
        }
    }
    (residual(&w) <= 1e-12 * scale).then_some(w)
}

/// `newton_moments` continued along the straight path from the current
/// moments of `w0` to `rhs`.
fn continue_moments(c: &[f64], w0: &[Complex64], powers: &[i32], rhs: &[Complex64]) -> Option<Vec<Complex64>> {
    let start: Vec<Complex64> = powers.iter().map(|&p| moment(c, w0, p)).collect();
    let mut w = w0.to_vec();
    let (mut lam, mut step) = (0.0f64, 0.125f64);
    while lam < 1.0 {
        let next = (lam + step).min(1.0);
        let target: Vec<Complex64> = start.iter().zip(rhs).map(|(s, r)| s + (r - s) * next).collect();
        match newton_moments(c, &w, powers, &target, 30) {
            Some(v) => {
                w = v;
                lam = next;
                step = (2.0 * step).min(0.25);
            }
            None if step > 1e-6 => step *= 0.5,
            None => return None,
        }
    }
    Some(w)
}

fn in_first_quadrant_distinct(z: &[Complex64]) -> bool {
    let scale = z.iter().map(|z| z.norm()).fold(0.0, f64::max);
    z.iter().all(|z| z.re > 1e-12 * scale && z.im > 1e-12 * scale)
        && (0..z.len()).all(|i| (0..i).all(|j| (z[i] - z[j]).norm() > 1e-8 * scale))
}

/// Unit ω in the open first quadrant with sign cos((2m−1)θ) = s1 and
/// sign cos((2m+1)θ) = s2, at the middle of the longest admissible arc.
fn pick_omega(m: usize, s1: f64, s2: f64) -> Result<Complex64> {
    let n = 20_000;
    let theta = |j: usize| (j as f64 + 0.5) * 0.5 * PI / n as f64;
    let ok = |j: usize| {
        let t = theta(j);
        ((2 * m - 1) as f64 * t).cos() * s1 > 0.0 && ((2 * m + 1) as f64 * t).cos() * s2 > 0.0
    };
    let (mut best, mut run_start) = ((0, 0), None);
    for j in 0..=n {
        match (j < n && ok(j), run_start) {
            (true, None) => run_start = Some(j),
            (false, Some(s)) => {
                if j - s > best.1 - best.0 {
                    best = (s, j);
                }
                run_start = None;
            }
            _ => {}
        }
    }
    if best.1 == best.0 {
        return Err(Error::Numerical(format!("no admissible direction at level {m}")));
    }
    Ok(Complex64::from_polar(1.0, 0.5 * (theta(best.0) + theta(best.1 - 1))))
}

/// Even moment problem: Re Σ cᵢ zᵢ^{2k+1} = 0 for k < n and
/// sign Re Σ cᵢ zᵢ^{2n+1} = `sign`, with |Re Σ cᵢ zᵢ^{2n+1}| = 1.
pub fn moment_even(n: usize, sign: i8) -> Result<MomentSolution> {
    if n == 0 || sign.abs() != 1 {
        return Err(Error::Argument("moment_even needs n >= 1 and sign = ±1".into()));
    }
    let target = sign as f64;
    let first = if n == 1 { target } else { 1.0 };
    let phi = if first > 0.0 { PI / 12.0 } else { PI / 3.0 };
    let rho = (3.0 * phi).cos().abs().powf(-1.0 / 3.0);
    let mut z = vec![Complex64::from_polar(rho, phi)];
    let mut c = vec![1.0];
    for m in 2..=n {
        let level = if m == n { target } else { 1.0 };
        let s_prev = moment(&c, &z, 2 * m as i32 - 1).re.signum();
        let omega = pick_omega(m, -s_prev, level)?;
        let denom = omega.powi(2 * m as i32 - 1).re.abs();
        let powers: Vec<i32> = (1..m).map(|k| 2 * k as i32 + 1).collect();
        let mut targets: Vec<Complex64> = powers.iter().map(|&p| moment(&c, &z, p)).collect();
        targets[m - 2] += omega.powi(2 * m as i32 - 1) / denom;
        let mut r: f64 = 0.5;
        let mut accepted = None;
        for _ in 0..40 {
            let rhs: Vec<Complex64> = (1..m)
                .map(|k| targets[k - 1] - omega.powi(2 * k as i32 + 1) * (r.powi(2 * (m - k) as i32 - 2) / denom))
                .collect();
            if let Some(w) = continue_moments(&c, &z, &powers, &rhs) {
                let mut zz = w;
                zz.push(omega / r);
                let mut cc = c.clone();
                cc.push(r.powi(2 * m as i32 - 1) / denom);
                let top = moment(&cc, &zz, 2 * m as i32 + 1).re;
                if in_first_quadrant_distinct(&zz) && top * level > 0.0 {
                    accepted = Some((cc, zz));
                    break;
                }
            }
            r *= 0.5;
        }
        let (cc, zz) = accepted.ok_or(Error::NoConvergence { iterations: 40, residual: r })?;
        c = cc;
        z = zz;
        let top = moment(&c, &z, 2 * m as i32 + 1).re.abs();
        c.iter_mut().for_each(|x| *x /= top);
    }
    let top = moment(&c, &z, 2 * n as i32 + 1).re;
    let residual = (1..n).map(|k| moment(&c, &z, 2 * k as i32 + 1).re.abs()).fold((top - target).abs(), f64::max);
    Ok(MomentSolution { n, c, z, residual })
}

/// Residual of the odd identities (−1)^{k+1} Im Σ c z^{2k} = 2k and
/// (−1)^{k+1} Re Σ c z^{2k+1} = 2k+1 for k ≤ n, and the slack of the
/// inequality (−1)^n Im Σ c z^{2n+2} < 2n+2 (positive when it holds).
pub fn odd_identities(c: &[f64], z: &[Complex64], n: usize) -> (f64, f64) {
    let mut res: f64 = 0.0;
    for k in 1..=n {
        let s = if k % 2 == 1 { 1.0 } else { -1.0 };
        res = res.max((s * moment(c, z, 2 * k as i32).im - 2.0 * k as f64).abs());
        res = res.max((s * moment(c, z, 2 * k as i32 + 1).re - (2 * k + 1) as f64).abs());
    }
    let sn = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    (res, (2 * n + 2) as f64 - sn * moment(c, z, 2 * n as i32 + 2).im)
}

fn extra_atom(level: usize, k: usize) -> Complex64 {
    Complex64::from_polar(0.5 + 0.05 * k as f64, PI / 4.0 + 0.07 * level as f64 - 0.11 * k as f64)
}

/// Odd moment problem with 2n+2 atoms.
pub fn moment_odd(n: usize) -> Result<MomentSolution> {
    moment_odd_with(n, 10.0, [c(0.5, 1.2), c(1.2, 0.5), c(0.3, 0.3)])
}

#[doc(hidden)]
pub fn moment_odd_with(n: usize, delta0: f64, extras: [Complex64; 3]) -> Result<MomentSolution> {
    if n == 0 {
        return Err(Error::Argument("moment_odd needs n >= 1".into()));
    }
    // base pair, perturbed by three light atoms
    let c1 = 32.0 / 9.0;
    let z1 = Complex64::from_polar(0.75 * 2f64.sqrt(), PI / 12.0);
    let mut delta = delta0;
    let mut base = None;
    for _ in 0..30 {
        let mut cc = vec![c1];
        cc.extend([delta; 3]);
        let mut zz = vec![z1];
        zz.extend(extras);
        let rest_c = &cc[1..];
        let rest_z = &zz[1..];
        let t2 = 2.0 - moment(rest_c, rest_z, 2).im;
        let t3 = 3.0 - moment(rest_c, rest_z, 3).re;
        let mut z = z1;
        for _ in 0..50 {
            let (x, y) = (z.re, z.im);
            let f = [c1 * z.powi(2).im - t2, c1 * z.powi(3).re - t3];
            let j = [[2.0 * y * c1, 2.0 * x * c1], [(3.0 * x * x - 3.0 * y * y) * c1, -6.0 * x * y * c1]];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let dx = (f[0] * j[1][1] - f[1] * j[0][1]) / det;
            let dy = (j[0][0] * f[1] - j[1][0] * f[0]) / det;
            z -= Complex64::new(dx, dy);
            if dx.hypot(dy) < 1e-15 {
                break;
            }
        }
        zz[0] = z;
        let (res, slack) = odd_identities(&cc, &zz, 1);
        if res < 1e-12 && slack > 0.0 && in_first_quadrant_distinct(&zz) {
            base = Some((cc, zz));
            break;
        }
        delta *= 0.5;
    }
    let (mut c, mut z) = base.ok_or_else(|| Error::Numerical("odd base case failed".into()))?;
    for m in 2..=n {
        let s = if m % 2 == 1 { 1.0 } else { -1.0 };
        let f2m = moment(&c, &z, 2 * m as i32);
        let f2m1 = moment(&c, &z, 2 * m as i32 + 1);
        let a_num = 2.0 * m as f64 - s * f2m.im;
        if !(a_num > 0.0) {
            return Err(Error::Numerical(format!("odd induction hypothesis fails at level {m}")));
        }
        let alpha = |phi: f64| a_num / (s * (2.0 * m as f64 * phi).sin());
        let rr = s * (2 * m + 1) as f64 - f2m1.re;
        let phi_star = PI / 2.0 - PI / (2 * m + 1) as f64;
        // stay between consecutive zeros of sin(2mφ), where α > 0
        let zero_step = PI / (2 * m) as f64;
        let below = (phi_star / zero_step).floor() * zero_step;
        let above = (below + zero_step).min(PI / 2.0);
        let cap = 0.45 * PI / (2 * m + 1) as f64;
        let (span_lo, span_hi) = (cap.min(0.95 * (phi_star - below)), cap.min(0.95 * (above - phi_star)));
        let powers: Vec<i32> = (2..=2 * m as i32 + 1).collect();
        let old: Vec<Complex64> = powers.iter().map(|&p| moment(&c, &z, p)).collect();
        let mut r: f64 = 0.5;
        let mut accepted = None;
        for _ in 0..40 {
            let h = |phi: f64| alpha(phi) * ((2 * m + 1) as f64 * phi).cos() - r * rr;
            // h(φ*) = −r·R and cos((2m+1)φ) changes sign at φ*
            let phi = if rr == 0.0 {
                phi_star
            } else {
                let (lo, hi) = if h(phi_star - span_lo) * h(phi_star) <= 0.0 {
                    (phi_star - span_lo, phi_star)
                } else if h(phi_star + span_hi) * h(phi_star) <= 0.0 {
                    (phi_star, phi_star + span_hi)
                } else {
                    r *= 0.5;
                    continue;
                };
                let (mut lo, mut hi) = (lo, hi);
                let hlo = h(lo);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if h(mid) * hlo > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            let a = alpha(phi);
            if !(a > 0.0 && phi > 0.0 && phi < PI / 2.0) {
                r *= 0.5;
                continue;
            }
            let c_new = a * r.powi(2 * m as i32);
            let z_new = Complex64::from_polar(1.0 / r, phi);
            let rhs: Vec<Complex64> = powers
                .iter()
                .map(|&p| if p < 2 * m as i32 { old[(p - 2) as usize] - z_new.powi(p) * c_new } else { old[(p - 2) as usize] })
                .collect();
            if let Some(w) = continue_moments(&c, &z, &powers, &rhs) {
                let mut zz = w;
                zz.push(z_new);
                let mut cc = c.clone();
                cc.push(c_new);
                let (res, slack) = odd_identities(&cc, &zz, m);
                if res < 1e-10 && slack > 0.0 && in_first_quadrant_distinct(&zz) {
                    accepted = Some((cc, zz));
                    break;
                }
            }
            r *= 0.5;
        }
        let (cc, zz) = accepted.ok_or(Error::NoConvergence { iterations: 40, residual: r })?;
        // one more light atom, compensated by the first 2m atoms
        let totals: Vec<Complex64> = powers.iter().map(|&p| moment(&cc, &zz, p)).collect();
        let ze = extra_atom(m, 0);
        let mut delta = 0.1 * cc.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut done = None;
        for _ in 0..40 {
            let fixed_c = [cc[2 * m], delta];
            let fixed_z = [zz[2 * m], ze];
            let rhs: Vec<Complex64> = powers.iter().enumerate().map(|(k, &p)| totals[k] - moment(&fixed_c, &fixed_z, p)).collect();
            if let Some(w) = continue_moments(&cc[..2 * m], &zz[..2 * m], &powers, &rhs) {
                let mut z2 = w;
                z2.extend(fixed_z);
                let mut c2 = cc[..2 * m].to_vec();
                c2.extend(fixed_c);
                let (res, slack) = odd_identities(&c2, &z2, m);
                if res < 1e-10 && slack > 0.0 && in_first_quadrant_distinct(&z2) {
                    done = Some((c2, z2));
                    break;
                }
            }
            delta *= 0.5;
        }
        let (c2, z2) = done.ok_or_else(|| Error::Numerical(format!("could not add the extra atom at level {m}")))?;
        c = c2;
        z = z2;
    }
    let (residual, _) = odd_identities(&c, &z, n);
    Ok(MomentSolution { n, c, z, residual })
}

/// Merges, normalizes to probability masses and dilates so that f(0) = 1.
fn unit_threshold_measure(raw: Vec<(Complex64, f64)>) -> Result<AtomMeasure> {
    let (atoms, masses) = merge_atoms(raw);
    let total: f64 = masses.iter().sum();
    let masses: Vec<f64> = masses.iter().map(|m| m / total).collect();
    let f0 = f_eval_weighted(&atoms, &masses, c(0.0, 0.0));
    let lambda = f0.sqrt();
    AtomMeasure::new(atoms.iter().map(|a| a * lambda).collect(), masses)
}

/// ν with f − 1 of type x² + τ y^{2n} at 0 (t = 1).
pub fn construct_even(n: usize, tau: i8) -> Result<(MomentSolution, AtomMeasure)> {
    if n < 2 || tau.abs() != 1 {
        return Err(Error::Argument("construct_even needs n >= 2 and tau = ±1".into()));
    }
    let sign = if n.is_multiple_of(2) { tau } else { -tau };
    let sol = moment_even(n, sign)?;
    let total: f64 = sol.c.iter().sum();
    let mut raw = Vec::new();
    for (ci, a) in sol.c.iter().zip(&sol.z) {
        let m = ci / total * a.re / (4.0 * a.norm_sqr());
        raw.extend(f_a_atoms(*a).iter().map(|z| (*z, m)));
    }
    Ok((sol, unit_threshold_measure(raw)?))
}

/// ν with f − 1 of type x² − y^{2n+1} at 0 (t = 1).
pub fn construct_odd(n: usize) -> Result<(MomentSolution, AtomMeasure)> {
    let sol = moment_odd(n)?;
    let nu = odd_measure(&sol)?;
    Ok((sol, nu))
}

#[doc(hidden)]
pub fn odd_measure(sol: &MomentSolution) -> Result<AtomMeasure> {
    let mut raw = Vec::new();
    for (ci, a) in sol.c.iter().zip(&sol.z) {
        let m = ci * a.re / (2.0 * a.norm_sqr());
        raw.extend(g_a_atoms(*a).iter().map(|z| (*z, m)));
    }
    raw.push((c(0.0, -1.0), 1.0));
    unit_threshold_measure(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_values() {
        let nu = AtomMeasure::new(vec![c(1.0, 0.0), c(-1.0, 0.0)], vec![0.5, 0.5]).unwrap();
        assert_eq!(f_eval(&nu, c(0.0, 0.0)), 1.0);
        assert!(f_eval(&nu, c(1.0, 0.0)).is_infinite());
        let (t, delta, z0) = example_x2_y3_constants();
        let v = f_eval_weighted(&[c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 1.0)], &[1.0, 1.0, delta], z0);
        assert!((v - (2.0 + delta) / t).abs() < 1e-10);
    }

    #[test]
    fn f_a_second_derivatives() {
        let fa = |a: Complex64| {
            let atoms = f_a_atoms(a).to_vec();
            f_axis_derivatives_weighted(&atoms, &[0.25; 4], 4).unwrap()
        };
        let d = fa(c(1.0, 0.0));
        assert!((d[1] + 2.0).abs() < 1e-13);
        assert!((f_laplacian_at_zero(&f_a_atoms(c(1.0, 0.0)), &[0.25; 4]) - 4.0).abs() < 1e-13);
        let d = fa(c(FRAC_1_SQRT_2, FRAC_1_SQRT_2));
        assert!((d[1] - 2.0).abs() < 1e-13);
        let g = g_a_atoms(Complex64::from_polar(1.0, PI / 4.0));
        let d = f_axis_derivatives_weighted(&g, &[0.5; 2], 1).unwrap();
        assert!((d[0] - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn general_f_a_formulas() {
        let a = c(0.7, 0.4);
        let d = f_axis_derivatives_weighted(&f_a_atoms(a), &[0.25; 4], 8).unwrap();
        let g = f_axis_derivatives_weighted(&g_a_atoms(a), &[0.5; 2], 8).unwrap();
        for k in 1..=4usize {
            let even = (if k % 2 == 0 { 1.0 } else { -1.0 }) * factorial(2 * k) * a.norm_sqr() * a.powi(2 * k as i32 + 1).re / a.re;
            assert!((d[2 * k - 1] - even).abs() < 1e-9 * even.abs().max(1.0));
            let odd = (if k % 2 == 1 { 1.0 } else { -1.0 }) * factorial(2 * k - 1) * a.norm_sqr() * a.powi(2 * k as i32).im / a.re;
            assert!((g[2 * k - 2] - odd).abs() < 1e-9 * odd.abs().max(1.0));
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let atoms = [c(1.0, 0.3), c(-0.5, 1.2), c(0.2, -0.9)];
        let m = [0.2, 0.5, 0.3];
        let d = f_axis_derivatives_weighted(&atoms, &m, 5).unwrap();
        let h = 1e-2;
        let f = |y: f64| f_eval_weighted(&atoms, &m, c(0.0, y));
        // fourth-order central stencils
        let d1 = (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h);
        let d2 = (-f(-2.0 * h) + 16.0 * f(-h) - 30.0 * f(0.0) + 16.0 * f(h) - f(2.0 * h)) / (12.0 * h * h);
        assert!((d1 - d[0]).abs() < 1e-6 * d[0].abs().max(1.0));
        assert!((d2 - d[1]).abs() < 1e-6 * d[1].abs().max(1.0));
    }

    #[test]
    fn catalog_thresholds() {
        for name in CATALOG {
            let (p, spec) = make_example(name).unwrap();
            assert_eq!(p.len(), spec.nu.len());
            for e in &spec.expected {
                let f = f_eval(&spec.nu, e.location);
                assert!((f - 1.0 / spec.t).abs() < 1e-12, "{name}: f = {f}");
            }
        }
        assert!(make_example("nope").unwrap_err().is_config());
    }

    #[test]
    fn merge_coincident() {
        let (a, m) = merge_atoms(f_a_atoms(c(1.0, 0.0)).iter().map(|z| (*z, 0.25)).collect());
        assert_eq!(a.len(), 2);
        assert_eq!(m, vec![0.5, 0.5]);
    }

    fn polar_moment(c: &[f64], z: &[Complex64], p: i32) -> Complex64 {
        c.iter().zip(z).map(|(c, z)| Complex64::from_polar(c * z.norm().powi(p), p as f64 * z.arg())).sum()
    }

    fn assert_postconditions(sol: &MomentSolution) {
        assert!(sol.c.iter().all(|&x| x > 0.0));
        assert!(sol.z.iter().all(|z| z.re > 0.0 && z.im > 0.0));
        for i in 0..sol.z.len() {
            for j in 0..i {
                assert!((sol.z[i] - sol.z[j]).norm() > 1e-8);
            }
        }
    }

    #[test]
    fn even_base_case() {
        let sol = moment_even(1, 1).unwrap();
        assert_eq!(sol.z.len(), 1);
        assert!((sol.c[0] * sol.z[0].powi(3).re - 1.0).abs() <= 1e-12);
        let sol = moment_even(1, -1).unwrap();
        assert!((sol.c[0] * sol.z[0].powi(3).re + 1.0).abs() <= 1e-12);
    }

    #[test]
    fn even_moments_and_derivatives() {
        for n in 2..=3 {
            for tau in [1i8, -1] {
                let (sol, nu) = construct_even(n, tau).unwrap();
                assert_postconditions(&sol);
                assert_eq!(sol.z.len(), n);
                let top = polar_moment(&sol.c, &sol.z, 2 * n as i32 + 1).re;
                for k in 1..n {
                    assert!(polar_moment(&sol.c, &sol.z, 2 * k as i32 + 1).re.abs() <= 1e-9 * top.abs());
                }
                let expected_sign = if n % 2 == 0 { tau } else { -tau };
                assert_eq!(top.signum(), expected_sign as f64);
                assert!((f_eval(&nu, c(0.0, 0.0)) - 1.0).abs() < 1e-12);
                let d = f_axis_derivatives(&nu, 2 * n).unwrap();
                for (k, v) in d.iter().enumerate().take(2 * n - 1) {
                    assert!(v.abs() < 1e-8 * d[2 * n - 1].abs(), "order {}: {v}", k + 1);
                }
                assert_eq!(d[2 * n - 1].signum(), tau as f64);
            }
        }
        assert!(construct_even(1, 1).is_err());
    }

    #[test]
    fn odd_base_pair() {
        let z = Complex64::from_polar(0.75 * 2f64.sqrt(), PI / 12.0);
        let c1 = 32.0 / 9.0;
        assert!((c1 * z.powi(2).im - 2.0).abs() < 1e-12);
        assert!((c1 * z.powi(3).re - 3.0).abs() < 1e-12);
    }

    #[test]
    fn odd_moments_and_derivatives() {
        for n in 1..=2 {
            let (sol, nu) = construct_odd(n).unwrap();
            assert_postconditions(&sol);
            assert_eq!(sol.z.len(), 2 * n + 2);
            for k in 1..=n {
                let s = if k % 2 == 1 { 1.0 } else { -1.0 };
                assert!((s * polar_moment(&sol.c, &sol.z, 2 * k as i32).im - 2.0 * k as f64).abs() <= 1e-8);
                assert!((s * polar_moment(&sol.c, &sol.z, 2 * k as i32 + 1).re - (2 * k + 1) as f64).abs() <= 1e-8);
            }
            let sn = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert!(sn * polar_moment(&sol.c, &sol.z, 2 * n as i32 + 2).im < (2 * n + 2) as f64);
            let d = f_axis_derivatives(&nu, 2 * n + 1).unwrap();
            for v in &d[..2 * n] {
                assert!(v.abs() < 1e-8 * d[2 * n].abs());
            }
            assert!(d[2 * n] < 0.0);
        }
    }

    #[test]
    fn constructed_measures_are_mirror_symmetric() {
        let nus = [construct_even(2, 1).unwrap().1, construct_odd(1).unwrap().1];
        for nu in &nus {
            for j in 0..50 {
                let z = Complex64::from_polar(0.05 + 0.03 * j as f64, 0.7 * j as f64);
                let (a, b) = (f_eval(nu, z), f_eval(nu, -z.conj()));
                assert!((a - b).abs() <= 1e-12 * a.abs());
            }
        }
    }
}
