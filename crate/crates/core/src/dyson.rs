//! Vector Dyson equation for (v1, v2), its η → 0 continuation and the
//! off-diagonal component y.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AtomicProfile;
use crate::roots::bisect_decreasing;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub eta_start: f64,
    pub eta_factor: f64,
    pub eta_floor: f64,
    pub bulk_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
            eta_start: 1.0,
            eta_factor: 0.5,
            eta_floor: 1e-10,
            bulk_threshold: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DysonState {
    pub zeta: Complex64,
    pub eta: f64,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub y: Vec<Complex64>,
    pub residual: f64,
    pub iterations: usize,
}

impl DysonState {
    pub fn avg_v1(&self, profile: &AtomicProfile) -> f64 {
        profile.avg_unchecked(&self.v1)
    }

    pub fn avg_y(&self, profile: &AtomicProfile) -> Complex64 {
        profile.avg_unchecked(&self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Inside,
    Outside,
}

#[derive(Clone, Debug)]
pub struct Continuation {
    /// Floor state when inside; v = 0, η = 0 when outside.
    pub state: DysonState,
    pub region: Region,
    /// Last solved state on the ladder (at the floor η).
    pub floor: DysonState,
    /// (η, ⟨v1⟩) for every rung.
    pub ladder: Vec<(f64, f64)>,
}

struct Eval {
    g: Vec<f64>,
    defect: f64,
    r1: Vec<f64>,
    r2: Vec<f64>,
    q1: Vec<f64>,
    q2: Vec<f64>,
}

struct Problem<'a> {
    p: &'a AtomicProfile,
    d: Vec<f64>,
    eta: f64,
}

impl<'a> Problem<'a> {
    fn eval(&self, v1: &[f64], v2: &[f64]) -> Eval {
        let k = v1.len();
        let sv2 = self.p.apply_s_unchecked(v2);
        let stv1 = self.p.apply_s_star_unchecked(v1);
        let mut g = vec![0.0; 2 * k];
        let mut r1 = vec![0.0; k];
        let mut r2 = vec![0.0; k];
        let mut q1 = vec![0.0; k];
        let mut q2 = vec![0.0; k];
        let mut defect: f64 = 0.0;
        for i in 0..k {
            q1[i] = self.eta + stv1[i];
            q2[i] = self.eta + sv2[i];
            r1[i] = self.eta + sv2[i] + self.d[i] / q1[i];
            r2[i] = self.eta + stv1[i] + self.d[i] / q2[i];
            let a = v1[i] * r1[i];
            let b = v2[i] * r2[i];
            g[i] = a.ln();
            g[k + i] = b.ln();
            defect = defect.max((a - 1.0).abs()).max((b - 1.0).abs());
        }
        if !defect.is_finite() {
            defect = f64::INFINITY;
        }
        Eval { g, defect, r1, r2, q1, q2 }
    }

    /// Newton direction in log variables.
    fn newton_direction(&self, v1: &[f64], v2: &[f64], e: &Eval) -> Option<Vec<f64>> {
        let k = v1.len();
        let rhs: Vec<f64> = e.g.iter().map(|x| -x).collect();
        if let Some(t) = self.p.scalar_variance() {
            // J = I + U Wᵀ with rank two
            let mu = self.p.weights();
            let mut c1 = vec![0.0; 2 * k];
            let mut c2 = vec![0.0; 2 * k];
            let mut w1 = vec![0.0; 2 * k];
            let mut w2 = vec![0.0; 2 * k];
            for i in 0..k {
                c1[i] = -self.d[i] / (e.r1[i] * e.q1[i] * e.q1[i]);
                c1[k + i] = 1.0 / e.r2[i];
                c2[i] = 1.0 / e.r1[i];
                c2[k + i] = -self.d[i] / (e.r2[i] * e.q2[i] * e.q2[i]);
                w1[i] = t * mu[i] * v1[i];
                w2[k + i] = t * mu[i] * v2[i];
            }
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let m11 = 1.0 + dot(&w1, &c1);
            let m12 = dot(&w1, &c2);
            let m21 = dot(&w2, &c1);
            let m22 = 1.0 + dot(&w2, &c2);
            let det = m11 * m22 - m12 * m21;
            if !(det.is_finite()) || det == 0.0 {
                return None;
            }
            let z1 = dot(&w1, &rhs);
            let z2 = dot(&w2, &rhs);
            let x1 = (m22 * z1 - m12 * z2) / det;
            let x2 = (m11 * z2 - m21 * z1) / det;
            Some((0..2 * k).map(|i| rhs[i] - c1[i] * x1 - c2[i] * x2).collect())
        } else {
            let mu = self.p.weights();
            let mut j = DMatrix::<f64>::identity(2 * k, 2 * k);
            for i in 0..k {
                let a1 = -self.d[i] / (e.r1[i] * e.q1[i] * e.q1[i]);
                let a2 = -self.d[i] / (e.r2[i] * e.q2[i] * e.q2[i]);
                for jj in 0..k {
                    let s = self.p.kernel_entry(i, jj) * mu[jj];
                    let st = self.p.kernel_entry(jj, i) * mu[jj];
                    j[(i, jj)] += a1 * st * v1[jj];
                    j[(i, k + jj)] += s * v2[jj] / e.r1[i];
                    j[(k + i, jj)] += st * v1[jj] / e.r2[i];
                    j[(k + i, k + jj)] += a2 * s * v2[jj];
                }
            }
            let sol = j.lu().solve(&DVector::from_vec(rhs))?;
            if sol.iter().all(|x| x.is_finite()) {
                Some(sol.as_slice().to_vec())
            } else {
                None
            }
        }
    }

    fn rebalance(&self, v1: &mut [f64], v2: &mut [f64]) {
        let a1 = self.p.avg_unchecked(v1);
        let a2 = self.p.avg_unchecked(v2);
        if a1 > 0.0 && a2 > 0.0 {
            let c = (a2 / a1).sqrt();
            v1.iter_mut().for_each(|x| *x *= c);
            v2.iter_mut().for_each(|x| *x /= c);
        }
    }

    /// One damped sweep of the rewritten equation, v1 first.
    fn sweep(&self, v1: &mut [f64], v2: &mut [f64], omega: f64) {
        let k = v1.len();
        let sv2 = self.p.apply_s_unchecked(v2);
        let stv1 = self.p.apply_s_star_unchecked(v1);
        for i in 0..k {
            let upd = 1.0 / (self.eta + sv2[i] + self.d[i] / (self.eta + stv1[i]));
            v1[i] = (1.0 - omega) * v1[i] + omega * upd;
        }
        let stv1 = self.p.apply_s_star_unchecked(v1);
        for i in 0..k {
            let upd = 1.0 / (self.eta + stv1[i] + self.d[i] / (self.eta + sv2[i]));
            v2[i] = (1.0 - omega) * v2[i] + omega * upd;
        }
    }
}

/// Solves the Dyson equation at (ζ, η) from the large-η initial guess.
pub fn solve_dyson(profile: &AtomicProfile, zeta: Complex64, eta: f64, opts: &SolverOptions) -> Result<DysonState> {
    solve_from(profile, zeta, eta, None, opts)
}

/// Same as [`solve_dyson`] with an optional warm start (v1, v2).
pub fn solve_from(
    profile: &AtomicProfile,
    zeta: Complex64,
    eta: f64,
    init: Option<(&[f64], &[f64])>,
    opts: &SolverOptions,
) -> Result<DysonState> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Argument(format!("eta must be positive, got {eta}")));
    }
    let k = profile.len();
    let prob = Problem { p: profile, d: profile.dist_sq(zeta), eta };
    let (mut v1, mut v2) = match init {
        Some((a, b)) if a.len() == k && b.len() == k && a.iter().chain(b).all(|x| *x > 0.0 && x.is_finite()) => {
            (a.to_vec(), b.to_vec())
        }
        _ => (vec![1.0 / (1.0 + eta); k], vec![1.0 / (1.0 + eta); k]),
    };
    let mut e = prob.eval(&v1, &v2);
    let mut iterations = 0;
    let mut omega = 1.0;
    while e.defect >= opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence { iterations, residual: e.defect });
        }
        iterations += 1;
        let mut accepted = false;
        if let Some(dir) = prob.newton_direction(&v1, &v2, &e) {
            let gnorm = e.g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let mut step = 1.0;
            // keep log steps moderate far from the solution
            let dmax = dir.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if dmax > 2.0 {
                step = 2.0 / dmax;
            }
            for _ in 0..30 {
                let mut n1: Vec<f64> = (0..k).map(|i| v1[i] * (step * dir[i]).exp()).collect();
                let mut n2: Vec<f64> = (0..k).map(|i| v2[i] * (step * dir[k + i]).exp()).collect();
                prob.rebalance(&mut n1, &mut n2);
                let ne = prob.eval(&n1, &n2);
                let nnorm = ne.g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                if nnorm.is_finite() && (nnorm < gnorm || ne.defect < opts.tol) {
                    v1 = n1;
                    v2 = n2;
                    e = ne;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
        }
        if !accepted {
            // damped fixed-point fallback
            let before = e.defect;
            for _ in 0..20 {
                prob.sweep(&mut v1, &mut v2, omega);
                iterations += 1;
            }
            e = prob.eval(&v1, &v2);
            if !(e.defect < before) {
                omega = (omega * 0.5).max(1e-3);
            }
        }
    }
    let mut state = DysonState { zeta, eta, v1, v2, y: Vec::new(), residual: e.defect, iterations };
    state.y = compute_y(profile, &state);
    Ok(state)
}

/// Walks η down a geometric ladder with warm starts.
pub fn eta_continuation(profile: &AtomicProfile, zeta: Complex64, opts: &SolverOptions) -> Result<Continuation> {
    if !(opts.eta_factor > 0.0 && opts.eta_factor < 1.0) || !(opts.eta_floor > 0.0) || opts.eta_start < opts.eta_floor {
        return Err(Error::Argument("invalid eta ladder options".into()));
    }
    let mut ladder = Vec::new();
    let mut eta = opts.eta_start;
    let mut state: Option<DysonState> = None;
    loop {
        let init = state.as_ref().map(|s| (s.v1.as_slice(), s.v2.as_slice()));
        let s = solve_from(profile, zeta, eta, init, opts)?;
        ladder.push((eta, s.avg_v1(profile)));
        state = Some(s);
        if eta <= opts.eta_floor {
            break;
        }
        eta = (eta * opts.eta_factor).max(opts.eta_floor);
    }
    let floor = state.expect("ladder has at least one rung");
    let avg = floor.avg_v1(profile);
    if avg > opts.bulk_threshold {
        Ok(Continuation { state: floor.clone(), region: Region::Inside, floor, ladder })
    } else {
        let k = profile.len();
        let y = profile.deformation().iter().map(|a| 1.0 / (a - zeta)).collect();
        let out = DysonState { zeta, eta: 0.0, v1: vec![0.0; k], v2: vec![0.0; k], y, residual: floor.residual, iterations: floor.iterations };
        Ok(Continuation { state: out, region: Region::Outside, floor, ladder })
    }
}

/// Primary form y = v1·conj(a−ζ)/(η + S*v1); 1/(a−ζ) when v vanishes at η = 0.
pub fn compute_y(profile: &AtomicProfile, state: &DysonState) -> Vec<Complex64> {
    let a = profile.deformation();
    if state.eta == 0.0 && state.v1.iter().all(|x| *x == 0.0) {
        return a.iter().map(|ai| 1.0 / (ai - state.zeta)).collect();
    }
    let stv1 = profile.apply_s_star_unchecked(&state.v1);
    (0..profile.len())
        .map(|i| state.v1[i] * (a[i] - state.zeta).conj() / (state.eta + stv1[i]))
        .collect()
}

/// Alternative form (1 − v1(η + S v2))/(a − ζ); `None` if ζ is an atom.
pub fn y_alternative(profile: &AtomicProfile, state: &DysonState) -> Option<Vec<Complex64>> {
    let a = profile.deformation();
    if a.contains(&state.zeta) {
        return None;
    }
    let sv2 = profile.apply_s_unchecked(&state.v2);
    Some(
        (0..profile.len())
            .map(|i| (1.0 - state.v1[i] * (state.eta + sv2[i])) / (a[i] - state.zeta))
            .collect(),
    )
}

/// Sup-norm defect of the 2×2 matrix Dyson equation −M⁻¹ = Z + Σ[M] per atom.
pub fn mde_check(profile: &AtomicProfile, state: &DysonState) -> Result<f64> {
    if !(state.eta > 0.0) {
        return Err(Error::Argument("mde_check needs eta > 0".into()));
    }
    let i = Complex64::i();
    let sv2 = profile.apply_s(&state.v2)?;
    let stv1 = profile.apply_s_star(&state.v1)?;
    let a = profile.deformation();
    let mut worst: f64 = 0.0;
    for k in 0..profile.len() {
        let y = state.y[k];
        let m11 = i * state.v1[k];
        let m12 = y.conj();
        let m21 = y;
        let m22 = i * state.v2[k];
        let det = m11 * m22 - m12 * m21;
        if det.norm() < 1e-300 {
            return Err(Error::Numerical(format!("singular 2x2 block at atom {k}")));
        }
        let inv = [[m22 / det, -m12 / det], [-m21 / det, m11 / det]];
        let w = state.zeta - a[k];
        let target = [[i * (state.eta + sv2[k]), w], [w.conj(), i * (state.eta + stv1[k])]];
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((-inv[r][c] - target[r][c]).norm());
            }
        }
    }
    Ok(worst)
}

/// κ at η = 0 for a constant kernel t: root of 1 = t⟨1/(κ² + |a−ζ|²)⟩, or 0.
pub fn solve_kappa(profile: &AtomicProfile, zeta: Complex64) -> Result<f64> {
    let t = profile
        .scalar_variance()
        .ok_or_else(|| Error::Argument("solve_kappa needs a constant kernel".into()))?;
    let d = profile.dist_sq(zeta);
    let mu = profile.weights();
    let g = |u: f64| t * d.iter().zip(mu).map(|(di, m)| m / (u + di)).sum::<f64>() - 1.0;
    if d.iter().all(|x| *x > 0.0) && g(0.0) <= 0.0 {
        return Ok(0.0);
    }
    // g(t) ≤ 0 since u + d ≥ t there
    let u = bisect_decreasing(g, 0.0, t, 1e-15);
    Ok(u.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circular() -> AtomicProfile {
        AtomicProfile::scalar(vec![1.0], vec![Complex64::new(0.0, 0.0)], 1.0).unwrap()
    }

    fn example31() -> AtomicProfile {
        AtomicProfile::scalar(vec![0.5, 0.5], vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)], 1.0).unwrap()
    }

    #[test]
    fn circular_at_origin() {
        let opts = SolverOptions::default();
        let s = solve_dyson(&circular(), Complex64::new(0.0, 0.0), 1e-9, &opts).unwrap();
        assert!((s.v1[0] - 1.0).abs() < 1e-8 && (s.v2[0] - 1.0).abs() < 1e-8);
        assert!(s.residual < 1e-12);
    }

    #[test]
    fn large_eta_asymptote() {
        let eta = 1e3;
        let s = solve_dyson(&circular(), Complex64::new(0.0, 0.0), eta, &SolverOptions::default()).unwrap();
        // exact: v = (√(η²+4) − η)/2, written without cancellation
        let exact = 2.0 / ((eta * eta + 4.0).sqrt() + eta);
        assert!((s.v1[0] / exact - 1.0).abs() < 1e-11);
        assert!((s.v1[0] - 1.0 / (1.0 + eta)).abs() * eta * eta < 2.0);
    }

    #[test]
    fn outside_vanishes() {
        let eta = 1e-6;
        let s = solve_dyson(&circular(), Complex64::new(10.0, 0.0), eta, &SolverOptions::default()).unwrap();
        assert!((s.v1[0] / (eta / 99.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_nonpositive_eta() {
        assert!(solve_dyson(&circular(), Complex64::new(0.0, 0.0), 0.0, &SolverOptions::default()).is_err());
    }

    #[test]
    fn continuation_regions() {
        let opts = SolverOptions::default();
        let c = eta_continuation(&circular(), Complex64::new(0.0, 0.0), &opts).unwrap();
        assert_eq!(c.region, Region::Inside);
        assert!((c.state.avg_v1(&circular()) - 1.0).abs() < 1e-8);
        let c = eta_continuation(&circular(), Complex64::new(2.0, 0.0), &opts).unwrap();
        assert_eq!(c.region, Region::Outside);
        assert!(c.state.v1.iter().all(|x| *x == 0.0));
        assert!((c.state.y[0] - Complex64::new(-0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn edge_scaling_one_third() {
        let p = example31();
        let c = eta_continuation(&p, Complex64::new(0.0, 0.0), &SolverOptions::default()).unwrap();
        let n = c.ladder.len();
        let (e1, a1) = c.ladder[n - 11];
        let (e2, a2) = c.ladder[n - 1];
        let slope = (a1.ln() - a2.ln()) / (e1.ln() - e2.ln());
        assert!((slope - 1.0 / 3.0).abs() < 0.02, "slope {slope}");
    }

    #[test]
    fn kappa_values() {
        assert!((solve_kappa(&circular(), Complex64::new(0.0, 0.0)).unwrap() - 1.0).abs() < 1e-14);
        let p = example31();
        assert_eq!(solve_kappa(&p, Complex64::new(0.0, 0.0)).unwrap(), 0.0);
        let k = solve_kappa(&p, Complex64::new(0.5, 0.0)).unwrap();
        let exact = ((-3.0 + 20f64.sqrt()) / 4.0).sqrt();
        assert!((k - exact).abs() < 1e-12, "{k} vs {exact}");
    }

    #[test]
    fn kappa_needs_scalar_kernel() {
        let p = AtomicProfile::new(vec![0.5, 0.5], vec![Complex64::new(0.0, 0.0); 2], vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert!(solve_kappa(&p, Complex64::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn y_forms_agree_and_mde_holds() {
        let p = AtomicProfile::new(
            vec![0.3, 0.7],
            vec![Complex64::new(0.5, 0.2), Complex64::new(-0.4, 0.1)],
            vec![vec![1.0, 0.5], vec![2.0, 1.5]],
        )
        .unwrap();
        let s = solve_dyson(&p, Complex64::new(0.1, 0.3), 0.05, &SolverOptions::default()).unwrap();
        let alt = y_alternative(&p, &s).unwrap();
        for k in 0..2 {
            assert!((alt[k] - s.y[k]).norm() < 1e-10);
        }
        assert!(mde_check(&p, &s).unwrap() < 1e-10);
        let mut bad = s.clone();
        bad.v1[0] *= 1.5;
        assert!(mde_check(&p, &bad).unwrap() > 1e-3);
    }

    #[test]
    fn circular_mde_at_unit_eta() {
        let s = solve_dyson(&circular(), Complex64::new(0.0, 0.0), 1.0, &SolverOptions::default()).unwrap();
        let kappa = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((s.v1[0] - (kappa - 1.0)).abs() < 1e-12);
        assert!(mde_check(&circular(), &s).unwrap() < 1e-10);
    }

    #[test]
    fn circular_y_inside() {
        let p = circular();
        let z = Complex64::new(0.3, -0.4);
        let c = eta_continuation(&p, z, &SolverOptions::default()).unwrap();
        assert!((c.state.y[0] + z.conj()).norm() < 1e-8);
    }
}
