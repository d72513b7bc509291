//! Spectral edge contours, singular points of β and their classification
//! by the Morse data (K, τ) of −β.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::constructions::{f_axis_derivatives_weighted, f_eval_weighted, f_laplacian_at_zero};
use crate::density::{DensityGrid, Window};
use crate::error::{Error, Result};
use crate::model::{AtomMeasure, AtomicProfile};
use crate::spectral::{beta_eval, hessian_fd, length_scale};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Edge(usize),
    Internal(usize),
    InternalInfinity,
    RegularEdge,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Edge(k) => write!(f, "edge({k})"),
            Kind::Internal(k) => write!(f, "internal({k})"),
            Kind::InternalInfinity => write!(f, "internal_infinity"),
            Kind::RegularEdge => write!(f, "regular_edge"),
        }
    }
}

impl Serialize for Kind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Taxonomy from the Morse exponent K and sign τ of −β.
pub fn kind_from(k: Option<usize>, tau: i8) -> Kind {
    match (k, tau) {
        (Some(k), -1) => Kind::Edge(k - 1),
        (Some(k), 1) if k % 2 == 1 => Kind::Edge(k - 1),
        (Some(k), 1) => Kind::Internal(k / 2),
        _ => Kind::InternalInfinity,
    }
}

// ---------------------------------------------------------------------------
// contours

#[derive(Clone, Debug, Serialize)]
pub struct Polyline {
    pub points: Vec<Complex64>,
    pub closed: bool,
}

impl Polyline {
    /// Signed area by the shoelace formula; positive for counter-clockwise.
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        let mut s = 0.0;
        for k in 0..n {
            let p = self.points[k];
            let q = self.points[(k + 1) % n];
            s += p.re * q.im - q.re * p.im;
        }
        0.5 * s
    }

    pub fn radii(&self, center: Complex64) -> (f64, f64) {
        self.points
            .iter()
            .map(|p| (p - center).norm())
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Contours {
    pub level: f64,
    pub polylines: Vec<Polyline>,
    /// Saddle cells resolved by the cell-centre average.
    pub saddle_cells: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum EdgeId {
    H(usize, usize),
    V(usize, usize),
}

/// Marching squares on a node field (`j * nx + i`). Polylines keep the
/// region `value < level` on their left.
pub fn trace_level(window: &Window, nx: usize, ny: usize, values: &[f64], level: f64) -> Result<Contours> {
    if nx < 2 || ny < 2 || values.len() != nx * ny {
        return Err(Error::Length { expected: nx * ny, got: values.len() });
    }
    let dx = (window.re_max - window.re_min) / (nx - 1) as f64;
    let dy = (window.im_max - window.im_min) / (ny - 1) as f64;
    let v = |i: usize, j: usize| values[j * nx + i];
    // values within rounding of the level count as inside, so a field that
    // only touches the level does not sprout noise loops
    let noise = 1e-12 * values.iter().filter(|x| x.is_finite()).fold(0.0f64, |m, x| m.max(x.abs()));
    let node = |i: usize, j: usize| Complex64::new(window.re_min + i as f64 * dx, window.im_min + j as f64 * dy);
    let crossing = |e: EdgeId| -> Complex64 {
        let ((i0, j0), (i1, j1)) = match e {
            EdgeId::H(i, j) => ((i, j), (i + 1, j)),
            EdgeId::V(i, j) => ((i, j), (i, j + 1)),
        };
        let (a, b) = (v(i0, j0), v(i1, j1));
        let s = ((level - a) / (b - a)).clamp(0.0, 1.0);
        node(i0, j0) + (node(i1, j1) - node(i0, j0)) * s
    };
    let mut next: HashMap<EdgeId, EdgeId> = HashMap::new();
    let mut saddles = 0;
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            // corners and edges counter-clockwise from the lower left
            let cv = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            if cv.iter().any(|x| !x.is_finite()) {
                continue;
            }
            let inside = cv.map(|x| x < level + noise);
            let edges = [EdgeId::H(i, j), EdgeId::V(i + 1, j), EdgeId::H(i, j + 1), EdgeId::V(i, j)];
            let crossing_edges: Vec<usize> = (0..4).filter(|&e| inside[e] != inside[(e + 1) % 4]).collect();
            if crossing_edges.is_empty() {
                continue;
            }
            let centre_inside = if crossing_edges.len() == 4 {
                saddles += 1;
                0.25 * cv.iter().sum::<f64>() < level + noise
            } else {
                true
            };
            for (pos, &e) in crossing_edges.iter().enumerate() {
                if !(inside[e] && !inside[(e + 1) % 4]) {
                    continue;
                }
                let m = crossing_edges.len();
                let partner = if centre_inside { crossing_edges[(pos + 1) % m] } else { crossing_edges[(pos + m - 1) % m] };
                next.insert(edges[e], edges[partner]);
            }
        }
    }
    let mut has_pred: HashMap<EdgeId, bool> = HashMap::new();
    for to in next.values() {
        has_pred.insert(*to, true);
    }
    let mut starts: Vec<EdgeId> = next.keys().filter(|e| !has_pred.contains_key(e)).cloned().collect();
    let key = |e: &EdgeId| match *e {
        EdgeId::H(i, j) => (0, j, i),
        EdgeId::V(i, j) => (1, j, i),
    };
    starts.sort_by_key(key);
    let mut rest: Vec<EdgeId> = next.keys().cloned().collect();
    rest.sort_by_key(key);
    let mut used: HashMap<EdgeId, bool> = HashMap::new();
    let mut polylines = Vec::new();
    for s in starts.into_iter().chain(rest) {
        if used.contains_key(&s) {
            continue;
        }
        let mut pts = vec![crossing(s)];
        let mut cur = s;
        used.insert(cur, true);
        let mut closed = false;
        while let Some(&n) = next.get(&cur) {
            if n == s {
                closed = true;
                break;
            }
            pts.push(crossing(n));
            if used.contains_key(&n) {
                break;
            }
            used.insert(n, true);
            cur = n;
        }
        polylines.push(Polyline { points: pts, closed });
    }
    Ok(Contours { level, polylines, saddle_cells: saddles })
}

/// Zero contours of β on a density grid.
pub fn trace_boundary(grid: &DensityGrid) -> Result<Contours> {
    trace_level(&grid.window, grid.nx, grid.ny, &grid.beta_field, 0.0)
}

/// A closed curve on which −β touches zero from above (β ≤ 0 on both
/// sides) shows up as a pair of nested contours at level −ε. Returns the
/// midlines of such pairs.
pub fn double_contours(contours: &Contours, max_gap: f64) -> Vec<Polyline> {
    let closed: Vec<&Polyline> = contours.polylines.iter().filter(|p| p.closed && p.points.len() > 8).collect();
    let mut out = Vec::new();
    let mut taken = vec![false; closed.len()];
    for a in 0..closed.len() {
        if taken[a] {
            continue;
        }
        for b in a + 1..closed.len() {
            if taken[b] {
                continue;
            }
            // opposite orientation and uniformly close
            if closed[a].signed_area() * closed[b].signed_area() >= 0.0 {
                continue;
            }
            let gap = closed[a]
                .points
                .iter()
                .map(|p| closed[b].points.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max);
            if gap <= max_gap {
                let mid = closed[a]
                    .points
                    .iter()
                    .map(|p| {
                        let q = closed[b].points.iter().min_by(|x, y| (*x - p).norm().total_cmp(&(*y - p).norm())).unwrap();
                        0.5 * (p + q)
                    })
                    .collect();
                out.push(Polyline { points: mid, closed: true });
                taken[a] = true;
                taken[b] = true;
                break;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// singular points

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Located {
    pub location: Complex64,
    pub beta: f64,
    /// |∂_ζ β|
    pub grad: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Search {
    pub points: Vec<Located>,
    pub log: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
pub struct SearchOptions {
    /// Seed grid resolution per axis.
    pub seed_grid: usize,
    pub max_seeds: usize,
    pub max_iter: usize,
    pub beta_tol: f64,
    pub grad_tol: f64,
    pub dedupe: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { seed_grid: 64, max_seeds: 64, max_iter: 200, beta_tol: 1e-8, grad_tol: 1e-6, dedupe: 1e-6 }
    }
}

fn sym_eigen(h: [[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, d) = (h[0][0], h[0][1], h[1][1]);
    let m = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (m + r, m - r);
    let v1 = if b.abs() > 1e-300 {
        let v = [l1 - d, b];
        let n = v[0].hypot(v[1]);
        [v[0] / n, v[1] / n]
    } else if a >= d {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    ([l1, l2], [v1, [-v1[1], v1[0]]])
}

/// Newton on ∇β = 0 with a pseudo-inverse of the finite-difference Hessian.
pub fn newton_critical(profile: &AtomicProfile, seed: Complex64, opts: &SearchOptions) -> Result<Located> {
    let scale = length_scale(profile);
    let h = 1e-4 * scale;
    let mut z = seed;
    let mut best = (f64::INFINITY, z, 0);
    for it in 0..opts.max_iter {
        let e = beta_eval(profile, z)?;
        let g = e.gradient_xy();
        let gn = g[0].hypot(g[1]);
        if gn < best.0 {
            best = (gn, z, it);
        } else if it - best.2 > 15 {
            let e = beta_eval(profile, best.1)?;
            return Ok(Located { location: best.1, beta: e.beta, grad: e.grad.norm(), iterations: it });
        }
        let hess = hessian_fd(profile, z, h)?;
        let (lam, vec) = sym_eigen(hess);
        let lmax = lam[0].abs().max(lam[1].abs());
        if gn <= 1e-15 * lmax * scale {
            return Ok(Located { location: z, beta: e.beta, grad: e.grad.norm(), iterations: it });
        }
        let mut step = [0.0; 2];
        for k in 0..2 {
            if lam[k].abs() > 1e-8 * lmax {
                let c = (vec[k][0] * g[0] + vec[k][1] * g[1]) / lam[k];
                step[0] -= c * vec[k][0];
                step[1] -= c * vec[k][1];
            }
        }
        let mut s = Complex64::new(step[0], step[1]);
        if s.norm() > 0.25 * scale {
            s *= 0.25 * scale / s.norm();
        }
        if !(s.re.is_finite() && s.im.is_finite()) {
            return Err(Error::Numerical("Newton step not finite".into()));
        }
        z += s;
        if s.norm() <= 1e-14 * scale {
            let e = beta_eval(profile, z)?;
            return Ok(Located { location: z, beta: e.beta, grad: e.grad.norm(), iterations: it + 1 });
        }
    }
    let e = beta_eval(profile, z)?;
    Ok(Located { location: z, beta: e.beta, grad: e.grad.norm(), iterations: opts.max_iter })
}

/// Grid seeds: local minima of |β|/h² + |∇β|/h.
pub fn grid_seeds(profile: &AtomicProfile, window: &Window, n: usize, max_seeds: usize) -> Result<Vec<Complex64>> {
    let dx = (window.re_max - window.re_min) / (n - 1) as f64;
    let dy = (window.im_max - window.im_min) / (n - 1) as f64;
    let h = dx.max(dy);
    let vals: Result<Vec<f64>> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let z = Complex64::new(window.re_min + (k % n) as f64 * dx, window.im_min + (k / n) as f64 * dy);
            let e = beta_eval(profile, z)?;
            Ok(e.beta.abs() / (h * h) + e.grad_norm() / h)
        })
        .collect();
    let vals = vals?;
    let mut minima = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let m = vals[j * n + i];
            if !m.is_finite() {
                continue;
            }
            let mut is_min = true;
            for (di, dj) in [(-1i64, -1i64), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
                let (ii, jj) = (i as i64 + di, j as i64 + dj);
                if ii < 0 || jj < 0 || ii >= n as i64 || jj >= n as i64 {
                    continue;
                }
                if vals[jj as usize * n + ii as usize] < m {
                    is_min = false;
                    break;
                }
            }
            if is_min {
                minima.push((m, Complex64::new(window.re_min + i as f64 * dx, window.im_min + j as f64 * dy)));
            }
        }
    }
    minima.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(minima.into_iter().take(max_seeds).map(|(_, z)| z).collect())
}

pub fn find_singular_points(profile: &AtomicProfile, window: &Window, seeds: &[Complex64], opts: &SearchOptions) -> Result<Search> {
    let mut all = seeds.to_vec();
    all.extend(grid_seeds(profile, window, opts.seed_grid.max(8), opts.max_seeds)?);
    let results: Vec<(Complex64, Result<Located>)> = all.par_iter().map(|&s| (s, newton_critical(profile, s, opts))).collect();
    let margin = 0.1 * window.diameter();
    let grown = Window {
        re_min: window.re_min - margin,
        re_max: window.re_max + margin,
        im_min: window.im_min - margin,
        im_max: window.im_max + margin,
    };
    let mut log = Vec::new();
    let mut points: Vec<Located> = Vec::new();
    for (seed, r) in results {
        match r {
            Err(e) => log.push(format!("seed {seed}: dropped ({e})")),
            Ok(p) if !grown.contains(p.location) => log.push(format!("seed {seed}: left the window at {}", p.location)),
            Ok(p) if p.beta.abs() >= opts.beta_tol || p.grad >= opts.grad_tol => {
                log.push(format!("seed {seed}: critical point {} with beta {:.3e}, |grad| {:.3e}", p.location, p.beta, p.grad))
            }
            Ok(p) => {
                if points.iter().all(|q| (q.location - p.location).norm() > opts.dedupe) {
                    points.push(p);
                }
            }
        }
    }
    points.sort_by(|a, b| (a.location.re, a.location.im).partial_cmp(&(b.location.re, b.location.im)).unwrap());
    Ok(Search { points, log })
}

// ---------------------------------------------------------------------------
// classification

#[derive(Clone, Copy, Debug)]
pub struct ClassifyOptions {
    pub tol_h: f64,
    pub tol_d: f64,
    pub k_max: usize,
    /// Chebyshev nodes along the valley.
    pub probe_nodes: usize,
    /// Radius of the isolation ring for internal points; default scales with the profile.
    pub ring_radius: Option<f64>,
    pub symmetric_check: bool,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self { tol_h: 1e-6, tol_d: 1e-5, k_max: 8, probe_nodes: 24, ring_radius: None, symmetric_check: true }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Residuals {
    pub beta: f64,
    pub grad: f64,
    pub newton_iterations: usize,
    /// Largest normalized valley coefficient below the detection threshold.
    pub valley_noise: f64,
    pub symmetric: Option<(Option<usize>, i8)>,
    pub ring_max_beta: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SingularPoint {
    pub location: Complex64,
    pub kind: Kind,
    /// Morse exponent of −β; `None` when unresolved up to K_max.
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub tau: i8,
    pub tentative: bool,
    /// Eigenvalues of the Hessian of −β, largest first.
    pub hessian_eigs: [f64; 2],
    /// Derivatives of β along the null direction, orders 2..=K_max.
    pub probe_derivatives: Vec<f64>,
    pub residuals: Residuals,
}

fn cheb_to_monomial(coef: &[f64]) -> Vec<f64> {
    let n = coef.len();
    let mut t = vec![vec![0.0; n]; n];
    t[0][0] = 1.0;
    if n > 1 {
        t[1][1] = 1.0;
    }
    for k in 2..n {
        for i in 0..n {
            let up = if i > 0 { 2.0 * t[k - 1][i - 1] } else { 0.0 };
            t[k][i] = up - t[k - 2][i];
        }
    }
    (0..n).map(|i| (0..n).map(|k| coef[k] * t[k][i]).sum()).collect()
}

/// Mirror symmetry about the vertical line through `axis`, with equal masses.
fn mirror_symmetric(profile: &AtomicProfile, axis: f64) -> bool {
    let a = profile.deformation();
    let mu = profile.weights();
    (0..a.len()).all(|i| {
        let m = Complex64::new(2.0 * axis - a[i].re, a[i].im);
        let tol = 1e-10 * (1.0 + a[i].norm());
        (0..a.len()).any(|j| (a[j] - m).norm() <= tol && (mu[j] - mu[i]).abs() <= 1e-12)
    })
}

pub fn classify_singularity(profile: &AtomicProfile, point: &Located, opts: &ClassifyOptions) -> Result<SingularPoint> {
    let mut z0 = point.location;
    let scale = length_scale(profile);
    let e0 = beta_eval(profile, z0)?;
    let hb = hessian_fd(profile, z0, 1e-4 * scale)?;
    let (lam, vec) = sym_eigen([[-hb[0][0], -hb[0][1]], [-hb[1][0], -hb[1][1]]]);
    let mut residuals = Residuals {
        beta: e0.beta,
        grad: e0.grad.norm(),
        newton_iterations: point.iterations,
        valley_noise: 0.0,
        symmetric: None,
        ring_max_beta: None,
    };
    if e0.grad.norm() >= 1e-6 {
        return Ok(SingularPoint {
            location: z0,
            kind: Kind::RegularEdge,
            k: Some(1),
            tau: 0,
            tentative: false,
            hessian_eigs: lam,
            probe_derivatives: vec![],
            residuals,
        });
    }
    if !(lam[0] > opts.tol_h) {
        return Err(Error::Numerical(format!("Hessian of -beta has no positive eigenvalue: {lam:?}")));
    }
    if lam[0] + lam[1] <= 0.0 {
        return Err(Error::Numerical(format!("Laplacian of beta is not negative: eigenvalues {lam:?}")));
    }
    let (k, tau, derivs) = if lam[1].abs() > opts.tol_h * lam[0].max(1.0) {
        (Some(2), if lam[1] > 0.0 { 1 } else { -1 }, vec![-lam[1]])
    } else {
        let ex = Complex64::new(vec[0][0], vec[0][1]);
        let mut ey = Complex64::new(vec[1][0], vec[1][1]);
        if ey.im < -1e-12 || (ey.im.abs() <= 1e-12 && ey.re < 0.0) {
            ey = -ey;
        }
        let dmin = profile.deformation().iter().map(|a| (a - z0).norm()).fold(f64::INFINITY, f64::min);
        if !(dmin > 0.0) {
            return Err(Error::Argument("singular point sits on an atom".into()));
        }
        let ell = 0.3 * dmin;
        let n = opts.probe_nodes.max(opts.k_max + 3);
        let norm = 0.5 * lam[0] * ell * ell;
        let first_above = |mono: &[f64]| (3..=opts.k_max).find(|&k| (mono[k] / norm).abs() > opts.tol_d);
        let mut mono = valley_fit(profile, z0, ex, ey, lam[0], ell, n)?;
        // A location error δ along the null axis leaks the leading term into
        // lower orders; recentre where the next-lower coefficient vanishes.
        for _ in 0..8 {
            let Some(k) = first_above(&mono) else { break };
            let shadow = -mono[k] / ((k + 1) as f64 * mono[k + 1]);
            let s = if shadow.is_finite() && shadow.abs() < 1e-3 && (mono[k + 1] / norm).abs() > opts.tol_d {
                shadow
            } else {
                -mono[k - 1] / (k as f64 * mono[k])
            };
            if !(s.abs() > 1e-14 && s.abs() < 1e-2) {
                break;
            }
            let (x, _) = valley_point(profile, z0, ex, ey, lam[0], ell * s, 0.0, ell)?;
            z0 += ex * x + ey * (ell * s);
            mono = valley_fit(profile, z0, ex, ey, lam[0], ell, n)?;
        }
        let derivs: Vec<f64> = (2..=opts.k_max).map(|k| -mono[k] * factorial(k) / ell.powi(k as i32)).collect();
        let found = first_above(&mono);
        for k in 3..found.unwrap_or(opts.k_max + 1) {
            residuals.valley_noise = residuals.valley_noise.max((mono[k] / norm).abs());
        }
        match found {
            Some(k) => (Some(k), if mono[k] > 0.0 { 1 } else { -1 }, derivs),
            None => (None, 0, derivs),
        }
    };
    if z0 != point.location {
        let e = beta_eval(profile, z0)?;
        residuals.beta = e.beta;
        residuals.grad = e.grad.norm();
    }
    if opts.symmetric_check {
        if let Some(t) = profile.scalar_variance() {
            if mirror_symmetric(profile, z0.re) {
                let mut zc = z0;
                // exact axis derivatives pin an odd-order point more tightly
                if let Some(k) = k.filter(|&k| k >= 3) {
                    for _ in 0..4 {
                        let atoms: Vec<Complex64> = profile.deformation().iter().map(|a| a - zc).collect();
                        let Ok(d) = f_axis_derivatives_weighted(&atoms, profile.weights(), k) else { break };
                        let s = -d[k - 2] / d[k - 1];
                        if !(s.is_finite() && s.abs() < 1e-3 * scale) {
                            break;
                        }
                        zc += Complex64::new(0.0, s);
                    }
                }
                let atoms: Vec<Complex64> = profile.deformation().iter().map(|a| a - zc).collect();
                if let Ok(nu) = AtomMeasure::new(atoms, profile.weights().to_vec()) {
                    if let Ok((sk, st)) = symmetric_classify_bounded(&nu, 1.0 / t, opts.k_max) {
                        residuals.symmetric = Some((sk, st));
                        if sk != k || st != tau {
                            return Err(Error::Conflict { sym_k: sk, sym_tau: st, fd_k: k, fd_tau: tau });
                        }
                    }
                }
            }
        }
    }
    let kind = kind_from(k, tau);
    if let Kind::Internal(_) = kind {
        let r = opts.ring_radius.unwrap_or(1e-2 * scale);
        residuals.ring_max_beta = Some(ring_max_beta(profile, z0, r)?);
    }
    Ok(SingularPoint {
        location: z0,
        kind,
        k,
        tau,
        tentative: k.is_none(),
        hessian_eigs: lam,
        probe_derivatives: derivs,
        residuals,
    })
}

/// Point of the valley ∂ₓ(−β) = 0 at height `y` along the null axis, by
/// chord Newton with the curvature `lam1`; returns (x, β).
fn valley_point(profile: &AtomicProfile, z0: Complex64, ex: Complex64, ey: Complex64, lam1: f64, y: f64, x0: f64, ell: f64) -> Result<(f64, f64)> {
    let mut x = x0;
    let mut beta = 0.0;
    for _ in 0..200 {
        let e = beta_eval(profile, z0 + ex * x + ey * y)?;
        beta = e.beta;
        let g = e.gradient_xy();
        let dx = (g[0] * ex.re + g[1] * ex.im) / lam1;
        x += dx;
        if dx.abs() <= 1e-15 * ell {
            break;
        }
    }
    Ok((x, beta))
}

/// Monomial coefficients in s = y/ℓ of −β along the valley, from
/// interpolation at Chebyshev nodes.
fn valley_fit(profile: &AtomicProfile, z0: Complex64, ex: Complex64, ey: Complex64, lam1: f64, ell: f64, n: usize) -> Result<Vec<f64>> {
    let mut h = vec![0.0; n];
    let mut x = 0.0;
    for (j, hj) in h.iter_mut().enumerate() {
        let s = (PI * (j as f64 + 0.5) / n as f64).cos();
        let (xs, beta) = valley_point(profile, z0, ex, ey, lam1, ell * s, x, ell)?;
        x = xs;
        *hj = -beta;
    }
    let coef: Vec<f64> = (0..n)
        .map(|k| {
            let s: f64 = (0..n).map(|j| h[j] * (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos()).sum();
            s * if k == 0 { 1.0 } else { 2.0 } / n as f64
        })
        .collect();
    Ok(cheb_to_monomial(&coef))
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// max β over 64 points on a circle; negative means the centre is an
/// isolated point of the complement.
pub fn ring_max_beta(profile: &AtomicProfile, center: Complex64, radius: f64) -> Result<f64> {
    let vals: Result<Vec<f64>> = (0..64)
        .into_par_iter()
        .map(|k| beta_eval(profile, center + Complex64::from_polar(radius, 2.0 * PI * k as f64 / 64.0)).map(|e| e.beta))
        .collect();
    Ok(vals?.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// (K, τ) of f − f(0) at 0 from exact imaginary-axis derivatives, for ν
/// symmetric about the imaginary axis with f(0) = threshold.
pub fn symmetric_classify(nu: &AtomMeasure, threshold: f64) -> Result<(Option<usize>, i8)> {
    symmetric_classify_bounded(nu, threshold, 8)
}

pub fn symmetric_classify_bounded(nu: &AtomMeasure, threshold: f64, k_max: usize) -> Result<(Option<usize>, i8)> {
    for (i, a) in nu.atoms.iter().enumerate() {
        let m = Complex64::new(-a.re, a.im);
        let tol = 1e-10 * (1.0 + a.norm());
        if !(0..nu.len()).any(|j| (nu.atoms[j] - m).norm() <= tol && (nu.masses[j] - nu.masses[i]).abs() <= 1e-12) {
            return Err(Error::Argument(format!("measure is not symmetric about the imaginary axis (atom {a})")));
        }
    }
    let f0 = f_eval_weighted(&nu.atoms, &nu.masses, Complex64::new(0.0, 0.0));
    if !((f0 - threshold).abs() <= 1e-8 * threshold.abs().max(1.0)) {
        return Err(Error::Argument(format!("f(0) = {f0} differs from the threshold {threshold}")));
    }
    let d = f_axis_derivatives_weighted(&nu.atoms, &nu.masses, k_max)?;
    // bound on the size of the k-th derivative's individual terms
    let zero = |k: usize| 1e-10 * factorial(k) * nu.atoms.iter().zip(&nu.masses).map(|(a, m)| m / a.norm().powi(k as i32 + 2)).sum::<f64>();
    if d[0].abs() > zero(1) {
        return Err(Error::Argument(format!("0 is not a critical point of f (derivative {:e})", d[0])));
    }
    let fyy = d[1];
    let fxx = f_laplacian_at_zero(&nu.atoms, &nu.masses) - fyy;
    if fxx <= zero(2) {
        return Err(Error::Argument("symmetric form needs a positive second derivative across the axis".into()));
    }
    for k in 2..=k_max {
        if d[k - 1].abs() > zero(k) {
            return Ok((Some(k), if d[k - 1] > 0.0 { 1 } else { -1 }));
        }
    }
    Ok((None, 0))
}

// ---------------------------------------------------------------------------
// curves of infinite-order points

/// Follows a curve of degenerate critical zeros of β through `start` by
/// stepping along the null direction and projecting back with Newton.
pub fn trace_singular_curve(profile: &AtomicProfile, start: Complex64, step: f64, max_steps: usize) -> Result<Polyline> {
    let opts = SearchOptions { max_iter: 50, ..Default::default() };
    let scale = length_scale(profile);
    let mut pts = vec![start];
    let mut z = start;
    let mut dir: Option<Complex64> = None;
    for k in 0..max_steps {
        let hess = hessian_fd(profile, z, 1e-4 * scale)?;
        let (lam, vec) = sym_eigen(hess);
        let idx = if lam[0].abs() < lam[1].abs() { 0 } else { 1 };
        let mut t = Complex64::new(vec[idx][0], vec[idx][1]);
        if let Some(d) = dir {
            if (t.conj() * d).re < 0.0 {
                t = -t;
            }
        }
        dir = Some(t);
        let p = newton_critical(profile, z + t * step, &opts)?;
        if p.beta.abs() > 1e-8 || p.grad > 1e-6 {
            return Ok(Polyline { points: pts, closed: false });
        }
        z = p.location;
        if k > 2 && (z - start).norm() < 0.75 * step {
            return Ok(Polyline { points: pts, closed: true });
        }
        pts.push(z);
    }
    Ok(Polyline { points: pts, closed: false })
}

#[derive(Clone, Debug, Serialize)]
pub struct SingularityReport {
    pub points: Vec<SingularPoint>,
    /// Curves of internal singular points of infinite order.
    pub curves: Vec<Polyline>,
    pub log: Vec<String>,
}

/// Locates, classifies and groups all singular points in a window.
pub fn singularities(
    profile: &AtomicProfile,
    window: &Window,
    seeds: &[Complex64],
    search: &SearchOptions,
    classify: &ClassifyOptions,
) -> Result<SingularityReport> {
    let found = find_singular_points(profile, window, seeds, search)?;
    let mut log = found.log;
    let classified: Vec<Result<SingularPoint>> = found.points.par_iter().map(|p| classify_singularity(profile, p, classify)).collect();
    let mut points = Vec::new();
    for c in classified {
        match c {
            // recentring can merge seeds that Newton left apart
            Ok(p) if points.iter().any(|q: &SingularPoint| (q.location - p.location).norm() <= search.dedupe) => {}
            Ok(p) => points.push(p),
            Err(e @ Error::Conflict { .. }) => return Err(e),
            Err(e) => log.push(format!("classification failed: {e}")),
        }
    }
    let mut curves: Vec<Polyline> = Vec::new();
    let step = 0.02 * window.diameter();
    for p in points.iter().filter(|p| p.k.is_none()) {
        let on_known = curves.iter().any(|c| c.points.iter().any(|q| (q - p.location).norm() < 1.5 * step));
        if on_known {
            continue;
        }
        match trace_singular_curve(profile, p.location, step, 2000) {
            Ok(c) if c.points.len() > 3 => {
                log.push(format!("curve of {} points through {} ({})", c.points.len(), p.location, if c.closed { "closed" } else { "open" }));
                curves.push(c);
            }
            Ok(_) => {}
            Err(e) => log.push(format!("curve tracing from {} failed: {e}", p.location)),
        }
    }
    for p in points.iter_mut().filter(|p| p.k.is_none()) {
        if curves.iter().any(|c| c.closed && c.points.iter().any(|q| (q - p.location).norm() < 1.5 * step)) {
            p.tentative = false;
        }
    }
    Ok(SingularityReport { points, curves, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::make_example;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn kind_mapping() {
        assert_eq!(kind_from(Some(2), -1), Kind::Edge(1));
        assert_eq!(kind_from(Some(3), 1), Kind::Edge(2));
        assert_eq!(kind_from(Some(4), 1), Kind::Internal(2));
        assert_eq!(kind_from(Some(4), -1), Kind::Edge(3));
        assert_eq!(kind_from(None, 0), Kind::InternalInfinity);
        assert_eq!(Kind::Edge(2).to_string(), "edge(2)");
    }

    #[test]
    fn chebyshev_conversion() {
        // T3 = 4s³ − 3s
        let m = cheb_to_monomial(&[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(m, vec![0.0, -3.0, 0.0, 4.0]);
        let m = cheb_to_monomial(&[1.0, 0.0, 1.0]);
        assert_eq!(m, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn unit_circle_contour() {
        let w = Window::square(1.5);
        let n = 61;
        let vals: Vec<f64> = (0..n * n)
            .map(|k| {
                let z = c(-1.5 + (k % n) as f64 * 0.05, -1.5 + (k / n) as f64 * 0.05);
                z.norm_sqr() - 1.0
            })
            .collect();
        let cs = trace_level(&w, n, n, &vals, 0.0).unwrap();
        assert_eq!(cs.polylines.len(), 1);
        let p = &cs.polylines[0];
        assert!(p.closed);
        // inside on the left: counter-clockwise
        assert!(p.signed_area() > 0.0);
        let (lo, hi) = p.radii(c(0.0, 0.0));
        assert!(1.0 - lo < 0.1 && hi - 1.0 < 0.1);
        let empty = trace_level(&w, n, n, &vec![1.0; n * n], 0.0).unwrap();
        assert!(empty.polylines.is_empty());
    }

    #[test]
    fn saddle_cells_counted() {
        let w = Window::square(1.0);
        let vals = vec![-1.0, 1.0, 1.0, -1.0];
        let cs = trace_level(&w, 2, 2, &vals, 0.0).unwrap();
        assert_eq!(cs.saddle_cells, 1);
        assert_eq!(cs.polylines.len(), 2);
        assert!(cs.polylines.iter().all(|p| !p.closed));
    }

    #[test]
    fn example31_classified() {
        let (p, _) = make_example("x2_minus_y2").unwrap();
        let s = find_singular_points(&p, &Window::square(2.0), &[], &SearchOptions::default()).unwrap();
        assert_eq!(s.points.len(), 1, "{:?}", s);
        assert!(s.points[0].location.norm() < 1e-6);
        let sp = classify_singularity(&p, &s.points[0], &ClassifyOptions::default()).unwrap();
        assert_eq!((sp.k, sp.tau, sp.kind), (Some(2), -1, Kind::Edge(1)));
        assert_eq!(sp.residuals.symmetric, Some((Some(2), -1)));
    }

    #[test]
    fn circular_has_no_singular_points() {
        let (p, _) = make_example("circular").unwrap();
        let s = find_singular_points(&p, &Window::square(2.0), &[], &SearchOptions::default()).unwrap();
        assert!(s.points.is_empty());
    }

    #[test]
    fn symmetric_examples() {
        let nu = AtomMeasure::new(vec![c(1.0, 0.0), c(-1.0, 0.0)], vec![0.5, 0.5]).unwrap();
        assert_eq!(symmetric_classify(&nu, 1.0).unwrap(), (Some(2), -1));
        let (_, spec) = make_example("x2_y4").unwrap();
        assert_eq!(symmetric_classify(&spec.nu, 0.25).unwrap(), (Some(4), -1));
        let (_, spec) = make_example("x2_y3").unwrap();
        let z0 = spec.expected[0].location;
        let shifted = AtomMeasure::new(spec.nu.atoms.iter().map(|a| a - z0).collect(), spec.nu.masses.clone()).unwrap();
        let (k, _) = symmetric_classify(&shifted, 1.0 / spec.t).unwrap();
        assert_eq!(k, Some(3));
        let asym = AtomMeasure::new(vec![c(1.0, 0.0), c(-1.0, 0.5)], vec![0.5, 0.5]).unwrap();
        assert!(symmetric_classify(&asym, 1.0).unwrap_err().is_config());
    }
}
