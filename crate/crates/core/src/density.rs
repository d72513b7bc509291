//! Pointwise and gridded Brown-measure density, and the logarithmic potential.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyson::{eta_continuation, solve_from, SolverOptions};
use crate::error::{Error, Result};
use crate::model::AtomicProfile;
use crate::roots::gauss_legendre;
use crate::spectral::beta_eval;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Closed form for constant kernels, Dyson otherwise.
    #[default]
    Auto,
    ClosedForm,
    Dyson,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityOptions {
    pub solver: SolverOptions,
    pub route: Route,
    /// Finite-difference step for the Dyson route; defaults to 1e-4 × support diameter.
    pub fd_step: Option<f64>,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), route: Route::Auto, fd_step: None }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SigmaValue {
    pub value: f64,
    /// Before clamping.
    pub raw: f64,
    pub beta: f64,
    pub route: Route,
    pub clamped: bool,
    pub edge_cell: bool,
}

/// Diameter of the disk that contains the support.
pub fn support_diameter(profile: &AtomicProfile) -> f64 {
    2.0 * (profile.max_abs_deformation() + 2.0 * profile.max_kernel().sqrt())
}

pub fn sigma_at(profile: &AtomicProfile, zeta: Complex64, opts: &DensityOptions) -> Result<SigmaValue> {
    let route = match opts.route {
        Route::Auto if profile.scalar_variance().is_some() => Route::ClosedForm,
        Route::Auto => Route::Dyson,
        r => r,
    };
    match route {
        Route::ClosedForm => sigma_closed_form(profile, zeta),
        _ => sigma_dyson(profile, zeta, opts),
    }
}

/// πσ = ⟨(|a−ζ|²−β)⁻²⟩·(−β + |∂_ζ̄β|²) for constant kernels.
pub fn sigma_closed_form(profile: &AtomicProfile, zeta: Complex64) -> Result<SigmaValue> {
    if profile.scalar_variance().is_none() {
        return Err(Error::Argument("closed-form density needs a constant kernel".into()));
    }
    let e = beta_eval(profile, zeta)?;
    let mut value = 0.0;
    if e.beta < 0.0 {
        let d = profile.dist_sq(zeta);
        let w: Vec<f64> = d.iter().map(|di| (di - e.beta).powi(-2)).collect();
        value = profile.avg_unchecked(&w) * (-e.beta + e.grad.norm_sqr()) / PI;
    }
    Ok(SigmaValue { value, raw: value, beta: e.beta, route: Route::ClosedForm, clamped: false, edge_cell: false })
}

fn avg_y(profile: &AtomicProfile, zeta: Complex64, opts: &SolverOptions) -> Result<Complex64> {
    let c = eta_continuation(profile, zeta, opts)?;
    Ok(c.state.avg_y(profile))
}

/// σ = −(1/π) Re ∂_ζ̄⟨y(·,0)⟩ by finite differences.
pub fn sigma_dyson(profile: &AtomicProfile, zeta: Complex64, opts: &DensityOptions) -> Result<SigmaValue> {
    let beta = beta_eval(profile, zeta)?.beta;
    if beta >= 0.0 {
        return Ok(SigmaValue { value: 0.0, raw: 0.0, beta, route: Route::Dyson, clamped: false, edge_cell: false });
    }
    let mut h = opts.fd_step.unwrap_or(1e-4 * support_diameter(profile));
    if beta.abs() < 0.01 {
        h *= (beta.abs() / 0.01).max(0.01);
    }
    let inside = |z: Complex64| beta_eval(profile, z).map(|e| e.beta < 0.0);
    let y0 = avg_y(profile, zeta, &opts.solver)?;
    let mut edge_cell = false;
    let mut deriv = [Complex64::new(0.0, 0.0); 2];
    for (axis, dir) in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)].into_iter().enumerate() {
        let step = dir * h;
        let (pin, min) = (inside(zeta + step)?, inside(zeta - step)?);
        deriv[axis] = if pin && min {
            (avg_y(profile, zeta + step, &opts.solver)? - avg_y(profile, zeta - step, &opts.solver)?) / (2.0 * h)
        } else {
            edge_cell = true;
            // one-sided toward the interior
            let s = if pin { 1.0 } else if min { -1.0 } else { 0.0 };
            if s == 0.0 {
                return Err(Error::Numerical(format!("stencil at {zeta} has no interior neighbour")));
            }
            let y1 = avg_y(profile, zeta + step * s, &opts.solver)?;
            if inside(zeta + step * (2.0 * s))? {
                let y2 = avg_y(profile, zeta + step * (2.0 * s), &opts.solver)?;
                (-3.0 * y0 + 4.0 * y1 - y2) / (2.0 * h * s)
            } else {
                (y1 - y0) / (h * s)
            }
        };
    }
    let dbar = 0.5 * (deriv[0] + Complex64::i() * deriv[1]);
    let raw = -dbar.re / PI;
    let clamped = raw < 0.0;
    Ok(SigmaValue { value: raw.max(0.0), raw, beta, route: Route::Dyson, clamped, edge_cell })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Window {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Window {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Result<Self> {
        let w = Self { re_min, re_max, im_min, im_max };
        if !(re_max > re_min && im_max > im_min) || [re_min, re_max, im_min, im_max].iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("empty window {w:?}")));
        }
        Ok(w)
    }

    pub fn square(half: f64) -> Self {
        Self { re_min: -half, re_max: half, im_min: -half, im_max: half }
    }

    pub fn diameter(&self) -> f64 {
        (self.re_max - self.re_min).hypot(self.im_max - self.im_min)
    }

    pub fn contains(&self, z: Complex64) -> bool {
        z.re >= self.re_min && z.re <= self.re_max && z.im >= self.im_min && z.im <= self.im_max
    }
}

/// Node-based grid: node (i, j) sits at re_min + i·dx, im_min + j·dy.
#[derive(Clone, Debug, Serialize)]
pub struct DensityGrid {
    pub window: Window,
    pub nx: usize,
    pub ny: usize,
    /// Row-major by imaginary index: `j * nx + i`.
    pub sigma: Vec<f64>,
    pub beta_field: Vec<f64>,
    pub mask: Vec<bool>,
    pub clamp_count: usize,
    pub edge_cells: usize,
}

impl DensityGrid {
    pub fn dx(&self) -> f64 {
        (self.window.re_max - self.window.re_min) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.window.im_max - self.window.im_min) / (self.ny - 1) as f64
    }

    pub fn point(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.window.re_min + i as f64 * self.dx(), self.window.im_min + j as f64 * self.dy())
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Trapezoidal mass.
    pub fn mass(&self) -> f64 {
        let mut m = 0.0;
        for j in 0..self.ny {
            let wy = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
            for i in 0..self.nx {
                let wx = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
                m += wx * wy * self.sigma[self.idx(i, j)];
            }
        }
        m * self.dx() * self.dy()
    }

    pub fn max_sigma(&self) -> f64 {
        self.sigma.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_sigma(&self) -> f64 {
        self.sigma.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// β on a node grid only (no density).
pub fn beta_grid(profile: &AtomicProfile, window: Window, nx: usize, ny: usize) -> Result<Vec<f64>> {
    if nx < 8 || ny < 8 {
        return Err(Error::Argument("grid resolution must be at least 8".into()));
    }
    let dx = (window.re_max - window.re_min) / (nx - 1) as f64;
    let dy = (window.im_max - window.im_min) / (ny - 1) as f64;
    let rows: Result<Vec<Vec<f64>>> = (0..ny)
        .into_par_iter()
        .map(|j| {
            (0..nx)
                .map(|i| {
                    let z = Complex64::new(window.re_min + i as f64 * dx, window.im_min + j as f64 * dy);
                    beta_eval(profile, z).map(|e| e.beta)
                })
                .collect()
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

pub fn density_grid(profile: &AtomicProfile, window: Window, nx: usize, ny: usize, opts: &DensityOptions) -> Result<DensityGrid> {
    let window = Window::new(window.re_min, window.re_max, window.im_min, window.im_max)?;
    if nx < 8 || ny < 8 {
        return Err(Error::Argument("grid resolution must be at least 8".into()));
    }
    let dx = (window.re_max - window.re_min) / (nx - 1) as f64;
    let dy = (window.im_max - window.im_min) / (ny - 1) as f64;
    let rows: Result<Vec<Vec<SigmaValue>>> = (0..ny)
        .into_par_iter()
        .map(|j| {
            (0..nx)
                .map(|i| {
                    let z = Complex64::new(window.re_min + i as f64 * dx, window.im_min + j as f64 * dy);
                    sigma_at(profile, z, opts)
                })
                .collect()
        })
        .collect();
    let vals: Vec<SigmaValue> = rows?.into_iter().flatten().collect();
    Ok(DensityGrid {
        window,
        nx,
        ny,
        sigma: vals.iter().map(|v| if v.beta < 0.0 { v.value } else { 0.0 }).collect(),
        beta_field: vals.iter().map(|v| v.beta).collect(),
        mask: vals.iter().map(|v| v.beta < 0.0).collect(),
        clamp_count: vals.iter().filter(|v| v.clamped).count(),
        edge_cells: vals.iter().filter(|v| v.edge_cell).count(),
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PotentialOptions {
    pub solver: SolverOptions,
    pub nodes: usize,
    pub eta_min: f64,
    pub eta_max: f64,
}

impl Default for PotentialOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), nodes: 80, eta_min: 1e-8, eta_max: 1e4 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LogPotential {
    pub value: f64,
    /// Analytic contribution of [eta_max, ∞).
    pub tail: f64,
    /// Size estimate of the neglected tail remainder.
    pub tail_error: f64,
    pub warning: Option<String>,
}

/// L(ζ) = ∫₀^∞ (⟨v1(ζ,η)⟩ − 1/(1+η)) dη
pub fn log_potential(profile: &AtomicProfile, zeta: Complex64, opts: &PotentialOptions) -> Result<LogPotential> {
    const PER_PANEL: usize = 8;
    if !(opts.eta_min > 0.0 && opts.eta_max > opts.eta_min) {
        return Err(Error::Argument("need 0 < eta_min < eta_max".into()));
    }
    let panels = (opts.nodes / PER_PANEL).max(1);
    let (gx, gw) = gauss_legendre(PER_PANEL);
    let (u0, u1) = (opts.eta_min.ln(), opts.eta_max.ln());
    let hu = (u1 - u0) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * PER_PANEL);
    for p in 0..panels {
        let c = u0 + (p as f64 + 0.5) * hu;
        for (x, w) in gx.iter().zip(&gw) {
            nodes.push((c + 0.5 * hu * x, 0.5 * hu * w));
        }
    }
    // descend in η for warm starts
    nodes.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut warm: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut sum = 0.0;
    for (u, w) in nodes {
        let eta = u.exp();
        let s = solve_from(profile, zeta, eta, warm.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())), &opts.solver)?;
        let avg = s.avg_v1(profile);
        sum += w * eta * (avg - 1.0 / (1.0 + eta));
        warm = Some((s.v1, s.v2));
    }
    let s = solve_from(profile, zeta, opts.eta_min, warm.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())), &opts.solver)?;
    let head = opts.eta_min * s.avg_v1(profile) - opts.eta_min.ln_1p();
    // ⟨v1⟩ − 1/(1+η) = η⁻² − c η⁻³ + O(η⁻⁴)
    let one = vec![1.0; profile.len()];
    let s1 = profile.avg_unchecked(&profile.apply_s_unchecked(&one));
    let dmean = profile.avg_unchecked(&profile.dist_sq(zeta));
    let c = s1 + dmean + 1.0;
    let t = opts.eta_max;
    let tail = 1.0 / t - c / (2.0 * t * t);
    let tail_error = (1.0 + c * c) / (3.0 * t * t * t);
    let warning = (tail_error > 1e-6).then(|| format!("tail remainder estimate {tail_error:.2e} exceeds 1e-6"));
    Ok(LogPotential { value: head + sum + tail, tail, tail_error, warning })
}

/// −ΔL/(2π) by the 5-point stencil.
pub fn laplacian_check(profile: &AtomicProfile, zeta: Complex64, h: f64, opts: &PotentialOptions) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Argument("step must be positive".into()));
    }
    let l = |z: Complex64| log_potential(profile, z, opts).map(|p| p.value);
    let c = l(zeta)?;
    let s = l(zeta + h)? + l(zeta - h)? + l(zeta + Complex64::new(0.0, h))? + l(zeta - Complex64::new(0.0, h))?;
    Ok(-(s - 4.0 * c) / (h * h) / (2.0 * PI))
}
