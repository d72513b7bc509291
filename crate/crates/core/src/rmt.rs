//! Eigenvalues of A + X/√n for comparison with the computed support and
//! density.

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::model::AtomicProfile;
use crate::spectral::beta_eval;

/// Rows per atom by largest remainder; every atom must get a row.
pub fn apportion(weights: &[f64], n: usize) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Argument(format!("n = {n} leaves atom {i} without rows")));
    }
    Ok(counts)
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct SampleOptions {
    /// Complex Ginibre entries (N + iN)/√2 instead of real ones.
    pub complex_entries: bool,
}

/// Block index of each row.
fn row_blocks(counts: &[usize]) -> Vec<usize> {
    counts.iter().enumerate().flat_map(|(k, &c)| std::iter::repeat_n(k, c)).collect()
}

/// A + X/√n with A = diag(a) by blocks and Var X_ij = s(block i, block j).
pub fn sample_matrix(profile: &AtomicProfile, n: usize, seed: u64, opts: &SampleOptions) -> Result<Mat<Complex64>> {
    if n < 2 {
        return Err(Error::Argument("matrix dimension must be at least 2".into()));
    }
    let blocks = row_blocks(&apportion(profile.weights(), n)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (n as f64).sqrt();
    let mut m = Mat::<Complex64>::zeros(n, n);
    // column-major fill order keeps the stream layout fixed
    for j in 0..n {
        for i in 0..n {
            let sd = (profile.kernel_entry(blocks[i], blocks[j])).sqrt() * scale;
            let x: f64 = rng.sample(StandardNormal);
            let v = if opts.complex_entries {
                let y: f64 = rng.sample(StandardNormal);
                Complex64::new(x, y) * std::f64::consts::FRAC_1_SQRT_2
            } else {
                Complex64::new(x, 0.0)
            };
            m[(i, j)] = v * sd;
        }
        m[(j, j)] += profile.deformation()[blocks[j]];
    }
    Ok(m)
}

fn frobenius(m: &Mat<Complex64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

/// Relative residual ‖(M − λ)x‖/(‖M‖‖x‖) of an inverse-iteration vector.
pub fn eigenpair_residual(m: &Mat<Complex64>, lambda: Complex64) -> f64 {
    let n = m.nrows();
    let norm = frobenius(m).max(f64::MIN_POSITIVE);
    let shift = lambda + Complex64::new(1.0, 1.0) * (1e-13 * norm);
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    let lu = shifted.partial_piv_lu();
    let mut x = Mat::<Complex64>::from_fn(n, 1, |i, _| Complex64::new(1.0, 0.1 * (i % 7) as f64));
    for _ in 0..3 {
        x = lu.solve(&x);
        let xn = (0..n).map(|i| x[(i, 0)].norm_sqr()).sum::<f64>().sqrt();
        if !(xn > 0.0 && xn.is_finite()) {
            return f64::INFINITY;
        }
        for i in 0..n {
            x[(i, 0)] /= xn;
        }
    }
    let mut r = 0.0;
    for i in 0..n {
        let mut s = -lambda * x[(i, 0)];
        for j in 0..n {
            s += m[(i, j)] * x[(j, 0)];
        }
        r += s.norm_sqr();
    }
    r.sqrt() / norm
}

fn canonical_sort(v: &mut [Complex64]) {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// All eigenvalues, sorted by (re, im); `checks` random eigenpairs are
/// verified by inverse iteration to backward error 1e−8·‖M‖.
pub fn eigenvalues(m: &Mat<Complex64>, checks: usize, seed: u64) -> Result<(Vec<Complex64>, f64)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Length { expected: n, got: m.ncols() });
    }
    for j in 0..n {
        for i in 0..n {
            if !(m[(i, j)].re.is_finite() && m[(i, j)].im.is_finite()) {
                return Err(Error::Argument(format!("non-finite matrix entry at ({i}, {j})")));
            }
        }
    }
    let mut ev = m.eigenvalues().map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
    if ev.len() != n {
        return Err(Error::Numerical(format!("eigensolver returned {} of {n} eigenvalues", ev.len())));
    }
    canonical_sort(&mut ev);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let picks: Vec<usize> = (0..checks.min(n)).map(|_| rng.random_range(0..n)).collect();
    let worst = picks.par_iter().map(|&k| eigenpair_residual(m, ev[k])).reduce(|| 0.0, f64::max);
    if !(worst <= 1e-8) {
        return Err(Error::Numerical(format!("eigenpair backward error {worst:.3e} exceeds 1e-8")));
    }
    Ok((ev, worst))
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSample {
    pub n: usize,
    pub seed: u64,
    pub eigenvalues: Vec<Complex64>,
    pub profile_ref: String,
    /// |Σλ − tr M|
    pub trace_defect: f64,
    pub max_residual: f64,
}

pub fn sample_spectrum(profile: &AtomicProfile, name: &str, n: usize, seed: u64, opts: &SampleOptions) -> Result<SpectrumSample> {
    let m = sample_matrix(profile, n, seed, opts)?;
    let (eigenvalues, max_residual) = eigenvalues(&m, 10, seed)?;
    let trace: Complex64 = (0..n).map(|i| m[(i, i)]).sum();
    let sum: Complex64 = eigenvalues.iter().sum();
    let trace_defect = (sum - trace).norm();
    let bound = 1e-6 * (n as f64).sqrt() * (1.0 + profile.max_abs_deformation());
    if !(trace_defect <= bound) {
        return Err(Error::Numerical(format!("trace defect {trace_defect:.3e} exceeds {bound:.3e}")));
    }
    Ok(SpectrumSample { n, seed, eigenvalues, profile_ref: name.to_string(), trace_defect, max_residual })
}

/// Spectra for several seeds, in parallel.
pub fn sample_spectra(profile: &AtomicProfile, name: &str, n: usize, seeds: &[u64], opts: &SampleOptions) -> Result<Vec<SpectrumSample>> {
    seeds.par_iter().map(|&s| sample_spectrum(profile, name, n, s, opts)).collect()
}

/// Largest distance from an eigenvalue to the conjugate of its nearest
/// partner; zero for conjugate-closed spectra.
pub fn conjugation_defect(ev: &[Complex64]) -> f64 {
    ev.iter()
        .map(|l| ev.iter().map(|m| (m - l.conj()).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CompareOptions {
    /// An eigenvalue counts as inside when β(λ) < tol_out.
    pub tol_out: f64,
    /// Coarse partition of the grid window.
    pub cells_x: usize,
    pub cells_y: usize,
    /// Minimum expected count for a cell to enter the band test.
    pub min_expected: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { tol_out: 0.05, cells_x: 8, cells_y: 8, min_expected: 10.0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellCount {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    pub expected: f64,
    pub observed: usize,
    pub bulk: bool,
    pub within_3sigma: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub n: usize,
    pub inside_fraction: f64,
    pub outside_in_window: usize,
    pub bulk_cells: usize,
    pub bulk_within_3sigma: usize,
    /// Share of bulk cells inside the 3σ Poisson band; 1 when there are none.
    pub band_fraction: f64,
    /// Σ (obs − exp)²/exp over bulk cells.
    pub chi2: f64,
    pub cells: Vec<CellCount>,
}

pub fn compare(profile: &AtomicProfile, sample: &[Complex64], grid: &DensityGrid, opts: &CompareOptions) -> Result<CompareReport> {
    let n = sample.len();
    if n == 0 {
        return Ok(CompareReport {
            n,
            inside_fraction: 1.0,
            outside_in_window: 0,
            bulk_cells: 0,
            bulk_within_3sigma: 0,
            band_fraction: 1.0,
            chi2: 0.0,
            cells: vec![],
        });
    }
    let betas: Vec<f64> = sample.par_iter().map(|&l| beta_eval(profile, l).map(|e| e.beta)).collect::<Result<_>>()?;
    let inside = betas.iter().filter(|&&b| b < opts.tol_out).count();
    let w = grid.window;
    let (cx, cy) = (opts.cells_x.max(1), opts.cells_y.max(1));
    let cw = (w.re_max - w.re_min) / cx as f64;
    let ch = (w.im_max - w.im_min) / cy as f64;
    let cell_of = |z: Complex64| -> Option<usize> {
        if !w.contains(z) {
            return None;
        }
        let i = (((z.re - w.re_min) / cw) as usize).min(cx - 1);
        let j = (((z.im - w.im_min) / ch) as usize).min(cy - 1);
        Some(j * cx + i)
    };
    let mut expected = vec![0.0; cx * cy];
    let mut all_inside = vec![true; cx * cy];
    let area = grid.dx() * grid.dy();
    for j in 0..grid.ny {
        let wy = if j == 0 || j == grid.ny - 1 { 0.5 } else { 1.0 };
        for i in 0..grid.nx {
            let wx = if i == 0 || i == grid.nx - 1 { 0.5 } else { 1.0 };
            let k = grid.idx(i, j);
            if let Some(c) = cell_of(grid.point(i, j)) {
                expected[c] += n as f64 * wx * wy * area * grid.sigma[k];
                all_inside[c] &= grid.mask[k];
            }
        }
    }
    let mut observed = vec![0usize; cx * cy];
    let mut outside_in_window = 0;
    for (l, b) in sample.iter().zip(&betas) {
        if let Some(c) = cell_of(*l) {
            observed[c] += 1;
            if *b >= opts.tol_out {
                outside_in_window += 1;
            }
        }
    }
    let mut cells = Vec::with_capacity(cx * cy);
    let (mut bulk_cells, mut within, mut chi2) = (0, 0, 0.0);
    for j in 0..cy {
        for i in 0..cx {
            let c = j * cx + i;
            let bulk = all_inside[c] && expected[c] >= opts.min_expected;
            let dev = observed[c] as f64 - expected[c];
            let ok = dev.abs() <= 3.0 * expected[c].sqrt();
            if bulk {
                bulk_cells += 1;
                within += ok as usize;
                chi2 += dev * dev / expected[c];
            }
            cells.push(CellCount {
                re_min: w.re_min + i as f64 * cw,
                re_max: w.re_min + (i + 1) as f64 * cw,
                im_min: w.im_min + j as f64 * ch,
                im_max: w.im_min + (j + 1) as f64 * ch,
                expected: expected[c],
                observed: observed[c],
                bulk,
                within_3sigma: ok,
            });
        }
    }
    Ok(CompareReport {
        n,
        inside_fraction: inside as f64 / n as f64,
        outside_in_window,
        bulk_cells,
        bulk_within_3sigma: within,
        band_fraction: if bulk_cells == 0 { 1.0 } else { within as f64 / bulk_cells as f64 },
        chi2,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn apportionment() {
        assert_eq!(apportion(&[0.5, 0.5], 4).unwrap(), vec![2, 2]);
        assert_eq!(apportion(&[0.25; 4], 1000).unwrap(), vec![250; 4]);
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 10).unwrap().iter().sum::<usize>(), 10);
        assert!(apportion(&[0.5, 0.25, 0.25], 2).is_err());
    }

    #[test]
    fn sample_layout() {
        let p = AtomicProfile::scalar(vec![0.5, 0.5], vec![c(1.0, 0.0), c(-1.0, 0.0)], 1.0).unwrap();
        let m1 = sample_matrix(&p, 4, 7, &SampleOptions::default()).unwrap();
        let m2 = sample_matrix(&p, 4, 7, &SampleOptions::default()).unwrap();
        let z = AtomicProfile::scalar(vec![0.5, 0.5], vec![c(0.0, 0.0), c(0.0, 0.0)], 1.0).unwrap();
        let x = sample_matrix(&z, 4, 7, &SampleOptions::default()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m1[(i, j)], m2[(i, j)]);
                let a = if i == j { if i < 2 { 1.0 } else { -1.0 } } else { 0.0 };
                assert!((m1[(i, j)] - x[(i, j)] - a).norm() < 1e-15);
                assert_eq!(x[(i, j)].im, 0.0);
            }
        }
    }

    #[test]
    fn known_spectra() {
        let d = Mat::<Complex64>::from_fn(3, 3, |i, j| if i == j { c(i as f64 - 1.0, 0.5) } else { c(0.0, 0.0) });
        let (ev, _) = eigenvalues(&d, 3, 1).unwrap();
        assert_eq!(ev, vec![c(-1.0, 0.5), c(0.0, 0.5), c(1.0, 0.5)]);
        let r = Mat::<Complex64>::from_fn(2, 2, |i, j| c(if i < j { 1.0 } else if i > j { -1.0 } else { 0.0 }, 0.0));
        let (ev, _) = eigenvalues(&r, 2, 1).unwrap();
        assert!((ev[0] - c(0.0, -1.0)).norm() < 1e-14 && (ev[1] - c(0.0, 1.0)).norm() < 1e-14);
        // companion matrix of z³ − 1
        let comp = Mat::<Complex64>::from_fn(3, 3, |i, j| c(if i == j + 1 || (i == 0 && j == 2) { 1.0 } else { 0.0 }, 0.0));
        let (ev, _) = eigenvalues(&comp, 3, 1).unwrap();
        for l in ev {
            assert!((l.powi(3) - 1.0).norm() < 1e-12);
        }
    }

    #[test]
    fn real_spectra_are_conjugate_closed() {
        let p = AtomicProfile::scalar(vec![0.5, 0.5], vec![c(1.0, 0.0), c(-1.0, 0.0)], 1.0).unwrap();
        let s = sample_spectrum(&p, "x2_minus_y2", 60, 3, &SampleOptions::default()).unwrap();
        assert_eq!(s.eigenvalues.len(), 60);
        assert!(conjugation_defect(&s.eigenvalues) < 1e-8);
    }
}
