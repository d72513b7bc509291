//! Discretized data: weights, deformation atoms and the variance kernel.

use std::ops::{Add, Mul};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct AtomicProfile {
    weights: Vec<f64>,
    deformation: Vec<Complex64>,
    // row-major K×K
    kernel: Vec<f64>,
    scalar: Option<f64>,
    max_kernel: f64,
    max_abs_deformation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub weight_sum: f64,
    pub weights_normalized: bool,
    pub diagonal_positive: bool,
    pub primitive: bool,
    /// Smallest L with all entries of Z^L positive.
    pub witness_power: Option<usize>,
}

impl ValidationReport {
    pub fn satisfies_a1(&self) -> bool {
        self.diagonal_positive && self.primitive
    }
}

impl AtomicProfile {
    /// Structural checks only; see [`AtomicProfile::new`] for the full model.
    pub fn from_parts(weights: Vec<f64>, deformation: Vec<Complex64>, kernel: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Model("empty profile".into()));
        }
        if deformation.len() != k {
            return Err(Error::Model(format!("{} weights but {} deformation values", k, deformation.len())));
        }
        if kernel.len() != k || kernel.iter().any(|r| r.len() != k) {
            return Err(Error::Model(format!("kernel must be {k}x{k}")));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::Model(format!("weight {i} is not a positive number: {w}")));
            }
        }
        if deformation.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::Model("deformation contains non-finite values".into()));
        }
        let flat: Vec<f64> = kernel.into_iter().flatten().collect();
        if let Some(v) = flat.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Model(format!("kernel entry {v} is negative or not finite")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Model(format!("weights sum to {sum}, not 1")));
        }
        let first = flat[0];
        let scalar = flat.iter().all(|&v| v == first).then_some(first);
        let max_kernel = flat.iter().cloned().fold(0.0, f64::max);
        let max_abs_deformation = deformation.iter().map(|a| a.norm()).fold(0.0, f64::max);
        Ok(Self { weights, deformation, kernel: flat, scalar, max_kernel, max_abs_deformation })
    }

    /// Builds a profile and rejects kernels violating block-primitivity.
    pub fn new(weights: Vec<f64>, deformation: Vec<Complex64>, kernel: Vec<Vec<f64>>) -> Result<Self> {
        let p = Self::from_parts(weights, deformation, kernel)?;
        let report = p.validate();
        if !report.satisfies_a1() {
            return Err(Error::Model(format!(
                "kernel zero pattern is not primitive with positive diagonal ({report:?})"
            )));
        }
        Ok(p)
    }

    /// Constant kernel s ≡ t.
    pub fn scalar(weights: Vec<f64>, deformation: Vec<Complex64>, t: f64) -> Result<Self> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Model(format!("scalar variance must be positive, got {t}")));
        }
        let k = weights.len();
        Self::new(weights, deformation, vec![vec![t; k]; k])
    }

    pub fn from_measure(nu: &AtomMeasure, t: f64) -> Result<Self> {
        Self::scalar(nu.masses.clone(), nu.atoms.clone(), t)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn deformation(&self) -> &[Complex64] {
        &self.deformation
    }

    pub fn kernel_entry(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.len() + j]
    }

    pub fn kernel_rows(&self) -> Vec<Vec<f64>> {
        self.kernel.chunks(self.len()).map(|r| r.to_vec()).collect()
    }

    /// Value t when the kernel is constant.
    pub fn scalar_variance(&self) -> Option<f64> {
        self.scalar
    }

    pub fn max_kernel(&self) -> f64 {
        self.max_kernel
    }

    pub fn max_abs_deformation(&self) -> f64 {
        self.max_abs_deformation
    }

    /// |a_i − ζ|² for every atom.
    pub fn dist_sq(&self, zeta: Complex64) -> Vec<f64> {
        self.deformation.iter().map(|a| (a - zeta).norm_sqr()).collect()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::Length { expected: self.len(), got: n });
        }
        Ok(())
    }

    /// (Su)_i = Σ_j s_ij μ_j u_j
    pub fn apply_s<T>(&self, u: &[T]) -> Result<Vec<T>>
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T> + Default,
    {
        self.check_len(u.len())?;
        Ok(self.apply_s_unchecked(u))
    }

    /// (S*u)_i = Σ_j s_ji μ_j u_j
    pub fn apply_s_star<T>(&self, u: &[T]) -> Result<Vec<T>>
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T> + Default,
    {
        self.check_len(u.len())?;
        Ok(self.apply_s_star_unchecked(u))
    }

    pub(crate) fn apply_s_unchecked<T>(&self, u: &[T]) -> Vec<T>
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T> + Default,
    {
        let k = self.len();
        if let Some(t) = self.scalar {
            let avg = self.avg_unchecked(u) * t;
            return vec![avg; k];
        }
        (0..k)
            .map(|i| {
                let row = &self.kernel[i * k..(i + 1) * k];
                row.iter()
                    .zip(&self.weights)
                    .zip(u)
                    .fold(T::default(), |acc, ((&s, &m), &x)| acc + x * (s * m))
            })
            .collect()
    }

    pub(crate) fn apply_s_star_unchecked<T>(&self, u: &[T]) -> Vec<T>
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T> + Default,
    {
        let k = self.len();
        if let Some(t) = self.scalar {
            let avg = self.avg_unchecked(u) * t;
            return vec![avg; k];
        }
        (0..k)
            .map(|i| {
                (0..k).fold(T::default(), |acc, j| acc + u[j] * (self.kernel[j * k + i] * self.weights[j]))
            })
            .collect()
    }

    /// ⟨u⟩ = Σ μ_i u_i
    pub fn weighted_avg<T>(&self, u: &[T]) -> Result<T>
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T> + Default,
    {
        self.check_len(u.len())?;
        Ok(self.avg_unchecked(u))
    }

    pub(crate) fn avg_unchecked<T>(&self, u: &[T]) -> T
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T> + Default,
    {
        u.iter().zip(&self.weights).fold(T::default(), |acc, (&x, &m)| acc + x * m)
    }

    pub fn validate(&self) -> ValidationReport {
        let k = self.len();
        let weight_sum: f64 = self.weights.iter().sum();
        let z: Vec<bool> = self.kernel.iter().map(|&s| s > 0.0).collect();
        let diagonal_positive = (0..k).all(|i| z[i * k + i]);
        // Wielandt: a primitive pattern reaches full positivity by (K-1)²+1
        let limit = (k - 1) * (k - 1) + 1;
        let mut power = z.clone();
        let mut witness = None;
        for l in 1..=limit {
            if power.iter().all(|&b| b) {
                witness = Some(l);
                break;
            }
            let mut next = vec![false; k * k];
            for i in 0..k {
                for m in 0..k {
                    if !power[i * k + m] {
                        continue;
                    }
                    for j in 0..k {
                        if z[m * k + j] {
                            next[i * k + j] = true;
                        }
                    }
                }
            }
            if next == power {
                break;
            }
            power = next;
        }
        ValidationReport {
            weight_sum,
            weights_normalized: (weight_sum - 1.0).abs() <= WEIGHT_TOL,
            diagonal_positive,
            primitive: witness.is_some(),
            witness_power: witness,
        }
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Model(format!("model schema: {e}")))?;
        file.into_profile()
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile {
            weights: self.weights.clone(),
            deformation: self.deformation.iter().map(|a| [a.re, a.im]).collect(),
            kernel: if self.scalar.is_some() { None } else { Some(self.kernel_rows()) },
            scalar_variance: self.scalar,
        }
    }
}

/// On-disk model description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub weights: Vec<f64>,
    pub deformation: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar_variance: Option<f64>,
}

impl ModelFile {
    pub fn into_profile(self) -> Result<AtomicProfile> {
        let deformation: Vec<Complex64> = self.deformation.iter().map(|p| Complex64::new(p[0], p[1])).collect();
        match (self.kernel, self.scalar_variance) {
            (Some(_), Some(_)) => Err(Error::Model("give either kernel or scalar_variance, not both".into())),
            (None, None) => Err(Error::Model("missing kernel or scalar_variance".into())),
            (Some(k), None) => AtomicProfile::new(self.weights, deformation, k),
            (None, Some(t)) => AtomicProfile::scalar(self.weights, deformation, t),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomMeasure {
    pub atoms: Vec<Complex64>,
    pub masses: Vec<f64>,
}

impl AtomMeasure {
    pub fn new(atoms: Vec<Complex64>, masses: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != masses.len() {
            return Err(Error::Argument("atoms and masses must be nonempty and of equal length".into()));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::Argument("masses must be positive".into()));
        }
        let sum: f64 = masses.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Argument(format!("masses sum to {sum}, not 1")));
        }
        for i in 0..atoms.len() {
            for j in 0..i {
                if atoms[i] == atoms[j] {
                    return Err(Error::Argument(format!("atom {} repeated", atoms[i])));
                }
            }
        }
        Ok(Self { atoms, masses })
    }

    /// Normalizes arbitrary positive masses to sum 1.
    pub fn normalized(atoms: Vec<Complex64>, masses: Vec<f64>) -> Result<Self> {
        let sum: f64 = masses.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(Error::Argument("masses must have positive finite sum".into()));
        }
        Self::new(atoms, masses.iter().map(|m| m / sum).collect())
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_by_two_kernel() {
        let p = AtomicProfile::new(vec![0.5, 0.5], vec![c(0.0, 0.0); 2], vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let w = p.apply_s(&[1.0, 1.0]).unwrap();
        assert!((w[0] - 1.5).abs() < 1e-15 && (w[1] - 3.5).abs() < 1e-15);
        let w = p.apply_s_star(&[1.0, 1.0]).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-15 && (w[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_weight_kernel_is_identity() {
        let mu = vec![0.2, 0.3, 0.5];
        let kernel = (0..3).map(|i| (0..3).map(|j| if i == j { 1.0 / mu[i] } else { 0.0 }).collect()).collect();
        let p = AtomicProfile::from_parts(mu, vec![c(0.0, 0.0); 3], kernel).unwrap();
        let u = [1.0, -2.0, 7.5];
        let w = p.apply_s(&u).unwrap();
        for i in 0..3 {
            assert!((w[i] - u[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_one_kernel_averages() {
        let p = AtomicProfile::scalar(vec![0.25, 0.75], vec![c(1.0, 0.0), c(-1.0, 0.0)], 1.0).unwrap();
        let u = [c(4.0, 1.0), c(0.0, -1.0)];
        let w = p.apply_s(&u).unwrap();
        assert_eq!(w[0], w[1]);
        assert!((w[0] - c(1.0, -0.5)).norm() < 1e-15);
        assert!((p.weighted_avg(&[4.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        let p = AtomicProfile::scalar(vec![1.0], vec![c(0.0, 0.0)], 1.0).unwrap();
        assert!(matches!(p.apply_s(&[1.0, 2.0]), Err(Error::Length { .. })));
        assert!(p.weighted_avg(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn validation_reports() {
        let full = AtomicProfile::scalar(vec![0.5, 0.5], vec![c(0.0, 0.0); 2], 1.0).unwrap();
        let r = full.validate();
        assert!(r.satisfies_a1() && r.witness_power == Some(1));

        let perm = AtomicProfile::from_parts(vec![0.5, 0.5], vec![c(0.0, 0.0); 2], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let r = perm.validate();
        assert!(!r.diagonal_positive && !r.primitive && !r.satisfies_a1());

        let tri = AtomicProfile::from_parts(vec![0.5, 0.5], vec![c(0.0, 0.0); 2], vec![vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let r = tri.validate();
        assert!(r.diagonal_positive && !r.primitive);
        assert!(AtomicProfile::new(vec![0.5, 0.5], vec![c(0.0, 0.0); 2], vec![vec![1.0, 1.0], vec![0.0, 1.0]]).is_err());

        // path pattern 1-2-3 needs two steps
        let path = AtomicProfile::from_parts(
            vec![0.25, 0.5, 0.25],
            vec![c(0.0, 0.0); 3],
            vec![vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 1.0], vec![0.0, 1.0, 1.0]],
        )
        .unwrap();
        assert_eq!(path.validate().witness_power, Some(2));
    }

    #[test]
    fn json_roundtrip_and_rejection() {
        let p = AtomicProfile::from_json_str(r#"{"weights":[0.5,0.5],"deformation":[[1,0],[-1,0]],"scalar_variance":1}"#).unwrap();
        assert_eq!(p.scalar_variance(), Some(1.0));
        let text = serde_json::to_string(&p.to_model_file()).unwrap();
        let q = AtomicProfile::from_json_str(&text).unwrap();
        assert_eq!(q.deformation(), p.deformation());

        assert!(AtomicProfile::from_json_str(r#"{"weights":[0.5,0.5],"deformation":[[1,0],[-1,0]],"kernel":[[1,-1],[1,1]]}"#).is_err());
        assert!(AtomicProfile::from_json_str(r#"{"weights":[0.5,0.6],"deformation":[[1,0],[-1,0]],"scalar_variance":1}"#).is_err());
        assert!(AtomicProfile::from_json_str(r#"{"weights":[1.0],"deformation":[[1,0]]}"#).is_err());
        assert!(AtomicProfile::from_json_str("{not json").is_err());
    }

    #[test]
    fn atom_measure_checks() {
        assert!(AtomMeasure::new(vec![c(1.0, 0.0), c(1.0, 0.0)], vec![0.5, 0.5]).is_err());
        assert!(AtomMeasure::new(vec![c(1.0, 0.0)], vec![0.9]).is_err());
        let nu = AtomMeasure::normalized(vec![c(1.0, 0.0), c(-1.0, 0.0)], vec![2.0, 2.0]).unwrap();
        assert_eq!(nu.masses, vec![0.5, 0.5]);
    }
}
