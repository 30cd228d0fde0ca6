//! Gaussian radial basis functions over normalized phase `z ∈ [0, 1]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of basis functions used unless configured otherwise.
pub const DEFAULT_N_BASIS: usize = 31;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSystem {
    n_basis: usize,
    centers: Vec<f64>,
    width: f64,
    normalize: bool,
}

impl BasisSystem {
    pub fn new(centers: Vec<f64>, width: f64, normalize: bool) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Config("basis needs at least one center".into()));
        }
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::Config(format!("basis width must be positive, got {width}")));
        }
        if centers.iter().any(|c| !(-0.1..=1.1).contains(c)) {
            return Err(Error::Config("basis centers must lie in [-0.1, 1.1]".into()));
        }
        if centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("basis centers must be strictly increasing".into()));
        }
        Ok(Self { n_basis: centers.len(), centers, width, normalize })
    }

    /// `n` centers spaced evenly over `[0, 1]` (endpoints included) with width
    /// `overlap / (n - 1)`. A single basis sits at 0.5.
    pub fn uniform(n: usize, overlap: f64, normalize: bool) -> Result<Self> {
        match n {
            0 => Err(Error::Config("basis needs at least one center".into())),
            1 => Self::new(vec![0.5], overlap, normalize),
            _ => {
                let step = 1.0 / (n - 1) as f64;
                let centers = (0..n).map(|i| i as f64 * step).collect();
                Self::new(centers, overlap * step, normalize)
            }
        }
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn is_normalized(&self) -> bool {
        self.normalize
    }

    /// Re-checks the invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = Self::new(self.centers.clone(), self.width, self.normalize)?;
        if rebuilt.n_basis != self.n_basis {
            return Err(Error::Schema("n_basis does not match the number of centers".into()));
        }
        Ok(())
    }

    /// Writes `ψ(z)` into `out` (length `n_basis`).
    pub fn evaluate_into(&self, z: f64, out: &mut [f64]) -> Result<()> {
        if !z.is_finite() {
            return Err(Error::Domain(format!("phase must be finite, got {z}")));
        }
        debug_assert_eq!(out.len(), self.n_basis);
        let inv = 1.0 / (2.0 * self.width * self.width);
        for (o, c) in out.iter_mut().zip(&self.centers) {
            let d = z - c;
            *o = (-d * d * inv).exp();
        }
        if self.normalize {
            let sum: f64 = out.iter().sum();
            if sum <= 0.0 || !sum.is_finite() {
                return Err(Error::Domain(format!("basis activations vanish at z = {z}")));
            }
            out.iter_mut().for_each(|o| *o /= sum);
        }
        Ok(())
    }

    pub fn evaluate(&self, z: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n_basis);
        self.evaluate_into(z, out.as_mut_slice())?;
        Ok(out)
    }

    /// Design matrix Ψ with one row per phase value.
    pub fn design_matrix(&self, z_values: &[f64]) -> Result<DMatrix<f64>> {
        if z_values.is_empty() {
            return Err(Error::Domain("design matrix needs at least one phase value".into()));
        }
        let mut psi = DMatrix::zeros(z_values.len(), self.n_basis);
        let mut row = vec![0.0; self.n_basis];
        for (t, &z) in z_values.iter().enumerate() {
            if !(-1e-12..=1.0 + 1e-12).contains(&z) {
                return Err(Error::Domain(format!("phase {z} outside [0, 1]")));
            }
            self.evaluate_into(z, &mut row)?;
            for (j, v) in row.iter().enumerate() {
                psi[(t, j)] = *v;
            }
        }
        Ok(psi)
    }
}

impl Default for BasisSystem {
    fn default() -> Self {
        Self::uniform(DEFAULT_N_BASIS, 1.0, true).expect("default basis is valid")
    }
}
