//! Empirical measures: uniform-weight atom clouds and the distances between
//! them.
//!
//! The particle system carries its own law. At every step the `N` positions
//! `x_1, ..., x_N` form the empirical measure
//!
//! ```text
//! mu = (1/N) sum_j delta_{x_j}
//! ```
//!
//! which is what the coefficient functions see in place of the true law.
//! Diagnostics compare clouds in Wasserstein-2 distance: exactly in one
//! dimension (sorting both clouds yields an optimal coupling), and through
//! the index-matched coupling upper bound in any dimension.

use serde::Serialize;
use thiserror::Error;

/// Errors from constructing or comparing empirical measures.
#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("atom {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("an empirical measure needs at least one atom")]
    Empty,
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("flat buffer of length {len} is not a multiple of dimension {dim}")]
    RaggedBuffer { len: usize, dim: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("atom count mismatch: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },
    #[error("exact W2 needs one-dimensional atoms, got dimension {dim}")]
    NotOneDimensional { dim: usize },
}

/// A uniform-weight cloud of `N` atoms in `R^d`.
///
/// Atoms are stored row-major: atom `j` occupies `atoms[j*d .. (j+1)*d]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    atoms: Vec<f64>,
    count: usize,
    dim: usize,
}

impl EmpiricalMeasure {
    /// Builds a measure from a flat row-major buffer of `count * dim` floats.
    pub fn from_flat(atoms: Vec<f64>, dim: usize) -> Result<Self, MeasureError> {
        if dim == 0 {
            return Err(MeasureError::ZeroDimension);
        }
        if atoms.is_empty() {
            return Err(MeasureError::Empty);
        }
        if atoms.len() % dim != 0 {
            return Err(MeasureError::RaggedBuffer {
                len: atoms.len(),
                dim,
            });
        }
        if let Some(bad) = atoms.iter().position(|v| !v.is_finite()) {
            return Err(MeasureError::NonFinite { index: bad / dim });
        }
        let count = atoms.len() / dim;
        Ok(Self { atoms, count, dim })
    }

    /// Convenience constructor for one-dimensional clouds.
    pub fn from_scalars(xs: &[f64]) -> Result<Self, MeasureError> {
        Self::from_flat(xs.to_vec(), 1)
    }

    /// Number of atoms `N`.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Position of atom `j`.
    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j * self.dim..(j + 1) * self.dim]
    }

    /// The full row-major atom buffer.
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Mean position `(1/N) sum_j x_j`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for atom in self.atoms.chunks_exact(self.dim) {
            for (acc, v) in out.iter_mut().zip(atom) {
                *acc += v;
            }
        }
        let inv = 1.0 / self.count as f64;
        for acc in &mut out {
            *acc *= inv;
        }
        out
    }

    /// p-th absolute moment `(1/N) sum_j |x_j|^p` (Euclidean norm).
    pub fn moment(&self, p: f64) -> f64 {
        let mut acc = 0.0;
        for atom in self.atoms.chunks_exact(self.dim) {
            let sq: f64 = atom.iter().map(|v| v * v).sum();
            acc += sq.powf(p / 2.0);
        }
        acc / self.count as f64
    }

    /// Exact Wasserstein-2 distance between two one-dimensional clouds of the
    /// same size.
    ///
    /// Sorting both clouds realises an optimal coupling (the quantile
    /// coupling), so the distance is the root-mean-square gap between order
    /// statistics.
    pub fn w2_distance_1d(&self, other: &Self) -> Result<f64, MeasureError> {
        if self.dim != 1 {
            return Err(MeasureError::NotOneDimensional { dim: self.dim });
        }
        if other.dim != 1 {
            return Err(MeasureError::NotOneDimensional { dim: other.dim });
        }
        if self.count != other.count {
            return Err(MeasureError::CountMismatch {
                left: self.count,
                right: other.count,
            });
        }
        let mut a = self.atoms.clone();
        let mut b = other.atoms.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let sum: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| {
                let d = x - y;
                d * d
            })
            .sum();
        Ok((sum / self.count as f64).sqrt())
    }

    /// Index-matched coupling bound: `sqrt((1/N) sum_j |x_j - y_j|^2)`.
    ///
    /// Pairing atom `j` with atom `j` is one admissible coupling of the two
    /// clouds, so this always dominates the true W2 distance. It is the
    /// natural estimate when both clouds come from the same particle indices
    /// (e.g. two discretization levels driven by shared noise).
    pub fn w2_coupling_bound(&self, other: &Self) -> Result<f64, MeasureError> {
        if self.dim != other.dim {
            return Err(MeasureError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        if self.count != other.count {
            return Err(MeasureError::CountMismatch {
                left: self.count,
                right: other.count,
            });
        }
        let sum: f64 = self
            .atoms
            .iter()
            .zip(&other.atoms)
            .map(|(x, y)| {
                let d = x - y;
                d * d
            })
            .sum();
        Ok((sum / self.count as f64).sqrt())
    }
}
