//! Primal and dual variables of the minimax AUC objective.

use crate::error::Error;
use crate::rng::RngStream;
use crate::Result;

/// Primal parameter vector with the fixed block layout
/// `[w (weight_dim) | pos_center | neg_center]`.
///
/// `w` holds the classifier parameters; the two trailing scalars are the
/// per-class score centers that the AUC surrogate fits alongside the model.
/// Block accessors and the flat slice view address the same storage, so
/// optimizer code can treat the whole thing as one vector while loss code
/// addresses blocks by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    data: Vec<f64>,
    weight_dim: usize,
}

impl ParamVector {
    /// All-zeros parameter vector for a classifier with `weight_dim` weights.
    pub fn zeros(weight_dim: usize) -> Result<Self> {
        if weight_dim == 0 {
            return Err(Error::Dimension {
                what: "classifier weight dimension",
                expected: 1,
                got: 0,
            });
        }
        Ok(Self {
            data: vec![0.0; weight_dim + 2],
            weight_dim,
        })
    }

    /// Wrap an existing flat vector of length `weight_dim + 2`.
    pub fn from_flat(data: Vec<f64>, weight_dim: usize) -> Result<Self> {
        if weight_dim == 0 || data.len() != weight_dim + 2 {
            return Err(Error::Dimension {
                what: "flat parameter vector",
                expected: weight_dim + 2,
                got: data.len(),
            });
        }
        Ok(Self { data, weight_dim })
    }

    /// Total dimension: `weight_dim + 2`.
    pub fn dim(&self) -> usize {
        self.weight_dim + 2
    }

    pub fn weight_dim(&self) -> usize {
        self.weight_dim
    }

    /// Classifier weight block.
    pub fn w(&self) -> &[f64] {
        &self.data[..self.weight_dim]
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        &mut self.data[..self.weight_dim]
    }

    /// Score center tracked for the positive class.
    pub fn pos_center(&self) -> f64 {
        self.data[self.weight_dim]
    }

    /// Score center tracked for the negative class.
    pub fn neg_center(&self) -> f64 {
        self.data[self.weight_dim + 1]
    }

    pub fn set_pos_center(&mut self, v: f64) {
        self.data[self.weight_dim] = v;
    }

    pub fn set_neg_center(&mut self, v: f64) {
        self.data[self.weight_dim + 1] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// The dual scalar of the minimax surrogate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualScalar(pub f64);

impl DualScalar {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Fresh parameter vector: weights drawn `init_scale * N(0, 1)`, both score
/// centers zero. `init_scale = 0.0` gives the zero vector for any stream.
pub fn make_param(weight_dim: usize, init_scale: f64, rng: &mut RngStream) -> Result<ParamVector> {
    let mut p = ParamVector::zeros(weight_dim)?;
    for w in p.w_mut() {
        *w = init_scale * rng.standard_normal();
    }
    Ok(p)
}
