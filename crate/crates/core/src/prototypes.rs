//! Class prototypes: per-class mean embeddings or classifier weight columns,
//! each carrying a probability mass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FeatureMatrix, LabeledDataset};

#[derive(Debug, Error)]
pub enum PrototypeError {
    #[error("class {0} has no samples; its prototype is undefined")]
    EmptyClass(usize),
    #[error("at least 2 classes are required, got {0}")]
    TooFewClasses(usize),
    #[error("non-finite weight at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

impl PrototypeError {
    pub fn name(&self) -> &'static str {
        match self {
            PrototypeError::EmptyClass(_) => "EmptyClass",
            PrototypeError::TooFewClasses(_) => "TooFewClasses",
            PrototypeError::NonFiniteValue { .. } => "NonFiniteValue",
            PrototypeError::DimensionMismatch(_) => "DimensionMismatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeSource {
    FromData,
    FromWeights,
}

/// `C` prototype vectors (rows of a `C x d` matrix) with masses summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    prototypes: FeatureMatrix,
    masses: Vec<f64>,
    source: PrototypeSource,
}

impl PrototypeSet {
    /// Assembles a set from parts, checking the mass vector.
    pub fn new(
        prototypes: FeatureMatrix,
        masses: Vec<f64>,
        source: PrototypeSource,
    ) -> Result<Self, PrototypeError> {
        if prototypes.rows() < 2 {
            return Err(PrototypeError::TooFewClasses(prototypes.rows()));
        }
        if masses.len() != prototypes.rows() {
            return Err(PrototypeError::DimensionMismatch(format!(
                "{} masses for {} prototypes",
                masses.len(),
                prototypes.rows()
            )));
        }
        let total: f64 = masses.iter().sum();
        if masses.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(PrototypeError::DimensionMismatch(format!(
                "masses must be nonnegative and sum to 1, got sum {total}"
            )));
        }
        Ok(PrototypeSet {
            prototypes,
            masses,
            source,
        })
    }

    /// Class means of the training embeddings, weighted by class frequency.
    pub fn from_data(train: &LabeledDataset) -> Result<Self, PrototypeError> {
        let num_classes = train.num_classes();
        if num_classes < 2 {
            return Err(PrototypeError::TooFewClasses(num_classes));
        }
        let features = train.features();
        let dim = features.cols();
        let mut sums = vec![0.0f64; num_classes * dim];
        let mut counts = vec![0usize; num_classes];
        for (row, &label) in features.iter_rows().zip(train.labels()) {
            counts[label] += 1;
            let acc = &mut sums[label * dim..(label + 1) * dim];
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(PrototypeError::EmptyClass(c));
        }
        for (c, &n) in counts.iter().enumerate() {
            let n = n as f64;
            sums[c * dim..(c + 1) * dim]
                .iter_mut()
                .for_each(|v| *v /= n);
        }
        let total = features.rows() as f64;
        let masses = counts.iter().map(|&n| n as f64 / total).collect();
        let prototypes = FeatureMatrix::new(num_classes, dim, sums)
            .expect("class means of finite data are finite");
        PrototypeSet::new(prototypes, masses, PrototypeSource::FromData)
    }

    /// Prototypes from a `d x C` row-major weight matrix: prototype `c` is
    /// column `c`. Masses are uniform. Bias terms are not consumed.
    pub fn from_weights(
        weights: &[f64],
        dim: usize,
        num_classes: usize,
    ) -> Result<Self, PrototypeError> {
        if num_classes < 2 {
            return Err(PrototypeError::TooFewClasses(num_classes));
        }
        if dim == 0 || weights.len() != dim * num_classes {
            return Err(PrototypeError::DimensionMismatch(format!(
                "expected {dim}x{num_classes} weights, got {} values",
                weights.len()
            )));
        }
        if let Some(idx) = weights.iter().position(|v| !v.is_finite()) {
            return Err(PrototypeError::NonFiniteValue {
                row: idx / num_classes,
                col: idx % num_classes,
            });
        }
        let mut data = Vec::with_capacity(weights.len());
        for c in 0..num_classes {
            data.extend((0..dim).map(|r| weights[r * num_classes + c]));
        }
        let prototypes =
            FeatureMatrix::new(num_classes, dim, data).expect("validated finite weights");
        let masses = vec![1.0 / num_classes as f64; num_classes];
        PrototypeSet::new(prototypes, masses, PrototypeSource::FromWeights)
    }

    /// Same as [`PrototypeSet::from_weights`] for an already loaded `d x C` matrix.
    pub fn from_weight_matrix(weights: &FeatureMatrix) -> Result<Self, PrototypeError> {
        Self::from_weights(weights.data(), weights.rows(), weights.cols())
    }

    pub fn prototypes(&self) -> &FeatureMatrix {
        &self.prototypes
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn source(&self) -> PrototypeSource {
        self.source
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn l2_normalized(&self) -> PrototypeSet {
        PrototypeSet {
            prototypes: self.prototypes.l2_normalized(),
            masses: self.masses.clone(),
            source: self.source,
        }
    }
}
