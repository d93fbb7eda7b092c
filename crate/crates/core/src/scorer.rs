//! Contrastive transport-cost scoring.
//!
//! For a batch of test embeddings the scorer solves two entropic OT problems
//! that share the prototype masses and a uniform target: one against the ID
//! prototypes (giving per-sample costs `T`) and one against virtual outliers
//! obtained by pushing each prototype past the batch mean `M`
//! (`eta* = eta + omega (M - eta)`, `omega > 1`), giving `T*`. The score is
//! `S = T - T*`; higher means more likely OOD.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{FeatureMatrix, LogitMatrix};
use crate::prototypes::PrototypeSet;
use crate::transport::{
    self, CostMatrix, Lambda, Marginals, SolverConfig, TransportError, TransportSolution,
};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("omega must be greater than 1, got {0}")]
    OmegaOutOfRange(f64),
    #[error("batch size must be at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

impl ScoreError {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreError::OmegaOutOfRange(_) => "OmegaOutOfRange",
            ScoreError::BatchTooSmall(_) => "BatchTooSmall",
            ScoreError::DimensionMismatch(_) => "DimensionMismatch",
            ScoreError::Transport(e) => e.name(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ScoreError>;

/// Coordinate-wise mean of the rows.
pub fn test_mean(test: &FeatureMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; test.cols()];
    for row in test.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = test.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Prototypes extrapolated beyond the test mean.
#[derive(Debug, Clone)]
pub struct VirtualOutlierSet {
    pub outliers: FeatureMatrix,
    pub masses: Vec<f64>,
    pub omega: f64,
    pub test_mean: Vec<f64>,
    /// Some prototype coincides with the mean, so its outlier did not move.
    pub degenerate: bool,
}

pub fn make_virtual_outliers(
    prototypes: &PrototypeSet,
    mean: &[f64],
    omega: f64,
) -> Result<VirtualOutlierSet> {
    if !(omega > 1.0) || !omega.is_finite() {
        return Err(ScoreError::OmegaOutOfRange(omega));
    }
    if mean.len() != prototypes.dim() {
        return Err(ScoreError::DimensionMismatch(format!(
            "mean has dimension {}, prototypes {}",
            mean.len(),
            prototypes.dim()
        )));
    }
    let mut degenerate = false;
    let mut data = Vec::with_capacity(prototypes.num_classes() * mean.len());
    for eta in prototypes.prototypes().iter_rows() {
        degenerate |= eta == mean;
        data.extend(eta.iter().zip(mean).map(|(e, m)| e + omega * (m - e)));
    }
    if degenerate {
        log::warn!("a prototype coincides with the test mean; its virtual outlier does not move");
    }
    let outliers = FeatureMatrix::new(prototypes.num_classes(), mean.len(), data).map_err(|e| {
        ScoreError::DimensionMismatch(format!("virtual outliers are not representable: {e}"))
    })?;
    Ok(VirtualOutlierSet {
        outliers,
        masses: prototypes.masses().to_vec(),
        omega,
        test_mean: mean.to_vec(),
        degenerate,
    })
}

/// Contrastive scores for one batch, in batch order.
#[derive(Debug, Clone)]
pub struct ScoredBatch {
    pub scores: Vec<f64>,
    pub t_id: Vec<f64>,
    pub t_out: Vec<f64>,
    pub batch_index: usize,
    /// Coefficient used for both solves.
    pub lambda: f64,
    pub omega: f64,
    pub batch_size: usize,
    pub converged: bool,
}

/// Scores one batch. The entropic coefficient is resolved once from the
/// prototype cost matrix and reused for the virtual-outlier solve.
pub fn score_batch(
    prototypes: &PrototypeSet,
    test: &FeatureMatrix,
    omega: f64,
    solver: &SolverConfig,
) -> Result<ScoredBatch> {
    if !(omega > 1.0) || !omega.is_finite() {
        return Err(ScoreError::OmegaOutOfRange(omega));
    }
    if test.cols() != prototypes.dim() {
        return Err(ScoreError::DimensionMismatch(format!(
            "test features have dimension {}, prototypes {}",
            test.cols(),
            prototypes.dim()
        )));
    }
    if test.rows() == 1 {
        log::warn!("scoring a batch of one sample; all its mass is forced onto one column");
    }
    let m = test.rows();
    let marginals = Marginals::uniform_target(prototypes.masses().to_vec(), m)?;

    let id_cost = transport::euclidean_cost(prototypes, test)?;
    let lambda = solver.lambda.resolve(&id_cost);
    let config = solver.with_lambda(Lambda::Fixed(lambda));
    let id_solution = transport::sinkhorn(&id_cost, &marginals, &config)?;

    let virtual_outliers = make_virtual_outliers(prototypes, &test_mean(test), omega)?;
    let out_cost = CostMatrix::euclidean(&virtual_outliers.outliers, test)?;
    let out_solution = transport::sinkhorn(&out_cost, &marginals, &config)?;

    Ok(contrast(id_solution, out_solution, omega, m))
}

fn contrast(
    id: TransportSolution,
    out: TransportSolution,
    omega: f64,
    batch_size: usize,
) -> ScoredBatch {
    let scores = id
        .per_sample_cost
        .iter()
        .zip(&out.per_sample_cost)
        .map(|(t, t_star)| t - t_star)
        .collect();
    ScoredBatch {
        scores,
        converged: id.converged && out.converged,
        lambda: id.lambda,
        t_id: id.per_sample_cost,
        t_out: out.per_sample_cost,
        batch_index: 0,
        omega,
        batch_size,
    }
}

/// Scores for a whole test set, in the original sample order.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamScores {
    pub scores: Vec<f64>,
    pub t_id: Vec<f64>,
    pub t_out: Vec<f64>,
    pub batch_index: Vec<usize>,
    pub num_batches: usize,
    pub all_converged: bool,
}

/// Seeded permutation of `0..n` used to form batches.
pub fn batch_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Shuffles the samples with a seeded permutation, splits them into
/// consecutive batches of `batch_size` (the last may be smaller), scores each
/// batch independently and restores the original order.
pub fn score_stream(
    prototypes: &PrototypeSet,
    test: &FeatureMatrix,
    batch_size: usize,
    seed: u64,
    omega: f64,
    solver: &SolverConfig,
) -> Result<StreamScores> {
    if batch_size < 2 {
        return Err(ScoreError::BatchTooSmall(batch_size));
    }
    if !(omega > 1.0) || !omega.is_finite() {
        return Err(ScoreError::OmegaOutOfRange(omega));
    }
    let order = batch_permutation(test.rows(), seed);
    let batches: Vec<ScoredBatch> = order
        .par_chunks(batch_size)
        .enumerate()
        .map(|(index, idx)| {
            let batch = test
                .select_rows(idx)
                .expect("batch rows come from a valid matrix");
            score_batch(prototypes, &batch, omega, solver).map(|mut b| {
                b.batch_index = index;
                b
            })
        })
        .collect::<Result<_>>()?;

    let n = test.rows();
    let mut out = StreamScores {
        scores: vec![0.0; n],
        t_id: vec![0.0; n],
        t_out: vec![0.0; n],
        batch_index: vec![0; n],
        num_batches: batches.len(),
        all_converged: batches.iter().all(|b| b.converged),
    };
    for (batch, idx) in batches.iter().zip(order.chunks(batch_size)) {
        for (k, &j) in idx.iter().enumerate() {
            out.scores[j] = batch.scores[k];
            out.t_id[j] = batch.t_id[k];
            out.t_out[j] = batch.t_out[k];
            out.batch_index[j] = batch.batch_index;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Maximum softmax probability.
    Msp,
    /// Log-sum-exp of the logits (negative free energy).
    Energy,
}

/// Logit-based scores where higher means more ID.
pub fn baseline_scores(logits: &LogitMatrix, kind: BaselineKind) -> Vec<f64> {
    logits
        .matrix()
        .iter_rows()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|l| (l - max).exp()).sum();
            match kind {
                BaselineKind::Msp => 1.0 / denom,
                BaselineKind::Energy => max + denom.ln(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prototypes::PrototypeSource;

    fn protos(rows: &[[f64; 2]]) -> PrototypeSet {
        let c = rows.len();
        PrototypeSet::new(
            FeatureMatrix::from_rows(rows).unwrap(),
            vec![1.0 / c as f64; c],
            PrototypeSource::FromData,
        )
        .unwrap()
    }

    #[test]
    fn mean_examples() {
        let t = FeatureMatrix::from_rows(&[[0.0, 0.0], [2.0, 2.0]]).unwrap();
        assert_eq!(test_mean(&t), vec![1.0, 1.0]);
        let t = FeatureMatrix::from_rows(&[[3.5, -1.0]]).unwrap();
        assert_eq!(test_mean(&t), vec![3.5, -1.0]);
    }

    #[test]
    fn extrapolation_examples() {
        let p = protos(&[[0.0, 0.0], [2.0, 0.0]]);
        let v = make_virtual_outliers(&p, &[1.0, 1.0], 2.0).unwrap();
        assert_eq!(v.outliers.row(0), &[2.0, 2.0]);
        let v = make_virtual_outliers(&p, &[0.0, 0.0], 1.5).unwrap();
        assert_eq!(v.outliers.row(1), &[-1.0, 0.0]);
        assert_eq!(v.masses, p.masses());
        assert!(v.degenerate);
        assert_eq!(v.outliers.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn omega_out_of_range() {
        let p = protos(&[[0.0, 0.0], [2.0, 0.0]]);
        for omega in [1.0, 0.5, -2.0, f64::NAN] {
            assert!(matches!(
                make_virtual_outliers(&p, &[0.0, 0.0], omega),
                Err(ScoreError::OmegaOutOfRange(_))
            ));
        }
        let t = FeatureMatrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(
            score_batch(&p, &t, 1.0, &SolverConfig::default()),
            Err(ScoreError::OmegaOutOfRange(_))
        ));
    }

    #[test]
    fn stream_rejects_tiny_batches() {
        let p = protos(&[[0.0, 0.0], [2.0, 0.0]]);
        let t = FeatureMatrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(
            score_stream(&p, &t, 1, 0, 2.0, &SolverConfig::default()),
            Err(ScoreError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn single_sample_batch_is_scored() {
        let p = protos(&[[0.0, 0.0], [2.0, 0.0]]);
        let t = FeatureMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let b = score_batch(&p, &t, 2.0, &SolverConfig::default()).unwrap();
        assert_eq!(b.scores.len(), 1);
        assert!(b.scores[0].is_finite());
    }

    #[test]
    fn dimension_mismatch() {
        let p = protos(&[[0.0, 0.0], [2.0, 0.0]]);
        let t = FeatureMatrix::from_rows(&[[1.0, 1.0, 1.0]]).unwrap();
        assert!(matches!(
            score_batch(&p, &t, 2.0, &SolverConfig::default()),
            Err(ScoreError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn baselines() {
        let l = LogitMatrix::new(FeatureMatrix::from_rows(&[[0.0, 0.0], [10.0, 0.0]]).unwrap());
        let msp = baseline_scores(&l, BaselineKind::Msp);
        let energy = baseline_scores(&l, BaselineKind::Energy);
        assert_eq!(msp[0], 0.5);
        assert!((energy[0] - 2f64.ln()).abs() < 1e-15);
        assert!((msp[1] - 1.0 / (1.0 + (-10f64).exp())).abs() < 1e-15);
    }
}
