//! Entropic optimal transport between a weighted point set (prototypes) and
//! a uniformly weighted batch of samples.
//!
//! The plan has the form `diag(a) K diag(b)` with `K = exp(-E / lambda)`; the
//! scalings are found by alternating Sinkhorn-Knopp updates
//! `a <- mu / (K b)`, `b <- nu / (K^T a)`. Two numerical modes exist:
//! [`Stabilization::Plain`] iterates on `a` and `b` directly, and
//! [`Stabilization::LogDomain`] iterates on `log a` and `log b` with
//! log-sum-exp reductions, which survives small `lambda` where `K` underflows.
//!
//! A solve stops once both marginal violations (max-norm) are at or below the
//! configured tolerance, checked after every `b` update, or when the
//! iteration budget runs out. Running out of budget is not an error: the
//! solution comes back with `converged == false`.

use thiserror::Error;

use crate::ingest::FeatureMatrix;
use crate::prototypes::PrototypeSet;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),
    #[error("numerical underflow in plain Sinkhorn ({0}); retry with log-domain stabilization")]
    NumericalUnderflow(String),
    #[error("not converged after {iterations} iterations: marginal residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("input positions are not sorted ascending at index {0}")]
    UnsortedInput(usize),
    #[error("mass mismatch: {0}")]
    MassMismatch(String),
}

impl TransportError {
    pub fn name(&self) -> &'static str {
        match self {
            TransportError::DimensionMismatch(_) => "DimensionMismatch",
            TransportError::InvalidMarginals(_) => "InvalidMarginals",
            TransportError::InvalidConfig(_) => "InvalidConfig",
            TransportError::InvalidCost(_) => "InvalidCost",
            TransportError::NumericalUnderflow(_) => "NumericalUnderflow",
            TransportError::NotConverged { .. } => "NotConverged",
            TransportError::UnsortedInput(_) => "UnsortedInput",
            TransportError::MassMismatch(_) => "MassMismatch",
        }
    }
}

pub type Result<T> = std::result::Result<T, TransportError>;

/// Ground cost `E`, `rows x cols`, row-major, nonnegative and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(TransportError::InvalidCost(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|&e| !(e >= 0.0 && e.is_finite())) {
            return Err(TransportError::InvalidCost(format!(
                "entry ({}, {}) = {} is not a finite nonnegative value",
                idx / cols,
                idx % cols,
                data[idx]
            )));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    /// Pairwise Euclidean distances between the rows of `from` and the rows of `to`.
    pub fn euclidean(from: &FeatureMatrix, to: &FeatureMatrix) -> Result<Self> {
        if from.cols() != to.cols() {
            return Err(TransportError::DimensionMismatch(format!(
                "points of dimension {} vs {}",
                from.cols(),
                to.cols()
            )));
        }
        let mut data = Vec::with_capacity(from.rows() * to.rows());
        for p in from.iter_rows() {
            for z in to.iter_rows() {
                let sq: f64 = p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                data.push(sq.sqrt());
            }
        }
        CostMatrix::new(from.rows(), to.rows(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> CostMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            data.extend((0..self.rows).map(|i| self.get(i, j)));
        }
        CostMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<CostMatrix> {
        CostMatrix::new(
            self.rows,
            self.cols,
            self.data.iter().map(|e| e * factor).collect(),
        )
    }

    /// Median entry (mean of the two middle entries for an even count).
    pub fn median(&self) -> f64 {
        let mut v = self.data.clone();
        let n = v.len();
        let (_, &mut hi, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
        if n % 2 == 1 {
            hi
        } else {
            let lo = v[..n / 2]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            0.5 * (lo + hi)
        }
    }
}

/// Ground cost between prototypes (rows) and test samples (columns).
pub fn euclidean_cost(prototypes: &PrototypeSet, test: &FeatureMatrix) -> Result<CostMatrix> {
    CostMatrix::euclidean(prototypes.prototypes(), test)
}

/// Source masses `mu` (one per row) and target masses `nu` (one per column).
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    mu: Vec<f64>,
    nu: Vec<f64>,
}

fn check_simplex(name: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(TransportError::InvalidMarginals(format!("{name} is empty")));
    }
    if let Some(i) = p.iter().position(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(TransportError::InvalidMarginals(format!(
            "{name}[{i}] = {} is not a nonnegative mass",
            p[i]
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(TransportError::InvalidMarginals(format!(
            "{name} sums to {total}, expected 1"
        )));
    }
    Ok(())
}

impl Marginals {
    pub fn new(mu: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        check_simplex("mu", &mu)?;
        check_simplex("nu", &nu)?;
        Ok(Marginals { mu, nu })
    }

    /// `mu` as given, `nu` uniform over `m` columns.
    pub fn uniform_target(mu: Vec<f64>, m: usize) -> Result<Self> {
        Marginals::new(mu, vec![1.0 / m as f64; m])
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn swapped(&self) -> Marginals {
        Marginals {
            mu: self.nu.clone(),
            nu: self.mu.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stabilization {
    Plain,
    #[default]
    LogDomain,
}

/// How the entropic coefficient is chosen for a given cost matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Fixed(f64),
    /// `factor * median(E)`, recomputed for each cost matrix.
    MedianRelative(f64),
}

impl Default for Lambda {
    fn default() -> Self {
        Lambda::MedianRelative(0.5)
    }
}

impl Lambda {
    /// Resolves to a positive coefficient. A zero median falls back to the
    /// mean entry, and an all-zero cost to 1 (the plan does not depend on
    /// lambda when every entry is zero).
    pub fn resolve(&self, cost: &CostMatrix) -> f64 {
        match *self {
            Lambda::Fixed(v) => v,
            Lambda::MedianRelative(factor) => {
                let mut scale = cost.median();
                if scale <= 0.0 {
                    scale = cost.data().iter().sum::<f64>() / cost.data().len() as f64;
                }
                if scale <= 0.0 {
                    scale = 1.0;
                }
                factor * scale
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub lambda: Lambda,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub stabilization: Stabilization,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: Lambda::default(),
            max_iterations: 10_000,
            tolerance: 1e-8,
            stabilization: Stabilization::LogDomain,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(mut self, lambda: Lambda) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let lambda_ok = match self.lambda {
            Lambda::Fixed(v) | Lambda::MedianRelative(v) => v > 0.0 && v.is_finite(),
        };
        if !lambda_ok {
            return Err(TransportError::InvalidConfig(format!(
                "lambda must be positive and finite, got {:?}",
                self.lambda
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(TransportError::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(TransportError::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one entropic OT solve.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub cost: CostMatrix,
    /// Plan `gamma`, same shape and layout as `cost`.
    pub plan: Vec<f64>,
    /// Per-column transport cost `T_j = sum_i E_ij gamma_ij`.
    pub per_sample_cost: Vec<f64>,
    /// `sum_j T_j`.
    pub total_cost: f64,
    pub iterations: usize,
    pub marginal_residual: f64,
    pub lambda: f64,
    pub converged: bool,
}

impl TransportSolution {
    pub fn plan_entry(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cost.cols() + j]
    }

    /// Frobenius product `<E, gamma>` accumulated row by row.
    pub fn frobenius_cost(&self) -> f64 {
        self.cost
            .data()
            .iter()
            .zip(&self.plan)
            .map(|(e, g)| e * g)
            .sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan
            .chunks_exact(self.cost.cols())
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let cols = self.cost.cols();
        let mut sums = vec![0.0; cols];
        for row in self.plan.chunks_exact(cols) {
            for (s, g) in sums.iter_mut().zip(row) {
                *s += g;
            }
        }
        sums
    }

    /// Turns a non-converged solution into [`TransportError::NotConverged`].
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(TransportError::NotConverged {
                iterations: self.iterations,
                residual: self.marginal_residual,
            })
        }
    }
}

/// Per-column transport costs `T_j = sum_i E_ij gamma_ij` of a solved plan.
pub fn decompose_cost(solution: &TransportSolution) -> Vec<f64> {
    let (rows, cols) = (solution.cost.rows(), solution.cost.cols());
    let e = solution.cost.data();
    (0..cols)
        .map(|j| (0..rows).map(|i| e[i * cols + j] * solution.plan[i * cols + j]).sum())
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Solves entropic OT between `marginals.mu` (rows of `cost`) and
/// `marginals.nu` (columns).
pub fn sinkhorn(
    cost: &CostMatrix,
    marginals: &Marginals,
    config: &SolverConfig,
) -> Result<TransportSolution> {
    config.validate()?;
    if marginals.mu.len() != cost.rows() || marginals.nu.len() != cost.cols() {
        return Err(TransportError::DimensionMismatch(format!(
            "cost is {}x{} but marginals have lengths {} and {}",
            cost.rows(),
            cost.cols(),
            marginals.mu.len(),
            marginals.nu.len()
        )));
    }
    let lambda = config.lambda.resolve(cost);
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(TransportError::InvalidConfig(format!(
            "resolved lambda {lambda} is not positive"
        )));
    }
    let (plan, iterations) = match config.stabilization {
        Stabilization::Plain => plain_scaling(cost, marginals, lambda, config)?,
        Stabilization::LogDomain => log_scaling(cost, marginals, lambda, config),
    };
    let mut solution = TransportSolution {
        cost: cost.clone(),
        plan,
        per_sample_cost: Vec::new(),
        total_cost: 0.0,
        iterations,
        marginal_residual: 0.0,
        lambda,
        converged: false,
    };
    solution.marginal_residual = max_abs_diff(&solution.row_sums(), &marginals.mu)
        .max(max_abs_diff(&solution.col_sums(), &marginals.nu));
    solution.converged = solution.marginal_residual <= config.tolerance;
    solution.per_sample_cost = decompose_cost(&solution);
    solution.total_cost = solution.per_sample_cost.iter().sum();
    if !solution.converged {
        log::warn!(
            "sinkhorn stopped after {} iterations with residual {:e} (tolerance {:e})",
            iterations,
            solution.marginal_residual,
            config.tolerance
        );
    }
    Ok(solution)
}

fn plain_scaling(
    cost: &CostMatrix,
    marginals: &Marginals,
    lambda: f64,
    config: &SolverConfig,
) -> Result<(Vec<f64>, usize)> {
    let (rows, cols) = (cost.rows(), cost.cols());
    let kernel: Vec<f64> = cost.data().iter().map(|e| (-e / lambda).exp()).collect();
    let (mu, nu) = (&marginals.mu, &marginals.nu);

    let mut a = vec![1.0; rows];
    let mut b = vec![1.0; cols];
    let mut kb = vec![0.0; rows];
    let mut kta = vec![0.0; cols];
    let apply_k = |b: &[f64], kb: &mut [f64]| {
        for (i, out) in kb.iter_mut().enumerate() {
            *out = kernel[i * cols..(i + 1) * cols]
                .iter()
                .zip(b)
                .map(|(k, b)| k * b)
                .sum();
        }
    };
    apply_k(&b, &mut kb);

    let mut iterations = 0;
    for it in 1..=config.max_iterations {
        iterations = it;
        for i in 0..rows {
            if kb[i] == 0.0 && mu[i] > 0.0 {
                return Err(TransportError::NumericalUnderflow(format!(
                    "row {i} of K b vanished at lambda {lambda:e}"
                )));
            }
            a[i] = if mu[i] > 0.0 { mu[i] / kb[i] } else { 0.0 };
        }
        kta.iter_mut().for_each(|v| *v = 0.0);
        for (i, &ai) in a.iter().enumerate() {
            for (acc, k) in kta.iter_mut().zip(&kernel[i * cols..(i + 1) * cols]) {
                *acc += k * ai;
            }
        }
        for j in 0..cols {
            if kta[j] == 0.0 && nu[j] > 0.0 {
                return Err(TransportError::NumericalUnderflow(format!(
                    "column {j} of K^T a vanished at lambda {lambda:e}"
                )));
            }
            b[j] = if nu[j] > 0.0 { nu[j] / kta[j] } else { 0.0 };
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(TransportError::NumericalUnderflow(format!(
                "scaling vectors overflowed at lambda {lambda:e}"
            )));
        }
        apply_k(&b, &mut kb);
        let row_res = (0..rows)
            .map(|i| (a[i] * kb[i] - mu[i]).abs())
            .fold(0.0, f64::max);
        let col_res = (0..cols)
            .map(|j| (b[j] * kta[j] - nu[j]).abs())
            .fold(0.0, f64::max);
        if row_res.max(col_res) <= config.tolerance {
            break;
        }
    }

    let mut plan = kernel;
    for (i, row) in plan.chunks_exact_mut(cols).enumerate() {
        for (g, bj) in row.iter_mut().zip(&b) {
            *g *= a[i] * bj;
        }
    }
    Ok((plan, iterations))
}

/// `log(sum(exp(x)))`, returning `-inf` when every term is `-inf`.
fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn log_scaling(
    cost: &CostMatrix,
    marginals: &Marginals,
    lambda: f64,
    config: &SolverConfig,
) -> (Vec<f64>, usize) {
    let (rows, cols) = (cost.rows(), cost.cols());
    // log K, row-major and column-major copies for contiguous reductions
    let log_k: Vec<f64> = cost.data().iter().map(|e| -e / lambda).collect();
    let mut log_kt = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            log_kt[j * rows + i] = log_k[i * cols + j];
        }
    }
    let log_mu: Vec<f64> = marginals.mu.iter().map(|p| p.ln()).collect();
    let log_nu: Vec<f64> = marginals.nu.iter().map(|q| q.ln()).collect();

    let mut f = vec![0.0; rows];
    let mut g = vec![0.0; cols];
    let row_lse = |g: &[f64], i: usize| {
        log_sum_exp(log_k[i * cols..(i + 1) * cols].iter().zip(g).map(|(k, g)| k + g))
    };
    let mut row_log = (0..rows).map(|i| row_lse(&g, i)).collect::<Vec<_>>();
    let mut col_log = vec![0.0; cols];

    let mut iterations = 0;
    for it in 1..=config.max_iterations {
        iterations = it;
        for i in 0..rows {
            f[i] = log_mu[i] - row_log[i];
        }
        for j in 0..cols {
            col_log[j] = log_sum_exp(
                log_kt[j * rows..(j + 1) * rows]
                    .iter()
                    .zip(&f)
                    .map(|(k, f)| k + f),
            );
            g[j] = log_nu[j] - col_log[j];
        }
        for (i, r) in row_log.iter_mut().enumerate() {
            *r = row_lse(&g, i);
        }
        let row_res = (0..rows)
            .map(|i| ((f[i] + row_log[i]).exp() - marginals.mu[i]).abs())
            .fold(0.0, f64::max);
        let col_res = (0..cols)
            .map(|j| ((g[j] + col_log[j]).exp() - marginals.nu[j]).abs())
            .fold(0.0, f64::max);
        if row_res.max(col_res) <= config.tolerance {
            break;
        }
    }

    let mut plan = log_k;
    for (i, row) in plan.chunks_exact_mut(cols).enumerate() {
        for (p, gj) in row.iter_mut().zip(&g) {
            *p = (f[i] + *p + gj).exp();
        }
    }
    (plan, iterations)
}

/// Exact optimal coupling of two weighted point sets on the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPlan {
    pub rows: usize,
    pub cols: usize,
    pub plan: Vec<f64>,
    pub total_cost: f64,
}

/// Monotone (north-west corner) coupling between two sorted 1-D measures,
/// which is optimal for the cost `|x - y|`. Inputs are `(position, mass)`.
pub fn exact_ot_1d(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<ExactPlan> {
    fn validate(name: &str, atoms: &[(f64, f64)]) -> Result<()> {
        if atoms.is_empty() {
            return Err(TransportError::MassMismatch(format!("{name} has no atoms")));
        }
        if let Some(i) = atoms.windows(2).position(|w| !(w[0].0 <= w[1].0)) {
            return Err(TransportError::UnsortedInput(i + 1));
        }
        if atoms.iter().any(|&(x, w)| !x.is_finite() || !(w >= 0.0)) {
            return Err(TransportError::MassMismatch(format!(
                "{name} has a non-finite position or negative mass"
            )));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(TransportError::MassMismatch(format!(
                "{name} masses sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
    validate("a", a)?;
    validate("b", b)?;

    let (rows, cols) = (a.len(), b.len());
    let mut plan = vec![0.0; rows * cols];
    let (mut i, mut j) = (0, 0);
    let (mut left_a, mut left_b) = (a[0].1, b[0].1);
    let mut total_cost = 0.0;
    while i < rows && j < cols {
        let moved = left_a.min(left_b);
        plan[i * cols + j] += moved;
        total_cost += moved * (a[i].0 - b[j].0).abs();
        if left_a <= left_b {
            left_b -= left_a;
            i += 1;
            left_a = a.get(i).map_or(0.0, |x| x.1);
        } else {
            left_a -= left_b;
            j += 1;
            left_b = b.get(j).map_or(0.0, |x| x.1);
        }
    }
    Ok(ExactPlan {
        rows,
        cols,
        plan,
        total_cost,
    })
}
