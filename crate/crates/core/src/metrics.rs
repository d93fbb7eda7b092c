//! AUROC and FPR at a fixed ID true-positive rate.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{0} scores are empty")]
    EmptyInput(&'static str),
    #[error("non-finite {0} score at index {1}")]
    NonFiniteScore(&'static str, usize),
    #[error("tpr target must lie in (0, 1], got {0}")]
    InvalidTarget(f64),
}

impl MetricsError {
    pub fn name(&self) -> &'static str {
        match self {
            MetricsError::EmptyInput(_) => "EmptyInput",
            MetricsError::NonFiniteScore(..) => "NonFiniteScore",
            MetricsError::InvalidTarget(_) => "InvalidTarget",
        }
    }
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Which direction of the score points at the OOD class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherIsOod,
    HigherIsId,
}

fn check(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() {
        return Err(MetricsError::EmptyInput("ID"));
    }
    if ood.is_empty() {
        return Err(MetricsError::EmptyInput("OOD"));
    }
    if let Some(i) = id.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore("ID", i));
    }
    if let Some(i) = ood.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore("OOD", i));
    }
    Ok(())
}

/// Mann-Whitney statistic in half-pair units: `2 * #(ood > id) + #(ood == id)`
/// over all `(id, ood)` pairs, with `pairs = n_id * n_ood`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankStatistic {
    pub half_wins: u128,
    pub pairs: u128,
}

impl RankStatistic {
    pub fn auroc(&self) -> f64 {
        self.half_wins as f64 / (2 * self.pairs) as f64
    }

    /// The statistic with roles reversed (higher score means ID).
    pub fn flipped(&self) -> RankStatistic {
        RankStatistic {
            half_wins: 2 * self.pairs - self.half_wins,
            pairs: self.pairs,
        }
    }
}

/// Rank-sum statistic for "an OOD score ranks above an ID score", with tied
/// values sharing their average rank. `O((n_id + n_ood) log(n_id + n_ood))`.
pub fn rank_statistic(id: &[f64], ood: &[f64], orientation: Orientation) -> Result<RankStatistic> {
    check(id, ood)?;
    let mut pooled: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, false))
        .chain(ood.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Doubled rank sum of the OOD group, where tied blocks take average ranks.
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start;
        while end < pooled.len() && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        let ood_in_block = pooled[start..end].iter().filter(|p| p.1).count() as u128;
        // ranks start+1 ..= end; twice their mean is start + 1 + end
        doubled_rank_sum += ood_in_block * (start as u128 + 1 + end as u128);
        start = end;
    }
    let n_ood = ood.len() as u128;
    let statistic = RankStatistic {
        half_wins: doubled_rank_sum - n_ood * (n_ood + 1),
        pairs: id.len() as u128 * n_ood,
    };
    Ok(match orientation {
        Orientation::HigherIsOod => statistic,
        Orientation::HigherIsId => statistic.flipped(),
    })
}

/// Probability that a random OOD sample is ranked as more OOD than a random
/// ID sample, ties counting one half.
pub fn auroc(id: &[f64], ood: &[f64], orientation: Orientation) -> Result<f64> {
    rank_statistic(id, ood, orientation).map(|s| s.auroc())
}

/// False-positive rate on OOD at the threshold where at least `tpr_target`
/// of ID samples are accepted, ID being the positive class.
///
/// Scores are compared in "higher is ID" orientation: the threshold `t` is
/// the largest value with `#(id >= t) / n_id >= tpr_target`, and
/// `fpr = #(ood >= t) / n_ood`. The returned threshold is expressed in the
/// caller's orientation (for `HigherIsOod`, acceptance means `score <= t`).
pub fn fpr_at_tpr(
    id: &[f64],
    ood: &[f64],
    tpr_target: f64,
    orientation: Orientation,
) -> Result<(f64, f64)> {
    check(id, ood)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(MetricsError::InvalidTarget(tpr_target));
    }
    let sign = match orientation {
        Orientation::HigherIsId => 1.0,
        Orientation::HigherIsOod => -1.0,
    };
    let mut id_desc: Vec<f64> = id.iter().map(|s| sign * s).collect();
    id_desc.sort_by(|a, b| b.total_cmp(a));
    let n_id = id_desc.len();

    // Smallest accepted count reaching the target.
    let mut k = ((tpr_target * n_id as f64).ceil() as usize).clamp(1, n_id);
    while k > 1 && (k - 1) as f64 / n_id as f64 >= tpr_target {
        k -= 1;
    }
    while k < n_id && (k as f64 / n_id as f64) < tpr_target {
        k += 1;
    }
    let threshold = id_desc[k - 1];
    let false_pos = ood.iter().filter(|&&s| sign * s >= threshold).count();
    Ok((false_pos as f64 / ood.len() as f64, sign * threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub fpr95: f64,
    pub threshold: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

pub fn evaluate(id: &[f64], ood: &[f64], orientation: Orientation) -> Result<EvalReport> {
    let auroc = auroc(id, ood, orientation)?;
    let (fpr95, threshold) = fpr_at_tpr(id, ood, 0.95, orientation)?;
    Ok(EvalReport {
        auroc,
        fpr95,
        threshold,
        n_id: id.len(),
        n_ood: ood.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Orientation::*;

    #[test]
    fn perfect_and_tied() {
        assert_eq!(auroc(&[0.0, 1.0], &[2.0, 3.0], HigherIsOod).unwrap(), 1.0);
        assert_eq!(auroc(&[0.0, 1.0], &[0.0, 1.0], HigherIsOod).unwrap(), 0.5);
        assert_eq!(auroc(&[0.0, 1.0], &[2.0, 3.0], HigherIsId).unwrap(), 0.0);
    }

    #[test]
    fn overlapping_example() {
        // ood 2: beats 1, ties 2; ood 3: beats 1 and 2, ties 3; ood 4: beats all.
        // 6 wins + 2 ties of 9 pairs.
        let id = [1.0, 2.0, 3.0];
        let ood = [2.0, 3.0, 4.0];
        let mut half_wins = 0;
        for o in ood {
            for i in id {
                half_wins += if o > i { 2 } else if o == i { 1 } else { 0 };
            }
        }
        assert_eq!(half_wins, 14);
        let a = auroc(&id, &ood, HigherIsOod).unwrap();
        assert_eq!(a, 7.0 / 9.0);
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(
            auroc(&[], &[1.0], HigherIsOod),
            Err(MetricsError::EmptyInput("ID"))
        ));
        assert!(matches!(
            fpr_at_tpr(&[1.0], &[], 0.95, HigherIsId),
            Err(MetricsError::EmptyInput("OOD"))
        ));
        assert!(fpr_at_tpr(&[1.0], &[1.0], 0.0, HigherIsId).is_err());
        assert!(auroc(&[f64::NAN], &[1.0], HigherIsId).is_err());
    }

    #[test]
    fn constant_id_scores() {
        let id = vec![1.0; 200];
        let ood = [0.5, 0.0, -3.0, 0.999];
        let (fpr, t) = fpr_at_tpr(&id, &ood, 0.95, HigherIsId).unwrap();
        assert_eq!(fpr, 0.0);
        assert_eq!(t, 1.0);
    }

    #[test]
    fn full_tpr_takes_minimum() {
        let id = [3.0, 1.0, 2.0, 5.0];
        let (_, t) = fpr_at_tpr(&id, &[0.0], 1.0, HigherIsId).unwrap();
        assert_eq!(t, 1.0);
        let (_, t) = fpr_at_tpr(&id, &[0.0], 1.0, HigherIsOod).unwrap();
        assert_eq!(t, 5.0);
    }

    #[test]
    fn hundred_values() {
        let id: Vec<f64> = (1..=100).map(f64::from).collect();
        let (fpr, t) = fpr_at_tpr(&id, &id, 0.95, HigherIsId).unwrap();
        assert_eq!(t, 6.0);
        assert_eq!(fpr, 0.95);
    }

    #[test]
    fn report() {
        let r = evaluate(&[0.0, 1.0], &[2.0, 3.0], HigherIsOod).unwrap();
        assert_eq!((r.auroc, r.fpr95, r.n_id, r.n_ood), (1.0, 0.0, 2, 2));
    }
}
