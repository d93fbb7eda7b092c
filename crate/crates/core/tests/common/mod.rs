//! Reference implementations used only by tests. Each one takes the slow,
//! obvious route and shares no code with the library path it checks.

#![allow(dead_code)]

/// AUROC by enumerating every (id, ood) pair; OOD ranked higher wins, ties count half.
pub fn brute_auroc_higher_is_ood(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &o in ood {
        for &i in id {
            if o > i {
                wins += 1.0;
            } else if o == i {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() * ood.len()) as f64
}

/// FPR and threshold by scanning every distinct score as a candidate
/// threshold (higher score = ID, ID accepted when `score >= t`).
pub fn brute_fpr_higher_is_id(id: &[f64], ood: &[f64], target: f64) -> (f64, f64) {
    let mut candidates: Vec<f64> = id.iter().chain(ood).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best: Option<f64> = None;
    for &t in &candidates {
        let tpr = id.iter().filter(|&&s| s >= t).count() as f64 / id.len() as f64;
        if tpr >= target {
            best = Some(best.map_or(t, |b: f64| b.max(t)));
        }
    }
    let t = best.expect("the minimum score always reaches full TPR");
    let fpr = ood.iter().filter(|&&s| s >= t).count() as f64 / ood.len() as f64;
    (fpr, t)
}

/// Exact OT cost for a 2x2 problem: the feasible plans form a segment
/// parameterized by `gamma_00`, and a linear cost is minimized at an endpoint.
pub fn exact_ot_2x2(cost: [[f64; 2]; 2], mu: [f64; 2], nu: [f64; 2]) -> f64 {
    let lo = (mu[0] - nu[1]).max(0.0);
    let hi = mu[0].min(nu[0]);
    let eval = |t: f64| {
        let plan = [[t, mu[0] - t], [nu[0] - t, mu[1] - nu[0] + t]];
        (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| cost[i][j] * plan[i][j])
            .sum::<f64>()
    };
    eval(lo).min(eval(hi))
}

/// Small deterministic generator (SplitMix64) for fixture construction.
pub struct Fixture(u64);

impl Fixture {
    pub fn new(seed: u64) -> Self {
        Fixture(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Random probability vector with strictly positive entries.
    pub fn simplex(&mut self, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| 0.05 + self.uniform()).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|r| r / total).collect()
    }
}
