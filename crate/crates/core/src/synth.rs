//! Seeded Gaussian-mixture benchmark: well separated ID classes plus shifted
//! OOD clusters.
//!
//! ID centers form a regular simplex with edge length `radius`, centered at
//! the origin of the first `C` coordinates. OOD cluster `k` sits at distance
//! `offset` from ID center `k mod C`, along the ray from the ID centroid
//! through that center, so that center is its nearest ID center.
//!
//! Randomness comes from ChaCha8 (a counter-based stream cipher RNG) seeded
//! with `seed`; draws are taken in a fixed order (train samples class by
//! class, then ID test samples, then each OOD cluster), one standard normal
//! per coordinate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FeatureMatrix, LabeledDataset};

#[derive(Debug, Error)]
#[error("invalid synthetic spec: {0}")]
pub struct InvalidSpec(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodCluster {
    /// Distance from the nearest ID center.
    pub offset: f64,
    pub sigma: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    /// Total ID test samples, assigned to classes round-robin.
    pub test_id: usize,
    /// Pairwise distance between ID centers.
    pub radius: f64,
    pub sigma: f64,
    pub ood_clusters: Vec<OodCluster>,
    pub seed: u64,
}

impl SynthSpec {
    /// Three classes in 32 dimensions, one OOD cluster `radius` away.
    pub fn far_ood(seed: u64) -> Self {
        SynthSpec {
            num_classes: 3,
            dim: 32,
            train_per_class: 100,
            test_id: 200,
            radius: 8.0,
            sigma: 0.5,
            ood_clusters: vec![OodCluster {
                offset: 8.0,
                sigma: 0.5,
                count: 200,
            }],
            seed,
        }
    }

    /// Same ID geometry with the OOD cluster only `2 sigma` from a class center.
    pub fn near_ood(seed: u64) -> Self {
        let mut spec = SynthSpec::far_ood(seed);
        spec.ood_clusters[0].offset = 2.0 * spec.sigma;
        spec
    }

    pub fn validate(&self) -> Result<(), InvalidSpec> {
        let fail = |m: String| Err(InvalidSpec(m));
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.dim < self.num_classes {
            return fail(format!(
                "dim {} must be at least num_classes {}",
                self.dim, self.num_classes
            ));
        }
        if self.train_per_class == 0 {
            return fail("train_per_class must be positive".into());
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return fail(format!("radius must be positive, got {}", self.radius));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma must be nonnegative, got {}", self.sigma));
        }
        if self.test_id == 0 || self.ood_clusters.iter().all(|c| c.count == 0) {
            return fail("need at least one ID and one OOD test sample".into());
        }
        for (k, c) in self.ood_clusters.iter().enumerate() {
            if !(c.offset >= 0.0 && c.offset.is_finite() && c.sigma >= 0.0 && c.sigma.is_finite())
            {
                return fail(format!("ood cluster {k} has invalid offset or sigma"));
            }
        }
        Ok(())
    }

    /// ID centers, one row per class.
    pub fn id_centers(&self) -> Vec<Vec<f64>> {
        let c = self.num_classes;
        let scale = self.radius / 2f64.sqrt();
        let shift = scale / c as f64;
        (0..c)
            .map(|k| {
                let mut v = vec![0.0; self.dim];
                for (i, x) in v.iter_mut().take(c).enumerate() {
                    *x = if i == k { scale - shift } else { -shift };
                }
                v
            })
            .collect()
    }

    /// OOD cluster centers, in cluster order.
    pub fn ood_centers(&self) -> Vec<Vec<f64>> {
        let centers = self.id_centers();
        self.ood_clusters
            .iter()
            .enumerate()
            .map(|(k, cluster)| {
                // the ID centroid is the origin
                let anchor = &centers[k % self.num_classes];
                let norm = anchor.iter().map(|v| v * v).sum::<f64>().sqrt();
                anchor
                    .iter()
                    .map(|a| a + cluster.offset * a / norm)
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub train: LabeledDataset,
    pub test_id: FeatureMatrix,
    /// Class of each ID test row.
    pub test_id_labels: Vec<usize>,
    pub test_ood: FeatureMatrix,
}

fn draw(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64, out: &mut Vec<f64>) {
    for &c in center {
        let z: f64 = StandardNormal.sample(rng);
        out.push(c + sigma * z);
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset, InvalidSpec> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = spec.id_centers();
    let dim = spec.dim;

    let mut train = Vec::with_capacity(spec.num_classes * spec.train_per_class * dim);
    let mut labels = Vec::with_capacity(spec.num_classes * spec.train_per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.train_per_class {
            draw(&mut rng, center, spec.sigma, &mut train);
            labels.push(c);
        }
    }

    let mut test_id = Vec::with_capacity(spec.test_id * dim);
    let test_id_labels: Vec<usize> = (0..spec.test_id).map(|i| i % spec.num_classes).collect();
    for &c in &test_id_labels {
        draw(&mut rng, &centers[c], spec.sigma, &mut test_id);
    }

    let mut test_ood = Vec::new();
    for (cluster, center) in spec.ood_clusters.iter().zip(spec.ood_centers()) {
        for _ in 0..cluster.count {
            draw(&mut rng, &center, cluster.sigma, &mut test_ood);
        }
    }

    let matrix = |data: Vec<f64>| {
        let rows = data.len() / dim;
        FeatureMatrix::new(rows, dim, data).map_err(|e| InvalidSpec(e.to_string()))
    };
    let train = LabeledDataset::new(matrix(train)?, labels, Some(spec.num_classes))
        .map_err(|e| InvalidSpec(e.to_string()))?;
    Ok(SynthDataset {
        train,
        test_id: matrix(test_id)?,
        test_id_labels,
        test_ood: matrix(test_ood)?,
    })
}
