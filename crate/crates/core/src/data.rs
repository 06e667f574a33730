//! Datasets, the synthetic Gaussian-cluster benchmark, and seeded batching.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Dataset> {
        if labels.is_empty() || labels.len() != features.rows() {
            return Err(Error::Dimension {
                op: "dataset",
                left: features.shape(),
                right: (labels.len(), 1),
            });
        }
        if num_classes < 2 {
            return Err(Error::Parameter(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if !features.all_finite() {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn one_hot(&self) -> Tensor {
        one_hot(&self.labels, self.num_classes)
    }

    /// Rows at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.features.gather_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
        )
    }
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * num_classes + l] = 1.0;
    }
    Tensor::from_raw(labels.len(), num_classes, data)
}

/// Isotropic Gaussian clusters around centers drawn uniformly on a sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub cluster_std: f64,
    pub inter_class_margin: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 10,
            dim: 32,
            samples_per_class: 500,
            cluster_std: 1.0,
            inter_class_margin: 4.0,
            seed: 7,
        }
    }
}

// Independent random streams derived from the spec seed.
const CENTER_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.dim == 0 || self.samples_per_class == 0 {
            return Err(Error::Parameter(format!(
                "synthetic spec needs ≥2 classes, dim ≥1 and ≥1 sample per class: {self:?}"
            )));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::Parameter(format!(
                "cluster_std must be positive, got {}",
                self.cluster_std
            )));
        }
        if !(self.inter_class_margin >= 0.0 && self.inter_class_margin.is_finite()) {
            return Err(Error::Parameter(format!(
                "inter_class_margin must be nonnegative, got {}",
                self.inter_class_margin
            )));
        }
        Ok(())
    }

    /// Class centers: normalized standard-Gaussian directions times the margin.
    pub fn centers(&self) -> Tensor {
        let mut rng = Rng::new(derive_seed(self.seed, CENTER_STREAM));
        let mut data = Vec::with_capacity(self.num_classes * self.dim);
        for _ in 0..self.num_classes {
            let dir: Vec<f64> = (0..self.dim).map(|_| rng.gaussian()).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            data.extend(dir.iter().map(|v| v / norm * self.inter_class_margin));
        }
        Tensor::from_raw(self.num_classes, self.dim, data)
    }

    fn sample(&self, per_class: usize, stream: u64) -> Result<Dataset> {
        self.validate()?;
        if per_class == 0 {
            return Err(Error::Parameter("need at least one sample per class".into()));
        }
        let centers = self.centers();
        let mut rng = Rng::new(derive_seed(self.seed, stream));
        let n = per_class * self.num_classes;
        let mut data = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for class in 0..self.num_classes {
            for _ in 0..per_class {
                data.extend(centers.row(class).iter().map(|c| c + self.cluster_std * rng.gaussian()));
                labels.push(class);
            }
        }
        Dataset::new(Tensor::new(n, self.dim, data)?, labels, self.num_classes)
    }
}

/// Training split: `samples_per_class` points per class, grouped by class.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.sample(spec.samples_per_class, TRAIN_STREAM)
}

/// Held-out split sharing the training centers, drawn from a separate stream.
pub fn gen_synthetic_test(spec: &SyntheticSpec, per_class: usize) -> Result<Dataset> {
    spec.sample(per_class, TEST_STREAM)
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: Tensor,
    pub labels: Tensor,
}

/// One epoch of mini-batches over a seeded permutation; the last may be short.
pub fn batches(dataset: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<impl Iterator<Item = Batch> + '_> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    Rng::new(epoch_seed).shuffle(&mut order);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(chunks.into_iter().map(move |indices| {
        let labels: Vec<usize> = indices.iter().map(|&i| dataset.labels[i]).collect();
        Batch {
            features: dataset.features.gather_rows(&indices),
            labels: one_hot(&labels, dataset.num_classes),
            indices,
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            num_classes: 3,
            dim: 4,
            samples_per_class: 5,
            cluster_std: 0.5,
            inter_class_margin: 2.0,
            seed: 11,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_synthetic(&small()).unwrap();
        let b = gen_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 15);
        assert!(a.labels.iter().all(|&l| l < 3));
        let mut other = small();
        other.seed = 12;
        assert_ne!(gen_synthetic(&other).unwrap(), a);
    }

    #[test]
    fn test_split_shares_centers_but_not_samples() {
        let spec = small();
        let train = gen_synthetic(&spec).unwrap();
        let test = gen_synthetic_test(&spec, 5).unwrap();
        assert_ne!(train.features, test.features);
        let norms = spec.centers().row_norms();
        assert!(norms.data().iter().all(|n| (n - 2.0).abs() < 1e-12));
    }

    #[test]
    fn degenerate_clusters_are_separable_by_nearest_center() {
        let spec = SyntheticSpec {
            cluster_std: 1e-9,
            ..small()
        };
        let data = gen_synthetic(&spec).unwrap();
        let centers = spec.centers();
        // linear classifier: score_c = ⟨x, μ_c⟩ − ‖μ_c‖²/2
        let scores = data.features.matmul(&centers.transpose()).unwrap();
        let half: Vec<f64> = centers.row_norms().data().iter().map(|n| n * n / 2.0).collect();
        for (i, row) in scores.iter_rows().enumerate() {
            let best = (0..3)
                .max_by(|&a, &b| (row[a] - half[a]).total_cmp(&(row[b] - half[b])))
                .unwrap();
            assert_eq!(best, data.labels[i]);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(gen_synthetic(&SyntheticSpec {
            cluster_std: 0.0,
            ..small()
        })
        .is_err());
        assert!(gen_synthetic(&SyntheticSpec {
            inter_class_margin: -1.0,
            ..small()
        })
        .is_err());
        assert!(gen_synthetic(&SyntheticSpec {
            num_classes: 1,
            ..small()
        })
        .is_err());
    }

    #[test]
    fn batches_partition_the_dataset() {
        let data = gen_synthetic(&small()).unwrap();
        let seen: Vec<usize> = batches(&data, 4, 9).unwrap().flat_map(|b| b.indices).collect();
        let mut sorted = seen.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..15).collect::<Vec<_>>());
        let sizes: Vec<usize> = batches(&data, 4, 9).unwrap().map(|b| b.indices.len()).collect();
        assert_eq!(sizes, vec![4, 4, 4, 3]);
    }

    #[test]
    fn batches_are_seeded() {
        let data = gen_synthetic(&small()).unwrap();
        let order = |seed| {
            batches(&data, 15, seed)
                .unwrap()
                .flat_map(|b| b.indices)
                .collect::<Vec<_>>()
        };
        assert_eq!(order(3), order(3));
        assert_ne!(order(3), order(4));
        let single: Vec<Batch> = batches(&data, 15, 3).unwrap().collect();
        assert_eq!(single.len(), 1);
        assert_ne!(single[0].indices, (0..15).collect::<Vec<_>>());
        assert!(batches(&data, 0, 3).is_err());
    }

    #[test]
    fn batch_contents_match_indices() {
        let data = gen_synthetic(&small()).unwrap();
        for b in batches(&data, 4, 1).unwrap() {
            for (k, &i) in b.indices.iter().enumerate() {
                assert_eq!(b.features.row(k), data.features.row(i));
                assert_eq!(b.labels.row(k).iter().sum::<f64>(), 1.0);
                assert_eq!(b.labels.get(k, data.labels[i]), 1.0);
            }
        }
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        let f = Tensor::zeros(2, 3);
        assert!(Dataset::new(f.clone(), vec![0, 5], 3).is_err());
        assert!(Dataset::new(f.clone(), vec![0], 3).is_err());
        assert!(Dataset::new(f, vec![], 3).is_err());
    }
}
