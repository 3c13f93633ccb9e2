//! DBSCAN over feature rows and pseudo-label assignment for the target
//! domain.
//!
//! A point is core when it has at least `min_pts` neighbors within `eps`
//! (boundary inclusive, counting the point itself). Clusters are maximal
//! density-connected core sets plus their border points. Seeds are scanned
//! in ascending input index and each cluster is expanded fully before the
//! next starts, so a border point always joins the earliest-created cluster
//! that reaches it; group ids are then renumbered in order of first
//! appearance in the label array. The result is fully deterministic.

use serde::{Deserialize, Serialize};

use crate::dataset::SampleRecord;
use crate::error::{Error, Result};
use crate::numerics::{pairwise_with_metric, DistanceMetric, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub eps: f64,
    pub min_pts: usize,
    pub metric: DistanceMetric,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self { eps: 0.4, min_pts: 4, metric: DistanceMetric::CosineDistance }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "clustering.eps must be positive and finite, got {}",
                self.eps
            )));
        }
        if self.min_pts == 0 {
            return Err(Error::InvalidConfig("clustering.min_pts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Noise marker in [`ClusterAssignment::labels`].
pub const NOISE: i32 = -1;
const UNVISITED: i32 = -2;

/// Per-sample group id (>= 0) or [`NOISE`]; group ids are exactly
/// `0..num_groups`, each nonempty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<i32>,
    pub num_groups: usize,
}

impl ClusterAssignment {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.num_groups];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

/// Classic DBSCAN with exact neighbor search over the full distance matrix.
pub fn dbscan(features: &Matrix, cfg: &ClusteringConfig) -> Result<ClusterAssignment> {
    cfg.validate()?;
    let n = features.rows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let dist = pairwise_with_metric(features, features, cfg.metric)?;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist.get(i, j) <= cfg.eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= cfg.min_pts).collect();

    let mut labels = vec![UNVISITED; n];
    let mut next_cluster = 0i32;
    for seed in 0..n {
        if labels[seed] >= 0 {
            continue;
        }
        if !core[seed] {
            labels[seed] = NOISE;
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[seed] = cluster;
        let mut queue: std::collections::VecDeque<usize> = neighbors[seed].iter().copied().collect();
        while let Some(p) = queue.pop_front() {
            if labels[p] == NOISE {
                labels[p] = cluster; // border point, never expanded
                continue;
            }
            if labels[p] != UNVISITED {
                continue;
            }
            labels[p] = cluster;
            if core[p] {
                queue.extend(neighbors[p].iter().copied());
            }
        }
    }

    Ok(renumber_by_first_appearance(labels))
}

/// Renumber group ids to `0..num_groups` in order of first appearance in
/// the label sequence.
fn renumber_by_first_appearance(labels: Vec<i32>) -> ClusterAssignment {
    let mut mapping: std::collections::BTreeMap<i32, i32> = std::collections::BTreeMap::new();
    let mut next = 0i32;
    let labels: Vec<i32> = labels
        .into_iter()
        .map(|l| {
            if l < 0 {
                return NOISE;
            }
            *mapping.entry(l).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            })
        })
        .collect();
    ClusterAssignment { labels, num_groups: next as usize }
}

/// Target records relabeled by cluster group. Noise samples are dropped for
/// the round; `original_indices[i]` is the position of `records[i]` in the
/// input record list.
#[derive(Debug, Clone)]
pub struct PseudoLabeledDataset {
    pub records: Vec<SampleRecord>,
    pub original_indices: Vec<usize>,
    pub num_groups: usize,
    pub round: usize,
}

/// Attach pseudo labels from a clustering to the target records.
pub fn assign_pseudo_labels(
    records: &[SampleRecord],
    assignment: &ClusterAssignment,
    round: usize,
) -> Result<PseudoLabeledDataset> {
    if records.len() != assignment.labels.len() {
        return Err(Error::LengthMismatch {
            left: records.len(),
            right: assignment.labels.len(),
        });
    }
    let mut out = Vec::new();
    let mut original = Vec::new();
    for (i, (record, &label)) in records.iter().zip(&assignment.labels).enumerate() {
        if label < 0 {
            continue;
        }
        let mut r = record.clone();
        r.identity = Some(label as u32);
        out.push(r);
        original.push(i);
    }
    Ok(PseudoLabeledDataset {
        records: out,
        original_indices: original,
        num_groups: assignment.num_groups,
        round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Domain;
    use crate::numerics::SeededRng;

    /// Independent reference: cores by brute-force neighbor counting,
    /// clusters as connected components of the core graph, borders attached
    /// to the earliest-created candidate cluster, then canonical renumbering.
    pub(super) fn dbscan_reference(features: &Matrix, cfg: &ClusteringConfig) -> ClusterAssignment {
        let n = features.rows();
        let dist = |i: usize, j: usize| -> f64 {
            match cfg.metric {
                DistanceMetric::Euclidean => {
                    let mut acc = 0.0;
                    for k in 0..features.cols() {
                        let d = features.get(i, k) - features.get(j, k);
                        acc += d * d;
                    }
                    acc.sqrt()
                }
                DistanceMetric::CosineDistance => {
                    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
                    for k in 0..features.cols() {
                        ab += features.get(i, k) * features.get(j, k);
                        aa += features.get(i, k) * features.get(i, k);
                        bb += features.get(j, k) * features.get(j, k);
                    }
                    if aa.sqrt() <= 1e-12 || bb.sqrt() <= 1e-12 {
                        1.0
                    } else {
                        1.0 - ab / (aa.sqrt() * bb.sqrt())
                    }
                }
            }
        };
        let core: Vec<bool> = (0..n)
            .map(|i| (0..n).filter(|&j| dist(i, j) <= cfg.eps).count() >= cfg.min_pts)
            .collect();

        // Union-find over cores within eps.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, x: usize) -> usize {
            if parent[x] != x {
                let root = find(parent, parent[x]);
                parent[x] = root;
            }
            parent[x]
        }
        for i in 0..n {
            if !core[i] {
                continue;
            }
            for j in (i + 1)..n {
                if core[j] && dist(i, j) <= cfg.eps {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a] = b;
                    }
                }
            }
        }
        // Creation order of a component = index of its first core.
        let mut creation: std::collections::BTreeMap<usize, usize> = Default::default();
        let mut order = 0;
        for i in 0..n {
            if core[i] {
                let root = find(&mut parent, i);
                creation.entry(root).or_insert_with(|| {
                    let o = order;
                    order += 1;
                    o
                });
            }
        }
        let mut labels = vec![NOISE; n];
        for i in 0..n {
            if core[i] {
                let root = find(&mut parent, i);
                labels[i] = creation[&root] as i32;
            }
        }
        for i in 0..n {
            if core[i] {
                continue;
            }
            let mut best: Option<i32> = None;
            for j in 0..n {
                if core[j] && dist(i, j) <= cfg.eps {
                    let root = find(&mut parent, j);
                    let c = creation[&root] as i32;
                    if best.is_none_or(|b| c < b) {
                        best = Some(c);
                    }
                }
            }
            if let Some(c) = best {
                labels[i] = c;
            }
        }
        renumber_by_first_appearance(labels)
    }

    fn euclid_cfg(eps: f64, min_pts: usize) -> ClusteringConfig {
        ClusteringConfig { eps, min_pts, metric: DistanceMetric::Euclidean }
    }

    #[test]
    fn collinear_chain_forms_one_cluster() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![0.1 * i as f64]).collect();
        let features = Matrix::from_rows(&rows).unwrap();
        let got = dbscan(&features, &euclid_cfg(0.15, 2)).unwrap();
        assert_eq!(got.num_groups, 1);
        assert_eq!(got.labels, vec![0; 5]);
        assert_eq!(got, dbscan_reference(&features, &euclid_cfg(0.15, 2)));
    }

    #[test]
    fn isolated_point_is_noise() {
        let features = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let got = dbscan(&features, &euclid_cfg(0.5, 2)).unwrap();
        assert_eq!(got.labels, vec![NOISE]);
        assert_eq!(got.num_groups, 0);
    }

    #[test]
    fn two_blobs_two_groups() {
        let mut rng = SeededRng::new(91);
        let mut rows = Vec::new();
        for blob in 0..2 {
            let center = blob as f64 * 100.0;
            for _ in 0..10 {
                rows.push(vec![center + 0.01 * rng.normal(), 0.01 * rng.normal()]);
            }
        }
        let features = Matrix::from_rows(&rows).unwrap();
        let got = dbscan(&features, &euclid_cfg(0.5, 3)).unwrap();
        assert_eq!(got.num_groups, 2);
        assert!(got.labels[..10].iter().all(|&l| l == 0));
        assert!(got.labels[10..].iter().all(|&l| l == 1));
        assert_eq!(got, dbscan_reference(&features, &euclid_cfg(0.5, 3)));
    }

    #[test]
    fn matches_reference_on_random_instances() {
        let mut rng = SeededRng::new(92);
        for trial in 0..50 {
            let n = 10 + rng.index(60);
            let d = 2 + rng.index(3);
            let data: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
            let features = Matrix::from_vec(n, d, data).unwrap();
            let metric = if trial % 2 == 0 {
                DistanceMetric::Euclidean
            } else {
                DistanceMetric::CosineDistance
            };
            let eps = match metric {
                DistanceMetric::Euclidean => rng.uniform_in(0.3, 1.5),
                DistanceMetric::CosineDistance => rng.uniform_in(0.05, 0.6),
            };
            let cfg = ClusteringConfig { eps, min_pts: 1 + rng.index(6), metric };
            let got = dbscan(&features, &cfg).unwrap();
            let expect = dbscan_reference(&features, &cfg);
            assert_eq!(got, expect, "trial {trial} diverged (cfg {cfg:?})");
        }
    }

    #[test]
    fn min_pts_one_leaves_no_noise() {
        let mut rng = SeededRng::new(93);
        let features = Matrix::from_vec(30, 2, (0..60).map(|_| rng.normal()).collect()).unwrap();
        let got = dbscan(&features, &euclid_cfg(0.2, 1)).unwrap();
        assert_eq!(got.noise_count(), 0);
    }

    #[test]
    fn euclidean_scale_invariance() {
        let mut rng = SeededRng::new(94);
        let data: Vec<f64> = (0..40).map(|_| rng.normal()).collect();
        let features = Matrix::from_vec(20, 2, data.clone()).unwrap();
        let scaled =
            Matrix::from_vec(20, 2, data.iter().map(|v| v * 3.5).collect()).unwrap();
        let a = dbscan(&features, &euclid_cfg(0.4, 3)).unwrap();
        let b = dbscan(&scaled, &euclid_cfg(0.4 * 3.5, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cosine_metric_ignores_per_point_scale() {
        let mut rng = SeededRng::new(95);
        let rows: Vec<Vec<f64>> =
            (0..15).map(|_| vec![rng.normal(), rng.normal(), rng.normal()]).collect();
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let s = rng.uniform_in(0.1, 9.0);
                r.iter().map(|v| v * s).collect()
            })
            .collect();
        let cfg = ClusteringConfig { eps: 0.3, min_pts: 2, metric: DistanceMetric::CosineDistance };
        let a = dbscan(&Matrix::from_rows(&rows).unwrap(), &cfg).unwrap();
        let b = dbscan(&Matrix::from_rows(&scaled).unwrap(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_input_rejected() {
        let features = Matrix::zeros(0, 3);
        assert!(matches!(
            dbscan(&features, &ClusteringConfig::default()),
            Err(Error::EmptyInput)
        ));
    }

    fn target_record(i: u32) -> SampleRecord {
        SampleRecord {
            sample_id: i,
            identity: None,
            camera: 0,
            domain: Domain::Target,
            feature_index: i,
        }
    }

    #[test]
    fn pseudo_labels_drop_noise_and_keep_groups() {
        let records: Vec<SampleRecord> = (0..5).map(target_record).collect();
        let assignment = ClusterAssignment { labels: vec![0, NOISE, 1, 0, NOISE], num_groups: 2 };
        let ds = assign_pseudo_labels(&records, &assignment, 3).unwrap();
        assert_eq!(ds.records.len(), 3);
        assert_eq!(ds.original_indices, vec![0, 2, 3]);
        assert_eq!(ds.records[1].identity, Some(1));
        assert_eq!(ds.round, 3);
        assert_eq!(ds.num_groups, 2);

        let all_noise = ClusterAssignment { labels: vec![NOISE; 5], num_groups: 0 };
        let empty = assign_pseudo_labels(&records, &all_noise, 0).unwrap();
        assert!(empty.records.is_empty());

        let clean = ClusterAssignment { labels: vec![0, 0, 1, 1, 1], num_groups: 2 };
        assert_eq!(assign_pseudo_labels(&records, &clean, 0).unwrap().records.len(), 5);

        let short = ClusterAssignment { labels: vec![0, 0], num_groups: 1 };
        assert!(matches!(
            assign_pseudo_labels(&records, &short, 0),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
