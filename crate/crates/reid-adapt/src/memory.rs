//! Group memory: one unit-norm representative vector per cluster,
//! initialized to the normalized cluster mean and refreshed by an
//! exponential moving average toward batch query means.

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::numerics::{l2_normalize, Matrix};

/// `N_c` unit-norm rows plus the update momentum and the softmax
/// temperature used by the group contrastive loss.
#[derive(Debug, Clone)]
pub struct GroupMemory {
    entries: Matrix,
    momentum: f64,
    temperature: f64,
}

impl GroupMemory {
    pub fn new(entries: Matrix, momentum: f64, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(temperature));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!(
                "memory.momentum must lie in [0, 1], got {momentum}"
            )));
        }
        if entries.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self { entries, momentum, temperature })
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn num_groups(&self) -> usize {
        self.entries.rows()
    }

    pub fn dim(&self) -> usize {
        self.entries.cols()
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Initialize memory rows as the normalized mean feature of each group.
/// Noise-labeled samples are excluded.
pub fn init_memory(
    features: &Matrix,
    assignment: &ClusterAssignment,
    momentum: f64,
    temperature: f64,
) -> Result<GroupMemory> {
    if features.rows() != assignment.labels.len() {
        return Err(Error::LengthMismatch {
            left: features.rows(),
            right: assignment.labels.len(),
        });
    }
    if assignment.num_groups == 0 {
        return Err(Error::AllNoise);
    }
    let d = features.cols();
    let mut sums = Matrix::zeros(assignment.num_groups, d);
    let mut counts = vec![0usize; assignment.num_groups];
    for (i, &label) in assignment.labels.iter().enumerate() {
        if label < 0 {
            continue;
        }
        let k = label as usize;
        let row = sums.row_mut(k);
        for (dst, src) in row.iter_mut().zip(features.row(i)) {
            *dst += src;
        }
        counts[k] += 1;
    }
    let mut entries = Matrix::zeros(assignment.num_groups, d);
    for k in 0..assignment.num_groups {
        if counts[k] == 0 {
            return Err(Error::EmptyGroup(k));
        }
        let mean: Vec<f64> = sums.row(k).iter().map(|v| v / counts[k] as f64).collect();
        entries.row_mut(k).copy_from_slice(&l2_normalize(&mean)?);
    }
    GroupMemory::new(entries, momentum, temperature)
}

/// Momentum update from a batch of queries: for each group present,
/// `c_k <- normalize(m * c_k + (1 - m) * q_k)` where `q_k` is the mean of
/// the batch's group-`k` queries (summed in ascending batch order). Groups
/// absent from the batch are untouched.
pub fn update_memory(memory: &mut GroupMemory, queries: &Matrix, groups: &[usize]) -> Result<()> {
    if queries.rows() != groups.len() {
        return Err(Error::LengthMismatch { left: queries.rows(), right: groups.len() });
    }
    if queries.rows() > 0 && queries.cols() != memory.dim() {
        return Err(Error::DimensionMismatch { left: queries.cols(), right: memory.dim() });
    }
    let n_groups = memory.num_groups();
    let d = memory.dim();
    let mut sums = Matrix::zeros(n_groups, d);
    let mut counts = vec![0usize; n_groups];
    for (i, &k) in groups.iter().enumerate() {
        if k >= n_groups {
            return Err(Error::BadIndex { index: k, len: n_groups });
        }
        let row = sums.row_mut(k);
        for (dst, src) in row.iter_mut().zip(queries.row(i)) {
            *dst += src;
        }
        counts[k] += 1;
    }
    let m = memory.momentum;
    for k in 0..n_groups {
        if counts[k] == 0 {
            continue;
        }
        let mixed: Vec<f64> = memory
            .entries
            .row(k)
            .iter()
            .zip(sums.row(k))
            .map(|(c, s)| m * c + (1.0 - m) * (s / counts[k] as f64))
            .collect();
        memory.entries.row_mut(k).copy_from_slice(&l2_normalize(&mixed)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{l2_norm, SeededRng};

    fn assignment(labels: Vec<i32>, num_groups: usize) -> ClusterAssignment {
        ClusterAssignment { labels, num_groups }
    }

    #[test]
    fn init_singleton_group_is_normalized_feature() {
        let features = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let mem = init_memory(&features, &assignment(vec![0], 1), 0.2, 0.05).unwrap();
        assert!((mem.entries().get(0, 0) - 0.6).abs() < 1e-12);
        assert!((mem.entries().get(0, 1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn init_mean_then_normalize() {
        let features = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mem = init_memory(&features, &assignment(vec![0, 0], 1), 0.2, 0.05).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((mem.entries().get(0, 0) - r).abs() < 1e-9);
        assert!((mem.entries().get(0, 1) - r).abs() < 1e-9);
        assert!((mem.entries().get(0, 0) - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn init_orders_rows_by_group_id_and_skips_noise() {
        let features = Matrix::from_rows(&[
            vec![0.0, 2.0],
            vec![5.0, 0.0],
            vec![99.0, 99.0],
        ])
        .unwrap();
        let mem = init_memory(&features, &assignment(vec![1, 0, -1], 2), 0.5, 1.0).unwrap();
        assert_eq!(mem.num_groups(), 2);
        assert_eq!(mem.entries().row(0), &[1.0, 0.0]);
        assert_eq!(mem.entries().row(1), &[0.0, 1.0]);
    }

    #[test]
    fn init_detects_empty_group() {
        let features = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let bad = assignment(vec![1], 2); // group 0 has no members
        assert!(matches!(init_memory(&features, &bad, 0.2, 0.05), Err(Error::EmptyGroup(0))));
    }

    #[test]
    fn momentum_one_is_identity() {
        let entries = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut mem = GroupMemory::new(entries.clone(), 1.0, 0.05).unwrap();
        let queries = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        update_memory(&mut mem, &queries, &[0]).unwrap();
        assert_eq!(mem.entries().data(), entries.data());
    }

    #[test]
    fn momentum_zero_replaces_with_query() {
        let entries = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let mut mem = GroupMemory::new(entries, 0.0, 0.05).unwrap();
        let queries = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        update_memory(&mut mem, &queries, &[0]).unwrap();
        assert!((mem.entries().get(0, 0)).abs() < 1e-12);
        assert!((mem.entries().get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_momentum_hand_case() {
        let entries = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let mut mem = GroupMemory::new(entries, 0.5, 0.05).unwrap();
        let queries = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        update_memory(&mut mem, &queries, &[0]).unwrap();
        assert!((mem.entries().get(0, 0) - 0.70711).abs() < 1e-5);
        assert!((mem.entries().get(0, 1) - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn update_rejects_bad_group_index() {
        let entries = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let mut mem = GroupMemory::new(entries, 0.5, 0.05).unwrap();
        let queries = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            update_memory(&mut mem, &queries, &[3]),
            Err(Error::BadIndex { index: 3, len: 1 })
        ));
    }

    #[test]
    fn rows_stay_unit_norm_and_fixed_point_holds() {
        let mut rng = SeededRng::new(44);
        let d = 6;
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| l2_normalize(&(0..d).map(|_| rng.normal()).collect::<Vec<_>>()).unwrap())
            .collect();
        let mut mem = GroupMemory::new(Matrix::from_rows(&rows).unwrap(), 0.3, 0.05).unwrap();

        // Fixed point: feeding a row back as its own query leaves it in place.
        let q = Matrix::from_rows(&[mem.entries().row(2).to_vec()]).unwrap();
        let before = mem.entries().row(2).to_vec();
        update_memory(&mut mem, &q, &[2]).unwrap();
        for (a, b) in before.iter().zip(mem.entries().row(2)) {
            assert!((a - b).abs() < 1e-12);
        }

        for step in 0..500 {
            let queries: Vec<Vec<f64>> = (0..3)
                .map(|_| l2_normalize(&(0..d).map(|_| rng.normal()).collect::<Vec<_>>()).unwrap())
                .collect();
            let groups: Vec<usize> = (0..3).map(|_| rng.index(4)).collect();
            update_memory(&mut mem, &Matrix::from_rows(&queries).unwrap(), &groups).unwrap();
            for k in 0..4 {
                assert!(
                    (l2_norm(mem.entries().row(k)) - 1.0).abs() < 1e-9,
                    "row {k} drifted at step {step}"
                );
            }
        }
    }
}
