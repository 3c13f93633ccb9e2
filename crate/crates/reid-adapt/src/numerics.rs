//! Deterministic numeric primitives shared by every other module.
//!
//! All accumulations run in `f64` with a fixed left-to-right order, so any
//! result is bit-reproducible for a given input regardless of thread count.
//! Stochastic code never touches ambient RNG state: it takes a [`SeededRng`]
//! explicitly, and parallel work derives child generators by stream id.

use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;

/// Norm cutoff below which normalization is refused.
pub const NORM_EPS: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Build from a flat row-major buffer. Fails if `rows * cols != data.len()`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from row slices; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch { left: cols, right: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Distance metric shared by clustering and retrieval evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Euclidean,
    #[default]
    CosineDistance,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scale `v` to unit Euclidean norm. Refuses vectors with norm <= [`NORM_EPS`].
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if !(norm > NORM_EPS) {
        return Err(Error::ZeroVector { norm, eps: NORM_EPS });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Gradient of `l2_normalize` at `raw`, given the gradient on the normalized
/// output: `(g - (g . v_hat) v_hat) / |raw|`.
pub fn l2_normalize_backward(raw: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if raw.len() != upstream.len() {
        return Err(Error::DimensionMismatch { left: raw.len(), right: upstream.len() });
    }
    let norm = l2_norm(raw);
    if !(norm > NORM_EPS) {
        return Err(Error::ZeroVector { norm, eps: NORM_EPS });
    }
    let unit: Vec<f64> = raw.iter().map(|x| x / norm).collect();
    let proj = dot(upstream, &unit);
    Ok(upstream
        .iter()
        .zip(&unit)
        .map(|(g, u)| (g - proj * u) / norm)
        .collect())
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// `1 - (a . b) / (|a||b|)`. Degenerate near-zero vectors are treated as
/// orthogonal to everything (distance 1).
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na <= NORM_EPS || nb <= NORM_EPS {
        return Ok(1.0);
    }
    Ok(1.0 - dot(a, b) / (na * nb))
}

pub fn distance(a: &[f64], b: &[f64], metric: DistanceMetric) -> Result<f64> {
    match metric {
        DistanceMetric::Euclidean => euclidean_distance(a, b),
        DistanceMetric::CosineDistance => cosine_distance(a, b),
    }
}

/// All pairwise Euclidean distances between rows of `x` and rows of `y`.
pub fn pairwise_distances(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    pairwise_with_metric(x, y, DistanceMetric::Euclidean)
}

/// Single-threaded twin of [`pairwise_distances`].
pub fn pairwise_distances_seq(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    pairwise_with_metric_seq(x, y, DistanceMetric::Euclidean)
}

/// Pairwise distances under the given metric; rows computed independently
/// (parallel when the `parallel` feature is on).
pub fn pairwise_with_metric(x: &Matrix, y: &Matrix, metric: DistanceMetric) -> Result<Matrix> {
    check_pairwise_dims(x, y)?;
    let rows = parallel::map_indexed(x.rows(), |i| pairwise_row(x.row(i), y, metric));
    flatten_rows(rows, x.rows(), y.rows())
}

/// Single-threaded twin of [`pairwise_with_metric`].
pub fn pairwise_with_metric_seq(x: &Matrix, y: &Matrix, metric: DistanceMetric) -> Result<Matrix> {
    check_pairwise_dims(x, y)?;
    let rows = parallel::map_indexed_seq(x.rows(), |i| pairwise_row(x.row(i), y, metric));
    flatten_rows(rows, x.rows(), y.rows())
}

fn check_pairwise_dims(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.cols() != y.cols() {
        return Err(Error::DimensionMismatch { left: x.cols(), right: y.cols() });
    }
    Ok(())
}

fn pairwise_row(xi: &[f64], y: &Matrix, metric: DistanceMetric) -> Vec<f64> {
    (0..y.rows())
        .map(|j| distance(xi, y.row(j), metric).expect("dims checked"))
        .collect()
}

fn flatten_rows(rows: Vec<Vec<f64>>, n: usize, m: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(n * m);
    for r in rows {
        data.extend_from_slice(&r);
    }
    Matrix::from_vec(n, m, data)
}

/// Numerically stabilized softmax: subtracts the max logit before
/// exponentiating, so huge logits do not overflow.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    debug_assert!(logits.iter().all(|v| v.is_finite()));
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let mut sum = 0.0;
    for e in &exps {
        sum += e;
    }
    exps.iter().map(|e| e / sum).collect()
}

/// Seedable, portable pseudo-random generator.
///
/// Backed by ChaCha8 keyed from the 64-bit seed; derived distributions
/// (53-bit uniforms, Box-Muller normals, Fisher-Yates shuffles, rejection
/// sampling for bounded integers) are implemented here so the whole stream is
/// pinned by this crate, not by a dependency's internals. Identical seeds
/// give identical streams on every platform.
///
/// A generator is single-owner; parallel work derives independent children
/// with [`SeededRng::child`] instead of sharing one instance.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: rand_chacha::ChaCha8Rng,
    seed: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { inner: rand_chacha::ChaCha8Rng::seed_from_u64(seed), seed }
    }

    /// Deterministic child generator: same key, dedicated stream.
    pub fn child(&self, stream: u64) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.wrapping_add(1).into());
        Self { inner: rng, seed: self.seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Unbiased integer in `[0, n)` by rejection sampling.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index bound must be positive");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices drawn uniformly from `0..n`, in draw order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} distinct from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn l2_normalize_hand_case() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15);
        assert!((v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_unit_vector_unchanged() {
        let v = l2_normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn l2_normalize_rejects_zero() {
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroVector { .. })));
    }

    #[test]
    fn l2_normalize_backward_matches_finite_differences() {
        let mut rng = SeededRng::new(11);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..5).map(|_| rng.normal() + 0.1).collect();
            let upstream: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let analytic = l2_normalize_backward(&raw, &upstream).unwrap();
            let h = 1e-6;
            for i in 0..raw.len() {
                let mut plus = raw.clone();
                plus[i] += h;
                let mut minus = raw.clone();
                minus[i] -= h;
                let f = |x: &[f64]| dot(&l2_normalize(x).unwrap(), &upstream);
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                assert!(
                    (analytic[i] - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                    "entry {i}: analytic {} vs fd {fd}",
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn euclidean_distance_hand_cases() {
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[1.0], &[-1.0]).unwrap(), 2.0);
    }

    #[test]
    fn euclidean_distance_dim_mismatch() {
        assert!(matches!(
            euclidean_distance(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pairwise_identity_rows() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let d = pairwise_distances(&x, &x).unwrap();
        let s2 = 2.0_f64.sqrt();
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(1, 1), 0.0);
        assert!((d.get(0, 1) - s2).abs() < 1e-15);
        assert!((d.get(1, 0) - s2).abs() < 1e-15);
    }

    #[test]
    fn pairwise_single_row() {
        let x = Matrix::from_rows(&[vec![0.5, -0.5, 2.0]]).unwrap();
        let d = pairwise_distances(&x, &x).unwrap();
        assert_eq!((d.rows(), d.cols()), (1, 1));
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn pairwise_matches_loop_oracle() {
        let mut rng = SeededRng::new(3);
        let x = Matrix::from_vec(5, 3, (0..15).map(|_| rng.normal()).collect()).unwrap();
        let y = Matrix::from_vec(4, 3, (0..12).map(|_| rng.normal()).collect()).unwrap();
        let d = pairwise_distances(&x, &y).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..3 {
                    let diff = x.get(i, k) - y.get(j, k);
                    acc += diff * diff;
                }
                assert!((d.get(i, j) - acc.sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pairwise_parallel_equals_sequential_bitwise() {
        let mut rng = SeededRng::new(17);
        let x = Matrix::from_vec(40, 7, (0..280).map(|_| rng.normal()).collect()).unwrap();
        let y = Matrix::from_vec(33, 7, (0..231).map(|_| rng.normal()).collect()).unwrap();
        let a = pairwise_distances(&x, &y).unwrap();
        let b = pairwise_distances_seq(&x, &y).unwrap();
        assert_eq!(a.data(), b.data());
        let c = pairwise_with_metric(&x, &y, DistanceMetric::CosineDistance).unwrap();
        let d = pairwise_with_metric_seq(&x, &y, DistanceMetric::CosineDistance).unwrap();
        assert_eq!(c.data(), d.data());
    }

    #[test]
    fn softmax_uniform_and_stability() {
        let u = softmax(&[0.0, 0.0, 0.0]);
        for v in &u {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&[1000.0, 0.0]);
        assert!(s[0] > 1.0 - 1e-12 && s[1] < 1e-12);
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_hand_case() {
        let s = softmax(&[1.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((s[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((s[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((s[0] - 0.7311).abs() < 1e-4);
        assert!((s[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn rng_same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn rng_children_are_independent_and_deterministic() {
        let base = SeededRng::new(9);
        let mut c0 = base.child(0);
        let mut c0b = base.child(0);
        let mut c1 = base.child(1);
        let first: Vec<u64> = (0..8).map(|_| c0.next_u64()).collect();
        let again: Vec<u64> = (0..8).map(|_| c0b.next_u64()).collect();
        let other: Vec<u64> = (0..8).map(|_| c1.next_u64()).collect();
        assert_eq!(first, again);
        assert_ne!(first, other);
    }

    #[test]
    fn choose_distinct_is_distinct_and_in_range() {
        let mut rng = SeededRng::new(5);
        for _ in 0..100 {
            let picks = rng.choose_distinct(10, 4);
            let mut sorted = picks.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 4);
            assert!(picks.iter().all(|&i| i < 10));
        }
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in proptest::collection::vec(-100.0f64..100.0, 1..8)) {
            prop_assume!(l2_norm(&v) > 1e-6);
            let once = l2_normalize(&v).unwrap();
            let twice = l2_normalize(&once).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((l2_norm(&once) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn pairwise_self_zero_diagonal_symmetric(
            data in proptest::collection::vec(-50.0f64..50.0, 12)
        ) {
            let x = Matrix::from_vec(4, 3, data).unwrap();
            let d = pairwise_distances(&x, &x).unwrap();
            for i in 0..4 {
                prop_assert!(d.get(i, i).abs() < 1e-9);
                for j in 0..4 {
                    prop_assert!((d.get(i, j) - d.get(j, i)).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn softmax_shift_invariant(
            logits in proptest::collection::vec(-30.0f64..30.0, 2..6),
            shift in -100.0f64..100.0,
        ) {
            let a = softmax(&logits);
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            let b = softmax(&shifted);
            let mut sum = 0.0;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
                sum += x;
            }
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(a.iter().all(|v| *v > 0.0));
        }
    }
}
