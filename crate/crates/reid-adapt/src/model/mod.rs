//! Part-pooled descriptor model: three adapted global features over one
//! input feature map, dual-direction stripe partitioning with per-part
//! reduction heads, identity classifiers, and the concatenated retrieval
//! embedding. Gradients for every parameter are computed analytically in
//! [`backward`].

mod backward;
mod checkpoint;

pub use backward::{backward, LinearGrad, ModelGrads, ModelVelocity, UpstreamGrads};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};
use crate::parallel;

/// C x H x W activation map, the per-image input. Values are stored as
/// `f32` (matching the on-disk format); arithmetic promotes to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    values: Vec<f32>,
    channels: usize,
    height: usize,
    width: usize,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels * height * width != values.len() || channels == 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature map {channels}x{height}x{width} incompatible with {} values",
                values.len()
            )));
        }
        Ok(Self { values, channels, height, width })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { values: vec![0.0; channels * height * width], channels, height, width }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    fn flat(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.height + h) * self.width + w
    }

    pub fn get(&self, c: usize, h: usize, w: usize) -> f32 {
        self.values[self.flat(c, h, w)]
    }

    pub fn set(&mut self, c: usize, h: usize, w: usize, v: f32) {
        let i = self.flat(c, h, w);
        self.values[i] = v;
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }
}

/// Direction of stripe partitioning. Vertical splits the height extent,
/// horizontal splits the width extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Vertical,
    Horizontal,
}

/// One stripe of an `n`-way partition along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartRegion {
    pub axis: Axis,
    pub pieces: usize,
    pub index: usize,
}

/// The canonical part list: two then three vertical stripes, followed by
/// two then three horizontal stripes. Either direction can be dropped for
/// the reduced model variants.
pub fn standard_parts(vertical: bool, horizontal: bool) -> Vec<PartRegion> {
    let mut parts = Vec::new();
    for (axis, on) in [(Axis::Vertical, vertical), (Axis::Horizontal, horizontal)] {
        if !on {
            continue;
        }
        for pieces in [2usize, 3] {
            for index in 0..pieces {
                parts.push(PartRegion { axis, pieces, index });
            }
        }
    }
    parts
}

/// Dense layer, weight stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    fn init(out_dim: usize, in_dim: usize, bound: f64, rng: &mut SeededRng) -> Self {
        let data = (0..out_dim * in_dim).map(|_| rng.uniform_in(-bound, bound)).collect();
        Self {
            weight: Matrix::from_vec(out_dim, in_dim, data).expect("consistent dims"),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    /// `W x + b`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim());
        (0..self.out_dim())
            .map(|o| {
                let row = self.weight.row(o);
                let mut acc = self.bias[o];
                for i in 0..x.len() {
                    acc += row[i] * x[i];
                }
                acc
            })
            .collect()
    }

    /// `W^T g` (no bias).
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.out_dim());
        let mut out = vec![0.0; self.in_dim()];
        for o in 0..self.out_dim() {
            let row = self.weight.row(o);
            let go = g[o];
            for i in 0..out.len() {
                out[i] += row[i] * go;
            }
        }
        out
    }
}

/// All learnable parameters: 3 branch adapters (global/middle/lower), one
/// reduction head per part, one identity classifier per part.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub adapters: Vec<Linear>,
    pub reducers: Vec<Linear>,
    pub classifiers: Vec<Linear>,
    pub parts: Vec<PartRegion>,
    pub channels: usize,
    pub d_g: usize,
    pub d_p: usize,
    pub num_classes: usize,
}

impl ModelParams {
    /// Seeded initialization: adapter/reducer weights uniform in
    /// `[-1/sqrt(C), 1/sqrt(C)]`, classifiers in `[-1/sqrt(d_p), 1/sqrt(d_p)]`,
    /// all biases zero.
    pub fn init(
        channels: usize,
        d_g: usize,
        d_p: usize,
        num_classes: usize,
        parts: Vec<PartRegion>,
        rng: &mut SeededRng,
    ) -> Self {
        let wb = 1.0 / (channels as f64).sqrt();
        let cb = 1.0 / (d_p as f64).sqrt();
        let adapters = (0..3).map(|_| Linear::init(d_g, channels, wb, rng)).collect();
        let reducers = (0..parts.len()).map(|_| Linear::init(d_p, channels, wb, rng)).collect();
        let classifiers =
            (0..parts.len()).map(|_| Linear::init(num_classes, d_p, cb, rng)).collect();
        Self { adapters, reducers, classifiers, parts, channels, d_g, d_p, num_classes }
    }

    /// Default feature widths given the input channel count: the adapted
    /// global features keep the channel width, parts reduce to C/4
    /// (at least 8).
    pub fn default_dims(channels: usize) -> (usize, usize) {
        (channels, (channels / 4).max(8))
    }

    pub fn embedding_dim(&self) -> usize {
        3 * self.d_g + self.parts.len() * self.d_p
    }

    pub fn num_parameters(&self) -> usize {
        let lin = |l: &Linear| l.weight.data().len() + l.bias.len();
        self.adapters.iter().map(&lin).sum::<usize>()
            + self.reducers.iter().map(&lin).sum::<usize>()
            + self.classifiers.iter().map(&lin).sum::<usize>()
    }
}

/// Per-image output: 3 adapted global features, one reduced feature per
/// part, and their in-order concatenation (globals first).
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub global: Vec<Vec<f64>>,
    pub parts: Vec<Vec<f64>>,
    pub embedding: Vec<f64>,
}

/// Intermediates recorded by [`forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) samples: Vec<SampleCache>,
    pub(crate) dims: CacheDims,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CacheDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub d_g: usize,
    pub d_p: usize,
    pub num_classes: usize,
    pub n_parts: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct SampleCache {
    pub global_pool: Vec<f64>,
    pub global_argmax: Vec<usize>,
    pub part_pool: Vec<Vec<f64>>,
    pub part_argmax: Vec<Vec<usize>>,
    pub part_pre: Vec<Vec<f64>>,
    pub part_feat: Vec<Vec<f64>>,
}

/// Stripe boundaries for an `n`-way split of `extent`: contiguous, disjoint,
/// exhaustive; the first `extent % n` stripes take one extra element.
pub fn stripe_bounds(extent: usize, n: usize) -> Result<Vec<(usize, usize)>> {
    if n == 0 || extent < n {
        return Err(Error::TooManyParts { extent, parts: n });
    }
    let base = extent / n;
    let rem = extent % n;
    let mut bounds = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = base + usize::from(i < rem);
        bounds.push((start, start + len));
        start += len;
    }
    Ok(bounds)
}

/// Channelwise max over all spatial positions.
pub fn global_max_pool(map: &FeatureMap) -> Vec<f64> {
    pool_region(map, 0, map.height, 0, map.width).0
}

/// Max pool over a spatial window; also returns the argmax as a flat
/// `h * W + w` index per channel. Ties keep the first index in row-major
/// `(h, w)` scan order.
fn pool_region(
    map: &FeatureMap,
    h0: usize,
    h1: usize,
    w0: usize,
    w1: usize,
) -> (Vec<f64>, Vec<usize>) {
    let mut pooled = Vec::with_capacity(map.channels);
    let mut argmax = Vec::with_capacity(map.channels);
    for c in 0..map.channels {
        let mut best = f64::NEG_INFINITY;
        let mut best_at = h0 * map.width + w0;
        for h in h0..h1 {
            for w in w0..w1 {
                let v = f64::from(map.get(c, h, w));
                if v > best {
                    best = v;
                    best_at = h * map.width + w;
                }
            }
        }
        pooled.push(best);
        argmax.push(best_at);
    }
    (pooled, argmax)
}

fn region_of(map: &FeatureMap, part: &PartRegion) -> Result<(usize, usize, usize, usize)> {
    match part.axis {
        Axis::Vertical => {
            let (h0, h1) = stripe_bounds(map.height, part.pieces)?[part.index];
            Ok((h0, h1, 0, map.width))
        }
        Axis::Horizontal => {
            let (w0, w1) = stripe_bounds(map.width, part.pieces)?[part.index];
            Ok((0, map.height, w0, w1))
        }
    }
}

/// Split a map into `n` contiguous stripes along an axis (full extent in the
/// other direction). Stripes cover the map without overlap.
pub fn partition(map: &FeatureMap, axis: Axis, n: usize) -> Result<Vec<FeatureMap>> {
    let extent = match axis {
        Axis::Vertical => map.height,
        Axis::Horizontal => map.width,
    };
    let bounds = stripe_bounds(extent, n)?;
    bounds
        .into_iter()
        .map(|(lo, hi)| {
            let (h0, h1, w0, w1) = match axis {
                Axis::Vertical => (lo, hi, 0, map.width),
                Axis::Horizontal => (0, map.height, lo, hi),
            };
            let mut values = Vec::with_capacity(map.channels * (h1 - h0) * (w1 - w0));
            for c in 0..map.channels {
                for h in h0..h1 {
                    for w in w0..w1 {
                        values.push(map.get(c, h, w));
                    }
                }
            }
            FeatureMap::new(map.channels, h1 - h0, w1 - w0, values)
        })
        .collect()
}

fn forward_one(map: &FeatureMap, params: &ModelParams) -> Result<(Descriptor, SampleCache)> {
    if map.channels != params.channels {
        return Err(Error::ShapeMismatch(format!(
            "map has {} channels, params expect {}",
            map.channels, params.channels
        )));
    }
    let (global_pool, global_argmax) = pool_region(map, 0, map.height, 0, map.width);
    let global: Vec<Vec<f64>> = params.adapters.iter().map(|a| a.apply(&global_pool)).collect();

    let mut part_pool = Vec::with_capacity(params.parts.len());
    let mut part_argmax = Vec::with_capacity(params.parts.len());
    let mut part_pre = Vec::with_capacity(params.parts.len());
    let mut part_feat = Vec::with_capacity(params.parts.len());
    for (region, reducer) in params.parts.iter().zip(&params.reducers) {
        let (h0, h1, w0, w1) = region_of(map, region)?;
        let (pool, argmax) = pool_region(map, h0, h1, w0, w1);
        let pre = reducer.apply(&pool);
        let feat: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        part_pool.push(pool);
        part_argmax.push(argmax);
        part_pre.push(pre);
        part_feat.push(feat);
    }

    let mut embedding = Vec::with_capacity(params.embedding_dim());
    for g in &global {
        embedding.extend_from_slice(g);
    }
    for p in &part_feat {
        embedding.extend_from_slice(p);
    }

    let descriptor = Descriptor { global, parts: part_feat.clone(), embedding };
    let cache = SampleCache { global_pool, global_argmax, part_pool, part_argmax, part_pre, part_feat };
    Ok((descriptor, cache))
}

/// Forward pass for one map.
pub fn forward(map: &FeatureMap, params: &ModelParams) -> Result<Descriptor> {
    forward_one(map, params).map(|(d, _)| d)
}

fn cache_dims(maps: &[FeatureMap], params: &ModelParams) -> CacheDims {
    let (h, w) = maps.first().map_or((0, 0), |m| (m.height, m.width));
    CacheDims {
        channels: params.channels,
        height: h,
        width: w,
        d_g: params.d_g,
        d_p: params.d_p,
        num_classes: params.num_classes,
        n_parts: params.parts.len(),
    }
}

/// Elementwise forward over a batch, recording pooling argmax locations and
/// ReLU masks for [`backward`]. Samples are independent, so the parallel
/// path produces bit-identical output.
pub fn forward_batch(
    maps: &[FeatureMap],
    params: &ModelParams,
) -> Result<(Vec<Descriptor>, ForwardCache)> {
    check_batch_shapes(maps)?;
    let results = parallel::map_indexed(maps.len(), |i| forward_one(&maps[i], params));
    collect_batch(results, cache_dims(maps, params))
}

/// Single-threaded twin of [`forward_batch`].
pub fn forward_batch_seq(
    maps: &[FeatureMap],
    params: &ModelParams,
) -> Result<(Vec<Descriptor>, ForwardCache)> {
    check_batch_shapes(maps)?;
    let results = parallel::map_indexed_seq(maps.len(), |i| forward_one(&maps[i], params));
    collect_batch(results, cache_dims(maps, params))
}

fn check_batch_shapes(maps: &[FeatureMap]) -> Result<()> {
    if let Some(first) = maps.first() {
        for m in maps {
            if m.shape() != first.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "batch mixes shapes {:?} and {:?}",
                    first.shape(),
                    m.shape()
                )));
            }
        }
    }
    Ok(())
}

fn collect_batch(
    results: Vec<Result<(Descriptor, SampleCache)>>,
    dims: CacheDims,
) -> Result<(Vec<Descriptor>, ForwardCache)> {
    let mut descriptors = Vec::with_capacity(results.len());
    let mut samples = Vec::with_capacity(results.len());
    for r in results {
        let (d, c) = r?;
        descriptors.push(d);
        samples.push(c);
    }
    Ok((descriptors, ForwardCache { samples, dims }))
}

/// Classifier logits per part head, one `n x num_classes` matrix each.
pub fn logits_batch(descriptors: &[Descriptor], params: &ModelParams) -> Result<Vec<Matrix>> {
    let n = descriptors.len();
    let mut out = Vec::with_capacity(params.classifiers.len());
    for (j, head) in params.classifiers.iter().enumerate() {
        let mut m = Matrix::zeros(n, params.num_classes);
        for (s, d) in descriptors.iter().enumerate() {
            let feat = d.parts.get(j).ok_or_else(|| {
                Error::ShapeMismatch(format!("descriptor has {} parts, head {j} missing", d.parts.len()))
            })?;
            m.row_mut(s).copy_from_slice(&head.apply(feat));
        }
        out.push(m);
    }
    Ok(out)
}
