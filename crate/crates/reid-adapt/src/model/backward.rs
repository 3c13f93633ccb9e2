//! Analytic gradients for every model parameter plus the input maps.
//!
//! Max pooling routes its gradient to the recorded argmax location (first
//! index in row-major `(h, w)` scan order on ties); ReLU gates by the sign
//! of the cached pre-activation. Per-sample contributions are reduced in
//! fixed batch order, so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::{ForwardCache, Linear, ModelParams};

/// Gradient (or velocity) buffers for one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearGrad {
    pub fn zeros_like(layer: &Linear) -> Self {
        Self {
            weight: Matrix::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

/// Gradients for all parameters, plus the gradient on each input map
/// (flattened `c * H * W + h * W + w`, one per batch sample).
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub adapters: Vec<LinearGrad>,
    pub reducers: Vec<LinearGrad>,
    pub classifiers: Vec<LinearGrad>,
    pub input: Vec<Vec<f64>>,
}

/// Momentum buffers mirroring the parameter tensors.
#[derive(Debug, Clone)]
pub struct ModelVelocity {
    pub adapters: Vec<LinearGrad>,
    pub reducers: Vec<LinearGrad>,
    pub classifiers: Vec<LinearGrad>,
}

impl ModelVelocity {
    pub fn zeros(params: &ModelParams) -> Self {
        Self {
            adapters: params.adapters.iter().map(LinearGrad::zeros_like).collect(),
            reducers: params.reducers.iter().map(LinearGrad::zeros_like).collect(),
            classifiers: params.classifiers.iter().map(LinearGrad::zeros_like).collect(),
        }
    }
}

/// Upstream gradients flowing into the model outputs. `global` holds one
/// `n x d_g` matrix per branch, `parts` one `n x d_p` matrix per part; the
/// classifier-logit gradients are optional (absent outside the supervised
/// stage, which leaves the classifier heads untouched).
#[derive(Debug, Clone)]
pub struct UpstreamGrads {
    pub global: Vec<Matrix>,
    pub parts: Vec<Matrix>,
    pub logits: Option<Vec<Matrix>>,
}

impl UpstreamGrads {
    /// All-zero upstream for a batch of `n` samples.
    pub fn zeros(params: &ModelParams, n: usize) -> Self {
        Self {
            global: (0..3).map(|_| Matrix::zeros(n, params.d_g)).collect(),
            parts: (0..params.parts.len()).map(|_| Matrix::zeros(n, params.d_p)).collect(),
            logits: None,
        }
    }

    /// Split a gradient on the concatenated embedding into per-feature
    /// gradients, accumulating into `self` for sample `s`.
    pub fn add_embedding_grad(&mut self, params: &ModelParams, s: usize, grad: &[f64]) -> Result<()> {
        if grad.len() != params.embedding_dim() {
            return Err(Error::DimensionMismatch {
                left: grad.len(),
                right: params.embedding_dim(),
            });
        }
        let mut offset = 0;
        for b in 0..3 {
            let row = self.global[b].row_mut(s);
            for (dst, src) in row.iter_mut().zip(&grad[offset..offset + params.d_g]) {
                *dst += src;
            }
            offset += params.d_g;
        }
        for j in 0..params.parts.len() {
            let row = self.parts[j].row_mut(s);
            for (dst, src) in row.iter_mut().zip(&grad[offset..offset + params.d_p]) {
                *dst += src;
            }
            offset += params.d_p;
        }
        Ok(())
    }
}

fn check_dims(params: &ModelParams, cache: &ForwardCache, upstream: &UpstreamGrads) -> Result<usize> {
    let dims = &cache.dims;
    if dims.channels != params.channels
        || dims.d_g != params.d_g
        || dims.d_p != params.d_p
        || dims.num_classes != params.num_classes
        || dims.n_parts != params.parts.len()
    {
        return Err(Error::StaleCache(format!(
            "cache was recorded for C={} d_g={} d_p={} classes={} parts={}, params now have \
             C={} d_g={} d_p={} classes={} parts={}",
            dims.channels,
            dims.d_g,
            dims.d_p,
            dims.num_classes,
            dims.n_parts,
            params.channels,
            params.d_g,
            params.d_p,
            params.num_classes,
            params.parts.len()
        )));
    }
    let n = cache.samples.len();
    if upstream.global.len() != 3 || upstream.parts.len() != params.parts.len() {
        return Err(Error::ShapeMismatch(format!(
            "upstream has {} global and {} part matrices, expected 3 and {}",
            upstream.global.len(),
            upstream.parts.len(),
            params.parts.len()
        )));
    }
    for m in upstream.global.iter() {
        if m.rows() != n || m.cols() != params.d_g {
            return Err(Error::ShapeMismatch("bad upstream global gradient shape".into()));
        }
    }
    for m in upstream.parts.iter() {
        if m.rows() != n || m.cols() != params.d_p {
            return Err(Error::ShapeMismatch("bad upstream part gradient shape".into()));
        }
    }
    if let Some(lg) = &upstream.logits {
        if lg.len() != params.classifiers.len() {
            return Err(Error::ShapeMismatch("one logit gradient per classifier head required".into()));
        }
        for m in lg {
            if m.rows() != n || m.cols() != params.num_classes {
                return Err(Error::ShapeMismatch("bad upstream logit gradient shape".into()));
            }
        }
    }
    Ok(n)
}

fn outer_accumulate(acc: &mut Matrix, up: &[f64], x: &[f64]) {
    for (o, &u) in up.iter().enumerate() {
        let row = acc.row_mut(o);
        for (i, &xi) in x.iter().enumerate() {
            row[i] += u * xi;
        }
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Exact gradients for every parameter given upstream gradients on the
/// global features, part features, and (optionally) classifier logits.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    upstream: &UpstreamGrads,
) -> Result<ModelGrads> {
    let n = check_dims(params, cache, upstream)?;
    let spatial = cache.dims.height * cache.dims.width;
    let mut grads = ModelGrads {
        adapters: params.adapters.iter().map(LinearGrad::zeros_like).collect(),
        reducers: params.reducers.iter().map(LinearGrad::zeros_like).collect(),
        classifiers: params.classifiers.iter().map(LinearGrad::zeros_like).collect(),
        input: vec![vec![0.0; params.channels * spatial]; n],
    };

    for s in 0..n {
        let sc = &cache.samples[s];
        let input = &mut grads.input[s];

        for b in 0..3 {
            let up = upstream.global[b].row(s);
            outer_accumulate(&mut grads.adapters[b].weight, up, &sc.global_pool);
            add_into(&mut grads.adapters[b].bias, up);
            let through = params.adapters[b].apply_transpose(up);
            for (c, &g) in through.iter().enumerate() {
                input[c * spatial + sc.global_argmax[c]] += g;
            }
        }

        for j in 0..params.parts.len() {
            let mut g_part = upstream.parts[j].row(s).to_vec();
            if let Some(lg) = &upstream.logits {
                let up_logit = lg[j].row(s);
                outer_accumulate(&mut grads.classifiers[j].weight, up_logit, &sc.part_feat[j]);
                add_into(&mut grads.classifiers[j].bias, up_logit);
                add_into(&mut g_part, &params.classifiers[j].apply_transpose(up_logit));
            }
            // ReLU gate
            for (g, &pre) in g_part.iter_mut().zip(&sc.part_pre[j]) {
                if pre <= 0.0 {
                    *g = 0.0;
                }
            }
            outer_accumulate(&mut grads.reducers[j].weight, &g_part, &sc.part_pool[j]);
            add_into(&mut grads.reducers[j].bias, &g_part);
            let through = params.reducers[j].apply_transpose(&g_part);
            for (c, &g) in through.iter().enumerate() {
                input[c * spatial + sc.part_argmax[j][c]] += g;
            }
        }
    }
    Ok(grads)
}
