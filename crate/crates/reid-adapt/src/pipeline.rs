//! Two-stage orchestration: supervised source training, then iterative
//! rounds of clustering, memory initialization, and group-contrastive
//! refinement on the unlabeled target, plus the reduced variants used for
//! ablation and the direct-transfer baseline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clustering::{assign_pseudo_labels, dbscan, ClusteringConfig};
use crate::dataset::{Dataset, SyntheticPair};
use crate::error::{Error, Result};
use crate::eval::{evaluate_retrieval, EvalProtocol, RankingResult};
use crate::losses::{group_contrastive, supervised_loss, TripletConfig};
use crate::memory::{init_memory, update_memory};
use crate::model::{
    backward, forward, forward_batch, logits_batch, standard_parts, FeatureMap, ModelParams,
    ModelVelocity, PartRegion, UpstreamGrads,
};
use crate::numerics::{l2_normalize, l2_normalize_backward, Matrix, SeededRng};
use crate::parallel;
use crate::training::{lr_at, pk_sample, sgd_step, OptimConfig, SamplerConfig};

/// Pipeline variants: the full method, the direct-transfer baseline, the
/// reduced part layouts, and the single-round run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    MgrOnly,
    MgrNoH,
    MgrNoHv,
    OneIter,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Full, Variant::OneIter, Variant::MgrOnly, Variant::MgrNoH, Variant::MgrNoHv];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::MgrOnly => "mgr_only",
            Variant::MgrNoH => "mgr_no_h",
            Variant::MgrNoHv => "mgr_no_hv",
            Variant::OneIter => "one_iter",
        }
    }

    /// Part layout of the variant's descriptor model.
    pub fn parts(self) -> Vec<PartRegion> {
        match self {
            Variant::Full | Variant::OneIter | Variant::MgrOnly => standard_parts(true, true),
            Variant::MgrNoH => standard_parts(true, false),
            Variant::MgrNoHv => standard_parts(false, false),
        }
    }

    /// Whether the target-adaptation stage runs at all.
    pub fn adapts(self) -> bool {
        matches!(self, Variant::Full | Variant::OneIter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub momentum: f64,
    pub temperature: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self { momentum: 0.2, temperature: 0.05 }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "memory.momentum must lie in [0, 1], got {}",
                self.momentum
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "memory.temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: Variant,
    pub supervised_epochs: usize,
    pub unsupervised_rounds: usize,
    pub iterations_per_round: usize,
    /// L2-normalize embeddings before clustering and retrieval.
    pub normalize_features: bool,
    pub sampler: SamplerConfig,
    pub triplet: TripletConfig,
    pub source_optim: OptimConfig,
    pub adapt_optim: OptimConfig,
    pub clustering: ClusteringConfig,
    pub memory: MemoryConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variant: Variant::Full,
            supervised_epochs: 30,
            unsupervised_rounds: 10,
            iterations_per_round: 100,
            normalize_features: true,
            sampler: SamplerConfig::default(),
            triplet: TripletConfig::default(),
            source_optim: OptimConfig::default(),
            adapt_optim: OptimConfig {
                lr0: 5e-3,
                momentum: 0.9,
                weight_decay: 5e-4,
                warmup_epochs: 0,
                decay_epochs: vec![],
                decay_factor: 0.1,
            },
            clustering: ClusteringConfig::default(),
            memory: MemoryConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("supervised_epochs", self.supervised_epochs),
            ("unsupervised_rounds", self.unsupervised_rounds),
            ("iterations_per_round", self.iterations_per_round),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1, got 0")));
            }
        }
        if !self.triplet.margin.is_finite() || self.triplet.margin < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "triplet.margin must be finite and >= 0, got {}",
                self.triplet.margin
            )));
        }
        self.sampler.validate()?;
        self.source_optim.validate("source_optim")?;
        self.adapt_optim.validate("adapt_optim")?;
        self.clustering.validate()?;
        self.memory.validate()?;
        Ok(())
    }

    /// The single-round variant always runs exactly one outer round.
    pub fn effective_rounds(&self) -> usize {
        if self.variant == Variant::OneIter {
            1
        } else {
            self.unsupervised_rounds
        }
    }
}

/// Per-round summary. Wall time is measured but kept out of the serialized
/// report so report files are byte-identical across reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub num_groups: usize,
    pub noise: usize,
    pub mean_gcl_loss: f64,
    pub skipped: bool,
    #[serde(skip)]
    pub wall_ms: u128,
}

/// Supervised-stage loss trace.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TrainLog {
    pub epoch_mean: Vec<f64>,
    pub batch: Vec<f64>,
}

fn source_class_labels(source: &Dataset) -> Result<(Vec<usize>, usize)> {
    let mut ids: Vec<u32> = Vec::new();
    for r in &source.records {
        let id = r.identity.ok_or_else(|| {
            Error::InvalidConfig(format!("source sample {} is unlabeled", r.sample_id))
        })?;
        ids.push(id);
    }
    let mut classes = ids.clone();
    classes.sort_unstable();
    classes.dedup();
    let labels = ids
        .iter()
        .map(|id| classes.binary_search(id).expect("present by construction"))
        .collect();
    Ok((labels, classes.len()))
}

/// Number of distinct source identities (the classifier head width).
pub fn source_num_classes(source: &Dataset) -> Result<usize> {
    source_class_labels(source).map(|(_, n)| n)
}

/// Build variant-shaped parameters for a source dataset, seeded from the
/// run seed.
pub fn init_params(source: &Dataset, cfg: &RunConfig) -> Result<ModelParams> {
    let (c, _, _) = source.map_shape();
    if c == 0 {
        return Err(Error::EmptyInput);
    }
    let (d_g, d_p) = ModelParams::default_dims(c);
    let num_classes = source_num_classes(source)?;
    let mut rng = SeededRng::new(cfg.seed).child(0);
    Ok(ModelParams::init(c, d_g, d_p, num_classes, cfg.variant.parts(), &mut rng))
}

fn global_matrices(descs: &[crate::model::Descriptor], d_g: usize) -> Vec<Matrix> {
    (0..3)
        .map(|b| {
            let mut m = Matrix::zeros(descs.len(), d_g);
            for (s, d) in descs.iter().enumerate() {
                m.row_mut(s).copy_from_slice(&d.global[b]);
            }
            m
        })
        .collect()
}

fn sgd_update_model(
    params: &mut ModelParams,
    grads: &crate::model::ModelGrads,
    velocity: &mut ModelVelocity,
    lr: f64,
    optim: &OptimConfig,
    include_classifiers: bool,
) -> Result<()> {
    for ((layer, grad), vel) in
        params.adapters.iter_mut().zip(&grads.adapters).zip(&mut velocity.adapters)
    {
        sgd_step(layer.weight.data_mut(), grad.weight.data(), vel.weight.data_mut(), lr, optim)?;
        sgd_step(&mut layer.bias, &grad.bias, &mut vel.bias, lr, optim)?;
    }
    for ((layer, grad), vel) in
        params.reducers.iter_mut().zip(&grads.reducers).zip(&mut velocity.reducers)
    {
        sgd_step(layer.weight.data_mut(), grad.weight.data(), vel.weight.data_mut(), lr, optim)?;
        sgd_step(&mut layer.bias, &grad.bias, &mut vel.bias, lr, optim)?;
    }
    if include_classifiers {
        for ((layer, grad), vel) in
            params.classifiers.iter_mut().zip(&grads.classifiers).zip(&mut velocity.classifiers)
        {
            sgd_step(layer.weight.data_mut(), grad.weight.data(), vel.weight.data_mut(), lr, optim)?;
            sgd_step(&mut layer.bias, &grad.bias, &mut vel.bias, lr, optim)?;
        }
    }
    Ok(())
}

/// Stage 1: P x K batches over the labeled source, supervised loss,
/// SGD with the warm-up schedule. Deterministic given the run seed.
pub fn train_source(source: &Dataset, params: &mut ModelParams, cfg: &RunConfig) -> Result<TrainLog> {
    let (labels, num_classes) = source_class_labels(source)?;
    if num_classes != params.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "params expect {} classes, source has {num_classes}",
            params.num_classes
        )));
    }
    let mut rng = SeededRng::new(cfg.seed).child(10);
    let mut velocity = ModelVelocity::zeros(params);
    let batches_per_epoch = source.len().div_ceil(cfg.sampler.batch_size()).max(1);
    let mut log = TrainLog::default();

    for epoch in 0..cfg.supervised_epochs {
        let lr = lr_at(epoch, &cfg.source_optim);
        let mut epoch_sum = 0.0;
        for _ in 0..batches_per_epoch {
            let batch = pk_sample(&labels, &cfg.sampler, &mut rng)?;
            let batch_maps: Vec<FeatureMap> =
                batch.iter().map(|&i| source.map_for(&source.records[i]).clone()).collect();
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();

            let (descs, cache) = forward_batch(&batch_maps, params)?;
            let globals = global_matrices(&descs, params.d_g);
            let logits = logits_batch(&descs, params)?;
            let (breakdown, sgrads) =
                supervised_loss(&globals, &logits, &batch_labels, &cfg.triplet)?;

            let mut upstream = UpstreamGrads::zeros(params, descs.len());
            upstream.global = sgrads.global;
            upstream.logits = Some(sgrads.logits);
            let grads = backward(params, &cache, &upstream)?;
            sgd_update_model(params, &grads, &mut velocity, lr, &cfg.source_optim, true)?;

            epoch_sum += breakdown.total;
            log.batch.push(breakdown.total);
        }
        log.epoch_mean.push(epoch_sum / batches_per_epoch as f64);
    }
    Ok(log)
}

/// Embedding matrix in record order, optionally L2-normalized.
pub fn extract_embeddings(ds: &Dataset, params: &ModelParams, normalize: bool) -> Result<Matrix> {
    let rows = parallel::map_indexed(ds.len(), |i| embedding_row(ds, params, normalize, i));
    rows_to_matrix(rows, params.embedding_dim())
}

/// Single-threaded twin of [`extract_embeddings`].
pub fn extract_embeddings_seq(
    ds: &Dataset,
    params: &ModelParams,
    normalize: bool,
) -> Result<Matrix> {
    let rows = parallel::map_indexed_seq(ds.len(), |i| embedding_row(ds, params, normalize, i));
    rows_to_matrix(rows, params.embedding_dim())
}

fn embedding_row(ds: &Dataset, params: &ModelParams, normalize: bool, i: usize) -> Result<Vec<f64>> {
    let d = forward(ds.map_for(&ds.records[i]), params)?;
    if normalize {
        l2_normalize(&d.embedding)
    } else {
        Ok(d.embedding)
    }
}

fn rows_to_matrix(rows: Vec<Result<Vec<f64>>>, cols: usize) -> Result<Matrix> {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * cols);
    for r in rows {
        data.extend_from_slice(&r?);
    }
    Matrix::from_vec(n, cols, data)
}

/// Stage 2: per outer round, extract embeddings, cluster, re-initialize the
/// group memory, then run inner iterations of P x K sampling over pseudo
/// groups, group-contrastive descent, and memory momentum updates.
/// Gradients never flow into the memory; classifier heads stay frozen.
pub fn adapt(target: &Dataset, params: &mut ModelParams, cfg: &RunConfig) -> Result<Vec<RoundReport>> {
    if target.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rng = SeededRng::new(cfg.seed).child(20);
    let mut velocity = ModelVelocity::zeros(params);
    let mut reports = Vec::with_capacity(cfg.effective_rounds());

    for round in 0..cfg.effective_rounds() {
        let start = Instant::now();
        let embeddings = extract_embeddings(target, params, cfg.normalize_features)?;
        let assignment = dbscan(&embeddings, &cfg.clustering)?;
        if assignment.num_groups == 0 {
            log::warn!("round {round}: every sample is noise, skipping the round");
            reports.push(RoundReport {
                round,
                num_groups: 0,
                noise: assignment.noise_count(),
                mean_gcl_loss: 0.0,
                skipped: true,
                wall_ms: start.elapsed().as_millis(),
            });
            continue;
        }
        let pseudo = assign_pseudo_labels(&target.records, &assignment, round)?;
        let mut memory =
            init_memory(&embeddings, &assignment, cfg.memory.momentum, cfg.memory.temperature)?;
        let pseudo_labels: Vec<usize> =
            pseudo.records.iter().map(|r| r.identity.expect("pseudo label set") as usize).collect();

        let mut sampler = cfg.sampler;
        if assignment.num_groups < sampler.p {
            log::warn!(
                "round {round}: only {} groups, lowering P from {} for this round",
                assignment.num_groups,
                sampler.p
            );
            sampler.p = assignment.num_groups;
        }

        let lr = lr_at(round, &cfg.adapt_optim);
        let mut loss_sum = 0.0;
        for _ in 0..cfg.iterations_per_round {
            let batch = pk_sample(&pseudo_labels, &sampler, &mut rng)?;
            let batch_maps: Vec<FeatureMap> = batch
                .iter()
                .map(|&bi| {
                    let orig = pseudo.original_indices[bi];
                    target.map_for(&target.records[orig]).clone()
                })
                .collect();
            let groups: Vec<usize> = batch.iter().map(|&bi| pseudo_labels[bi]).collect();

            let (descs, cache) = forward_batch(&batch_maps, params)?;
            let n = descs.len();
            let mut upstream = UpstreamGrads::zeros(params, n);
            let mut queries = Matrix::zeros(n, params.embedding_dim());
            let mut batch_loss = 0.0;
            for (s, d) in descs.iter().enumerate() {
                let q = l2_normalize(&d.embedding)?;
                let (loss, grad_q) = group_contrastive(&q, &memory, groups[s])?;
                batch_loss += loss / n as f64;
                let grad_raw = l2_normalize_backward(&d.embedding, &grad_q)?;
                let scaled: Vec<f64> = grad_raw.iter().map(|g| g / n as f64).collect();
                upstream.add_embedding_grad(params, s, &scaled)?;
                queries.row_mut(s).copy_from_slice(&q);
            }

            let grads = backward(params, &cache, &upstream)?;
            sgd_update_model(params, &grads, &mut velocity, lr, &cfg.adapt_optim, false)?;
            update_memory(&mut memory, &queries, &groups)?;
            loss_sum += batch_loss;
        }

        debug_assert_eq!(memory.num_groups(), assignment.num_groups);
        reports.push(RoundReport {
            round,
            num_groups: assignment.num_groups,
            noise: assignment.noise_count(),
            mean_gcl_loss: loss_sum / cfg.iterations_per_round as f64,
            skipped: false,
            wall_ms: start.elapsed().as_millis(),
        });
        log::info!(
            "round {round}: {} groups, {} noise, mean loss {:.4}, {} ms",
            assignment.num_groups,
            reports.last().unwrap().noise,
            reports.last().unwrap().mean_gcl_loss,
            reports.last().unwrap().wall_ms
        );
    }
    Ok(reports)
}

/// Retrieval quality on the target set: every sample queries against the
/// full set, and the protocol's same-id/same-camera exclusion removes the
/// self-match. Ground-truth identities come from the generator sidecar.
pub fn evaluate_target(
    target: &Dataset,
    identities: &[u32],
    params: &ModelParams,
    cfg: &RunConfig,
    protocol: &EvalProtocol,
) -> Result<RankingResult> {
    if identities.len() != target.len() {
        return Err(Error::LengthMismatch { left: identities.len(), right: target.len() });
    }
    let feats = extract_embeddings(target, params, cfg.normalize_features)?;
    let cams: Vec<u32> = target.records.iter().map(|r| r.camera).collect();
    evaluate_retrieval(&feats, identities, &cams, &feats, identities, &cams, protocol)
}

/// Everything one variant produces.
#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub params: ModelParams,
    pub train_log: TrainLog,
    pub reports: Vec<RoundReport>,
    pub result: RankingResult,
}

/// Train on source, adapt on target (when the variant adapts), evaluate.
pub fn run_variant(
    pair: &SyntheticPair,
    cfg: &RunConfig,
    protocol: &EvalProtocol,
) -> Result<VariantOutcome> {
    cfg.validate()?;
    protocol.validate()?;
    let mut params = init_params(&pair.source, cfg)?;
    let train_log = train_source(&pair.source, &mut params, cfg)?;
    let reports =
        if cfg.variant.adapts() { adapt(&pair.target, &mut params, cfg)? } else { Vec::new() };
    let result = evaluate_target(&pair.target, &pair.target_identities, &params, cfg, protocol)?;
    Ok(VariantOutcome { params, train_log, reports, result })
}
