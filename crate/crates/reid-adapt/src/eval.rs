//! Retrieval evaluation: camera-aware ranking with CMC at chosen ranks and
//! mean average precision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{pairwise_with_metric, pairwise_with_metric_seq, DistanceMetric, Matrix};
use crate::parallel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalProtocol {
    /// Drop gallery entries sharing both identity and camera with the query
    /// (the usual cross-camera protocol; disable for gallery sets without
    /// camera structure).
    pub exclude_same_camera_same_id: bool,
    pub ranks: Vec<usize>,
    pub metric: DistanceMetric,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            exclude_same_camera_same_id: true,
            ranks: vec![1, 5, 10],
            metric: DistanceMetric::CosineDistance,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.ranks.is_empty() {
            return Err(Error::InvalidConfig("eval.ranks must not be empty".into()));
        }
        if self.ranks[0] == 0 || self.ranks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "eval.ranks must be positive and ascending, got {:?}",
                self.ranks
            )));
        }
        Ok(())
    }
}

/// Retrieval quality over the valid queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    #[serde(rename = "mAP")]
    pub map: f64,
    pub cmc: BTreeMap<usize, f64>,
    pub num_valid_queries: usize,
}

impl RankingResult {
    pub fn rank1(&self) -> f64 {
        self.cmc.get(&1).copied().unwrap_or(0.0)
    }
}

struct QueryOutcome {
    ap: f64,
    first_hit_rank: usize,
}

fn query_outcome(
    distances: &[f64],
    query_id: u32,
    query_cam: u32,
    gallery_ids: &[u32],
    gallery_cams: &[u32],
    protocol: &EvalProtocol,
) -> Option<QueryOutcome> {
    // Keep valid gallery entries, sort by distance with index tie-break.
    let mut order: Vec<usize> = (0..gallery_ids.len())
        .filter(|&j| {
            !(protocol.exclude_same_camera_same_id
                && gallery_ids[j] == query_id
                && gallery_cams[j] == query_cam)
        })
        .collect();
    order.sort_by(|&a, &b| {
        distances[a].partial_cmp(&distances[b]).expect("finite distances").then(a.cmp(&b))
    });

    let total_relevant = order.iter().filter(|&&j| gallery_ids[j] == query_id).count();
    if total_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    let mut first_hit_rank = 0usize;
    for (rank0, &j) in order.iter().enumerate() {
        if gallery_ids[j] == query_id {
            hits += 1;
            precision_sum += hits as f64 / (rank0 + 1) as f64;
            if hits == 1 {
                first_hit_rank = rank0 + 1;
            }
        }
    }
    Some(QueryOutcome { ap: precision_sum / total_relevant as f64, first_hit_rank })
}

fn check_eval_inputs(
    query_feats: &Matrix,
    query_ids: &[u32],
    query_cams: &[u32],
    gallery_feats: &Matrix,
    gallery_ids: &[u32],
    gallery_cams: &[u32],
) -> Result<()> {
    if query_feats.cols() != gallery_feats.cols() {
        return Err(Error::DimensionMismatch {
            left: query_feats.cols(),
            right: gallery_feats.cols(),
        });
    }
    for (len, expect) in [
        (query_ids.len(), query_feats.rows()),
        (query_cams.len(), query_feats.rows()),
        (gallery_ids.len(), gallery_feats.rows()),
        (gallery_cams.len(), gallery_feats.rows()),
    ] {
        if len != expect {
            return Err(Error::LengthMismatch { left: len, right: expect });
        }
    }
    Ok(())
}

fn aggregate(
    outcomes: Vec<Option<QueryOutcome>>,
    protocol: &EvalProtocol,
) -> Result<RankingResult> {
    let valid: Vec<QueryOutcome> = outcomes.into_iter().flatten().collect();
    if valid.is_empty() {
        return Err(Error::NoValidQueries);
    }
    let n = valid.len() as f64;
    let map = valid.iter().map(|o| o.ap).sum::<f64>() / n;
    let mut cmc = BTreeMap::new();
    for &r in &protocol.ranks {
        let hits = valid.iter().filter(|o| o.first_hit_rank <= r).count();
        cmc.insert(r, hits as f64 / n);
    }
    Ok(RankingResult { map, cmc, num_valid_queries: valid.len() })
}

/// Rank the gallery for every query and aggregate AP/CMC. Queries with no
/// valid positive under the protocol are skipped and excluded from
/// `num_valid_queries`.
pub fn evaluate_retrieval(
    query_feats: &Matrix,
    query_ids: &[u32],
    query_cams: &[u32],
    gallery_feats: &Matrix,
    gallery_ids: &[u32],
    gallery_cams: &[u32],
    protocol: &EvalProtocol,
) -> Result<RankingResult> {
    protocol.validate()?;
    check_eval_inputs(query_feats, query_ids, query_cams, gallery_feats, gallery_ids, gallery_cams)?;
    let dist = pairwise_with_metric(query_feats, gallery_feats, protocol.metric)?;
    let outcomes = parallel::map_indexed(query_feats.rows(), |i| {
        query_outcome(dist.row(i), query_ids[i], query_cams[i], gallery_ids, gallery_cams, protocol)
    });
    aggregate(outcomes, protocol)
}

/// Single-threaded twin of [`evaluate_retrieval`].
pub fn evaluate_retrieval_seq(
    query_feats: &Matrix,
    query_ids: &[u32],
    query_cams: &[u32],
    gallery_feats: &Matrix,
    gallery_ids: &[u32],
    gallery_cams: &[u32],
    protocol: &EvalProtocol,
) -> Result<RankingResult> {
    protocol.validate()?;
    check_eval_inputs(query_feats, query_ids, query_cams, gallery_feats, gallery_ids, gallery_cams)?;
    let dist = pairwise_with_metric_seq(query_feats, gallery_feats, protocol.metric)?;
    let outcomes = parallel::map_indexed_seq(query_feats.rows(), |i| {
        query_outcome(dist.row(i), query_ids[i], query_cams[i], gallery_ids, gallery_cams, protocol)
    });
    aggregate(outcomes, protocol)
}
