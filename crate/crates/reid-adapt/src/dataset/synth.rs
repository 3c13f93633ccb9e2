//! Synthetic source/target pair generator.
//!
//! Data lives in feature-map space: each sample is `base pattern + identity
//! signature + camera offset + noise`. An identity's signature places most
//! of its energy in a private row band and column band (shared full-map
//! floor for the rest), and identities come in small groups that share one
//! per-channel magnitude profile. Within such a group the per-channel maxima
//! coincide, so globally pooled features collide while stripe-pooled
//! features stay separable in both directions.
//!
//! Target maps additionally pass through a fixed random channel rotation,
//! a per-channel bias draw, and extra noise: an identity-preserving domain
//! shift. Source and target identity sets are disjoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{stripe_bounds, FeatureMap};
use crate::numerics::SeededRng;

use super::{Dataset, Domain, SampleRecord};

/// Identity-preserving target-domain corruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainShift {
    /// Scale of the random channel-mixing rotation angles.
    pub rotation_strength: f64,
    /// Standard deviation of the per-channel additive bias.
    pub bias_sigma: f64,
    /// Standard deviation of extra i.i.d. noise on target maps.
    pub extra_noise_sigma: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        Self { rotation_strength: 0.6, bias_sigma: 0.25, extra_noise_sigma: 0.12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_identities: usize,
    pub samples_per_identity: usize,
    pub cameras: usize,
    pub map_shape: [usize; 3],
    /// Overall amplitude of identity signatures.
    pub identity_signal_scale: f64,
    /// Fraction of signature energy placed in the private bands (the rest
    /// is spread uniformly over the map).
    pub part_signal_fraction: f64,
    pub noise_sigma: f64,
    pub domain_shift: DomainShift,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_identities: 40,
            samples_per_identity: 12,
            cameras: 4,
            map_shape: [32, 6, 6],
            identity_signal_scale: 1.0,
            part_signal_fraction: 0.8,
            noise_sigma: 0.08,
            domain_shift: DomainShift::default(),
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_identities < 2 {
            return fail(format!("synth.num_identities must be >= 2, got {}", self.num_identities));
        }
        if self.samples_per_identity < 2 {
            return fail(format!(
                "synth.samples_per_identity must be >= 2, got {}",
                self.samples_per_identity
            ));
        }
        if self.cameras == 0 {
            return fail("synth.cameras must be >= 1".into());
        }
        if self.map_shape.iter().any(|&d| d == 0) {
            return fail(format!("synth.map_shape must be positive, got {:?}", self.map_shape));
        }
        if !(0.0..=1.0).contains(&self.part_signal_fraction) {
            return fail(format!(
                "synth.part_signal_fraction must lie in [0, 1], got {}",
                self.part_signal_fraction
            ));
        }
        for (name, v) in [
            ("synth.identity_signal_scale", self.identity_signal_scale),
            ("synth.noise_sigma", self.noise_sigma),
            ("synth.domain_shift.rotation_strength", self.domain_shift.rotation_strength),
            ("synth.domain_shift.bias_sigma", self.domain_shift.bias_sigma),
            ("synth.domain_shift.extra_noise_sigma", self.domain_shift.extra_noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Generator output. `target_identities` holds the held-back ground-truth
/// identity per target record: evaluation-only, never visible to training.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub source: Dataset,
    pub target: Dataset,
    pub target_identities: Vec<u32>,
}

const BASE_SIGMA: f64 = 0.3;
/// Spacing of the graded camera offsets, as a fraction of the signal scale.
const CAMERA_STEP_FACTOR: f64 = 0.9;
/// Small unstructured per-camera residual on top of the graded offset.
const CAMERA_RESIDUAL_FACTOR: f64 = 0.03;
/// Signature activation probability inside and outside a domain's hot
/// channel half.
const HOT_CHANNEL_PROB: f64 = 0.5;
const COLD_CHANNEL_PROB: f64 = 0.12;
/// Per-channel multipliers on `extra_noise_sigma`: half the channels get
/// most of the extra target noise.
const NOISY_CHANNEL_WEIGHT: f64 = 1.75;
const QUIET_CHANNEL_WEIGHT: f64 = 0.25;
/// Identities per shared magnitude profile.
const PROFILE_GROUP: usize = 4;

struct IdentityTraits {
    profile: Vec<f64>,
    row_band: (usize, usize),
    col_band: (usize, usize),
}

/// Channel half a domain's identity signatures concentrate in.
#[derive(Clone, Copy, PartialEq)]
enum ChannelBias {
    LowerHalf,
    UpperHalf,
}

fn draw_profile(channels: usize, bias: ChannelBias, rng: &mut SeededRng) -> Vec<f64> {
    // Unit amplitude on the active channels keeps the identity band gaps
    // uniform across profiles, so one clustering radius fits all of them.
    // Each domain concentrates its signatures in its own half of the
    // channels: a model trained on one domain under-reads the other's hot
    // channels until it adapts.
    let mid = channels / 2;
    loop {
        let profile: Vec<f64> = (0..channels)
            .map(|c| {
                let hot = match bias {
                    ChannelBias::LowerHalf => c < mid,
                    ChannelBias::UpperHalf => c >= mid,
                };
                let p = if hot { HOT_CHANNEL_PROB } else { COLD_CHANNEL_PROB };
                if rng.uniform() < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        if profile.iter().any(|&v| v > 0.0) {
            return profile;
        }
    }
}

fn build_traits(
    count: usize,
    channels: usize,
    height: usize,
    width: usize,
    bias: ChannelBias,
    rng: &mut SeededRng,
) -> Vec<IdentityTraits> {
    let row_bands = stripe_bounds(height, 3.min(height)).expect("height >= 1");
    let col_bands = stripe_bounds(width, 3.min(width)).expect("width >= 1");
    let n_rb = row_bands.len();
    let n_cb = col_bands.len();

    let mut traits = Vec::with_capacity(count);
    let mut k = 0;
    while k < count {
        let group = PROFILE_GROUP.min(count - k);
        let profile = draw_profile(channels, bias, rng);
        // Band layout within a profile group: the first members take a
        // Latin-style diagonal (rows and columns all distinct); extra
        // members revisit a row band but never a (row, column) pair. Pairs
        // sharing a row band differ only in their column band, which is
        // exactly what horizontal partitioning exists to resolve.
        let row_perm = rng.choose_distinct(n_rb, n_rb);
        let col_perm = rng.choose_distinct(n_cb, n_cb);
        for m in 0..group {
            let wrap = m / n_rb;
            let rb = row_perm[m % n_rb];
            let cb = col_perm[(m + wrap) % n_cb];
            traits.push(IdentityTraits {
                profile: profile.clone(),
                row_band: row_bands[rb],
                col_band: col_bands[cb % n_cb],
            });
        }
        k += group;
    }
    traits
}

fn draw_map(n: usize, sigma: f64, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| sigma * rng.normal()).collect()
}

/// Camera offsets: constant maps graded along one random unit direction per
/// domain (camera k sits at `(k - mid) * step` along the axis), plus a small
/// unstructured residual. Adjacent cameras stay density-connected while the
/// extreme cameras are far apart, which is exactly the same-camera bias the
/// cross-camera evaluation protocol has to cope with.
fn camera_offsets(
    cameras: usize,
    n: usize,
    scale: f64,
    rng: &mut SeededRng,
) -> Vec<Vec<f64>> {
    let raw = draw_map(n, 1.0, rng);
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let axis: Vec<f64> = raw.iter().map(|v| v / norm).collect();
    let step = CAMERA_STEP_FACTOR * scale * (n as f64).sqrt() / 6.0;
    let mid = (cameras as f64 - 1.0) / 2.0;
    (0..cameras)
        .map(|k| {
            let along = (k as f64 - mid) * step;
            let residual_sigma = CAMERA_RESIDUAL_FACTOR * scale;
            axis.iter().map(|a| along * a + residual_sigma * rng.normal()).collect()
        })
        .collect()
}

/// Orthogonal channel-mixing matrix: a product of `2C` random Givens
/// rotations with angles scaled by `strength` (strength 0 gives identity).
fn rotation_matrix(channels: usize, strength: f64, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut r: Vec<Vec<f64>> = (0..channels)
        .map(|i| (0..channels).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    if channels < 2 {
        return r;
    }
    for _ in 0..2 * channels {
        let i = rng.index(channels);
        let j = loop {
            let j = rng.index(channels);
            if j != i {
                break j;
            }
        };
        let theta = strength * rng.uniform_in(-1.0, 1.0);
        let (sin, cos) = theta.sin_cos();
        for col in 0..channels {
            let a = r[i][col];
            let b = r[j][col];
            r[i][col] = cos * a - sin * b;
            r[j][col] = sin * a + cos * b;
        }
    }
    r
}

struct DomainInputs<'a> {
    base: &'a [f64],
    cam_offsets: &'a [Vec<f64>],
    traits: &'a [IdentityTraits],
    first_identity: u32,
    domain: Domain,
}

struct ShiftParams {
    rotation: Vec<Vec<f64>>,
    bias: Vec<f64>,
    /// Extra-noise standard deviation per channel. Anisotropic by design:
    /// a random half of the channels is much noisier than the rest, so a
    /// source-trained readout misweights the target until it re-learns
    /// which channels to trust.
    channel_noise: Vec<f64>,
}

fn gen_domain(
    cfg: &SynthConfig,
    inputs: &DomainInputs<'_>,
    shift: Option<&ShiftParams>,
    noise_rng: &mut SeededRng,
) -> (Vec<SampleRecord>, Vec<FeatureMap>, Vec<u32>) {
    let [c, h, w] = cfg.map_shape;
    let spatial = h * w;
    let in_band = cfg.part_signal_fraction * cfg.identity_signal_scale;
    let uniform = (1.0 - cfg.part_signal_fraction) * cfg.identity_signal_scale;

    let n = cfg.num_identities * cfg.samples_per_identity;
    let mut records = Vec::with_capacity(n);
    let mut maps = Vec::with_capacity(n);
    let mut identities = Vec::with_capacity(n);
    let mut sample_id = 0u32;

    for (k, traits) in inputs.traits.iter().enumerate() {
        for s in 0..cfg.samples_per_identity {
            let camera = (s % cfg.cameras) as u32;
            let mut map = vec![0.0f64; c * spatial];
            for ch in 0..c {
                let p = traits.profile[ch];
                for hh in 0..h {
                    let in_rb = hh >= traits.row_band.0 && hh < traits.row_band.1;
                    for ww in 0..w {
                        let in_cb = ww >= traits.col_band.0 && ww < traits.col_band.1;
                        let band_hits = f64::from(u8::from(in_rb)) + f64::from(u8::from(in_cb));
                        let idx = ch * spatial + hh * w + ww;
                        map[idx] = inputs.base[idx]
                            + inputs.cam_offsets[camera as usize][idx]
                            + p * (uniform + in_band * band_hits)
                            + cfg.noise_sigma * noise_rng.normal();
                    }
                }
            }

            if let Some(shift) = shift {
                let mut mixed = vec![0.0f64; c * spatial];
                for pos in 0..spatial {
                    for (ci, row) in shift.rotation.iter().enumerate() {
                        let mut acc = 0.0;
                        for (cj, coef) in row.iter().enumerate() {
                            acc += coef * map[cj * spatial + pos];
                        }
                        mixed[ci * spatial + pos] = acc + shift.bias[ci];
                    }
                }
                for ch in 0..c {
                    let sigma = shift.channel_noise[ch];
                    if sigma > 0.0 {
                        for v in &mut mixed[ch * spatial..(ch + 1) * spatial] {
                            *v += sigma * noise_rng.normal();
                        }
                    }
                }
                map = mixed;
            }

            let identity = inputs.first_identity + k as u32;
            records.push(SampleRecord {
                sample_id,
                identity: (inputs.domain == Domain::Source).then_some(identity),
                camera,
                domain: inputs.domain,
                feature_index: sample_id,
            });
            identities.push(identity);
            let values: Vec<f32> = map.iter().map(|&v| v as f32).collect();
            maps.push(FeatureMap::new(c, h, w, values).expect("consistent shape"));
            sample_id += 1;
        }
    }
    (records, maps, identities)
}

/// Generate a labeled source dataset and an unlabeled target dataset with
/// disjoint identity sets. Deterministic given `cfg.seed`.
pub fn generate_synthetic_pair(cfg: &SynthConfig) -> Result<SyntheticPair> {
    cfg.validate()?;
    let [c, h, w] = cfg.map_shape;
    let spatial = h * w;

    let root = SeededRng::new(cfg.seed);
    let mut structure = root.child(1);
    let mut source_noise = root.child(2);
    let mut target_noise = root.child(3);

    let base = draw_map(c * spatial, BASE_SIGMA, &mut structure);
    let source_cams = camera_offsets(cfg.cameras, c * spatial, cfg.identity_signal_scale, &mut structure);
    let target_cams = camera_offsets(cfg.cameras, c * spatial, cfg.identity_signal_scale, &mut structure);
    let source_traits =
        build_traits(cfg.num_identities, c, h, w, ChannelBias::LowerHalf, &mut structure);
    let target_traits =
        build_traits(cfg.num_identities, c, h, w, ChannelBias::UpperHalf, &mut structure);
    let shift = ShiftParams {
        rotation: rotation_matrix(c, cfg.domain_shift.rotation_strength, &mut structure),
        bias: draw_map(c, cfg.domain_shift.bias_sigma, &mut structure),
        channel_noise: (0..c)
            .map(|_| {
                let weight = if structure.uniform() < 0.5 { NOISY_CHANNEL_WEIGHT } else { QUIET_CHANNEL_WEIGHT };
                cfg.domain_shift.extra_noise_sigma * weight
            })
            .collect(),
    };

    let (source_records, source_maps, _) = gen_domain(
        cfg,
        &DomainInputs {
            base: &base,
            cam_offsets: &source_cams,
            traits: &source_traits,
            first_identity: 0,
            domain: Domain::Source,
        },
        None,
        &mut source_noise,
    );
    let (target_records, target_maps, target_identities) = gen_domain(
        cfg,
        &DomainInputs {
            base: &base,
            cam_offsets: &target_cams,
            traits: &target_traits,
            first_identity: cfg.num_identities as u32,
            domain: Domain::Target,
        },
        Some(&shift),
        &mut target_noise,
    );

    Ok(SyntheticPair {
        source: Dataset { records: source_records, maps: source_maps },
        target: Dataset { records: target_records, maps: target_maps },
        target_identities,
    })
}
