//! Batch construction and parameter updates: the P x K identity sampler,
//! the warm-up/step-decay learning-rate schedule, and SGD with classic
//! momentum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// P identities per batch, K instances per identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub p: usize,
    pub k: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { p: 8, k: 4 }
    }
}

impl SamplerConfig {
    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.k < 2 {
            return Err(Error::InvalidConfig(format!(
                "sampler.p and sampler.k must be >= 2, got p={} k={}",
                self.p, self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-2,
            momentum: 0.9,
            weight_decay: 5e-4,
            warmup_epochs: 10,
            decay_epochs: vec![40, 70],
            decay_factor: 0.1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidConfig(format!("{prefix}.lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "{prefix}.momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "{prefix}.weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "{prefix}.decay_factor must lie in (0, 1), got {}",
                self.decay_factor
            )));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "{prefix}.decay_epochs must be strictly increasing, got {:?}",
                self.decay_epochs
            )));
        }
        Ok(())
    }
}

/// Draw a P x K batch: P distinct labels uniformly without replacement, then
/// K instances per label (without replacement when the label has at least K
/// instances, with replacement otherwise). Output is label-major.
pub fn pk_sample(labels: &[usize], cfg: &SamplerConfig, rng: &mut SeededRng) -> Result<Vec<usize>> {
    let mut unique: Vec<usize> = labels.to_vec();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() < cfg.p {
        return Err(Error::NotEnoughIdentities { requested: cfg.p, available: unique.len() });
    }
    let chosen = rng.choose_distinct(unique.len(), cfg.p);
    let mut batch = Vec::with_capacity(cfg.batch_size());
    for pick in chosen {
        let label = unique[pick];
        let instances: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if instances.len() >= cfg.k {
            for idx in rng.choose_distinct(instances.len(), cfg.k) {
                batch.push(instances[idx]);
            }
        } else {
            for _ in 0..cfg.k {
                batch.push(instances[rng.index(instances.len())]);
            }
        }
    }
    Ok(batch)
}

/// Learning rate at an epoch: linear warm-up from `lr0 / 10` at epoch 0 to
/// `lr0` at `warmup_epochs`, then stepped decay at each milestone.
pub fn lr_at(epoch: usize, cfg: &OptimConfig) -> f64 {
    if epoch < cfg.warmup_epochs {
        let t = epoch as f64 / cfg.warmup_epochs as f64;
        return cfg.lr0 * (0.1 + 0.9 * t);
    }
    let decays = cfg.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.lr0 * cfg.decay_factor.powi(decays as i32)
}

/// One SGD step with classic momentum on a flat tensor:
/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`.
pub fn sgd_step(
    param: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(Error::ShapeMismatch(format!(
            "sgd buffers disagree: param {}, grad {}, velocity {}",
            param.len(),
            grad.len(),
            velocity.len()
        )));
    }
    for i in 0..param.len() {
        velocity[i] = cfg.momentum * velocity[i] + grad[i] + cfg.weight_decay * param[i];
        param[i] -= lr * velocity[i];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(lr0: f64, momentum: f64) -> OptimConfig {
        OptimConfig {
            lr0,
            momentum,
            weight_decay: 0.0,
            warmup_epochs: 0,
            decay_epochs: vec![],
            decay_factor: 0.1,
        }
    }

    #[test]
    fn pk_sample_covers_exactly_p_labels_k_times() {
        let labels = [0usize, 0, 1, 1, 2];
        let cfg = SamplerConfig { p: 2, k: 2 };
        let mut rng = SeededRng::new(1);
        let batch = pk_sample(&labels, &cfg, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        let mut by_label = std::collections::BTreeMap::new();
        for &i in &batch {
            *by_label.entry(labels[i]).or_insert(0usize) += 1;
        }
        assert_eq!(by_label.len(), 2);
        assert!(by_label.values().all(|&c| c == 2));
        // Label-major: first K entries share a label.
        assert_eq!(labels[batch[0]], labels[batch[1]]);
        assert_eq!(labels[batch[2]], labels[batch[3]]);
    }

    #[test]
    fn pk_sample_repeats_scarce_label() {
        let labels = [0usize, 0, 0, 0, 1];
        let cfg = SamplerConfig { p: 2, k: 4 };
        let mut rng = SeededRng::new(2);
        let batch = pk_sample(&labels, &cfg, &mut rng).unwrap();
        let ones = batch.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(ones, 4);
        assert!(batch.iter().filter(|&&i| labels[i] == 1).all(|&i| i == 4));
    }

    #[test]
    fn pk_sample_needs_enough_identities() {
        let labels = [0usize, 1, 2];
        let cfg = SamplerConfig { p: 5, k: 2 };
        let mut rng = SeededRng::new(3);
        assert!(matches!(
            pk_sample(&labels, &cfg, &mut rng),
            Err(Error::NotEnoughIdentities { requested: 5, available: 3 })
        ));
    }

    #[test]
    fn pk_sample_reproducible_and_roughly_uniform() {
        let labels: Vec<usize> = (0..50).map(|i| i % 10).collect();
        let cfg = SamplerConfig { p: 4, k: 2 };
        let a: Vec<usize> = {
            let mut rng = SeededRng::new(7);
            pk_sample(&labels, &cfg, &mut rng).unwrap()
        };
        let b: Vec<usize> = {
            let mut rng = SeededRng::new(7);
            pk_sample(&labels, &cfg, &mut rng).unwrap()
        };
        assert_eq!(a, b);

        // Each of the 10 labels is drawn with probability p/10 per batch;
        // counts over many draws stay within 3 sigma of the binomial mean.
        let mut rng = SeededRng::new(8);
        let draws = 10_000;
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            let batch = pk_sample(&labels, &cfg, &mut rng).unwrap();
            let mut seen = std::collections::BTreeSet::new();
            for &i in &batch {
                seen.insert(labels[i]);
            }
            for l in seen {
                counts[l] += 1;
            }
        }
        let p = cfg.p as f64 / 10.0;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (label, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() <= 3.0 * sigma,
                "label {label} drawn {c} times, expected {mean:.0} +/- {:.0}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn lr_schedule_matches_contract() {
        let cfg = OptimConfig::default();
        assert!((lr_at(0, &cfg) - 1e-3).abs() < 1e-15);
        assert!((lr_at(10, &cfg) - 1e-2).abs() < 1e-15);
        assert!((lr_at(41, &cfg) - 1e-3).abs() < 1e-15);
        assert!((lr_at(75, &cfg) - 1e-4).abs() < 1e-15);
        for e in 11..100 {
            assert!(lr_at(e, &cfg) <= lr_at(e - 1, &cfg) + 1e-18);
        }
    }

    #[test]
    fn sgd_vanilla_reduces_to_plain_step() {
        let cfg = plain(0.1, 0.0);
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0, 0.0];
        sgd_step(&mut p, &[0.5, -1.0], &mut v, 0.1, &cfg).unwrap();
        assert!((p[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
        assert!((p[1] - (-2.0 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_grad_zero_velocity_is_fixed_point() {
        let cfg = plain(0.1, 0.9);
        let mut p = vec![3.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[0.0], &mut v, 0.1, &cfg).unwrap();
        assert_eq!(p, vec![3.0]);
    }

    #[test]
    fn sgd_two_steps_constant_grad_displacement() {
        let mu = 0.7;
        let g = 0.3;
        let lr = 0.05;
        let cfg = plain(lr, mu);
        let mut p = vec![0.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[g], &mut v, lr, &cfg).unwrap();
        sgd_step(&mut p, &[g], &mut v, lr, &cfg).unwrap();
        let expect = -lr * g * (2.0 + mu);
        assert!((p[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn sgd_shape_mismatch_detected() {
        let cfg = plain(0.1, 0.0);
        let mut p = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        assert!(matches!(
            sgd_step(&mut p, &[1.0], &mut v, 0.1, &cfg),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn sgd_descends_convex_quadratic_after_warmup() {
        // f(x) = 0.5 * x^T diag(1, 4) x with a step small enough that
        // momentum does not overshoot.
        let cfg = plain(0.05, 0.3);
        let mut x = vec![3.0, -2.0];
        let mut v = vec![0.0, 0.0];
        let f = |x: &[f64]| 0.5 * (x[0] * x[0] + 4.0 * x[1] * x[1]);
        let mut prev = f(&x);
        for _ in 0..120 {
            let grad = vec![x[0], 4.0 * x[1]];
            sgd_step(&mut x, &grad, &mut v, 0.05, &cfg).unwrap();
            let cur = f(&x);
            assert!(cur <= prev + 1e-12, "loss rose: {prev} -> {cur}");
            prev = cur;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn optim_config_validation() {
        let mut cfg = OptimConfig::default();
        cfg.decay_epochs = vec![40, 40];
        assert!(cfg.validate("optim").is_err());
        let mut cfg = OptimConfig::default();
        cfg.momentum = 1.0;
        assert!(cfg.validate("optim").is_err());
        assert!(OptimConfig::default().validate("optim").is_ok());
    }
}
