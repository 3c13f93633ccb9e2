//! Command implementations behind the binary: config loading with dotted
//! overrides, and one function per subcommand. Every command validates its
//! config before any work starts and writes the resolved config next to its
//! artifacts so a run can be reproduced from its output directory alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::dbscan;
use crate::dataset::{generate_synthetic_pair, Dataset, SynthConfig, SyntheticPair};
use crate::eval::{evaluate_retrieval, EvalProtocol, RankingResult};
use crate::model::{read_checkpoint, write_checkpoint, ModelParams};
use crate::pipeline::{
    adapt, extract_embeddings, init_params, run_variant, train_source, RunConfig, Variant,
};

/// The whole run configuration: pipeline fields at the top level, the
/// synthetic-data and evaluation sections nested.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FullConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    pub synth: SynthConfig,
    pub eval: EvalProtocol,
}

impl FullConfig {
    pub fn validate(&self) -> crate::Result<()> {
        self.run.validate()?;
        self.synth.validate()?;
        self.eval.validate()?;
        Ok(())
    }
}

/// Failures split by exit code: 1 for configuration problems, 2 for
/// runtime errors.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn validation<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Apply one `key.path=value` override to a resolved config value. The key
/// must already exist (the base is the fully-explicit resolved config), so
/// typos are rejected by name.
fn apply_override(root: &mut serde_json::Value, spec: &str) -> CliResult<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override '{spec}' is not KEY=VALUE")))?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = &mut *root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let map = cursor.as_object_mut().ok_or_else(|| {
            CliError::Validation(format!("config key '{}' is not a section", segments[..i].join(".")))
        })?;
        let entry = map
            .get_mut(*seg)
            .ok_or_else(|| CliError::Validation(format!("unknown config key '{path}' (at '{seg}')")))?;
        if i + 1 == segments.len() {
            *entry = value;
            return Ok(());
        }
        cursor = entry;
    }
    unreachable!("loop returns on the last segment")
}

/// Load the config file (or defaults), apply dotted overrides, validate.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<FullConfig> {
    let base: FullConfig = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?;
            typed_config(value)?
        }
        None => FullConfig::default(),
    };
    // Re-serialize so every key exists before overrides are resolved.
    let mut resolved = serde_json::to_value(&base).expect("config serializes");
    for spec in overrides {
        apply_override(&mut resolved, spec)?;
    }
    let cfg = typed_config(resolved)?;
    cfg.validate().map_err(validation)?;
    Ok(cfg)
}

fn typed_config(value: serde_json::Value) -> CliResult<FullConfig> {
    let mut track = serde_path_to_error::Track::new();
    let de = serde_path_to_error::Deserializer::new(&value, &mut track);
    FullConfig::deserialize(de)
        .map_err(|e| CliError::Validation(format!("config key '{}': {e}", track.path())))
}

fn write_resolved_config(cfg: &FullConfig, out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(runtime)?;
    let json = serde_json::to_string_pretty(cfg).expect("config serializes");
    std::fs::write(out.join("resolved_config.json"), json).map_err(runtime)?;
    Ok(())
}

/// Ground-truth identities for the target split, written by `synth` and
/// consumed by `eval`. Evaluation-only: adaptation never reads this.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetLabels {
    pub sample_ids: Vec<u32>,
    pub identities: Vec<u32>,
}

impl TargetLabels {
    fn from_pair(pair: &SyntheticPair) -> Self {
        Self {
            sample_ids: pair.target.records.iter().map(|r| r.sample_id).collect(),
            identities: pair.target_identities.clone(),
        }
    }

    /// Identities aligned to the given record order.
    pub fn aligned_to(&self, ds: &Dataset) -> CliResult<Vec<u32>> {
        let lookup: std::collections::BTreeMap<u32, u32> = self
            .sample_ids
            .iter()
            .copied()
            .zip(self.identities.iter().copied())
            .collect();
        ds.records
            .iter()
            .map(|r| {
                lookup.get(&r.sample_id).copied().ok_or_else(|| {
                    CliError::Runtime(format!("labels file is missing sample_id {}", r.sample_id))
                })
            })
            .collect()
    }
}

fn save_pair(pair: &SyntheticPair, out: &Path) -> CliResult<()> {
    pair.source.save(out, "source").map_err(runtime)?;
    pair.target.save(out, "target").map_err(runtime)?;
    let labels = TargetLabels::from_pair(pair);
    let json = serde_json::to_string_pretty(&labels).expect("labels serialize");
    std::fs::write(out.join("target_labels.json"), json).map_err(runtime)?;
    Ok(())
}

/// `synth`: generate and write the dataset pair plus the evaluation sidecar.
pub fn cmd_synth(cfg: &FullConfig, out: &Path) -> CliResult<()> {
    write_resolved_config(cfg, out)?;
    let pair = generate_synthetic_pair(&cfg.synth).map_err(runtime)?;
    save_pair(&pair, out)?;
    println!(
        "wrote {} source and {} target samples under {}",
        pair.source.len(),
        pair.target.len(),
        out.display()
    );
    Ok(())
}

/// `train-source`: supervised stage on a labeled manifest.
pub fn cmd_train_source(cfg: &FullConfig, manifest: &Path, out: &Path) -> CliResult<()> {
    write_resolved_config(cfg, out)?;
    let source = Dataset::load(manifest).map_err(runtime)?;
    let mut params = init_params(&source, &cfg.run).map_err(runtime)?;
    let log = train_source(&source, &mut params, &cfg.run).map_err(runtime)?;
    write_checkpoint(&params, &out.join("params_source.bin")).map_err(runtime)?;
    std::fs::write(
        out.join("train_log.json"),
        serde_json::to_string_pretty(&log).expect("log serializes"),
    )
    .map_err(runtime)?;
    println!(
        "trained {} epochs; final mean loss {:.4}; checkpoint at {}",
        log.epoch_mean.len(),
        log.epoch_mean.last().copied().unwrap_or(f64::NAN),
        out.join("params_source.bin").display()
    );
    Ok(())
}

/// `adapt`: unsupervised stage on an unlabeled target manifest.
pub fn cmd_adapt(cfg: &FullConfig, manifest: &Path, params_path: &Path, out: &Path) -> CliResult<()> {
    write_resolved_config(cfg, out)?;
    let target = Dataset::load(manifest).map_err(runtime)?;
    let mut params = read_checkpoint(params_path).map_err(runtime)?;
    let reports = adapt(&target, &mut params, &cfg.run).map_err(runtime)?;
    write_checkpoint(&params, &out.join("params_adapted.bin")).map_err(runtime)?;
    let mut lines = String::new();
    for r in &reports {
        lines.push_str(&serde_json::to_string(r).expect("report serializes"));
        lines.push('\n');
    }
    std::fs::write(out.join("rounds.jsonl"), lines).map_err(runtime)?;
    println!("adapted over {} rounds; checkpoint at {}", reports.len(), out.display());
    Ok(())
}

/// `cluster`: one clustering pass over target embeddings, reported as JSON.
pub fn cmd_cluster(cfg: &FullConfig, manifest: &Path, params_path: &Path, out: &Path) -> CliResult<()> {
    write_resolved_config(cfg, out)?;
    let target = Dataset::load(manifest).map_err(runtime)?;
    let params = read_checkpoint(params_path).map_err(runtime)?;
    let embeddings =
        extract_embeddings(&target, &params, cfg.run.normalize_features).map_err(runtime)?;
    let assignment = dbscan(&embeddings, &cfg.run.clustering).map_err(runtime)?;
    let report = serde_json::json!({
        "num_groups": assignment.num_groups,
        "noise": assignment.noise_count(),
        "group_sizes": assignment.group_sizes(),
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(out.join("cluster_report.json"), &text).map_err(runtime)?;
    println!("{text}");
    Ok(())
}

fn self_retrieval(
    ds: &Dataset,
    identities: &[u32],
    params: &ModelParams,
    cfg: &FullConfig,
) -> CliResult<RankingResult> {
    let feats = extract_embeddings(ds, params, cfg.run.normalize_features).map_err(runtime)?;
    let cams: Vec<u32> = ds.records.iter().map(|r| r.camera).collect();
    evaluate_retrieval(&feats, identities, &cams, &feats, identities, &cams, &cfg.eval)
        .map_err(runtime)
}

/// `eval`: retrieval metrics on a manifest, with ground truth from the
/// labels sidecar (target) or the manifest itself (source).
pub fn cmd_eval(
    cfg: &FullConfig,
    manifest: &Path,
    labels: Option<&Path>,
    params_path: &Path,
    out: &Path,
) -> CliResult<()> {
    write_resolved_config(cfg, out)?;
    let ds = Dataset::load(manifest).map_err(runtime)?;
    let params = read_checkpoint(params_path).map_err(runtime)?;
    let identities: Vec<u32> = match labels {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(runtime)?;
            let labels: TargetLabels = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("labels {}: {e}", path.display())))?;
            labels.aligned_to(&ds)?
        }
        None => ds
            .records
            .iter()
            .map(|r| {
                r.identity.ok_or_else(|| {
                    CliError::Validation(format!(
                        "sample {} is unlabeled; pass --labels for target manifests",
                        r.sample_id
                    ))
                })
            })
            .collect::<CliResult<Vec<u32>>>()?,
    };
    let result = self_retrieval(&ds, &identities, &params, cfg)?;
    let text = serde_json::to_string_pretty(&result).expect("result serializes");
    std::fs::write(out.join("eval.json"), &text).map_err(runtime)?;
    println!("{text}");
    Ok(())
}

/// `run-all`: synth, train, adapt, evaluate; the report file holds one
/// round report per line and the final ranking result on the last line.
pub fn cmd_run_all(cfg: &FullConfig, out: &Path) -> CliResult<()> {
    write_resolved_config(cfg, out)?;
    let pair = generate_synthetic_pair(&cfg.synth).map_err(runtime)?;
    save_pair(&pair, out)?;
    let outcome = run_variant(&pair, &cfg.run, &cfg.eval).map_err(runtime)?;
    write_checkpoint(&outcome.params, &out.join("params_final.bin")).map_err(runtime)?;
    std::fs::write(
        out.join("train_log.json"),
        serde_json::to_string_pretty(&outcome.train_log).expect("log serializes"),
    )
    .map_err(runtime)?;
    let mut lines = String::new();
    for r in &outcome.reports {
        lines.push_str(&serde_json::to_string(r).expect("report serializes"));
        lines.push('\n');
    }
    lines.push_str(&serde_json::to_string(&outcome.result).expect("result serializes"));
    lines.push('\n');
    std::fs::write(out.join("report.jsonl"), lines).map_err(runtime)?;
    println!("{}", serde_json::to_string_pretty(&outcome.result).expect("result serializes"));
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub rank1: f64,
}

/// `ablation`: run every variant under a shared seed and emit the
/// comparison table as JSON and plain text.
pub fn cmd_ablation(cfg: &FullConfig, out: &Path) -> CliResult<()> {
    write_resolved_config(cfg, out)?;
    let pair = generate_synthetic_pair(&cfg.synth).map_err(runtime)?;
    save_pair(&pair, out)?;
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let mut run = cfg.run.clone();
        run.variant = variant;
        let outcome = run_variant(&pair, &run, &cfg.eval).map_err(runtime)?;
        log::info!(
            "ablation {}: mAP {:.4}, rank1 {:.4}",
            variant.name(),
            outcome.result.map,
            outcome.result.rank1()
        );
        rows.push(AblationRow {
            variant: variant.name().to_string(),
            map: outcome.result.map,
            rank1: outcome.result.rank1(),
        });
    }
    let json = serde_json::to_string_pretty(&serde_json::json!({ "rows": rows }))
        .expect("table serializes");
    std::fs::write(out.join("ablation.json"), &json).map_err(runtime)?;

    let mut table = format!("{:<12} {:>8} {:>8}\n", "variant", "mAP", "rank1");
    for row in &rows {
        table.push_str(&format!("{:<12} {:>8.4} {:>8.4}\n", row.variant, row.map, row.rank1));
    }
    std::fs::write(out.join("ablation.txt"), &table).map_err(runtime)?;
    print!("{table}");
    Ok(())
}
