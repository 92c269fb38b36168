//! One training run end to end: load the dataset, build the model,
//! write the manifest, train (or resume), and leave a summary sidecar
//! so later invocations can skip completed work.

use std::path::{Path, PathBuf};
use std::time::Instant;

use maskaae::metrics::MetricsRecord;
use maskaae::net::{MlpConfig, ModelBundle, Variant};
use maskaae::synthetic::Dataset;
use maskaae::train::{checkpoint_load, resume, train, RunContext, TrainConfig};
use maskaae::{MaaeError, Result};
use serde::{Deserialize, Serialize};

use crate::config::{NetShape, ResolvedConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub final_record: MetricsRecord,
    pub lambda3: f64,
    pub wall_seconds: f64,
    /// True when this invocation skipped training because artifacts
    /// were already complete.
    pub reused: bool,
}

pub struct RunPlan {
    pub cfg: TrainConfig,
    pub net: NetShape,
    pub m: usize,
    pub run_dir: PathBuf,
    pub preset_name: String,
    pub data_path: PathBuf,
}

impl RunPlan {
    pub fn from_resolved(
        rc: &ResolvedConfig,
        m: usize,
        variant: Variant,
        seed: u64,
        run_dir: PathBuf,
        data_path: PathBuf,
    ) -> RunPlan {
        RunPlan {
            cfg: rc.train_config(m, variant, seed),
            net: rc.net,
            m,
            run_dir,
            preset_name: rc.preset.clone(),
            data_path,
        }
    }

    pub fn network_configs(&self, d: usize) -> (MlpConfig, MlpConfig, MlpConfig) {
        (
            MlpConfig::stack(d, self.net.width, self.net.depth, self.m),
            MlpConfig::stack(self.m, self.net.width, self.net.depth, d),
            MlpConfig::stack(self.m, self.net.width, self.net.depth, 1),
        )
    }

    pub fn manifest(&self, dataset: &Dataset, d: usize) -> serde_json::Value {
        let (enc, dec, disc) = self.network_configs(d);
        serde_json::json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "preset": self.preset_name,
            "m": self.m,
            "net": self.net,
            "networks": { "encoder": enc, "decoder": dec, "discriminator": disc },
            "train": self.cfg,
            "dataset": {
                "path": self.data_path,
                "fingerprint": dataset.spec_fingerprint,
                "count": dataset.count,
                "d": d,
            },
        })
    }
}

fn final_ckpt(run_dir: &Path, steps: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("step_{steps}.ckpt"))
}

#[derive(Serialize, Deserialize)]
struct Timing {
    wall_seconds: f64,
}

/// A run is complete when the manifest, a final checkpoint and a
/// non-empty metrics log are all present.
pub fn completed_summary(run_dir: &Path, steps: u64) -> Option<RunSummary> {
    if !run_dir.join("manifest.json").exists() || !final_ckpt(run_dir, steps).exists() {
        return None;
    }
    let metrics = std::fs::read_to_string(run_dir.join("metrics.jsonl")).ok()?;
    let last = metrics.lines().rev().find(|l| !l.trim().is_empty())?;
    let record: MetricsRecord = serde_json::from_str(last).ok()?;
    if record.step != steps {
        return None;
    }
    let wall = std::fs::read_to_string(run_dir.join("timing.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<Timing>(&t).ok())
        .map(|t| t.wall_seconds)
        .unwrap_or(0.0);
    let lambda3 = checkpoint_load(&final_ckpt(run_dir, steps)).ok()?.lambda3;
    Some(RunSummary {
        run_dir: run_dir.to_path_buf(),
        final_record: record,
        lambda3,
        wall_seconds: wall,
        reused: true,
    })
}

/// Newest checkpoint in the run dir, if any.
fn latest_checkpoint(run_dir: &Path) -> Option<(u64, PathBuf)> {
    let dir = run_dir.join("checkpoints");
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in std::fs::read_dir(dir).ok()? {
        let path = entry.ok()?.path();
        let name = path.file_name()?.to_str()?;
        let step: u64 = name.strip_prefix("step_")?.strip_suffix(".ckpt")?.parse().ok()?;
        if best.as_ref().map(|(s, _)| step > *s).unwrap_or(true) {
            best = Some((step, path));
        }
    }
    best
}

/// A run directory may only be reused or resumed by the configuration
/// that produced it. Compares the sections that determine the math —
/// train (minus the step budget, so runs can be extended), net, and the
/// dataset fingerprint — and rejects mismatches so a changed config
/// can't silently graft new training onto an old run's checkpoints.
fn ensure_dir_matches(plan_manifest: &serde_json::Value, run_dir: &Path) -> Result<()> {
    let mut on_disk: serde_json::Value = match std::fs::read_to_string(run_dir.join("manifest.json"))
    {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| MaaeError::Format(format!("{}: manifest: {e}", run_dir.display())))?,
        Err(_) if latest_checkpoint(run_dir).is_some() => {
            return Err(MaaeError::invalid(format!(
                "{}: has checkpoints but no readable manifest — delete the \
                 directory or pick another run name",
                run_dir.display()
            )));
        }
        Err(_) => return Ok(()),
    };
    let mut wanted = plan_manifest.clone();
    for v in [&mut on_disk, &mut wanted] {
        if let Some(train) = v.get_mut("train").and_then(|t| t.as_object_mut()) {
            train.remove("training_steps");
        }
    }
    for probe in [&["train"][..], &["net"], &["dataset", "fingerprint"]] {
        let got = probe.iter().fold(&on_disk, |v, k| &v[*k]);
        let want = probe.iter().fold(&wanted, |v, k| &v[*k]);
        if got != want {
            return Err(MaaeError::invalid(format!(
                "{}: existing run used a different `{}` configuration — delete \
                 the directory or pick another run name",
                run_dir.display(),
                probe.join(".")
            )));
        }
    }
    Ok(())
}

/// Execute the plan. `allow_resume` continues from the newest checkpoint
/// when one exists below the target step count; completed runs are
/// always reused as-is.
pub fn execute(plan: &RunPlan, dataset: &Dataset, allow_resume: bool) -> Result<RunSummary> {
    let steps = plan.cfg.training_steps;
    let d = dataset.samples.ncols();
    ensure_dir_matches(&plan.manifest(dataset, d), &plan.run_dir)?;
    if let Some(done) = completed_summary(&plan.run_dir, steps) {
        log::info!("{}: already complete, skipping", plan.run_dir.display());
        return Ok(done);
    }
    let (enc, dec, disc) = plan.network_configs(d);
    let start = Instant::now();

    let outcome = match latest_checkpoint(&plan.run_dir) {
        Some((step, path)) if allow_resume && step < steps => {
            let ckpt = checkpoint_load(&path)?;
            let run = RunContext {
                dir: plan.run_dir.clone(),
                manifest: plan.manifest(dataset, d),
                append: true,
            };
            log::info!("resuming {} from step {step}", plan.run_dir.display());
            resume(&plan.cfg, dataset, ckpt, Some(&run))?
        }
        _ => {
            let bundle = ModelBundle::init(
                enc,
                dec,
                disc,
                plan.cfg.mask_a,
                plan.cfg.variant,
                plan.cfg.seed,
            )?;
            let run = RunContext {
                dir: plan.run_dir.clone(),
                manifest: plan.manifest(dataset, d),
                append: false,
            };
            train(&plan.cfg, dataset, bundle, Some(&run))?
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let final_record = outcome
        .trace
        .last()
        .cloned()
        .ok_or_else(|| MaaeError::State("run produced no metrics records".into()))?;
    std::fs::write(
        plan.run_dir.join("timing.json"),
        serde_json::to_string_pretty(&Timing { wall_seconds: wall })?,
    )?;
    Ok(RunSummary {
        run_dir: plan.run_dir.clone(),
        final_record,
        lambda3: outcome.lambda3,
        wall_seconds: wall,
        reused: false,
    })
}

/// Variant and m as recorded in a run's manifest, plus the eval config —
/// what table builders need from completed runs.
#[derive(Debug, Clone, Deserialize)]
pub struct ManifestPeek {
    pub m: usize,
    pub train: TrainConfig,
}

pub fn read_manifest(run_dir: &Path) -> Result<ManifestPeek> {
    let text = std::fs::read_to_string(run_dir.join("manifest.json"))?;
    serde_json::from_str(&text).map_err(|e| {
        MaaeError::Format(format!("{}: manifest: {e}", run_dir.display()))
    })
}

pub fn read_final_record(run_dir: &Path) -> Result<MetricsRecord> {
    let metrics = std::fs::read_to_string(run_dir.join("metrics.jsonl"))?;
    let last = metrics
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| MaaeError::State(format!("{}: empty metrics log", run_dir.display())))?;
    serde_json::from_str(last).map_err(|e| MaaeError::Format(format!("metrics.jsonl: {e}")))
}
