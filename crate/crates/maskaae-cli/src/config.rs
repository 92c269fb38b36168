//! Resolved run configuration: preset defaults, optional TOML file, then
//! command-line flags, each layer overriding the one below. Every run
//! writes the fully resolved result into its manifest before training.

use std::path::Path;

use maskaae::loss::LossWeights;
use maskaae::metrics::{EvalConfig, ExtractorKind};
use maskaae::net::Variant;
use maskaae::synthetic::GeneratorSpec;
use maskaae::train::TrainConfig;
use maskaae::{MaaeError, Result};
use serde::{Deserialize, Serialize};

/// Hidden geometry shared by encoder, decoder and discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub width: usize,
    pub depth: usize,
}

/// Everything a preset pins down besides m/variant/seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub preset: String,
    pub net: NetShape,
    pub train: TrainTemplate,
    pub eval: EvalConfig,
}

/// TrainConfig minus the per-run fields (m enters through the weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTemplate {
    pub training_steps: u64,
    pub ae_training_ratio: u32,
    pub disc_training_ratio: u32,
    pub batch_size: usize,
    pub eta_ae: f64,
    pub eta_disc: f64,
    pub eta_gen: f64,
    pub eta_mask: f64,
    pub rmsprop_rho: f64,
    pub rmsprop_eps: f64,
    pub reg_schedule_interval: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub mask_a: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub gamma: f64,
    pub beta2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mask_gap_center: f64,
    pub squared_recon: bool,
}

/// Fast preset sized so the full acceptance battery finishes in minutes
/// on one core: capacity-limited nets make the U-curve's right side
/// visible, and the slow λ₃ doubling gives the mask a long peeling
/// window before polarization pins the gates.
pub const DESK: &str = "synthetic8-desk";
/// Faithful large-scale preset (5×1000 nets, 20k steps). Hours of
/// compute; kept for completeness, not exercised by the test suite.
pub const PAPER: &str = "synthetic8-paper";

pub fn preset(name: &str) -> Result<ResolvedConfig> {
    match name {
        DESK => Ok(ResolvedConfig {
            preset: name.to_string(),
            net: NetShape { width: 64, depth: 3 },
            train: TrainTemplate {
                training_steps: 8400,
                ae_training_ratio: 1,
                disc_training_ratio: 5,
                batch_size: 32,
                eta_ae: 1e-4,
                eta_disc: 1e-4,
                eta_gen: 1e-4,
                eta_mask: 1e-2,
                rmsprop_rho: 0.9,
                rmsprop_eps: 1e-8,
                reg_schedule_interval: 600,
                eval_every: 1000,
                checkpoint_every: 0,
                mask_a: 3.0,
                alpha1: 1.0,
                alpha2: 100.0,
                gamma: 10.0,
                beta2: 10.0,
                lambda1: 1000.0,
                lambda2: 1.0,
                mask_gap_center: -1.0,
                squared_recon: false,
            },
            eval: EvalConfig {
                eval_samples: 500,
                nac_batch: 1000,
                tau: 0.5,
                extractor: ExtractorKind::PcaW,
                pca_dims: 64,
            },
        }),
        PAPER => Ok(ResolvedConfig {
            preset: name.to_string(),
            net: NetShape { width: 1000, depth: 5 },
            train: TrainTemplate {
                training_steps: 20_000,
                ae_training_ratio: 1,
                disc_training_ratio: 5,
                batch_size: 64,
                eta_ae: 1e-4,
                eta_disc: 1e-4,
                eta_gen: 1e-4,
                eta_mask: 1e-3,
                rmsprop_rho: 0.9,
                rmsprop_eps: 1e-8,
                reg_schedule_interval: 2000,
                eval_every: 2000,
                checkpoint_every: 0,
                mask_a: 3.0,
                alpha1: 1.0,
                alpha2: 100.0,
                gamma: 10.0,
                beta2: 10.0,
                lambda1: 1000.0,
                lambda2: 1.0,
                mask_gap_center: -1.0,
                squared_recon: false,
            },
            eval: EvalConfig {
                eval_samples: 1000,
                nac_batch: 5000,
                tau: 0.5,
                extractor: ExtractorKind::PcaW,
                pca_dims: 64,
            },
        }),
        other => Err(MaaeError::invalid(format!(
            "unknown preset '{other}' (have: {DESK}, {PAPER})"
        ))),
    }
}

impl ResolvedConfig {
    /// Instantiate the trainer config for a concrete (m, variant, seed).
    pub fn train_config(&self, m: usize, variant: Variant, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            training_steps: t.training_steps,
            ae_training_ratio: t.ae_training_ratio,
            disc_training_ratio: t.disc_training_ratio,
            batch_size: t.batch_size,
            eta_ae: t.eta_ae,
            eta_disc: t.eta_disc,
            eta_gen: t.eta_gen,
            eta_mask: t.eta_mask,
            rmsprop_rho: t.rmsprop_rho,
            rmsprop_eps: t.rmsprop_eps,
            reg_schedule_interval: t.reg_schedule_interval,
            weights: LossWeights {
                alpha1: t.alpha1,
                alpha2: t.alpha2,
                gamma: t.gamma,
                beta2: t.beta2,
                lambda1: t.lambda1,
                lambda2: t.lambda2,
                lambda3: 2.0 / m as f64,
                mask_gap_center: t.mask_gap_center,
                squared_recon: t.squared_recon,
            },
            variant,
            eval_every: t.eval_every,
            checkpoint_every: t.checkpoint_every,
            mask_a: t.mask_a,
            seed,
            eval: self.eval.clone(),
        }
    }
}

// ---- optional TOML file -----------------------------------------------

/// Every key is optional; present keys override the preset.
#[derive(Debug, Default, Clone, Deserialize)]
pub struct FileConfig {
    pub preset: Option<String>,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub net: NetOverrides,
    #[serde(default)]
    pub eval: EvalOverrides,
    #[serde(default)]
    pub dataset: DatasetOverrides,
    #[serde(default)]
    pub sweep: SweepOverrides,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub training_steps: Option<u64>,
    pub ae_training_ratio: Option<u32>,
    pub disc_training_ratio: Option<u32>,
    pub batch_size: Option<usize>,
    pub eta_ae: Option<f64>,
    pub eta_disc: Option<f64>,
    pub eta_gen: Option<f64>,
    pub eta_mask: Option<f64>,
    pub rmsprop_rho: Option<f64>,
    pub rmsprop_eps: Option<f64>,
    pub reg_schedule_interval: Option<u64>,
    pub eval_every: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub mask_a: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub gamma: Option<f64>,
    pub beta2: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub mask_gap_center: Option<f64>,
    pub squared_recon: Option<bool>,
    pub variant: Option<Variant>,
    pub m: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetOverrides {
    pub width: Option<usize>,
    pub depth: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOverrides {
    pub eval_samples: Option<usize>,
    pub nac_batch: Option<usize>,
    pub tau: Option<f64>,
    pub extractor: Option<ExtractorKind>,
    pub pca_dims: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetOverrides {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub count: Option<usize>,
    pub seed: Option<u64>,
    pub weight_scale: Option<f64>,
    pub cov_diag: Option<Vec<f64>>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOverrides {
    pub variants: Option<Vec<Variant>>,
    pub m_values: Option<Vec<usize>>,
    pub repeats: Option<usize>,
}

pub fn load_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| MaaeError::invalid(format!("{}: {e}", path.display())))
}

macro_rules! take {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

pub fn apply_file(base: &mut ResolvedConfig, file: &FileConfig) {
    let t = &mut base.train;
    let o = &file.train;
    take!(t.training_steps, o.training_steps);
    take!(t.ae_training_ratio, o.ae_training_ratio);
    take!(t.disc_training_ratio, o.disc_training_ratio);
    take!(t.batch_size, o.batch_size);
    take!(t.eta_ae, o.eta_ae);
    take!(t.eta_disc, o.eta_disc);
    take!(t.eta_gen, o.eta_gen);
    take!(t.eta_mask, o.eta_mask);
    take!(t.rmsprop_rho, o.rmsprop_rho);
    take!(t.rmsprop_eps, o.rmsprop_eps);
    take!(t.reg_schedule_interval, o.reg_schedule_interval);
    take!(t.eval_every, o.eval_every);
    take!(t.checkpoint_every, o.checkpoint_every);
    take!(t.mask_a, o.mask_a);
    take!(t.alpha1, o.alpha1);
    take!(t.alpha2, o.alpha2);
    take!(t.gamma, o.gamma);
    take!(t.beta2, o.beta2);
    take!(t.lambda1, o.lambda1);
    take!(t.lambda2, o.lambda2);
    take!(t.mask_gap_center, o.mask_gap_center);
    take!(t.squared_recon, o.squared_recon);
    take!(base.net.width, file.net.width);
    take!(base.net.depth, file.net.depth);
    take!(base.eval.eval_samples, file.eval.eval_samples);
    take!(base.eval.nac_batch, file.eval.nac_batch);
    take!(base.eval.tau, file.eval.tau);
    take!(base.eval.extractor, file.eval.extractor);
    take!(base.eval.pca_dims, file.eval.pca_dims);
}

/// Default generator geometry for the synthetic-8 presets, with file
/// overrides applied.
pub fn dataset_spec(file: &DatasetOverrides) -> Result<GeneratorSpec> {
    let n = file.n.unwrap_or(8);
    let seed = file.seed.unwrap_or(42);
    let mut spec = GeneratorSpec::with_defaults(n, seed);
    take!(spec.d, file.d);
    take!(spec.k, file.k);
    take!(spec.weight_scale, file.weight_scale);
    if let Some(cov) = &file.cov_diag {
        spec.cov_diag = cov.clone();
    }
    spec.validate()?;
    Ok(spec)
}

/// Output root: flag beats `MAAE_RUNS_DIR` beats `./runs`.
pub fn runs_dir(flag: Option<&Path>) -> std::path::PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var("MAAE_RUNS_DIR") {
        if !env.is_empty() {
            return env.into();
        }
    }
    "runs".into()
}
