//! The training loop: interleaved RMSProp updates of the four parameter
//! groups, the λ₃ doubling schedule, periodic evaluation, and
//! checkpointing.
//!
//! Per outer step i: `ae_training_ratio` updates of (κ, ψ) on L_ae,
//! then `disc_training_ratio` updates of ζ on L_dm, one update of κ on
//! L_gen, the λ₃ doubling check (i ≡ 0 mod interval, capped), and one
//! update of θ on L_mask — skipped entirely for the baseline variant.
//! Every inner update draws a fresh minibatch (with replacement).
//!
//! Determinism: batches, prior draws and β₁ draws come from three
//! dedicated ChaCha streams whose word positions are checkpointed, so a
//! resumed run replays the exact byte sequence of an uninterrupted one.
//! A run directory gets `manifest.json` (written before any compute),
//! `metrics.jsonl`, `mask_trace.csv`, and `checkpoints/step_<i>.ckpt`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MaaeError, Result};
use crate::loss::{loss_ae_var, loss_dm_var, loss_gen_var, loss_mask_var, LossWeights};
use crate::metrics::{evaluate, EvalConfig, MetricsRecord};
use crate::net::{stage_bundle, MlpConfig, ModelBundle, Variant};
use crate::optim::{rmsprop_step, OptimizerState};
use crate::rng::{normal_matrix, sample_indices, stream_rng, uniform_row, Stream, StreamPos};
use crate::synthetic::Dataset;
use crate::tape::Tape;

/// λ₃ stops doubling here to keep the loss finite over long runs.
pub const LAMBDA3_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
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
    pub weights: LossWeights,
    pub variant: Variant,
    pub eval_every: u64,
    /// Extra periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// θ-init upper bound, recorded here so manifests carry it.
    pub mask_a: f64,
    pub seed: u64,
    pub eval: EvalConfig,
}

impl TrainConfig {
    /// Stock hyperparameters (WGAN-GP-style ratios, RMSProp 1e-4/1e-3).
    pub fn defaults(m: usize, variant: Variant, seed: u64) -> Self {
        TrainConfig {
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
            weights: LossWeights::defaults_for(m),
            variant,
            eval_every: 500,
            checkpoint_every: 0,
            mask_a: 3.0,
            seed,
            eval: EvalConfig::default(),
        }
    }

    /// `m` is the bundle's latent width; λ₃ must start at 2/m.
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.ae_training_ratio < 1 || self.disc_training_ratio < 1 {
            return Err(MaaeError::invalid("training ratios must be ≥ 1"));
        }
        if self.batch_size < 2 {
            return Err(MaaeError::invalid(
                "batch_size must be ≥ 2 (the covariance term needs it)",
            ));
        }
        for (name, v) in [
            ("eta_ae", self.eta_ae),
            ("eta_disc", self.eta_disc),
            ("eta_gen", self.eta_gen),
            ("eta_mask", self.eta_mask),
            ("rmsprop_eps", self.rmsprop_eps),
        ] {
            if !(v > 0.0) {
                return Err(MaaeError::invalid(format!("{name} must be > 0")));
            }
        }
        if !(self.rmsprop_rho > 0.0 && self.rmsprop_rho < 1.0) {
            return Err(MaaeError::invalid("rmsprop_rho must lie in (0,1)"));
        }
        if self.reg_schedule_interval < 1 {
            return Err(MaaeError::invalid("reg_schedule_interval must be ≥ 1"));
        }
        if self.eval_every < 1 {
            return Err(MaaeError::invalid("eval_every must be ≥ 1"));
        }
        if !(self.mask_a > 0.0) {
            return Err(MaaeError::invalid("mask_a must be > 0"));
        }
        self.weights.validate()?;
        let want = 2.0 / m as f64;
        if (self.weights.lambda3 - want).abs() > 1e-12 * want {
            return Err(MaaeError::invalid(format!(
                "lambda3 must start at 2/m = {want}, got {}",
                self.weights.lambda3
            )));
        }
        self.eval.validate()?;
        Ok(())
    }
}

/// λ₃ after completing `step` outer steps: (2/m)·2^⌊step/interval⌋,
/// capped.
pub fn lambda3_after(m: usize, interval: u64, step: u64) -> f64 {
    let doublings = (step / interval).min(4096) as i32;
    ((2.0 / m as f64) * 2f64.powi(doublings)).min(LAMBDA3_CAP)
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    pub opt_ae: OptimizerState,
    pub opt_disc: OptimizerState,
    pub opt_gen: OptimizerState,
    pub opt_mask: OptimizerState,
    pub batch_pos: StreamPos,
    pub prior_pos: StreamPos,
    pub gp_pos: StreamPos,
    pub lambda3: f64,
    pub step: u64,
}

/// Where run artifacts go. `manifest` is written verbatim (pretty JSON)
/// before any training compute; `append` continues an existing
/// `metrics.jsonl` instead of truncating (resume case).
pub struct RunContext {
    pub dir: PathBuf,
    pub manifest: serde_json::Value,
    pub append: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub trace: Vec<MetricsRecord>,
    pub lambda3: f64,
    pub final_step: u64,
}

/// The loop's mutable state, with each phase exposed for tests that pin
/// down parameter-group isolation.
pub struct Trainer<'a> {
    cfg: &'a TrainConfig,
    data: &'a Array2<f64>,
    pub bundle: ModelBundle,
    opt_ae: OptimizerState,
    opt_disc: OptimizerState,
    opt_gen: OptimizerState,
    opt_mask: OptimizerState,
    batch_rng: ChaCha8Rng,
    prior_rng: ChaCha8Rng,
    gp_rng: ChaCha8Rng,
    lambda3: f64,
    step: u64,
}

fn take_rows(data: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), data.ncols()), |(r, c)| data[(idx[r], c)])
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainConfig, dataset: &'a Dataset, bundle: ModelBundle) -> Result<Self> {
        let m = bundle.m();
        cfg.validate(m)?;
        if bundle.variant != cfg.variant {
            return Err(MaaeError::invalid("bundle variant disagrees with config"));
        }
        if dataset.samples.ncols() != bundle.encoder.config.input_dim {
            return Err(MaaeError::invalid(format!(
                "dataset width {} does not match encoder input {}",
                dataset.samples.ncols(),
                bundle.encoder.config.input_dim
            )));
        }
        if dataset.samples.nrows() < 2 {
            return Err(MaaeError::invalid("dataset must hold at least 2 samples"));
        }
        let opt_ae = {
            let mut p = bundle.encoder.params();
            p.extend(bundle.decoder.params());
            OptimizerState::new_like(&p)
        };
        let opt_disc = OptimizerState::new_like(&bundle.discriminator.params());
        let opt_gen = OptimizerState::new_like(&bundle.encoder.params());
        let theta_row = bundle.mask.as_row();
        let opt_mask = OptimizerState::new_like(&[&theta_row]);
        Ok(Trainer {
            cfg,
            data: &dataset.samples,
            bundle,
            opt_ae,
            opt_disc,
            opt_gen,
            opt_mask,
            batch_rng: stream_rng(cfg.seed, Stream::Batch),
            prior_rng: stream_rng(cfg.seed, Stream::Prior),
            gp_rng: stream_rng(cfg.seed, Stream::GpMix),
            lambda3: cfg.weights.lambda3,
            step: 0,
        })
    }

    pub fn from_checkpoint(
        cfg: &'a TrainConfig,
        dataset: &'a Dataset,
        ckpt: Checkpoint,
    ) -> Result<Self> {
        let mut tr = Trainer::new(cfg, dataset, ckpt.bundle)?;
        tr.opt_ae = ckpt.opt_ae;
        tr.opt_disc = ckpt.opt_disc;
        tr.opt_gen = ckpt.opt_gen;
        tr.opt_mask = ckpt.opt_mask;
        ckpt.batch_pos.restore(&mut tr.batch_rng);
        ckpt.prior_pos.restore(&mut tr.prior_rng);
        ckpt.gp_pos.restore(&mut tr.gp_rng);
        tr.lambda3 = ckpt.lambda3;
        tr.step = ckpt.step;
        Ok(tr)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lambda3(&self) -> f64 {
        self.lambda3
    }

    /// Loss weights with the scheduled λ₃ substituted in.
    fn weights(&self) -> LossWeights {
        LossWeights { lambda3: self.lambda3, ..self.cfg.weights.clone() }
    }

    fn draw_batch(&mut self) -> Array2<f64> {
        let idx = sample_indices(&mut self.batch_rng, self.data.nrows(), self.cfg.batch_size);
        take_rows(self.data, &idx)
    }

    /// One (κ, ψ) update on L_ae.
    pub fn phase_ae(&mut self) -> Result<()> {
        let x = self.draw_batch();
        let w = self.weights();
        let mut tape = Tape::new();
        let staged = stage_bundle(&mut tape, &self.bundle);
        let xv = tape.constant(x);
        let loss = loss_ae_var(&mut tape, &staged, xv, &w)?;
        let mut wrt = staged.encoder.params();
        wrt.extend(staged.decoder.params());
        let grad_vars = tape.grad(loss, &wrt);
        let grads: Vec<Array2<f64>> =
            grad_vars.iter().map(|&g| tape.value(g).clone()).collect();
        drop(tape);
        let ModelBundle { encoder, decoder, .. } = &mut self.bundle;
        let mut params = encoder.params_mut();
        params.extend(decoder.params_mut());
        rmsprop_step(
            &mut params,
            &grads,
            &mut self.opt_ae,
            self.cfg.eta_ae,
            self.cfg.rmsprop_rho,
            self.cfg.rmsprop_eps,
        )
    }

    /// One ζ update on L_dm.
    pub fn phase_disc(&mut self) -> Result<()> {
        let x = self.draw_batch();
        let z_prior = normal_matrix(&mut self.prior_rng, self.cfg.batch_size, self.bundle.m());
        let beta1 = uniform_row(&mut self.gp_rng, self.cfg.batch_size);
        let w = self.weights();
        let mut tape = Tape::new();
        let staged = stage_bundle(&mut tape, &self.bundle);
        let xv = tape.constant(x);
        let zv = tape.constant(z_prior);
        let loss = loss_dm_var(&mut tape, &staged, xv, zv, &beta1, &w)?;
        let wrt = staged.discriminator.params();
        let grad_vars = tape.grad(loss, &wrt);
        let grads: Vec<Array2<f64>> =
            grad_vars.iter().map(|&g| tape.value(g).clone()).collect();
        drop(tape);
        rmsprop_step(
            &mut self.bundle.discriminator.params_mut(),
            &grads,
            &mut self.opt_disc,
            self.cfg.eta_disc,
            self.cfg.rmsprop_rho,
            self.cfg.rmsprop_eps,
        )
    }

    /// One κ update on L_gen.
    pub fn phase_gen(&mut self) -> Result<()> {
        let x = self.draw_batch();
        let mut tape = Tape::new();
        let staged = stage_bundle(&mut tape, &self.bundle);
        let xv = tape.constant(x);
        let loss = loss_gen_var(&mut tape, &staged, xv)?;
        let wrt = staged.encoder.params();
        let grad_vars = tape.grad(loss, &wrt);
        let grads: Vec<Array2<f64>> =
            grad_vars.iter().map(|&g| tape.value(g).clone()).collect();
        drop(tape);
        rmsprop_step(
            &mut self.bundle.encoder.params_mut(),
            &grads,
            &mut self.opt_gen,
            self.cfg.eta_gen,
            self.cfg.rmsprop_rho,
            self.cfg.rmsprop_eps,
        )
    }

    /// One θ update on L_mask; a no-op for the baseline variant (no
    /// batches are drawn either).
    pub fn phase_mask(&mut self) -> Result<()> {
        if self.cfg.variant == Variant::WaeBaseline {
            return Ok(());
        }
        let x = self.draw_batch();
        let z_prior = normal_matrix(&mut self.prior_rng, self.cfg.batch_size, self.bundle.m());
        let w = self.weights();
        let mut tape = Tape::new();
        let staged = stage_bundle(&mut tape, &self.bundle);
        let xv = tape.constant(x);
        let zv = tape.constant(z_prior);
        let loss = loss_mask_var(&mut tape, &staged, xv, zv, &w)?;
        let theta = staged.theta.expect("maskaae bundle stages θ");
        let grad_vars = tape.grad(loss, &[theta]);
        let grads = vec![tape.value(grad_vars[0]).clone()];
        drop(tape);
        let mut row = self.bundle.mask.as_row();
        rmsprop_step(
            &mut [&mut row],
            &grads,
            &mut self.opt_mask,
            self.cfg.eta_mask,
            self.cfg.rmsprop_rho,
            self.cfg.rmsprop_eps,
        )?;
        self.bundle.mask.set_from_row(&row);
        Ok(())
    }

    /// One full outer step; attaches the step index to numeric errors.
    pub fn outer_step(&mut self) -> Result<()> {
        let i = self.step + 1;
        for _ in 0..self.cfg.ae_training_ratio {
            self.phase_ae().map_err(|e| e.at_step(i))?;
        }
        for _ in 0..self.cfg.disc_training_ratio {
            self.phase_disc().map_err(|e| e.at_step(i))?;
        }
        self.phase_gen().map_err(|e| e.at_step(i))?;
        if i % self.cfg.reg_schedule_interval == 0 {
            self.lambda3 = (self.lambda3 * 2.0).min(LAMBDA3_CAP);
        }
        self.phase_mask().map_err(|e| e.at_step(i))?;
        self.step = i;
        Ok(())
    }

    pub fn evaluate_now(&self) -> Result<MetricsRecord> {
        evaluate(
            &self.bundle,
            self.data,
            &self.weights(),
            &self.cfg.eval,
            self.cfg.seed,
            self.step,
        )
    }

    pub fn snapshot(&self) -> Checkpoint {
        Checkpoint {
            bundle: self.bundle.clone(),
            opt_ae: self.opt_ae.clone(),
            opt_disc: self.opt_disc.clone(),
            opt_gen: self.opt_gen.clone(),
            opt_mask: self.opt_mask.clone(),
            batch_pos: StreamPos::capture(&self.batch_rng),
            prior_pos: StreamPos::capture(&self.prior_rng),
            gp_pos: StreamPos::capture(&self.gp_rng),
            lambda3: self.lambda3,
            step: self.step,
        }
    }
}

// ---- run directory ----------------------------------------------------

struct RunWriter {
    metrics: BufWriter<File>,
    mask_trace: BufWriter<File>,
}

impl RunWriter {
    fn open(ctx: &RunContext, m: usize) -> Result<Self> {
        fs::create_dir_all(ctx.dir.join("checkpoints"))?;
        if !ctx.append {
            let mut f = File::create(ctx.dir.join("manifest.json"))?;
            let pretty = serde_json::to_string_pretty(&ctx.manifest)?;
            f.write_all(pretty.as_bytes())?;
            f.write_all(b"\n")?;
        }
        let open = |name: &str| -> std::io::Result<File> {
            if ctx.append {
                fs::OpenOptions::new().create(true).append(true).open(ctx.dir.join(name))
            } else {
                File::create(ctx.dir.join(name))
            }
        };
        let metrics = BufWriter::new(open("metrics.jsonl")?);
        let mut mask_trace = BufWriter::new(open("mask_trace.csv")?);
        if !ctx.append {
            let header: Vec<String> = (0..m).map(|j| format!("mu_{j}")).collect();
            writeln!(mask_trace, "step,{}", header.join(","))?;
        }
        Ok(RunWriter { metrics, mask_trace })
    }

    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(rec)?;
        writeln!(self.metrics, "{line}")?;
        let mus: Vec<String> = rec.mu.iter().map(|v| format!("{v}")).collect();
        writeln!(self.mask_trace, "{},{}", rec.step, mus.join(","))?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.metrics.flush()?;
        self.mask_trace.flush()?;
        Ok(())
    }
}

fn ckpt_path(dir: &Path, step: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("step_{step}.ckpt"))
}

fn run_loop(
    mut tr: Trainer<'_>,
    run: Option<&RunContext>,
    until: u64,
) -> Result<TrainOutcome> {
    let mut writer = match run {
        Some(ctx) => Some(RunWriter::open(ctx, tr.bundle.m())?),
        None => None,
    };
    let mut trace = Vec::new();
    while tr.step_count() < until {
        let last_good = run.map(|_| tr.snapshot());
        let failing_step = tr.step_count() + 1;
        let step_result = (|| -> Result<Option<MetricsRecord>> {
            tr.outer_step()?;
            let i = tr.step_count();
            if i % tr.cfg.eval_every == 0 || i == until {
                Ok(Some(tr.evaluate_now()?))
            } else {
                Ok(None)
            }
        })();
        match step_result {
            Ok(Some(rec)) => {
                if let Some(w) = writer.as_mut() {
                    w.record(&rec)?;
                }
                trace.push(rec);
            }
            Ok(None) => {}
            Err(e) => {
                if let (Some(ctx), Some(good)) = (run, last_good) {
                    checkpoint_save(&good, &ckpt_path(&ctx.dir, good.step))?;
                    if let Some(w) = writer.as_mut() {
                        w.flush()?;
                    }
                }
                return Err(e.at_step(failing_step));
            }
        }
        let i = tr.step_count();
        if let Some(ctx) = run {
            if tr.cfg.checkpoint_every > 0 && i % tr.cfg.checkpoint_every == 0 && i < until {
                checkpoint_save(&tr.snapshot(), &ckpt_path(&ctx.dir, i))?;
            }
        }
    }
    if let Some(ctx) = run {
        checkpoint_save(&tr.snapshot(), &ckpt_path(&ctx.dir, tr.step_count()))?;
    }
    if let Some(w) = writer.as_mut() {
        w.flush()?;
    }
    Ok(TrainOutcome {
        lambda3: tr.lambda3(),
        final_step: tr.step_count(),
        bundle: tr.bundle,
        trace,
    })
}

/// Train from scratch. With a [`RunContext`], artifacts land in its
/// directory; the manifest is written before any compute.
pub fn train(
    cfg: &TrainConfig,
    dataset: &Dataset,
    bundle: ModelBundle,
    run: Option<&RunContext>,
) -> Result<TrainOutcome> {
    let until = cfg.training_steps;
    let tr = Trainer::new(cfg, dataset, bundle)?;
    if until == 0 {
        // no work: return the bundle untouched, empty trace, no files
        return Ok(TrainOutcome {
            lambda3: tr.lambda3(),
            final_step: 0,
            bundle: tr.bundle,
            trace: Vec::new(),
        });
    }
    run_loop(tr, run, until)
}

/// Continue a checkpointed run to `cfg.training_steps`. The config must
/// match the one the checkpoint was produced with for the replay to be
/// faithful; shape-level disagreements are rejected.
pub fn resume(
    cfg: &TrainConfig,
    dataset: &Dataset,
    ckpt: Checkpoint,
    run: Option<&RunContext>,
) -> Result<TrainOutcome> {
    if ckpt.step >= cfg.training_steps {
        return Err(MaaeError::invalid(format!(
            "checkpoint is already at step {} ≥ training_steps {}",
            ckpt.step, cfg.training_steps
        )));
    }
    let until = cfg.training_steps;
    let tr = Trainer::from_checkpoint(cfg, dataset, ckpt)?;
    run_loop(tr, run, until)
}

// ---- checkpoint container ---------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"MAAE-CK1";

#[derive(Serialize, Deserialize)]
struct BlobMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    step: u64,
    lambda3: f64,
    variant: Variant,
    encoder: MlpConfig,
    decoder: MlpConfig,
    discriminator: MlpConfig,
    m: usize,
    opt_steps: [u64; 4],
    batch_pos: StreamPos,
    prior_pos: StreamPos,
    gp_pos: StreamPos,
    blobs: Vec<BlobMeta>,
}

fn named_blobs(ckpt: &Checkpoint) -> Vec<(String, &Array2<f64>)> {
    let mut out: Vec<(String, &Array2<f64>)> = Vec::new();
    let groups: [(&str, Vec<&Array2<f64>>); 4] = [
        ("encoder", ckpt.bundle.encoder.params()),
        ("decoder", ckpt.bundle.decoder.params()),
        ("discriminator", ckpt.bundle.discriminator.params()),
        ("acc_ae", ckpt.opt_ae.acc.iter().collect()),
    ];
    for (prefix, blobs) in groups {
        for (i, b) in blobs.into_iter().enumerate() {
            out.push((format!("{prefix}.{i}"), b));
        }
    }
    for (i, b) in ckpt.opt_disc.acc.iter().enumerate() {
        out.push((format!("acc_disc.{i}"), b));
    }
    for (i, b) in ckpt.opt_gen.acc.iter().enumerate() {
        out.push((format!("acc_gen.{i}"), b));
    }
    for (i, b) in ckpt.opt_mask.acc.iter().enumerate() {
        out.push((format!("acc_mask.{i}"), b));
    }
    out
}

/// Write a checkpoint: magic, JSON header, f64-LE blobs, then a SHA-256
/// trailer over everything before it.
pub fn checkpoint_save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let theta_row = ckpt.bundle.mask.as_row();
    let mut blobs = named_blobs(ckpt);
    blobs.push(("theta".to_string(), &theta_row));

    let header = CkptHeader {
        step: ckpt.step,
        lambda3: ckpt.lambda3,
        variant: ckpt.bundle.variant,
        encoder: ckpt.bundle.encoder.config.clone(),
        decoder: ckpt.bundle.decoder.config.clone(),
        discriminator: ckpt.bundle.discriminator.config.clone(),
        m: ckpt.bundle.m(),
        opt_steps: [
            ckpt.opt_ae.steps,
            ckpt.opt_disc.steps,
            ckpt.opt_gen.steps,
            ckpt.opt_mask.steps,
        ],
        batch_pos: ckpt.batch_pos,
        prior_pos: ckpt.prior_pos,
        gp_pos: ckpt.gp_pos,
        blobs: blobs
            .iter()
            .map(|(name, b)| BlobMeta {
                name: name.clone(),
                rows: b.nrows(),
                cols: b.ncols(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut hasher = Sha256::new();
    let mut w = BufWriter::new(File::create(path)?);
    let emit = |w: &mut BufWriter<File>, hasher: &mut Sha256, bytes: &[u8]| -> Result<()> {
        hasher.update(bytes);
        w.write_all(bytes)?;
        Ok(())
    };
    emit(&mut w, &mut hasher, CKPT_MAGIC)?;
    emit(&mut w, &mut hasher, &(header_json.len() as u32).to_le_bytes())?;
    emit(&mut w, &mut hasher, &header_json)?;
    for (_, blob) in &blobs {
        for v in blob.iter() {
            emit(&mut w, &mut hasher, &v.to_le_bytes())?;
        }
    }
    let digest = hasher.finalize();
    w.write_all(&digest)?;
    w.flush()?;
    Ok(())
}

fn rebuild_mlp(config: MlpConfig, blobs: &mut std::vec::IntoIter<Array2<f64>>) -> Result<crate::net::Mlp> {
    let mut net = crate::net::Mlp::zeros(config)?;
    let n_layers = net.weights.len();
    for l in 0..n_layers {
        let w = blobs
            .next()
            .ok_or_else(|| MaaeError::Integrity("checkpoint is missing weight blobs".into()))?;
        let b = blobs
            .next()
            .ok_or_else(|| MaaeError::Integrity("checkpoint is missing bias blobs".into()))?;
        if w.dim() != net.weights[l].dim() || b.dim() != net.biases[l].dim() {
            return Err(MaaeError::Integrity("blob shape disagrees with config".into()));
        }
        net.weights[l] = w;
        net.biases[l] = b;
    }
    Ok(net)
}

fn take_acc(
    blobs: &mut std::vec::IntoIter<Array2<f64>>,
    count: usize,
    steps: u64,
) -> Result<OptimizerState> {
    let mut acc = Vec::with_capacity(count);
    for _ in 0..count {
        acc.push(blobs.next().ok_or_else(|| {
            MaaeError::Integrity("checkpoint is missing accumulator blobs".into())
        })?);
    }
    Ok(OptimizerState { acc, steps })
}

/// Read and verify a checkpoint. Any truncation or corruption shows up
/// as a checksum or structure mismatch.
pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut all = Vec::new();
    r.read_to_end(&mut all)?;
    if all.len() < 8 + 4 + 32 || &all[..8] != CKPT_MAGIC {
        return Err(MaaeError::Integrity(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let body = &all[..all.len() - 32];
    let trailer = &all[all.len() - 32..];
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(MaaeError::Integrity(format!(
            "{}: checksum mismatch (truncated or corrupt)",
            path.display()
        )));
    }
    let header_len = u32::from_le_bytes([all[8], all[9], all[10], all[11]]) as usize;
    if 12 + header_len > body.len() {
        return Err(MaaeError::Integrity("header extends past file".into()));
    }
    let header: CkptHeader = serde_json::from_slice(&all[12..12 + header_len])
        .map_err(|e| MaaeError::Integrity(format!("checkpoint header: {e}")))?;

    let payload = &body[12 + header_len..];
    let expect: usize = header.blobs.iter().map(|b| b.rows * b.cols * 8).sum();
    if payload.len() != expect {
        return Err(MaaeError::Integrity(format!(
            "payload is {} bytes, header promises {expect}",
            payload.len()
        )));
    }
    let mut parsed: Vec<Array2<f64>> = Vec::with_capacity(header.blobs.len());
    let mut off = 0usize;
    for meta in &header.blobs {
        let n = meta.rows * meta.cols;
        let mut arr = Array2::zeros((meta.rows, meta.cols));
        for i in 0..n {
            let chunk = &payload[off + i * 8..off + i * 8 + 8];
            arr[(i / meta.cols, i % meta.cols)] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        off += n * 8;
        parsed.push(arr);
    }

    let enc_layers = header.encoder.hidden_widths.len() + 1;
    let dec_layers = header.decoder.hidden_widths.len() + 1;
    let disc_layers = header.discriminator.hidden_widths.len() + 1;
    let mut it = parsed.into_iter();
    let encoder = rebuild_mlp(header.encoder, &mut it)?;
    let decoder = rebuild_mlp(header.decoder, &mut it)?;
    let discriminator = rebuild_mlp(header.discriminator, &mut it)?;
    let opt_ae = take_acc(&mut it, 2 * (enc_layers + dec_layers), header.opt_steps[0])?;
    let opt_disc = take_acc(&mut it, 2 * disc_layers, header.opt_steps[1])?;
    let opt_gen = take_acc(&mut it, 2 * enc_layers, header.opt_steps[2])?;
    let opt_mask = take_acc(&mut it, 1, header.opt_steps[3])?;
    let theta_row = it
        .next()
        .ok_or_else(|| MaaeError::Integrity("checkpoint is missing θ".into()))?;
    if theta_row.dim() != (1, header.m) {
        return Err(MaaeError::Integrity("θ blob has the wrong shape".into()));
    }
    let mut mask = crate::net::MaskState {
        theta: ndarray::Array1::zeros(header.m),
        m: header.m,
    };
    mask.set_from_row(&theta_row);
    let bundle = ModelBundle::new(encoder, decoder, discriminator, mask, header.variant)?;

    Ok(Checkpoint {
        bundle,
        opt_ae,
        opt_disc,
        opt_gen,
        opt_mask,
        batch_pos: header.batch_pos,
        prior_pos: header.prior_pos,
        gp_pos: header.gp_pos,
        lambda3: header.lambda3,
        step: header.step,
    })
}
