//! Cross-module pipeline: generate a dataset file, train a short masked
//! run against it, round-trip the final checkpoint, and sanity-check the
//! evaluation outputs — everything through the public API only.

use maskaae::loss::{loss_ae, LossWeights};
use maskaae::metrics::{evaluate, ExtractorKind};
use maskaae::net::{MlpConfig, ModelBundle, Variant};
use maskaae::synthetic::{load_dataset, make_dataset, GeneratorSpec};
use maskaae::theory::r1_residual;
use maskaae::train::{checkpoint_load, lambda3_after, train, RunContext, TrainConfig};

fn toy_spec() -> GeneratorSpec {
    let mut g = GeneratorSpec::with_defaults(2, 5);
    g.k = 8;
    g.d = 6;
    g.cov_diag = vec![1.0; 2];
    g
}

#[test]
fn dataset_container_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("toy.ds");
    let spec = toy_spec();
    let written = make_dataset(&spec, 64, &path).unwrap();
    let (loaded, header_spec) = load_dataset(&path).unwrap();
    assert_eq!(loaded.count, 64);
    assert_eq!(loaded.samples.dim(), (64, 6));
    assert_eq!(loaded.spec_fingerprint, spec.fingerprint());
    assert_eq!(header_spec.n, 2);
    // payload is f32-rounded on write, so reload is lossless
    assert_eq!(written.samples, loaded.samples);
}

#[test]
fn short_training_run_descends_and_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let data_path = tmp.path().join("toy.ds");
    let dataset = make_dataset(&toy_spec(), 64, &data_path).unwrap();

    let m = 3;
    let mut cfg = TrainConfig::defaults(m, Variant::Maskaae, 21);
    cfg.training_steps = 120;
    cfg.batch_size = 8;
    cfg.eta_ae = 1e-3;
    cfg.eval_every = 40;
    cfg.reg_schedule_interval = 32;
    cfg.eval.eval_samples = 32;
    cfg.eval.nac_batch = 64;
    cfg.eval.extractor = ExtractorKind::Identity;

    let bundle = ModelBundle::init(
        MlpConfig::stack(6, 8, 1, m),
        MlpConfig::stack(m, 8, 1, 6),
        MlpConfig::stack(m, 8, 1, 1),
        cfg.mask_a,
        cfg.variant,
        cfg.seed,
    )
    .unwrap();
    let w0 = LossWeights::defaults_for(m);
    let before = loss_ae(&dataset.samples, &bundle, &w0).unwrap();

    let run_dir = tmp.path().join("run");
    let ctx = RunContext {
        dir: run_dir.clone(),
        manifest: serde_json::json!({"pipeline_test": true}),
        append: false,
    };
    let outcome = train(&cfg, &dataset, bundle, Some(&ctx)).unwrap();
    assert_eq!(outcome.final_step, 120);
    assert_eq!(outcome.lambda3, lambda3_after(m, 32, 120));

    let after = loss_ae(&dataset.samples, &outcome.bundle, &w0).unwrap();
    println!("reconstruction loss {before:.4} -> {after:.4} over 120 steps");
    assert!(after < before, "training did not descend: {before} -> {after}");

    // evaluations land on the eval_every grid through the final step
    assert_eq!(outcome.trace.first().unwrap().step, 40);
    assert_eq!(outcome.trace.last().unwrap().step, 120);
    for r in &outcome.trace {
        assert!(r.frechet.is_finite() && r.nac.is_finite(), "step {}", r.step);
        assert_eq!(r.mu.len(), m);
    }

    // checkpoint on disk reloads to the in-memory end state
    let ckpt = checkpoint_load(&run_dir.join("checkpoints/step_120.ckpt")).unwrap();
    assert_eq!(ckpt.step, 120);
    assert_eq!(ckpt.bundle.mask.theta, outcome.bundle.mask.theta);

    // an independent evaluation of the reloaded bundle reproduces the
    // trainer's own final record exactly (same derived eval stream)
    let mut w_final = LossWeights::defaults_for(m);
    w_final.lambda3 = outcome.lambda3;
    let record = evaluate(&ckpt.bundle, &dataset.samples, &w_final, &cfg.eval, cfg.seed, 120)
        .unwrap();
    assert_eq!(
        serde_json::to_string(&record).unwrap(),
        serde_json::to_string(outcome.trace.last().unwrap()).unwrap()
    );

    // cross-module: the trained model's prior-reconstruction residual is
    // a finite diagnostic on this dataset
    let resid = r1_residual(&outcome.bundle, &dataset.samples).unwrap();
    println!("r1 residual {resid:.5}");
    assert!(resid.is_finite() && resid >= 0.0);
}
