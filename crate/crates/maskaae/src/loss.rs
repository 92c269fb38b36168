//! The four training objectives and the Wasserstein gap ω.
//!
//! Each loss exists twice: a `*_var` builder that extends a tape (used by
//! the trainer, which then picks the parameter group to differentiate)
//! and a plain value function on a throwaway tape. Losses always build
//! the full differentiable graph; *which* parameters an update touches is
//! the trainer's decision, not theirs.
//!
//! The gradient penalty follows the usual recipe: the interpolate z_avg
//! is a fresh leaf (detached from the encoder), the discriminator's
//! input gradient at it is produced by an inner backward pass on the same
//! tape, and because that backward pass itself emits tape nodes, the
//! penalty remains differentiable with respect to ζ.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MaaeError, Result};
use crate::net::{stage_bundle, ModelBundle, TapedBundle};
use crate::tape::{Tape, Var};

/// Stabilizer inside the gradient-penalty norm, √(‖g‖² + ε).
const GP_NORM_EPS: f64 = 1e-12;

/// All scalar loss coefficients. β₁ is a per-sample U[0,1] draw supplied
/// by the caller, not a constant, so it is not stored here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    /// Decay rate of δ_j = e^(−γ·μ_j) in the variance penalty.
    pub gamma: f64,
    /// Gradient-penalty coefficient.
    pub beta2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Polarization weight; the trainer doubles this on a schedule.
    pub lambda3: f64,
    /// The λ₂ term is (ω − mask_gap_center)². The verbatim objective
    /// penalizes (1+ω)², i.e. center −1; 0 is the alternative reading.
    pub mask_gap_center: f64,
    /// Use squared Euclidean reconstruction error instead of the plain
    /// norm.
    pub squared_recon: bool,
}

impl LossWeights {
    /// Stock coefficients; λ₃ starts at 2/m.
    pub fn defaults_for(m: usize) -> Self {
        LossWeights {
            alpha1: 1.0,
            alpha2: 100.0,
            gamma: 10.0,
            beta2: 10.0,
            lambda1: 1000.0,
            lambda2: 1.0,
            lambda3: 2.0 / m as f64,
            mask_gap_center: -1.0,
            squared_recon: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("gamma", self.gamma),
            ("beta2", self.beta2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(MaaeError::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.mask_gap_center != -1.0 && self.mask_gap_center != 0.0 {
            return Err(MaaeError::invalid(
                "mask_gap_center must be −1 (verbatim) or 0",
            ));
        }
        Ok(())
    }
}

/// ẑ = E_κ(x) and the masked ẑ⊙μ, as tape nodes.
fn encode_masked(tape: &mut Tape, staged: &TapedBundle, x: Var) -> Result<(Var, Var)> {
    let zhat = staged.encoder.forward(tape, x)?;
    let zm = tape.mul_row(zhat, staged.mu);
    Ok((zhat, zm))
}

/// Mean per-sample reconstruction error (1/s)Σ‖xⁱ − D_ψ(μ⊙ẑⁱ)‖,
/// optionally squared.
fn recon_term(
    tape: &mut Tape,
    staged: &TapedBundle,
    x: Var,
    zm: Var,
    squared: bool,
) -> Result<Var> {
    let s = tape.shape(x).0;
    let xhat = staged.decoder.forward(tape, zm)?;
    let diff = tape.sub(x, xhat);
    let sq = tape.square(diff);
    let per = tape.sum_cols(sq);
    let per = if squared { per } else { tape.sqrt(per) };
    let total = tape.sum_all(per);
    Ok(tape.scale(total, 1.0 / s as f64))
}

/// Mean discriminator output over a masked batch.
fn disc_mean(tape: &mut Tape, staged: &TapedBundle, z: Var) -> Result<Var> {
    let s = tape.shape(z).0;
    let zm = tape.mul_row(z, staged.mu);
    let h = staged.discriminator.forward(tape, zm)?;
    let total = tape.sum_all(h);
    Ok(tape.scale(total, 1.0 / s as f64))
}

/// Autoencoder objective: reconstruction plus the masked-variance
/// penalty α₂·δᵀDiag(A), δ_j = e^(−γμ_j), A the unbiased batch
/// covariance of the (unmasked) encodings.
pub fn loss_ae_var(
    tape: &mut Tape,
    staged: &TapedBundle,
    x: Var,
    w: &LossWeights,
) -> Result<Var> {
    let s = tape.shape(x).0;
    if s < 2 {
        return Err(MaaeError::invalid(
            "loss_ae needs a batch of at least 2 samples for the covariance",
        ));
    }
    let (zhat, zm) = encode_masked(tape, staged, x)?;
    let recon = recon_term(tape, staged, x, zm, w.squared_recon)?;

    let mean = tape.sum_rows(zhat);
    let mean = tape.scale(mean, 1.0 / s as f64);
    let mean_b = tape.broadcast_row(mean, s);
    let centered = tape.sub(zhat, mean_b);
    let sq = tape.square(centered);
    let diag = tape.sum_rows(sq);
    let diag = tape.scale(diag, 1.0 / (s as f64 - 1.0));
    let neg_gamma_mu = tape.scale(staged.mu, -w.gamma);
    let delta = tape.exp(neg_gamma_mu);
    let weighted = tape.mul(delta, diag);
    let penalty = tape.sum_all(weighted);

    let a = tape.scale(recon, w.alpha1);
    let b = tape.scale(penalty, w.alpha2);
    Ok(tape.add(a, b))
}

/// Generator objective: −(1/s)Σ H_ζ(μ⊙E_κ(xⁱ)).
pub fn loss_gen_var(tape: &mut Tape, staged: &TapedBundle, x: Var) -> Result<Var> {
    let zhat = staged.encoder.forward(tape, x)?;
    let mean = disc_mean(tape, staged, zhat)?;
    Ok(tape.scale(mean, -1.0))
}

/// Discriminator objective: the Wasserstein terms plus the one-centered
/// gradient penalty on interpolates z_avgⁱ = β₁ⁱzⁱ + (1−β₁ⁱ)ẑⁱ.
pub fn loss_dm_var(
    tape: &mut Tape,
    staged: &TapedBundle,
    x: Var,
    z_prior: Var,
    beta1: &Array1<f64>,
    w: &LossWeights,
) -> Result<Var> {
    let s = tape.shape(x).0;
    let (sp, m) = tape.shape(z_prior);
    if sp != s {
        return Err(MaaeError::shape(format!(
            "prior batch has {sp} rows, data batch has {s}"
        )));
    }
    if beta1.len() != s {
        return Err(MaaeError::shape(format!(
            "beta1 has {} entries for a batch of {s}",
            beta1.len()
        )));
    }
    let zhat = staged.encoder.forward(tape, x)?;
    if tape.shape(zhat).1 != m {
        return Err(MaaeError::shape(format!(
            "prior width {m} does not match latent width {}",
            tape.shape(zhat).1
        )));
    }

    let prior_mean = disc_mean(tape, staged, z_prior)?;
    let enc_mean = disc_mean(tape, staged, zhat)?;
    let t1 = tape.scale(prior_mean, -1.0);

    // Interpolates are a detached leaf: gradients of the penalty reach ζ
    // (and μ), never the encoder.
    let b = beta1.clone().insert_axis(Axis(1));
    let one_minus = b.mapv(|v| 1.0 - v);
    let z_avg_val: Array2<f64> =
        tape.value(z_prior) * &b + tape.value(zhat) * &one_minus;
    let z_avg = tape.leaf(z_avg_val);
    let zm_avg = tape.mul_row(z_avg, staged.mu);
    let h_avg = staged.discriminator.forward(tape, zm_avg)?;
    let h_sum = tape.sum_all(h_avg);
    let g = tape.grad(h_sum, &[z_avg])[0];
    // An interpolate can land in an all-dead relu region, making the row
    // gradient exactly zero; a bare sqrt would then backprop an infinity
    // (d√u/du → ∞ at 0). The tiny shift keeps the norm differentiable
    // everywhere at a value error of at most √eps.
    let g_sq = tape.square(g);
    let g_ss = tape.sum_cols(g_sq);
    let g_ss_eps = tape.add_scalar(g_ss, GP_NORM_EPS);
    let norms = tape.sqrt(g_ss_eps);
    let shifted = tape.add_scalar(norms, -1.0);
    let sq = tape.square(shifted);
    let pen_sum = tape.sum_all(sq);
    let pen = tape.scale(pen_sum, w.beta2 / s as f64);

    let partial = tape.add(t1, enc_mean);
    Ok(tape.add(partial, pen))
}

/// ω = (1/s)Σ H_ζ(μ⊙zⁱ) − (1/s)Σ H_ζ(μ⊙ẑⁱ).
pub fn wasserstein_gap_var(
    tape: &mut Tape,
    staged: &TapedBundle,
    x: Var,
    z_prior: Var,
) -> Result<Var> {
    let s = tape.shape(x).0;
    if tape.shape(z_prior).0 != s {
        return Err(MaaeError::shape("prior/data batch sizes differ"));
    }
    let zhat = staged.encoder.forward(tape, x)?;
    let prior_mean = disc_mean(tape, staged, z_prior)?;
    let enc_mean = disc_mean(tape, staged, zhat)?;
    Ok(tape.sub(prior_mean, enc_mean))
}

/// Σⱼ |μ_j(μ_j − 1)| as a tape node.
fn polarization_var(tape: &mut Tape, mu: Var) -> Var {
    let sq = tape.square(mu);
    let p = tape.sub(sq, mu);
    let a = tape.abs(p);
    tape.sum_all(a)
}

/// Mask objective: λ₁·reconstruction + λ₂(ω − center)² + λ₃Σ|μ(μ−1)|.
pub fn loss_mask_var(
    tape: &mut Tape,
    staged: &TapedBundle,
    x: Var,
    z_prior: Var,
    w: &LossWeights,
) -> Result<Var> {
    let (_, zm) = encode_masked(tape, staged, x)?;
    let recon = recon_term(tape, staged, x, zm, w.squared_recon)?;
    let omega = wasserstein_gap_var(tape, staged, x, z_prior)?;
    let gap = tape.add_scalar(omega, -w.mask_gap_center);
    let gap_sq = tape.square(gap);
    let reg = polarization_var(tape, staged.mu);

    let t1 = tape.scale(recon, w.lambda1);
    let t2 = tape.scale(gap_sq, w.lambda2);
    let t3 = tape.scale(reg, w.lambda3);
    let partial = tape.add(t1, t2);
    Ok(tape.add(partial, t3))
}

/// Σⱼ |μ_j(μ_j − 1)|; zero exactly when every μ_j ∈ {0, 1}.
pub fn mask_polarization(mu: &Array1<f64>) -> f64 {
    mu.iter().map(|&v| (v * (v - 1.0)).abs()).sum()
}

// ---- value wrappers ----------------------------------------------------

pub fn loss_ae(x: &Array2<f64>, bundle: &ModelBundle, w: &LossWeights) -> Result<f64> {
    let mut tape = Tape::new();
    let staged = stage_bundle(&mut tape, bundle);
    let xv = tape.constant(x.clone());
    let l = loss_ae_var(&mut tape, &staged, xv, w)?;
    Ok(tape.scalar(l))
}

pub fn loss_gen(x: &Array2<f64>, bundle: &ModelBundle) -> Result<f64> {
    let mut tape = Tape::new();
    let staged = stage_bundle(&mut tape, bundle);
    let xv = tape.constant(x.clone());
    let l = loss_gen_var(&mut tape, &staged, xv)?;
    Ok(tape.scalar(l))
}

pub fn loss_dm(
    x: &Array2<f64>,
    z_prior: &Array2<f64>,
    bundle: &ModelBundle,
    beta1: &Array1<f64>,
    w: &LossWeights,
) -> Result<f64> {
    let mut tape = Tape::new();
    let staged = stage_bundle(&mut tape, bundle);
    let xv = tape.constant(x.clone());
    let zv = tape.constant(z_prior.clone());
    let l = loss_dm_var(&mut tape, &staged, xv, zv, beta1, w)?;
    Ok(tape.scalar(l))
}

pub fn wasserstein_gap(
    x: &Array2<f64>,
    z_prior: &Array2<f64>,
    bundle: &ModelBundle,
) -> Result<f64> {
    let mut tape = Tape::new();
    let staged = stage_bundle(&mut tape, bundle);
    let xv = tape.constant(x.clone());
    let zv = tape.constant(z_prior.clone());
    let l = wasserstein_gap_var(&mut tape, &staged, xv, zv)?;
    Ok(tape.scalar(l))
}

pub fn loss_mask(
    x: &Array2<f64>,
    z_prior: &Array2<f64>,
    bundle: &ModelBundle,
    w: &LossWeights,
) -> Result<f64> {
    let mut tape = Tape::new();
    let staged = stage_bundle(&mut tape, bundle);
    let xv = tape.constant(x.clone());
    let zv = tape.constant(z_prior.clone());
    let l = loss_mask_var(&mut tape, &staged, xv, zv, w)?;
    Ok(tape.scalar(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{
        mask_init, HiddenActivation, MaskState, Mlp, MlpConfig, ModelBundle,
        OutputActivation, Variant,
    };
    use crate::rng::{normal_matrix, stream_rng, uniform_row, Stream};
    use ndarray::array;
    use proptest::prelude::*;

    /// Single linear layer, hand-set weight matrix, zero bias.
    fn linear_net(weights: Array2<f64>) -> Mlp {
        let (i, o) = weights.dim();
        let mut net = Mlp::zeros(MlpConfig {
            input_dim: i,
            hidden_widths: vec![],
            output_dim: o,
            hidden_activation: HiddenActivation::Relu,
            output_activation: OutputActivation::Linear,
        })
        .unwrap();
        net.weights[0] = weights;
        net
    }

    fn identity_bundle_2d(variant: Variant, theta: Option<Array1<f64>>) -> ModelBundle {
        let enc = linear_net(Array2::eye(2));
        let dec = linear_net(Array2::eye(2));
        let disc = linear_net(array![[1.0], [2.0]]);
        let mask = match theta {
            Some(t) => MaskState { m: t.len(), theta: t },
            None => mask_init(2, 3.0, 0).unwrap(),
        };
        ModelBundle::new(enc, dec, disc, mask, variant).unwrap()
    }

    /// 1-d identity autoencoder with H_ζ(u) = c·u.
    fn toy_1d(disc_weight: f64, variant: Variant, theta: f64) -> ModelBundle {
        let enc = linear_net(Array2::eye(1));
        let dec = linear_net(Array2::eye(1));
        let disc = linear_net(array![[disc_weight]]);
        let mask = MaskState { theta: array![theta], m: 1 };
        ModelBundle::new(enc, dec, disc, mask, variant).unwrap()
    }

    #[test]
    fn loss_ae_penalty_with_perfect_reconstruction() {
        // identity autoencoder, μ ≡ 1 (baseline variant): loss is the
        // pure variance penalty α₂·e^(−γ)·trace(A).
        let bundle = identity_bundle_2d(Variant::WaeBaseline, None);
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let w = LossWeights::defaults_for(2);
        // unbiased covariance diag of [[1,2],[3,4]] is [2, 2]
        let expected = 100.0 * (-10.0_f64).exp() * 4.0;
        let got = loss_ae(&x, &bundle, &w).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got}, want {expected}");
    }

    #[test]
    fn loss_ae_constant_encoder_is_pure_reconstruction() {
        // zero encoder (constant 0 output) → Diag(A) = 0; zero decoder →
        // x̂ = 0, so the loss is the mean row norm of x.
        let enc = Mlp::zeros(MlpConfig::stack(2, 4, 1, 2)).unwrap();
        let dec = Mlp::zeros(MlpConfig::stack(2, 4, 1, 2)).unwrap();
        let disc = Mlp::zeros(MlpConfig::stack(2, 4, 1, 1)).unwrap();
        let mask = mask_init(2, 3.0, 1).unwrap();
        let bundle = ModelBundle::new(enc, dec, disc, mask, Variant::Maskaae).unwrap();
        let x = array![[3.0, 4.0], [3.0, 4.0]];
        let w = LossWeights::defaults_for(2);
        let got = loss_ae(&x, &bundle, &w).unwrap();
        assert!((got - 5.0).abs() < 1e-12, "got {got}, want 5");
    }

    #[test]
    fn loss_ae_fully_masked_pays_full_variance_penalty() {
        // θ = −5 → μ = 0 → δ = 1; penalty is α₂·trace(A); reconstruction
        // goes through D(0) = 0.
        let bundle = identity_bundle_2d(Variant::Maskaae, Some(array![-5.0, -5.0]));
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let w = LossWeights::defaults_for(2);
        let expected_recon = (5.0_f64.sqrt() + 5.0) / 2.0;
        let expected = expected_recon + 100.0 * 4.0;
        let got = loss_ae(&x, &bundle, &w).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got}, want {expected}");
    }

    #[test]
    fn loss_ae_rejects_single_sample_batches() {
        let bundle = identity_bundle_2d(Variant::WaeBaseline, None);
        let x = array![[1.0, 2.0]];
        let w = LossWeights::defaults_for(2);
        assert!(matches!(
            loss_ae(&x, &bundle, &w),
            Err(MaaeError::InvalidArgument(_))
        ));
    }

    #[test]
    fn loss_gen_closed_forms() {
        // zero discriminator → 0
        let enc = linear_net(Array2::eye(2));
        let dec = linear_net(Array2::eye(2));
        let disc = Mlp::zeros(MlpConfig::stack(2, 4, 1, 1)).unwrap();
        let mask = mask_init(2, 3.0, 2).unwrap();
        let bundle = ModelBundle::new(enc, dec, disc, mask, Variant::Maskaae).unwrap();
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(loss_gen(&x, &bundle).unwrap(), 0.0);

        // constant discriminator ≡ 3 → −3
        let mut bundle = bundle;
        bundle.discriminator.biases.last_mut().unwrap()[(0, 0)] = 3.0;
        // zero weights into the output layer keep the bias untouched
        let got = loss_gen(&x, &bundle).unwrap();
        assert!((got + 3.0).abs() < 1e-12, "got {got}, want −3");
    }

    #[test]
    fn loss_gen_hand_oracle() {
        // identity encoder, H(u₁,u₂) = u₁ + 2u₂, μ = (0.5, 0.8):
        // H(μ⊙x) over rows of [[1,2],[3,4]] is (3.7, 7.9); mean 5.8.
        let theta = array![2.0_f64.ln(), 5.0_f64.ln()];
        let bundle = identity_bundle_2d(Variant::Maskaae, Some(theta));
        let mu = bundle.mu();
        assert!((mu[0] - 0.5).abs() < 1e-15 && (mu[1] - 0.8).abs() < 1e-15);
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let got = loss_gen(&x, &bundle).unwrap();
        assert!((got + 5.8).abs() < 1e-12, "got {got}, want −5.8");
    }

    #[test]
    fn loss_dm_unit_norm_linear_disc_has_zero_penalty() {
        // H(u) = u (unit weight): ‖∇H‖ = 1 everywhere, penalty vanishes;
        // loss = −H(prior) + H(encoded) = −0.3 + 0.7.
        let bundle = toy_1d(1.0, Variant::WaeBaseline, 0.0);
        let x = array![[0.7]];
        let z = array![[0.3]];
        let w = LossWeights::defaults_for(1);
        let got = loss_dm(&x, &z, &bundle, &array![0.5], &w).unwrap();
        assert!((got - 0.4).abs() < 1e-12, "got {got}, want 0.4");
    }

    #[test]
    fn loss_dm_constant_disc_pays_exactly_beta2() {
        let mut bundle = toy_1d(0.0, Variant::WaeBaseline, 0.0);
        bundle.discriminator.biases[0][(0, 0)] = 7.0;
        let x = array![[0.7]];
        let z = array![[0.3]];
        let w = LossWeights::defaults_for(1);
        let got = loss_dm(&x, &z, &bundle, &array![0.25], &w).unwrap();
        // ∇H ≡ 0, so the stabilized norm is √ε and the penalty is
        // β₂(1 − √ε)² — within 2e-5 of the ideal β₂.
        let want = 10.0 * (1.0 - 1e-6f64) * (1.0 - 1e-6f64);
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        assert!((got - 10.0).abs() < 1e-4);
    }

    #[test]
    fn loss_dm_hand_oracle_from_the_double_slope_toy() {
        // H(u) = 2u, prior [1], encoded [0], μ = 1, β₂ = 10:
        // −2 + 0 + 10·(2−1)² = 8; and ω = 2.
        let bundle = toy_1d(2.0, Variant::WaeBaseline, 0.0);
        let x = array![[0.0]];
        let z = array![[1.0]];
        let w = LossWeights::defaults_for(1);
        let got = loss_dm(&x, &z, &bundle, &array![0.5], &w).unwrap();
        assert!((got - 8.0).abs() < 1e-9, "got {got}, want 8");
        let om = wasserstein_gap(&x, &z, &bundle).unwrap();
        assert!((om - 2.0).abs() < 1e-12, "ω = {om}, want 2");
    }

    #[test]
    fn wasserstein_gap_degenerate_cases() {
        let bundle = toy_1d(2.0, Variant::WaeBaseline, 0.0);
        let x = array![[0.4], [0.6]];
        let same = array![[0.4], [0.6]];
        assert_eq!(wasserstein_gap(&x, &same, &bundle).unwrap(), 0.0);

        let mut constant = toy_1d(0.0, Variant::WaeBaseline, 0.0);
        constant.discriminator.biases[0][(0, 0)] = 2.5;
        let z = array![[9.0], [-3.0]];
        assert_eq!(wasserstein_gap(&x, &z, &constant).unwrap(), 0.0);
    }

    #[test]
    fn loss_mask_vanishes_at_its_fixed_point() {
        // perfect reconstruction (identity, μ = 1), binary mask, and
        // ω = −1 by construction: prior [0] ↦ H = 0, encoded [1] ↦ H = 1.
        let bundle = toy_1d(1.0, Variant::WaeBaseline, 0.0);
        let x = array![[1.0]];
        let z = array![[0.0]];
        let w = LossWeights::defaults_for(1);
        let got = loss_mask(&x, &z, &bundle, &w).unwrap();
        assert!(got.abs() < 1e-12, "got {got}, want 0");
    }

    #[test]
    fn loss_mask_hand_oracle() {
        // θ = ln2 → μ = 0.5; identity enc/dec, H(u) = 2u, x = [3],
        // prior [1]: recon = |3 − 1.5| = 1.5; ω = H(0.5) − H(1.5) = −2;
        // (1+ω)² = 1; reg = |0.5·(−0.5)| = 0.25, λ₃ = 2/1 = 2.
        // Total: 1000·1.5 + 1·1 + 2·0.25 = 1501.5.
        let bundle = toy_1d(2.0, Variant::Maskaae, 2.0_f64.ln());
        let x = array![[3.0]];
        let z = array![[1.0]];
        let w = LossWeights::defaults_for(1);
        let got = loss_mask(&x, &z, &bundle, &w).unwrap();
        assert!((got - 1501.5).abs() < 1e-9, "got {got}, want 1501.5");

        // alternative centering penalizes ω² = 4 instead of (1+ω)² = 1
        let w0 = LossWeights { mask_gap_center: 0.0, ..w };
        let got0 = loss_mask(&x, &z, &bundle, &w0).unwrap();
        assert!((got0 - 1504.5).abs() < 1e-9, "got {got0}, want 1504.5");
    }

    #[test]
    fn polarization_closed_forms() {
        assert_eq!(mask_polarization(&array![0.0, 1.0, 0.0]), 0.0);
        assert!((mask_polarization(&array![0.5]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn squared_recon_flag_squares_the_norm() {
        // zero decoder: per-sample error is ‖x‖ (or ‖x‖²)
        let enc = linear_net(Array2::eye(2));
        let dec = Mlp::zeros(MlpConfig::stack(2, 4, 1, 2)).unwrap();
        let disc = linear_net(array![[1.0], [1.0]]);
        let mask = mask_init(2, 3.0, 3).unwrap();
        let bundle = ModelBundle::new(enc, dec, disc, mask, Variant::WaeBaseline).unwrap();
        let x = array![[3.0, 4.0], [0.0, 2.0]];
        let mut w = LossWeights::defaults_for(2);
        w.alpha2 = 1e-30; // suppress the variance penalty
        let plain = loss_ae(&x, &bundle, &w).unwrap();
        assert!((plain - 3.5).abs() < 1e-9, "plain {plain}, want (5+2)/2");
        w.squared_recon = true;
        let squared = loss_ae(&x, &bundle, &w).unwrap();
        assert!((squared - 14.5).abs() < 1e-9, "squared {squared}, want (25+4)/2");
    }

    /// Builds a small random bundle for gradient checks, with every
    /// hidden pre-activation bounded away from the relu kink.
    fn gradcheck_bundle(seed: u64) -> (ModelBundle, Array2<f64>, Array2<f64>, Array1<f64>) {
        let mut rng = stream_rng(seed, Stream::ParamInit);
        let enc = Mlp::init(MlpConfig::stack(4, 6, 2, 3), &mut rng).unwrap();
        let dec = Mlp::init(MlpConfig::stack(3, 6, 2, 4), &mut rng).unwrap();
        let disc = Mlp::init(MlpConfig::stack(3, 6, 2, 1), &mut rng).unwrap();
        let mask = mask_init(3, 3.0, seed).unwrap();
        let bundle = ModelBundle::new(enc, dec, disc, mask, Variant::Maskaae).unwrap();
        let x = normal_matrix(&mut rng, 3, 4);
        let z = normal_matrix(&mut rng, 3, 3);
        let beta1 = uniform_row(&mut rng, 3);
        (bundle, x, z, beta1)
    }

    /// Central finite difference over every entry of the chosen blob.
    fn check_param_grads<F>(
        bundle: &ModelBundle,
        grads: &[Array2<f64>],
        blobs: impl Fn(&ModelBundle) -> Vec<Array2<f64>>,
        write: impl Fn(&mut ModelBundle, usize, (usize, usize), f64),
        eval: F,
        what: &str,
    ) where
        F: Fn(&ModelBundle) -> f64,
    {
        let orig = blobs(bundle);
        assert_eq!(orig.len(), grads.len());
        let mut work = bundle.clone();
        for (pi, blob) in orig.iter().enumerate() {
            for r in 0..blob.nrows() {
                for c in 0..blob.ncols() {
                    let h = 1e-5;
                    let base = blob[(r, c)];
                    write(&mut work, pi, (r, c), base + h);
                    let plus = eval(&work);
                    write(&mut work, pi, (r, c), base - h);
                    let minus = eval(&work);
                    write(&mut work, pi, (r, c), base);
                    let numeric = (plus - minus) / (2.0 * h);
                    let analytic = grads[pi][(r, c)];
                    let rel = (analytic - numeric).abs() / numeric.abs().max(1.0);
                    assert!(
                        rel < 1e-4,
                        "{what} blob {pi} ({r},{c}): analytic {analytic}, numeric {numeric}"
                    );
                }
            }
        }
    }

    fn encoder_blobs(b: &ModelBundle) -> Vec<Array2<f64>> {
        b.encoder.params().into_iter().cloned().collect()
    }
    fn write_encoder(b: &mut ModelBundle, pi: usize, idx: (usize, usize), v: f64) {
        b.encoder.params_mut()[pi][idx] = v;
    }
    fn disc_blobs(b: &ModelBundle) -> Vec<Array2<f64>> {
        b.discriminator.params().into_iter().cloned().collect()
    }
    fn write_disc(b: &mut ModelBundle, pi: usize, idx: (usize, usize), v: f64) {
        b.discriminator.params_mut()[pi][idx] = v;
    }

    #[test]
    fn loss_ae_encoder_gradients_match_finite_differences() {
        let (bundle, x, _, _) = gradcheck_bundle(41);
        let w = LossWeights::defaults_for(3);
        let mut tape = Tape::new();
        let staged = stage_bundle(&mut tape, &bundle);
        let xv = tape.constant(x.clone());
        let l = loss_ae_var(&mut tape, &staged, xv, &w).unwrap();
        let params = staged.encoder.params();
        let grad_vars = tape.grad(l, &params);
        let grads: Vec<Array2<f64>> = grad_vars.iter().map(|&g| tape.value(g).clone()).collect();
        check_param_grads(
            &bundle,
            &grads,
            encoder_blobs,
            write_encoder,
            |b| loss_ae(&x, b, &w).unwrap(),
            "loss_ae/encoder",
        );
    }

    #[test]
    fn loss_gen_encoder_gradients_match_finite_differences() {
        let (bundle, x, _, _) = gradcheck_bundle(43);
        let mut tape = Tape::new();
        let staged = stage_bundle(&mut tape, &bundle);
        let xv = tape.constant(x.clone());
        let l = loss_gen_var(&mut tape, &staged, xv).unwrap();
        let params = staged.encoder.params();
        let grad_vars = tape.grad(l, &params);
        let grads: Vec<Array2<f64>> = grad_vars.iter().map(|&g| tape.value(g).clone()).collect();
        check_param_grads(
            &bundle,
            &grads,
            encoder_blobs,
            write_encoder,
            |b| loss_gen(&x, b).unwrap(),
            "loss_gen/encoder",
        );
    }

    /// The critical one: discriminator gradients of L_dm include the
    /// second-order gradient-penalty path.
    #[test]
    fn loss_dm_discriminator_gradients_match_finite_differences() {
        let (bundle, x, z, beta1) = gradcheck_bundle(47);
        let w = LossWeights::defaults_for(3);
        let mut tape = Tape::new();
        let staged = stage_bundle(&mut tape, &bundle);
        let xv = tape.constant(x.clone());
        let zv = tape.constant(z.clone());
        let l = loss_dm_var(&mut tape, &staged, xv, zv, &beta1, &w).unwrap();
        let params = staged.discriminator.params();
        let grad_vars = tape.grad(l, &params);
        let grads: Vec<Array2<f64>> = grad_vars.iter().map(|&g| tape.value(g).clone()).collect();
        check_param_grads(
            &bundle,
            &grads,
            disc_blobs,
            write_disc,
            |b| loss_dm(&x, &z, b, &beta1, &w).unwrap(),
            "loss_dm/discriminator",
        );
    }

    #[test]
    fn loss_mask_theta_gradients_match_finite_differences() {
        let (bundle, x, z, _) = gradcheck_bundle(53);
        let w = LossWeights::defaults_for(3);
        let mut tape = Tape::new();
        let staged = stage_bundle(&mut tape, &bundle);
        let xv = tape.constant(x.clone());
        let zv = tape.constant(z.clone());
        let l = loss_mask_var(&mut tape, &staged, xv, zv, &w).unwrap();
        let theta = staged.theta.expect("maskaae variant has θ");
        let g = tape.grad(l, &[theta])[0];
        let analytic = tape.value(g).clone();

        let mut work = bundle.clone();
        for j in 0..3 {
            let h = 1e-6;
            let base = work.mask.theta[j];
            work.mask.theta[j] = base + h;
            let plus = loss_mask(&x, &z, &work, &w).unwrap();
            work.mask.theta[j] = base - h;
            let minus = loss_mask(&x, &z, &work, &w).unwrap();
            work.mask.theta[j] = base;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[(0, j)];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            assert!(rel < 1e-4, "θ_{j}: analytic {a}, numeric {numeric}");
        }
    }

    #[test]
    fn baseline_variant_has_no_theta_on_the_tape() {
        let (mut bundle, x, z, _) = gradcheck_bundle(59);
        bundle.variant = Variant::WaeBaseline;
        let w = LossWeights::defaults_for(3);
        let mut tape = Tape::new();
        let staged = stage_bundle(&mut tape, &bundle);
        assert!(staged.theta.is_none());
        let xv = tape.constant(x.clone());
        let zv = tape.constant(z.clone());
        // loss still evaluates fine with μ ≡ 1
        let l = loss_mask_var(&mut tape, &staged, xv, zv, &w).unwrap();
        assert!(tape.scalar(l).is_finite());
    }

    #[test]
    fn weight_validation() {
        let mut w = LossWeights::defaults_for(4);
        assert!(w.validate().is_ok());
        w.lambda3 = 0.0;
        assert!(w.validate().is_err());
        let mut w = LossWeights::defaults_for(4);
        w.mask_gap_center = 0.5;
        assert!(w.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Σ|μ(μ−1)| = 0 iff μ is binary.
        #[test]
        fn prop_polarization_zero_iff_binary(
            bits in proptest::collection::vec(proptest::bool::ANY, 1..8),
            bump in 0.01f64..0.49,
            at in 0usize..8,
        ) {
            let mu: Array1<f64> =
                bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            prop_assert_eq!(mask_polarization(&mu), 0.0);
            let mut perturbed = mu.clone();
            let j = at % perturbed.len();
            perturbed[j] = if perturbed[j] == 0.0 { bump } else { 1.0 - bump };
            prop_assert!(mask_polarization(&perturbed) > 0.0);
        }

        /// Reconstruction and regularizer terms keep L_ae and L_mask
        /// non-negative for arbitrary parameters.
        #[test]
        fn prop_losses_nonnegative(seed in 0u64..500) {
            let (bundle, x, z, _) = gradcheck_bundle(seed);
            let w = LossWeights::defaults_for(3);
            let ae = loss_ae(&x, &bundle, &w).unwrap();
            prop_assert!(ae >= 0.0, "loss_ae = {}", ae);
            let lm = loss_mask(&x, &z, &bundle, &w).unwrap();
            prop_assert!(lm >= 0.0, "loss_mask = {}", lm);
        }
    }
}
