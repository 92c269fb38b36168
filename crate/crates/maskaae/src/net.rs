//! Encoder / decoder / discriminator MLPs and the trainable mask.
//!
//! Each network exists in two forms: a plain parameter container
//! ([`Mlp`]) with a fast tape-free `forward` for evaluation, and a staged
//! form ([`TapedMlp`]) whose parameters are differentiable leaves on a
//! [`Tape`]. Training stages the bundle onto a fresh tape every step.
//!
//! The mask is a free vector θ reparameterized through
//! b(θ) = max(0, 1 − e^(−θ)), which pins μ to [0, 1) and freezes a
//! dimension once θ goes negative (the clamp's flat side has zero
//! gradient, and we also take gradient 0 at θ = 0 itself).

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MaaeError, Result};
use crate::rng::{normal_matrix, stream_rng, uniform_row, Stream};
use crate::tape::{Tape, Var};

/// Negative slope used when `hidden_activation` is `LeakyRelu`.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl MlpConfig {
    /// `depth` equal hidden layers of `width`, relu hidden, linear out —
    /// the shape used by all three networks in the experiments.
    pub fn stack(input_dim: usize, width: usize, depth: usize, output_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden_widths: vec![width; depth],
            output_dim,
            hidden_activation: HiddenActivation::Relu,
            output_activation: OutputActivation::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 || self.output_dim < 1 {
            return Err(MaaeError::invalid("MLP dims must be ≥ 1"));
        }
        if self.hidden_widths.iter().any(|&w| w < 1) {
            return Err(MaaeError::invalid("hidden widths must be ≥ 1"));
        }
        Ok(())
    }

    /// Layer shapes in order: (fan_in, fan_out) per linear layer.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden_widths {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(i, o)| i * o + o)
            .sum()
    }
}

/// Dense parameter container. Weight `l` is fan_in×fan_out; bias `l` is a
/// 1×fan_out row.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub config: MlpConfig,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array2<f64>>,
}

impl Mlp {
    /// Gaussian weights with std 1/√fan_in, zero biases.
    pub fn init(config: MlpConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Mlp> {
        config.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out) in config.layer_dims() {
            let std = 1.0 / (fan_in as f64).sqrt();
            weights.push(normal_matrix(rng, fan_in, fan_out).mapv(|w| w * std));
            biases.push(Array2::zeros((1, fan_out)));
        }
        Ok(Mlp { config, weights, biases })
    }

    /// All parameters zero (constant map onto the zero bias).
    pub fn zeros(config: MlpConfig) -> Result<Mlp> {
        config.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out) in config.layer_dims() {
            weights.push(Array2::zeros((fan_in, fan_out)));
            biases.push(Array2::zeros((1, fan_out)));
        }
        Ok(Mlp { config, weights, biases })
    }

    /// Tape-free forward pass for evaluation.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.config.input_dim {
            return Err(MaaeError::shape(format!(
                "input has {} columns, expected {}",
                x.ncols(),
                self.config.input_dim
            )));
        }
        let slope = match self.config.hidden_activation {
            HiddenActivation::Relu => 0.0,
            HiddenActivation::LeakyRelu => LEAKY_SLOPE,
        };
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for l in 0..=last {
            h = h.dot(&self.weights[l]) + &self.biases[l];
            if l < last {
                h.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
            }
        }
        if self.config.output_activation == OutputActivation::Sigmoid {
            h.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp()));
        }
        Ok(h)
    }

    /// Parameters in checkpoint order: w0, b0, w1, b1, …
    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Stage every parameter as a differentiable leaf.
    pub fn stage(&self, tape: &mut Tape) -> TapedMlp {
        let weights = self.weights.iter().map(|w| tape.leaf(w.clone())).collect();
        let biases = self.biases.iter().map(|b| tape.leaf(b.clone())).collect();
        TapedMlp {
            weights,
            biases,
            hidden_activation: self.config.hidden_activation,
            output_activation: self.config.output_activation,
            input_dim: self.config.input_dim,
        }
    }
}

/// An [`Mlp`] whose parameters live on a tape.
pub struct TapedMlp {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
    hidden_activation: HiddenActivation,
    output_activation: OutputActivation,
    input_dim: usize,
}

impl TapedMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if tape.shape(x).1 != self.input_dim {
            return Err(MaaeError::shape(format!(
                "input has {} columns, expected {}",
                tape.shape(x).1,
                self.input_dim
            )));
        }
        let slope = match self.hidden_activation {
            HiddenActivation::Relu => 0.0,
            HiddenActivation::LeakyRelu => LEAKY_SLOPE,
        };
        let last = self.weights.len() - 1;
        let mut h = x;
        for l in 0..=last {
            let lin = tape.matmul(h, self.weights[l]);
            h = tape.add_row(lin, self.biases[l]);
            if l < last {
                h = tape.leaky_relu(h, slope);
            }
        }
        if self.output_activation == OutputActivation::Sigmoid {
            h = tape.sigmoid(h);
        }
        Ok(h)
    }

    /// Same order as [`Mlp::params`].
    pub fn params(&self) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }
}

/// Trainable mask parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskState {
    pub theta: Array1<f64>,
    pub m: usize,
}

impl MaskState {
    pub fn as_row(&self) -> Array2<f64> {
        self.theta.clone().insert_axis(Axis(0))
    }

    pub fn set_from_row(&mut self, row: &Array2<f64>) {
        self.theta = row.index_axis(Axis(0), 0).to_owned();
    }
}

/// θ_j i.i.d. uniform on [0, a], so the initial mask is spread over
/// [0, 1 − e^(−a)] and no dimension starts dead.
pub fn mask_init(m: usize, a: f64, seed: u64) -> Result<MaskState> {
    if m < 1 {
        return Err(MaaeError::invalid("mask dimension m must be ≥ 1"));
    }
    if !(a > 0.0) {
        return Err(MaaeError::invalid("mask init bound a must be > 0"));
    }
    let mut rng = stream_rng(seed, Stream::MaskInit);
    let theta = uniform_row(&mut rng, m).mapv(|u| u * a);
    Ok(MaskState { theta, m })
}

/// b(θ) = max(0, 1 − e^(−θ)) element-wise.
pub fn mask_forward(state: &MaskState) -> Array1<f64> {
    state.theta.mapv(|t| (1.0 - (-t).exp()).max(0.0))
}

/// Stage the mask: returns (θ leaf, μ node). The gradient of μ at θ ≤ 0
/// is 0 (flat side of the clamp).
pub fn stage_mask(tape: &mut Tape, state: &MaskState) -> (Var, Var) {
    let theta = tape.leaf(state.as_row());
    let mu = mask_var(tape, theta);
    (theta, mu)
}

/// μ = relu(1 − e^(−θ)) built from tape ops so it is differentiable.
pub fn mask_var(tape: &mut Tape, theta: Var) -> Var {
    let neg = tape.scale(theta, -1.0);
    let e = tape.exp(neg);
    let ne = tape.scale(e, -1.0);
    let shifted = tape.add_scalar(ne, 1.0);
    tape.relu(shifted)
}

/// |{j : μ_j > τ}|.
pub fn active_dimensions(mu: &Array1<f64>, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(MaaeError::invalid("tau must lie in (0, 1)"));
    }
    Ok(mu.iter().filter(|&&v| v > tau).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Maskaae,
    WaeBaseline,
}

/// The full model: three networks plus the mask.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub discriminator: Mlp,
    pub mask: MaskState,
    pub variant: Variant,
}

impl ModelBundle {
    pub fn new(
        encoder: Mlp,
        decoder: Mlp,
        discriminator: Mlp,
        mask: MaskState,
        variant: Variant,
    ) -> Result<Self> {
        let m = encoder.config.output_dim;
        if decoder.config.input_dim != m
            || discriminator.config.input_dim != m
            || mask.m != m
        {
            return Err(MaaeError::invalid(format!(
                "latent dims disagree: encoder out {m}, decoder in {}, discriminator in {}, mask {}",
                decoder.config.input_dim, discriminator.config.input_dim, mask.m
            )));
        }
        if discriminator.config.output_dim != 1 {
            return Err(MaaeError::invalid("discriminator must output a single real"));
        }
        Ok(ModelBundle { encoder, decoder, discriminator, mask, variant })
    }

    /// Initialize all three networks and the mask from one seed.
    /// Network parameters come from the `ParamInit` stream in the order
    /// encoder, decoder, discriminator; θ from the `MaskInit` stream.
    pub fn init(
        enc: MlpConfig,
        dec: MlpConfig,
        disc: MlpConfig,
        mask_a: f64,
        variant: Variant,
        seed: u64,
    ) -> Result<Self> {
        let m = enc.output_dim;
        let mut rng = stream_rng(seed, Stream::ParamInit);
        let encoder = Mlp::init(enc, &mut rng)?;
        let decoder = Mlp::init(dec, &mut rng)?;
        let discriminator = Mlp::init(disc, &mut rng)?;
        let mask = mask_init(m, mask_a, seed)?;
        ModelBundle::new(encoder, decoder, discriminator, mask, variant)
    }

    pub fn m(&self) -> usize {
        self.mask.m
    }

    /// Current mask value; identically 1 for the baseline variant.
    pub fn mu(&self) -> Array1<f64> {
        match self.variant {
            Variant::Maskaae => mask_forward(&self.mask),
            Variant::WaeBaseline => Array1::ones(self.mask.m),
        }
    }

    pub fn active_dims(&self, tau: f64) -> Result<usize> {
        active_dimensions(&self.mu(), tau)
    }
}

/// The bundle staged onto a tape. `theta` is `None` for the baseline
/// variant, whose μ is a constant-ones node with no gradient.
pub struct TapedBundle {
    pub encoder: TapedMlp,
    pub decoder: TapedMlp,
    pub discriminator: TapedMlp,
    pub theta: Option<Var>,
    pub mu: Var,
}

pub fn stage_bundle(tape: &mut Tape, bundle: &ModelBundle) -> TapedBundle {
    let encoder = bundle.encoder.stage(tape);
    let decoder = bundle.decoder.stage(tape);
    let discriminator = bundle.discriminator.stage(tape);
    let (theta, mu) = match bundle.variant {
        Variant::Maskaae => {
            let (t, m) = stage_mask(tape, &bundle.mask);
            (Some(t), m)
        }
        Variant::WaeBaseline => {
            let ones = tape.constant(Array2::ones((1, bundle.mask.m)));
            (None, ones)
        }
    };
    TapedBundle { encoder, decoder, discriminator, theta, mu }
}

/// Raw encoder pass (no masking — callers apply μ).
pub fn encode(bundle: &ModelBundle, x: &Array2<f64>) -> Result<Array2<f64>> {
    bundle.encoder.forward(x)
}

/// Raw decoder pass on already-masked latents.
pub fn decode(bundle: &ModelBundle, z_masked: &Array2<f64>) -> Result<Array2<f64>> {
    bundle.decoder.forward(z_masked)
}

/// Discriminator pass; returns one real per row.
pub fn discriminate(bundle: &ModelBundle, z_masked: &Array2<f64>) -> Result<Array1<f64>> {
    let out = bundle.discriminator.forward(z_masked)?;
    Ok(out.index_axis(Axis(1), 0).to_owned())
}
