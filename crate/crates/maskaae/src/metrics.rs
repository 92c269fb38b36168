//! Evaluation: Fréchet distance between Gaussian fits, the normalized
//! average off-diagonal covariance (NAC), active-dimension counts, and
//! the per-step [`MetricsRecord`] that lands in `metrics.jsonl`.
//!
//! The Fréchet distance is the desk-scale stand-in for FID: features are
//! raw data coordinates (or a PCA-whitened projection) instead of an
//! Inception embedding, so numbers are only comparable within one
//! extractor choice.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MaaeError, Result};
use crate::loss::{loss_ae, loss_dm, loss_gen, loss_mask, wasserstein_gap, LossWeights};
use crate::net::{active_dimensions, decode, encode, ModelBundle};
use crate::rng::{normal_matrix, sample_indices, stream_rng, uniform_row, Stream};

/// One evaluation snapshot. `mu` is the full mask vector so the trace
/// can be replayed later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub frechet: f64,
    pub nac: f64,
    #[serde(rename = "m_A")]
    pub m_a: usize,
    pub loss_ae: f64,
    pub loss_dm: f64,
    pub loss_gen: f64,
    pub loss_mask: f64,
    pub omega: f64,
    pub mu: Vec<f64>,
}

/// Empirical mean and unbiased covariance of rows.
fn mean_cov(x: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = x.nrows();
    let mean = x.sum_axis(Axis(0)) / n as f64;
    let centered = x - &mean.broadcast((n, x.ncols())).unwrap();
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0).max(1.0);
    (mean, cov)
}

/// Eigenvalues of a symmetric matrix, tiny negatives clipped to zero.
fn clipped_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let d = m.nrows();
    let sym = nalgebra::DMatrix::from_fn(d, d, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0))
        .collect()
}

/// Symmetric PSD square root via eigendecomposition.
fn psd_sqrt(m: &Array2<f64>) -> Array2<f64> {
    let d = m.nrows();
    let sym = nalgebra::DMatrix::from_fn(d, d, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let eig = sym.symmetric_eigen();
    let mut vals = eig.eigenvalues;
    for v in vals.iter_mut() {
        *v = v.max(0.0).sqrt();
    }
    let q = eig.eigenvectors;
    let root = &q * nalgebra::DMatrix::from_diagonal(&vals) * q.transpose();
    Array2::from_shape_fn((d, d), |(i, j)| root[(i, j)])
}

/// Fréchet distance between two Gaussians given their moments:
/// ‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2}), computed through the
/// stabilized form Tr((Σ₂^{1/2} Σ₁ Σ₂^{1/2})^{1/2}).
pub fn frechet_from_moments(
    mean1: &Array1<f64>,
    cov1: &Array2<f64>,
    mean2: &Array1<f64>,
    cov2: &Array2<f64>,
) -> Result<f64> {
    let p = mean1.len();
    if mean2.len() != p || cov1.dim() != (p, p) || cov2.dim() != (p, p) {
        return Err(MaaeError::shape("moment dimensions disagree"));
    }
    let mean_term: f64 = mean1
        .iter()
        .zip(mean2.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let root2 = psd_sqrt(cov2);
    let inner = root2.dot(cov1).dot(&root2);
    let tr_sqrt: f64 = clipped_eigenvalues(&inner).iter().map(|l| l.sqrt()).sum();
    let tr1: f64 = (0..p).map(|i| cov1[(i, i)]).sum();
    let tr2: f64 = (0..p).map(|i| cov2[(i, i)]).sum();
    Ok(mean_term + tr1 + tr2 - 2.0 * tr_sqrt)
}

/// Fréchet distance between Gaussian fits of two sample sets.
pub fn frechet_distance(real_feats: &Array2<f64>, gen_feats: &Array2<f64>) -> Result<f64> {
    if real_feats.ncols() != gen_feats.ncols() {
        return Err(MaaeError::shape("feature widths disagree"));
    }
    if real_feats.iter().any(|v| !v.is_finite()) || gen_feats.iter().any(|v| !v.is_finite())
    {
        return Err(MaaeError::invalid("non-finite feature values"));
    }
    let p = real_feats.ncols();
    if real_feats.nrows() < p + 1 || gen_feats.nrows() < p + 1 {
        log::warn!(
            "frechet: fitting {}×{} / {}×{} — fewer samples than p+1, covariance is rank-deficient",
            real_feats.nrows(),
            p,
            gen_feats.nrows(),
            p
        );
    }
    let (m1, c1) = mean_cov(real_feats);
    let (m2, c2) = mean_cov(gen_feats);
    frechet_from_moments(&m1, &c1, &m2, &c2)
}

/// Projection onto the top-p principal components of the fitting data,
/// scaled to unit variance.
#[derive(Debug, Clone)]
pub struct PcaWhitener {
    mean: Array1<f64>,
    /// d×p, columns are principal directions scaled by 1/√λ.
    projection: Array2<f64>,
}

impl PcaWhitener {
    pub fn fit(x: &Array2<f64>, p: usize) -> Result<Self> {
        let d = x.ncols();
        if p > d {
            return Err(MaaeError::invalid(format!(
                "cannot whiten to {p} dims from {d}-dim data"
            )));
        }
        if p < 1 || x.nrows() < 2 {
            return Err(MaaeError::invalid("whitener needs p ≥ 1 and ≥ 2 samples"));
        }
        let (mean, cov) = mean_cov(x);
        let sym = nalgebra::DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[(i, j)] + cov[(j, i)]));
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut projection = Array2::zeros((d, p));
        for (col, &src) in order.iter().take(p).enumerate() {
            let lambda = eig.eigenvalues[src];
            if lambda <= 1e-12 {
                return Err(MaaeError::Degenerate(format!(
                    "component {col} has vanishing variance {lambda:.3e}; reduce p"
                )));
            }
            let scale = 1.0 / lambda.sqrt();
            for r in 0..d {
                projection[(r, col)] = eig.eigenvectors[(r, src)] * scale;
            }
        }
        Ok(PcaWhitener { mean, projection })
    }

    pub fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(MaaeError::shape("whitener input width mismatch"));
        }
        let n = x.nrows();
        let centered = x - &self.mean.broadcast((n, x.ncols())).unwrap();
        Ok(centered.dot(&self.projection))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    Identity,
    PcaW,
}

/// Map raw samples to feature space. `PcaW` requires a fitted whitener.
pub fn feature_extract(
    x: &Array2<f64>,
    kind: ExtractorKind,
    whitener: Option<&PcaWhitener>,
) -> Result<Array2<f64>> {
    match kind {
        ExtractorKind::Identity => Ok(x.clone()),
        ExtractorKind::PcaW => match whitener {
            Some(w) => w.transform(x),
            None => Err(MaaeError::State(
                "pca_w extractor used without a fitted whitener".into(),
            )),
        },
    }
}

/// Average off-diagonal entry of the min-max-normalized absolute scatter
/// matrix, restricted to `active` dims. An active set of size ≤ 1 has no
/// off-diagonal entries and scores 0 by convention.
pub fn nac(encodings: &Array2<f64>, active: &[usize]) -> Result<f64> {
    let b = encodings.nrows();
    let m = encodings.ncols();
    if b < 2 {
        return Err(MaaeError::invalid("nac needs at least 2 encodings"));
    }
    if active.is_empty() {
        return Err(MaaeError::invalid("nac needs a nonempty active set"));
    }
    if active.iter().any(|&j| j >= m) {
        return Err(MaaeError::shape("active index out of range"));
    }
    if active.len() == 1 {
        return Ok(0.0);
    }
    // scatter matrix without the 1/(b−1) factor, element-wise absolute
    let mean = encodings.sum_axis(Axis(0)) / b as f64;
    let centered = encodings - &mean.broadcast((b, m)).unwrap();
    let scatter = centered.t().dot(&centered).mapv(f64::abs);
    let max = scatter.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = scatter.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= min {
        return Err(MaaeError::Degenerate(
            "scatter matrix is constant; encodings carry no signal".into(),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for &i in active {
        for &j in active {
            if i != j {
                sum += (scatter[(i, j)] - min) / (max - min);
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

/// Evaluation controls; defaults mirror the reported setup (NAC batch
/// 5000, τ = 0.5, raw-coordinate features).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Samples per side for the Fréchet fit.
    pub eval_samples: usize,
    /// Encodings used for NAC (capped at the dataset size).
    pub nac_batch: usize,
    /// Active-dimension threshold.
    pub tau: f64,
    pub extractor: ExtractorKind,
    /// Whitened dimensionality when `extractor` is `PcaW`.
    pub pca_dims: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            eval_samples: 1000,
            nac_batch: 5000,
            tau: 0.5,
            extractor: ExtractorKind::Identity,
            pca_dims: 64,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_samples < 2 {
            return Err(MaaeError::invalid("eval_samples must be ≥ 2"));
        }
        if self.nac_batch < 2 {
            return Err(MaaeError::invalid("nac_batch must be ≥ 2"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(MaaeError::invalid("tau must lie in (0,1)"));
        }
        if self.extractor == ExtractorKind::PcaW && self.pca_dims < 1 {
            return Err(MaaeError::invalid("pca_dims must be ≥ 1"));
        }
        Ok(())
    }
}

/// Full evaluation pass on a parameter snapshot. All randomness comes
/// from the per-step `Eval` stream, consumed in a fixed order (data
/// indices, prior draws, β₁, NAC indices), so a record is a pure
/// function of (bundle, data, weights, cfg, seed, step).
pub fn evaluate(
    bundle: &ModelBundle,
    data: &Array2<f64>,
    weights: &LossWeights,
    cfg: &EvalConfig,
    seed: u64,
    step: u64,
) -> Result<MetricsRecord> {
    cfg.validate()?;
    let m = bundle.m();
    let n_data = data.nrows();
    if n_data < 2 {
        return Err(MaaeError::invalid("evaluation needs at least 2 samples"));
    }
    let mut rng = stream_rng(seed, Stream::Eval(step));

    let idx = sample_indices(&mut rng, n_data, cfg.eval_samples);
    let x_eval = ndarray::Array2::from_shape_fn((cfg.eval_samples, data.ncols()), |(r, c)| {
        data[(idx[r], c)]
    });
    let z_prior = normal_matrix(&mut rng, cfg.eval_samples, m);
    let beta1 = uniform_row(&mut rng, cfg.eval_samples);

    let l_ae = loss_ae(&x_eval, bundle, weights)?;
    let l_dm = loss_dm(&x_eval, &z_prior, bundle, &beta1, weights)?;
    let l_gen = loss_gen(&x_eval, bundle)?;
    let l_mask = loss_mask(&x_eval, &z_prior, bundle, weights)?;
    let omega = wasserstein_gap(&x_eval, &z_prior, bundle)?;

    let mu = bundle.mu();
    let m_a = active_dimensions(&mu, cfg.tau)?;

    // generation: decode masked prior draws
    let mu_row = mu.clone().insert_axis(Axis(0));
    let z_masked = &z_prior * &mu_row;
    let x_gen = decode(bundle, &z_masked)?;

    let whitener = match cfg.extractor {
        ExtractorKind::Identity => None,
        ExtractorKind::PcaW => Some(PcaWhitener::fit(&x_eval, cfg.pca_dims)?),
    };
    let real_feats = feature_extract(&x_eval, cfg.extractor, whitener.as_ref())?;
    let gen_feats = feature_extract(&x_gen, cfg.extractor, whitener.as_ref())?;
    let frechet = frechet_distance(&real_feats, &gen_feats)?;

    let nac_val = if m_a <= 1 {
        0.0
    } else {
        let b_s = cfg.nac_batch.min(n_data);
        let nac_idx = sample_indices(&mut rng, n_data, b_s);
        let x_nac = ndarray::Array2::from_shape_fn((b_s, data.ncols()), |(r, c)| {
            data[(nac_idx[r], c)]
        });
        let enc = encode(bundle, &x_nac)?;
        let active: Vec<usize> = mu
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > cfg.tau)
            .map(|(j, _)| j)
            .collect();
        nac(&enc, &active)?
    };

    Ok(MetricsRecord {
        step,
        frechet,
        nac: nac_val,
        m_a,
        loss_ae: l_ae,
        loss_dm: l_dm,
        loss_gen: l_gen,
        loss_mask: l_mask,
        omega,
        mu: mu.to_vec(),
    })
}
