//! Synthetic data with a known true latent dimension.
//!
//! Samples a low-dimensional Gaussian latent and pushes it through a
//! fixed random MLP (two leaky-ReLU hidden layers, linear output). The
//! network's weights are a pure function of the spec seed, so a spec
//! fully determines the data distribution, and the product of layer
//! spectral norms gives a certified Lipschitz bound on the map.
//!
//! Datasets persist in a single self-describing binary container
//! (`MAAE-DS1`): JSON header with the generating spec, then the sample
//! matrix as little-endian f32. Samples are rounded through f32 *before*
//! they are returned in memory, so a reload is bitwise-identical to the
//! dataset you started with.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MaaeError, Result};
use crate::rng::{normal_matrix, stream_rng, Stream};

const MAGIC: &[u8; 8] = b"MAAE-DS1";

/// Everything needed to regenerate a dataset from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// True latent dimension n.
    pub n: usize,
    /// Hidden width of the generating network.
    #[serde(default = "default_width")]
    pub k: usize,
    /// Output (data) dimension.
    #[serde(default = "default_width")]
    pub d: usize,
    /// Fixed at 2; stored so the file format is self-describing.
    #[serde(default = "default_layers")]
    pub num_hidden_layers: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    /// Multiplier on the per-layer 1/√fan_in weight std. 1.0 keeps the
    /// layer operator norms moderate.
    #[serde(default = "default_scale")]
    pub weight_scale: f64,
    /// Diagonal of the latent covariance, length n.
    pub cov_diag: Vec<f64>,
    pub seed: u64,
}

fn default_width() -> usize {
    128
}
fn default_layers() -> usize {
    2
}
fn default_slope() -> f64 {
    0.2
}
fn default_scale() -> f64 {
    1.0
}

impl GeneratorSpec {
    /// Spec with the stock geometry (k = d = 128, unit covariance).
    pub fn with_defaults(n: usize, seed: u64) -> Self {
        GeneratorSpec {
            n,
            k: default_width(),
            d: default_width(),
            num_hidden_layers: default_layers(),
            leaky_slope: default_slope(),
            weight_scale: default_scale(),
            cov_diag: vec![1.0; n],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(MaaeError::invalid("latent dimension n must be ≥ 1"));
        }
        if self.d < self.n {
            return Err(MaaeError::invalid(format!(
                "output dimension d = {} must be ≥ n = {}",
                self.d, self.n
            )));
        }
        if self.k < 1 {
            return Err(MaaeError::invalid("hidden width k must be ≥ 1"));
        }
        if self.num_hidden_layers != 2 {
            return Err(MaaeError::invalid(
                "the generating network is fixed at 2 hidden layers",
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(MaaeError::invalid("leaky_slope must lie in (0, 1)"));
        }
        if !(self.weight_scale > 0.0) {
            return Err(MaaeError::invalid("weight_scale must be positive"));
        }
        if self.cov_diag.len() != self.n {
            return Err(MaaeError::invalid(format!(
                "cov_diag has {} entries, expected n = {}",
                self.cov_diag.len(),
                self.n
            )));
        }
        if self.cov_diag.iter().any(|&v| !(v > 0.0)) {
            return Err(MaaeError::invalid("cov_diag entries must be positive"));
        }
        Ok(())
    }

    /// Hash of the canonical spec JSON; identifies the data distribution.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex(&digest)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// In-memory sample matrix plus provenance.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// count × d, already rounded through f32.
    pub samples: Array2<f64>,
    pub spec_fingerprint: String,
    pub count: usize,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    spec: GeneratorSpec,
    count: u64,
    d: u64,
    created: u64,
}

/// Draws from N(0, diag(cov_diag)), `count` rows of width n.
/// `stream_seed` selects an independent stream; reusing one replays it.
pub fn sample_true_latent(
    spec: &GeneratorSpec,
    count: usize,
    stream_seed: u64,
) -> Result<Array2<f64>> {
    spec.validate()?;
    if count < 1 {
        return Err(MaaeError::invalid("count must be ≥ 1"));
    }
    let mut rng = stream_rng(spec.seed, Stream::Custom(stream_seed));
    let mut z = normal_matrix(&mut rng, count, spec.n);
    for (j, &v) in spec.cov_diag.iter().enumerate() {
        let s = v.sqrt();
        z.column_mut(j).mapv_inplace(|x| x * s);
    }
    Ok(z)
}

/// The realized weight matrices of f, in order: n×k, k×k, k×d.
/// Entries are Gaussian with std `weight_scale/√fan_in`; biases are zero
/// (and therefore not materialized).
pub fn layer_weights(spec: &GeneratorSpec) -> Result<Vec<Array2<f64>>> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::GenWeights);
    let dims = [(spec.n, spec.k), (spec.k, spec.k), (spec.k, spec.d)];
    Ok(dims
        .iter()
        .map(|&(fan_in, fan_out)| {
            let std = spec.weight_scale / (fan_in as f64).sqrt();
            normal_matrix(&mut rng, fan_in, fan_out).mapv(|w| w * std)
        })
        .collect())
}

/// Applies the fixed network f to a batch of latents (count × n → count × d).
pub fn generating_function(spec: &GeneratorSpec, latents: &Array2<f64>) -> Result<Array2<f64>> {
    let weights = layer_weights(spec)?;
    if latents.ncols() != spec.n {
        return Err(MaaeError::shape(format!(
            "latents have {} columns, expected n = {}",
            latents.ncols(),
            spec.n
        )));
    }
    let slope = spec.leaky_slope;
    let mut x = latents.dot(&weights[0]);
    x.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
    let mut x = x.dot(&weights[1]);
    x.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
    Ok(x.dot(&weights[2]))
}

/// Largest singular value, via nalgebra's SVD.
pub fn spectral_norm(m: &Array2<f64>) -> f64 {
    let (r, c) = m.dim();
    let dm = nalgebra::DMatrix::from_fn(r, c, |i, j| m[(i, j)]);
    dm.svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Certified Lipschitz bound on f: the product of layer spectral norms.
/// Leaky ReLU is 1-Lipschitz for slope in (0,1), so it contributes no
/// factor. The realized network can only contract relative to this.
pub fn lipschitz_upper_bound(spec: &GeneratorSpec) -> Result<f64> {
    Ok(layer_weights(spec)?.iter().map(spectral_norm).product())
}

/// Samples a dataset, writes it to `path`, and returns it. The returned
/// matrix has already been rounded through f32, so `load_dataset(path)`
/// gives back exactly this matrix.
pub fn make_dataset(spec: &GeneratorSpec, count: usize, path: &Path) -> Result<Dataset> {
    spec.validate()?;
    if count < 1 {
        return Err(MaaeError::invalid("count must be ≥ 1"));
    }
    let z = sample_true_latent(spec, count, 0)?;
    let x = generating_function(spec, &z)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MaaeError::numeric("generated samples contain NaN/Inf"));
    }
    let rounded = x.mapv(|v| v as f32 as f64);

    let header = DatasetHeader {
        spec: spec.clone(),
        count: count as u64,
        d: spec.d as u64,
        created: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
            .as_secs(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())?;
    w.write_all(&header_json)?;
    for v in rounded.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;

    Ok(Dataset {
        samples: rounded,
        spec_fingerprint: spec.fingerprint(),
        count,
    })
}

/// Reads a `MAAE-DS1` container; returns the dataset and the spec from
/// its header.
pub fn load_dataset(path: &Path) -> Result<(Dataset, GeneratorSpec)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(MaaeError::Format(format!(
            "{}: bad magic bytes (not a dataset file)",
            path.display()
        )));
    }
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4)?;
    let header_len = u32::from_le_bytes(len4) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: DatasetHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| MaaeError::Format(format!("dataset header: {e}")))?;
    let count = header.count as usize;
    let d = header.d as usize;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != count * d * 4 {
        return Err(MaaeError::Integrity(format!(
            "payload is {} bytes, expected {} ({}×{} f32)",
            payload.len(),
            count * d * 4,
            count,
            d
        )));
    }
    let mut samples = Array2::zeros((count, d));
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        samples[(i / d, i % d)] = v;
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(MaaeError::Integrity(
            "dataset payload contains NaN/Inf".into(),
        ));
    }
    let fingerprint = header.spec.fingerprint();
    Ok((
        Dataset {
            samples,
            spec_fingerprint: fingerprint,
            count,
        },
        header.spec,
    ))
}

/// Number of eigenvalues of the sample covariance above `rel_tol` times
/// the largest one. Used to check that generated data spans ≈ n
/// directions, not d.
pub fn covariance_numerical_rank(samples: &Array2<f64>, rel_tol: f64) -> usize {
    let count = samples.nrows();
    let d = samples.ncols();
    let mean = samples.sum_axis(ndarray::Axis(0)) / count as f64;
    let centered = samples - &mean.broadcast((count, d)).unwrap();
    let cov = centered.t().dot(&centered) / (count as f64 - 1.0);
    let dm = nalgebra::DMatrix::from_fn(d, d, |i, j| cov[(i, j)]);
    let eigs = dm.symmetric_eigen().eigenvalues;
    let top = eigs.iter().cloned().fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return 0;
    }
    eigs.iter().filter(|&&e| e > rel_tol * top).count()
}
