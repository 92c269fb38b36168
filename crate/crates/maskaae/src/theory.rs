//! Numerical checks behind the dimension-selection story: the covering
//! construction for the image of a Lipschitz map and its vanishing
//! volume bound, a k-nearest-neighbor cross-entropy proxy for the prior
//! mismatch blowup, and reconstruction residual probes.
//!
//! These are measurements, not proofs — each operation either evaluates
//! a closed-form constant exactly or Monte-Carlo-probes a claim whose
//! exact value is out of reach (ball-overlap volumes, singular cross
//! entropies). The estimators deliberately err on the side the argument
//! needs: the image-volume estimate ignores overlaps (an upper bound,
//! like the union bound in the proof), and the cross-entropy proxy uses
//! a fixed small k so that support collapse inflates it sharply.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::{digamma, gamma, ln_gamma};

use crate::error::{MaaeError, Result};
use crate::net::{decode, encode, ModelBundle};
use crate::rng::{stream_rng, Stream};

/// Domain/codomain geometry for the covering argument: an L-Lipschitz
/// map [0,1]^α → ℝ^β covered on a grid of resolution ε.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoveringSpec {
    pub alpha: u32,
    pub beta: u32,
    pub lipschitz: f64,
    pub epsilon: u32,
}

impl CoveringSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 1 || self.beta < 1 {
            return Err(MaaeError::invalid("alpha and beta must be ≥ 1"));
        }
        if !(self.lipschitz >= 0.0) || !self.lipschitz.is_finite() {
            return Err(MaaeError::invalid("Lipschitz constant must be finite and ≥ 0"));
        }
        if self.epsilon < 1 {
            return Err(MaaeError::invalid("epsilon must be ≥ 1"));
        }
        Ok(())
    }
}

/// Volume of the unit ball in ℝ^β: π^{β/2}/Γ(β/2+1).
pub fn unit_ball_volume(beta: u32) -> f64 {
    let b = beta as f64;
    std::f64::consts::PI.powf(b / 2.0) / gamma(b / 2.0 + 1.0)
}

/// The constant c = L^β (απ)^{β/2} / Γ(β/2+1) from the covering bound.
pub fn lemma1_constant(spec: &CoveringSpec) -> Result<f64> {
    spec.validate()?;
    let (a, b, l) = (spec.alpha as f64, spec.beta as f64, spec.lipschitz);
    if l == 0.0 {
        return Ok(0.0);
    }
    // range check in log space before committing to linear arithmetic
    let ln_c = b * l.ln() + (b / 2.0) * (a * std::f64::consts::PI).ln() - ln_gamma(b / 2.0 + 1.0);
    if ln_c > 709.0 {
        return Err(MaaeError::Range(format!(
            "covering constant overflows f64 (ln c ≈ {ln_c:.1})"
        )));
    }
    let c = l.powi(spec.beta as i32) * (a * std::f64::consts::PI).powf(b / 2.0)
        / gamma(b / 2.0 + 1.0);
    if !c.is_finite() {
        return Err(MaaeError::Range("covering constant is not finite".into()));
    }
    Ok(c)
}

/// Upper bound on the image volume, c/ε^{β−α}: decreasing in ε when the
/// codomain is strictly wider than the domain, constant when they match.
pub fn lemma1_volume_bound(spec: &CoveringSpec) -> Result<f64> {
    let c = lemma1_constant(spec)?;
    let exp = spec.alpha as i32 - spec.beta as i32;
    Ok(c * (spec.epsilon as f64).powi(exp))
}

/// Distance from a point in [0,1]^α to the nearest grid center
/// ((a₀+0.5)/ε, …); the nearest center is found by coordinate-wise
/// rounding, no search.
pub fn grid_distance(point: &[f64], epsilon: u32) -> f64 {
    let e = epsilon as f64;
    point
        .iter()
        .map(|&x| {
            let cell = (x * e).floor().clamp(0.0, e - 1.0);
            let center = (cell + 0.5) / e;
            (x - center) * (x - center)
        })
        .sum::<f64>()
        .sqrt()
}

/// Max distance from `probes` uniform points to their nearest grid
/// center. The covering claim says this never exceeds √α/(2ε); a probe
/// beyond that bound would be an arithmetic contradiction and reports a
/// numeric error.
pub fn covering_completeness(alpha: u32, epsilon: u32, probes: u64, seed: u64) -> Result<f64> {
    if alpha < 1 || epsilon < 1 {
        return Err(MaaeError::invalid("alpha and epsilon must be ≥ 1"));
    }
    if probes < 1 {
        return Err(MaaeError::invalid("need at least one probe"));
    }
    let mut rng = stream_rng(seed, Stream::Custom(0x434F_5645));
    let mut point = vec![0.0f64; alpha as usize];
    let mut max_dist = 0.0f64;
    for _ in 0..probes {
        for x in point.iter_mut() {
            *x = rng.random::<f64>();
        }
        max_dist = max_dist.max(grid_distance(&point, epsilon));
    }
    let bound = (alpha as f64).sqrt() / (2.0 * epsilon as f64);
    if max_dist > bound + 1e-12 {
        return Err(MaaeError::numeric(format!(
            "covering violated: probe at distance {max_dist} > {bound}"
        )));
    }
    Ok(max_dist)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Overlap-ignoring Monte-Carlo upper estimate of the volume of an
/// ε-cell-cover of the image of `map` on [0,1]^α.
///
/// Each grid cell contributes the β-ball volume of its *empirical*
/// image radius (max distance from the center's image over
/// `samples_per_cell` uniform draws inside the cell). Since the
/// empirical radius never exceeds L·√α/(2ε), the sum sits below the
/// closed-form bound for any valid Lipschitz constant — by at least the
/// 2^β the bound gives away. A constant map therefore scores 0.
pub fn image_volume_estimate<F>(
    map: F,
    alpha: u32,
    epsilon: u32,
    samples_per_cell: u32,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if alpha < 1 || epsilon < 1 || samples_per_cell < 1 {
        return Err(MaaeError::invalid(
            "alpha, epsilon and samples_per_cell must be ≥ 1",
        ));
    }
    let cells = (epsilon as u64).checked_pow(alpha).unwrap_or(u64::MAX);
    if cells > 1 << 20 {
        return Err(MaaeError::invalid(format!(
            "{cells} grid cells is past the supported budget (ε^α ≤ 2^20)"
        )));
    }
    let e = epsilon as f64;
    let mut rng = stream_rng(seed, Stream::Custom(0x494D_4147));
    let mut beta: Option<usize> = None;
    let mut total = 0.0f64;
    let mut index = vec![0u32; alpha as usize];
    let mut center = vec![0.0f64; alpha as usize];
    let mut probe = vec![0.0f64; alpha as usize];
    for _ in 0..cells {
        for (c, &a) in center.iter_mut().zip(index.iter()) {
            *c = (a as f64 + 0.5) / e;
        }
        let y0 = map(&center);
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(MaaeError::numeric("map produced a non-finite value"));
        }
        match beta {
            None => beta = Some(y0.len()),
            Some(b) if b != y0.len() => {
                return Err(MaaeError::shape("map output dimension changed between cells"))
            }
            _ => {}
        }
        let mut radius = 0.0f64;
        for _ in 0..samples_per_cell {
            for (p, &a) in probe.iter_mut().zip(index.iter()) {
                *p = (a as f64 + rng.random::<f64>()) / e;
            }
            let y = map(&probe);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(MaaeError::numeric("map produced a non-finite value"));
            }
            radius = radius.max(euclid(&y, &y0));
        }
        let b = beta.unwrap() as u32;
        total += unit_ball_volume(b) * radius.powi(b as i32);
        // odometer over the α-dimensional grid
        for a in index.iter_mut() {
            *a += 1;
            if *a < epsilon {
                break;
            }
            *a = 0;
        }
    }
    Ok(total)
}

/// k-nearest-neighbor cross-entropy proxy Ĥ(P, Q): density of Q is
/// estimated at each P-sample from the distance ν_k to its k-th nearest
/// Q-sample,
///
///   Ĥ = (m/N_p)·Σᵢ ln ν_k(i) + ln N_q + ln c_m − ψ(k),
///
/// with c_m the unit-ball volume and ψ the digamma function. When Q's
/// support is lower-dimensional than the ambient space the ν_k stay
/// bounded away from the shrinking typical spacing and the estimate
/// grows without limit — the measurable echo of an infinite cross
/// entropy. Zero distances (duplicate points) are floored at 1e-12 with
/// a warning.
pub fn estimate_cross_entropy_proxy(
    prior: &Array2<f64>,
    encoded: &Array2<f64>,
    k: usize,
) -> Result<f64> {
    let m = prior.ncols();
    if m == 0 || encoded.ncols() != m {
        return Err(MaaeError::shape(format!(
            "sample widths disagree: {} vs {}",
            m,
            encoded.ncols()
        )));
    }
    let n_p = prior.nrows();
    let n_q = encoded.nrows();
    if n_p < 1 || n_q < 1 {
        return Err(MaaeError::invalid("need at least one sample on each side"));
    }
    if k < 1 || k >= n_q {
        return Err(MaaeError::invalid(format!(
            "k must satisfy 1 ≤ k < {n_q}, got {k}"
        )));
    }
    let mut warned = false;
    let mut log_sum = 0.0f64;
    // brute force with a running top-k per query; k is small
    let mut best = vec![f64::INFINITY; k];
    for i in 0..n_p {
        best.iter_mut().for_each(|b| *b = f64::INFINITY);
        let p = prior.row(i);
        for j in 0..n_q {
            let q = encoded.row(j);
            let mut d2 = 0.0;
            for c in 0..m {
                let diff = p[c] - q[c];
                d2 += diff * diff;
            }
            // replace the current worst if this one is closer
            let (worst_idx, &worst) = best
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            if d2 < worst {
                best[worst_idx] = d2;
            }
        }
        let kth = best.iter().cloned().fold(f64::NEG_INFINITY, f64::max).sqrt();
        let nu = if kth > 0.0 {
            kth
        } else {
            if !warned {
                log::warn!("duplicate points in cross-entropy proxy; flooring ν at 1e-12");
                warned = true;
            }
            1e-12
        };
        log_sum += nu.ln();
    }
    let est = (m as f64) * log_sum / (n_p as f64)
        + (n_q as f64).ln()
        + unit_ball_volume(m as u32).ln()
        - digamma(k as f64);
    if !est.is_finite() {
        return Err(MaaeError::numeric("cross-entropy proxy is not finite"));
    }
    Ok(est)
}

/// Mean Euclidean reconstruction error ‖x − D(μ⊙E(x))‖ over a dataset —
/// how far the model is from satisfying the reconstruction requirement.
pub fn r1_residual(bundle: &ModelBundle, data: &Array2<f64>) -> Result<f64> {
    if data.nrows() == 0 {
        return Err(MaaeError::invalid("empty dataset"));
    }
    let mu = bundle.mu();
    let mut total = 0.0f64;
    for chunk in data.axis_chunks_iter(ndarray::Axis(0), 1024) {
        let x = chunk.to_owned();
        let z = encode(bundle, &x)?;
        let masked = &z * &mu;
        let recon = decode(bundle, &masked)?;
        let diff = &x - &recon;
        for row in diff.rows() {
            total += row.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
    }
    Ok(total / data.nrows() as f64)
}

/// Draw standard-normal samples and an optional low-rank copy confined
/// to the first `support` coordinates — the controlled experiment behind
/// the cross-entropy growth claim.
pub fn subspace_samples(
    rows: usize,
    m: usize,
    support: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    if support > m {
        return Err(MaaeError::invalid("support dimension exceeds ambient"));
    }
    let mut z = crate::rng::normal_matrix(rng, rows, m);
    for mut row in z.rows_mut() {
        for c in support..m {
            row[c] = 0.0;
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{MaskState, Mlp, MlpConfig, Variant};
    use crate::synthetic::{generating_function, GeneratorSpec};
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    fn spec(alpha: u32, beta: u32, l: f64, eps: u32) -> CoveringSpec {
        CoveringSpec { alpha, beta, lipschitz: l, epsilon: eps }
    }

    #[test]
    fn constant_matches_the_pi_case() {
        // L=1, α=1, β=2: 1·(π)^1/Γ(2) = π
        let c = lemma1_constant(&spec(1, 2, 1.0, 1)).unwrap();
        assert!((c - std::f64::consts::PI).abs() < 1e-12, "c = {c}");
    }

    #[test]
    fn constant_matches_the_beta_one_case() {
        // √π/Γ(3/2) = √π/(√π/2) = 2
        let c = lemma1_constant(&spec(1, 1, 1.0, 1)).unwrap();
        assert!((c - 2.0).abs() < 1e-12, "c = {c}");
    }

    #[test]
    fn zero_lipschitz_gives_zero() {
        assert_eq!(lemma1_constant(&spec(3, 4, 0.0, 2)).unwrap(), 0.0);
    }

    #[test]
    fn extreme_beta_is_a_range_error() {
        let r = lemma1_constant(&spec(1, 800, 1e5, 2));
        assert!(matches!(r, Err(MaaeError::Range(_))), "got {r:?}");
    }

    #[test]
    fn volume_bound_pi_over_ten() {
        let b = lemma1_volume_bound(&spec(1, 2, 1.0, 10)).unwrap();
        assert!((b - std::f64::consts::PI / 10.0).abs() < 1e-12, "bound = {b}");
    }

    #[test]
    fn volume_bound_flat_when_dims_match_and_halves_per_doubling() {
        let flat4 = lemma1_volume_bound(&spec(3, 3, 2.0, 4)).unwrap();
        let flat8 = lemma1_volume_bound(&spec(3, 3, 2.0, 8)).unwrap();
        assert_eq!(flat4, flat8);
        // β−α = 1: doubling ε halves the bound exactly (power of two)
        let b4 = lemma1_volume_bound(&spec(1, 2, 1.5, 4)).unwrap();
        let b8 = lemma1_volume_bound(&spec(1, 2, 1.5, 8)).unwrap();
        assert_eq!(b4, 2.0 * b8);
    }

    #[test]
    fn grid_distance_hand_cases() {
        // exactly at a center
        assert_eq!(grid_distance(&[0.125], 4), 0.0);
        // the worst case sits on a cell boundary: α=1, ε=4, point 0.25
        let d = grid_distance(&[0.25], 4);
        assert!((d - 0.125).abs() < 1e-15, "d = {d}");
        assert!((d - 1.0f64.sqrt() / 8.0).abs() < 1e-15);
    }

    #[test]
    fn covering_holds_over_many_probes() {
        let max = covering_completeness(2, 4, 100_000, 7).unwrap();
        let bound = 2.0f64.sqrt() / 8.0;
        assert!(max <= bound + 1e-12, "max {max} > bound {bound}");
        // the bound is nearly attained — the grid is tight
        assert!(max > 0.9 * bound, "max {max} looks too small");
    }

    #[test]
    fn constant_map_has_zero_image_volume() {
        let est = image_volume_estimate(|_| vec![3.0, -1.0, 2.0], 2, 4, 16, 1).unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn linear_embedding_volume_shrinks_with_resolution() {
        // t ↦ (t/√2, t/√2) is 1-Lipschitz from [0,1] into ℝ²
        let f = |u: &[f64]| {
            let s = u[0] / 2f64.sqrt();
            vec![s, s]
        };
        let mut prev = f64::INFINITY;
        for eps in [4u32, 8, 16] {
            let est = image_volume_estimate(f, 1, eps, 64, 2).unwrap();
            let bound = lemma1_volume_bound(&spec(1, 2, 1.0, eps)).unwrap();
            assert!(est <= bound, "ε={eps}: estimate {est} above bound {bound}");
            assert!(est < prev, "ε={eps}: estimate {est} did not shrink from {prev}");
            prev = est;
        }
    }

    #[test]
    fn synthetic_slice_volume_shrinks_with_resolution() {
        let mut gspec = GeneratorSpec::with_defaults(2, 31);
        gspec.k = 8;
        gspec.d = 3;
        gspec.cov_diag = vec![1.0; 2];
        let f = move |u: &[f64]| {
            let z = Array2::from_shape_vec((1, 2), u.to_vec()).unwrap();
            let y = generating_function(&gspec, &z).unwrap();
            y.row(0).to_vec()
        };
        let e4 = image_volume_estimate(&f, 2, 4, 24, 3).unwrap();
        let e8 = image_volume_estimate(&f, 2, 8, 24, 3).unwrap();
        assert!(e8 < e4, "ε=8 estimate {e8} not below ε=4 estimate {e4}");
    }

    #[test]
    fn non_finite_map_is_a_numeric_error() {
        let r = image_volume_estimate(|_| vec![f64::NAN], 1, 2, 4, 4);
        assert!(matches!(r, Err(MaaeError::Numeric { .. })));
    }

    #[test]
    fn matched_gaussians_recover_the_analytic_cross_entropy() {
        let mut rng = stream_rng(11, Stream::Custom(1));
        let prior = crate::rng::normal_matrix(&mut rng, 5000, 4);
        let encoded = crate::rng::normal_matrix(&mut rng, 5000, 4);
        let est = estimate_cross_entropy_proxy(&prior, &encoded, 5).unwrap();
        let analytic = 2.0 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        let rel = (est - analytic).abs() / analytic;
        println!("kNN CE estimate {est:.4}, analytic {analytic:.4}, rel {rel:.4}");
        assert!(rel < 0.15, "estimate {est} vs analytic {analytic}");
    }

    #[test]
    fn collapsed_support_inflates_the_estimate() {
        let mut rng = stream_rng(12, Stream::Custom(2));
        let prior = crate::rng::normal_matrix(&mut rng, 2000, 8);
        let matched = crate::rng::normal_matrix(&mut rng, 2000, 8);
        let collapsed = subspace_samples(2000, 8, 2, &mut rng).unwrap();
        let h_match = estimate_cross_entropy_proxy(&prior, &matched, 5).unwrap();
        let h_low = estimate_cross_entropy_proxy(&prior, &collapsed, 5).unwrap();
        println!("matched {h_match:.3}, collapsed-support {h_low:.3}");
        assert!(
            h_low > h_match + 2.0,
            "collapse only moved the estimate from {h_match} to {h_low}"
        );
    }

    #[test]
    fn duplicate_points_are_floored_not_fatal() {
        let prior = array![[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]];
        let encoded = array![[1.0, 2.0], [1.0, 2.0], [5.0, 5.0]];
        let est = estimate_cross_entropy_proxy(&prior, &encoded, 1).unwrap();
        assert!(est.is_finite());
    }

    #[test]
    fn k_at_least_n_is_invalid() {
        let a = array![[0.0], [1.0]];
        assert!(matches!(
            estimate_cross_entropy_proxy(&a, &a, 2),
            Err(MaaeError::InvalidArgument(_))
        ));
        assert!(matches!(
            estimate_cross_entropy_proxy(&a, &a, 0),
            Err(MaaeError::InvalidArgument(_))
        ));
    }

    fn identity_mlp(dim: usize) -> Mlp {
        let mut net = Mlp::zeros(MlpConfig::stack(dim, 1, 0, dim)).unwrap();
        net.weights[0] = Array2::eye(dim);
        net
    }

    #[test]
    fn identity_stub_has_zero_residual() {
        let dim = 3;
        let bundle = ModelBundle::new(
            identity_mlp(dim),
            identity_mlp(dim),
            Mlp::zeros(MlpConfig::stack(dim, 1, 0, 1)).unwrap(),
            MaskState { theta: Array1::zeros(dim), m: dim },
            Variant::WaeBaseline,
        )
        .unwrap();
        let data = array![[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]];
        let r = r1_residual(&bundle, &data).unwrap();
        assert!(r.abs() < 1e-12, "residual {r}");
    }

    #[test]
    fn zero_decoder_residual_is_mean_norm() {
        let dim = 2;
        let bundle = ModelBundle::new(
            identity_mlp(dim),
            Mlp::zeros(MlpConfig::stack(dim, 1, 0, dim)).unwrap(),
            Mlp::zeros(MlpConfig::stack(dim, 1, 0, 1)).unwrap(),
            MaskState { theta: Array1::zeros(dim), m: dim },
            Variant::WaeBaseline,
        )
        .unwrap();
        let data = array![[3.0, 4.0], [0.0, 2.0]];
        let r = r1_residual(&bundle, &data).unwrap();
        assert!((r - (5.0 + 2.0) / 2.0).abs() < 1e-12, "residual {r}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn volume_bound_monotone_iff_codomain_wider(
            alpha in 1u32..5,
            beta in 1u32..5,
            l in 0.5f64..3.0,
            eps in 2u32..16,
        ) {
            let lo = lemma1_volume_bound(&spec(alpha, beta, l, eps)).unwrap();
            let hi = lemma1_volume_bound(&spec(alpha, beta, l, eps * 2)).unwrap();
            if beta > alpha {
                prop_assert!(hi < lo);
            } else if beta == alpha {
                prop_assert!((hi - lo).abs() <= 1e-12 * lo.abs());
            } else {
                prop_assert!(hi > lo);
            }
        }

        #[test]
        fn covering_bound_holds_for_any_geometry(
            alpha in 1u32..4,
            eps in 1u32..9,
            seed in 0u64..50,
        ) {
            let max = covering_completeness(alpha, eps, 500, seed).unwrap();
            let bound = (alpha as f64).sqrt() / (2.0 * eps as f64);
            prop_assert!(max <= bound + 1e-12);
        }
    }
}
