//! RMSProp with one accumulator per parameter blob.
//!
//! Standard form: acc ← ρ·acc + (1−ρ)·g², p ← p − η·g/√(acc + ε).
//! Each parameter group (autoencoder, discriminator, generator, mask)
//! owns an independent [`OptimizerState`].

use ndarray::Array2;

use crate::error::{MaaeError, Result};

/// Second-moment EMAs mirroring a parameter group's blob shapes.
/// Checkpoints persist the accumulators as raw binary blobs, so no serde
/// here.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub acc: Vec<Array2<f64>>,
    pub steps: u64,
}

impl OptimizerState {
    /// Zero accumulators shaped like `params`.
    pub fn new_like(params: &[&Array2<f64>]) -> Self {
        OptimizerState {
            acc: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            steps: 0,
        }
    }
}

/// One RMSProp update over a parameter group. Grads must align with
/// params blob-by-blob; a NaN/Inf gradient is a numeric error (the
/// caller attaches the training step).
pub fn rmsprop_step(
    params: &mut [&mut Array2<f64>],
    grads: &[Array2<f64>],
    state: &mut OptimizerState,
    eta: f64,
    rho: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.acc.len() {
        return Err(MaaeError::shape(format!(
            "group size mismatch: {} params, {} grads, {} accumulators",
            params.len(),
            grads.len(),
            state.acc.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.dim() != params[i].dim() {
            return Err(MaaeError::shape(format!(
                "blob {i}: grad {:?} vs param {:?}",
                g.dim(),
                params[i].dim()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(MaaeError::numeric(format!(
                "non-finite gradient in blob {i}"
            )));
        }
    }
    for ((p, g), acc) in params.iter_mut().zip(grads).zip(&mut state.acc) {
        acc.zip_mut_with(g, |a, &gv| *a = rho * *a + (1.0 - rho) * gv * gv);
        ndarray::Zip::from(&mut **p)
            .and(g)
            .and(&*acc)
            .for_each(|pv, &gv, &av| *pv -= eta * gv / (av + eps).sqrt());
    }
    state.steps += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = array![[1.0, -2.0], [0.5, 3.0]];
        let orig = p.clone();
        let g = vec![Array2::zeros((2, 2))];
        let mut state = OptimizerState::new_like(&[&p]);
        rmsprop_step(&mut [&mut p], &g, &mut state, 0.1, 0.9, 1e-8).unwrap();
        assert_eq!(p, orig);
        assert_eq!(state.steps, 1);
    }

    #[test]
    fn scalar_hand_arithmetic() {
        // acc = 0.9·0 + 0.1·1 = 0.1; p = 1 − 0.1/√0.1 ≈ 0.68377
        let mut p = array![[1.0]];
        let g = vec![array![[1.0]]];
        let mut state = OptimizerState::new_like(&[&p]);
        rmsprop_step(&mut [&mut p], &g, &mut state, 0.1, 0.9, 0.0).unwrap();
        assert!((state.acc[0][(0, 0)] - 0.1).abs() < 1e-15);
        let expected = 1.0 - 0.1 / 0.1_f64.sqrt();
        assert!((p[(0, 0)] - expected).abs() < 1e-15);
        assert!((p[(0, 0)] - 0.6838).abs() < 1e-4);
    }

    #[test]
    fn constant_gradient_accumulator_closed_form() {
        // after t steps of constant g: acc = (1 − ρᵗ)·g²
        let mut p = array![[0.0]];
        let g = vec![array![[2.0]]];
        let rho = 0.9;
        let mut state = OptimizerState::new_like(&[&p]);
        for t in 1..=20u32 {
            rmsprop_step(&mut [&mut p], &g, &mut state, 0.01, rho, 1e-8).unwrap();
            let expected = (1.0 - rho.powi(t as i32)) * 4.0;
            let got = state.acc[0][(0, 0)];
            assert!(
                (got - expected).abs() < 1e-12,
                "t={t}: acc {got}, closed form {expected}"
            );
        }
    }

    #[test]
    fn nan_gradient_is_a_numeric_error() {
        let mut p = array![[1.0]];
        let g = vec![array![[f64::NAN]]];
        let mut state = OptimizerState::new_like(&[&p]);
        let err = rmsprop_step(&mut [&mut p], &g, &mut state, 0.1, 0.9, 1e-8).unwrap_err();
        assert!(matches!(err, MaaeError::Numeric { .. }));
        // params untouched on failure
        assert_eq!(p, array![[1.0]]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = array![[1.0, 2.0]];
        let g = vec![array![[1.0]]];
        let mut state = OptimizerState::new_like(&[&p]);
        assert!(matches!(
            rmsprop_step(&mut [&mut p], &g, &mut state, 0.1, 0.9, 1e-8),
            Err(MaaeError::Shape(_))
        ));
    }
}
