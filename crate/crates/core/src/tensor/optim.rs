use super::{cst, Scalar};
use crate::error::{Error, Result};

/// Plain RMSprop (no momentum, no centering) for one parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState<S> {
    pub sq_avg: Vec<S>,
    pub rho: S,
    pub eps: S,
    pub lr: S,
}

impl<S: Scalar> RmspropState<S> {
    pub const DEFAULT_RHO: f64 = 0.9;
    pub const DEFAULT_EPS: f64 = 1e-7;

    pub fn new(len: usize, lr: f64) -> Self {
        RmspropState {
            sq_avg: vec![S::zero(); len],
            rho: cst(Self::DEFAULT_RHO),
            eps: cst(Self::DEFAULT_EPS),
            lr: cst(lr),
        }
    }
}

/// `sq ← ρ·sq + (1−ρ)·g²;  p ← p − lr·g / (√sq + ε)`.
///
/// Non-finite gradients are rejected before anything is modified.
pub fn rmsprop_step<S: Scalar>(params: &mut [S], grads: &[S], state: &mut RmspropState<S>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.sq_avg.len() {
        return Err(Error::shape(
            "rmsprop_step",
            "parameters",
            format!(
                "{} params, {} grads, {} accumulator entries",
                params.len(),
                grads.len(),
                state.sq_avg.len()
            ),
        ));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            op: "rmsprop_step",
            detail: format!("gradient[{i}] = {}", grads[i]),
        });
    }
    let keep = state.rho;
    let take = S::one() - keep;
    for ((p, &g), sq) in params.iter_mut().zip(grads).zip(state.sq_avg.iter_mut()) {
        *sq = keep * *sq + take * g * g;
        *p -= state.lr * g / (sq.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3f64, -1.0];
        let mut s = RmspropState::new(2, 1e-4);
        rmsprop_step(&mut p, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(p, vec![0.3, -1.0]);
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = vec![0.0f64];
        let mut s = RmspropState::new(1, 1e-4);
        rmsprop_step(&mut p, &[1.0], &mut s).unwrap();
        assert!((s.sq_avg[0] - 0.1).abs() < 1e-15);
        // −1e-4 / (√0.1 + 1e-7)
        assert!((p[0] + 3.1622767e-4).abs() < 1e-10, "{}", p[0]);
    }

    #[test]
    fn coordinates_are_independent() {
        let mut joint = vec![1.0f64, 2.0];
        let mut s = RmspropState::new(2, 1e-2);
        rmsprop_step(&mut joint, &[0.5, -3.0], &mut s).unwrap();
        for (i, g) in [0.5, -3.0].into_iter().enumerate() {
            let mut single = vec![[1.0, 2.0][i]];
            let mut s1 = RmspropState::new(1, 1e-2);
            rmsprop_step(&mut single, &[g], &mut s1).unwrap();
            assert_eq!(single[0], joint[i]);
        }
    }

    #[test]
    fn non_finite_gradient_rejected_untouched() {
        let mut p = vec![1.0f32, 1.0];
        let mut s = RmspropState::new(2, 1e-4);
        let err = rmsprop_step(&mut p, &[0.1, f32::NAN], &mut s).unwrap_err();
        assert!(err.to_string().contains("gradient[1]"));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(s.sq_avg, vec![0.0, 0.0]);
    }
}
