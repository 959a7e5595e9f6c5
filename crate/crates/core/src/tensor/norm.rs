use super::{cst, Mode, Scalar, Shape4, Tensor4};
use crate::error::{Error, Result};

/// Per-channel batch normalisation parameters and running statistics.
///
/// Running statistics follow `running = momentum·running + (1−momentum)·batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<S> {
    /// (channels, 1, 1, 1), trainable
    pub gamma: Tensor4<S>,
    /// (channels, 1, 1, 1), trainable
    pub beta: Tensor4<S>,
    pub running_mean: Tensor4<S>,
    pub running_var: Tensor4<S>,
    pub momentum: S,
    pub epsilon: S,
    pub mode: Mode,
}

impl<S: Scalar> BatchNormState<S> {
    pub const DEFAULT_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    /// gamma 1, beta 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Self {
        let shape = Shape4::new(channels, 1, 1, 1);
        BatchNormState {
            gamma: Tensor4::filled(shape, S::one()).with_grad(),
            beta: Tensor4::zeros(shape).with_grad(),
            running_mean: Tensor4::zeros(shape),
            running_var: Tensor4::filled(shape, S::one()),
            momentum: cst(Self::DEFAULT_MOMENTUM),
            epsilon: cst(Self::DEFAULT_EPSILON),
            mode: Mode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape().n
    }

    fn check(&self, op: &'static str, input: Shape4) -> Result<()> {
        if input.c != self.channels() {
            return Err(Error::shape(
                op,
                "channel",
                format!("input {input} vs {} normalised channels", self.channels()),
            ));
        }
        if input.n * input.plane() == 0 {
            return Err(Error::shape(op, "batch", format!("empty reduction set for {input}")));
        }
        Ok(())
    }
}

/// Per-channel mean and (biased) variance over batch and spatial positions.
fn batch_stats<S: Scalar>(x: &Tensor4<S>) -> (Vec<S>, Vec<S>) {
    let s = x.shape();
    let count: S = cst((s.n * s.plane()) as f64);
    let mut mean = vec![S::zero(); s.c];
    let mut var = vec![S::zero(); s.c];
    for c in 0..s.c {
        let mut acc = S::zero();
        for n in 0..s.n {
            for &v in x.plane(n, c) {
                acc += v;
            }
        }
        let m = acc / count;
        let mut sq = S::zero();
        for n in 0..s.n {
            for &v in x.plane(n, c) {
                let d = v - m;
                sq += d * d;
            }
        }
        mean[c] = m;
        var[c] = sq / count;
    }
    (mean, var)
}

pub fn batchnorm_forward<S: Scalar>(input: &Tensor4<S>, s: &mut BatchNormState<S>) -> Result<Tensor4<S>> {
    let shape = input.shape();
    s.check("batchnorm", shape)?;
    let (mean, var) = match s.mode {
        Mode::Train => {
            let (mean, var) = batch_stats(input);
            let keep = s.momentum;
            let take = S::one() - keep;
            for c in 0..shape.c {
                let rm = &mut s.running_mean.data_mut()[c];
                *rm = keep * *rm + take * mean[c];
                let rv = &mut s.running_var.data_mut()[c];
                *rv = keep * *rv + take * var[c];
            }
            (mean, var)
        }
        Mode::Infer => (s.running_mean.data().to_vec(), s.running_var.data().to_vec()),
    };
    let mut out = input.clone();
    for n in 0..shape.n {
        for c in 0..shape.c {
            let inv = S::one() / (var[c] + s.epsilon).sqrt();
            let (g, b, m) = (s.gamma.data()[c], s.beta.data()[c], mean[c]);
            for v in out.plane_mut(n, c) {
                *v = g * ((*v - m) * inv) + b;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct NormGrads<S> {
    pub input: Tensor4<S>,
    pub gamma: Tensor4<S>,
    pub beta: Tensor4<S>,
}

/// Gradients of [`batchnorm_forward`]. In `Train` mode the batch statistics
/// are differentiated through; in `Infer` mode the map is affine.
pub fn batchnorm_backward<S: Scalar>(
    input: &Tensor4<S>,
    s: &BatchNormState<S>,
    grad_out: &Tensor4<S>,
) -> Result<NormGrads<S>> {
    let shape = input.shape();
    s.check("batchnorm_backward", shape)?;
    grad_out.require_shape("batchnorm_backward", shape)?;
    let mut gx = Tensor4::zeros(shape);
    let mut gg = vec![S::zero(); shape.c];
    let mut gb = vec![S::zero(); shape.c];

    let (mean, var) = match s.mode {
        Mode::Train => batch_stats(input),
        Mode::Infer => (s.running_mean.data().to_vec(), s.running_var.data().to_vec()),
    };
    let count: S = cst((shape.n * shape.plane()) as f64);
    for c in 0..shape.c {
        let inv = S::one() / (var[c] + s.epsilon).sqrt();
        let gamma = s.gamma.data()[c];
        let (mut sum_g, mut sum_gx) = (S::zero(), S::zero());
        for n in 0..shape.n {
            for (&g, &x) in grad_out.plane(n, c).iter().zip(input.plane(n, c)) {
                sum_g += g;
                sum_gx += g * ((x - mean[c]) * inv);
            }
        }
        gb[c] = sum_g;
        gg[c] = sum_gx;
        for n in 0..shape.n {
            let x = input.plane(n, c);
            let g = grad_out.plane(n, c);
            let dst = gx.plane_mut(n, c);
            match s.mode {
                Mode::Train => {
                    // dx = γ·inv/M · (M·g − Σg − x̂·Σ(g·x̂))
                    let scale = gamma * inv / count;
                    for ((d, &gi), &xi) in dst.iter_mut().zip(g).zip(x) {
                        let xhat = (xi - mean[c]) * inv;
                        *d = scale * (count * gi - sum_g - xhat * sum_gx);
                    }
                }
                Mode::Infer => {
                    for (d, &gi) in dst.iter_mut().zip(g) {
                        *d = gi * gamma * inv;
                    }
                }
            }
        }
    }
    let pshape = Shape4::new(shape.c, 1, 1, 1);
    Ok(NormGrads {
        input: gx,
        gamma: Tensor4::from_vec(pshape, gg)?,
        beta: Tensor4::from_vec(pshape, gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_normalises_to_beta() {
        for beta in [0.0, 1.5] {
            let mut s = BatchNormState::<f64>::new(2);
            s.beta.data_mut().fill(beta);
            let x = Tensor4::from_fn(Shape4::new(2, 2, 3, 3), |_, c, _, _| 4.0 + c as f64);
            let y = batchnorm_forward(&x, &mut s).unwrap();
            assert!(y.data().iter().all(|&v| (v - beta).abs() < 1e-12));
        }
    }

    #[test]
    fn two_values_standardise_to_unit() {
        let mut s = BatchNormState::<f64>::new(1);
        s.epsilon = 1e-15;
        let x = Tensor4::from_vec(Shape4::new(2, 1, 1, 1), vec![1.0, 3.0]).unwrap();
        let y = batchnorm_forward(&x, &mut s).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
        // running stats moved 1% toward (2, 1)
        assert!((s.running_mean.data()[0] - 0.02).abs() < 1e-12);
        assert!((s.running_var.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infer_mode_uses_running_stats_only() {
        let mut s = BatchNormState::<f64>::new(1);
        s.mode = Mode::Infer;
        s.running_mean.data_mut()[0] = 1.0;
        s.running_var.data_mut()[0] = 4.0;
        s.epsilon = 0.0;
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 2), vec![3.0, 5.0]).unwrap();
        let y = batchnorm_forward(&x, &mut s).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
        assert_eq!(s.running_mean.data()[0], 1.0);
    }

    #[test]
    fn backward_linear_parts() {
        let s = BatchNormState::<f64>::new(2);
        let x = Tensor4::from_fn(Shape4::new(2, 2, 2, 3), |n, c, y, x| {
            ((n * 7 + c * 5 + y * 3 + x) % 5) as f64
        });
        let g = Tensor4::filled(x.shape(), 0.75);
        let grads = batchnorm_backward(&x, &s, &g).unwrap();
        assert_eq!(grads.beta.data(), &[9.0, 9.0]);
        for c in 0..2 {
            let total: f64 = (0..2).flat_map(|n| grads.input.plane(n, c).to_vec()).sum();
            assert!(total.abs() < 1e-12, "channel {c}: {total}");
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut s = BatchNormState::<f32>::new(3);
        let x = Tensor4::zeros(Shape4::new(1, 2, 2, 2));
        assert!(batchnorm_forward(&x, &mut s).is_err());
    }
}
