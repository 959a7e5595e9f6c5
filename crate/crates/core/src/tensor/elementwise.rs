use super::{Scalar, Shape4, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Logistic sigmoid. Outputs are clamped to `[ε, 1 − ε]` (machine
    /// epsilon) so probabilities stay strictly inside (0, 1).
    Sigmoid,
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    let y = S::one() / (S::one() + (-x).exp());
    let eps = S::epsilon();
    y.max(eps).min(S::one() - eps)
}

pub fn activation<S: Scalar>(input: &Tensor4<S>, kind: Activation) -> Tensor4<S> {
    match kind {
        Activation::Relu => input.map(|v| if v > S::zero() { v } else { S::zero() }),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

/// Backward of [`activation`]. `output` is the forward result; relu's
/// derivative is taken as 0 at the kink.
pub fn activation_backward<S: Scalar>(
    output: &Tensor4<S>,
    grad_out: &Tensor4<S>,
    kind: Activation,
) -> Result<Tensor4<S>> {
    grad_out.require_shape("activation_backward", output.shape())?;
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| match kind {
            Activation::Relu => {
                if y > S::zero() {
                    g
                } else {
                    S::zero()
                }
            }
            Activation::Sigmoid => g * y * (S::one() - y),
        })
        .collect();
    Tensor4::from_vec(output.shape(), data)
}

pub fn add<S: Scalar>(a: &Tensor4<S>, b: &Tensor4<S>) -> Result<Tensor4<S>> {
    b.require_shape("add", a.shape())?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor4::from_vec(a.shape(), data)
}

/// Both operands receive the upstream gradient unchanged.
pub fn add_backward<S: Scalar>(grad_out: &Tensor4<S>) -> (Tensor4<S>, Tensor4<S>) {
    (grad_out.clone(), grad_out.clone())
}

pub fn upsample_nearest_2x<S: Scalar>(input: &Tensor4<S>) -> Tensor4<S> {
    let s = input.shape();
    let out_shape = Shape4::new(s.n, s.c, 2 * s.h, 2 * s.w);
    Tensor4::from_fn(out_shape, |n, c, y, x| input.at(n, c, y / 2, x / 2))
}

/// Sums each 2×2 block of `grad_out`.
pub fn upsample_nearest_2x_backward<S: Scalar>(grad_out: &Tensor4<S>) -> Result<Tensor4<S>> {
    let s = grad_out.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape(
            "upsample_nearest_2x_backward",
            if !s.h.is_multiple_of(2) { "height" } else { "width" },
            format!("odd gradient extent {s}"),
        ));
    }
    let in_shape = Shape4::new(s.n, s.c, s.h / 2, s.w / 2);
    Ok(Tensor4::from_fn(in_shape, |n, c, y, x| {
        let (y2, x2) = (2 * y, 2 * x);
        grad_out.at(n, c, y2, x2)
            + grad_out.at(n, c, y2, x2 + 1)
            + grad_out.at(n, c, y2 + 1, x2)
            + grad_out.at(n, c, y2 + 1, x2 + 1)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(vals: &[f64], h: usize, w: usize) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, 1, h, w), vals.to_vec()).unwrap()
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let x = t(&[-2.0, 3.0, 0.0], 1, 3);
        assert_eq!(activation(&x, Activation::Relu).data(), &[0.0, 3.0, 0.0]);
        let y = activation(&x, Activation::Sigmoid);
        assert_eq!(y.data()[2], 0.5);
        let g = activation_backward(&y, &Tensor4::filled(y.shape(), 1.0), Activation::Sigmoid).unwrap();
        assert_eq!(g.data()[2], 0.25);
    }

    #[test]
    fn sigmoid_stays_strictly_inside_unit_interval() {
        let x = Tensor4::<f32>::from_vec(Shape4::new(1, 1, 1, 4), vec![-1e4, -90.0, 40.0, 1e4]).unwrap();
        let y = activation(&x, Activation::Sigmoid);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0), "{:?}", y.data());
    }

    #[test]
    fn upsample_replicates_and_backward_sums() {
        let y = upsample_nearest_2x(&t(&[7.0], 1, 1));
        assert_eq!(y.data(), &[7.0; 4]);
        let y = upsample_nearest_2x(&t(&[1.0, 2.0, 3.0, 4.0], 2, 2));
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        let g = upsample_nearest_2x_backward(&Tensor4::filled(Shape4::new(1, 2, 4, 6), 1.0)).unwrap();
        assert_eq!(g.shape(), Shape4::new(1, 2, 2, 3));
        assert!(g.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn add_rules() {
        let a = t(&[1.5, -2.0, 0.1], 1, 3);
        let b = t(&[0.2, 0.3, 1e-9], 1, 3);
        let zero = Tensor4::zeros(a.shape());
        assert_eq!(add(&a, &zero).unwrap(), a);
        assert_eq!(add(&a, &b).unwrap(), add(&b, &a).unwrap());
        let (ga, gb) = add_backward(&b);
        assert_eq!(ga, b);
        assert_eq!(gb, b);
        assert!(add(&a, &t(&[1.0, 2.0], 1, 2)).is_err());
    }
}
