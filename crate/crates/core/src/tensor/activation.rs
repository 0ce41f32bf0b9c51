use super::{Element, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<T: Element>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "relu input {:?} vs output gradient {:?}",
            input.shape(),
            grad_out.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_sign() {
        let x = Tensor::scalar_vec(&[-1.0f32, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
        let pos = Tensor::scalar_vec(&[0.0f32, 1.0, 3.5]);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn gradient_of_sum() {
        let x = Tensor::scalar_vec(&[-1.0f64, 2.0, 0.0]);
        let g = relu_backward(&x, &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
    }
}
