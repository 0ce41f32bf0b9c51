use super::kernels::{add_assign, axpy, dot};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Affine map `input (B x N) * weights (N x M) + bias (M)`.
pub fn dense<T: Element>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, n] = input.dims2()?;
    let [wn, m] = weights.dims2()?;
    if wn != n || bias.shape() != [m] {
        return Err(Error::Shape(format!(
            "dense input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let (x, w) = (input.data(), weights.data());
    let mut out = vec![T::zero(); b * m];
    for (row, xr) in out.chunks_exact_mut(m).zip(x.chunks_exact(n)) {
        for (i, &xi) in xr.iter().enumerate() {
            axpy(row, xi, &w[i * m..(i + 1) * m]);
        }
        add_assign(row, bias.data());
    }
    Tensor::new(vec![b, m], out)
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let [b, n] = input.dims2()?;
    let [wn, m] = weights.dims2()?;
    if wn != n || grad_out.shape() != [b, m] {
        return Err(Error::Shape(format!(
            "dense backward input {:?}, weights {:?}, output gradient {:?}",
            input.shape(),
            weights.shape(),
            grad_out.shape()
        )));
    }
    let (x, w, dy) = (input.data(), weights.data(), grad_out.data());
    let mut dx = vec![T::zero(); b * n];
    let mut dw = vec![T::zero(); n * m];
    let mut db = vec![T::zero(); m];
    for s in 0..b {
        let dys = &dy[s * m..(s + 1) * m];
        let xs = &x[s * n..(s + 1) * n];
        for i in 0..n {
            dx[s * n + i] = dot(dys, &w[i * m..(i + 1) * m]);
            axpy(&mut dw[i * m..(i + 1) * m], xs[i], dys);
        }
        add_assign(&mut db, dys);
    }
    Ok(DenseGrads {
        input: Tensor::new(vec![b, n], dx)?,
        weights: Tensor::new(vec![n, m], dw)?,
        bias: Tensor::new(vec![m], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let x = Tensor::new(vec![1, 2], vec![3.0f32, 4.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(dense(&x, &w, &Tensor::zeros(&[2])).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn zero_weights_give_bias() {
        let x = Tensor::new(vec![2, 2], vec![3.0f32, -4.0, 7.0, 1.5]).unwrap();
        let w = Tensor::zeros(&[2, 2]);
        let b = Tensor::scalar_vec(&[5.0, 6.0]);
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[5.0, 6.0, 5.0, 6.0]);
    }

    #[test]
    fn hand_matrix_product() {
        let x = Tensor::new(vec![1, 2], vec![1.0f32, 1.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(dense(&x, &w, &Tensor::zeros(&[2])).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 3]);
        let w = Tensor::<f32>::zeros(&[2, 2]);
        assert!(dense(&x, &w, &Tensor::zeros(&[2])).is_err());
        let w = Tensor::<f32>::zeros(&[3, 2]);
        assert!(dense(&x, &w, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn backward_hand_values() {
        let x = Tensor::new(vec![1, 2], vec![1.0f64, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let dy = Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        let g = dense_backward(&x, &w, &dy).unwrap();
        assert_eq!(g.input.data(), &[-1.0, -1.0]);
        assert_eq!(g.weights.data(), &[1.0, -1.0, 2.0, -2.0]);
        assert_eq!(g.bias.data(), &[1.0, -1.0]);
    }
}
