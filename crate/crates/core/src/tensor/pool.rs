use super::{Element, Tensor};
use crate::error::{Error, Result};

pub fn pool_output_extent(input: usize, pool: usize, stride: usize) -> Option<usize> {
    if pool == 0 || stride == 0 || pool > input {
        return None;
    }
    Some((input - pool) / stride + 1)
}

pub fn maxpool2d<T: Element>(input: &Tensor<T>, pool_size: usize, stride: usize) -> Result<Tensor<T>> {
    maxpool2d_with_indices(input, pool_size, stride).map(|(y, _)| y)
}

/// Max pooling that also returns, for every output cell, the flat input
/// index of the winning element. Ties go to the first element in
/// row-major window order.
pub fn maxpool2d_with_indices<T: Element>(
    input: &Tensor<T>,
    pool_size: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, c, h, w] = input.dims4()?;
    if pool_size == 0 || stride == 0 {
        return Err(Error::InvalidArgument("pool size and stride must be positive".into()));
    }
    let (oh, ow) = match (pool_output_extent(h, pool_size, stride), pool_output_extent(w, pool_size, stride)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::Shape(format!(
                "pool window {pool_size} is larger than input {:?}",
                input.shape()
            )))
        }
    };
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * stride, ox * stride);
                let mut best_idx = base + y0 * w + x0;
                let mut best = x[best_idx];
                for ky in 0..pool_size {
                    let row = base + (y0 + ky) * w + x0;
                    for kx in 0..pool_size {
                        let v = x[row + kx];
                        if v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![b, c, oh, ow], out)?, arg))
}

/// Routes each output gradient to the recorded argmax position.
pub fn maxpool2d_backward<T: Element>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::Shape(format!(
            "{} argmax entries for output gradient {:?}",
            argmax.len(),
            grad_out.shape()
        )));
    }
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        dx[i] += g;
    }
    Tensor::new(input_shape.to_vec(), dx)
}
