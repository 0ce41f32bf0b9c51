//! 2-D convolution (cross-correlation) over BCHW batches via per-sample
//! im2col and an axpy-ordered matrix product.

use super::kernels::{add_assign, axpy, dot};
use super::{Element, Tensor};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Output extent along one axis, or `None` when the kernel does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    let padded = input + 2 * padding;
    if kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Geometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    k: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn new<T: Element>(
        input: &Tensor<T>,
        weights: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("convolution stride must be positive".into()));
        }
        let [_, in_c, in_h, in_w] = input.dims4()?;
        let [out_c, w_in, kh, kw] = weights
            .dims4()
            .map_err(|_| Error::Shape(format!("weights {:?} are not OIKK", weights.shape())))?;
        if w_in != in_c || kh != kw {
            return Err(Error::Shape(format!(
                "input {:?} is incompatible with weights {:?}",
                input.shape(),
                weights.shape()
            )));
        }
        if bias.shape() != [out_c] {
            return Err(Error::Shape(format!(
                "bias {:?} does not match weights {:?}",
                bias.shape(),
                weights.shape()
            )));
        }
        let (out_h, out_w) = match (
            conv_output_extent(in_h, kh, stride, padding),
            conv_output_extent(in_w, kw, stride, padding),
        ) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(Error::Shape(format!(
                    "kernel {:?} does not fit input {:?} with padding {padding}",
                    weights.shape(),
                    input.shape()
                )))
            }
        };
        Ok(Geometry { in_c, in_h, in_w, out_c, k: kh, out_h, out_w, stride, padding })
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one sample into a `patch_len x positions` matrix. Padded
    /// taps are stored as explicit zeros.
    fn im2col<T: Element>(&self, sample: &[T], col: &mut [T]) {
        let p = self.positions();
        for ci in 0..self.in_c {
            let plane = &sample[ci * self.in_h * self.in_w..(ci + 1) * self.in_h * self.in_w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((ci * self.k + ky) * self.k + kx) * p;
                    let dst = &mut col[row..row + p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        let out_row = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            *o = if ix < 0 || ix >= self.in_w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adds a `patch_len x positions` gradient matrix back onto one sample.
    fn col2im<T: Element>(&self, col: &[T], sample: &mut [T]) {
        let p = self.positions();
        for ci in 0..self.in_c {
            let plane = &mut sample[ci * self.in_h * self.in_w..(ci + 1) * self.in_h * self.in_w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((ci * self.k + ky) * self.k + kx) * p;
                    let src = &col[row..row + p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.in_w as isize {
                                dst[ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    conv2d_with(Exec::default(), input, weights, bias, stride, padding)
}

/// Cross-correlation of a BCHW batch with OIKK weights.
///
/// Each output is accumulated over (input channel, kernel row, kernel column)
/// in ascending order starting from zero, then the bias is added.
pub fn conv2d_with<T: Element>(
    exec: Exec,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input, weights, bias, stride, padding)?;
    let batch = input.shape()[0];
    let kt = g.patch_len();
    let p = g.positions();
    let in_len = g.in_c * g.in_h * g.in_w;
    let out_len = g.out_c * p;
    let w = weights.data();
    let b = bias.data();
    let x = input.data();

    let mut out = vec![T::zero(); batch * out_len];
    exec.for_each_chunk(&mut out, out_len, |s, dst| {
        let mut col = vec![T::zero(); kt * p];
        g.im2col(&x[s * in_len..(s + 1) * in_len], &mut col);
        for k in 0..kt {
            let crow = &col[k * p..(k + 1) * p];
            for co in 0..g.out_c {
                axpy(&mut dst[co * p..(co + 1) * p], w[co * kt + k], crow);
            }
        }
        for co in 0..g.out_c {
            for v in &mut dst[co * p..(co + 1) * p] {
                *v += b[co];
            }
        }
    });
    Tensor::new(vec![batch, g.out_c, g.out_h, g.out_w], out)
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<T> {
    /// Absent when the caller did not request the input gradient.
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Element>(
    exec: Exec,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_input_grad: bool,
) -> Result<Conv2dGrads<T>> {
    let out_c = weights.shape().first().copied().unwrap_or(0);
    let zero_bias = Tensor::zeros(&[out_c.max(1)]);
    let g = Geometry::new(input, weights, &zero_bias, stride, padding)?;
    let batch = input.shape()[0];
    if grad_out.shape() != [batch, g.out_c, g.out_h, g.out_w] {
        return Err(Error::Shape(format!(
            "output gradient {:?} does not match forward output [{batch}, {}, {}, {}]",
            grad_out.shape(),
            g.out_c,
            g.out_h,
            g.out_w
        )));
    }
    let kt = g.patch_len();
    let p = g.positions();
    let in_len = g.in_c * g.in_h * g.in_w;
    let out_len = g.out_c * p;
    let w = weights.data();
    let x = input.data();
    let dy = grad_out.data();

    struct SampleGrads<T> {
        dw: Vec<T>,
        db: Vec<T>,
        dx: Option<Vec<T>>,
    }

    let per_sample = exec.map(batch, |s| {
        let mut col = vec![T::zero(); kt * p];
        g.im2col(&x[s * in_len..(s + 1) * in_len], &mut col);
        let dys = &dy[s * out_len..(s + 1) * out_len];

        let mut dw = vec![T::zero(); g.out_c * kt];
        for k in 0..kt {
            let crow = &col[k * p..(k + 1) * p];
            for co in 0..g.out_c {
                dw[co * kt + k] = dot(&dys[co * p..(co + 1) * p], crow);
            }
        }
        let db = (0..g.out_c).map(|co| dys[co * p..(co + 1) * p].iter().copied().sum()).collect();

        let dx = need_input_grad.then(|| {
            // reuse the column buffer for d(col)
            for k in 0..kt {
                let drow = &mut col[k * p..(k + 1) * p];
                drow.fill(T::zero());
                for co in 0..g.out_c {
                    axpy(drow, w[co * kt + k], &dys[co * p..(co + 1) * p]);
                }
            }
            let mut dx = vec![T::zero(); in_len];
            g.col2im(&col, &mut dx);
            dx
        });
        SampleGrads { dw, db, dx }
    });

    let mut dw = vec![T::zero(); g.out_c * kt];
    let mut db = vec![T::zero(); g.out_c];
    let mut dx = need_input_grad.then(|| Vec::with_capacity(batch * in_len));
    for sg in per_sample {
        add_assign(&mut dw, &sg.dw);
        add_assign(&mut db, &sg.db);
        if let (Some(all), Some(part)) = (dx.as_mut(), sg.dx) {
            all.extend_from_slice(&part);
        }
    }
    Ok(Conv2dGrads {
        input: dx.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?,
        weights: Tensor::new(weights.shape().to_vec(), dw)?,
        bias: Tensor::new(vec![g.out_c], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_two_by_two_kernel() {
        let x = Tensor::new(vec![1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let w = Tensor::full(&[1, 1, 2, 2], 1.0f32);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::from_fn(&[2, 1, 4, 5], |i| (i as f32 * 0.37).sin());
        let w = Tensor::full(&[1, 1, 1, 1], 1.0f32);
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn alexnet_stem_extent() {
        assert_eq!(conv_output_extent(227, 11, 4, 0), Some(55));
        assert_eq!(conv_output_extent(5, 7, 1, 0), None);
        assert_eq!(conv_output_extent(5, 7, 1, 1), Some(1));
        assert_eq!(conv_output_extent(5, 3, 0, 0), None);
    }

    #[test]
    fn rejects_channel_mismatch_naming_both_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        let w = Tensor::<f32>::zeros(&[4, 3, 3, 3]);
        let err = conv2d(&x, &w, &Tensor::zeros(&[4]), 1, 0).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 5, 5]") && err.contains("[4, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn rejects_zero_stride_and_oversized_kernel() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        assert!(conv2d(&x, &w, &Tensor::zeros(&[1]), 0, 0).is_err());
        let big = Tensor::<f32>::zeros(&[1, 1, 5, 5]);
        assert!(conv2d(&x, &big, &Tensor::zeros(&[1]), 1, 0).is_err());
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let x = Tensor::from_fn(&[3, 2, 9, 9], |i| ((i * 7919) % 101) as f32 / 50.0 - 1.0);
        let w = Tensor::from_fn(&[4, 2, 3, 3], |i| ((i * 31) % 17) as f32 / 8.0 - 1.0);
        let b = Tensor::from_fn(&[4], |i| i as f32 * 0.1);
        let a = conv2d_with(Exec::Sequential, &x, &w, &b, 2, 1).unwrap();
        let c = conv2d_with(Exec::Parallel, &x, &w, &b, 2, 1).unwrap();
        assert_eq!(a, c);
        let dy = Tensor::from_fn(a.shape(), |i| (i as f32 * 0.13).cos());
        let ga = conv2d_backward(Exec::Sequential, &x, &w, &dy, 2, 1, true).unwrap();
        let gc = conv2d_backward(Exec::Parallel, &x, &w, &dy, 2, 1, true).unwrap();
        assert_eq!(ga.weights, gc.weights);
        assert_eq!(ga.input, gc.input);
    }
}
