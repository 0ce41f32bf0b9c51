use super::{Element, Mode, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the current batch in the running-statistics moving average.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    shape: Vec<usize>,
    normalized: Vec<T>,
    inv_std: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Per-channel batch normalization of a BCHW tensor.
///
/// Train mode normalizes with the batch mean and population variance and
/// folds them into `running_mean` / `running_var`; infer mode reads the
/// running statistics. A cache is returned only in train mode.
pub fn batchnorm2d<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    epsilon: f64,
    mode: Mode,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("batchnorm epsilon must be positive, got {epsilon}")));
    }
    let [b, c, h, w] = input.dims4()?;
    for (name, t) in [("gamma", &*gamma), ("beta", &*beta), ("running mean", &*running_mean), ("running var", &*running_var)] {
        if t.shape() != [c] {
            return Err(Error::Shape(format!("{name} {:?} for input {:?}", t.shape(), input.shape())));
        }
    }
    let hw = h * w;
    let n = b * hw;
    let x = input.data();
    let eps = T::from_f64(epsilon);
    let mut out = vec![T::zero(); x.len()];

    match mode {
        Mode::Infer => {
            for ch in 0..c {
                let inv = T::one() / (running_var.data()[ch] + eps).sqrt();
                let mean = running_mean.data()[ch];
                let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
                for s in 0..b {
                    let off = (s * c + ch) * hw;
                    for i in off..off + hw {
                        out[i] = g * (x[i] - mean) * inv + bt;
                    }
                }
            }
            Ok((Tensor::new(input.shape().to_vec(), out)?, None))
        }
        Mode::Train => {
            if n < 2 {
                return Err(Error::Shape(format!(
                    "train-mode batchnorm needs at least 2 values per channel, input is {:?}",
                    input.shape()
                )));
            }
            let count = T::from_f64(n as f64);
            let momentum = T::from_f64(BN_MOMENTUM);
            let mut normalized = vec![T::zero(); x.len()];
            let mut inv_std = vec![T::zero(); c];
            for ch in 0..c {
                let planes = || (0..b).map(move |s| (s * c + ch) * hw);
                let mut sum = T::zero();
                for off in planes() {
                    sum += x[off..off + hw].iter().copied().sum::<T>();
                }
                let mean = sum / count;
                let mut sq = T::zero();
                for off in planes() {
                    sq += x[off..off + hw].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
                }
                let var = sq / count;
                let inv = T::one() / (var + eps).sqrt();
                inv_std[ch] = inv;
                let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
                for off in planes() {
                    for i in off..off + hw {
                        let xh = (x[i] - mean) * inv;
                        normalized[i] = xh;
                        out[i] = g * xh + bt;
                    }
                }
                let rm = &mut running_mean.data_mut()[ch];
                *rm = (T::one() - momentum) * *rm + momentum * mean;
                let rv = &mut running_var.data_mut()[ch];
                *rv = (T::one() - momentum) * *rv + momentum * var;
            }
            let cache = BatchNormCache { shape: input.shape().to_vec(), normalized, inv_std };
            Ok((Tensor::new(input.shape().to_vec(), out)?, Some(cache)))
        }
    }
}

pub fn batchnorm2d_backward<T: Element>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(Error::Shape(format!(
            "batchnorm output gradient {:?} vs cached input {:?}",
            grad_out.shape(),
            cache.shape
        )));
    }
    let (b, c, hw) = (cache.shape[0], cache.shape[1], cache.shape[2] * cache.shape[3]);
    let n = T::from_f64((b * hw) as f64);
    let dy = grad_out.data();
    let xh = &cache.normalized;
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        for s in 0..b {
            let off = (s * c + ch) * hw;
            for i in off..off + hw {
                sum_dy += dy[i];
                sum_dy_xh += dy[i] * xh[i];
            }
        }
        dgamma[ch] = sum_dy_xh;
        dbeta[ch] = sum_dy;
        let scale = gamma.data()[ch] * cache.inv_std[ch] / n;
        for s in 0..b {
            let off = (s * c + ch) * hw;
            for i in off..off + hw {
                dx[i] = scale * (n * dy[i] - sum_dy - xh[i] * sum_dy_xh);
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(cache.shape.clone(), dx)?,
        gamma: Tensor::new(vec![c], dgamma)?,
        beta: Tensor::new(vec![c], dbeta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(c: usize) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::zeros(&[c]), Tensor::full(&[c], 1.0))
    }

    fn run(x: &[f64], gamma: f64, beta: f64, eps: f64) -> Vec<f64> {
        let input = Tensor::new(vec![x.len(), 1, 1, 1], x.to_vec()).unwrap();
        let (mut rm, mut rv) = stats(1);
        let (y, _) = batchnorm2d(
            &input,
            &Tensor::scalar_vec(&[gamma]),
            &Tensor::scalar_vec(&[beta]),
            &mut rm,
            &mut rv,
            eps,
            Mode::Train,
        )
        .unwrap();
        y.into_data()
    }

    #[test]
    fn normalizes_with_population_variance() {
        let y = run(&[1.0, 3.0], 1.0, 0.0, 1e-12);
        assert!((y[0] + 1.0).abs() < 1e-9 && (y[1] - 1.0).abs() < 1e-9, "{y:?}");
    }

    #[test]
    fn affine_after_normalization() {
        let y = run(&[1.0, 3.0], 2.0, 1.0, 1e-12);
        assert!((y[0] + 1.0).abs() < 1e-9 && (y[1] - 3.0).abs() < 1e-9, "{y:?}");
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let y = run(&[0.7; 6], 3.0, -0.25, BN_EPSILON);
        assert!(y.iter().all(|&v| (v + 0.25).abs() < 1e-12));
    }

    #[test]
    fn running_statistics_update_and_inference() {
        let input = Tensor::new(vec![2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let (mut rm, mut rv) = stats(1);
        let g = Tensor::scalar_vec(&[1.0]);
        let b = Tensor::scalar_vec(&[0.0]);
        batchnorm2d(&input, &g, &b, &mut rm, &mut rv, BN_EPSILON, Mode::Train).unwrap();
        assert!((rm.data()[0] - 0.2).abs() < 1e-12);
        assert!((rv.data()[0] - 1.0).abs() < 1e-12);
        let (y, cache) = batchnorm2d(&input, &g, &b, &mut rm, &mut rv, BN_EPSILON, Mode::Infer).unwrap();
        assert!(cache.is_none());
        assert!((y.data()[0] - 0.8 / (1.0 + BN_EPSILON).sqrt()).abs() < 1e-12);
        assert_eq!(rm.data()[0], 0.2);
    }

    #[test]
    fn rejects_bad_epsilon_and_tiny_batch() {
        let input = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let (mut rm, mut rv) = stats(1);
        let g = Tensor::scalar_vec(&[1.0]);
        let b = Tensor::scalar_vec(&[0.0]);
        assert!(batchnorm2d(&input, &g, &b, &mut rm, &mut rv, 0.0, Mode::Infer).is_err());
        assert!(batchnorm2d(&input, &g, &b, &mut rm, &mut rv, 1e-5, Mode::Train).is_err());
    }
}
