use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Element, Mode, Tensor};
use crate::error::{Error, Result};

/// Inverted dropout. The keep mask is a pure function of `(seed, counter)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} is outside [0, 1)")));
        }
        Ok(Dropout { rate, seed })
    }

    /// Per-element multipliers: 0 for dropped, `1 / (1 - rate)` for kept.
    pub fn mask<T: Element>(&self, len: usize, counter: u64) -> Vec<T> {
        if self.rate == 0.0 {
            return vec![T::one(); len];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(counter);
        let scale = T::from_f64(1.0 / (1.0 - self.rate));
        (0..len)
            .map(|_| if rng.gen::<f64>() < self.rate { T::zero() } else { scale })
            .collect()
    }
}

/// Returns the output and, in train mode, the mask needed for the backward
/// pass (`grad_in = grad_out * mask`).
pub fn dropout<T: Element>(
    input: &Tensor<T>,
    rate: f64,
    seed: u64,
    counter: u64,
    mode: Mode,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    let d = Dropout::new(rate, seed)?;
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let mask: Vec<T> = d.mask(input.len(), counter);
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::new(input.shape().to_vec(), data)?, Some(mask)))
}
