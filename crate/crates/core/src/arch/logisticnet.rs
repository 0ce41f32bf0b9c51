use super::{ArchitectureSpec, InputShape, LayerSpec};
use crate::error::{Error, Result};

/// Native LogisticNet input resolution (px).
pub const DEFAULT_RESOLUTION: usize = 227;

/// Tunable LogisticNet hyper-parameters. The layer sequence itself is fixed:
///
/// Conv 3x3 > Conv 11x11 > BN > Pool 3 > Conv 5x5 > BN > Pool 3 >
/// (Conv 3x3 > BN) x3 > Pool 3 > Flatten > Dense > Dropout > Dense > Dropout > Dense,
///
/// with ReLU after each convolution and hidden dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticNetConfig {
    pub num_classes: usize,
    pub input_channels: usize,
    /// Filters of the six convolutions, in order.
    pub filters: [usize; 6],
    pub large_kernel_stride: usize,
    pub large_kernel_padding: usize,
    pub pool_stride: usize,
    pub dense_width: usize,
    pub dropout: f64,
}

impl LogisticNetConfig {
    /// AlexNet filter counts and strides.
    pub fn alexnet(num_classes: usize) -> Self {
        LogisticNetConfig {
            num_classes,
            input_channels: 3,
            filters: [64, 96, 256, 384, 384, 256],
            large_kernel_stride: 4,
            large_kernel_padding: 0,
            pool_stride: 2,
            dense_width: 4096,
            dropout: 0.5,
        }
    }

    /// Width-reduced variant for 64x64 inputs on a CPU. The 11x11 kernel is
    /// padded by 2 so the third pooling window still fits.
    pub fn compact(num_classes: usize) -> Self {
        LogisticNetConfig {
            filters: [6, 16, 32, 32, 32, 32],
            large_kernel_padding: 2,
            dense_width: 256,
            ..Self::alexnet(num_classes)
        }
    }

    pub fn build(&self, input_resolution: usize) -> Result<ArchitectureSpec> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "LogisticNet needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        let [f1, f2, f3, f4, f5, f6] = self.filters;
        let pool = LayerSpec::maxpool(3, self.pool_stride);
        let layers = vec![
            LayerSpec::conv(3, f1, 1, 1),
            LayerSpec::Relu,
            LayerSpec::conv(11, f2, self.large_kernel_stride, self.large_kernel_padding),
            LayerSpec::Relu,
            LayerSpec::Batchnorm,
            pool.clone(),
            LayerSpec::conv(5, f3, 1, 2),
            LayerSpec::Relu,
            LayerSpec::Batchnorm,
            pool.clone(),
            LayerSpec::conv(3, f4, 1, 1),
            LayerSpec::Relu,
            LayerSpec::Batchnorm,
            LayerSpec::conv(3, f5, 1, 1),
            LayerSpec::Relu,
            LayerSpec::Batchnorm,
            LayerSpec::conv(3, f6, 1, 1),
            LayerSpec::Relu,
            LayerSpec::Batchnorm,
            pool,
            LayerSpec::Flatten,
            LayerSpec::Dense { width: self.dense_width },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: self.dropout },
            LayerSpec::Dense { width: self.dense_width },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: self.dropout },
            LayerSpec::Dense { width: self.num_classes },
        ];
        let spec = ArchitectureSpec::new(
            "logisticnet",
            InputShape { channels: self.input_channels, height: input_resolution, width: input_resolution },
            layers,
        );
        spec.validate()?;
        Ok(spec)
    }
}

/// LogisticNet with AlexNet widths.
pub fn build_logisticnet(num_classes: usize, input_resolution: usize) -> Result<ArchitectureSpec> {
    LogisticNetConfig::alexnet(num_classes).build(input_resolution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Shape;

    #[test]
    fn default_has_six_convs_and_binary_head() {
        let s = build_logisticnet(2, DEFAULT_RESOLUTION).unwrap();
        let convs = s.layers.iter().filter(|l| matches!(l, LayerSpec::Conv { .. })).count();
        assert_eq!(convs, 6);
        assert_eq!(s.layers.last(), Some(&LayerSpec::Dense { width: 2 }));
        assert_eq!(s.input_shape.height, 227);
        let rates: Vec<f64> = s
            .layers
            .iter()
            .filter_map(|l| if let LayerSpec::Dropout { rate } = l { Some(*rate) } else { None })
            .collect();
        assert_eq!(rates, [0.5, 0.5]);
    }

    #[test]
    fn figure_order_small_kernel_first() {
        let s = build_logisticnet(2, 227).unwrap();
        let kernels: Vec<usize> = s
            .layers
            .iter()
            .filter_map(|l| if let LayerSpec::Conv { kernel_size, .. } = l { Some(*kernel_size) } else { None })
            .collect();
        assert_eq!(kernels, [3, 11, 5, 3, 3, 3]);
    }

    #[test]
    fn flatten_width_matches_first_dense_input() {
        let s = build_logisticnet(2, 227).unwrap();
        let shapes = s.output_shape().unwrap();
        let flat = s.layers.iter().position(|l| *l == LayerSpec::Flatten).unwrap();
        assert_eq!(shapes[flat], Shape::Flat(9216));
        let pc = s.param_count().unwrap();
        let dense_params = 9216 * 4096 + 4096 + 4096 * 4096 + 4096 + 4096 * 2 + 2;
        let conv_params = (9 * 3 * 64 + 64)
            + (121 * 64 * 96 + 96)
            + (25 * 96 * 256 + 256)
            + (9 * 256 * 384 + 384)
            + (9 * 384 * 384 + 384)
            + (9 * 384 * 256 + 256);
        let bn = 2 * (96 + 256 + 384 + 384 + 256);
        assert_eq!(pc.trainable, dense_params + conv_params + bn);
        assert_eq!(pc.buffers, bn);
        assert_eq!(*shapes.last().unwrap(), Shape::Flat(2));
    }

    #[test]
    fn too_small_resolution_names_layer() {
        match build_logisticnet(2, 40) {
            Err(Error::Architecture { layer, .. }) => assert!(layer > 0),
            other => panic!("{other:?}"),
        }
        assert!(build_logisticnet(1, 227).is_err());
    }

    #[test]
    fn compact_variant_fits_64() {
        let s = LogisticNetConfig::compact(2).build(64).unwrap();
        let shapes = s.output_shape().unwrap();
        let flat = s.layers.iter().position(|l| *l == LayerSpec::Flatten).unwrap();
        assert_eq!(shapes[flat], Shape::Flat(32));
        assert!(LogisticNetConfig::alexnet(2).build(64).is_err());
    }

    #[test]
    fn deterministic() {
        assert_eq!(build_logisticnet(2, 227).unwrap(), build_logisticnet(2, 227).unwrap());
    }
}
