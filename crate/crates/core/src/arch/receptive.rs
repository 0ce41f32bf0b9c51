use serde::{Deserialize, Serialize};

use super::{ArchitectureSpec, LayerSpec};

/// Largest useful input resolution for ResNet101 as reported from its
/// receptive field (px). Recorded, not recomputed: the engine does not model
/// residual topologies.
pub const RESNET101_MAX_RECEPTIVE_FIELD: usize = 971;
/// Same bound for InceptionV3 (px).
pub const INCEPTION_V3_MAX_RECEPTIVE_FIELD: usize = 1311;
/// Resolution cap used for the deep networks due to memory limits (px).
pub const HIGH_RESOLUTION_CAP: usize = 800;

/// Receptive field after one layer.
///
/// `start` is the input coordinate of the first pixel seen by output unit
/// 0 (negative when it lies in the padding); unit `u` covers
/// `[start + u * jump, start + u * jump + rf)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptiveFieldRow {
    pub layer: usize,
    pub kind: String,
    pub rf: usize,
    pub jump: usize,
    pub start: isize,
}

/// `rf_l = rf_{l-1} + (k_l - 1) * jump_{l-1}`, `jump_l = jump_{l-1} * s_l`,
/// starting from `rf = jump = 1`. Flatten and dense layers see the whole input.
pub fn receptive_field(spec: &ArchitectureSpec) -> Vec<ReceptiveFieldRow> {
    let full = spec.input_shape.height.max(spec.input_shape.width);
    let (mut rf, mut jump, mut start) = (1usize, 1usize, 0isize);
    let mut global = false;
    spec.layers
        .iter()
        .enumerate()
        .map(|(layer, l)| {
            match *l {
                _ if global => {}
                LayerSpec::Conv { kernel_size: k, stride: s, padding: p, .. } => {
                    rf += (k - 1) * jump;
                    start -= (p * jump) as isize;
                    jump *= s;
                }
                LayerSpec::Maxpool { pool_size: k, stride: s } => {
                    rf += (k - 1) * jump;
                    jump *= s;
                }
                LayerSpec::Flatten | LayerSpec::Dense { .. } => {
                    global = true;
                    rf = rf.max(full);
                    start = 0;
                }
                LayerSpec::Batchnorm | LayerSpec::Relu | LayerSpec::Dropout { .. } => {}
            }
            ReceptiveFieldRow { layer, kind: l.kind().to_string(), rf, jump, start }
        })
        .collect()
}
