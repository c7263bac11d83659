//! Sparse 3D backbone: one submanifold stage followed by three stride-2 stages.

use std::collections::HashMap;

use crate::tensor::SparseVoxelTensor;

use super::weights::{Conv3dWeights, TAPS_3D};
use super::{DetectorError, ModelWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// Stride 1; outputs only at the input coordinates.
    Submanifold,
    /// Stride 2, padding 1; outputs at the halved input coordinates.
    Strided,
}

/// Backbone outputs at 1x, 2x, 4x and 8x stride.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleFeatures {
    pub conv1: SparseVoxelTensor,
    pub conv2: SparseVoxelTensor,
    pub conv3: SparseVoxelTensor,
    pub conv4: SparseVoxelTensor,
}

pub fn tap_offset(k: usize) -> [i32; 3] {
    [(k / 9) as i32 - 1, ((k / 3) % 3) as i32 - 1, (k % 3) as i32 - 1]
}

/// One sparse 3x3x3 convolution followed by ReLU. Output is canonical.
pub fn sparse_conv3d(
    input: &SparseVoxelTensor,
    w: &Conv3dWeights,
    mode: ConvMode,
) -> Result<SparseVoxelTensor, DetectorError> {
    if input.channels != w.in_channels {
        return Err(DetectorError::Shape(format!(
            "conv3d expects {} input channels, got {}",
            w.in_channels, input.channels
        )));
    }
    let (out_shape, stride) = match mode {
        ConvMode::Submanifold => (input.spatial_shape, 1),
        ConvMode::Strided => (input.spatial_shape.map(|s| s.div_ceil(2)), 2),
    };
    let out_coords: Vec<[i32; 3]> = match mode {
        ConvMode::Submanifold => input.coords.clone(),
        ConvMode::Strided => {
            let mut c: Vec<[i32; 3]> = input.coords.iter().map(|c| c.map(|v| v.div_euclid(2))).collect();
            c.sort_unstable();
            c.dedup();
            c
        }
    };

    let lookup: HashMap<[i32; 3], usize> = input.coords.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let cout = w.out_channels;
    let mut out = vec![0.0f32; out_coords.len() * cout];
    for (o, oc) in out_coords.iter().enumerate() {
        let acc = &mut out[o * cout..(o + 1) * cout];
        for k in 0..TAPS_3D {
            let off = tap_offset(k);
            let src = [0, 1, 2].map(|a| oc[a] * stride + off[a]);
            let Some(&i) = lookup.get(&src) else { continue };
            let tap = w.tap(k);
            for (ci, &x) in input.feature(i).iter().enumerate() {
                let row = &tap[ci * cout..(ci + 1) * cout];
                for (a, &wv) in acc.iter_mut().zip(row) {
                    *a += x * wv;
                }
            }
        }
        for (a, &b) in acc.iter_mut().zip(&w.bias) {
            *a = (*a + b).max(0.0);
        }
    }
    Ok(SparseVoxelTensor { spatial_shape: out_shape, channels: cout, coords: out_coords, features: out })
}

pub fn backbone3d(input: &SparseVoxelTensor, w: &ModelWeights) -> Result<MultiScaleFeatures, DetectorError> {
    let conv1 = sparse_conv3d(input, &w.conv3d[0], ConvMode::Submanifold)?;
    let conv2 = sparse_conv3d(&conv1, &w.conv3d[1], ConvMode::Strided)?;
    let conv3 = sparse_conv3d(&conv2, &w.conv3d[2], ConvMode::Strided)?;
    let conv4 = sparse_conv3d(&conv3, &w.conv3d[3], ConvMode::Strided)?;
    Ok(MultiScaleFeatures { conv1, conv2, conv3, conv4 })
}
