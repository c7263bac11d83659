//! Height compression to a BEV map and the 2D backbone.

use crate::tensor::{DenseBevTensor, SparseVoxelTensor, TensorError};

use super::weights::Conv2dWeights;
use super::{DetectorError, ModelWeights};

/// Stacks the depth axis into channels: BEV channel `d * C + c` at `(h, w)`
/// carries channel `c` of voxel `(d, h, w)`.
pub fn map_to_bev(conv4: &SparseVoxelTensor, cap: usize) -> Result<DenseBevTensor, DetectorError> {
    let [depth, height, width] = conv4.spatial_shape.map(|s| s as usize);
    let c = conv4.channels;
    let elements = conv4.dense_len();
    if elements > cap {
        return Err(TensorError::Size { elements, cap }.into());
    }
    let mut bev = DenseBevTensor::zeros(c * depth, height, width);
    let plane = height * width;
    for (i, coord) in conv4.coords.iter().enumerate() {
        let [d, h, w] = coord.map(|v| v as usize);
        let base = d * c * plane + h * width + w;
        for (ch, &v) in conv4.feature(i).iter().enumerate() {
            bev.data[base + ch * plane] = v;
        }
    }
    Ok(bev)
}

/// 3x3 convolution, stride 1, zero "same" padding, followed by ReLU.
pub fn conv2d_same_relu(x: &DenseBevTensor, w: &Conv2dWeights) -> Result<DenseBevTensor, DetectorError> {
    if x.channels != w.in_channels {
        return Err(DetectorError::Shape(format!(
            "conv2d expects {} input channels, got {}",
            w.in_channels, x.channels
        )));
    }
    let (h, wd) = (x.height, x.width);
    let plane = h * wd;
    let mut out = DenseBevTensor::zeros(w.out_channels, h, wd);
    if plane == 0 {
        return Ok(out);
    }
    for co in 0..w.out_channels {
        let dst = &mut out.data[co * plane..(co + 1) * plane];
        for ci in 0..w.in_channels {
            let src = &x.data[ci * plane..(ci + 1) * plane];
            let k = &w.kernel[(co * w.in_channels + ci) * 9..(co * w.in_channels + ci + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = k[ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    // dst[y][x] += wv * src[y + ky - 1][x + kx - 1]
                    let (y0, y1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                    let (x0, x1) = (1usize.saturating_sub(kx), (wd + 1 - kx).min(wd));
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let drow = &mut dst[y * wd + x0..y * wd + x1];
                        let srow = &src[sy * wd + x0 + kx - 1..sy * wd + x1 + kx - 1];
                        for (d, &s) in drow.iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
        let b = w.bias[co];
        for v in dst.iter_mut() {
            *v = (*v + b).max(0.0);
        }
    }
    Ok(out)
}

pub fn backbone2d(bev: &DenseBevTensor, w: &ModelWeights) -> Result<DenseBevTensor, DetectorError> {
    bev.check_finite()?;
    let x = conv2d_same_relu(bev, &w.conv2d[0])?;
    conv2d_same_relu(&x, &w.conv2d[1])
}
