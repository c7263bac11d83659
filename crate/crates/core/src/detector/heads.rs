//! Proposal generation over the BEV map and multi-scale RoI refinement.

use crate::tensor::{Box3D, DenseBevTensor, Detections, SparseVoxelTensor};

use super::config::BEV_STRIDE;
use super::weights::HEAD_OUTPUTS;
use super::{ArchConfig, DetectorError, ModelWeights};

/// Residuals are clamped before `exp` so box sizes stay finite.
const SIZE_RESIDUAL_LIMIT: f32 = 4.0;

/// Pre-NMS region proposals, sorted by objectness descending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Proposals {
    pub boxes: Vec<Box3D>,
    pub scores: Vec<f32>,
}

impl Proposals {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Anchor for BEV cell `(row, col)`: centered on the cell, fixed size, yaw 0.
pub fn anchor_for_cell(arch: &ArchConfig, row: usize, col: usize) -> Box3D {
    let vs = arch.voxel.voxel_size;
    let min = arch.voxel.range.min;
    let s = BEV_STRIDE as f32;
    Box3D {
        center: [
            min[0] + (col as f32 + 0.5) * vs[0] * s,
            min[1] + (row as f32 + 0.5) * vs[1] * s,
            arch.anchor_z,
        ],
        size: arch.anchor_size,
        yaw: 0.0,
    }
}

/// Standard residual box decoding against an anchor.
pub fn decode_box(anchor: &Box3D, r: &[f32]) -> Box3D {
    let [la, wa, ha] = anchor.size;
    let diag = (la * la + wa * wa).sqrt();
    let clamp = |v: f32| v.clamp(-SIZE_RESIDUAL_LIMIT, SIZE_RESIDUAL_LIMIT);
    Box3D {
        center: [
            anchor.center[0] + r[0] * diag,
            anchor.center[1] + r[1] * diag,
            anchor.center[2] + r[2] * ha,
        ],
        size: [la * clamp(r[3]).exp(), wa * clamp(r[4]).exp(), ha * clamp(r[5]).exp()],
        yaw: anchor.yaw + r[6],
    }
}

/// Per-cell 1x1 convolution to `(objectness, 7 residuals)`, then top-K by
/// objectness with ties broken by `(row, col)` ascending.
pub fn dense_head(feat: &DenseBevTensor, w: &ModelWeights, arch: &ArchConfig) -> Result<Proposals, DetectorError> {
    let lw = &w.dense_head;
    if feat.channels != lw.in_features {
        return Err(DetectorError::Shape(format!(
            "dense head expects {} channels, got {}",
            lw.in_features, feat.channels
        )));
    }
    feat.check_finite()?;
    let plane = feat.height * feat.width;
    let mut maps = vec![0.0f32; HEAD_OUTPUTS * plane];
    for o in 0..HEAD_OUTPUTS {
        let dst = &mut maps[o * plane..(o + 1) * plane];
        for c in 0..feat.channels {
            let wv = lw.weight[o * lw.in_features + c];
            for (d, &x) in dst.iter_mut().zip(&feat.data[c * plane..(c + 1) * plane]) {
                *d += wv * x;
            }
        }
        let b = lw.bias[o];
        dst.iter_mut().for_each(|d| *d += b);
    }

    let scores: Vec<f32> = maps[..plane].iter().map(|&l| sigmoid(l)).collect();
    let mut order: Vec<usize> = (0..plane).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(arch.top_k);

    let mut props = Proposals::default();
    for cell in order {
        let residuals: Vec<f32> = (1..HEAD_OUTPUTS).map(|o| maps[o * plane + cell]).collect();
        let anchor = anchor_for_cell(arch, cell / feat.width, cell % feat.width);
        props.boxes.push(decode_box(&anchor, &residuals));
        props.scores.push(scores[cell]);
    }
    Ok(props)
}

/// The backbone scales the RoI head pools from.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoiScales<'a> {
    pub conv2: Option<&'a SparseVoxelTensor>,
    pub conv3: Option<&'a SparseVoxelTensor>,
    pub conv4: Option<&'a SparseVoxelTensor>,
}

/// Metric center of voxel `coord` at backbone stride `stride`, as `(x, y, z)`.
pub fn voxel_center(arch: &ArchConfig, coord: [i32; 3], stride: u32) -> [f32; 3] {
    let vs = arch.voxel.voxel_size;
    let min = arch.voxel.range.min;
    let s = stride as f32;
    [
        min[0] + (coord[2] as f32 + 0.5) * vs[0] * s,
        min[1] + (coord[1] as f32 + 0.5) * vs[1] * s,
        min[2] + (coord[0] as f32 + 0.5) * vs[2] * s,
    ]
}

fn contains(lo: &[f32; 3], hi: &[f32; 3], p: &[f32; 3]) -> bool {
    (0..3).all(|a| lo[a] <= p[a] && p[a] <= hi[a])
}

/// Mean feature of the voxels whose centers lie inside the box's axis-aligned
/// bounds, accumulated in canonical order; zeros when none do.
pub fn pool_box(arch: &ArchConfig, t: &SparseVoxelTensor, stride: u32, b: &Box3D) -> Vec<f32> {
    let (lo, hi) = b.aabb();
    let vs = arch.voxel.voxel_size;
    let min = arch.voxel.range.min;
    // Candidate index window per (x, y, z) axis, one cell of slack each side;
    // membership is decided by the exact center test below.
    let window = |axis: usize| {
        let cell = vs[axis] * stride as f32;
        let a = ((lo[axis] - min[axis]) / cell - 0.5).floor() as i64 - 1;
        let z = ((hi[axis] - min[axis]) / cell - 0.5).ceil() as i64 + 1;
        (a.max(0), z)
    };
    let (x0, x1) = window(0);
    let (y0, y1) = window(1);
    let (z0, z1) = window(2);
    let mut acc = vec![0.0f32; t.channels];
    let mut n = 0usize;
    if z1 >= z0 {
        let start = t.coords.partition_point(|c| (c[0] as i64) < z0);
        for i in start..t.nnz() {
            let c = t.coords[i];
            if c[0] as i64 > z1 {
                break;
            }
            let (y, x) = (c[1] as i64, c[2] as i64);
            if y < y0 || y > y1 || x < x0 || x > x1 {
                continue;
            }
            if contains(&lo, &hi, &voxel_center(arch, c, stride)) {
                for (a, &v) in acc.iter_mut().zip(t.feature(i)) {
                    *a += v;
                }
                n += 1;
            }
        }
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f32);
    }
    acc
}

/// Concatenated conv2/conv3/conv4 pooled features for one proposal.
pub fn pooled_features(arch: &ArchConfig, scales: &RoiScales, b: &Box3D) -> Result<Vec<f32>, DetectorError> {
    let mut out = Vec::new();
    for (name, t, stride) in [("conv2", scales.conv2, 2), ("conv3", scales.conv3, 4), ("conv4", scales.conv4, 8)] {
        let t = t.ok_or(DetectorError::MissingScale(name))?;
        out.extend(pool_box(arch, t, stride, b));
    }
    Ok(out)
}

/// Rescores each proposal from its pooled multi-scale features and re-sorts
/// by the refined score, descending; equal scores keep proposal order.
pub fn roi_head(
    props: &Proposals,
    scales: &RoiScales,
    w: &ModelWeights,
    arch: &ArchConfig,
) -> Result<Detections, DetectorError> {
    let lw = &w.roi_head;
    let mut scored = Vec::with_capacity(props.len());
    for (i, b) in props.boxes.iter().enumerate() {
        let pooled = pooled_features(arch, scales, b)?;
        if pooled.len() != lw.in_features {
            return Err(DetectorError::Shape(format!(
                "roi head expects {} pooled features, got {}",
                lw.in_features,
                pooled.len()
            )));
        }
        let logit = pooled.iter().zip(&lw.weight).fold(lw.bias[0], |acc, (x, w)| acc + x * w);
        scored.push((sigmoid(logit), i));
    }
    if props.is_empty() {
        // Still validate the scales so a missing tensor never goes unnoticed.
        for (name, t) in [("conv2", scales.conv2), ("conv3", scales.conv3), ("conv4", scales.conv4)] {
            t.ok_or(DetectorError::MissingScale(name))?;
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(Detections {
        boxes: scored.iter().map(|&(_, i)| props.boxes[i]).collect(),
        scores: scored.iter().map(|&(s, _)| s).collect(),
        labels: vec![0; scored.len()],
    })
}
