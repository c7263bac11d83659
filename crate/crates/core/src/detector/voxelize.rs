use std::collections::HashMap;

use crate::ingest::{Point, PointCloud};
use crate::tensor::SparseVoxelTensor;

use super::{DetectorError, VoxelConfig, VFE_CHANNELS};

/// Grid cell of `p` as `(d, h, w)`, or `None` outside the grid.
///
/// Points exactly inside the range can round onto the far edge; those are
/// clamped into the last cell.
pub fn voxel_index(p: &Point, cfg: &VoxelConfig, grid: [u32; 3]) -> Option<[i32; 3]> {
    let xyz = [p.x, p.y, p.z];
    let mut idx = [0i32; 3];
    for axis in 0..3 {
        let f = ((xyz[axis] - cfg.range.min[axis]) / cfg.voxel_size[axis]).floor();
        let dim = grid[2 - axis] as f32;
        if !(f >= 0.0 && xyz[axis] < cfg.range.max[axis]) {
            return None;
        }
        idx[2 - axis] = f.min(dim - 1.0) as i32;
    }
    Some(idx)
}

/// Mean VFE: one voxel per occupied cell, feature = mean `(x, y, z, intensity)`
/// of the first `max_points_per_voxel` points that land in it.
pub fn voxelize_mean(cloud: &PointCloud, cfg: &VoxelConfig) -> Result<SparseVoxelTensor, DetectorError> {
    let grid = cfg.grid_shape();
    let mut slots: HashMap<[i32; 3], usize> = HashMap::new();
    let mut coords = Vec::new();
    let mut sums: Vec<[f32; VFE_CHANNELS]> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();

    for p in &cloud.points {
        let Some(c) = voxel_index(p, cfg, grid) else { continue };
        let slot = *slots.entry(c).or_insert_with(|| {
            coords.push(c);
            sums.push([0.0; VFE_CHANNELS]);
            counts.push(0);
            coords.len() - 1
        });
        if counts[slot] < cfg.max_points_per_voxel {
            for (s, v) in sums[slot].iter_mut().zip(p.to_array()) {
                *s += v;
            }
            counts[slot] += 1;
        }
    }
    if coords.is_empty() {
        return Err(DetectorError::EmptyCloud);
    }

    let features = sums
        .iter()
        .zip(&counts)
        .flat_map(|(s, &n)| s.map(|v| v / n as f32))
        .collect();
    Ok(SparseVoxelTensor::new(grid, VFE_CHANNELS, coords, features)?.to_canonical()?)
}
