//! Architecture and voxel configuration, with a `key = value` text form.
//!
//! Recognised keys (all optional, defaults in parentheses):
//!
//! ```text
//! voxel_size           = 0.05, 0.05, 0.1          # meters, x y z
//! point_cloud_range    = 0, -40, -3, 70.4, 40, 1  # min xyz, max xyz
//! max_points_per_voxel = 5
//! channels             = 4, 16, 32, 48, 64        # VFE, conv1..conv4
//! bev_channels         = 32                       # backbone2d width
//! top_k                = 64                       # proposals kept
//! anchor_size          = 3.9, 1.6, 1.56           # l w h
//! anchor_z             = -1.0
//! dense_cap            = 67108864                 # max densified elements
//! ```
//!
//! A line `profile = tiny` switches the defaults to the 0.4 m voxel profile
//! before the remaining keys are applied.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::ingest::Range3D;
use crate::tensor::DEFAULT_DENSE_CAP;

use super::DetectorError;

/// Number of `points` attributes averaged by the mean VFE.
pub const VFE_CHANNELS: usize = 4;

/// Backbone stages are strided by 2 after the first, so conv4 sits at 8x.
pub const BEV_STRIDE: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelConfig {
    pub voxel_size: [f32; 3],
    pub range: Range3D,
    pub max_points_per_voxel: usize,
}

impl VoxelConfig {
    pub fn kitti_default() -> Self {
        Self { voxel_size: [0.05, 0.05, 0.1], range: Range3D::kitti_default(), max_points_per_voxel: 5 }
    }

    pub fn tiny() -> Self {
        Self { voxel_size: [0.4, 0.4, 0.4], ..Self::kitti_default() }
    }

    fn cells_along(&self, axis: usize) -> u32 {
        let n = self.range.extent()[axis] as f64 / self.voxel_size[axis] as f64;
        // 70.4 / 0.05 lands a hair above 1408 in float; snap near-integers.
        if (n - n.round()).abs() < 1e-3 {
            n.round() as u32
        } else {
            n.ceil() as u32
        }
    }

    /// Grid extent as `(D, H, W)` = (z, y, x) cell counts.
    pub fn grid_shape(&self) -> [u32; 3] {
        [self.cells_along(2), self.cells_along(1), self.cells_along(0)]
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.voxel_size.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(DetectorError::Config(format!("voxel sizes must be > 0, got {:?}", self.voxel_size)));
        }
        Range3D::new(self.range.min, self.range.max).map_err(|e| DetectorError::Config(e.to_string()))?;
        if self.max_points_per_voxel == 0 {
            return Err(DetectorError::Config("max_points_per_voxel must be >= 1".into()));
        }
        if self.grid_shape().iter().any(|&n| n == 0 || n > i32::MAX as u32 / 2) {
            return Err(DetectorError::Config(format!("bad grid shape {:?}", self.grid_shape())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub voxel: VoxelConfig,
    /// VFE width followed by conv1..conv4 widths.
    pub channels: [usize; 5],
    pub bev_channels: usize,
    pub top_k: usize,
    pub anchor_size: [f32; 3],
    pub anchor_z: f32,
    pub dense_cap: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            voxel: VoxelConfig::kitti_default(),
            channels: [VFE_CHANNELS, 16, 32, 48, 64],
            bev_channels: 32,
            top_k: 64,
            anchor_size: [3.9, 1.6, 1.56],
            anchor_z: -1.0,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

impl ArchConfig {
    /// Coarse 0.4 m voxels; small enough for dense oracles and fast tests.
    pub fn tiny() -> Self {
        Self { voxel: VoxelConfig::tiny(), ..Self::default() }
    }

    pub fn by_profile(name: &str) -> Result<Self, DetectorError> {
        match name {
            "default" | "kitti" => Ok(Self::default()),
            "tiny" => Ok(Self::tiny()),
            other => Err(DetectorError::Config(format!("unknown profile {other:?}"))),
        }
    }

    /// Spatial shapes of conv1..conv4; each stride-2 stage halves and rounds up.
    pub fn stage_shapes(&self) -> [[u32; 3]; 4] {
        let mut shapes = [self.voxel.grid_shape(); 4];
        for k in 1..4 {
            shapes[k] = shapes[k - 1].map(|s| s.div_ceil(2));
        }
        shapes
    }

    /// Channel count of the BEV map: conv4 width stacked over conv4 depth.
    pub fn bev_input_channels(&self) -> usize {
        self.channels[4] * self.stage_shapes()[3][0] as usize
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        self.voxel.validate()?;
        if self.channels[0] != VFE_CHANNELS {
            return Err(DetectorError::Config(format!(
                "input width must be {VFE_CHANNELS} (mean VFE), got {}",
                self.channels[0]
            )));
        }
        if self.channels.iter().any(|&c| c == 0 || c > u16::MAX as usize) || self.bev_channels == 0 {
            return Err(DetectorError::Config("channel widths must be in 1..=65535".into()));
        }
        if self.bev_input_channels() > u16::MAX as usize {
            return Err(DetectorError::Config("BEV channel count exceeds 65535".into()));
        }
        if self.top_k == 0 {
            return Err(DetectorError::Config("top_k must be >= 1".into()));
        }
        if self.anchor_size.iter().any(|&v| !(v.is_finite() && v > 0.0)) || !self.anchor_z.is_finite() {
            return Err(DetectorError::Config("anchor size must be positive and finite".into()));
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn to_text(&self) -> String {
        let join = |v: &[f32]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let r = &self.voxel.range;
        let mut s = String::new();
        writeln!(s, "voxel_size = {}", join(&self.voxel.voxel_size)).unwrap();
        writeln!(s, "point_cloud_range = {}", join(&[r.min[0], r.min[1], r.min[2], r.max[0], r.max[1], r.max[2]])).unwrap();
        writeln!(s, "max_points_per_voxel = {}", self.voxel.max_points_per_voxel).unwrap();
        let ch: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        writeln!(s, "channels = {}", ch.join(", ")).unwrap();
        writeln!(s, "bev_channels = {}", self.bev_channels).unwrap();
        writeln!(s, "top_k = {}", self.top_k).unwrap();
        writeln!(s, "anchor_size = {}", join(&self.anchor_size)).unwrap();
        writeln!(s, "anchor_z = {:?}", self.anchor_z).unwrap();
        writeln!(s, "dense_cap = {}", self.dense_cap).unwrap();
        s
    }

    pub fn parse(text: &str) -> Result<Self, DetectorError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DetectorError::Config(format!("line {}: expected key = value", n + 1)))?;
            entries.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        let mut cfg = match entries.iter().find(|(k, _)| k == "profile") {
            Some((_, p)) => Self::by_profile(p)?,
            None => Self::default(),
        };
        for (key, value) in &entries {
            match key.as_str() {
                "profile" => {}
                "voxel_size" => cfg.voxel.voxel_size = floats::<3>(key, value)?,
                "point_cloud_range" => {
                    let r = floats::<6>(key, value)?;
                    cfg.voxel.range = Range3D::new([r[0], r[1], r[2]], [r[3], r[4], r[5]])
                        .map_err(|e| DetectorError::Config(e.to_string()))?;
                }
                "max_points_per_voxel" => cfg.voxel.max_points_per_voxel = int(key, value)?,
                "channels" => {
                    let v: Vec<usize> = value.split(',').map(|t| int(key, t)).collect::<Result<_, _>>()?;
                    cfg.channels = v
                        .try_into()
                        .map_err(|_| DetectorError::Config("channels needs 5 values".into()))?;
                }
                "bev_channels" => cfg.bev_channels = int(key, value)?,
                "top_k" => cfg.top_k = int(key, value)?,
                "anchor_size" => cfg.anchor_size = floats::<3>(key, value)?,
                "anchor_z" => cfg.anchor_z = floats::<1>(key, value)?[0],
                "dense_cap" => cfg.dense_cap = int(key, value)?,
                other => return Err(DetectorError::Config(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Identity of (architecture, seed) shared by client and server.
    pub fn arch_hash(&self, seed: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        h.update(format!("seed = {seed}\n").as_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

fn int(key: &str, v: &str) -> Result<usize, DetectorError> {
    v.trim().parse().map_err(|_| DetectorError::Config(format!("{key}: bad integer {v:?}")))
}

fn floats<const N: usize>(key: &str, v: &str) -> Result<[f32; N], DetectorError> {
    let parsed: Vec<f32> = v
        .split(',')
        .map(|t| t.trim().parse::<f32>())
        .collect::<Result<_, _>>()
        .map_err(|_| DetectorError::Config(format!("{key}: bad number list {v:?}")))?;
    parsed
        .try_into()
        .map_err(|_| DetectorError::Config(format!("{key}: expected {N} values")))
}
