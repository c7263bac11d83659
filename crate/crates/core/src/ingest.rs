//! KITTI velodyne point clouds: loading, validation and range cropping.
//!
//! A `.bin` scan is a flat run of little-endian `f32` quadruples
//! `(x, y, z, intensity)` with no header.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Bytes per point record in a KITTI `.bin` file.
pub const POINT_RECORD_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("point data length {0} is not a multiple of {POINT_RECORD_BYTES}")]
    Length(usize),
    #[error("point {index} has a non-finite component")]
    NonFinite { index: usize },
    #[error("invalid range: {0}")]
    Range(String),
    #[error("no .bin scenes found in {0}")]
    EmptyDataset(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn to_array(self) -> [f32; 4] {
        [self.x, self.y, self.z, self.intensity]
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub scene_id: String,
}

impl PointCloud {
    pub fn new(scene_id: impl Into<String>, points: Vec<Point>) -> Self {
        Self { points, scene_id: scene_id.into() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Serializes back to the KITTI `.bin` layout.
    pub fn to_kitti_bin(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * POINT_RECORD_BYTES);
        for p in &self.points {
            for v in p.to_array() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

/// Axis-aligned crop box, half-open on every axis: `min <= v < max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range3D {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl Range3D {
    pub fn new(min: [f32; 3], max: [f32; 3]) -> Result<Self, IngestError> {
        for axis in 0..3 {
            if !(min[axis].is_finite() && max[axis].is_finite()) || min[axis] >= max[axis] {
                return Err(IngestError::Range(format!(
                    "axis {axis}: min {} must be < max {}",
                    min[axis], max[axis]
                )));
            }
        }
        Ok(Self { min, max })
    }

    /// `[0, -40, -3]` to `[70.4, 40, 1]` meters, the usual KITTI front-view crop.
    pub fn kitti_default() -> Self {
        Self { min: [0.0, -40.0, -3.0], max: [70.4, 40.0, 1.0] }
    }

    pub fn contains(&self, p: &Point) -> bool {
        let c = [p.x, p.y, p.z];
        (0..3).all(|a| self.min[a] <= c[a] && c[a] < self.max[a])
    }

    pub fn extent(&self) -> [f32; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }
}

pub fn load_kitti_bin(raw: &[u8], scene_id: impl Into<String>) -> Result<PointCloud, IngestError> {
    if raw.len() % POINT_RECORD_BYTES != 0 {
        return Err(IngestError::Length(raw.len()));
    }
    let mut points = Vec::with_capacity(raw.len() / POINT_RECORD_BYTES);
    for (index, rec) in raw.chunks_exact(POINT_RECORD_BYTES).enumerate() {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap());
        let p = Point::new(f(0), f(1), f(2), f(3));
        if !p.is_finite() {
            return Err(IngestError::NonFinite { index });
        }
        points.push(p);
    }
    Ok(PointCloud::new(scene_id, points))
}

/// Loads one `.bin` file; the scene id is the file stem.
pub fn load_kitti_file(path: &Path) -> Result<PointCloud, IngestError> {
    let raw = fs::read(path).map_err(|source| IngestError::Io { path: path.to_owned(), source })?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    load_kitti_bin(&raw, id)
}

/// Lists the `.bin` files under `path` in name order, or `path` itself if it is a file.
pub fn list_scenes(path: &Path) -> Result<Vec<PathBuf>, IngestError> {
    if path.is_file() {
        return Ok(vec![path.to_owned()]);
    }
    let rd = fs::read_dir(path).map_err(|source| IngestError::Io { path: path.to_owned(), source })?;
    let mut files = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|source| IngestError::Io { path: path.to_owned(), source })?;
        let p = entry.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "bin") {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(IngestError::EmptyDataset(path.to_owned()));
    }
    Ok(files)
}

/// Keeps the points inside `range`, preserving order.
pub fn filter_range(cloud: &PointCloud, range: &Range3D) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().copied().filter(|p| range.contains(p)).collect(),
        scene_id: cloud.scene_id.clone(),
    }
}
