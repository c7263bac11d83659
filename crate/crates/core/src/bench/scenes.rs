//! Synthetic LiDAR-like scenes in KITTI `.bin` layout.
//!
//! A sensor at the origin sees a ground plane all around it (range density
//! falls off with distance) plus a handful of car-sized boxes whose surfaces
//! are densely sampled. Roughly half of all points lie behind the sensor or
//! outside the lateral crop.

use std::fs;
use std::path::{Path, PathBuf};

use crate::ingest::{IngestError, Point, PointCloud};
use crate::rng::SplitMix64;

const SENSOR_HEIGHT: f32 = 1.73;
const OBJECT_SHARE: f32 = 0.2;

fn scene_rng(seed: u64, index: usize) -> SplitMix64 {
    let mut g = SplitMix64::new(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    g.next_u64();
    g
}

pub fn scene_name(index: usize) -> String {
    format!("scene_{index:06}")
}

/// Scene `index` of the stream identified by `seed`, with exactly `points` points.
pub fn generate_scene(seed: u64, index: usize, points: usize) -> PointCloud {
    let mut g = scene_rng(seed, index);
    let n_objects = 6 + g.below(10) as usize;
    let objects: Vec<([f32; 3], [f32; 3], f32)> = (0..n_objects)
        .map(|_| {
            let r = g.uniform(5.0, 60.0);
            let theta = g.uniform(-std::f32::consts::PI, std::f32::consts::PI);
            let size = [g.uniform(3.5, 4.5), g.uniform(1.5, 1.9), g.uniform(1.4, 1.7)];
            let center = [r * theta.cos(), r * theta.sin(), -SENSOR_HEIGHT + size[2] / 2.0];
            (center, size, g.uniform(-std::f32::consts::PI, std::f32::consts::PI))
        })
        .collect();

    let n_obj_points = (points as f32 * OBJECT_SHARE) as usize;
    let mut out = Vec::with_capacity(points);
    for i in 0..points {
        let p = if i < n_obj_points {
            let (c, s, yaw) = objects[i % n_objects];
            // A point on one of the five visible faces of the box.
            let mut local = [g.uniform(-0.5, 0.5) * s[0], g.uniform(-0.5, 0.5) * s[1], g.uniform(-0.5, 0.5) * s[2]];
            let face = g.below(5) as usize;
            match face {
                0 | 1 => local[0] = if face == 0 { -0.5 } else { 0.5 } * s[0],
                2 | 3 => local[1] = if face == 2 { -0.5 } else { 0.5 } * s[1],
                _ => local[2] = 0.5 * s[2],
            }
            let (sn, cs) = yaw.sin_cos();
            Point::new(
                c[0] + local[0] * cs - local[1] * sn + 0.02 * g.normal(),
                c[1] + local[0] * sn + local[1] * cs + 0.02 * g.normal(),
                c[2] + local[2] + 0.02 * g.normal(),
                g.uniform(0.2, 0.9),
            )
        } else {
            let u = g.next_unit_f32();
            let r = 2.5 + 75.0 * u * u.sqrt();
            let theta = g.uniform(-std::f32::consts::PI, std::f32::consts::PI);
            Point::new(r * theta.cos(), r * theta.sin(), -SENSOR_HEIGHT + 0.05 * g.normal(), g.uniform(0.0, 0.4))
        };
        out.push(p);
    }
    PointCloud::new(scene_name(index), out)
}

/// Writes `count` scenes as `scene_%06d.bin` into `out_dir`.
pub fn gen_scenes(count: usize, points: usize, seed: u64, out_dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let io = |path: &Path, source| IngestError::Io { path: path.to_path_buf(), source };
    fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    (0..count)
        .map(|i| {
            let path = out_dir.join(format!("{}.bin", scene_name(i)));
            fs::write(&path, generate_scene(seed, i, points).to_kitti_bin()).map_err(|e| io(&path, e))?;
            Ok(path)
        })
        .collect()
}
