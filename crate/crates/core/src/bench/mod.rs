//! Benchmark drivers behind the command-line tool: module profiling, split
//! sweeps, replay of reference measurements, and synthetic scene generation.

mod profile;
mod replay;
mod scenes;
mod sweep;

use std::path::Path;

use thiserror::Error;

use crate::detector::DetectorError;
use crate::ingest::{list_scenes, load_kitti_file, IngestError, PointCloud};
use crate::runtime::RuntimeError;
use crate::splitter::SplitError;

pub use profile::{cli_profile, render_ratio_table, ModuleRow, ProfileReport};
pub use replay::{cli_replay_paper, reference_link, reference_profile, Reference, ReplayCheck, ReplayReport, REFERENCE};
pub use scenes::{gen_scenes, generate_scene, scene_name};
pub use sweep::{cli_sweep, SweepConfig, SweepReport, SweepRow, SweepTarget, STATUS_OK};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("report error: {0}")]
    Report(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Warm-up and measured repetitions per scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub warmup: usize,
    pub runs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { warmup: 3, runs: 30 }
    }
}

/// Loads up to `max_scenes` scenes (all when `None`) in file-name order.
pub fn load_dataset(dir: &Path, max_scenes: Option<usize>) -> Result<Vec<PointCloud>, BenchError> {
    let mut files = list_scenes(dir)?;
    if let Some(n) = max_scenes {
        files.truncate(n);
    }
    if files.is_empty() {
        return Err(IngestError::EmptyDataset(dir.to_owned()).into());
    }
    Ok(files.iter().map(|f| load_kitti_file(f)).collect::<Result<_, _>>()?)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats() {
        assert_eq!(mean(&[]), 0.0);
        assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn empty_dataset_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path(), None), Err(BenchError::Ingest(IngestError::EmptyDataset(_)))));
    }
}
