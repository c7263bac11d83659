//! A deterministic miniature Voxel R-CNN-style detector.
//!
//! Modules run in a fixed order: pre-process, VFE, Backbone 3D (conv1..conv4),
//! Map to BEV, Backbone 2D, Dense Head, RoI Head. The RoI head pools from
//! conv2, conv3 and conv4, so those tensors stay live past the BEV branch.

pub mod backbone3d;
pub mod bev;
mod config;
pub mod heads;
pub mod pipeline;
pub mod voxelize;
mod weights;

use std::time::Instant;

use thiserror::Error;

use crate::ingest::{filter_range, PointCloud};
use crate::tensor::{Detections, TensorError};

pub use backbone3d::{backbone3d, sparse_conv3d, ConvMode, MultiScaleFeatures};
pub use bev::{backbone2d, map_to_bev};
pub use config::{ArchConfig, VoxelConfig, BEV_STRIDE, VFE_CHANNELS};
pub use heads::{dense_head, roi_head, Proposals, RoiScales};
pub use pipeline::{Module, Step, StepTimings, TensorKind, TensorStore, TensorValue};
pub use voxelize::voxelize_mean;
pub use weights::{Conv2dWeights, Conv3dWeights, LinearWeights, ModelWeights, HEAD_OUTPUTS, TAPS_3D};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("no occupied voxels after voxelization")]
    EmptyCloud,
    #[error("RoI head is missing backbone scale {0}")]
    MissingScale(&'static str),
    #[error("tensor {0:?} is not available")]
    MissingTensor(String),
    #[error("tensor {0:?} has the wrong kind")]
    KindMismatch(&'static str),
    #[error("non-canonical sparse tensor {0:?}")]
    NonCanonical(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architecture plus seeded weights; shared read-only between inferences.
#[derive(Debug, Clone)]
pub struct Detector {
    arch: ArchConfig,
    weights: ModelWeights,
}

impl Detector {
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self, DetectorError> {
        arch.validate()?;
        let weights = ModelWeights::init(seed, &arch);
        Ok(Self { arch, weights })
    }

    pub fn with_weights(arch: ArchConfig, weights: ModelWeights) -> Result<Self, DetectorError> {
        arch.validate()?;
        weights.check_arch(&arch)?;
        Ok(Self { arch, weights })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn seed(&self) -> u64 {
        self.weights.seed
    }

    pub fn arch_hash(&self) -> u64 {
        self.arch.arch_hash(self.weights.seed)
    }

    fn canonical<'a>(
        &self,
        store: &'a TensorStore,
        id: &'static str,
    ) -> Result<&'a crate::tensor::SparseVoxelTensor, DetectorError> {
        let t = store.sparse(id)?;
        if !t.is_canonical() {
            return Err(DetectorError::NonCanonical(id));
        }
        Ok(t)
    }

    /// Runs one step, reading its inputs from `store` and writing its outputs back.
    pub fn run_step(&self, step: Step, store: &mut TensorStore) -> Result<(), DetectorError> {
        use pipeline::*;
        let w = &self.weights;
        let value = match step {
            Step::Pre => TensorValue::Points(filter_range(store.points(POINTS)?, &self.arch.voxel.range)),
            Step::Vfe => TensorValue::Sparse(voxelize_mean(store.points(POINTS)?, &self.arch.voxel)?),
            Step::Conv1 => {
                TensorValue::Sparse(sparse_conv3d(self.canonical(store, VFE_OUT)?, &w.conv3d[0], ConvMode::Submanifold)?)
            }
            Step::Conv2 => {
                TensorValue::Sparse(sparse_conv3d(self.canonical(store, CONV1)?, &w.conv3d[1], ConvMode::Strided)?)
            }
            Step::Conv3 => {
                TensorValue::Sparse(sparse_conv3d(self.canonical(store, CONV2)?, &w.conv3d[2], ConvMode::Strided)?)
            }
            Step::Conv4 => {
                TensorValue::Sparse(sparse_conv3d(self.canonical(store, CONV3)?, &w.conv3d[3], ConvMode::Strided)?)
            }
            Step::MapToBev => TensorValue::Dense(map_to_bev(self.canonical(store, CONV4)?, self.arch.dense_cap)?),
            Step::Backbone2d => TensorValue::Dense(backbone2d(store.dense(BEV)?, w)?),
            Step::DenseHead => TensorValue::Proposals(dense_head(store.dense(BEV_FEATURES)?, w, &self.arch)?),
            Step::RoiHead => {
                let scale = |id: &'static str| match store.get(id) {
                    None => Err(DetectorError::MissingScale(id)),
                    Some(_) => self.canonical(store, id).map(Some),
                };
                let scales = RoiScales { conv2: scale(CONV2)?, conv3: scale(CONV3)?, conv4: scale(CONV4)? };
                TensorValue::Detections(roi_head(store.proposals(PROPOSALS)?, &scales, w, &self.arch)?)
            }
        };
        store.insert(step.produces()[0], value);
        Ok(())
    }

    /// Runs `steps` in order, appending each step's duration to `timings`.
    pub fn run_steps(
        &self,
        steps: &[Step],
        store: &mut TensorStore,
        timings: &mut StepTimings,
    ) -> Result<(), DetectorError> {
        for &step in steps {
            let start = Instant::now();
            self.run_step(step, store)?;
            timings.entries.push((step, start.elapsed()));
        }
        Ok(())
    }

    /// The whole pipeline on one device.
    pub fn run_pipeline(&self, cloud: &PointCloud) -> Result<(Detections, StepTimings), DetectorError> {
        let mut store = TensorStore::with_points(cloud.clone());
        let mut timings = StepTimings::default();
        self.run_steps(&Step::ALL, &mut store, &mut timings)?;
        match store.remove(pipeline::DETECTIONS) {
            Some(TensorValue::Detections(d)) => Ok((d, timings)),
            _ => Err(DetectorError::MissingTensor(pipeline::DETECTIONS.into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Point;
    use crate::rng::SplitMix64;

    fn scene(seed: u64, n: usize) -> PointCloud {
        let mut g = SplitMix64::new(seed);
        let pts = (0..n)
            .map(|_| Point::new(g.uniform(0.0, 70.0), g.uniform(-39.0, 39.0), g.uniform(-2.5, 0.5), g.next_unit_f32()))
            .collect();
        PointCloud::new("s", pts)
    }

    #[test]
    fn repeated_runs_are_identical() {
        let det = Detector::new(ArchConfig::tiny(), 42).unwrap();
        let cloud = scene(1, 3000);
        let (a, ta) = det.run_pipeline(&cloud).unwrap();
        let (b, _) = det.run_pipeline(&cloud).unwrap();
        assert!(a.bit_eq(&b));
        assert_eq!(a.len(), 64);
        assert!(a.scores.windows(2).all(|w| w[0] >= w[1]));
        let sum: f64 = ta.module_ratios().iter().map(|(_, r)| r).sum();
        assert!((sum - 100.0).abs() < 1e-6);
        let order: Vec<Step> = ta.entries.iter().map(|(s, _)| *s).collect();
        assert_eq!(order, Step::ALL.to_vec());
    }

    #[test]
    fn single_point_scene_completes() {
        let det = Detector::new(ArchConfig::tiny(), 1).unwrap();
        let cloud = PointCloud::new("one", vec![Point::new(10.0, 0.0, -1.0, 0.5)]);
        let (d, _) = det.run_pipeline(&cloud).unwrap();
        assert!(d.len() <= 64);
    }

    #[test]
    fn empty_after_crop_is_error() {
        let det = Detector::new(ArchConfig::tiny(), 1).unwrap();
        let cloud = PointCloud::new("behind", vec![Point::new(-10.0, 0.0, -1.0, 0.5)]);
        assert!(matches!(det.run_pipeline(&cloud), Err(DetectorError::EmptyCloud)));
    }

    #[test]
    fn roi_head_depends_on_each_scale() {
        let det = Detector::new(ArchConfig::tiny(), 42).unwrap();
        let cloud = scene(2, 4000);
        let mut store = TensorStore::with_points(cloud);
        let mut t = StepTimings::default();
        det.run_steps(&Step::ALL[..9], &mut store, &mut t).unwrap();
        let run = |s: &TensorStore| {
            let mut s = s.clone();
            det.run_step(Step::RoiHead, &mut s).unwrap();
            match s.remove(pipeline::DETECTIONS) {
                Some(TensorValue::Detections(d)) => d,
                _ => unreachable!(),
            }
        };
        let base = run(&store);
        for id in [pipeline::CONV2, pipeline::CONV3, pipeline::CONV4] {
            let mut perturbed = store.clone();
            if let Some(TensorValue::Sparse(t)) = perturbed.get(id).cloned() {
                let mut t = t;
                t.features.iter_mut().for_each(|v| *v += 1.0);
                perturbed.insert(id, TensorValue::Sparse(t));
            }
            assert!(!run(&perturbed).bit_eq(&base), "roi head ignored {id}");
            let mut missing = store.clone();
            missing.remove(id);
            assert!(matches!(det.run_step(Step::RoiHead, &mut missing), Err(DetectorError::MissingScale(_))));
        }
    }

    #[test]
    fn mismatched_weights_rejected() {
        let w = ModelWeights::init(1, &ArchConfig::tiny());
        assert!(Detector::with_weights(ArchConfig::default(), w.clone()).is_err());
        assert!(Detector::with_weights(ArchConfig::tiny(), w).is_ok());
    }
}
