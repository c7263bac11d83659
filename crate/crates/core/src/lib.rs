//! Split-computing runtime for voxel-based 3D point-cloud object detection.
//!
//! A miniature Voxel R-CNN-style detector is laid out as an ordered list of
//! steps (`pre`, `vfe`, `conv1`..`conv4`, `map_to_bev`, `backbone2d`,
//! `dense_head`, `roi_head`). Any prefix of that list can run on an edge
//! device while the rest runs on an edge server; the tensors crossing the
//! boundary are derived from the step dependency graph, framed with the
//! [`wire`] codec and shipped over TCP by the [`runtime`].
//!
//! Modules:
//! - [`ingest`]: KITTI `.bin` point clouds and range cropping.
//! - [`tensor`]: sparse voxel tensors, dense BEV maps, detections, bundles.
//! - [`detector`]: the detection stages, weights and step executor.
//! - [`splitter`]: module graph, split points, transfer sets, latency planner.
//! - [`wire`]: bit-exact framing and tensor serialization.
//! - [`runtime`]: edge server, edge client, link emulation, timing reports.
//! - [`bench`]: profiling, split sweeps, replay of published numbers, scene generation.

pub mod bench;
pub mod detector;
pub mod ingest;
pub mod rng;
pub mod runtime;
pub mod splitter;
pub mod tensor;
pub mod wire;

pub use detector::{ArchConfig, Detector, ModelWeights, VoxelConfig};
pub use ingest::{Point, PointCloud, Range3D};
pub use splitter::{ModuleGraph, SplitPlan, SplitPoint};
pub use tensor::{DenseBevTensor, Detections, SparseVoxelTensor, TensorBundle, TensorPayload};
