//! Named pipeline steps, the tensor store they read and write, and the
//! conversions between store values and wire payloads.

use std::collections::HashMap;
use std::fmt;
use std::time::Duration;

use crate::ingest::{Point, PointCloud};
use crate::tensor::{Box3D, DenseBevTensor, Detections, SparseVoxelTensor, TensorPayload};

use super::heads::Proposals;
use super::DetectorError;

pub const POINTS: &str = "points";
pub const VFE_OUT: &str = "vfe_out";
pub const CONV1: &str = "conv1";
pub const CONV2: &str = "conv2";
pub const CONV3: &str = "conv3";
pub const CONV4: &str = "conv4";
pub const BEV: &str = "bev";
pub const BEV_FEATURES: &str = "bev_features";
pub const PROPOSALS: &str = "proposals";
pub const DETECTIONS: &str = "detections";

/// One entry of the ordered step list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Step {
    Pre,
    Vfe,
    Conv1,
    Conv2,
    Conv3,
    Conv4,
    MapToBev,
    Backbone2d,
    DenseHead,
    RoiHead,
}

impl Step {
    pub const ALL: [Step; 10] = [
        Step::Pre,
        Step::Vfe,
        Step::Conv1,
        Step::Conv2,
        Step::Conv3,
        Step::Conv4,
        Step::MapToBev,
        Step::Backbone2d,
        Step::DenseHead,
        Step::RoiHead,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Step::Pre => "pre",
            Step::Vfe => "vfe",
            Step::Conv1 => "conv1",
            Step::Conv2 => "conv2",
            Step::Conv3 => "conv3",
            Step::Conv4 => "conv4",
            Step::MapToBev => "map_to_bev",
            Step::Backbone2d => "backbone2d",
            Step::DenseHead => "dense_head",
            Step::RoiHead => "roi_head",
        }
    }

    pub fn from_id(id: &str) -> Option<Step> {
        Step::ALL.into_iter().find(|s| s.id() == id)
    }

    /// Tensors read by this step. Pre-processing crops `points` in place.
    pub fn consumes(self) -> &'static [&'static str] {
        match self {
            Step::Pre | Step::Vfe => &[POINTS],
            Step::Conv1 => &[VFE_OUT],
            Step::Conv2 => &[CONV1],
            Step::Conv3 => &[CONV2],
            Step::Conv4 => &[CONV3],
            Step::MapToBev => &[CONV4],
            Step::Backbone2d => &[BEV],
            Step::DenseHead => &[BEV_FEATURES],
            Step::RoiHead => &[PROPOSALS, CONV2, CONV3, CONV4],
        }
    }

    pub fn produces(self) -> &'static [&'static str] {
        match self {
            Step::Pre => &[POINTS],
            Step::Vfe => &[VFE_OUT],
            Step::Conv1 => &[CONV1],
            Step::Conv2 => &[CONV2],
            Step::Conv3 => &[CONV3],
            Step::Conv4 => &[CONV4],
            Step::MapToBev => &[BEV],
            Step::Backbone2d => &[BEV_FEATURES],
            Step::DenseHead => &[PROPOSALS],
            Step::RoiHead => &[DETECTIONS],
        }
    }

    pub fn module(self) -> Module {
        match self {
            Step::Pre => Module::Pre,
            Step::Vfe => Module::Vfe,
            Step::Conv1 | Step::Conv2 | Step::Conv3 | Step::Conv4 => Module::Backbone3d,
            Step::MapToBev => Module::MapToBev,
            Step::Backbone2d => Module::Backbone2d,
            Step::DenseHead => Module::DenseHead,
            Step::RoiHead => Module::RoiHead,
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Detector modules, with the four backbone convolutions folded together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Module {
    Pre,
    Vfe,
    Backbone3d,
    MapToBev,
    Backbone2d,
    DenseHead,
    RoiHead,
}

impl Module {
    /// The six network modules, in execution order (pre-processing excluded).
    pub const NETWORK: [Module; 6] =
        [Module::Vfe, Module::Backbone3d, Module::MapToBev, Module::Backbone2d, Module::DenseHead, Module::RoiHead];

    pub fn name(self) -> &'static str {
        match self {
            Module::Pre => "Pre-process",
            Module::Vfe => "VFE",
            Module::Backbone3d => "Backbone 3D",
            Module::MapToBev => "Map to BEV",
            Module::Backbone2d => "Backbone 2D",
            Module::DenseHead => "Dense Head",
            Module::RoiHead => "RoI Head",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Points,
    Sparse,
    Dense,
    Proposals,
    Detections,
}

pub fn tensor_kind(id: &str) -> Option<TensorKind> {
    Some(match id {
        POINTS => TensorKind::Points,
        VFE_OUT | CONV1 | CONV2 | CONV3 | CONV4 => TensorKind::Sparse,
        BEV | BEV_FEATURES => TensorKind::Dense,
        PROPOSALS => TensorKind::Proposals,
        DETECTIONS => TensorKind::Detections,
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorValue {
    Points(PointCloud),
    Sparse(SparseVoxelTensor),
    Dense(DenseBevTensor),
    Proposals(Proposals),
    Detections(Detections),
}

impl TensorValue {
    pub fn kind(&self) -> TensorKind {
        match self {
            TensorValue::Points(_) => TensorKind::Points,
            TensorValue::Sparse(_) => TensorKind::Sparse,
            TensorValue::Dense(_) => TensorKind::Dense,
            TensorValue::Proposals(_) => TensorKind::Proposals,
            TensorValue::Detections(_) => TensorKind::Detections,
        }
    }

    /// Wire form. Points travel as a dense `1 x N x 4` matrix, proposals as
    /// `1 x K x 8` (box then score), detections as `1 x K x 9` (box, score, label).
    pub fn to_payload(&self) -> TensorPayload {
        fn rows(width: usize, data: Vec<f32>) -> TensorPayload {
            let height = if width == 0 { 0 } else { data.len() / width };
            TensorPayload::Dense(DenseBevTensor { channels: 1, height, width, data })
        }
        match self {
            TensorValue::Points(c) => rows(4, c.points.iter().flat_map(|p| p.to_array()).collect()),
            TensorValue::Sparse(t) => TensorPayload::Sparse(t.clone()),
            TensorValue::Dense(t) => TensorPayload::Dense(t.clone()),
            TensorValue::Proposals(p) => rows(
                8,
                p.boxes.iter().zip(&p.scores).flat_map(|(b, &s)| b.to_array().into_iter().chain([s])).collect(),
            ),
            TensorValue::Detections(d) => rows(
                9,
                d.boxes
                    .iter()
                    .zip(&d.scores)
                    .zip(&d.labels)
                    .flat_map(|((b, &s), &l)| b.to_array().into_iter().chain([s, l as f32]))
                    .collect(),
            ),
        }
    }

    pub fn from_payload(kind: TensorKind, payload: TensorPayload) -> Result<Self, DetectorError> {
        let mismatch = || DetectorError::Shape(format!("payload does not fit a {kind:?} tensor"));
        let matrix = |p: TensorPayload, width: usize| -> Result<Vec<f32>, DetectorError> {
            match p {
                TensorPayload::Dense(d) if d.channels == 1 && (d.width == width || d.height == 0) => Ok(d.data),
                _ => Err(mismatch()),
            }
        };
        Ok(match kind {
            TensorKind::Points => {
                let data = matrix(payload, 4)?;
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(DetectorError::Shape("non-finite point".into()));
                }
                let points = data.chunks_exact(4).map(|c| Point::new(c[0], c[1], c[2], c[3])).collect();
                TensorValue::Points(PointCloud::new("", points))
            }
            TensorKind::Sparse => match payload {
                TensorPayload::Sparse(t) => TensorValue::Sparse(t),
                _ => return Err(mismatch()),
            },
            TensorKind::Dense => match payload {
                TensorPayload::Dense(t) => TensorValue::Dense(t),
                _ => return Err(mismatch()),
            },
            TensorKind::Proposals => {
                let data = matrix(payload, 8)?;
                let mut p = Proposals::default();
                for r in data.chunks_exact(8) {
                    p.boxes.push(Box3D::from_array(r[..7].try_into().unwrap()));
                    p.scores.push(r[7]);
                }
                TensorValue::Proposals(p)
            }
            TensorKind::Detections => {
                let data = matrix(payload, 9)?;
                let mut d = Detections::default();
                for r in data.chunks_exact(9) {
                    d.boxes.push(Box3D::from_array(r[..7].try_into().unwrap()));
                    d.scores.push(r[7]);
                    d.labels.push(r[8] as u32);
                }
                TensorValue::Detections(d)
            }
        })
    }
}

/// Intermediate tensors keyed by id.
#[derive(Debug, Clone, Default)]
pub struct TensorStore {
    values: HashMap<String, TensorValue>,
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_points(cloud: PointCloud) -> Self {
        let mut s = Self::new();
        s.insert(POINTS, TensorValue::Points(cloud));
        s
    }

    pub fn insert(&mut self, id: impl Into<String>, v: TensorValue) {
        self.values.insert(id.into(), v);
    }

    pub fn get(&self, id: &str) -> Option<&TensorValue> {
        self.values.get(id)
    }

    pub fn remove(&mut self, id: &str) -> Option<TensorValue> {
        self.values.remove(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.values.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn points(&self, id: &'static str) -> Result<&PointCloud, DetectorError> {
        match self.get(id) {
            Some(TensorValue::Points(c)) => Ok(c),
            Some(_) => Err(DetectorError::KindMismatch(id)),
            None => Err(DetectorError::MissingTensor(id.into())),
        }
    }

    pub(crate) fn sparse(&self, id: &'static str) -> Result<&SparseVoxelTensor, DetectorError> {
        match self.get(id) {
            Some(TensorValue::Sparse(t)) => Ok(t),
            Some(_) => Err(DetectorError::KindMismatch(id)),
            None => Err(DetectorError::MissingTensor(id.into())),
        }
    }

    pub(crate) fn dense(&self, id: &'static str) -> Result<&DenseBevTensor, DetectorError> {
        match self.get(id) {
            Some(TensorValue::Dense(t)) => Ok(t),
            Some(_) => Err(DetectorError::KindMismatch(id)),
            None => Err(DetectorError::MissingTensor(id.into())),
        }
    }

    pub(crate) fn proposals(&self, id: &'static str) -> Result<&Proposals, DetectorError> {
        match self.get(id) {
            Some(TensorValue::Proposals(p)) => Ok(p),
            Some(_) => Err(DetectorError::KindMismatch(id)),
            None => Err(DetectorError::MissingTensor(id.into())),
        }
    }
}

/// Wall-clock duration of each executed step, in execution order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepTimings {
    pub entries: Vec<(Step, Duration)>,
}

impl StepTimings {
    pub fn total(&self) -> Duration {
        self.entries.iter().map(|(_, d)| *d).sum()
    }

    pub fn step_ms(&self, step: Step) -> f64 {
        self.entries.iter().filter(|(s, _)| *s == step).map(|(_, d)| d.as_secs_f64() * 1e3).sum()
    }

    pub fn module_ms(&self, module: Module) -> f64 {
        self.entries.iter().filter(|(s, _)| s.module() == module).map(|(_, d)| d.as_secs_f64() * 1e3).sum()
    }

    /// Percentage of the six network modules' combined time spent in each.
    pub fn module_ratios(&self) -> Vec<(Module, f64)> {
        let total: f64 = Module::NETWORK.iter().map(|&m| self.module_ms(m)).sum();
        Module::NETWORK
            .iter()
            .map(|&m| (m, if total > 0.0 { 100.0 * self.module_ms(m) / total } else { 0.0 }))
            .collect()
    }
}
