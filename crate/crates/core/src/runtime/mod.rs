//! Edge-device client, edge server, link emulation and timing reports.

mod client;
mod link;
mod server;
mod timing;

use std::collections::BTreeSet;
use std::io;
use std::time::Instant;

use thiserror::Error;

use crate::detector::pipeline::{tensor_kind, DETECTIONS};
use crate::detector::{Detector, DetectorError, StepTimings, TensorStore, TensorValue};
use crate::ingest::PointCloud;
use crate::splitter::{SplitError, SplitPlan};
use crate::tensor::{Detections, TensorBundle};
use crate::wire::{ReadError, WireError};

pub use client::{client_infer, EdgeClient};
pub use link::{emulate_link, LinkEmulation, ShapedChannel};
pub use server::{serve, Server, ServerHandle, BIND_ENV};
pub use timing::TimingReport;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("server error {code}: {text}")]
    Server { code: u16, text: String },
    #[error("bundle does not match the split: {0}")]
    Bundle(String),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

impl From<ReadError> for RuntimeError {
    fn from(e: ReadError) -> Self {
        match e {
            ReadError::Closed => RuntimeError::Protocol("connection closed by peer".into()),
            ReadError::Io(e) => RuntimeError::Io(e),
            ReadError::Wire(e) => RuntimeError::Wire(e),
        }
    }
}

/// Runs the head of `plan` and collects its transfer set.
pub fn run_head(
    det: &Detector,
    plan: &SplitPlan,
    cloud: &PointCloud,
) -> Result<(TensorStore, StepTimings), RuntimeError> {
    let mut store = TensorStore::with_points(cloud.clone());
    let mut timings = StepTimings::default();
    det.run_steps(&plan.head()?, &mut store, &mut timings)?;
    Ok((store, timings))
}

pub fn bundle_transfer_set(store: &TensorStore, plan: &SplitPlan) -> Result<TensorBundle, RuntimeError> {
    let mut bundle = TensorBundle::new();
    for id in &plan.transfer_set {
        let v = store.get(id).ok_or_else(|| DetectorError::MissingTensor(id.clone()))?;
        bundle.push(id.clone(), v.to_payload()).map_err(DetectorError::from)?;
    }
    Ok(bundle)
}

/// Runs the tail of `plan` on exactly the tensors in `bundle`.
pub fn run_tail(
    det: &Detector,
    plan: &SplitPlan,
    bundle: TensorBundle,
) -> Result<(Detections, StepTimings), RuntimeError> {
    let want: BTreeSet<&str> = plan.transfer_set.iter().map(String::as_str).collect();
    let got: BTreeSet<&str> = bundle.ids().collect();
    if want != got {
        return Err(RuntimeError::Bundle(format!("expected {want:?}, got {got:?}")));
    }
    let mut store = TensorStore::new();
    for (id, payload) in bundle.into_entries() {
        let kind = tensor_kind(&id).ok_or_else(|| RuntimeError::Bundle(format!("unknown tensor {id:?}")))?;
        store.insert(id, TensorValue::from_payload(kind, payload)?);
    }
    let mut timings = StepTimings::default();
    det.run_steps(&plan.tail()?, &mut store, &mut timings)?;
    match store.remove(DETECTIONS) {
        Some(TensorValue::Detections(d)) => Ok((d, timings)),
        _ => Err(DetectorError::MissingTensor(DETECTIONS.into()).into()),
    }
}

/// The whole pipeline on the device; transfer fields are zero and edge time
/// equals inference time.
pub fn run_monolithic(det: &Detector, cloud: &PointCloud) -> Result<(Detections, TimingReport), RuntimeError> {
    let start = Instant::now();
    let (d, _) = det.run_pipeline(cloud)?;
    let total = timing::ms(start.elapsed());
    let report = TimingReport {
        head_compute_ms: total,
        total_inference_ms: total,
        edge_execution_ms: total,
        split_label: "monolithic".into(),
        scene_id: cloud.scene_id.clone(),
        ..Default::default()
    };
    Ok((d, report))
}
