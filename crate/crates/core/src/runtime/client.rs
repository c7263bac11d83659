use std::io::BufReader;
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Instant;

use crate::detector::pipeline::DETECTIONS;
use crate::detector::{ArchConfig, Detector, DetectorError, TensorValue};
use crate::ingest::PointCloud;
use crate::splitter::{build_module_graph, ModuleGraph, SplitPoint};
use crate::tensor::{Detections, TensorBundle};
use crate::wire::{bundle_encoded_len, encode_frame, read_message, write_message, Message};

use super::link::{emulate_link, LinkEmulation, ShapedChannel};
use super::timing::ms;
use super::{bundle_transfer_set, run_head, RuntimeError, TimingReport};

/// Device side of one connection: runs heads locally and tails remotely.
#[derive(Debug)]
pub struct EdgeClient {
    detector: Arc<Detector>,
    graph: ModuleGraph,
    reader: BufReader<TcpStream>,
    uplink: ShapedChannel<TcpStream>,
}

impl EdgeClient {
    /// Connects and performs the HELLO exchange.
    pub fn connect(addr: &str, detector: Arc<Detector>, link: LinkEmulation) -> Result<Self, RuntimeError> {
        let stream =
            TcpStream::connect(addr).map_err(|source| RuntimeError::Connect { addr: addr.to_owned(), source })?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = stream;
        let hello = Message::Hello { seed: detector.seed(), arch_hash: detector.arch_hash() };
        write_message(&mut writer, &hello)?;
        match read_message(&mut reader)?.0 {
            m if m == hello => {}
            Message::Error { code, text } => return Err(RuntimeError::Server { code, text }),
            other => return Err(RuntimeError::Protocol(format!("expected HELLO, got {}", other.name()))),
        }
        let graph = build_module_graph(detector.arch())?;
        Ok(Self { detector, graph, reader, uplink: emulate_link(writer, link) })
    }

    pub fn graph(&self) -> &ModuleGraph {
        &self.graph
    }

    fn expect_result(&mut self) -> Result<Detections, RuntimeError> {
        match read_message(&mut self.reader)?.0 {
            Message::Result(d) => Ok(d),
            Message::Error { code, text } => Err(RuntimeError::Server { code, text }),
            other => Err(RuntimeError::Protocol(format!("expected RESULT, got {}", other.name()))),
        }
    }

    fn expect_timing(&mut self) -> Result<TimingReport, RuntimeError> {
        match read_message(&mut self.reader)?.0 {
            Message::Timing(t) => Ok(t),
            Message::Error { code, text } => Err(RuntimeError::Server { code, text }),
            other => Err(RuntimeError::Protocol(format!("expected TIMING, got {}", other.name()))),
        }
    }

    /// One split inference. At the last split everything runs locally and
    /// nothing is sent; the reported payload is the empty bundle's 2 bytes.
    pub fn infer(&mut self, split: &SplitPoint, cloud: &PointCloud) -> Result<(Detections, TimingReport), RuntimeError> {
        let start = Instant::now();
        let plan = self.graph.partition(split)?;
        let (mut store, _) = run_head(&self.detector, &plan, cloud)?;
        let mut report = TimingReport {
            split_label: split.label.clone(),
            scene_id: cloud.scene_id.clone(),
            ..Default::default()
        };

        if plan.is_monolithic() {
            let d = match store.remove(DETECTIONS) {
                Some(TensorValue::Detections(d)) => d,
                _ => return Err(DetectorError::MissingTensor(DETECTIONS.into()).into()),
            };
            let t = ms(start.elapsed());
            report.head_compute_ms = t;
            report.edge_execution_ms = t;
            report.total_inference_ms = t;
            report.payload_bytes = bundle_encoded_len(&TensorBundle::new()) as u64;
            return Ok((d, report));
        }

        let bundle = bundle_transfer_set(&store, &plan)?;
        drop(store);
        report.payload_bytes = bundle_encoded_len(&bundle) as u64;
        let frame = encode_frame(&Message::InferRequest { split_label: split.label.clone(), bundle })?;
        let head_end = Instant::now();
        self.uplink.transmit(&frame)?;
        let sent = Instant::now();
        let detections = self.expect_result()?;
        let arrived = Instant::now();
        let server = self.expect_timing()?;
        if server.split_label != split.label || server.payload_bytes != report.payload_bytes {
            return Err(RuntimeError::Protocol(format!(
                "server timing is for {} ({} bytes)",
                server.split_label, server.payload_bytes
            )));
        }

        report.head_compute_ms = ms(head_end - start);
        report.transfer_ms = ms(sent - head_end);
        report.edge_execution_ms = report.head_compute_ms + report.transfer_ms;
        report.tail_compute_ms = server.tail_compute_ms;
        report.result_return_ms = (ms(arrived - sent) - server.tail_compute_ms).max(0.0);
        report.total_inference_ms = ms(arrived - start).max(report.edge_execution_ms);
        Ok((detections, report))
    }
}

/// Connects, runs a single inference and disconnects.
pub fn client_infer(
    server_addr: &str,
    arch: &ArchConfig,
    seed: u64,
    split: &SplitPoint,
    cloud: &PointCloud,
    link: LinkEmulation,
) -> Result<(Detections, TimingReport), RuntimeError> {
    let detector = Arc::new(Detector::new(arch.clone(), seed)?);
    EdgeClient::connect(server_addr, detector, link)?.infer(split, cloud)
}
