use std::fmt::Write as _;
use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::detector::{ArchConfig, Detector};
use crate::ingest::PointCloud;
use crate::runtime::{run_monolithic, EdgeClient, LinkEmulation, RuntimeError, Server, TimingReport};
use crate::splitter::{build_module_graph, report_reductions};
use crate::tensor::Detections;

use super::{mean, median, BenchError, RunOptions};

pub const STATUS_OK: &str = "ok";
pub const BASELINE: &str = "monolithic";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SweepTarget {
    /// Spawn a loopback server in-process.
    Local,
    Remote(String),
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub arch: ArchConfig,
    pub seed: u64,
    pub splits: Vec<String>,
    pub link: LinkEmulation,
    pub runs: RunOptions,
    pub target: SweepTarget,
}

/// Aggregates for one split pattern over every measured run of every scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub split: String,
    pub samples: usize,
    pub mean_total_ms: f64,
    pub median_total_ms: f64,
    pub mean_edge_ms: f64,
    pub median_edge_ms: f64,
    pub mean_transfer_ms: f64,
    pub median_transfer_ms: f64,
    pub mean_payload_bytes: f64,
    pub median_payload_bytes: f64,
    pub inference_reduction_pct: f64,
    pub edge_reduction_pct: f64,
}

/// Baseline row first, then each requested split. `status` is [`STATUS_OK`]
/// or a failure description; a failed sweep keeps the rows completed so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub status: String,
    pub scene_count: usize,
    pub warmup: usize,
    pub runs_per_scene: usize,
    pub seed: u64,
    pub config_hash: String,
    pub bandwidth_bytes_per_s: f64,
    pub added_latency_ms: f64,
    pub rows: Vec<SweepRow>,
}

/// One CSV line: report metadata repeated on every row.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRecord {
    status: String,
    scene_count: usize,
    warmup: usize,
    runs_per_scene: usize,
    seed: u64,
    config_hash: String,
    bandwidth_bytes_per_s: f64,
    added_latency_ms: f64,
    split: String,
    samples: usize,
    mean_total_ms: f64,
    median_total_ms: f64,
    mean_edge_ms: f64,
    median_edge_ms: f64,
    mean_transfer_ms: f64,
    median_transfer_ms: f64,
    mean_payload_bytes: f64,
    median_payload_bytes: f64,
    inference_reduction_pct: f64,
    edge_reduction_pct: f64,
}

fn report_err(e: impl std::fmt::Display) -> BenchError {
    BenchError::Report(e.to_string())
}

impl SweepReport {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    pub fn row(&self, split: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.split == split)
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        serde_json::to_string_pretty(self).map_err(report_err)
    }

    pub fn from_json(s: &str) -> Result<Self, BenchError> {
        serde_json::from_str(s).map_err(report_err)
    }

    pub fn to_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRecord {
                status: self.status.clone(),
                scene_count: self.scene_count,
                warmup: self.warmup,
                runs_per_scene: self.runs_per_scene,
                seed: self.seed,
                config_hash: self.config_hash.clone(),
                bandwidth_bytes_per_s: self.bandwidth_bytes_per_s,
                added_latency_ms: self.added_latency_ms,
                split: r.split.clone(),
                samples: r.samples,
                mean_total_ms: r.mean_total_ms,
                median_total_ms: r.median_total_ms,
                mean_edge_ms: r.mean_edge_ms,
                median_edge_ms: r.median_edge_ms,
                mean_transfer_ms: r.mean_transfer_ms,
                median_transfer_ms: r.median_transfer_ms,
                mean_payload_bytes: r.mean_payload_bytes,
                median_payload_bytes: r.median_payload_bytes,
                inference_reduction_pct: r.inference_reduction_pct,
                edge_reduction_pct: r.edge_reduction_pct,
            })
            .map_err(report_err)?;
        }
        String::from_utf8(w.into_inner().map_err(report_err)?).map_err(report_err)
    }

    pub fn from_csv(s: &str) -> Result<Self, BenchError> {
        let records: Vec<CsvRecord> =
            csv::Reader::from_reader(s.as_bytes()).deserialize().collect::<Result<_, _>>().map_err(report_err)?;
        let first = records.first().ok_or_else(|| report_err("empty sweep csv"))?;
        let mut report = SweepReport {
            status: first.status.clone(),
            scene_count: first.scene_count,
            warmup: first.warmup,
            runs_per_scene: first.runs_per_scene,
            seed: first.seed,
            config_hash: first.config_hash.clone(),
            bandwidth_bytes_per_s: first.bandwidth_bytes_per_s,
            added_latency_ms: first.added_latency_ms,
            rows: Vec::new(),
        };
        for r in records {
            report.rows.push(SweepRow {
                split: r.split,
                samples: r.samples,
                mean_total_ms: r.mean_total_ms,
                median_total_ms: r.median_total_ms,
                mean_edge_ms: r.mean_edge_ms,
                median_edge_ms: r.median_edge_ms,
                mean_transfer_ms: r.mean_transfer_ms,
                median_transfer_ms: r.median_transfer_ms,
                mean_payload_bytes: r.mean_payload_bytes,
                median_payload_bytes: r.median_payload_bytes,
                inference_reduction_pct: r.inference_reduction_pct,
                edge_reduction_pct: r.edge_reduction_pct,
            });
        }
        Ok(report)
    }

    /// Four tables: inference time, edge execution time, transfer size,
    /// transfer time.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let marker = if self.is_ok() { "OK".to_owned() } else { format!("FAILED: {}", self.status) };
        let _ = writeln!(out, "# Split sweep\n");
        let _ = writeln!(out, "- status: {marker}");
        let _ = writeln!(
            out,
            "- scenes: {}, warm-up runs: {}, measured runs per scene: {}",
            self.scene_count, self.warmup, self.runs_per_scene
        );
        let _ = writeln!(out, "- seed: {}, config hash: {}", self.seed, self.config_hash);
        let _ = writeln!(
            out,
            "- link: {} B/s (0 = unlimited), +{} ms",
            self.bandwidth_bytes_per_s, self.added_latency_ms
        );

        type Col = fn(&SweepRow) -> (f64, f64);
        let panels: [(&str, &str, Col, Option<fn(&SweepRow) -> f64>); 4] = [
            ("Inference time", "ms", |r| (r.mean_total_ms, r.median_total_ms), Some(|r| r.inference_reduction_pct)),
            ("Edge execution time", "ms", |r| (r.mean_edge_ms, r.median_edge_ms), Some(|r| r.edge_reduction_pct)),
            ("Transfer data size", "MB", |r| (r.mean_payload_bytes / 1e6, r.median_payload_bytes / 1e6), None),
            ("Transfer time", "ms", |r| (r.mean_transfer_ms, r.median_transfer_ms), None),
        ];
        for (title, unit, col, red) in panels {
            let _ = writeln!(out, "\n## {title}\n");
            if red.is_some() {
                let _ = writeln!(out, "| split | mean ({unit}) | median ({unit}) | reduction |");
                let _ = writeln!(out, "|---|---:|---:|---:|");
            } else {
                let _ = writeln!(out, "| split | mean ({unit}) | median ({unit}) |");
                let _ = writeln!(out, "|---|---:|---:|");
            }
            for r in &self.rows {
                let (m, md) = col(r);
                match red {
                    Some(f) => {
                        let _ = writeln!(out, "| {} | {m:.3} | {md:.3} | {:.1}% |", r.split, f(r));
                    }
                    None => {
                        let _ = writeln!(out, "| {} | {m:.3} | {md:.3} |", r.split);
                    }
                }
            }
        }
        out
    }
}

fn row_from(split: &str, reports: &[TimingReport], baseline: Option<&SweepRow>) -> Result<SweepRow, BenchError> {
    let col = |f: fn(&TimingReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    let total = col(|t| t.total_inference_ms);
    let edge = col(|t| t.edge_execution_ms);
    let transfer = col(|t| t.transfer_ms);
    let payload = col(|t| t.payload_bytes as f64);
    let mut row = SweepRow {
        split: split.to_owned(),
        samples: reports.len(),
        mean_total_ms: mean(&total),
        median_total_ms: median(&total),
        mean_edge_ms: mean(&edge),
        median_edge_ms: median(&edge),
        mean_transfer_ms: mean(&transfer),
        median_transfer_ms: median(&transfer),
        mean_payload_bytes: mean(&payload),
        median_payload_bytes: median(&payload),
        inference_reduction_pct: 0.0,
        edge_reduction_pct: 0.0,
    };
    let (base_total, base_edge) = baseline.map_or((row.mean_total_ms, row.mean_edge_ms), |b| (b.mean_total_ms, b.mean_edge_ms));
    row.inference_reduction_pct = report_reductions(base_total, row.mean_total_ms)?;
    row.edge_reduction_pct = report_reductions(base_edge, row.mean_edge_ms)?;
    Ok(row)
}

fn measure<F>(scenes: &[PointCloud], runs: RunOptions, mut f: F) -> Result<Vec<(Detections, TimingReport)>, BenchError>
where
    F: FnMut(&PointCloud) -> Result<(Detections, TimingReport), RuntimeError>,
{
    let mut out = Vec::new();
    for cloud in scenes {
        for _ in 0..runs.warmup {
            f(cloud)?;
        }
        for _ in 0..runs.runs.max(1) {
            out.push(f(cloud)?);
        }
    }
    Ok(out)
}

/// Runs the monolithic baseline and then every split in `cfg.splits`,
/// checking each split's detections against the baseline bit for bit.
/// Runtime failures end the sweep early with a failure status.
pub fn cli_sweep(scenes: &[PointCloud], cfg: &SweepConfig) -> Result<SweepReport, BenchError> {
    let detector = Arc::new(Detector::new(cfg.arch.clone(), cfg.seed)?);
    let graph = build_module_graph(detector.arch())?;
    let splits = cfg.splits.iter().map(|s| graph.split_by_label(s)).collect::<Result<Vec<_>, _>>()?;
    let runs_per_scene = cfg.runs.runs.max(1);
    let mut report = SweepReport {
        status: STATUS_OK.into(),
        scene_count: scenes.len(),
        warmup: cfg.runs.warmup,
        runs_per_scene,
        seed: cfg.seed,
        config_hash: format!("{:016x}", detector.arch_hash()),
        bandwidth_bytes_per_s: cfg.link.bandwidth_bytes_per_s,
        added_latency_ms: cfg.link.added_latency_ms,
        rows: Vec::new(),
    };
    if scenes.is_empty() {
        return Err(crate::ingest::IngestError::EmptyDataset("<sweep>".into()).into());
    }

    let baseline_runs = match measure(scenes, cfg.runs, |c| run_monolithic(&detector, c)) {
        Ok(r) => r,
        Err(e) => {
            report.status = format!("baseline failed: {e}");
            return Ok(report);
        }
    };
    let timings: Vec<TimingReport> = baseline_runs.iter().map(|(_, t)| t.clone()).collect();
    let baseline = row_from(BASELINE, &timings, None)?;
    report.rows.push(baseline.clone());
    let expected: Vec<&Detections> = baseline_runs.iter().step_by(runs_per_scene).map(|(d, _)| d).collect();

    let _server = match &cfg.target {
        SweepTarget::Local => Some(Server::new((*detector).clone()).map_err(BenchError::from)?.spawn("127.0.0.1:0")?),
        SweepTarget::Remote(_) => None,
    };
    let addr = match (&cfg.target, &_server) {
        (SweepTarget::Remote(a), _) => a.clone(),
        (SweepTarget::Local, Some(h)) => h.addr().to_string(),
        _ => unreachable!(),
    };

    for split in splits {
        let result = EdgeClient::connect(&addr, detector.clone(), cfg.link)
            .map_err(BenchError::from)
            .and_then(|mut client| measure(scenes, cfg.runs, |c| client.infer(&split, c)));
        let runs = match result {
            Ok(r) => r,
            Err(e) => {
                warn!("split {} failed: {e}", split.label);
                report.status = format!("{} failed: {e}", split.label);
                return Ok(report);
            }
        };
        for (i, (d, t)) in runs.iter().enumerate() {
            let scene = i / runs_per_scene;
            if !d.bit_eq(expected[scene]) {
                report.status = format!("{} diverged from the baseline on {}", split.label, scenes[scene].scene_id);
                return Ok(report);
            }
            if let Err(e) = t.check(1e-6) {
                report.status = format!("{} produced an inconsistent timing report: {e}", split.label);
                return Ok(report);
            }
        }
        let timings: Vec<TimingReport> = runs.into_iter().map(|(_, t)| t).collect();
        let row = row_from(&split.label, &timings, Some(&baseline))?;
        info!(
            "split={} mean_total_ms={:.3} mean_edge_ms={:.3} mean_payload_bytes={:.0}",
            row.split, row.mean_total_ms, row.mean_edge_ms, row.mean_payload_bytes
        );
        report.rows.push(row);
    }
    Ok(report)
}
