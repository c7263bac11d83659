//! Replays published reference measurements through the reduction and timing
//! arithmetic used by the reports.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::runtime::TimingReport;
use crate::splitter::{report_reductions, LinkModel, Profile, StepCost};

/// Reference measurements (milliseconds and megabytes, averaged per scene).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub monolithic_ms: f64,
    /// after_vfe, after_conv1, after_conv2
    pub inference_ms: [f64; 3],
    pub edge_ms: [f64; 3],
    pub head_ms: [f64; 3],
    pub transfer_ms: [f64; 3],
    pub input_mb: f64,
    pub transfer_mb: [f64; 3],
    /// Stated reductions: inference after_vfe, after_conv1; edge after_vfe, after_conv1.
    pub inference_reduction_pct: [f64; 2],
    pub edge_reduction_pct: [f64; 2],
}

pub const REFERENCE: Reference = Reference {
    monolithic_ms: 322.0,
    inference_ms: [93.9, 138.0, 426.0],
    edge_ms: [33.6, 98.2, 353.0],
    head_ms: [14.4, 21.2, 40.0],
    transfer_ms: [19.2, 77.0, 313.0],
    input_mb: 1.84,
    transfer_mb: [1.18, 7.23, 29.0],
    inference_reduction_pct: [70.8, 57.1],
    edge_reduction_pct: [90.0, 69.5],
};

const SPLITS: [&str; 3] = ["after_vfe", "after_conv1", "after_conv2"];
const REDUCTION_TOL: f64 = 0.5;
const RESIDUAL_TOL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayCheck {
    pub name: String,
    pub expected: f64,
    pub computed: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ReplayCheck {
    fn new(name: impl Into<String>, expected: f64, computed: f64, tolerance: f64) -> Self {
        let pass = (expected - computed).abs() <= tolerance + 1e-9;
        Self { name: name.into(), expected, computed, tolerance, pass }
    }
}

impl fmt::Display for ReplayCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: expected {} computed {} (tol {})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.expected,
            self.computed,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub checks: Vec<ReplayCheck>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&ReplayCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn to_json(&self) -> Result<String, super::BenchError> {
        serde_json::to_string_pretty(self).map_err(|e| super::BenchError::Report(e.to_string()))
    }
}

impl fmt::Display for ReplayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        write!(f, "{}/{} checks passed", self.checks.len() - self.failures().len(), self.checks.len())
    }
}

/// Runs every check; the report lists each one with its verdict.
pub fn cli_replay_paper() -> ReplayReport {
    let r = REFERENCE;
    let mut checks = Vec::new();
    let reduction = |v: f64| report_reductions(r.monolithic_ms, v).expect("positive baseline");

    for i in 0..2 {
        checks.push(ReplayCheck::new(
            format!("inference reduction {}", SPLITS[i]),
            r.inference_reduction_pct[i],
            reduction(r.inference_ms[i]),
            REDUCTION_TOL,
        ));
    }
    for i in 0..2 {
        checks.push(ReplayCheck::new(
            format!("edge time reduction {}", SPLITS[i]),
            r.edge_reduction_pct[i],
            reduction(r.edge_ms[i]),
            REDUCTION_TOL,
        ));
    }
    for i in 0..3 {
        let t = TimingReport {
            head_compute_ms: r.head_ms[i],
            transfer_ms: r.transfer_ms[i],
            edge_execution_ms: r.head_ms[i] + r.transfer_ms[i],
            total_inference_ms: r.inference_ms[i],
            split_label: SPLITS[i].into(),
            ..Default::default()
        };
        checks.push(ReplayCheck::new(
            format!("edge = head + transfer {}", SPLITS[i]),
            r.edge_ms[i],
            t.edge_execution_ms,
            RESIDUAL_TOL,
        ));
        checks.push(ReplayCheck::new(
            format!("timing invariants {}", SPLITS[i]),
            0.0,
            if t.check(RESIDUAL_TOL).is_ok() { 0.0 } else { 1.0 },
            0.0,
        ));
    }
    let best = r.inference_ms.iter().copied().fold(r.monolithic_ms, f64::min);
    checks.push(ReplayCheck::new("minimum inference time", r.inference_ms[0], best, 0.0));
    let sizes = [r.transfer_mb[0], r.input_mb, r.transfer_mb[1], r.transfer_mb[2]];
    checks.push(ReplayCheck::new(
        "size order after_vfe < input < after_conv1 < after_conv2",
        1.0,
        if sizes.windows(2).all(|w| w[0] < w[1]) { 1.0 } else { 0.0 },
        0.0,
    ));
    ReplayReport { checks }
}

/// Link fitted through the (size, transfer time) pairs of the first two splits.
pub fn reference_link() -> LinkModel {
    let r = REFERENCE;
    let bytes = r.transfer_mb.map(|mb| mb * 1e6);
    let ms_per_byte = (r.transfer_ms[1] - r.transfer_ms[0]) / (bytes[1] - bytes[0]);
    let latency = r.transfer_ms[0] - bytes[0] * ms_per_byte;
    LinkModel::new(1e3 / ms_per_byte, latency).expect("positive fit")
}

/// A four-step profile (vfe, conv1, conv2, rest) built from the reference
/// measurements, with the fitted link. Device times come from the head
/// decompositions; server times are chosen so the model reproduces the
/// after_vfe and after_conv1 totals. The raw-input split is not a candidate
/// because no inference time was measured for it.
pub fn reference_profile() -> (Profile, LinkModel) {
    let r = REFERENCE;
    let link = reference_link();
    let ret = link.transfer_ms(crate::splitter::RESULT_RETURN_BYTES);
    let tail_after_vfe = r.inference_ms[0] - r.edge_ms[0] - ret;
    let tail_after_conv1 = r.inference_ms[1] - r.edge_ms[1] - ret;
    let server_conv2 = 5.0;
    let step = |id: &str, d: f64, s: f64| StepCost { step: id.into(), device_ms: Some(d), server_ms: Some(s) };
    let steps = vec![
        step("vfe", r.head_ms[0], 0.0),
        step("conv1", r.head_ms[1] - r.head_ms[0], tail_after_vfe - tail_after_conv1),
        step("conv2", r.head_ms[2] - r.head_ms[1], server_conv2),
        step("rest", r.monolithic_ms - r.head_ms[2], tail_after_conv1 - server_conv2),
    ];
    let payloads: BTreeMap<String, u64> =
        SPLITS.iter().zip(r.transfer_mb).map(|(s, mb)| (s.to_string(), (mb * 1e6).round() as u64)).collect();
    (Profile { steps, payloads }, link)
}
