use serde::{Deserialize, Serialize};

/// Per-inference measurements, all in milliseconds from a monotonic clock.
///
/// `edge_execution_ms` runs from inference start to the end of the uplink
/// transfer; serialization of the bundle is counted in `head_compute_ms`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub head_compute_ms: f64,
    pub transfer_ms: f64,
    pub tail_compute_ms: f64,
    pub result_return_ms: f64,
    pub total_inference_ms: f64,
    pub edge_execution_ms: f64,
    pub payload_bytes: u64,
    pub split_label: String,
    pub scene_id: String,
}

impl TimingReport {
    /// Arithmetic invariants, with `tol` ms of slack for float rounding.
    pub fn check(&self, tol: f64) -> Result<(), String> {
        let fields = [
            ("head_compute_ms", self.head_compute_ms),
            ("transfer_ms", self.transfer_ms),
            ("tail_compute_ms", self.tail_compute_ms),
            ("result_return_ms", self.result_return_ms),
            ("total_inference_ms", self.total_inference_ms),
            ("edge_execution_ms", self.edge_execution_ms),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} = {v}"));
            }
        }
        let residual = self.edge_execution_ms - (self.head_compute_ms + self.transfer_ms);
        if residual.abs() > tol {
            return Err(format!("edge != head + transfer (residual {residual} ms)"));
        }
        if self.total_inference_ms + tol < self.edge_execution_ms {
            return Err(format!("total {} < edge {}", self.total_inference_ms, self.edge_execution_ms));
        }
        Ok(())
    }
}

pub(crate) fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}
