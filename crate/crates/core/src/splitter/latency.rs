//! Latency model over a measured profile, and the split planner.
//!
//! For split `k` over `n` steps:
//!
//! ```text
//! head     = sum of device_ms over steps[..k]
//! transfer = payload(k) / bandwidth + base_latency      (0 when k = n)
//! tail     = sum of server_ms over steps[k..]
//! return   = RESULT_RETURN_BYTES / bandwidth + base_latency (0 when k = n)
//! total    = head + transfer + tail + return
//! edge     = head + transfer
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{split_label, SplitError, SplitPoint};

/// Modeled size of the detections sent back to the device.
pub const RESULT_RETURN_BYTES: u64 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCost {
    pub step: String,
    pub device_ms: Option<f64>,
    pub server_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PayloadRow {
    split: String,
    payload_bytes: u64,
}

/// Per-step mean durations on both sides, plus the measured payload of each
/// split. Splits without a payload entry are not planning candidates (except
/// the monolithic split, which sends nothing).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Profile {
    pub steps: Vec<StepCost>,
    pub payloads: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub bandwidth_bytes_per_s: f64,
    pub base_latency_ms: f64,
}

impl LinkModel {
    pub fn new(bandwidth_bytes_per_s: f64, base_latency_ms: f64) -> Result<Self, SplitError> {
        if !(bandwidth_bytes_per_s > 0.0) || !(base_latency_ms >= 0.0) || !base_latency_ms.is_finite() {
            return Err(SplitError::Link(format!(
                "bandwidth {bandwidth_bytes_per_s} must be > 0 and latency {base_latency_ms} >= 0"
            )));
        }
        Ok(Self { bandwidth_bytes_per_s, base_latency_ms })
    }

    /// Bandwidth may be infinite: transfers then cost only the base latency.
    pub fn transfer_ms(&self, bytes: u64) -> f64 {
        bytes as f64 / self.bandwidth_bytes_per_s * 1e3 + self.base_latency_ms
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SplitError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.serialize(self)?;
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, SplitError> {
        let mut rd = csv::Reader::from_reader(r);
        let row: LinkModel = rd
            .deserialize()
            .next()
            .ok_or_else(|| SplitError::Link("empty link csv".into()))??;
        Self::new(row.bandwidth_bytes_per_s, row.base_latency_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyEstimate {
    pub head_ms: f64,
    pub transfer_ms: f64,
    pub tail_ms: f64,
    pub result_return_ms: f64,
    pub total_ms: f64,
    pub edge_execution_ms: f64,
}

impl Profile {
    pub fn step_ids(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.step.as_str()).collect()
    }

    pub fn split_label(&self, k: usize) -> String {
        split_label(&self.step_ids(), k)
    }

    pub fn payload(&self, k: usize) -> Option<u64> {
        self.payloads.get(&self.split_label(k)).copied()
    }

    /// Monolithic device time: every step on the device.
    pub fn device_total_ms(&self) -> Result<f64, SplitError> {
        self.steps
            .iter()
            .map(|s| s.device_ms.ok_or_else(|| SplitError::MissingProfile(format!("device time of {}", s.step))))
            .sum()
    }

    pub fn write_steps_csv<W: Write>(&self, w: W) -> Result<(), SplitError> {
        let mut wr = csv::Writer::from_writer(w);
        for s in &self.steps {
            wr.serialize(s)?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_payloads_csv<W: Write>(&self, w: W) -> Result<(), SplitError> {
        let mut wr = csv::Writer::from_writer(w);
        // Emit in split order rather than label order.
        for k in 0..=self.steps.len() {
            let label = self.split_label(k);
            if let Some(&payload_bytes) = self.payloads.get(&label) {
                wr.serialize(PayloadRow { split: label, payload_bytes })?;
            }
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R1: Read, R2: Read>(steps: R1, payloads: R2) -> Result<Self, SplitError> {
        let steps = csv::Reader::from_reader(steps).deserialize().collect::<Result<Vec<StepCost>, _>>()?;
        let payloads = csv::Reader::from_reader(payloads)
            .deserialize()
            .map(|r| r.map(|p: PayloadRow| (p.split, p.payload_bytes)))
            .collect::<Result<BTreeMap<_, _>, _>>()?;
        Ok(Self { steps, payloads })
    }
}

pub fn estimate_latency(p: &Profile, s: &SplitPoint, link: &LinkModel) -> Result<LatencyEstimate, SplitError> {
    let n = p.steps.len();
    let k = s.index;
    if k > n {
        return Err(SplitError::Index { index: k, max: n });
    }
    let sum = |range: &[StepCost], server: bool| -> Result<f64, SplitError> {
        range
            .iter()
            .map(|c| {
                let (v, side) = if server { (c.server_ms, "server") } else { (c.device_ms, "device") };
                v.ok_or_else(|| SplitError::MissingProfile(format!("{side} time of {}", c.step)))
            })
            .sum()
    };
    let head_ms = sum(&p.steps[..k], false)?;
    let (transfer_ms, tail_ms, result_return_ms) = if k == n {
        (0.0, 0.0, 0.0)
    } else {
        let payload = p
            .payload(k)
            .ok_or_else(|| SplitError::MissingProfile(format!("payload of {}", p.split_label(k))))?;
        (
            link.transfer_ms(payload),
            sum(&p.steps[k..], true)?,
            link.transfer_ms(RESULT_RETURN_BYTES),
        )
    };
    let edge_execution_ms = head_ms + transfer_ms;
    Ok(LatencyEstimate {
        head_ms,
        transfer_ms,
        tail_ms,
        result_return_ms,
        total_ms: edge_execution_ms + tail_ms + result_return_ms,
        edge_execution_ms,
    })
}

/// Split with the lowest estimated total; ties go to the earliest split.
pub fn plan_best_split(p: &Profile, link: &LinkModel) -> Result<SplitPoint, SplitError> {
    let n = p.steps.len();
    let mut best: Option<(usize, f64)> = None;
    for k in (0..=n).filter(|&k| k == n || p.payload(k).is_some()) {
        let s = SplitPoint { index: k, label: p.split_label(k) };
        let total = estimate_latency(p, &s, link)?.total_ms;
        if best.is_none_or(|(_, b)| total < b) {
            best = Some((k, total));
        }
    }
    let (k, _) = best.expect("the monolithic split is always a candidate");
    Ok(SplitPoint { index: k, label: p.split_label(k) })
}

/// Percentage reduction of `split_ms` relative to `baseline_ms`, to one decimal.
pub fn report_reductions(baseline_ms: f64, split_ms: f64) -> Result<f64, SplitError> {
    if !(baseline_ms > 0.0) {
        return Err(SplitError::Domain(baseline_ms));
    }
    Ok((1000.0 * (baseline_ms - split_ms) / baseline_ms).round() / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn cost(step: &str, d: f64, s: f64) -> StepCost {
        StepCost { step: step.into(), device_ms: Some(d), server_ms: Some(s) }
    }

    fn three_step() -> Profile {
        let mut p = Profile {
            steps: vec![cost("a", 10.0, 2.0), cost("b", 20.0, 4.0), cost("c", 30.0, 6.0)],
            payloads: BTreeMap::new(),
        };
        for (label, bytes) in [("raw_points", 4000), ("after_a", 1000), ("after_b", 8000)] {
            p.payloads.insert(label.into(), bytes);
        }
        p
    }

    fn sp(p: &Profile, k: usize) -> SplitPoint {
        SplitPoint { index: k, label: p.split_label(k) }
    }

    #[test]
    fn zero_cost_link_monolithic_equals_device_time() {
        let p = three_step();
        let link = LinkModel::new(f64::INFINITY, 0.0).unwrap();
        let e = estimate_latency(&p, &sp(&p, 3), &link).unwrap();
        assert_eq!(e.total_ms, 60.0);
        assert_eq!(e.edge_execution_ms, 60.0);
        let slow = LinkModel::new(1.0, 1e6).unwrap();
        assert_eq!(estimate_latency(&p, &sp(&p, 3), &slow).unwrap().total_ms, p.device_total_ms().unwrap());
    }

    #[test]
    fn edge_time_is_head_plus_transfer() {
        let p = Profile {
            steps: vec![cost("vfe", 14.4, 0.0), cost("rest", 100.0, 40.0)],
            payloads: BTreeMap::from([("after_vfe".to_owned(), 0)]),
        };
        let link = LinkModel::new(1e6, 19.2).unwrap();
        let e = estimate_latency(&p, &sp(&p, 1), &link).unwrap();
        assert!((e.edge_execution_ms - 33.6).abs() < 1e-9);
    }

    #[test]
    fn three_step_matches_hand_sums() {
        let mut p = three_step();
        let link = LinkModel::new(1e6, 5.0).unwrap(); // 1 ms per 1000 bytes
        let ret = 1.024 + 5.0;
        // (head, transfer, tail)
        let expected = [(0.0, 4.0 + 5.0, 12.0), (10.0, 1.0 + 5.0, 10.0), (30.0, 8.0 + 5.0, 6.0)];
        for (k, (h, t, tail)) in expected.iter().enumerate() {
            let e = estimate_latency(&p, &sp(&p, k), &link).unwrap();
            assert!((e.head_ms - h).abs() < 1e-9);
            assert!((e.transfer_ms - t).abs() < 1e-9);
            assert!((e.tail_ms - tail).abs() < 1e-9);
            assert!((e.total_ms - (h + t + tail + ret)).abs() < 1e-9);
        }
        let e = estimate_latency(&p, &sp(&p, 3), &link).unwrap();
        assert_eq!(e.total_ms, 60.0);
        // raw_points: 0 + 9 + 12 + 6.024 = 27.024 is the minimum
        assert_eq!(plan_best_split(&p, &link).unwrap().label, "raw_points");
        p.payloads.insert("raw_points".into(), 20_000);
        // now after_a: 10 + 6 + 10 + 6.024 = 32.024
        assert_eq!(plan_best_split(&p, &link).unwrap().label, "after_a");
    }

    #[test]
    fn missing_entries_reported() {
        let mut p = three_step();
        p.steps[1].server_ms = None;
        let link = LinkModel::new(1e6, 0.0).unwrap();
        assert!(matches!(estimate_latency(&p, &sp(&p, 0), &link), Err(SplitError::MissingProfile(_))));
        assert!(estimate_latency(&p, &sp(&p, 2), &link).is_ok());
        assert!(matches!(plan_best_split(&p, &link), Err(SplitError::MissingProfile(_))));
        let mut p = three_step();
        p.payloads.clear();
        assert!(matches!(estimate_latency(&p, &sp(&p, 1), &link), Err(SplitError::MissingProfile(_))));
        assert_eq!(plan_best_split(&p, &link).unwrap().index, 3);
        assert!(matches!(estimate_latency(&p, &SplitPoint { index: 4, label: "x".into() }, &link), Err(SplitError::Index { .. })));
    }

    #[test]
    fn equal_estimates_pick_first_split() {
        let p = Profile {
            steps: vec![cost("a", 0.0, 0.0), cost("b", 0.0, 0.0)],
            payloads: BTreeMap::from([("raw_points".into(), 0), ("after_a".into(), 0), ("after_b".into(), 0)]),
        };
        let link = LinkModel::new(f64::INFINITY, 0.0).unwrap();
        assert_eq!(plan_best_split(&p, &link).unwrap().index, 0);
    }

    #[test]
    fn planner_matches_enumeration_on_random_profiles() {
        let mut g = SplitMix64::new(99);
        for _ in 0..200 {
            let n = 6;
            let steps: Vec<StepCost> = (0..n)
                .map(|i| cost(&format!("s{i}"), g.uniform(0.0, 50.0) as f64, g.uniform(0.0, 10.0) as f64))
                .collect();
            let mut p = Profile { steps, payloads: BTreeMap::new() };
            for k in 0..n {
                p.payloads.insert(p.split_label(k), g.below(5_000_000));
            }
            let link = LinkModel::new(g.uniform(1e5, 1e8) as f64, g.uniform(0.0, 20.0) as f64).unwrap();
            let totals: Vec<f64> = (0..=n)
                .map(|k| {
                    let head: f64 = p.steps[..k].iter().map(|s| s.device_ms.unwrap()).sum();
                    if k == n {
                        return head;
                    }
                    let tail: f64 = p.steps[k..].iter().map(|s| s.server_ms.unwrap()).sum();
                    let bytes = p.payload(k).unwrap() as f64;
                    head + bytes / link.bandwidth_bytes_per_s * 1e3
                        + 2.0 * link.base_latency_ms
                        + tail
                        + 1024.0 / link.bandwidth_bytes_per_s * 1e3
                })
                .collect();
            let min = totals.iter().cloned().fold(f64::INFINITY, f64::min);
            let expected = totals.iter().position(|&t| t <= min + 1e-9).unwrap();
            assert_eq!(plan_best_split(&p, &link).unwrap().index, expected);
        }
    }

    #[test]
    fn reductions() {
        assert_eq!(report_reductions(322.0, 93.9).unwrap(), 70.8);
        assert_eq!(report_reductions(322.0, 33.6).unwrap(), 89.6);
        assert_eq!(report_reductions(100.0, 100.0).unwrap(), 0.0);
        assert!(matches!(report_reductions(0.0, 1.0), Err(SplitError::Domain(_))));
    }

    #[test]
    fn csv_round_trip() {
        let mut p = three_step();
        p.steps[2].server_ms = None;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        p.write_steps_csv(&mut a).unwrap();
        p.write_payloads_csv(&mut b).unwrap();
        let text = String::from_utf8(a.clone()).unwrap();
        assert!(text.starts_with("step,device_ms,server_ms\n"));
        assert!(String::from_utf8(b.clone()).unwrap().starts_with("split,payload_bytes\nraw_points,4000\n"));
        assert_eq!(Profile::read_csv(a.as_slice(), b.as_slice()).unwrap(), p);

        let link = LinkModel::new(1e6, 10.0).unwrap();
        let mut l = Vec::new();
        link.write_csv(&mut l).unwrap();
        assert_eq!(LinkModel::read_csv(l.as_slice()).unwrap(), link);
        assert!(LinkModel::new(0.0, 1.0).is_err());
        assert!(LinkModel::new(1.0, -1.0).is_err());
    }
}
