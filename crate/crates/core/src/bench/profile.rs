use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::{Detector, Module, Step, StepTimings, TensorStore};
use crate::ingest::{IngestError, PointCloud};
use crate::runtime::bundle_transfer_set;
use crate::splitter::{build_module_graph, Profile, StepCost};
use crate::wire::bundle_encoded_len;

use super::{mean, BenchError, RunOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleRow {
    pub index: usize,
    pub module: String,
    pub mean_ms: f64,
    pub ratio_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    /// The six network modules in execution order.
    pub modules: Vec<ModuleRow>,
    /// Backbone 3D broken down by stage, as shares of the same total.
    pub backbone_stages: Vec<ModuleRow>,
    /// Per-step means (device and server are the same host here) and the
    /// mean encoded payload of every split.
    pub profile: Profile,
    pub scene_count: usize,
    pub runs_per_scene: usize,
}

/// Profiles every module over `scenes`. Ratios are of the mean times, so a
/// single scene yields exactly that scene's shares.
pub fn cli_profile(scenes: &[PointCloud], det: &Detector, opts: RunOptions) -> Result<ProfileReport, BenchError> {
    if scenes.is_empty() {
        return Err(IngestError::EmptyDataset("<profile>".into()).into());
    }
    let graph = build_module_graph(det.arch())?;
    let mut step_samples: BTreeMap<Step, Vec<f64>> = BTreeMap::new();
    let mut payload_samples: BTreeMap<usize, Vec<f64>> = BTreeMap::new();

    for cloud in scenes {
        for _ in 0..opts.warmup {
            det.run_pipeline(cloud)?;
        }
        for _ in 0..opts.runs.max(1) {
            let (_, t) = det.run_pipeline(cloud)?;
            for (s, d) in t.entries {
                step_samples.entry(s).or_default().push(d.as_secs_f64() * 1e3);
            }
        }
        // Payload of split k is measured from the store after k steps.
        let mut store = TensorStore::with_points(cloud.clone());
        let mut scratch = StepTimings::default();
        for k in 0..Step::ALL.len() {
            let plan = graph.partition(&graph.split_point(k)?)?;
            let bundle = bundle_transfer_set(&store, &plan)?;
            payload_samples.entry(k).or_default().push(bundle_encoded_len(&bundle) as f64);
            det.run_steps(&Step::ALL[k..=k], &mut store, &mut scratch)?;
        }
    }

    let step_mean = |s: Step| step_samples.get(&s).map_or(0.0, |v| mean(v));
    let steps: Vec<StepCost> = Step::ALL
        .iter()
        .map(|&s| StepCost { step: s.id().into(), device_ms: Some(step_mean(s)), server_ms: Some(step_mean(s)) })
        .collect();
    let payloads = payload_samples
        .into_iter()
        .map(|(k, v)| (graph.split_point(k).unwrap().label, mean(&v).round() as u64))
        .collect();

    let module_ms = |m: Module| Step::ALL.iter().filter(|s| s.module() == m).map(|&s| step_mean(s)).sum::<f64>();
    let total: f64 = Module::NETWORK.iter().map(|&m| module_ms(m)).sum();
    let pct = |v: f64| if total > 0.0 { 100.0 * v / total } else { 0.0 };
    let modules = Module::NETWORK
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let ms = module_ms(m);
            ModuleRow { index: i + 1, module: m.name().into(), mean_ms: ms, ratio_pct: pct(ms) }
        })
        .collect();
    let backbone_stages = [Step::Conv1, Step::Conv2, Step::Conv3, Step::Conv4]
        .iter()
        .enumerate()
        .map(|(i, &s)| ModuleRow { index: i + 1, module: s.id().into(), mean_ms: step_mean(s), ratio_pct: pct(step_mean(s)) })
        .collect();

    Ok(ProfileReport {
        modules,
        backbone_stages,
        profile: Profile { steps, payloads },
        scene_count: scenes.len(),
        runs_per_scene: opts.runs.max(1),
    })
}

/// One line per module, `"<index>. <name> <ratio>%"` with five decimals.
/// Stage rows, when given, are indented under Backbone 3D.
pub fn render_ratio_table(modules: &[ModuleRow], stages: Option<&[ModuleRow]>) -> String {
    let mut out = String::new();
    for m in modules {
        let _ = writeln!(out, "{}. {} {:.5}%", m.index, m.module, m.ratio_pct);
        if let (Some(stages), true) = (stages, m.module == Module::Backbone3d.name()) {
            for s in stages {
                let _ = writeln!(out, "   {} {:.5}%", s.module, s.ratio_pct);
            }
        }
    }
    out
}

impl ProfileReport {
    pub fn modules_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for m in self.modules.iter().chain(&self.backbone_stages) {
            w.serialize(m).map_err(|e| BenchError::Report(e.to_string()))?;
        }
        String::from_utf8(w.into_inner().map_err(|e| BenchError::Report(e.to_string()))?)
            .map_err(|e| BenchError::Report(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::generate_scene;
    use crate::detector::ArchConfig;

    #[test]
    fn ratios_normalize_and_payloads_cover_splits() {
        let det = Detector::new(ArchConfig::tiny(), 1).unwrap();
        let scenes = vec![generate_scene(1, 0, 3000), generate_scene(1, 1, 3000)];
        let r = cli_profile(&scenes, &det, RunOptions { warmup: 0, runs: 2 }).unwrap();
        let sum: f64 = r.modules.iter().map(|m| m.ratio_pct).sum();
        assert!((sum - 100.0).abs() < 0.1);
        assert_eq!(r.modules.len(), 6);
        assert_eq!(r.profile.steps.len(), 10);
        assert_eq!(r.profile.payloads.len(), 10);
        let raw = r.profile.payloads["raw_points"];
        assert_eq!(raw, 2 + 1 + 6 + 1 + 2 + 8 + 3000 * 16);
        let stage_sum: f64 = r.backbone_stages.iter().map(|m| m.ratio_pct).sum();
        assert!((stage_sum - r.modules[1].ratio_pct).abs() < 1e-9);
        let table = render_ratio_table(&r.modules, Some(&r.backbone_stages));
        assert_eq!(table.lines().count(), 10);
        assert!(r.modules_csv().unwrap().starts_with("index,module,mean_ms,ratio_pct\n"));
    }

    #[test]
    fn single_scene_matches_its_own_shares() {
        let det = Detector::new(ArchConfig::tiny(), 1).unwrap();
        let scenes = vec![generate_scene(2, 0, 2000)];
        let r = cli_profile(&scenes, &det, RunOptions { warmup: 0, runs: 1 }).unwrap();
        let total: f64 = r.modules.iter().map(|m| m.mean_ms).sum();
        for m in &r.modules {
            assert!((m.ratio_pct - 100.0 * m.mean_ms / total).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_input_rejected() {
        let det = Detector::new(ArchConfig::tiny(), 1).unwrap();
        assert!(cli_profile(&[], &det, RunOptions::default()).is_err());
    }
}
