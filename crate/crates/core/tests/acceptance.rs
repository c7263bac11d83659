//! Acceptance suite. Runs every criterion in sequence (so the timing
//! criterion sees an otherwise idle process), prints one PASS/FAIL line per
//! criterion straight to stderr, and fails if any criterion failed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use voxsplit::bench::{cli_replay_paper, generate_scene, reference_profile, REFERENCE};
use voxsplit::detector::backbone3d::tap_offset;
use voxsplit::detector::{sparse_conv3d, voxelize_mean, ArchConfig, Conv3dWeights, ConvMode, Detector, TAPS_3D};
use voxsplit::ingest::{Point, PointCloud, Range3D};
use voxsplit::rng::SplitMix64;
use voxsplit::runtime::{bundle_transfer_set, run_head, run_monolithic, EdgeClient, LinkEmulation, Server};
use voxsplit::splitter::{
    build_module_graph, plan_best_split, report_reductions, LinkModel, Profile, SplitPoint, StepCost,
    STANDARD_SPLITS,
};
use voxsplit::tensor::{DenseBevTensor, SparseVoxelTensor, TensorBundle, TensorPayload};
use voxsplit::wire::{
    bundle_encoded_len, decode_frame, decode_tensor_bundle, encode_frame, encode_tensor_bundle, Message,
};
use voxsplit::VoxelConfig;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1 ----------------------------------------------------------------------

fn split_equivalence() -> Verdict {
    let start = Instant::now();
    let det = Arc::new(Detector::new(ArchConfig::tiny(), 2024).map_err(|e| e.to_string())?);
    let server = Server::new((*det).clone()).and_then(|s| s.spawn("127.0.0.1:0")).map_err(|e| e.to_string())?;
    let graph = build_module_graph(det.arch()).map_err(|e| e.to_string())?;
    let mut client =
        EdgeClient::connect(&server.addr().to_string(), det.clone(), LinkEmulation::PASSTHROUGH).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for i in 0..20 {
        let cloud = generate_scene(77, i, 20_000);
        let (mono, _) = run_monolithic(&det, &cloud).map_err(|e| e.to_string())?;
        for label in STANDARD_SPLITS {
            let split = graph.split_by_label(label).map_err(|e| e.to_string())?;
            let (d, t) = client.infer(&split, &cloud).map_err(|e| format!("{label}: {e}"))?;
            ensure(d.bit_eq(&mono), || format!("scene {i} split {label}: detections differ"))?;
            t.check(1e-6).map_err(|e| format!("scene {i} split {label}: {e}"))?;
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{checked} split runs bit-identical to monolithic in {secs:.1} s"))
}

// 2 ----------------------------------------------------------------------

fn table_ii() -> Verdict {
    let g = build_module_graph(&ArchConfig::default()).map_err(|e| e.to_string())?;
    let expected: [(&str, &[&str]); 4] = [
        ("after_conv1", &["conv1"]),
        ("after_conv2", &["conv2"]),
        ("after_conv3", &["conv2", "conv3"]),
        ("after_conv4", &["conv2", "conv3", "conv4"]),
    ];
    for (label, want) in expected {
        let s = g.split_by_label(label).map_err(|e| e.to_string())?;
        let got: BTreeSet<String> = g.transfer_set(&s).map_err(|e| e.to_string())?.into_iter().collect();
        let want: BTreeSet<String> = want.iter().map(|s| s.to_string()).collect();
        ensure(got == want, || format!("{label}: got {got:?}, want {want:?}"))?;
    }
    Ok("transfer sets {conv1}, {conv2}, {conv2,conv3}, {conv2,conv3,conv4}".into())
}

// 3 ----------------------------------------------------------------------

fn replay() -> Verdict {
    let report = cli_replay_paper();
    ensure(report.passed(), || format!("{report}"))?;
    let r = REFERENCE;
    let pairs = [
        (r.monolithic_ms, r.inference_ms[0], 70.8),
        (r.monolithic_ms, r.inference_ms[1], 57.1),
        (r.monolithic_ms, r.edge_ms[0], 90.0),
        (r.monolithic_ms, r.edge_ms[1], 69.5),
    ];
    let mut shown = Vec::new();
    for (base, v, want) in pairs {
        let got = report_reductions(base, v).map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 0.5, || format!("({base}, {v}) -> {got}, want {want}"))?;
        shown.push(format!("{got}"));
    }
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        worst = worst.max((r.head_ms[i] + r.transfer_ms[i] - r.edge_ms[i]).abs());
    }
    ensure(worst <= 0.1, || format!("decomposition residual {worst} ms"))?;
    Ok(format!("reductions {} %, max decomposition residual {worst:.2e} ms", shown.join("/")))
}

// 4 ----------------------------------------------------------------------

fn random_sparse(g: &mut SplitMix64, shape: [u32; 3], channels: usize) -> SparseVoxelTensor {
    let density = 0.02 + 0.3 * g.next_unit_f32();
    let mut coords = Vec::new();
    for d in 0..shape[0] as i32 {
        for h in 0..shape[1] as i32 {
            for w in 0..shape[2] as i32 {
                if g.next_unit_f32() < density {
                    coords.push([d, h, w]);
                }
            }
        }
    }
    if coords.is_empty() {
        coords.push([0, 0, 0]);
    }
    let features = (0..coords.len() * channels).map(|_| g.uniform(-1.0, 1.0)).collect();
    SparseVoxelTensor::new(shape, channels, coords, features).unwrap()
}

fn random_conv(g: &mut SplitMix64, cin: usize, cout: usize) -> Conv3dWeights {
    Conv3dWeights {
        in_channels: cin,
        out_channels: cout,
        kernel: (0..TAPS_3D * cin * cout).map(|_| g.uniform(-0.5, 0.5)).collect(),
        bias: (0..cout).map(|_| g.uniform(-0.1, 0.1)).collect(),
    }
}

/// Dense 3x3x3 convolution over the whole output grid in f64, then masked to
/// the active output sites.
fn dense_oracle(x: &SparseVoxelTensor, w: &Conv3dWeights, stride: i32) -> (Vec<[i32; 3]>, Vec<f64>) {
    let s = x.spatial_shape.map(|v| v as i32);
    let cin = x.channels;
    let cout = w.out_channels;
    let mut dense = vec![0f64; (s[0] * s[1] * s[2]) as usize * cin];
    let mut active = vec![false; (s[0] * s[1] * s[2]) as usize];
    let at = |c: [i32; 3]| ((c[0] * s[1] + c[1]) * s[2] + c[2]) as usize;
    for (i, c) in x.coords.iter().enumerate() {
        active[at(*c)] = true;
        for ch in 0..cin {
            dense[at(*c) * cin + ch] = x.features[i * cin + ch] as f64;
        }
    }
    let os = if stride == 1 { s } else { s.map(|v| (v + 1) / 2) };
    // Active outputs: the input sites themselves, or every site whose
    // halved coordinate is occupied.
    let mut mask = BTreeSet::new();
    for d in 0..s[0] {
        for h in 0..s[1] {
            for ww in 0..s[2] {
                if active[at([d, h, ww])] {
                    mask.insert(if stride == 1 { [d, h, ww] } else { [d / 2, h / 2, ww / 2] });
                }
            }
        }
    }
    let mut coords = Vec::new();
    let mut values = Vec::new();
    for od in 0..os[0] {
        for oh in 0..os[1] {
            for ow in 0..os[2] {
                let mut acc: Vec<f64> = w.bias.iter().map(|&b| b as f64).collect();
                for k in 0..TAPS_3D {
                    let off = tap_offset(k);
                    let src = [od * stride + off[0], oh * stride + off[1], ow * stride + off[2]];
                    if (0..3).any(|a| src[a] < 0 || src[a] >= s[a]) {
                        continue;
                    }
                    let base = at(src) * cin;
                    for ci in 0..cin {
                        let xv = dense[base + ci];
                        for co in 0..cout {
                            acc[co] += xv * w.kernel[(k * cin + ci) * cout + co] as f64;
                        }
                    }
                }
                if mask.contains(&[od, oh, ow]) {
                    coords.push([od, oh, ow]);
                    values.extend(acc.iter().map(|v| v.max(0.0)));
                }
            }
        }
    }
    (coords, values)
}

fn voxel_oracle(cloud: &PointCloud, cfg: &VoxelConfig) -> (Vec<[i32; 3]>, Vec<f32>) {
    let grid = cfg.grid_shape();
    let mut groups: BTreeMap<[i32; 3], Vec<Point>> = BTreeMap::new();
    for p in &cloud.points {
        let xyz = [p.x, p.y, p.z];
        let inside = (0..3).all(|a| xyz[a] >= cfg.range.min[a] && xyz[a] < cfg.range.max[a]);
        if !inside {
            continue;
        }
        let mut c = [0i32; 3];
        for a in 0..3 {
            let cell = ((xyz[a] - cfg.range.min[a]) / cfg.voxel_size[a]).floor() as i64;
            c[2 - a] = cell.clamp(0, grid[2 - a] as i64 - 1) as i32;
        }
        groups.entry(c).or_default().push(*p);
    }
    let mut coords = Vec::new();
    let mut feats = Vec::new();
    for (c, pts) in groups {
        let used = &pts[..pts.len().min(cfg.max_points_per_voxel)];
        let mut sum = [0f32; 4];
        for p in used {
            for (s, v) in sum.iter_mut().zip(p.to_array()) {
                *s += v;
            }
        }
        coords.push(c);
        feats.extend(sum.map(|v| v / used.len() as f32));
    }
    (coords, feats)
}

fn kernel_oracles() -> Verdict {
    let mut g = SplitMix64::new(0x5eed);
    let mut worst = 0f64;
    let mut stages = 0;
    for case in 0..200 {
        let shape = [1 + g.below(16) as u32, 1 + g.below(16) as u32, 1 + g.below(16) as u32];
        let widths: Vec<usize> = (0..5).map(|_| 1 + g.below(6) as usize).collect();
        let mut x = random_sparse(&mut g, shape, widths[0]);
        for stage in 0..4 {
            let w = random_conv(&mut g, widths[stage], widths[stage + 1]);
            let (mode, stride) = if stage == 0 { (ConvMode::Submanifold, 1) } else { (ConvMode::Strided, 2) };
            let y = sparse_conv3d(&x, &w, mode).map_err(|e| e.to_string())?;
            let (coords, values) = dense_oracle(&x, &w, stride);
            ensure(y.coords == coords, || format!("case {case} stage {stage}: active sites differ"))?;
            for (a, b) in y.features.iter().zip(&values) {
                worst = worst.max((*a as f64 - b).abs());
            }
            stages += 1;
            x = y;
        }
    }
    ensure(worst <= 1e-5, || format!("max abs error {worst:e}"))?;

    let mut exact = 0;
    for case in 0..200 {
        let min = [g.uniform(-5.0, 0.0), g.uniform(-5.0, 0.0), g.uniform(-3.0, 0.0)];
        let ext = [g.uniform(1.0, 8.0), g.uniform(1.0, 8.0), g.uniform(1.0, 4.0)];
        let range = Range3D::new(min, [min[0] + ext[0], min[1] + ext[1], min[2] + ext[2]]).unwrap();
        let cfg = VoxelConfig {
            range,
            voxel_size: [g.uniform(0.1, 1.0), g.uniform(0.1, 1.0), g.uniform(0.1, 1.0)],
            max_points_per_voxel: 1 + g.below(6) as usize,
        };
        let n = 1 + g.below(3000) as usize;
        let pts: Vec<Point> = (0..n)
            .map(|_| {
                Point::new(
                    g.uniform(min[0] - 1.0, min[0] + ext[0] + 1.0),
                    g.uniform(min[1] - 1.0, min[1] + ext[1] + 1.0),
                    g.uniform(min[2] - 1.0, min[2] + ext[2] + 1.0),
                    g.next_unit_f32(),
                )
            })
            .collect();
        let cloud = PointCloud::new("v", pts);
        let (coords, feats) = voxel_oracle(&cloud, &cfg);
        match voxelize_mean(&cloud, &cfg) {
            Ok(t) => {
                ensure(t.coords == coords, || format!("voxel case {case}: coordinates differ"))?;
                let same = t.features.iter().zip(&feats).all(|(a, b)| a.to_bits() == b.to_bits());
                ensure(same && t.features.len() == feats.len(), || format!("voxel case {case}: features differ"))?;
            }
            Err(_) => ensure(coords.is_empty(), || format!("voxel case {case}: unexpected empty result"))?,
        }
        exact += 1;
    }
    Ok(format!("{stages} conv stages (max abs err {worst:.2e}), {exact} voxelizations bit-exact"))
}

// 5 ----------------------------------------------------------------------

fn random_bundle(g: &mut SplitMix64) -> TensorBundle {
    let mut b = TensorBundle::new();
    for i in 0..g.below(4) {
        let id = format!("t{i}_{}", g.below(1000));
        let payload = if g.below(2) == 0 {
            let shape = [1 + g.below(8) as u32, 1 + g.below(8) as u32, 1 + g.below(8) as u32];
            let ch = 1 + g.below(5) as usize;
            let mut cells = BTreeSet::new();
            for _ in 0..g.below(20) {
                cells.insert([
                    g.below(shape[0] as u64) as i32,
                    g.below(shape[1] as u64) as i32,
                    g.below(shape[2] as u64) as i32,
                ]);
            }
            let coords: Vec<[i32; 3]> = cells.into_iter().collect();
            let features = (0..coords.len() * ch).map(|_| f32::from_bits(g.next_u64() as u32)).collect();
            TensorPayload::Sparse(SparseVoxelTensor::new(shape, ch, coords, features).unwrap())
        } else {
            let (c, h, w) = (g.below(3) as usize, g.below(6) as usize, g.below(6) as usize);
            let data = (0..c * h * w).map(|_| g.uniform(-10.0, 10.0)).collect();
            TensorPayload::Dense(DenseBevTensor::new(c, h, w, data).unwrap())
        };
        b.push(id, payload).unwrap();
    }
    b
}

fn bits_of(b: &TensorBundle) -> Vec<u8> {
    // Bit-level comparison that treats NaN payloads as equal to themselves.
    encode_tensor_bundle(b).unwrap()
}

fn parse_hex(text: &str) -> Vec<u8> {
    text.lines()
        .map(|l| l.split('#').next().unwrap())
        .flat_map(|l| l.split_whitespace().map(|h| u8::from_str_radix(h, 16).unwrap()).collect::<Vec<_>>())
        .collect()
}

fn seed_frames(g: &mut SplitMix64) -> Vec<Vec<u8>> {
    let mut frames = vec![
        encode_frame(&Message::Hello { seed: 1, arch_hash: 2 }).unwrap(),
        encode_frame(&Message::Error { code: 3, text: "boom".into() }).unwrap(),
    ];
    for _ in 0..30 {
        let bundle = random_bundle(g);
        frames.push(encode_frame(&Message::InferRequest { split_label: "after_conv2".into(), bundle }).unwrap());
    }
    let det = Detector::new(ArchConfig::tiny(), 1).unwrap();
    let (d, t) = run_monolithic(&det, &generate_scene(1, 0, 2000)).unwrap();
    frames.push(encode_frame(&Message::Result(d)).unwrap());
    frames.push(encode_frame(&Message::Timing(t)).unwrap());
    frames
}

fn mutate(g: &mut SplitMix64, seeds: &[Vec<u8>]) -> Vec<u8> {
    if g.below(8) == 0 {
        return (0..g.below(48)).map(|_| g.next_u64() as u8).collect();
    }
    let mut f = seeds[g.below(seeds.len() as u64) as usize].clone();
    for _ in 0..1 + g.below(4) {
        if f.is_empty() {
            break;
        }
        let i = g.below(f.len() as u64) as usize;
        match g.below(5) {
            0 => f[i] ^= 1 << g.below(8),
            1 => f[i] = g.next_u64() as u8,
            2 => f.truncate(i),
            3 => f.insert(i, g.next_u64() as u8),
            _ => {
                let j = g.below(f.len() as u64) as usize;
                f.swap(i, j);
            }
        }
    }
    // Half the time, repair the header length and CRC so the payload parser
    // sees the damage.
    if g.below(2) == 0 && f.len() >= 14 {
        let len = f.len() - 14;
        f[6..10].copy_from_slice(&(len as u32).to_le_bytes());
        let crc = crc32(&f[10..10 + len]);
        let n = f.len();
        f[n - 4..].copy_from_slice(&crc.to_le_bytes());
    }
    f
}

/// Bitwise CRC-32 (IEEE), independent of the codec's implementation.
fn crc32(data: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

fn wire_robustness() -> Verdict {
    let mut g = SplitMix64::new(0xf022);
    let seeds = seed_frames(&mut g);
    let mut decoded = 0;
    let mut kinds: HashMap<String, usize> = HashMap::new();
    for i in 0..1_000_000 {
        let input = mutate(&mut g, &seeds);
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| decode_frame(&input)))
            .map_err(|_| format!("decoder panicked on iteration {i}: {input:02x?}"))?;
        match outcome {
            Ok((m, used)) => {
                ensure(used <= input.len(), || format!("iteration {i}: consumed {used} of {}", input.len()))?;
                let again = encode_frame(&m).map_err(|e| e.to_string())?;
                ensure(again == input[..used], || format!("iteration {i}: re-encoding differs"))?;
                decoded += 1;
            }
            Err(e) => {
                let name = format!("{e:?}");
                *kinds.entry(name.split(['(', ' ', '{']).next().unwrap().to_owned()).or_default() += 1;
            }
        }
    }

    for i in 0..10_000 {
        let b = random_bundle(&mut g);
        let bytes = encode_tensor_bundle(&b).map_err(|e| e.to_string())?;
        ensure(bytes.len() == bundle_encoded_len(&b), || format!("bundle {i}: size formula mismatch"))?;
        let back = decode_tensor_bundle(&bytes).map_err(|e| format!("bundle {i}: {e}"))?;
        ensure(bits_of(&back) == bytes, || format!("bundle {i}: round trip differs"))?;
        let m = Message::InferRequest { split_label: "after_vfe".into(), bundle: b };
        let f = encode_frame(&m).map_err(|e| e.to_string())?;
        let (back, used) = decode_frame(&f).map_err(|e| format!("frame {i}: {e}"))?;
        ensure(used == f.len() && encode_frame(&back).unwrap() == f, || format!("frame {i}: round trip differs"))?;
    }

    let golden = parse_hex(include_str!("fixtures/infer_request_after_vfe.hex"));
    let mut bundle = TensorBundle::new();
    let t = SparseVoxelTensor::new([10, 200, 176], 4, vec![[2, 100, 50]], vec![1.5, -2.0, 0.25, 0.5]).unwrap();
    bundle.push("vfe_out", TensorPayload::Sparse(t)).unwrap();
    let frame = encode_frame(&Message::InferRequest { split_label: "after_vfe".into(), bundle }).unwrap();
    ensure(frame == golden, || "golden INFER_REQUEST frame differs".into())?;
    ensure(crc32(&golden[10..golden.len() - 4]).to_le_bytes() == golden[golden.len() - 4..], || "fixture crc".into())?;

    let mut k: Vec<_> = kinds.into_iter().collect();
    k.sort();
    Ok(format!(
        "1e6 fuzz inputs without panic ({decoded} decoded and re-encoded exactly; errors {k:?}); 1e4 bundles round-trip; golden frame matches"
    ))
}

// 6 ----------------------------------------------------------------------

fn planner_oracle() -> Verdict {
    let mut g = SplitMix64::new(0x91a2);
    for case in 0..1000 {
        let n = 2 + g.below(9) as usize;
        let steps: Vec<StepCost> = (0..n)
            .map(|i| StepCost {
                step: format!("s{i}"),
                device_ms: Some(g.uniform(0.0, 80.0) as f64),
                server_ms: Some(g.uniform(0.0, 15.0) as f64),
            })
            .collect();
        let mut p = Profile { steps, payloads: BTreeMap::new() };
        for k in 0..n {
            if g.below(5) != 0 {
                let label = p.split_label(k);
                p.payloads.insert(label, g.below(30_000_000));
            }
        }
        // Some cases with exact ties.
        if case % 10 == 0 {
            for s in &mut p.steps {
                s.device_ms = Some(0.0);
                s.server_ms = Some(0.0);
            }
            for v in p.payloads.values_mut() {
                *v = 0;
            }
        }
        let bw = g.uniform(1e5, 1e9) as f64;
        let lat = g.uniform(0.0, 30.0) as f64;
        let link = LinkModel::new(bw, lat).map_err(|e| e.to_string())?;

        let mut best: Option<(usize, f64)> = None;
        for k in 0..=n {
            let head: f64 = p.steps[..k].iter().map(|s| s.device_ms.unwrap()).sum();
            let total = if k == n {
                head
            } else {
                let Some(&bytes) = p.payloads.get(&p.split_label(k)) else { continue };
                let tail: f64 = p.steps[k..].iter().map(|s| s.server_ms.unwrap()).sum();
                head + (bytes as f64 / bw * 1e3 + lat) + tail + (1024.0 / bw * 1e3 + lat)
            };
            if best.is_none_or(|(_, b)| total < b - 1e-9) {
                best = Some((k, total));
            }
        }
        let want = best.unwrap().0;
        let got = plan_best_split(&p, &link).map_err(|e| e.to_string())?;
        ensure(got.index == want, || format!("case {case}: planner chose {}, enumeration {want}", got.index))?;
    }
    let (p, link) = reference_profile();
    let chosen: SplitPoint = plan_best_split(&p, &link).map_err(|e| e.to_string())?;
    ensure(chosen.label == "after_vfe", || format!("reference profile chose {}", chosen.label))?;
    Ok("1000 random profiles match enumeration; reference profile selects after_vfe".into())
}

// 7 ----------------------------------------------------------------------

fn link_emulation() -> Verdict {
    let det = Arc::new(Detector::new(ArchConfig::tiny(), 5).map_err(|e| e.to_string())?);
    let server = Server::new((*det).clone()).and_then(|s| s.spawn("127.0.0.1:0")).map_err(|e| e.to_string())?;
    let link = LinkEmulation::new(1e6, 10.0).map_err(|e| e.to_string())?;
    let mut client = EdgeClient::connect(&server.addr().to_string(), det.clone(), link).map_err(|e| e.to_string())?;
    let graph = build_module_graph(det.arch()).map_err(|e| e.to_string())?;
    let split = graph.split_by_label("after_vfe").map_err(|e| e.to_string())?;
    let cloud = generate_scene(3, 0, 8_000);
    let mut samples = Vec::new();
    let mut payload = 0;
    for _ in 0..30 {
        let (_, t) = client.infer(&split, &cloud).map_err(|e| e.to_string())?;
        payload = t.payload_bytes;
        samples.push(t.transfer_ms);
    }
    samples.sort_by(f64::total_cmp);
    let median = (samples[14] + samples[15]) / 2.0;
    let bound = payload as f64 / 1e6 * 1e3 + 10.0;
    let rel = (median - bound) / bound;
    ensure(rel.abs() <= 0.2, || format!("median {median:.2} ms vs analytic {bound:.2} ms ({:+.1}%)", rel * 100.0))?;
    Ok(format!("payload {payload} B: median {median:.2} ms vs analytic {bound:.2} ms ({:+.1}%)", rel * 100.0))
}

// 8 ----------------------------------------------------------------------

fn monotone_sizes() -> Verdict {
    let det = Detector::new(ArchConfig::default(), 42).map_err(|e| e.to_string())?;
    let graph = build_module_graph(det.arch()).map_err(|e| e.to_string())?;
    let cloud = generate_scene(8, 0, 100_000);
    let mut sizes = Vec::new();
    for label in ["after_vfe", "raw_points", "after_conv1", "after_conv2"] {
        let plan = graph.partition(&graph.split_by_label(label).unwrap()).map_err(|e| e.to_string())?;
        let (store, _) = run_head(&det, &plan, &cloud).map_err(|e| e.to_string())?;
        let bundle = bundle_transfer_set(&store, &plan).map_err(|e| e.to_string())?;
        let measured = encode_tensor_bundle(&bundle).map_err(|e| e.to_string())?.len();
        ensure(measured == bundle_encoded_len(&bundle), || format!("{label}: size formula mismatch"))?;
        sizes.push((label, measured));
    }
    let ordered = sizes.windows(2).all(|w| w[0].1 < w[1].1);
    let shown: Vec<String> = sizes.iter().map(|(l, s)| format!("{l}={s}")).collect();
    ensure(ordered, || format!("order violated: {}", shown.join(" ")))?;
    Ok(shown.join(" < "))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("1 split/monolithic equivalence", split_equivalence),
        ("2 transfer sets", table_ii),
        ("3 reference arithmetic replay", replay),
        ("4 kernel oracles", kernel_oracles),
        ("5 wire robustness", wire_robustness),
        ("6 planner oracle", planner_oracle),
        ("7 link emulation", link_emulation),
        ("8 monotone size property", monotone_sizes),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (name, f) in criteria {
        let start = Instant::now();
        let verdict = panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let line = match &verdict {
            Ok(detail) => format!("PASS criterion {name} ({secs:.1} s): {detail}\n"),
            Err(detail) => format!("FAIL criterion {name} ({secs:.1} s): {detail}\n"),
        };
        let _ = err.write_all(line.as_bytes());
        if verdict.is_err() {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
