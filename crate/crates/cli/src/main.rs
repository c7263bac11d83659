use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use voxsplit::bench::{
    cli_profile, cli_replay_paper, cli_sweep, gen_scenes, load_dataset, render_ratio_table, RunOptions,
    SweepConfig, SweepTarget,
};
use voxsplit::detector::ArchConfig;
use voxsplit::ingest::load_kitti_file;
use voxsplit::runtime::{run_monolithic, EdgeClient, LinkEmulation, Server, TimingReport, BIND_ENV};
use voxsplit::splitter::build_module_graph;
use voxsplit::wire::{encode_frame, Message};
use voxsplit::{Detections, Detector};

const LOG_ENV: &str = "VOXSPLIT_LOG";

#[derive(Parser)]
#[command(name = "voxsplit", version, about = "Split-computing benchmarks for voxel-based 3D detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-module execution-time ratios and a latency profile
    Profile(ProfileArgs),
    /// Monolithic baseline plus a set of split points
    Sweep(SweepArgs),
    /// Run the edge server
    Serve(ServeArgs),
    /// One inference of one scene at one split
    Infer(InferArgs),
    /// Check the published reductions and timing decompositions
    ReplayPaper(ReplayArgs),
    /// Write synthetic scenes in KITTI .bin layout
    GenScenes(GenArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Built-in architecture profile
    #[arg(long, value_enum, default_value_t = ArchProfile::Default)]
    arch: ArchProfile,
    /// Architecture file (key = value); overrides --arch
    #[arg(long)]
    arch_file: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Copy, Clone, ValueEnum)]
enum ArchProfile {
    Default,
    Tiny,
}

impl ModelArgs {
    fn arch(&self) -> Result<ArchConfig> {
        let arch = match &self.arch_file {
            Some(p) => ArchConfig::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
            None => match self.arch {
                ArchProfile::Default => ArchConfig::default(),
                ArchProfile::Tiny => ArchConfig::tiny(),
            },
        };
        Ok(arch)
    }

    fn detector(&self) -> Result<Detector> {
        Ok(Detector::new(self.arch()?, self.seed)?)
    }
}

#[derive(Args)]
struct LinkArgs {
    /// Uplink bandwidth in bytes per second (0 = unlimited)
    #[arg(long, default_value_t = 0.0)]
    bandwidth: f64,
    /// Latency added to each uplink transmission, in ms
    #[arg(long, default_value_t = 0.0)]
    latency_ms: f64,
}

impl LinkArgs {
    fn link(&self) -> Result<LinkEmulation> {
        LinkEmulation::new(self.bandwidth, self.latency_ms).map_err(anyhow::Error::msg)
    }
}

#[derive(Args)]
struct ProfileArgs {
    /// Directory of .bin scenes (or a single file)
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 100)]
    max_scenes: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 30)]
    runs: usize,
    /// Show Backbone 3D per stage
    #[arg(long)]
    expand_backbone: bool,
    /// Write module_ratios.csv, profile_steps.csv and profile_payloads.csv here
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Markdown,
    All,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Server address; omit with --local
    #[arg(long, conflicts_with = "local", required_unless_present = "local")]
    server: Option<String>,
    /// Run the server in-process on loopback
    #[arg(long)]
    local: bool,
    #[arg(long, value_delimiter = ',', default_value = "after_vfe,after_conv1,after_conv2")]
    splits: Vec<String>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    link: LinkArgs,
    #[arg(long, default_value_t = 100)]
    max_scenes: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 30)]
    runs: usize,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
    /// Write sweep.{csv,json,md} here instead of printing
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = BIND_ENV, default_value = "127.0.0.1:7878")]
    bind: String,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct InferArgs {
    /// Scene file (.bin)
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, conflicts_with = "local", required_unless_present = "local")]
    server: Option<String>,
    #[arg(long)]
    local: bool,
    /// Split label (raw_points, after_vfe, ..., monolithic)
    #[arg(long, default_value = "after_vfe")]
    split: String,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    link: LinkArgs,
    /// Fail unless the detections equal a local monolithic run bit for bit
    #[arg(long)]
    check: bool,
    /// Write the detections as an encoded RESULT frame
    #[arg(long)]
    detections_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 100_000)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn profile(a: ProfileArgs) -> Result<ExitCode> {
    let det = a.model.detector()?;
    let scenes = load_dataset(&a.dataset, Some(a.max_scenes))?;
    let report = cli_profile(&scenes, &det, RunOptions { warmup: a.warmup, runs: a.runs })?;
    println!("{} scenes, {} runs each, arch {:016x}", report.scene_count, report.runs_per_scene, det.arch_hash());
    print!("{}", render_ratio_table(&report.modules, a.expand_backbone.then_some(&report.backbone_stages[..])));
    if let Some(dir) = a.out_dir {
        write_file(&dir.join("module_ratios.csv"), report.modules_csv()?.as_bytes())?;
        let mut steps = Vec::new();
        report.profile.write_steps_csv(&mut steps)?;
        write_file(&dir.join("profile_steps.csv"), &steps)?;
        let mut payloads = Vec::new();
        report.profile.write_payloads_csv(&mut payloads)?;
        write_file(&dir.join("profile_payloads.csv"), &payloads)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(a: SweepArgs) -> Result<ExitCode> {
    let scenes = load_dataset(&a.dataset, Some(a.max_scenes))?;
    let cfg = SweepConfig {
        arch: a.model.arch()?,
        seed: a.model.seed,
        splits: a.splits,
        link: a.link.link()?,
        runs: RunOptions { warmup: a.warmup, runs: a.runs },
        target: match a.server {
            Some(s) => SweepTarget::Remote(s),
            None => SweepTarget::Local,
        },
    };
    let report = cli_sweep(&scenes, &cfg)?;
    let outputs: Vec<(&str, String)> = [
        (Format::Csv, "csv", report.to_csv()?),
        (Format::Json, "json", report.to_json()?),
        (Format::Markdown, "md", report.to_markdown()),
    ]
    .into_iter()
    .filter(|(f, _, _)| a.format == Format::All || *f == a.format)
    .map(|(_, ext, body)| (ext, body))
    .collect();
    match a.out_dir {
        Some(dir) => {
            for (ext, body) in &outputs {
                write_file(&dir.join(format!("sweep.{ext}")), body.as_bytes())?;
            }
        }
        None => {
            for (_, body) in &outputs {
                print!("{body}");
                if !body.ends_with('\n') {
                    println!();
                }
            }
        }
    }
    if !report.is_ok() {
        eprintln!("sweep failed: {}", report.status);
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(a: ServeArgs) -> Result<ExitCode> {
    let server = Server::new(a.model.detector()?)?;
    let listener = TcpListener::bind(&a.bind).with_context(|| format!("binding {}", a.bind))?;
    let addr = listener.local_addr()?;
    // The first stdout line carries the bound address, for callers that pass port 0.
    println!("listening on {addr}");
    std::io::stdout().flush()?;
    info!("serving seed {} arch {:016x} on {addr}", a.model.seed, server.detector().arch_hash());
    server.accept_loop(listener, &AtomicBool::new(false));
    bail!("listener closed")
}

fn print_timing(t: &TimingReport) {
    println!(
        "split={} scene={} payload_bytes={} head_ms={:.3} transfer_ms={:.3} tail_ms={:.3} return_ms={:.3} edge_ms={:.3} total_ms={:.3}",
        t.split_label,
        t.scene_id,
        t.payload_bytes,
        t.head_compute_ms,
        t.transfer_ms,
        t.tail_compute_ms,
        t.result_return_ms,
        t.edge_execution_ms,
        t.total_inference_ms
    );
}

fn infer(a: InferArgs) -> Result<ExitCode> {
    let cloud = load_kitti_file(&a.scene)?;
    let detector = Arc::new(a.model.detector()?);
    let graph = build_module_graph(detector.arch())?;
    let split = graph.split_by_label(&a.split)?;
    let link = a.link.link()?;

    let _local = if a.local { Some(Server::new((*detector).clone())?.spawn("127.0.0.1:0")?) } else { None };
    let addr = match (&a.server, &_local) {
        (Some(s), _) => s.clone(),
        (None, Some(h)) => h.addr().to_string(),
        (None, None) => bail!("either --server or --local is required"),
    };
    let (detections, timing) = EdgeClient::connect(&addr, detector.clone(), link)?.infer(&split, &cloud)?;
    print_timing(&timing);
    println!("detections={}", detections.len());
    if let Some(path) = &a.detections_out {
        write_file(path, &encode_frame(&Message::Result(detections.clone()))?)?;
    }
    if a.check {
        let (mono, _): (Detections, _) = run_monolithic(&detector, &cloud)?;
        if !mono.bit_eq(&detections) {
            eprintln!("detections differ from the monolithic run");
            return Ok(ExitCode::from(2));
        }
        println!("check: identical to monolithic");
    }
    Ok(ExitCode::SUCCESS)
}

fn replay(a: ReplayArgs) -> Result<ExitCode> {
    let report = cli_replay_paper();
    if a.json {
        println!("{}", report.to_json()?);
    } else {
        println!("{report}");
    }
    if !report.passed() {
        for c in report.failures() {
            eprintln!("mismatch: {c}");
        }
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn gen(a: GenArgs) -> Result<ExitCode> {
    if a.count == 0 || a.points == 0 {
        bail!("--count and --points must be positive");
    }
    let paths = gen_scenes(a.count, a.points, a.seed, &a.out)?;
    println!("wrote {} scenes to {}", paths.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).init();
    let result = match Cli::parse().command {
        Command::Profile(a) => profile(a),
        Command::Sweep(a) => sweep(a),
        Command::Serve(a) => serve(a),
        Command::Infer(a) => infer(a),
        Command::ReplayPaper(a) => replay(a),
        Command::GenScenes(a) => gen(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
