//! The `horizon` command-line tool.
//!
//! Exit codes: 0 on success, 1 when a property check fails, 2 on bad input.

mod pin;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::attn::perf::{perf_inputs, perf_scene, time_paths};
use crate::attn::AttentionConfig;
use crate::attn::{run_attention_checks, CheckOptions};
use crate::bench::{
    evaluate, generate_bench, render_table, validate_bench, BenchConstraints, DetectionRecord, GroundTruthRecord,
};
use crate::filter::{aggregate, ranked_outputs, read_scores, SelectionPolicy, DEFAULT_TOP_FRACTION};
use crate::horizon::{build_horizon_mask, dense_limit_from_env};
use crate::rope::assign_position_ids;
use crate::scene::{build_layout, BoundingBox, ReferenceSpec, SceneSpec};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_INPUT: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "horizon", version, about = "Regional attention horizon masks, kernels, filter and layout benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the attention mask of a scene and print its visibility stats.
    MaskBuild(MaskBuildArgs),
    /// Run leakage, softmax and dense/sparse equivalence checks.
    AttnCheck(AttnCheckArgs),
    /// Time the dense and block-sparse kernels.
    Perf(PerfArgs),
    /// Rank scored pairs and select the best ones.
    Filter(FilterArgs),
    /// Score detections against a layout benchmark.
    Bench(BenchArgs),
    /// Generate a synthetic layout benchmark.
    BenchGen(BenchGenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

impl std::str::FromStr for ImageSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        let (width, height) = (parse(w)?, parse(h)?);
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(format!("image size {s:?} must be positive"));
        }
        Ok(Self { width, height })
    }
}

#[derive(Debug, Args)]
pub struct MaskBuildArgs {
    /// Scene JSON file.
    pub scene: PathBuf,
    /// Write the block-structured mask as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the dense mask as a binary PGM image (white = visible).
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    /// Write per-token rotary position ids as CSV.
    #[arg(long)]
    pub ids_csv: Option<PathBuf>,
    /// Treat reference boxes as pixel coordinates on an image of this size.
    #[arg(long, value_name = "WxH")]
    pub image_size: Option<ImageSize>,
}

#[derive(Debug, Args)]
pub struct AttnCheckArgs {
    /// Scene JSON file; a built-in two-reference toy scene when omitted.
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run the kernels on a mask with no reference horizon (negative control).
    #[arg(long)]
    pub break_mask: bool,
    /// Write the report JSON here as well as to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PerfArgs {
    /// Sequence lengths to time.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = vec![1024, 2048, 4096])]
    pub sizes: Vec<usize>,
    /// JSONL report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Timed runs per path; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pin the process to one CPU. Reduces timing variance, nothing else.
    #[arg(long, value_name = "CPU")]
    pub cpu_pin: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("policy").args(["top_k", "top_fraction", "rank_threshold"])))]
pub struct FilterArgs {
    /// Score JSONL file.
    pub scores: PathBuf,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Keep floor(n * fraction) records (default 0.245).
    #[arg(long)]
    pub top_fraction: Option<f64>,
    /// Keep records whose mean rank is at most this value.
    #[arg(long)]
    pub rank_threshold: Option<f64>,
    /// Ranked JSONL output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl FilterArgs {
    pub fn policy(&self) -> SelectionPolicy {
        match (self.top_k, self.top_fraction, self.rank_threshold) {
            (Some(k), _, _) => SelectionPolicy::TopK(k),
            (_, Some(f), _) => SelectionPolicy::TopFraction(f),
            (_, _, Some(t)) => SelectionPolicy::RankThreshold(t),
            _ => SelectionPolicy::TopFraction(DEFAULT_TOP_FRACTION),
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Ground-truth JSONL.
    pub gt: PathBuf,
    /// Detection JSONL.
    pub det: PathBuf,
    /// Report JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Row label in the printed table.
    #[arg(long, default_value = "method")]
    pub method: String,
    /// Treat all boxes as pixel coordinates on an image of this size.
    #[arg(long, value_name = "WxH")]
    pub image_size: Option<ImageSize>,
}

#[derive(Debug, Args)]
pub struct BenchGenArgs {
    #[arg(long, default_value_t = 252)]
    pub single: usize,
    #[arg(long, default_value_t = 296)]
    pub multi: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ground-truth JSONL output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.04)]
    pub min_area: f64,
    #[arg(long, default_value_t = 0.60)]
    pub max_area: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub min_aspect: f64,
    #[arg(long, default_value_t = 3.0)]
    pub max_aspect: f64,
    #[arg(long, default_value_t = 0.3)]
    pub challenging_fraction: f64,
    #[arg(long, default_value_t = 0.3)]
    pub max_overlap_iou: f64,
    #[arg(long, default_value_t = 0.02)]
    pub max_gap: f64,
}

impl BenchGenArgs {
    pub fn constraints(&self) -> BenchConstraints {
        BenchConstraints {
            min_area: self.min_area,
            max_area: self.max_area,
            min_aspect: self.min_aspect,
            max_aspect: self.max_aspect,
            challenging_fraction: self.challenging_fraction,
            max_overlap_iou: self.max_overlap_iou,
            max_gap: self.max_gap,
        }
    }
}

enum Outcome {
    Ok,
    CheckFailed,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::from(EXIT_OK),
        Ok(Outcome::CheckFailed) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::MaskBuild(a) => mask_build(&a),
        Command::AttnCheck(a) => attn_check(&a),
        Command::Perf(a) => perf(&a),
        Command::Filter(a) => filter(&a),
        Command::Bench(a) => bench(&a),
        Command::BenchGen(a) => bench_gen(&a),
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match path {
        Some(p) => write_bytes(p, bytes),
        None => std::io::stdout().lock().write_all(bytes).context("writing stdout"),
    }
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).expect("serializable"));
        s.push('\n');
    }
    s
}

/// Rewrites a `[x0, y0, x1, y1]` pixel box in place as normalized coordinates.
fn normalize_box(slot: &mut Value, size: ImageSize) -> anyhow::Result<()> {
    let coords: [f64; 4] = serde_json::from_value(slot.clone()).context("box must be four numbers")?;
    let b = BoundingBox::from_pixels(coords, size.width, size.height)?;
    *slot = serde_json::to_value(b)?;
    Ok(())
}

/// Normalizes the boxes of every object in the `refs`, `subjects` and
/// `detections` lists.
fn normalize_boxes(value: &mut Value, size: ImageSize) -> anyhow::Result<()> {
    for key in ["refs", "subjects", "detections"] {
        if let Some(items) = value.get_mut(key).and_then(Value::as_array_mut) {
            for item in items {
                if let Some(slot) = item.get_mut("box") {
                    normalize_box(slot, size)?;
                }
            }
        }
    }
    Ok(())
}

fn parse_with_boxes<T: DeserializeOwned>(text: &str, size: Option<ImageSize>) -> anyhow::Result<T> {
    match size {
        None => Ok(serde_json::from_str(text)?),
        Some(size) => {
            let mut value: Value = serde_json::from_str(text)?;
            normalize_boxes(&mut value, size)?;
            Ok(serde_json::from_value(value)?)
        }
    }
}

fn read_scene(path: &Path, size: Option<ImageSize>) -> anyhow::Result<SceneSpec> {
    let text = read_text(path)?;
    let spec: SceneSpec = parse_with_boxes(&text, size).with_context(|| format!("parsing {}", path.display()))?;
    spec.validate().with_context(|| format!("invalid scene {}", path.display()))?;
    Ok(spec)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path, size: Option<ImageSize>) -> anyhow::Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("{}:{}", path.display(), i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_with_boxes(&line, size).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn mask_build(a: &MaskBuildArgs) -> anyhow::Result<Outcome> {
    let spec = read_scene(&a.scene, a.image_size)?;
    let layout = build_layout(&spec)?;
    let mask = build_horizon_mask(&layout, &spec)?;
    if let Some(path) = &a.out {
        write_bytes(path, pretty(&mask.to_block_json()).as_bytes())?;
    }
    if let Some(path) = &a.pgm {
        let dense = mask.materialize_dense(dense_limit_from_env())?;
        write_bytes(path, &dense.to_pgm())?;
    }
    if let Some(path) = &a.ids_csv {
        write_bytes(path, assign_position_ids(&layout).to_csv().as_bytes())?;
    }
    emit(None, pretty(&mask.visibility_stats()).as_bytes())?;
    Ok(Outcome::Ok)
}

/// Text, an 8x8 noise grid and two 4x4 references with disjoint boxes.
pub fn default_toy_scene() -> SceneSpec {
    SceneSpec::new(
        8,
        8,
        8,
        vec![
            ReferenceSpec::new(4, 4, "dog", BoundingBox::new(0.0, 0.0, 0.5, 0.5).expect("valid")),
            ReferenceSpec::new(4, 4, "cat", BoundingBox::new(0.5, 0.25, 1.0, 0.75).expect("valid")),
        ],
    )
}

fn attn_check(a: &AttnCheckArgs) -> anyhow::Result<Outcome> {
    let spec = match &a.scene {
        Some(p) => read_scene(p, None)?,
        None => default_toy_scene(),
    };
    if a.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let opts =
        CheckOptions { trials: a.trials, seed: a.seed, break_mask: a.break_mask, cfg: AttentionConfig::default() };
    let report = run_attention_checks(&spec, &opts)?;
    let text = pretty(&report);
    if let Some(path) = &a.report {
        write_bytes(path, text.as_bytes())?;
    }
    emit(None, text.as_bytes())?;
    if report.pass {
        Ok(Outcome::Ok)
    } else {
        if let Some(c) = &report.counterexample {
            eprintln!("check failed: {} (trial {}): {}", c.check, c.trial, c.detail);
        }
        Ok(Outcome::CheckFailed)
    }
}

fn perf(a: &PerfArgs) -> anyhow::Result<Outcome> {
    if let Some(cpu) = a.cpu_pin {
        if let Err(e) = pin::pin_to_cpu(cpu) {
            eprintln!("warning: could not pin to CPU {cpu}: {e}");
        }
    }
    let cfg = AttentionConfig::new(AttentionConfig::default().head_dim, 1)?;
    let limit = dense_limit_from_env();
    let mut records = Vec::new();
    for &len in &a.sizes {
        if len > limit {
            eprintln!("warning: skipping L={len}, above the dense limit {limit}");
            continue;
        }
        let spec = perf_scene(len);
        let inputs = perf_inputs(&spec, &cfg, a.seed)?;
        let timed = time_paths(&inputs, &cfg, a.repeats, limit)?;
        let ratio = timed[0].wall_ns as f64 / timed[1].wall_ns.max(1) as f64;
        println!(
            "L={len} ones_fraction={:.4} dense_ns={} sparse_ns={} speedup={ratio:.2}x",
            timed[0].ones_fraction, timed[0].wall_ns, timed[1].wall_ns
        );
        records.extend(timed);
    }
    if let Some(path) = &a.out {
        write_bytes(path, jsonl(&records).as_bytes())?;
    }
    Ok(Outcome::Ok)
}

fn filter(a: &FilterArgs) -> anyhow::Result<Outcome> {
    let file = fs::File::open(&a.scores).with_context(|| format!("reading {}", a.scores.display()))?;
    let records =
        read_scores(BufReader::new(file)).map_err(|(line, msg)| anyhow!("{}:{line}: {msg}", a.scores.display()))?;
    let policy = a.policy();
    let ranked = aggregate(&records)?;
    let outputs = ranked_outputs(ranked, policy)?;
    let kept = outputs.iter().filter(|o| o.kept).count();
    emit(a.out.as_deref(), jsonl(&outputs).as_bytes())?;
    eprintln!("kept {kept} of {} records", outputs.len());
    Ok(Outcome::Ok)
}

fn bench(a: &BenchArgs) -> anyhow::Result<Outcome> {
    let gt: Vec<GroundTruthRecord> = read_jsonl(&a.gt, a.image_size)?;
    let det: Vec<DetectionRecord> = read_jsonl(&a.det, a.image_size)?;
    let report = evaluate(&gt, &det)?;
    if let Some(path) = &a.out {
        write_bytes(path, pretty(&report).as_bytes())?;
    }
    print!("{}", render_table(&report, &a.method));
    Ok(Outcome::Ok)
}

fn bench_gen(a: &BenchGenArgs) -> anyhow::Result<Outcome> {
    let constraints = a.constraints();
    let records = generate_bench(a.single, a.multi, a.seed, &constraints)?;
    let problems = validate_bench(&records, &constraints);
    emit(a.out.as_deref(), jsonl(&records).as_bytes())?;
    if problems.is_empty() {
        Ok(Outcome::Ok)
    } else {
        for p in &problems {
            eprintln!("invalid scene: {p}");
        }
        Ok(Outcome::CheckFailed)
    }
}
