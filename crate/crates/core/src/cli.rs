//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::bench::{self, BenchGrid, RunMetrics};
use crate::ccd::{cross_entropy, DistillReport, Session};
use crate::config::{RunConfig, Task};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::mempot::PotConfig;
use crate::minimodel::{Model, ModelConfig};
use crate::oracle::{analyse, global_scoring, retention_histogram, sign_test, Analysis, LayerChoice, SignTest};
use crate::policies::{PolicyKind, PolicySpec};
use crate::tokenizer::{ByteTokenizer, VOCAB_SIZE};

#[derive(Debug, Parser)]
#[command(name = "potkv", version, about = "Memory-bounded KV cache engine with continual distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write seeded random weights in MPKV1 format.
    GenWeights(GenWeightsArgs),
    /// Execute the task named in a run config.
    Run(RunArgs),
    /// Hit-rate analysis against the global-scoring oracle.
    Hitrate(RunArgs),
    /// Passkey retrieval grid.
    Nih(RunArgs),
    /// Consume the configured stream and dump the final pot.
    SnapshotPot(SnapshotArgs),
}

#[derive(Debug, Args)]
pub struct GenWeightsArgs {
    /// Model config JSON; overrides the shape flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 128)]
    pub d_model: usize,
    #[arg(long, default_value_t = VOCAB_SIZE)]
    pub vocab: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub config: PathBuf,
    /// Validate the config and exit.
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Override the config's task (`run` only).
    #[arg(long)]
    pub task: Option<String>,
    /// Replace the config's seeds; repeatable.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Replace the config's policy kind.
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Args)]
pub struct SnapshotArgs {
    pub config: PathBuf,
    /// Defaults to `<output_dir>/pot_snapshot.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parse `args`, run, and return the process exit code: 0 on success, 2 for
/// usage errors (including a missing config file), 1 for anything else.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(path) = config_path(&cli.command).filter(|p| !p.is_file()) {
        eprintln!("error: config file '{}' does not exist", path.display());
        return 2;
    }
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return 2;
    }
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn config_path(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::GenWeights(a) => a.config.as_deref(),
        Command::Run(a) | Command::Hitrate(a) | Command::Nih(a) => Some(&a.config),
        Command::SnapshotPot(a) => Some(&a.config),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("POTKV_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config("POTKV_THREADS", format!("expected a positive integer, got '{raw}'")))?;
    // A pool may already exist when called twice in one process; keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenWeights(a) => gen_weights(a),
        Command::Run(a) => run_task(a, None),
        Command::Hitrate(a) => run_task(a, Some(Task::Hitrate)),
        Command::Nih(a) => run_task(a, Some(Task::Nih)),
        Command::SnapshotPot(a) => snapshot_pot(a),
    }
}

fn gen_weights(a: &GenWeightsArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<ModelConfig>(&text)?
        }
        None => ModelConfig::new(a.layers, a.heads, a.d_model, a.vocab, 0),
    };
    if let Some(seed) = a.seed {
        cfg.init_seed = seed;
    }
    let model = Model::init(cfg)?;
    model.save(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn load_config(a: &RunArgs, forced: Option<Task>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(t) = forced {
        cfg.task = t;
    } else if let Some(t) = &a.task {
        cfg.task = Task::parse(t)?;
    }
    if let Some(dir) = &a.output_dir {
        cfg.io.output_dir = dir.clone();
    }
    if !a.seeds.is_empty() {
        cfg.seeds = a.seeds.clone();
    }
    if let Some(p) = &a.policy {
        cfg.policy.kind = PolicyKind::parse(p)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_task(a: &RunArgs, forced: Option<Task>) -> Result<()> {
    let cfg = load_config(a, forced)?;
    if a.dry_run {
        println!("config ok: task {:?}, {} seed(s)", cfg.task, cfg.seeds.len());
        return Ok(());
    }
    let model = cfg.model.load()?;
    let metrics = match cfg.task {
        Task::Nih => task_nih(&model, &cfg)?,
        Task::Hitrate => task_hitrate(&model, &cfg)?,
        Task::Consume => task_stream(&model, &cfg, false)?,
        Task::Generate => task_stream(&model, &cfg, true)?,
    };
    write_metrics(&cfg.io.output_dir, &metrics)?;
    println!("{} record(s) written to {}", metrics.len(), cfg.io.output_dir.display());
    Ok(())
}

fn write_metrics(dir: &Path, metrics: &[RunMetrics]) -> Result<()> {
    write_atomic(&dir.join("metrics.jsonl"), bench::metrics_jsonl(metrics)?.as_bytes())?;
    write_atomic(&dir.join("metrics.csv"), bench::metrics_csv(metrics)?.as_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn session_for<'m>(model: &'m Model, pot: &PotConfig, spec: &PolicySpec, seed: u64) -> Result<Session<'m>> {
    let spec = spec.clone().with_seed(spec.seed.wrapping_add(seed));
    Session::new(model, pot.clone(), spec.build(pot)?)
}

struct StreamRun {
    metrics: RunMetrics,
    reports: Vec<DistillReport>,
    generated: Option<String>,
}

/// Mean next-token cross-entropy over the stream; the first token is not scored.
fn consume_scored(session: &mut Session<'_>, stream: &[u32]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    session.consume_with(stream, |i, row| {
        if let (Some(&next), Some(row)) = (stream.get(i + 1), row.as_slice()) {
            total += cross_entropy(row, next);
            count += 1;
        }
    })?;
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

fn task_stream(model: &Model, cfg: &RunConfig, generate: bool) -> Result<Vec<RunMetrics>> {
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<StreamRun> {
            let start = Instant::now();
            let stream = cfg.stream(seed, model.config.vocab_size)?;
            let mut session = session_for(model, &cfg.pot, &cfg.policy, seed)?;
            let score = consume_scored(&mut session, &stream)?;
            let generated = if generate {
                Some(ByteTokenizer.decode(&session.generate(cfg.generate.max_new)?))
            } else {
                None
            };
            bench::check_bounds(session.pot())?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            Ok(StreamRun {
                metrics: RunMetrics::from_pot(session.policy_id(), session.pot(), 0.0, seed, score, ms),
                reports: session.reports().to_vec(),
                generated,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = &cfg.io.output_dir;
    for r in &runs {
        let seed = r.metrics.seed;
        write_atomic(
            &dir.join(format!("distill_seed{seed}.jsonl")),
            DistillReport::to_jsonl(&r.reports)?.as_bytes(),
        )?;
        if let Some(text) = &r.generated {
            write_atomic(&dir.join(format!("generated_seed{seed}.txt")), text.as_bytes())?;
        }
    }
    Ok(runs.into_iter().map(|r| r.metrics).collect())
}

#[derive(Serialize)]
struct NihRecord<'a> {
    policy: &'a str,
    #[serde(rename = "L")]
    context_len: usize,
    depth: f64,
    seed: u64,
    needle_retained: bool,
    output: &'a str,
}

fn task_nih(model: &Model, cfg: &RunConfig) -> Result<Vec<RunMetrics>> {
    let grid = BenchGrid {
        policies: cfg.nih_policies(),
        lengths: cfg.nih.lengths.clone(),
        depths: cfg.nih.depths.clone(),
        seeds: cfg.seeds.clone(),
        query_text: cfg.nih.query_text.clone(),
    };
    let outcomes = bench::run_grid(model, &cfg.pot, &grid)?;
    let mut lines = String::new();
    for o in &outcomes {
        let m = &o.metrics;
        lines.push_str(&serde_json::to_string(&NihRecord {
            policy: &m.policy,
            context_len: m.context_len,
            depth: m.depth,
            seed: m.seed,
            needle_retained: o.needle_retained,
            output: &o.output,
        })?);
        lines.push('\n');
    }
    write_atomic(&cfg.io.output_dir.join("nih_outputs.jsonl"), lines.as_bytes())?;
    Ok(outcomes.into_iter().map(|o| o.metrics).collect())
}

#[derive(Debug, Serialize)]
pub struct HitrateRun {
    pub policy: String,
    pub seed: u64,
    pub analysis: Analysis,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub baseline: String,
    pub comparator: String,
    pub mean_hit_baseline: f64,
    pub mean_hit_comparator: f64,
    /// Baseline-over-comparator sign test.
    pub sign_test: SignTest,
}

#[derive(Debug, Serialize)]
pub struct HitrateReport {
    pub k: usize,
    pub layer: LayerChoice,
    pub runs: Vec<HitrateRun>,
    pub comparisons: Vec<Comparison>,
    /// Per policy, `[head][position]` retention counts over the first seed's cycles.
    pub histograms: BTreeMap<String, Vec<Vec<u32>>>,
}

type SeedRun = (HitrateRun, RunMetrics, Vec<Vec<u32>>);

/// Run the configured policy and every comparator on one stream per seed and
/// compare each against the global oracle.
pub fn hitrate_report(model: &Model, cfg: &RunConfig) -> Result<(HitrateReport, Vec<RunMetrics>)> {
    let k = cfg.hitrate.k.unwrap_or(cfg.pot.compressed_size);
    let layer = cfg.hitrate.layer;
    let query = ByteTokenizer.encode(&cfg.hitrate.query_text);
    let policies: Vec<PolicySpec> = std::iter::once(cfg.policy.clone())
        .chain(cfg.hitrate.comparators.iter().cloned())
        .collect();
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<SeedRun>> {
            let context = cfg.stream(seed, model.config.vocab_size)?;
            let oracle = global_scoring(model, &context, &query)?;
            policies
                .iter()
                .map(|spec| {
                    let start = Instant::now();
                    let mut s = session_for(model, &cfg.pot, spec, seed)?;
                    s.consume_with(&context, |_, _| {})?;
                    bench::check_bounds(s.pot())?;
                    let analysis = analyse(&oracle, s.pot(), s.reports(), k, layer)?;
                    let ms = start.elapsed().as_secs_f64() * 1e3;
                    let metrics = RunMetrics::from_pot(s.policy_id(), s.pot(), 0.0, seed, analysis.hit_rate, ms);
                    let hist = retention_histogram(s.reports(), context.len());
                    Ok((
                        HitrateRun {
                            policy: s.policy_id().to_owned(),
                            seed,
                            analysis,
                        },
                        metrics,
                        hist,
                    ))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut histograms = BTreeMap::new();
    if let Some(first) = per_seed.first() {
        for (run, _, hist) in first {
            histograms.entry(run.policy.clone()).or_insert_with(|| hist.clone());
        }
    }
    let hits = |p: usize| -> Vec<f64> { per_seed.iter().map(|s| s[p].0.analysis.hit_rate).collect() };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let base = hits(0);
    let mut comparisons = Vec::new();
    for p in 1..policies.len() {
        let other = hits(p);
        comparisons.push(Comparison {
            baseline: per_seed[0][0].0.policy.clone(),
            comparator: per_seed[0][p].0.policy.clone(),
            mean_hit_baseline: mean(&base),
            mean_hit_comparator: mean(&other),
            sign_test: sign_test(&base, &other)?,
        });
    }
    let mut runs = Vec::new();
    let mut metrics = Vec::new();
    for seed_runs in per_seed {
        for (run, m, _) in seed_runs {
            runs.push(run);
            metrics.push(m);
        }
    }
    Ok((
        HitrateReport {
            k,
            layer,
            runs,
            comparisons,
            histograms,
        },
        metrics,
    ))
}

fn task_hitrate(model: &Model, cfg: &RunConfig) -> Result<Vec<RunMetrics>> {
    let (report, metrics) = hitrate_report(model, cfg)?;
    write_json(&cfg.io.output_dir.join("analysis.json"), &report)?;
    for c in &report.comparisons {
        println!(
            "{} vs {}: mean hit {:.4} vs {:.4}, sign test {}-{} (p = {:.3e})",
            c.baseline,
            c.comparator,
            c.mean_hit_baseline,
            c.mean_hit_comparator,
            c.sign_test.wins,
            c.sign_test.losses,
            c.sign_test.p_value
        );
    }
    Ok(metrics)
}

fn snapshot_pot(a: &SnapshotArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let model = cfg.model.load()?;
    let stream = cfg.stream(seed, model.config.vocab_size)?;
    let mut session = session_for(&model, &cfg.pot, &cfg.policy, seed)?;
    session.consume_with(&stream, |_, _| {})?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.io.output_dir.join("pot_snapshot.json"));
    write_json(&out, &session.pot().snapshot())?;
    println!("wrote {}", out.display());
    Ok(())
}
