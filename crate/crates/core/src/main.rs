use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use srt::collective::{Layout, LinkCost, LinkCostModel};
use srt::datagen::{build_dataset, compute_norm, read_dataset, write_dataset, GenConfig, Split};
use srt::harness::{
    bench_measured, bench_simulated, evaluate, launch_workers, layout_delta_matrix, read_times, run_worker,
    speedup_table, train_serial, write_delta_csv, Launch, ModelPredictor, Predictor, TimestepGroup, TrainConfig,
    WorkerArgs, CHECKPOINT_FILE, LOG_FILE,
};
use srt::model::checkpoint::{read_header, Checkpoint};
use srt::tensor::{Precision, Real};

#[derive(Parser)]
#[command(name = "srt", version, about = "Data-parallel training of a recurrent flow-field surrogate")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset file.
    Gen(GenArgs),
    /// Train serially or across local worker processes.
    Train(TrainArgs),
    /// Internal: one rank of a multi-process run.
    #[command(hide = true)]
    Worker(WorkerCli),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Time training across process layouts.
    Bench(BenchArgs),
    /// Turn a label,seconds CSV into a speedup table.
    Speedup(SpeedupArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    cases: usize,
    #[arg(long, default_value_t = 64)]
    timesteps: usize,
    #[arg(long, default_value_t = 256)]
    cells: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Training flags; each one overrides the config file.
#[derive(Args, Default)]
struct TrainFlags {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// NxS: nodes x slots per node.
    #[arg(long)]
    layout: Option<String>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
    /// Keep the sample order fixed across epochs.
    #[arg(long)]
    no_shuffle: bool,
    #[arg(long)]
    encoder_units: Option<usize>,
    #[arg(long)]
    decoder_units: Option<usize>,
    #[arg(long)]
    head_units: Option<usize>,
}

impl TrainFlags {
    fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => TrainConfig::default(),
        };
        let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| cfg.set(k, &v));
        set("dataset", self.dataset.as_ref().map(|p| p.display().to_string()))?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("patience", self.patience.map(|v| v.to_string()))?;
        set("batch", self.batch.map(|v| v.to_string()))?;
        set("lr", self.lr.map(|v| format!("{v:?}")))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("layout", self.layout.clone())?;
        set("precision", self.precision.clone())?;
        set("encoder_units", self.encoder_units.map(|v| v.to_string()))?;
        set("decoder_units", self.decoder_units.map(|v| v.to_string()))?;
        set("head_units", self.head_units.map(|v| v.to_string()))?;
        if self.no_shuffle {
            cfg.shuffle = false;
        }
        if self.patience.is_none() && cfg.patience > cfg.epochs {
            log::info!("patience {} capped at {} epochs", cfg.patience, cfg.epochs);
            cfg.patience = cfg.epochs;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Output directory for the checkpoint and log.
    #[arg(long)]
    out: PathBuf,
    /// Every rank also writes rankN.srt.
    #[arg(long)]
    save_all_ranks: bool,
}

#[derive(Args)]
struct WorkerCli {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    rank: usize,
    #[arg(long)]
    world: usize,
    #[arg(long)]
    addr: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    save_all_ranks: bool,
    /// Rendezvous timeout in seconds.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "report.csv")]
    report: PathBuf,
    #[arg(long, default_value = "scatter.csv")]
    scatter: PathBuf,
    #[arg(long, default_value_t = srt::metrics::DEFAULT_BINS)]
    bins: usize,
    /// Timestep groups: indexes or "last".
    #[arg(long, value_delimiter = ',', default_value = "10,20,last")]
    groups: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Measured,
    Simulated,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, value_enum, default_value = "simulated")]
    mode: Mode,
    /// Layouts in table order; the first is the baseline.
    #[arg(long, value_delimiter = ',', default_value = "1x1,1x2,2x1,1x4,2x2,4x1")]
    layouts: Vec<String>,
    /// Repetitions per layout in measured mode.
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
    #[arg(long, default_value = "delta.csv")]
    delta: PathBuf,
    /// Scratch directory for measured runs.
    #[arg(long, default_value = "bench-runs")]
    work_dir: PathBuf,
    /// Simulated seconds of forward+backward per sample.
    #[arg(long, default_value_t = 1e-3)]
    compute_per_sample: f64,
    #[arg(long, default_value_t = 5e-6)]
    intra_latency: f64,
    #[arg(long, default_value_t = 4e-11)]
    intra_per_byte: f64,
    #[arg(long, default_value_t = 2e-5)]
    inter_latency: f64,
    #[arg(long, default_value_t = 3.2e-10)]
    inter_per_byte: f64,
}

#[derive(Args)]
struct SpeedupArgs {
    /// CSV with columns label,seconds.
    #[arg(long)]
    times: PathBuf,
    /// Baseline label; defaults to the first row.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long, default_value = "speedup.csv")]
    out: PathBuf,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Cmd::Gen(a) => gen(a),
        Cmd::Train(a) => train(a),
        Cmd::Worker(a) => Ok(run_worker(&WorkerArgs {
            config: a.config,
            rank: a.rank,
            world: a.world,
            addr: a.addr,
            out: a.out,
            save_all_ranks: a.save_all_ranks,
            timeout: Duration::from_secs_f64(a.timeout),
        })?),
        Cmd::Eval(a) => eval(a),
        Cmd::Bench(a) => bench(a),
        Cmd::Speedup(a) => speedup(a),
    }
}

fn gen(a: GenArgs) -> anyhow::Result<()> {
    let mut ds = build_dataset(&GenConfig {
        cases: a.cases,
        timesteps: a.timesteps,
        cells: a.cells,
        seed: a.seed,
        ..Default::default()
    })?;
    ds.norm = Some(compute_norm(&ds)?);
    write_dataset(&ds, &a.out)?;
    let s = ds.split_counts();
    log::info!(
        "wrote {} ({} cases: {} train, {} validation, {} test)",
        a.out.display(),
        ds.cases.len(),
        s.train - s.validation,
        s.validation,
        s.test
    );
    Ok(())
}

fn save_serial<T: Real>(cfg: &TrainConfig, out: &Path, all: bool) -> anyhow::Result<()> {
    let ds = read_dataset(&cfg.dataset).with_context(|| format!("reading {}", cfg.dataset.display()))?;
    let outcome = train_serial::<T>(cfg, &ds)?;
    let ckpt = Checkpoint {
        params: outcome.params,
        optimizer: Some(outcome.optimizer),
    };
    ckpt.save(out.join(CHECKPOINT_FILE))?;
    if all {
        ckpt.save(srt::harness::rank_checkpoint(out, 0))?;
    }
    outcome.log.save(out.join(LOG_FILE))?;
    log::info!("stopped: {}", outcome.log.stop_reason);
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = a.flags.resolve()?;
    std::fs::create_dir_all(&a.out)?;
    if cfg.layout.world() == 1 {
        return match cfg.precision {
            Precision::Single => save_serial::<f32>(&cfg, &a.out, a.save_all_ranks),
            Precision::Double => save_serial::<f64>(&cfg, &a.out, a.save_all_ranks),
        };
    }
    let exe = std::env::current_exe()?;
    let log = launch_workers(&Launch {
        exe: &exe,
        config: &cfg,
        out: &a.out,
        save_all_ranks: a.save_all_ranks,
        timeout: srt::collective::DEFAULT_TIMEOUT,
    })?;
    log::info!("{} epochs, stopped: {}", log.epochs.len(), log.stop_reason);
    Ok(())
}

fn eval_with<T: Real>(a: &EvalArgs, bytes: &[u8], groups: &[TimestepGroup]) -> anyhow::Result<()> {
    let ckpt = Checkpoint::<T>::from_bytes(bytes)?;
    let raw = read_dataset(&a.dataset)?;
    let stats = match raw.norm {
        Some(s) => s,
        None => compute_norm(&raw)?,
    };
    let predictor = ModelPredictor { params: ckpt.params };
    let ev = evaluate(&predictor as &dyn Predictor, &raw, &stats, groups, a.bins)?;
    ev.save(&a.report, &a.scatter)?;
    for r in &ev.rows {
        println!(
            "{:<6} t={:<4} pearson {:.4} spearman {:.4} rmse {:.5} hist {:.1}%",
            r.group.to_string(),
            r.timestep,
            r.report.pearson,
            r.report.spearman,
            r.report.rmse,
            r.report.hist_r2
        );
    }
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let groups = a
        .groups
        .iter()
        .map(|g| g.parse())
        .collect::<srt::Result<Vec<TimestepGroup>>>()?;
    let bytes = std::fs::read(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    match read_header(&bytes)?.precision {
        Precision::Single => eval_with::<f32>(&a, &bytes, &groups),
        Precision::Double => eval_with::<f64>(&a, &bytes, &groups),
    }
}

fn bench(a: BenchArgs) -> anyhow::Result<()> {
    let cfg = a.flags.resolve()?;
    let layouts = a
        .layouts
        .iter()
        .map(|l| l.parse())
        .collect::<srt::Result<Vec<Layout>>>()?;
    let Some(first) = layouts.first() else {
        bail!("no layouts given");
    };
    let timings = match a.mode {
        Mode::Simulated => {
            let ds = read_dataset(&cfg.dataset)?;
            let fit = ds.split(Split::Train).len();
            let per_case = srt::batching::samples_per_case(ds.timesteps(), cfg.window, cfg.horizon);
            let width = match cfg.precision {
                Precision::Single => 4,
                Precision::Double => 8,
            };
            let bytes = (cfg.dims(ds.cells()).param_count() as u64 + 1) * width;
            let model = LinkCostModel::new(
                LinkCost {
                    latency: a.intra_latency,
                    per_byte: a.intra_per_byte,
                },
                LinkCost {
                    latency: a.inter_latency,
                    per_byte: a.inter_per_byte,
                },
                a.compute_per_sample,
            )?;
            bench_simulated(&layouts, fit * per_case, cfg.batch, bytes, &model)
        }
        Mode::Measured => {
            let exe = std::env::current_exe()?;
            bench_measured(&exe, &cfg, &layouts, a.runs, &a.work_dir)?
        }
    };
    let table = speedup_table(&timings, &first.to_string())?;
    table.save(&a.out)?;
    print!("{}", table.render());

    let by_layout: BTreeMap<Layout, f64> = layouts.iter().copied().zip(timings.iter().map(|t| t.seconds)).collect();
    let paired: BTreeMap<Layout, f64> = by_layout
        .iter()
        .filter(|(l, _)| by_layout.contains_key(&l.transpose()))
        .map(|(l, t)| (*l, *t))
        .collect();
    let cells = layout_delta_matrix(&paired)?;
    write_delta_csv(&cells, std::fs::File::create(&a.delta)?)?;
    for c in &cells {
        println!("{} vs {}: {:+.2}%", c.layout, c.partner, c.percent);
    }
    Ok(())
}

fn speedup(a: SpeedupArgs) -> anyhow::Result<()> {
    let times = read_times(&a.times)?;
    let Some(first) = times.first() else {
        bail!("{} has no rows", a.times.display());
    };
    let baseline = a.baseline.clone().unwrap_or_else(|| first.label.clone());
    let table = speedup_table(&times, &baseline)?;
    table.save(&a.out)?;
    print!("{}", table.render());
    Ok(())
}
