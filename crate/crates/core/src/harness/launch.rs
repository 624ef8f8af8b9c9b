//! Multi-process runs: the launcher spawns `P` copies of the executable in
//! `worker` mode and waits for them; each worker joins the ring and trains.

use std::fs::File;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::Duration;

use crate::collective::rendezvous;
use crate::datagen::read_dataset;
use crate::error::{Error, Result};
use crate::harness::{prepare_dataset, train_on_group, TrainConfig, TrainingLog};
use crate::model::checkpoint::Checkpoint;
use crate::tensor::{Precision, Real};

pub const CHECKPOINT_FILE: &str = "checkpoint.srt";
pub const LOG_FILE: &str = "log.csv";
pub const CONFIG_FILE: &str = "train.conf";

pub fn rank_checkpoint(out: &Path, rank: usize) -> PathBuf {
    out.join(format!("rank{rank}.srt"))
}

#[derive(Debug, Clone)]
pub struct WorkerArgs {
    pub config: PathBuf,
    pub rank: usize,
    pub world: usize,
    pub addr: String,
    pub out: PathBuf,
    /// Every rank writes its own checkpoint, not just rank 0.
    pub save_all_ranks: bool,
    pub timeout: Duration,
}

/// Body of the `worker` subcommand.
pub fn run_worker(args: &WorkerArgs) -> Result<()> {
    let cfg = TrainConfig::from_file(&args.config)?;
    let ds = prepare_dataset(&read_dataset(&cfg.dataset)?)?;
    let mut group = rendezvous(args.world, &args.addr, args.rank, args.timeout)?;
    match cfg.precision {
        Precision::Single => finish::<f32>(args, &cfg, &ds, &mut group),
        Precision::Double => finish::<f64>(args, &cfg, &ds, &mut group),
    }
}

fn finish<T: Real>(
    args: &WorkerArgs,
    cfg: &TrainConfig,
    ds: &crate::datagen::Dataset,
    group: &mut crate::collective::WorkerGroup,
) -> Result<()> {
    let outcome = train_on_group::<T>(cfg, ds, group)?;
    let ckpt = Checkpoint {
        params: outcome.params,
        optimizer: Some(outcome.optimizer),
    };
    if args.rank == 0 {
        ckpt.save(args.out.join(CHECKPOINT_FILE))?;
        outcome.log.save(args.out.join(LOG_FILE))?;
    }
    if args.save_all_ranks {
        ckpt.save(rank_checkpoint(&args.out, args.rank))?;
    }
    // nobody leaves before every rank has written its files
    group.barrier()
}

#[derive(Debug, Clone)]
pub struct Launch<'a> {
    pub exe: &'a Path,
    pub config: &'a TrainConfig,
    pub out: &'a Path,
    pub save_all_ranks: bool,
    pub timeout: Duration,
}

fn free_local_address() -> Result<String> {
    let l = TcpListener::bind("127.0.0.1:0")?;
    Ok(l.local_addr()?.to_string())
}

fn stderr_tail(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap_or_default();
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(5)..].join(" | ")
}

/// Spawns one worker per rank of `config.layout`, waits for all of them and
/// returns rank 0's training log.
pub fn launch_workers(l: &Launch) -> Result<TrainingLog> {
    std::fs::create_dir_all(l.out)?;
    let conf = l.out.join(CONFIG_FILE);
    std::fs::write(&conf, l.config.to_text())?;
    let world = l.config.layout.world();
    let addr = free_local_address()?;
    let mut children: Vec<Option<Child>> = Vec::with_capacity(world);
    for rank in 0..world {
        let err = File::create(l.out.join(format!("rank{rank}.err")))?;
        let mut cmd = Command::new(l.exe);
        cmd.arg("worker")
            .arg("--config")
            .arg(&conf)
            .args(["--rank", &rank.to_string(), "--world", &world.to_string(), "--addr", &addr])
            .arg("--out")
            .arg(l.out)
            .args(["--timeout", &l.timeout.as_secs_f64().to_string()])
            .stdout(Stdio::null())
            .stderr(err);
        if l.save_all_ranks {
            cmd.arg("--save-all-ranks");
        }
        let child = cmd.spawn().map_err(|e| Error::Worker {
            rank,
            msg: format!("spawn failed: {e}"),
        })?;
        children.push(Some(child));
    }

    let mut failure: Option<(usize, String)> = None;
    while children.iter().any(Option::is_some) {
        for (rank, slot) in children.iter_mut().enumerate() {
            let Some(child) = slot else { continue };
            if let Some(status) = child.try_wait()? {
                *slot = None;
                if !status.success() && failure.is_none() {
                    let tail = stderr_tail(&l.out.join(format!("rank{rank}.err")));
                    failure = Some((rank, format!("{status}: {tail}")));
                }
            }
        }
        if failure.is_some() {
            // peers notice the broken ring on their own; give them a moment
            thread::sleep(Duration::from_millis(500));
            for child in children.iter_mut().flatten() {
                let _ = child.kill();
                let _ = child.wait();
            }
            break;
        }
        thread::sleep(Duration::from_millis(10));
    }
    if let Some((rank, msg)) = failure {
        return Err(Error::Worker { rank, msg });
    }
    TrainingLog::load(l.out.join(LOG_FILE))
}
