//! Synchronous data-parallel training loop, shared by serial runs (a group
//! of one) and every worker of a multi-process run.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::batching::{Generator, GeneratorConfig, MiniBatch};
use crate::collective::{reference_mean, WorkerGroup};
use crate::datagen::{apply_norm, compute_norm, CaseSeries, Dataset, Split};
use crate::error::{Error, Result};
use crate::harness::TrainConfig;
use crate::model::{backward, forward_batch, init_params, ModelParams};
use crate::optim::{adam_step, mae_loss, AdamConfig, AdamState};
use crate::tensor::Real;

/// Validation samples per forward pass.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpochs => "max-epochs",
            StopReason::EarlyStop => "early-stop",
        })
    }
}

impl FromStr for StopReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-epochs" => Ok(StopReason::MaxEpochs),
            "early-stop" => Ok(StopReason::EarlyStop),
            other => Err(Error::InvalidArgument(format!("unknown stop reason {other:?}"))),
        }
    }
}

/// Stops once `patience` consecutive epochs fail to beat the best
/// validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    wait: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            wait: 0,
        }
    }

    /// Records the validation loss of 0-based `epoch`; true means stop now.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        self.wait >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Time spent in training steps only.
    pub train_seconds: f64,
    /// Training plus validation.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
}

impl TrainingLog {
    pub fn train_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.train_seconds).sum()
    }

    /// Columns: epoch, train_loss, val_loss, train_seconds, wall_seconds,
    /// stop_reason (last row only).
    pub fn write_csv(&self, w: impl io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "val_loss", "train_seconds", "wall_seconds", "stop_reason"])?;
        for (i, e) in self.epochs.iter().enumerate() {
            let reason = if i + 1 == self.epochs.len() {
                self.stop_reason.to_string()
            } else {
                String::new()
            };
            out.write_record([
                e.epoch.to_string(),
                format!("{:?}", e.train_loss),
                format!("{:?}", e.val_loss),
                format!("{:?}", e.train_seconds),
                format!("{:?}", e.wall_seconds),
                reason,
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut epochs = Vec::new();
        let mut stop_reason = None;
        for row in rdr.records() {
            let row = row?;
            let field = |i: usize| row.get(i).unwrap_or("");
            let num = |i: usize| {
                field(i)
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad log field {:?}", field(i))))
            };
            epochs.push(EpochRecord {
                epoch: num(0)? as usize,
                train_loss: num(1)?,
                val_loss: num(2)?,
                train_seconds: num(3)?,
                wall_seconds: num(4)?,
            });
            if !field(5).is_empty() {
                stop_reason = Some(field(5).parse()?);
            }
        }
        let stop_reason = stop_reason.ok_or_else(|| Error::InvalidArgument("log has no stop reason".into()))?;
        Ok(TrainingLog { epochs, stop_reason })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub optimizer: AdamState<T>,
    pub log: TrainingLog,
}

/// Normalized copy of `ds`, using its stored statistics when present.
pub fn prepare_dataset(ds: &Dataset) -> Result<Dataset> {
    let stats = match ds.norm {
        Some(s) => s,
        None => compute_norm(ds)?,
    };
    Ok(apply_norm(ds, &stats))
}

/// Local gradient of the batch MAE, flattened, with the loss appended.
pub fn local_gradient<T: Real>(params: &ModelParams<T>, batch: &MiniBatch<T>) -> Result<Vec<T>> {
    let (pred, cache) = forward_batch(params, &batch.observations)?;
    let (loss, d_pred) = mae_loss(&pred, &batch.targets)?;
    let grads = backward(params, &cache, &d_pred)?;
    let mut flat = grads.flatten();
    flat.push(T::of(loss));
    Ok(flat)
}

/// Applies an averaged gradient buffer from [`local_gradient`]; returns the
/// averaged loss.
pub fn apply_averaged<T: Real>(
    params: &mut ModelParams<T>,
    optimizer: &mut AdamState<T>,
    mut flat: Vec<T>,
    epoch: usize,
    step: usize,
) -> Result<f64> {
    let loss = flat.pop().map(|l| l.as_f64()).unwrap_or(f64::NAN);
    if !loss.is_finite() || flat.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { epoch, step });
    }
    let mut grads = ModelParams::zeros(params.dims);
    grads.load_flat(&flat)?;
    adam_step(params, &grads, optimizer)?;
    Ok(loss)
}

/// One synchronous step: local gradient, ring mean, identical Adam update.
pub fn train_step<T: Real>(
    params: &mut ModelParams<T>,
    optimizer: &mut AdamState<T>,
    group: &mut WorkerGroup,
    batch: &MiniBatch<T>,
    epoch: usize,
    step: usize,
) -> Result<f64> {
    let mut flat = local_gradient(params, batch)?;
    group.allreduce_mean(&mut flat)?;
    apply_averaged(params, optimizer, flat, epoch, step)
}

/// Single-process replay of one distributed step over `shards` (one batch
/// per rank), combining gradients in the ring's summation order.
pub fn sharded_reference_step<T: Real>(
    params: &mut ModelParams<T>,
    optimizer: &mut AdamState<T>,
    shards: &[MiniBatch<T>],
) -> Result<f64> {
    let bufs = shards
        .iter()
        .map(|b| local_gradient(params, b))
        .collect::<Result<Vec<_>>>()?;
    let mean = reference_mean(&bufs)?;
    apply_averaged(params, optimizer, mean, 0, 0)
}

/// Mean absolute error over every window of `cases`.
pub fn validation_loss<T: Real>(params: &ModelParams<T>, cases: &[CaseSeries]) -> Result<f64> {
    let d = params.dims;
    let gen = Generator::new(
        cases,
        GeneratorConfig {
            batch: 1,
            window: d.window,
            horizon: d.horizon,
            shuffle: false,
            ..Default::default()
        },
    )?;
    let n = gen.num_samples();
    let mut total = 0.0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let ids: Vec<usize> = (start..n.min(start + EVAL_CHUNK)).collect();
        let mb = gen.materialize::<T>(&ids)?;
        let (pred, _) = forward_batch(params, &mb.observations)?;
        let (mae, _) = mae_loss(&pred, &mb.targets)?;
        total += mae * ids.len() as f64;
    }
    Ok(total / n as f64)
}

/// Runs the full training loop on this rank. `ds` must be normalized.
pub fn train_on_group<T: Real>(cfg: &TrainConfig, ds: &Dataset, group: &mut WorkerGroup) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if cfg.layout.world() != group.world() {
        return Err(Error::InvalidArgument(format!(
            "layout {} has {} ranks but the group has {}",
            cfg.layout,
            cfg.layout.world(),
            group.world()
        )));
    }
    let dims = cfg.dims(ds.cells());
    let mut params = init_params::<T>(dims, cfg.seed)?;
    let mut optimizer = AdamState::new(
        &params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let fit = ds.split(Split::Train);
    let val = ds.split(Split::Validation);
    if val.is_empty() {
        return Err(Error::UnsupportedDataset("validation split is empty".into()));
    }
    let mut gen = Generator::new(
        fit,
        GeneratorConfig {
            batch: cfg.batch,
            window: cfg.window,
            horizon: cfg.horizon,
            seed: cfg.seed,
            rank: group.rank(),
            world: group.world(),
            shuffle: cfg.shuffle,
        },
    )?;
    let steps = gen.batches_per_epoch();
    if steps == 0 {
        return Err(Error::UnsupportedDataset(format!(
            "{} samples cannot fill one global batch of {}",
            gen.num_samples(),
            cfg.batch * group.world()
        )));
    }
    group.barrier()?;

    let mut stop = EarlyStop::new(cfg.patience);
    let mut log = TrainingLog {
        epochs: Vec::new(),
        stop_reason: StopReason::MaxEpochs,
    };
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        for step in 0..steps {
            let batch = gen.get_item::<T>(step)?;
            loss_sum += train_step(&mut params, &mut optimizer, group, &batch, epoch, step)?;
        }
        let train_seconds = started.elapsed().as_secs_f64();
        gen.on_epoch_end();
        let val_loss = validation_loss(&params, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, step: steps });
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / steps as f64,
            val_loss,
            train_seconds,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        if group.rank() == 0 {
            log::info!(
                "epoch {}: train {:.6} val {:.6} ({:.2}s)",
                record.epoch,
                record.train_loss,
                record.val_loss,
                record.train_seconds
            );
        }
        log.epochs.push(record);
        if stop.observe(epoch, val_loss) {
            log.stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    Ok(TrainOutcome { params, optimizer, log })
}

/// Serial training: a group of one.
pub fn train_serial<T: Real>(cfg: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome<T>> {
    if cfg.layout.world() != 1 {
        return Err(Error::InvalidArgument(format!(
            "serial training needs a 1x1 layout, got {}",
            cfg.layout
        )));
    }
    train_on_group(cfg, &prepare_dataset(ds)?, &mut WorkerGroup::solo())
}
