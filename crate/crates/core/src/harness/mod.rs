//! Training, evaluation and benchmark orchestration.

mod bench;
mod config;
mod eval;
mod launch;
mod train;

pub use bench::{
    bench_measured, bench_simulated, layout_delta_matrix, read_times, simulated_epoch_time, speedup_table,
    write_delta_csv, BenchRow, BenchTable, DeltaCell, Timing,
};
pub use config::{TrainConfig, KEYS as CONFIG_KEYS};
pub use eval::{evaluate, EvalRow, Evaluation, ModelPredictor, Predictor, TimestepGroup, DEFAULT_GROUPS};
pub use launch::{
    launch_workers, rank_checkpoint, run_worker, Launch, WorkerArgs, CHECKPOINT_FILE, CONFIG_FILE, LOG_FILE,
};
pub use train::{
    apply_averaged, local_gradient, prepare_dataset, sharded_reference_step, train_on_group, train_serial,
    train_step, validation_loss, EarlyStop, EpochRecord, StopReason, TrainOutcome, TrainingLog,
};
