#![allow(dead_code)]

use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srt::collective::{rendezvous, WorkerGroup};
use srt::datagen::{build_dataset, Dataset, GenConfig};
use srt::harness::prepare_dataset;
use srt::model::{backward, forward_batch, init_params, ModelDims, ModelParams};
use srt::tensor::Tensor;

/// 16 cases x 64 timesteps x 256 cells, physical units with stored stats.
pub fn desk_raw() -> Dataset {
    let mut ds = build_dataset(&GenConfig::default()).unwrap();
    ds.norm = Some(srt::datagen::compute_norm(&ds).unwrap());
    ds
}

pub fn desk() -> Dataset {
    prepare_dataset(&desk_raw()).unwrap()
}

/// A small normalized dataset with 4 cells (F = 12).
pub fn tiny(cases: usize, timesteps: usize) -> Dataset {
    let ds = build_dataset(&GenConfig {
        cases,
        timesteps,
        cells: 4,
        ..Default::default()
    })
    .unwrap();
    prepare_dataset(&ds).unwrap()
}

pub fn small_dims(flat_dim: usize) -> ModelDims {
    ModelDims {
        flat_dim,
        window: 3,
        horizon: 1,
        encoder_units: 8,
        decoder_units: 8,
        head_units: 5,
    }
}

pub fn free_address() -> String {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string()
}

/// Runs `f` on every rank of a localhost ring formed by threads; results
/// come back in rank order.
pub fn on_ring<R: Send + 'static>(world: usize, f: impl Fn(WorkerGroup) -> R + Send + Sync + Clone + 'static) -> Vec<R> {
    let addr = free_address();
    let handles: Vec<_> = (0..world)
        .map(|rank| {
            let (addr, f) = (addr.clone(), f.clone());
            thread::spawn(move || f(rendezvous(world, &addr, rank, Duration::from_secs(30)).unwrap()))
        })
        .collect();
    handles.into_iter().map(|h| h.join().unwrap()).collect()
}

/// `<upstream, forward(params)>` for a fixed batch.
fn objective(params: &ModelParams<f64>, x: &Tensor<f64>, upstream: &Tensor<f64>) -> f64 {
    let (pred, _) = forward_batch(params, x).unwrap();
    pred.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative error of BPTT against central differences over every
/// parameter.
pub fn worst_relative_error(dims: ModelDims, seed: u64, batch: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut params = init_params::<f64>(dims, seed).unwrap();
    // non-zero biases so their gradients are exercised away from init
    for t in params.tensors_mut() {
        if t.rank() == 1 {
            for b in t.data_mut() {
                *b += rng.gen_range(-0.3..0.3);
            }
        }
    }
    let x = Tensor::from_fn(&[batch, dims.window, dims.flat_dim], |_| rng.gen_range(-1.5..1.5));
    let up = Tensor::from_fn(&[batch, dims.horizon, dims.flat_dim], |_| rng.gen_range(-1.0..1.0));
    let (_, cache) = forward_batch(&params, &x).unwrap();
    let analytic = backward(&params, &cache, &up).unwrap().flatten();

    let h = 1e-5;
    let base = params.flatten();
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for (i, &g) in analytic.iter().enumerate() {
        let mut v = base.clone();
        v[i] = base[i] + h;
        probe.load_flat(&v).unwrap();
        let plus = objective(&probe, &x, &up);
        v[i] = base[i] - h;
        probe.load_flat(&v).unwrap();
        let minus = objective(&probe, &x, &up);
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    params.load_flat(&base).unwrap();
    worst
}

