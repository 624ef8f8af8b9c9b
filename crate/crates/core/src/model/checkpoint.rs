//! Checkpoint file: model parameters plus (optionally) Adam state.
//!
//! ```text
//! "SRTCKPT1"
//! u64 x 8   flat_dim, window, horizon, encoder, decoder, head, precision, tensor_count
//! per tensor:
//!   u64 name_len, name (UTF-8)
//!   u64 rank, u64 x rank extents
//!   payload, f32 or f64 little-endian per the precision flag
//! ```
//!
//! Optimizer tensors are named `adam.m.<param>`, `adam.v.<param>`,
//! `adam.step` (one element) and `adam.config` (lr, beta1, beta2, epsilon).

use std::path::Path;

use crate::bytes::{put_u64, Reader};
use crate::error::{Error, Result};
use crate::model::{expected_shapes, ModelDims, ModelParams, TENSOR_NAMES};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{Precision, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"SRTCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub optimizer: Option<AdamState<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&self.params, self.optimizer.as_ref())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        decode(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        decode(&std::fs::read(path)?)
    }
}

fn put_tensor<T: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_u64(out, name.len() as u64);
    out.extend_from_slice(name.as_bytes());
    put_u64(out, t.rank() as u64);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for &x in t.data() {
        x.write_le(out);
    }
}

pub fn encode<T: Real>(params: &ModelParams<T>, optimizer: Option<&AdamState<T>>) -> Vec<u8> {
    let d = params.dims;
    let count = if optimizer.is_some() { 3 * TENSOR_NAMES.len() + 2 } else { TENSOR_NAMES.len() };
    let mut out = Vec::with_capacity(64 + params.num_params() * T::BYTES * if optimizer.is_some() { 3 } else { 1 });
    out.extend_from_slice(MAGIC);
    for v in [
        d.flat_dim,
        d.window,
        d.horizon,
        d.encoder_units,
        d.decoder_units,
        d.head_units,
    ] {
        put_u64(&mut out, v as u64);
    }
    put_u64(&mut out, T::PRECISION_FLAG);
    put_u64(&mut out, count as u64);
    for (name, t) in TENSOR_NAMES.iter().zip(params.tensors()) {
        put_tensor(&mut out, name, t);
    }
    if let Some(s) = optimizer {
        for (name, t) in TENSOR_NAMES.iter().zip(s.m.tensors()) {
            put_tensor(&mut out, &format!("adam.m.{name}"), t);
        }
        for (name, t) in TENSOR_NAMES.iter().zip(s.v.tensors()) {
            put_tensor(&mut out, &format!("adam.v.{name}"), t);
        }
        let step = Tensor::new(vec![1], vec![T::of(s.step as f64)]).expect("one element");
        put_tensor(&mut out, "adam.step", &step);
        let c = s.config;
        let cfg = Tensor::new(vec![4], [c.lr, c.beta1, c.beta2, c.epsilon].map(T::of).to_vec())
            .expect("four elements");
        put_tensor(&mut out, "adam.config", &cfg);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub dims: ModelDims,
    pub precision: Precision,
    pub tensor_count: usize,
}

pub fn read_header(bytes: &[u8]) -> Result<Header> {
    let mut r = Reader::new(bytes);
    header(&mut r)
}

fn header(r: &mut Reader<'_>) -> Result<Header> {
    r.magic(MAGIC)?;
    let mut v = [0usize; 6];
    for (slot, what) in v
        .iter_mut()
        .zip(["flat_dim", "window", "horizon", "encoder_units", "decoder_units", "head_units"])
    {
        *slot = r.count(what)?;
    }
    let dims = ModelDims {
        flat_dim: v[0],
        window: v[1],
        horizon: v[2],
        encoder_units: v[3],
        decoder_units: v[4],
        head_units: v[5],
    };
    dims.validate().map_err(|e| Error::format(8, e.to_string()))?;
    let at = r.offset();
    let flag = r.u64("precision flag")?;
    let precision =
        Precision::from_flag(flag).ok_or_else(|| Error::format(at, format!("unknown precision flag {flag}")))?;
    let tensor_count = r.count("tensor count")?;
    Ok(Header {
        dims,
        precision,
        tensor_count,
    })
}

fn get_tensor<T: Real>(r: &mut Reader<'_>, expect_name: &str, expect_shape: &[usize]) -> Result<Tensor<T>> {
    let at = r.offset();
    let len = r.count("name length")?;
    let name = std::str::from_utf8(r.take(len, "tensor name")?)
        .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?;
    if name != expect_name {
        return Err(Error::format(at, format!("expected tensor {expect_name:?}, found {name:?}")));
    }
    let at = r.offset();
    let rank = r.count("rank")?;
    if rank != expect_shape.len() {
        return Err(Error::format(at, format!("{name}: rank {rank}, expected {}", expect_shape.len())));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.count("extent")?);
    }
    if shape != expect_shape {
        return Err(Error::format(at, format!("{name}: shape {shape:?}, expected {expect_shape:?}")));
    }
    let data = r.reals::<T>(shape.iter().product(), name)?;
    Tensor::new(shape, data).map_err(|e| Error::format(at, e.to_string()))
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader::new(bytes);
    let h = header(&mut r)?;
    if h.precision.flag() != T::PRECISION_FLAG {
        return Err(Error::format(
            56,
            format!("checkpoint precision {:?} does not match the requested type", h.precision),
        ));
    }
    let n = TENSOR_NAMES.len();
    if h.tensor_count != n && h.tensor_count != 3 * n + 2 {
        return Err(Error::format(64, format!("unexpected tensor count {}", h.tensor_count)));
    }
    let shapes = expected_shapes(&h.dims);
    let mut params = ModelParams::<T>::zeros(h.dims);
    for ((name, t), shape) in TENSOR_NAMES.iter().zip(params.tensors_mut()).zip(&shapes) {
        *t = get_tensor(&mut r, name, shape)?;
    }
    let optimizer = if h.tensor_count > n {
        let mut m = ModelParams::<T>::zeros(h.dims);
        for ((name, t), shape) in TENSOR_NAMES.iter().zip(m.tensors_mut()).zip(&shapes) {
            *t = get_tensor(&mut r, &format!("adam.m.{name}"), shape)?;
        }
        let mut v = ModelParams::<T>::zeros(h.dims);
        for ((name, t), shape) in TENSOR_NAMES.iter().zip(v.tensors_mut()).zip(&shapes) {
            *t = get_tensor(&mut r, &format!("adam.v.{name}"), shape)?;
        }
        let step = get_tensor::<T>(&mut r, "adam.step", &[1])?.data()[0].as_f64() as u64;
        let c = get_tensor::<T>(&mut r, "adam.config", &[4])?;
        let c: Vec<f64> = c.data().iter().map(|x| x.as_f64()).collect();
        Some(AdamState {
            config: AdamConfig {
                lr: c[0],
                beta1: c[1],
                beta2: c[2],
                epsilon: c[3],
            },
            m,
            v,
            step,
        })
    } else {
        None
    };
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint { params, optimizer })
}
