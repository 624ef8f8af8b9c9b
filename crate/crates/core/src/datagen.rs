//! Synthetic flow series, dataset splits, normalization, and the dataset file.
//!
//! Each case is a per-cell velocity field that relaxes from a transient
//! towards a steady state determined by two inflow rates `(q1, q2)`:
//!
//! ```text
//! field[t] = S(cell; q1, q2) + A(cell) * exp(-t / tau) + noise,   tau = T / 5
//! ```
//!
//! Dataset file layout (all little-endian):
//!
//! ```text
//! "SRTDATA1", u32 version
//! u64 cases, u64 timesteps, u64 cells, u64 components
//! per case: f32 q1, f32 q2
//! f32 field data, [case][timestep][cell][component]
//! optional: 6 x f32 normalization trailer (mean, std per component)
//! ```
//!
//! The split is positional: cases are stored already shuffled, the first
//! block is training, then validation, then test.

use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bytes::{put_u32, put_u64, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SRTDATA1";
pub const VERSION: u32 = 1;
pub const COMPONENTS: usize = 3;

/// Inflow ranges used by default (first and second inlet).
pub const Q1_RANGE: (f64, f64) = (0.1666, 0.3389);
pub const Q2_RANGE: (f64, f64) = (0.3333, 0.4443);

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSeries {
    pub q1: f32,
    pub q2: f32,
    pub timesteps: usize,
    pub cells: usize,
    /// `[timestep][cell][component]`
    pub field: Vec<f32>,
}

impl CaseSeries {
    pub fn flat_dim(&self) -> usize {
        self.cells * COMPONENTS
    }

    /// Flattened snapshot at timestep `t`.
    pub fn step(&self, t: usize) -> &[f32] {
        let f = self.flat_dim();
        &self.field[t * f..(t + 1) * f]
    }

    pub fn range(&self) -> f32 {
        let (lo, hi) = self
            .field
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        hi - lo
    }

    /// Largest change over the last tenth of the series relative to the
    /// final snapshot, as a fraction of the series' dynamic range.
    pub fn tail_drift(&self) -> f32 {
        let last = self.step(self.timesteps - 1);
        let tail = (self.timesteps / 10).max(1);
        let mut worst = 0.0f32;
        for t in self.timesteps - tail..self.timesteps {
            for (a, b) in self.step(t).iter().zip(last) {
                worst = worst.max((a - b).abs());
            }
        }
        worst / self.range()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: [f32; COMPONENTS],
    pub std: [f32; COMPONENTS],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Case counts per split; cases are laid out train, validation, test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    /// Training cases including the validation subset.
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    /// 80% train (rounded down), 20% of train as validation (rounded down),
    /// the remainder test.
    pub fn for_cases(n: usize) -> Self {
        let train = n * 8 / 10;
        let validation = train * 2 / 10;
        SplitCounts {
            train,
            validation,
            test: n - train,
        }
    }

    pub fn fit_range(&self) -> Range<usize> {
        0..self.train - self.validation
    }

    pub fn validation_range(&self) -> Range<usize> {
        self.train - self.validation..self.train
    }

    pub fn test_range(&self) -> Range<usize> {
        self.train..self.train + self.test
    }

    pub fn split_of(&self, case: usize) -> Split {
        if case < self.train - self.validation {
            Split::Train
        } else if case < self.train {
            Split::Validation
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cases: Vec<CaseSeries>,
    pub norm: Option<NormStats>,
}

impl Dataset {
    pub fn timesteps(&self) -> usize {
        self.cases.first().map_or(0, |c| c.timesteps)
    }

    pub fn cells(&self) -> usize {
        self.cases.first().map_or(0, |c| c.cells)
    }

    pub fn split_counts(&self) -> SplitCounts {
        SplitCounts::for_cases(self.cases.len())
    }

    pub fn split(&self, which: Split) -> &[CaseSeries] {
        let s = self.split_counts();
        let r = match which {
            Split::Train => s.fit_range(),
            Split::Validation => s.validation_range(),
            Split::Test => s.test_range(),
        };
        &self.cases[r]
    }
}

/// Generator settings for [`build_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub cases: usize,
    pub timesteps: usize,
    pub cells: usize,
    pub q1: (f64, f64),
    pub q2: (f64, f64),
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            cases: 16,
            timesteps: 64,
            cells: 256,
            q1: Q1_RANGE,
            q2: Q2_RANGE,
            seed: 0,
        }
    }
}

/// Steady-state velocity at normalized position `x` in [0, 1].
pub fn steady_velocity(x: f64, q1: f64, q2: f64) -> [f64; COMPONENTS] {
    use std::f64::consts::PI;
    let ux = q1 * (1.0 + 0.6 * (2.0 * PI * x).sin()) + q2 * (0.5 + x) * (1.0 - x);
    let uy = (q2 - q1) * (PI * x).sin() * (3.0 * PI * x).cos() + 0.3 * q1 * (5.0 * PI * x).sin();
    let uz = 0.4 * q1 * q2 * (2.0 * PI * x).cos() - 0.2 * q2 * (4.0 * PI * x + q1).sin();
    [ux, uy, uz]
}

/// Initial deviation from the steady state: the flow starts near rest and
/// carries a travelling wave that decays away.
fn transient_amplitude(x: f64, steady: f64, component: usize) -> f64 {
    -0.8 * steady + 0.15 * (5.0 * std::f64::consts::PI * x + component as f64).sin()
}

pub fn generate_case(q1: f64, q2: f64, cells: usize, timesteps: usize, seed: u64) -> Result<CaseSeries> {
    if cells == 0 || timesteps < 4 {
        return Err(Error::InvalidArgument(format!(
            "need cells >= 1 and timesteps >= 4, got cells={cells} timesteps={timesteps}"
        )));
    }
    let tau = timesteps as f64 / 5.0;
    let steady: Vec<[f64; COMPONENTS]> = (0..cells)
        .map(|c| steady_velocity((c as f64 + 0.5) / cells as f64, q1, q2))
        .collect();
    let amplitude: Vec<[f64; COMPONENTS]> = steady
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let x = (c as f64 + 0.5) / cells as f64;
            [0, 1, 2].map(|k| transient_amplitude(x, s[k], k))
        })
        .collect();

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (s, a) in steady.iter().zip(&amplitude) {
        for k in 0..COMPONENTS {
            for v in [s[k], s[k] + a[k]] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let noise = 1e-3 * (hi - lo);

    let mut rng = ChaCha8Rng::seed_from_u64(case_seed(q1, q2, seed));
    let mut field = Vec::with_capacity(timesteps * cells * COMPONENTS);
    for t in 0..timesteps {
        let decay = (-(t as f64) / tau).exp();
        for (s, a) in steady.iter().zip(&amplitude) {
            for k in 0..COMPONENTS {
                let eta = if noise > 0.0 { rng.gen_range(-noise..noise) } else { 0.0 };
                field.push((s[k] + a[k] * decay + eta) as f32);
            }
        }
    }
    Ok(CaseSeries {
        q1: q1 as f32,
        q2: q2 as f32,
        timesteps,
        cells,
        field,
    })
}

fn case_seed(q1: f64, q2: f64, seed: u64) -> u64 {
    seed ^ q1.to_bits().rotate_left(17) ^ q2.to_bits().rotate_left(41)
}

/// `(q1, q2)` pairs on a near-square grid covering both ranges.
fn parameter_grid(n: usize, q1: (f64, f64), q2: (f64, f64)) -> Vec<(f64, f64)> {
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let at = |range: (f64, f64), i: usize, count: usize| {
        if count == 1 {
            range.0
        } else {
            range.0 + (range.1 - range.0) * i as f64 / (count - 1) as f64
        }
    };
    (0..n).map(|i| (at(q1, i % cols, cols), at(q2, i / cols, rows))).collect()
}

pub fn build_dataset(cfg: &GenConfig) -> Result<Dataset> {
    if cfg.cases < 5 {
        return Err(Error::InvalidArgument(format!("need at least 5 cases, got {}", cfg.cases)));
    }
    let mut grid = parameter_grid(cfg.cases, cfg.q1, cfg.q2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    grid.shuffle(&mut rng);
    let cases = grid
        .into_iter()
        .map(|(q1, q2)| generate_case(q1, q2, cfg.cells, cfg.timesteps, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { cases, norm: None })
}

/// Per-component mean and standard deviation over the training split only.
pub fn compute_norm(ds: &Dataset) -> Result<NormStats> {
    let train = ds.split(Split::Train);
    if train.is_empty() {
        return Err(Error::UnsupportedDataset("training split is empty".into()));
    }
    let mut sum = [0.0f64; COMPONENTS];
    let mut count = 0usize;
    for case in train {
        for v in case.field.chunks_exact(COMPONENTS) {
            for k in 0..COMPONENTS {
                sum[k] += v[k] as f64;
            }
            count += 1;
        }
    }
    let mean = sum.map(|s| s / count as f64);
    let mut sq = [0.0f64; COMPONENTS];
    for case in train {
        for v in case.field.chunks_exact(COMPONENTS) {
            for k in 0..COMPONENTS {
                sq[k] += (v[k] as f64 - mean[k]).powi(2);
            }
        }
    }
    let mut std = [0.0f32; COMPONENTS];
    for k in 0..COMPONENTS {
        let s = (sq[k] / count as f64).sqrt();
        if !(s > 0.0) || (s as f32) == 0.0 {
            return Err(Error::DegenerateComponent(k));
        }
        std[k] = s as f32;
    }
    Ok(NormStats {
        mean: mean.map(|m| m as f32),
        std,
    })
}

fn transform(ds: &Dataset, f: impl Fn(f32, usize) -> f32) -> Dataset {
    let cases = ds
        .cases
        .iter()
        .map(|c| {
            let mut c = c.clone();
            for v in c.field.chunks_exact_mut(COMPONENTS) {
                for (k, x) in v.iter_mut().enumerate() {
                    *x = f(*x, k);
                }
            }
            c
        })
        .collect();
    Dataset { cases, norm: ds.norm }
}

pub fn apply_norm(ds: &Dataset, stats: &NormStats) -> Dataset {
    let mut out = transform(ds, |x, k| (x - stats.mean[k]) / stats.std[k]);
    out.norm = Some(*stats);
    out
}

/// Normalizes every split with statistics from the training split.
pub fn normalize(ds: &Dataset) -> Result<(Dataset, NormStats)> {
    let stats = compute_norm(ds)?;
    Ok((apply_norm(ds, &stats), stats))
}

pub fn denormalize(ds: &Dataset, stats: &NormStats) -> Dataset {
    transform(ds, |x, k| x * stats.std[k] + stats.mean[k])
}

/// Maps one normalized flattened snapshot back to physical units.
pub fn denormalize_values(values: &mut [f32], stats: &NormStats) {
    for v in values.chunks_exact_mut(COMPONENTS) {
        for (k, x) in v.iter_mut().enumerate() {
            *x = *x * stats.std[k] + stats.mean[k];
        }
    }
}

/// Header fields of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub cases: u64,
    pub timesteps: u64,
    pub cells: u64,
    pub components: u64,
}

impl DatasetHeader {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(44);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.version);
        for v in [self.cases, self.timesteps, self.cells, self.components] {
            put_u64(&mut out, v);
        }
        out
    }

    /// Payload bytes implied by the extents, excluding the trailer.
    pub fn payload_bytes(&self) -> Option<u64> {
        let field = self
            .cases
            .checked_mul(self.timesteps)?
            .checked_mul(self.cells)?
            .checked_mul(self.components)?
            .checked_mul(4)?;
        field.checked_add(self.cases.checked_mul(8)?)
    }
}

pub fn read_header(bytes: &[u8]) -> Result<DatasetHeader> {
    header(&mut Reader::new(bytes))
}

fn header(r: &mut Reader<'_>) -> Result<DatasetHeader> {
    r.magic(MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let h = DatasetHeader {
        version,
        cases: r.u64("case count")?,
        timesteps: r.u64("timestep count")?,
        cells: r.u64("cell count")?,
        components: r.u64("component count")?,
    };
    if h.components != COMPONENTS as u64 {
        return Err(Error::format(36, format!("expected 3 velocity components, found {}", h.components)));
    }
    Ok(h)
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let (t, c) = (ds.timesteps(), ds.cells());
    if ds.cases.iter().any(|k| k.timesteps != t || k.cells != c) {
        return Err(Error::UnsupportedDataset("cases differ in timesteps or cells".into()));
    }
    let h = DatasetHeader {
        version: VERSION,
        cases: ds.cases.len() as u64,
        timesteps: t as u64,
        cells: c as u64,
        components: COMPONENTS as u64,
    };
    let mut out = h.to_bytes();
    out.reserve(h.payload_bytes().unwrap_or(0) as usize + 24);
    for case in &ds.cases {
        out.extend_from_slice(&case.q1.to_le_bytes());
        out.extend_from_slice(&case.q2.to_le_bytes());
    }
    for case in &ds.cases {
        for &x in &case.field {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(n) = ds.norm {
        for x in n.mean.iter().chain(&n.std) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    let h = header(&mut r)?;
    let expect = h
        .payload_bytes()
        .ok_or_else(|| Error::format(12, "extents overflow"))?;
    let left = r.remaining() as u64;
    if left != expect && left != expect + 24 {
        return Err(Error::format(
            44,
            format!("payload is {left} bytes, header implies {expect} (or {} with trailer)", expect + 24),
        ));
    }
    let (n, t, c) = (h.cases as usize, h.timesteps as usize, h.cells as usize);
    let mut qs = Vec::with_capacity(n);
    for _ in 0..n {
        qs.push((r.f32("q1")?, r.f32("q2")?));
    }
    let mut cases = Vec::with_capacity(n);
    for (q1, q2) in qs {
        let field = r.reals::<f32>(t * c * COMPONENTS, "field data")?;
        cases.push(CaseSeries {
            q1,
            q2,
            timesteps: t,
            cells: c,
            field,
        });
    }
    let norm = if r.remaining() == 24 {
        let mut v = [0.0f32; 6];
        for x in &mut v {
            *x = r.f32("normalization trailer")?;
        }
        Some(NormStats {
            mean: [v[0], v[1], v[2]],
            std: [v[3], v[4], v[5]],
        })
    } else {
        None
    };
    Ok(Dataset { cases, norm })
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            cases: 10,
            timesteps: 40,
            cells: 16,
            seed: 3,
            ..GenConfig::default()
        }
    }

    #[test]
    fn case_converges_to_steady_state() {
        let case = generate_case(0.2, 0.4, 32, 64, 1).unwrap();
        let range = case.range();
        let last = case.step(63);
        for (c, v) in last.chunks_exact(3).enumerate() {
            let s = steady_velocity((c as f64 + 0.5) / 32.0, 0.2, 0.4);
            for k in 0..3 {
                assert!(((v[k] as f64) - s[k]).abs() < 0.01 * range as f64);
            }
        }
        assert!(case.tail_drift() < 0.01, "drift {}", case.tail_drift());
    }

    #[test]
    fn generation_is_deterministic_and_parameter_dependent() {
        let a = generate_case(0.2, 0.4, 8, 10, 5).unwrap();
        assert_eq!(a, generate_case(0.2, 0.4, 8, 10, 5).unwrap());
        let mut diff = 0.0f64;
        for c in 0..8 {
            let x = (c as f64 + 0.5) / 8.0;
            let (s1, s2) = (steady_velocity(x, 0.2, 0.4), steady_velocity(x, 0.3, 0.4));
            for k in 0..3 {
                diff = diff.max((s1[k] - s2[k]).abs());
            }
        }
        assert!(diff > 0.0);
        assert!(generate_case(0.2, 0.4, 0, 10, 5).is_err());
        assert!(generate_case(0.2, 0.4, 4, 3, 5).is_err());
    }

    #[test]
    fn split_counts() {
        assert_eq!(
            SplitCounts::for_cases(131),
            SplitCounts { train: 104, validation: 20, test: 27 }
        );
        assert_eq!(SplitCounts::for_cases(10), SplitCounts { train: 8, validation: 1, test: 2 });
        let s = SplitCounts::for_cases(16);
        let mut seen = vec![0; 16];
        for r in [s.fit_range(), s.validation_range(), s.test_range()] {
            for i in r {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
    }

    #[test]
    fn build_is_seeded() {
        let a = build_dataset(&small()).unwrap();
        let b = build_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let order = |d: &Dataset| d.cases.iter().map(|c| (c.q1, c.q2)).collect::<Vec<_>>();
        let c = build_dataset(&GenConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(order(&a), order(&c));
        assert!(build_dataset(&GenConfig { cases: 4, ..small() }).is_err());
        for case in &a.cases {
            assert!(case.tail_drift() < 0.01);
            assert!((Q1_RANGE.0 as f32..=Q1_RANGE.1 as f32).contains(&case.q1));
        }
    }

    #[test]
    fn normalization_moments_and_inverse() {
        let ds = build_dataset(&small()).unwrap();
        let (norm, stats) = normalize(&ds).unwrap();
        let train = norm.split(Split::Train);
        for k in 0..3 {
            let vals: Vec<f64> = train
                .iter()
                .flat_map(|c| c.field.chunks_exact(3).map(move |v| v[k] as f64))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((std - 1.0).abs() < 1e-4, "std {std}");
        }
        let back = denormalize(&norm, &stats);
        for (a, b) in back.cases.iter().zip(&ds.cases) {
            for (x, y) in a.field.iter().zip(&b.field) {
                assert!((x - y).abs() <= 1e-5 * y.abs().max(1e-2), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn constant_field_is_degenerate() {
        let mut ds = build_dataset(&small()).unwrap();
        for c in &mut ds.cases {
            c.field.iter_mut().for_each(|x| *x = 1.5);
        }
        assert!(matches!(normalize(&ds), Err(Error::DegenerateComponent(_))));
    }

    #[test]
    fn stats_ignore_held_out_cases() {
        let ds = build_dataset(&small()).unwrap();
        let before = compute_norm(&ds).unwrap();
        let mut perturbed = ds.clone();
        let s = perturbed.split_counts();
        for i in s.validation_range().chain(s.test_range()) {
            perturbed.cases[i].field.iter_mut().for_each(|x| *x = *x * 7.0 + 3.0);
        }
        assert_eq!(before, compute_norm(&perturbed).unwrap());
    }

    #[test]
    fn file_round_trip_and_damage() {
        let mut ds = build_dataset(&small()).unwrap();
        ds.norm = Some(compute_norm(&ds).unwrap());
        let bytes = encode_dataset(&ds).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode_dataset(&back).unwrap(), bytes);

        let err = decode_dataset(&bytes[..bytes.len() - 30]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 44, .. }), "{err}");
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(decode_dataset(&bad), Err(Error::Format { offset: 8, .. })));
        assert!(decode_dataset(&bytes[..20]).is_err());
    }

    #[test]
    fn paper_scale_header() {
        let h = DatasetHeader {
            version: VERSION,
            cases: 131,
            timesteps: 420,
            cells: 125_565,
            components: 3,
        };
        let parsed = read_header(&h.to_bytes()).unwrap();
        assert_eq!((parsed.cases, parsed.timesteps, parsed.cells, parsed.components), (131, 420, 125_565, 3));
        assert_eq!(h.payload_bytes().unwrap(), 131 * 420 * 125_565 * 3 * 4 + 131 * 8);
    }
}
