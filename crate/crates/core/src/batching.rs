//! Epoch generator over concatenated cases.
//!
//! Every case of `T` timesteps contributes `T - (W + H) + 1` windows; sample
//! id `s` decodes to `(s / per_case, s % per_case)`. Ids are shuffled once at
//! construction and again at each epoch end, with a stream keyed by the epoch
//! so every rank of a run sees the same permutation. Rank `r` of `P` owns the
//! positions `r, r + P, r + 2P, ...` of the shuffled array, and a trailing
//! partial batch is dropped so all ranks run the same number of steps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::CaseSeries;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub batch: usize,
    pub window: usize,
    pub horizon: usize,
    pub seed: u64,
    pub rank: usize,
    pub world: usize,
    /// When false the id order stays fixed across epochs.
    pub shuffle: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            batch: 14,
            window: 3,
            horizon: 1,
            seed: 0,
            rank: 0,
            world: 1,
            shuffle: true,
        }
    }
}

pub fn samples_per_case(timesteps: usize, window: usize, horizon: usize) -> usize {
    (timesteps + 1).saturating_sub(window + horizon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch<T> {
    /// `[B, W, F]`
    pub observations: Tensor<T>,
    /// `[B, H, F]`
    pub targets: Tensor<T>,
    pub ids: Vec<usize>,
}

impl<T: Real> MiniBatch<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub struct Generator<'a> {
    cases: &'a [CaseSeries],
    cfg: GeneratorConfig,
    per_case: usize,
    indexes: Vec<usize>,
    epoch: u64,
}

impl<'a> Generator<'a> {
    pub fn new(cases: &'a [CaseSeries], cfg: GeneratorConfig) -> Result<Self> {
        if cfg.batch == 0 || cfg.window == 0 || cfg.horizon == 0 || cfg.world == 0 || cfg.rank >= cfg.world {
            return Err(Error::InvalidArgument(format!("invalid generator config {cfg:?}")));
        }
        let first = cases
            .first()
            .ok_or_else(|| Error::UnsupportedDataset("no cases".into()))?;
        if cases
            .iter()
            .any(|c| c.timesteps != first.timesteps || c.cells != first.cells)
        {
            return Err(Error::UnsupportedDataset(
                "all cases must have the same number of timesteps and cells".into(),
            ));
        }
        let per_case = samples_per_case(first.timesteps, cfg.window, cfg.horizon);
        if per_case == 0 {
            return Err(Error::UnsupportedDataset(format!(
                "{} timesteps cannot hold a window of {} plus horizon {}",
                first.timesteps, cfg.window, cfg.horizon
            )));
        }
        let mut g = Generator {
            cases,
            cfg,
            per_case,
            indexes: (0..per_case * cases.len()).collect(),
            epoch: 0,
        };
        g.shuffle();
        Ok(g)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn samples_per_case(&self) -> usize {
        self.per_case
    }

    pub fn num_samples(&self) -> usize {
        self.indexes.len()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// The current (shuffled) id order shared by all ranks.
    pub fn indexes(&self) -> &[usize] {
        &self.indexes
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.indexes.len() / (self.cfg.batch * self.cfg.world)
    }

    /// `(case, first timestep)` of a sample id.
    pub fn decode(&self, id: usize) -> (usize, usize) {
        (id / self.per_case, id % self.per_case)
    }

    /// Sample ids of this rank's `batch_index`-th batch.
    pub fn batch_ids(&self, batch_index: usize) -> Result<Vec<usize>> {
        let limit = self.batches_per_epoch();
        if batch_index >= limit {
            return Err(Error::OutOfRange {
                index: batch_index,
                limit,
            });
        }
        let (b, p, r) = (self.cfg.batch, self.cfg.world, self.cfg.rank);
        Ok((0..b)
            .map(|j| self.indexes[(batch_index * b + j) * p + r])
            .collect())
    }

    pub fn get_item<T: Real>(&self, batch_index: usize) -> Result<MiniBatch<T>> {
        let ids = self.batch_ids(batch_index)?;
        self.materialize(&ids)
    }

    /// Builds `(observations, targets)` for arbitrary sample ids.
    pub fn materialize<T: Real>(&self, ids: &[usize]) -> Result<MiniBatch<T>> {
        let (w, h) = (self.cfg.window, self.cfg.horizon);
        let f = self.cases[0].flat_dim();
        let mut obs = Vec::with_capacity(ids.len() * w * f);
        let mut tgt = Vec::with_capacity(ids.len() * h * f);
        for &id in ids {
            if id >= self.indexes.len() {
                return Err(Error::OutOfRange {
                    index: id,
                    limit: self.indexes.len(),
                });
            }
            let (case, start) = self.decode(id);
            let series = &self.cases[case];
            for t in start..start + w {
                obs.extend(series.step(t).iter().map(|&x| T::of(x as f64)));
            }
            for t in start + w..start + w + h {
                tgt.extend(series.step(t).iter().map(|&x| T::of(x as f64)));
            }
        }
        Ok(MiniBatch {
            observations: Tensor::new(vec![ids.len(), w, f], obs)?,
            targets: Tensor::new(vec![ids.len(), h, f], tgt)?,
            ids: ids.to_vec(),
        })
    }

    pub fn on_epoch_end(&mut self) {
        self.epoch += 1;
        self.shuffle();
    }

    fn shuffle(&mut self) {
        if !self.cfg.shuffle {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.epoch);
        self.indexes.shuffle(&mut rng);
    }
}
