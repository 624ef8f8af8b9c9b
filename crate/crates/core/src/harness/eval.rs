//! Accuracy of next-step predictions on the test split, grouped by
//! timestep and measured in physical units.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use crate::datagen::{apply_norm, denormalize_values, CaseSeries, Dataset, NormStats, Split};
use crate::error::{Error, Result};
use crate::metrics::{report, scatter_export, MetricsReport};
use crate::model::{forward, ModelParams};
use crate::tensor::{Real, Tensor};

/// Predicts snapshot `t` of a normalized case from the `window` snapshots
/// before it. Output is normalized too.
pub trait Predictor {
    fn window(&self) -> usize;
    fn flat_dim(&self) -> usize;
    fn predict(&self, case: &CaseSeries, t: usize) -> Result<Vec<f32>>;
}

pub struct ModelPredictor<T> {
    pub params: ModelParams<T>,
}

impl<T: Real> Predictor for ModelPredictor<T> {
    fn window(&self) -> usize {
        self.params.dims.window
    }

    fn flat_dim(&self) -> usize {
        self.params.dims.flat_dim
    }

    fn predict(&self, case: &CaseSeries, t: usize) -> Result<Vec<f32>> {
        let (w, f) = (self.window(), self.flat_dim());
        let mut data = Vec::with_capacity(w * f);
        for s in t - w..t {
            data.extend(case.step(s).iter().map(|&x| T::of(x as f64)));
        }
        let (pred, _) = forward(&self.params, &Tensor::new(vec![w, f], data)?)?;
        Ok(pred.data()[..f].iter().map(|x| x.as_f64() as f32).collect())
    }
}

/// A timestep selector; `Last` is the final (converged) snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestepGroup {
    At(usize),
    Last,
}

pub const DEFAULT_GROUPS: [TimestepGroup; 3] = [TimestepGroup::At(10), TimestepGroup::At(20), TimestepGroup::Last];

impl TimestepGroup {
    pub fn resolve(&self, timesteps: usize) -> usize {
        match *self {
            TimestepGroup::At(t) => t,
            TimestepGroup::Last => timesteps - 1,
        }
    }
}

impl fmt::Display for TimestepGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimestepGroup::At(t) => write!(f, "t{t}"),
            TimestepGroup::Last => f.write_str("last"),
        }
    }
}

impl FromStr for TimestepGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "last" {
            return Ok(TimestepGroup::Last);
        }
        s.trim_start_matches('t')
            .parse()
            .map(TimestepGroup::At)
            .map_err(|_| Error::InvalidArgument(format!("timestep group {s:?} is neither an index nor \"last\"")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub group: TimestepGroup,
    pub timestep: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    /// Reference and predicted values of the last group, physical units.
    pub scatter: (Vec<f32>, Vec<f32>),
}

impl Evaluation {
    /// Columns: group, timestep, n, pearson, spearman, rmse, hist_r2_percent.
    pub fn write_csv(&self, w: impl io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["group", "timestep", "n", "pearson", "spearman", "rmse", "hist_r2_percent"])?;
        for r in &self.rows {
            out.write_record([
                r.group.to_string(),
                r.timestep.to_string(),
                r.report.n.to_string(),
                format!("{:?}", r.report.pearson),
                format!("{:?}", r.report.spearman),
                format!("{:?}", r.report.rmse),
                format!("{:?}", r.report.hist_r2),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, report_path: impl AsRef<Path>, scatter_path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(report_path)?)?;
        scatter_export(&self.scatter.0, &self.scatter.1, scatter_path)
    }
}

/// Evaluates `predictor` on the test split of the physical-unit dataset
/// `raw`, normalizing inputs with `stats`.
pub fn evaluate(
    predictor: &dyn Predictor,
    raw: &Dataset,
    stats: &NormStats,
    groups: &[TimestepGroup],
    bins: usize,
) -> Result<Evaluation> {
    if predictor.flat_dim() != raw.cells() * 3 {
        return Err(Error::Dimension {
            op: "evaluate",
            left: vec![predictor.flat_dim()],
            right: vec![raw.cells() * 3],
        });
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no timestep groups to evaluate".into()));
    }
    let normed = apply_norm(raw, stats);
    let (test_raw, test_norm) = (raw.split(Split::Test), normed.split(Split::Test));
    if test_raw.is_empty() {
        return Err(Error::UnsupportedDataset("test split is empty".into()));
    }
    let steps = raw.timesteps();
    let mut rows = Vec::with_capacity(groups.len());
    let mut scatter = (Vec::new(), Vec::new());
    for group in groups {
        let t = group.resolve(steps);
        if t < predictor.window() || t >= steps {
            return Err(Error::OutOfRange { index: t, limit: steps });
        }
        let (mut truth, mut pred) = (Vec::new(), Vec::new());
        for (case_raw, case_norm) in test_raw.iter().zip(test_norm) {
            let mut p = predictor.predict(case_norm, t)?;
            denormalize_values(&mut p, stats);
            truth.extend_from_slice(case_raw.step(t));
            pred.extend(p);
        }
        let as64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        rows.push(EvalRow {
            group: *group,
            timestep: t,
            report: report(&as64(&truth), &as64(&pred), bins)?,
        });
        scatter = (truth, pred);
    }
    Ok(Evaluation { rows, scatter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_dataset, compute_norm, GenConfig};
    use crate::metrics::DEFAULT_BINS;

    struct Oracle {
        flat: usize,
    }

    impl Predictor for Oracle {
        fn window(&self) -> usize {
            3
        }
        fn flat_dim(&self) -> usize {
            self.flat
        }
        fn predict(&self, case: &CaseSeries, t: usize) -> Result<Vec<f32>> {
            Ok(case.step(t).to_vec())
        }
    }

    fn small() -> Dataset {
        build_dataset(&GenConfig {
            cases: 8,
            timesteps: 24,
            cells: 16,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn oracle_is_perfect() {
        let ds = small();
        let stats = compute_norm(&ds).unwrap();
        let ev = evaluate(&Oracle { flat: 48 }, &ds, &stats, &DEFAULT_GROUPS, DEFAULT_BINS).unwrap();
        assert_eq!(ev.rows.len(), 3);
        assert_eq!(ev.rows[2].timestep, 23);
        for r in &ev.rows {
            assert!((r.report.pearson - 1.0).abs() < 1e-6);
            assert!(r.report.rmse < 1e-5);
            assert!(r.report.hist_r2 > 99.0);
            assert_eq!(r.report.n, 2 * 48);
        }
        for (a, b) in ev.scatter.0.iter().zip(&ev.scatter.1) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
        }
    }

    #[test]
    fn mismatches_rejected() {
        let ds = small();
        let stats = compute_norm(&ds).unwrap();
        assert!(matches!(
            evaluate(&Oracle { flat: 12 }, &ds, &stats, &DEFAULT_GROUPS, DEFAULT_BINS),
            Err(Error::Dimension { .. })
        ));
        assert!(evaluate(&Oracle { flat: 48 }, &ds, &stats, &[TimestepGroup::At(2)], DEFAULT_BINS).is_err());
        assert!(evaluate(&Oracle { flat: 48 }, &ds, &stats, &[TimestepGroup::At(24)], DEFAULT_BINS).is_err());
    }

    #[test]
    fn group_parsing() {
        assert_eq!("last".parse::<TimestepGroup>().unwrap(), TimestepGroup::Last);
        assert_eq!("t10".parse::<TimestepGroup>().unwrap(), TimestepGroup::At(10));
        assert_eq!("20".parse::<TimestepGroup>().unwrap(), TimestepGroup::At(20));
        assert!("x".parse::<TimestepGroup>().is_err());
    }
}
