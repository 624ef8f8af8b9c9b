//! Scalability tables: per-layout times, speedups and the layout-delta
//! matrix.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::time::Duration;

use crate::collective::{simulate_allreduce_time, Layout, LinkCostModel};
use crate::error::{Error, Result};
use crate::harness::{launch_workers, Launch, TrainConfig};

/// One configuration's training time; `min`/`max` span repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
    pub min: f64,
    pub max: f64,
}

impl Timing {
    pub fn single(label: impl Into<String>, seconds: f64) -> Self {
        Timing {
            label: label.into(),
            seconds,
            min: seconds,
            max: seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub timing: Timing,
    /// Baseline time over this time.
    pub parallel: f64,
    /// Previous row's time over this time; 1 on the first row.
    pub incremental: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub baseline: String,
    pub rows: Vec<BenchRow>,
}

pub fn speedup_table(times: &[Timing], baseline: &str) -> Result<BenchTable> {
    if let Some(t) = times.iter().find(|t| !(t.seconds > 0.0) || !t.seconds.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "time for {} must be positive, got {}",
            t.label, t.seconds
        )));
    }
    let base = times
        .iter()
        .find(|t| t.label == baseline)
        .ok_or_else(|| Error::MissingBaseline(baseline.to_string()))?
        .seconds;
    let rows = times
        .iter()
        .enumerate()
        .map(|(i, t)| BenchRow {
            timing: t.clone(),
            parallel: base / t.seconds,
            incremental: if i == 0 { 1.0 } else { times[i - 1].seconds / t.seconds },
        })
        .collect();
    Ok(BenchTable {
        baseline: baseline.to_string(),
        rows,
    })
}

impl BenchTable {
    /// Columns: label, seconds, min_seconds, max_seconds, parallel_speedup,
    /// incremental_speedup. Full precision.
    pub fn write_csv(&self, w: impl io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "label",
            "seconds",
            "min_seconds",
            "max_seconds",
            "parallel_speedup",
            "incremental_speedup",
        ])?;
        for r in &self.rows {
            out.write_record([
                r.timing.label.clone(),
                format!("{:?}", r.timing.seconds),
                format!("{:?}", r.timing.min),
                format!("{:?}", r.timing.max),
                format!("{:?}", r.parallel),
                format!("{:?}", r.incremental),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Human-readable table, speedups to two decimals.
    pub fn render(&self) -> String {
        let mut s = format!("{:<10} {:>14} {:>9} {:>12}\n", "config", "seconds", "parallel", "incremental");
        for r in &self.rows {
            s += &format!(
                "{:<10} {:>14.3} {:>9.2} {:>12.2}\n",
                r.timing.label, r.timing.seconds, r.parallel, r.incremental
            );
        }
        s
    }
}

/// Reads a `label,seconds` CSV.
pub fn read_times(path: impl AsRef<Path>) -> Result<Vec<Timing>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let label = rec.get(0).unwrap_or("").trim().to_string();
        let seconds = rec
            .get(1)
            .and_then(|s| s.trim().replace('_', "").parse::<f64>().ok())
            .ok_or_else(|| Error::InvalidArgument(format!("bad times row {rec:?}")))?;
        out.push(Timing::single(label, seconds));
    }
    Ok(out)
}

/// One off-diagonal cell: how much faster (in percent) `layout` runs than
/// its transpose, relative to the transpose's time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaCell {
    pub layout: Layout,
    pub partner: Layout,
    pub percent: f64,
}

/// Compares every non-square layout against its transpose (same process
/// count, nodes and slots swapped). Square layouts sit on the diagonal and
/// get no cell.
pub fn layout_delta_matrix(times: &BTreeMap<Layout, f64>) -> Result<Vec<DeltaCell>> {
    let mut cells = Vec::new();
    for (&layout, &t) in times {
        let partner = layout.transpose();
        if partner == layout {
            continue;
        }
        let &tp = times.get(&partner).ok_or_else(|| Error::MissingPair(format!("{layout} has no {partner}")))?;
        if !(t > 0.0 && tp > 0.0) {
            return Err(Error::InvalidArgument(format!("non-positive time for {layout} or {partner}")));
        }
        cells.push(DeltaCell {
            layout,
            partner,
            percent: (tp - t) / tp * 100.0,
        });
    }
    Ok(cells)
}

/// Columns: layout, partner, delta_percent.
pub fn write_delta_csv(cells: &[DeltaCell], w: impl io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["layout", "partner", "delta_percent"])?;
    for c in cells {
        out.write_record([c.layout.to_string(), c.partner.to_string(), format!("{:?}", c.percent)])?;
    }
    out.flush()?;
    Ok(())
}

/// Simulated epoch: every rank computes `samples / P` samples and the group
/// runs one all-reduce per global batch. Step counts are left fractional so
/// the compute term scales exactly as `1/P`.
pub fn simulated_epoch_time(layout: &Layout, samples: usize, batch: usize, bytes: u64, model: &LinkCostModel) -> f64 {
    let p = layout.world() as f64;
    let steps = samples as f64 / (batch as f64 * p);
    samples as f64 / p * model.compute_per_sample + steps * simulate_allreduce_time(layout, bytes, model)
}

pub fn bench_simulated(
    layouts: &[Layout],
    samples: usize,
    batch: usize,
    bytes: u64,
    model: &LinkCostModel,
) -> Vec<Timing> {
    layouts
        .iter()
        .map(|l| Timing::single(l.to_string(), simulated_epoch_time(l, samples, batch, bytes, model)))
        .collect()
}

/// Times real localhost runs of `base` under each layout, `runs` times
/// each. The reported time is the mean training-step time of rank 0,
/// excluding start-up and data loading.
pub fn bench_measured(
    exe: &Path,
    base: &TrainConfig,
    layouts: &[Layout],
    runs: usize,
    work_dir: &Path,
) -> Result<Vec<Timing>> {
    let mut out = Vec::new();
    for layout in layouts {
        let cfg = TrainConfig {
            layout: *layout,
            ..base.clone()
        };
        let mut samples = Vec::with_capacity(runs);
        for run in 0..runs.max(1) {
            let dir = work_dir.join(format!("{layout}-run{run}"));
            let log = launch_workers(&Launch {
                exe,
                config: &cfg,
                out: &dir,
                save_all_ranks: false,
                timeout: Duration::from_secs(60),
            })?;
            samples.push(log.train_seconds());
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        out.push(Timing {
            label: layout.to_string(),
            seconds: mean,
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
        log::info!("{layout}: {mean:.3}s over {} runs", samples.len());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collective::LinkCost;
    use proptest::prelude::*;

    fn times(v: &[f64]) -> Vec<Timing> {
        v.iter().enumerate().map(|(i, &t)| Timing::single(format!("c{i}"), t)).collect()
    }

    fn rounded(v: f64) -> String {
        format!("{v:.2}")
    }

    #[test]
    fn published_cpu_speedups() {
        let t = speedup_table(&times(&[76_674.0, 75_346.0, 66_573.0, 58_678.0, 52_908.0]), "c0").unwrap();
        let got: Vec<String> = t.rows.iter().map(|r| rounded(r.parallel)).collect();
        assert_eq!(got, ["1.00", "1.02", "1.15", "1.31", "1.45"]);
    }

    #[test]
    fn slowdown_and_incremental() {
        let t = speedup_table(&times(&[10_803.0, 43_288.0, 38_420.0, 32_928.0]), "c0").unwrap();
        let got: Vec<String> = t.rows.iter().map(|r| rounded(r.parallel)).collect();
        assert_eq!(got, ["1.00", "0.25", "0.28", "0.33"]);
        assert_eq!(t.rows[0].incremental, 1.0);
        assert_eq!(t.rows[2].incremental, 43_288.0 / 38_420.0);
        assert!(matches!(speedup_table(&t.rows.iter().map(|r| r.timing.clone()).collect::<Vec<_>>(), "x"), Err(Error::MissingBaseline(_))));
        assert!(speedup_table(&times(&[1.0, 0.0]), "c0").is_err());
    }

    #[test]
    fn delta_example() {
        let x = 100.0;
        let mut m = BTreeMap::new();
        m.insert(Layout::new(1, 2).unwrap(), x);
        m.insert(Layout::new(2, 1).unwrap(), x / (1.0 - 0.0089));
        m.insert(Layout::new(2, 2).unwrap(), 7.0);
        let cells = layout_delta_matrix(&m).unwrap();
        assert_eq!(cells.len(), 2);
        let fewer = cells.iter().find(|c| c.layout.nodes == 1).unwrap();
        assert!((fewer.percent - 0.89).abs() < 1e-9);
        let more = cells.iter().find(|c| c.layout.nodes == 2).unwrap();
        assert_eq!(rounded(more.percent), "-0.90");

        m.insert(Layout::new(1, 3).unwrap(), 5.0);
        assert!(matches!(layout_delta_matrix(&m), Err(Error::MissingPair(_))));
    }

    #[test]
    fn equal_times_give_zero() {
        let mut m = BTreeMap::new();
        m.insert(Layout::new(1, 4).unwrap(), 3.0);
        m.insert(Layout::new(4, 1).unwrap(), 3.0);
        assert!(layout_delta_matrix(&m).unwrap().iter().all(|c| c.percent == 0.0));
    }

    #[test]
    fn zero_communication_scales_perfectly() {
        let model = LinkCostModel::compute_only(1e-3);
        let base = simulated_epoch_time(&Layout::single(), 610, 14, 1 << 20, &model);
        for p in [2usize, 4, 8] {
            let t = simulated_epoch_time(&Layout::new(1, p).unwrap(), 610, 14, 1 << 20, &model);
            assert!((t * p as f64 / base - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_columns() {
        let t = speedup_table(&times(&[2.0, 1.0]), "c0").unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "label,seconds,min_seconds,max_seconds,parallel_speedup,incremental_speedup"
        );
        assert_eq!(text.lines().nth(2).unwrap(), "c1,1.0,1.0,1.0,2.0,2.0");
    }

    proptest! {
        #[test]
        fn fewer_nodes_never_slower(bytes in 1u64..100_000_000, lat in 0.0f64..1e-4, extra in 0.0f64..1e-8) {
            let model = LinkCostModel::new(
                LinkCost { latency: lat, per_byte: 1e-10 },
                LinkCost { latency: lat * 2.0, per_byte: 1e-10 + extra },
                1e-4,
            ).unwrap();
            let grid: Vec<Layout> = [(1, 2), (2, 1), (1, 4), (4, 1), (2, 2), (2, 3), (3, 2), (1, 6), (6, 1)]
                .iter()
                .map(|&(n, s)| Layout::new(n, s).unwrap())
                .collect();
            let m: BTreeMap<Layout, f64> = grid
                .iter()
                .map(|l| (*l, simulated_epoch_time(l, 610, 14, bytes, &model)))
                .collect();
            for c in layout_delta_matrix(&m).unwrap() {
                if c.layout.nodes < c.partner.nodes {
                    prop_assert!(c.percent >= 0.0);
                }
                let companion = layout_delta_matrix(&m).unwrap().into_iter().find(|d| d.layout == c.partner).unwrap();
                let u = c.percent / 100.0;
                prop_assert!((companion.percent / 100.0 + u / (1.0 - u)).abs() < 1e-9);
            }
        }
    }
}
