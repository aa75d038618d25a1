//! Forgetting metrics over per-round, per-label accuracy matrices.
//!
//! Accuracy matrices are indexed `a[round][label]` and hold fractions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocols::RunRecord;

/// Rounds at the end of a run that the reported values are taken over.
pub const REPORT_WINDOW: usize = 5;

/// Mean over labels of the largest drop from any earlier round to the last
/// one. Negative per-label terms are kept.
pub fn backward_transfer(a: &[Vec<f64>]) -> Result<f64> {
    backward_transfer_with(a, false)
}

/// As [`backward_transfer`]; with `clamp`, each label's term is floored at 0.
pub fn backward_transfer_with(a: &[Vec<f64>], clamp: bool) -> Result<f64> {
    let labels = check_matrix(a)?;
    if a.len() < 2 {
        return Err(Error::Metric(format!(
            "backward transfer needs at least 2 rounds, got {}",
            a.len()
        )));
    }
    let last = &a[a.len() - 1];
    let mut sum = 0.0;
    for l in 0..labels {
        let peak = a[..a.len() - 1]
            .iter()
            .map(|row| row[l])
            .fold(f64::NEG_INFINITY, f64::max);
        let term = peak - last[l];
        sum += if clamp { term.max(0.0) } else { term };
    }
    Ok(sum / labels as f64)
}

/// Mean distance of each label's accuracy to the best label's.
pub fn performance_gap(row: &[f64]) -> f64 {
    if row.is_empty() {
        return 0.0;
    }
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter().map(|&x| best - x).sum::<f64>() / row.len() as f64
}

pub fn performance_gap_series(a: &[Vec<f64>]) -> Vec<f64> {
    a.iter().map(|row| performance_gap(row)).collect()
}

fn check_matrix(a: &[Vec<f64>]) -> Result<usize> {
    let labels = a.first().map_or(0, Vec::len);
    if labels == 0 {
        return Err(Error::Metric("empty accuracy matrix".into()));
    }
    if let Some(r) = a.iter().position(|row| row.len() != labels) {
        return Err(Error::Metric(format!(
            "round {r} has {} labels, expected {labels}",
            a[r].len()
        )));
    }
    Ok(labels)
}

/// Median of `values`; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// `out[k][r]`: median across records of the accuracy, at round `r`, of the
/// label processed at cycle position `k`.
pub fn per_position_accuracy(records: &[RunRecord]) -> Result<Vec<Vec<f64>>> {
    let (rounds, labels) = shape(records)?;
    if let Some(rec) = records.iter().find(|r| !r.order.is_cyclic()) {
        return Err(Error::Metric(format!(
            "record for seed {} did not use a cyclic order",
            rec.seed
        )));
    }
    let mut out = vec![vec![0.0; rounds]; labels];
    for (k, row) in out.iter_mut().enumerate() {
        for (r, slot) in row.iter_mut().enumerate() {
            let values: Vec<f64> = records
                .iter()
                .map(|rec| {
                    let l = rec
                        .label_at_position(r, k)
                        .ok_or_else(|| Error::Metric(format!("no label at position {k}")))?;
                    Ok(rec.per_label_acc[r][l])
                })
                .collect::<Result<_>>()?;
            *slot = median(&values);
        }
    }
    Ok(out)
}

fn shape(records: &[RunRecord]) -> Result<(usize, usize)> {
    let first = records
        .first()
        .ok_or_else(|| Error::Metric("no records".into()))?;
    let (rounds, labels) = (first.per_label_acc.len(), first.labels);
    if rounds == 0 {
        return Err(Error::Metric("records have no rounds".into()));
    }
    for rec in records {
        if rec.per_label_acc.len() != rounds || rec.global_acc.len() != rounds {
            return Err(Error::Metric(format!(
                "record for seed {} has {} rounds, expected {rounds}",
                rec.seed,
                rec.per_label_acc.len()
            )));
        }
        if rec.labels != labels || check_matrix(&rec.per_label_acc)? != labels {
            return Err(Error::Metric(format!(
                "record for seed {} has {} labels, expected {labels}",
                rec.seed, rec.labels
            )));
        }
        if rec.label_order.len() != labels {
            return Err(Error::Metric(format!(
                "record for seed {} has a label order of length {}",
                rec.seed,
                rec.label_order.len()
            )));
        }
    }
    Ok((rounds, labels))
}

/// Median and standard deviation of a set of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        Self {
            median: median(values),
            std: std_dev(values),
        }
    }
}

/// Per-run values behind a [`MetricReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    /// `None` for single-round runs.
    pub bw: Option<f64>,
    /// Median global accuracy over the report window.
    pub reported_acc: f64,
    /// Median performance gap over the report window.
    pub reported_pg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub runs: usize,
    pub rounds: usize,
    pub labels: usize,
    /// Backward transfer across runs.
    pub bw: Option<Spread>,
    /// Elementwise median across runs of the per-round performance gap.
    pub pg_series: Vec<f64>,
    /// Elementwise median across runs of the per-round global accuracy.
    pub acc_series: Vec<f64>,
    /// `per_position[k][r]`; present when every run used a cyclic order.
    pub per_position: Option<Vec<Vec<f64>>>,
    /// Global accuracy over the last rounds of every run, pooled.
    pub reported_acc: Spread,
    /// Performance gap over the last rounds of every run, pooled.
    pub reported_pg: Spread,
    pub per_run: Vec<RunMetrics>,
}

pub fn report(records: &[RunRecord]) -> Result<MetricReport> {
    let (rounds, labels) = shape(records)?;
    let window = rounds.saturating_sub(REPORT_WINDOW)..rounds;
    let mut pooled_acc = Vec::new();
    let mut pooled_pg = Vec::new();
    let mut per_run = Vec::with_capacity(records.len());
    let mut pg_runs = Vec::with_capacity(records.len());
    for rec in records {
        let pg = performance_gap_series(&rec.per_label_acc);
        let acc = &rec.global_acc[window.clone()];
        let gaps = &pg[window.clone()];
        pooled_acc.extend_from_slice(acc);
        pooled_pg.extend_from_slice(gaps);
        per_run.push(RunMetrics {
            seed: rec.seed,
            bw: if rounds >= 2 {
                Some(backward_transfer(&rec.per_label_acc)?)
            } else {
                None
            },
            reported_acc: median(acc),
            reported_pg: median(gaps),
        });
        pg_runs.push(pg);
    }
    let bws: Option<Vec<f64>> = per_run.iter().map(|m| m.bw).collect();
    let columnwise = |series: &dyn Fn(usize) -> Vec<f64>| -> Vec<f64> {
        (0..rounds).map(|r| median(&series(r))).collect()
    };
    let pg_series = columnwise(&|r| pg_runs.iter().map(|p| p[r]).collect());
    let acc_series = columnwise(&|r| records.iter().map(|rec| rec.global_acc[r]).collect());
    let per_position = if records.iter().all(|r| r.order.is_cyclic()) {
        Some(per_position_accuracy(records)?)
    } else {
        None
    };
    Ok(MetricReport {
        runs: records.len(),
        rounds,
        labels,
        bw: bws.map(|v| Spread::of(&v)),
        pg_series,
        acc_series,
        per_position,
        reported_acc: Spread::of(&pooled_acc),
        reported_pg: Spread::of(&pooled_pg),
        per_run,
    })
}

impl MetricReport {
    /// `round,pg,global_acc`, medians across runs.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("round,pg,global_acc\n");
        for (r, (pg, acc)) in self.pg_series.iter().zip(&self.acc_series).enumerate() {
            out.push_str(&format!("{r},{pg},{acc}\n"));
        }
        out
    }

    /// `position,round,accuracy`, or `None` for non-cyclic runs.
    pub fn per_position_csv(&self) -> Option<String> {
        let pp = self.per_position.as_ref()?;
        let mut out = String::from("position,round,accuracy\n");
        for (k, row) in pp.iter().enumerate() {
            for (r, v) in row.iter().enumerate() {
                out.push_str(&format!("{k},{r},{v}\n"));
            }
        }
        Some(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
