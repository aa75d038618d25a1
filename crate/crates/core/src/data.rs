//! Datasets and client partitioning.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2D;

/// Labelled samples. Every label in `[0, num_labels)` appears at least once.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor2D,
    labels: Vec<usize>,
    num_labels: usize,
}

impl Dataset {
    pub fn new(features: Tensor2D, labels: Vec<usize>, num_labels: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_labels) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_labels,
            });
        }
        let counts = histogram(&labels, num_labels);
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidParam(format!("label {missing} has no samples")));
        }
        features.ensure_finite("dataset features")?;
        Ok(Self {
            features,
            labels,
            num_labels,
        })
    }

    pub fn features(&self) -> &Tensor2D {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        histogram(&self.labels, self.num_labels)
    }

    /// Features and labels of the given samples, in the given order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor2D, Vec<usize>) {
        (
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Indices of each label's samples, ascending.
    pub fn indices_by_label(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_labels];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    fn subset(&self, indices: &[usize]) -> Result<Self> {
        let (features, labels) = self.batch(indices);
        Self::new(features, labels, self.num_labels)
    }

    /// Per-label random holdout: `round(fraction * n_l)` samples of each label
    /// go to the second set. Returns `(train, holdout)`.
    pub fn holdout<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidParam(format!(
                "holdout fraction {fraction} outside (0, 1)"
            )));
        }
        let mut train = Vec::new();
        let mut held = Vec::new();
        for mut idx in self.indices_by_label() {
            idx.shuffle(rng);
            let k = (fraction * idx.len() as f64).round() as usize;
            if k == 0 || k == idx.len() {
                return Err(Error::InvalidParam(
                    "holdout leaves a label with no train or no eval samples".into(),
                ));
            }
            held.extend_from_slice(&idx[..k]);
            train.extend_from_slice(&idx[k..]);
        }
        train.sort_unstable();
        held.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&held)?))
    }
}

pub fn histogram(labels: &[usize], num_labels: usize) -> Vec<usize> {
    let mut counts = vec![0; num_labels];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Balanced Gaussian blobs: one unit-variance cluster per label, cluster
/// means pairwise `separation` apart (exactly when `labels <= dim`).
pub fn generate_synthetic(
    labels: usize,
    dim: usize,
    per_label: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if labels < 2 || dim < 2 || per_label < 1 {
        return Err(Error::InvalidParam(format!(
            "synthetic data needs labels >= 2, dim >= 2, per_label >= 1 (got {labels}, {dim}, {per_label})"
        )));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(Error::InvalidParam(format!("separation {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..labels)
        .map(|l| {
            if labels <= dim {
                (0..dim).map(|k| if k == l { scale } else { 0.0 }).collect()
            } else {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm * scale).collect()
            }
        })
        .collect();
    let mut data = Vec::with_capacity(labels * per_label * dim);
    let mut ys = Vec::with_capacity(labels * per_label);
    for (l, mean) in means.iter().enumerate() {
        for _ in 0..per_label {
            for m in mean {
                let noise: f64 = rng.sample(StandardNormal);
                data.push(m + noise);
            }
            ys.push(l);
        }
    }
    Dataset::new(Tensor2D::new(ys.len(), dim, data)?, ys, labels)
}

/// Reads `feature,...,feature,label` rows with no header.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let err = |row: usize, msg: String| Error::Csv {
        path: path.to_path_buf(),
        row,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(0, e.to_string()))?;
    let mut width = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| err(row, e.to_string()))?;
        if record.len() < 2 {
            return Err(err(row, "expected at least one feature and a label".into()));
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(err(row, format!("{} columns, expected {w}", record.len())));
            }
            _ => {}
        }
        let n = record.len();
        for (col, field) in record.iter().take(n - 1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| err(row, format!("column {}: {field:?} is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(err(row, format!("column {}: non-finite value", col + 1)));
            }
            data.push(v);
        }
        let field = &record[n - 1];
        let label: usize = field
            .parse()
            .map_err(|_| err(row, format!("label {field:?} is not a class index")))?;
        labels.push(label);
    }
    let Some(width) = width else {
        return Err(err(0, "file is empty".into()));
    };
    let num_labels = labels.iter().max().map_or(0, |m| m + 1);
    let features = Tensor2D::new(labels.len(), width - 1, data)?;
    Dataset::new(features, labels, num_labels)
}

/// Writes the dataset in the format read by [`load_csv`].
pub fn export_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Io(e.into()))?;
    for i in 0..dataset.len() {
        let mut row: Vec<String> = dataset.features.row(i).iter().map(f64::to_string).collect();
        row.push(dataset.labels[i].to_string());
        writer.write_record(&row).map_err(|e| Error::Io(e.into()))?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionMethod {
    Iid,
    /// `p` percent of each label's samples go to the `phi` clients dominant
    /// in it; the rest is spread evenly over all other clients.
    DominantLabel { p: f64, phi: usize },
    Dirichlet { alpha: f64 },
    /// `L` overlapping groups with `n` dominant labels each, `p / n` percent of
    /// each dominant label per group.
    Sharding { p: f64, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub clients: usize,
    pub method: PartitionMethod,
}

impl PartitionSpec {
    pub fn validate(&self, num_labels: usize) -> Result<()> {
        let c = self.clients;
        if c == 0 {
            return Err(Error::InvalidParam("at least one client is required".into()));
        }
        let check_p = |p: f64| {
            if (0.0..=100.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidParam(format!("p={p} outside [0, 100]")))
            }
        };
        match self.method {
            PartitionMethod::Iid => Ok(()),
            PartitionMethod::DominantLabel { p, phi } => {
                check_p(p)?;
                if phi == 0 || phi * num_labels != c {
                    return Err(Error::InvalidParam(format!(
                        "dominant-label partition needs clients = phi * L, got {c} != {phi} * {num_labels}"
                    )));
                }
                Ok(())
            }
            PartitionMethod::Dirichlet { alpha } => {
                if alpha > 0.0 && alpha.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParam(format!("alpha={alpha} must be > 0")))
                }
            }
            PartitionMethod::Sharding { p, n } => {
                check_p(p)?;
                if n < 2 || n > num_labels {
                    return Err(Error::InvalidParam(format!(
                        "sharding needs 2 <= n <= L, got n={n}, L={num_labels}"
                    )));
                }
                if !c.is_multiple_of(num_labels) {
                    return Err(Error::InvalidParam(format!(
                        "sharding needs clients to be a multiple of L, got {c}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// One client's local data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    /// Indices into the partitioned dataset, ascending.
    pub indices: Vec<usize>,
    /// Per-label sample counts.
    pub histogram: Vec<usize>,
    /// Label this client was built to be dominant in, when the method defines one.
    pub dominant_label: Option<usize>,
}

impl ClientShard {
    fn build(client_id: usize, mut indices: Vec<usize>, dataset: &Dataset, dominant: Option<usize>) -> Self {
        indices.sort_unstable();
        let labels: Vec<usize> = indices.iter().map(|&i| dataset.labels[i]).collect();
        Self {
            client_id,
            histogram: histogram(&labels, dataset.num_labels),
            indices,
            dominant_label: dominant,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `{client_id: histogram}` as JSON, keyed by decimal client id.
pub fn partition_report_json(shards: &[ClientShard]) -> Result<String> {
    let map: BTreeMap<usize, &Vec<usize>> =
        shards.iter().map(|s| (s.client_id, &s.histogram)).collect();
    let keyed: BTreeMap<String, &Vec<usize>> =
        map.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    Ok(serde_json::to_string_pretty(&keyed)?)
}

pub fn partition(dataset: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<ClientShard>> {
    let l = dataset.num_labels();
    spec.validate(l)?;
    if dataset.len() < spec.clients {
        return Err(Error::InfeasiblePartition(format!(
            "{} samples for {} clients",
            dataset.len(),
            spec.clients
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = spec.clients;
    let (buckets, dominant): (Vec<Vec<usize>>, Vec<Option<usize>>) = match spec.method {
        PartitionMethod::Iid => (iid(dataset, c, &mut rng), vec![None; c]),
        PartitionMethod::DominantLabel { p, phi } => (
            dominant_label(dataset, c, p, phi, &mut rng),
            (0..c).map(|k| Some(k / phi)).collect(),
        ),
        PartitionMethod::Dirichlet { alpha } => (dirichlet(dataset, c, alpha, &mut rng)?, vec![None; c]),
        PartitionMethod::Sharding { p, n } => {
            let per_group = c / l;
            (
                sharding(dataset, c, p, n, &mut rng),
                (0..c).map(|k| Some(k / per_group)).collect(),
            )
        }
    };
    if let Some(empty) = buckets.iter().position(Vec::is_empty) {
        return Err(Error::InfeasiblePartition(format!("client {empty} receives no samples")));
    }
    Ok(buckets
        .into_iter()
        .zip(dominant)
        .enumerate()
        .map(|(id, (idx, dom))| ClientShard::build(id, idx, dataset, dom))
        .collect())
}

/// Splits `total` into `parts` near-equal counts, extras to the lowest positions.
fn even_counts(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

/// Deals consecutive slices of `pool` to `recipients` with the given counts.
fn deal(pool: &[usize], recipients: &[usize], counts: &[usize], buckets: &mut [Vec<usize>]) {
    let mut at = 0;
    for (&r, &k) in recipients.iter().zip(counts) {
        buckets[r].extend_from_slice(&pool[at..at + k]);
        at += k;
    }
}

fn percent_of(p: f64, n: usize) -> usize {
    ((p * n as f64) / 100.0 + 1e-9).floor().min(n as f64) as usize
}

fn iid<R: Rng + ?Sized>(dataset: &Dataset, c: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut all: Vec<usize> = (0..dataset.len()).collect();
    all.shuffle(rng);
    let mut buckets = vec![Vec::new(); c];
    let recipients: Vec<usize> = (0..c).collect();
    deal(&all, &recipients, &even_counts(all.len(), c), &mut buckets);
    buckets
}

fn dominant_label<R: Rng + ?Sized>(
    dataset: &Dataset,
    c: usize,
    p: f64,
    phi: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut buckets = vec![Vec::new(); c];
    for (label, mut idx) in dataset.indices_by_label().into_iter().enumerate() {
        idx.shuffle(rng);
        let dominant: Vec<usize> = (label * phi..(label + 1) * phi).collect();
        let others: Vec<usize> = (0..c).filter(|k| k / phi != label).collect();
        let k = if others.is_empty() { idx.len() } else { percent_of(p, idx.len()) };
        deal(&idx[..k], &dominant, &even_counts(k, phi), &mut buckets);
        if !others.is_empty() {
            deal(&idx[k..], &others, &even_counts(idx.len() - k, others.len()), &mut buckets);
        }
    }
    buckets
}

fn sharding<R: Rng + ?Sized>(
    dataset: &Dataset,
    c: usize,
    p: f64,
    n: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let l = dataset.num_labels();
    let per_group = c / l;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); l];
    for (label, mut idx) in dataset.indices_by_label().into_iter().enumerate() {
        idx.shuffle(rng);
        // Label `label` is dominant in groups label, label-1, ..., label-n+1 (mod L).
        let mut dominant: Vec<usize> = (0..n).map(|j| (label + l - j) % l).collect();
        dominant.sort_unstable();
        let others: Vec<usize> = (0..l).filter(|g| !dominant.contains(g)).collect();
        let k = if others.is_empty() { idx.len() } else { percent_of(p, idx.len()) };
        deal(&idx[..k], &dominant, &even_counts(k, n), &mut groups);
        if !others.is_empty() {
            deal(&idx[k..], &others, &even_counts(idx.len() - k, others.len()), &mut groups);
        }
    }
    let mut buckets = vec![Vec::new(); c];
    for (g, pool) in groups.into_iter().enumerate() {
        let members: Vec<usize> = (g * per_group..(g + 1) * per_group).collect();
        deal(&pool, &members, &even_counts(pool.len(), per_group), &mut buckets);
    }
    buckets
}

const DIRICHLET_ATTEMPTS: usize = 100;

fn dirichlet<R: Rng + ?Sized>(
    dataset: &Dataset,
    c: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let by_label = dataset.indices_by_label();
    for _ in 0..DIRICHLET_ATTEMPTS {
        let mut buckets = vec![Vec::new(); c];
        let mut degenerate = false;
        for idx in &by_label {
            let mut idx = idx.clone();
            idx.shuffle(rng);
            let draws: Vec<f64> = (0..c).map(|_| gamma.sample(rng)).collect();
            let sum: f64 = draws.iter().sum();
            if !(sum > 0.0 && sum.is_finite()) {
                degenerate = true;
                break;
            }
            let n = idx.len();
            let exact: Vec<f64> = draws.iter().map(|d| d / sum * n as f64).collect();
            let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
            let assigned: usize = counts.iter().sum();
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by(|&a, &b| {
                let fa = exact[a] - exact[a].floor();
                let fb = exact[b] - exact[b].floor();
                fb.total_cmp(&fa).then(a.cmp(&b))
            });
            for &k in order.iter().take(n.saturating_sub(assigned)) {
                counts[k] += 1;
            }
            let recipients: Vec<usize> = (0..c).collect();
            deal(&idx, &recipients, &counts, &mut buckets);
        }
        if !degenerate && buckets.iter().all(|b| !b.is_empty()) {
            return Ok(buckets);
        }
    }
    Err(Error::InfeasiblePartition(format!(
        "dirichlet(alpha={alpha}) left a client empty after {DIRICHLET_ATTEMPTS} draws"
    )))
}
