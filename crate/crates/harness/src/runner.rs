//! Running suites and writing their results.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use splitfed::data::Dataset;
use splitfed::metrics::{report, MetricReport};
use splitfed::nn::checkpoint::parts_to_json;
use splitfed::protocols::{run, ExperimentConfig, RunRecord};

use crate::error::{HarnessError, Result};
use crate::suite::{config_hash, DataSource, Suite};

/// Results of one configuration across all seeds.
#[derive(Debug, Clone)]
pub struct ConfigOutcome {
    pub name: String,
    pub hash: String,
    pub records: Vec<RunRecord>,
    pub report: MetricReport,
}

/// Runs every (configuration, seed) pair on `jobs` worker threads and writes
/// all result files under `out`. Configurations are validated before any
/// training starts.
pub fn run_suite(suite: &Suite, out: &Path, jobs: usize) -> Result<Vec<ConfigOutcome>> {
    let data = suite.load_data()?;
    suite.validate(&data)?;
    let digest = suite.data_digest()?;
    let hashes: Vec<String> = suite
        .configs
        .iter()
        .map(|c| config_hash(&c.config, &digest))
        .collect();
    std::fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    let tasks: Vec<(usize, u64)> = (0..suite.configs.len())
        .flat_map(|i| suite.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let records: Vec<RunRecord> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(i, seed)| {
                let named = &suite.configs[i];
                run_one(&named.name, &named.config, &hashes[i], &suite.data, &data, seed, out)
            })
            .collect::<Result<_>>()
    })?;
    let mut outcomes = Vec::with_capacity(suite.configs.len());
    let mut index = String::from("name,config_hash,protocol,runs\n");
    for (i, named) in suite.configs.iter().enumerate() {
        let recs: Vec<RunRecord> = records
            .iter()
            .zip(&tasks)
            .filter(|(_, t)| t.0 == i)
            .map(|(r, _)| r.clone())
            .collect();
        let rep = report(&recs)?;
        write_summary(out, &named.name, &hashes[i], &suite.seeds, &rep)?;
        index.push_str(&format!(
            "{},{},{},{}\n",
            named.name,
            hashes[i],
            protocol_name(&named.config),
            recs.len()
        ));
        outcomes.push(ConfigOutcome {
            name: named.name.clone(),
            hash: hashes[i].clone(),
            records: recs,
            report: rep,
        });
    }
    write_atomic(&out.join("index.csv"), index.as_bytes())?;
    Ok(outcomes)
}

fn protocol_name(config: &ExperimentConfig) -> String {
    serde_json::to_value(config.protocol)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    name: &'a str,
    config_hash: &'a str,
    seed: u64,
    data: &'a DataSource,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct Summary<'a> {
    name: &'a str,
    config_hash: &'a str,
    seeds: &'a [u64],
    #[serde(flatten)]
    report: &'a MetricReport,
}

fn run_one(
    name: &str,
    config: &ExperimentConfig,
    hash: &str,
    source: &DataSource,
    data: &Dataset,
    seed: u64,
    out: &Path,
) -> Result<RunRecord> {
    let output = run(config, data, seed)
        .map_err(|e| HarnessError::Runtime(format!("{name} seed {seed}: {e}")))?;
    let stem = format!("{hash}_{seed}");
    let model_file = format!("{stem}.model.json");
    let mut record = output.record;
    record.config_hash = hash.to_string();
    record.checkpoint = Some(model_file.clone());
    write_atomic(&out.join(&model_file), parts_to_json(&output.model.parts)?.as_bytes())?;
    if let Some(groups) = &output.assignment {
        write_atomic(&out.join(format!("{stem}.groups.json")), &pretty(groups)?)?;
    }
    let echo = ConfigEcho {
        name,
        config_hash: hash,
        seed,
        data: source,
        config,
    };
    write_atomic(&out.join(format!("{stem}.config.json")), &pretty(&echo)?)?;
    write_atomic(&out.join(format!("{stem}.record.json")), &pretty(&record)?)?;
    write_atomic(&out.join(format!("{stem}.per_label.csv")), per_label_csv(&record).as_bytes())?;
    write_atomic(&out.join(format!("{stem}.global.csv")), global_csv(&record).as_bytes())?;
    Ok(record)
}

/// `round,label,per_label_acc`, one row per round and label.
pub fn per_label_csv(record: &RunRecord) -> String {
    let mut out = String::from("round,label,per_label_acc\n");
    for (r, row) in record.per_label_acc.iter().enumerate() {
        for (l, a) in row.iter().enumerate() {
            out.push_str(&format!("{r},{l},{a}\n"));
        }
    }
    out
}

/// `round,global_acc`.
pub fn global_csv(record: &RunRecord) -> String {
    let mut out = String::from("round,global_acc\n");
    for (r, a) in record.global_acc.iter().enumerate() {
        out.push_str(&format!("{r},{a}\n"));
    }
    out
}

fn write_summary(out: &Path, name: &str, hash: &str, seeds: &[u64], rep: &MetricReport) -> Result<()> {
    let summary = Summary {
        name,
        config_hash: hash,
        seeds,
        report: rep,
    };
    write_atomic(&out.join(format!("{hash}.summary.json")), &pretty(&summary)?)?;
    write_atomic(&out.join(format!("{hash}.series.csv")), rep.series_csv().as_bytes())?;
    if let Some(pp) = rep.per_position_csv() {
        write_atomic(&out.join(format!("{hash}.per_position.csv")), pp.as_bytes())?;
    }
    Ok(())
}

/// Loads every record matching `pattern`, in path order.
pub fn load_records(pattern: &str) -> Result<Vec<(PathBuf, RunRecord)>> {
    let paths = glob::glob(pattern).map_err(|e| HarnessError::Config(format!("{pattern}: {e}")))?;
    let mut out = BTreeMap::new();
    for entry in paths {
        let path = entry.map_err(|e| HarnessError::Runtime(e.to_string()))?;
        let text = std::fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
        let record: RunRecord = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
        out.insert(path, record);
    }
    if out.is_empty() {
        return Err(HarnessError::Config(format!("no records match {pattern}")));
    }
    Ok(out.into_iter().collect())
}

/// Writes a report for `records` to `out` (JSON) plus `<stem>.series.csv` and,
/// for cyclic runs, `<stem>.per_position.csv` beside it.
pub fn write_report(records: &[RunRecord], out: &Path) -> Result<MetricReport> {
    let rep = report(records)?;
    write_atomic(out, &pretty(&rep)?)?;
    let sibling = |suffix: &str| {
        let stem = out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        out.with_file_name(format!("{stem}.{suffix}"))
    };
    write_atomic(&sibling("series.csv"), rep.series_csv().as_bytes())?;
    if let Some(pp) = rep.per_position_csv() {
        write_atomic(&sibling("per_position.csv"), pp.as_bytes())?;
    }
    Ok(rep)
}

fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes to a temporary file in the target directory, then renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(HarnessError::io(dir))?;
    tmp.write_all(bytes).map_err(HarnessError::io(path))?;
    tmp.persist(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}
