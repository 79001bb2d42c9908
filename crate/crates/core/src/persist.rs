//! File formats shared by the CLI stages.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detectors::{Detector, PValueMatrix};
use crate::error::{Error, Result};
use crate::eval::{Curve, MethodResult, RankRow};
use crate::series::{CountSeries, OutbreakSpan, SeriesBundle, SeriesEntry};
use crate::stacking::{FeatureMatrix, RowRef, StackDataset};

pub const TARGET_COLUMN: &str = "target";

fn open(path: &Path) -> Result<csv::Reader<File>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(csv::Reader::from_path(path)?)
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = open(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleRow {
    test_case: u32,
    series: u32,
    week: u32,
    count: u64,
    outbreak_active: bool,
    span_id: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleMeta {
    test_case_id: u32,
    baseline_len: usize,
    eval_len: usize,
    series: Vec<SeriesMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SeriesMeta {
    series_id: String,
    origin_week: i64,
    baseline_spans: Vec<OutbreakSpan>,
    eval_spans: Vec<OutbreakSpan>,
}

/// Writes the bundle as a long-format CSV of counts plus a JSON sidecar
/// holding the outbreak spans.
pub fn write_bundle(csv_path: &Path, json_path: &Path, bundle: &SeriesBundle) -> Result<()> {
    let rows = bundle.series.iter().enumerate().flat_map(|(s, e)| {
        e.series.counts().iter().enumerate().map(move |(t, &count)| {
            let span_id = e.active_span(t).map(|i| i as u32);
            BundleRow {
                test_case: bundle.test_case_id,
                series: s as u32,
                week: t as u32,
                count,
                outbreak_active: span_id.is_some(),
                span_id,
            }
        })
    });
    write_rows(csv_path, rows)?;
    let meta = BundleMeta {
        test_case_id: bundle.test_case_id,
        baseline_len: bundle.baseline_len,
        eval_len: bundle.eval_len,
        series: bundle
            .series
            .iter()
            .map(|e| SeriesMeta {
                series_id: e.series.series_id().to_string(),
                origin_week: e.series.origin_week(),
                baseline_spans: e.baseline_spans.clone(),
                eval_spans: e.eval_spans.clone(),
            })
            .collect(),
    };
    write_json(json_path, &meta)
}

pub fn read_bundle(csv_path: &Path, json_path: &Path) -> Result<SeriesBundle> {
    let meta: BundleMeta = read_json(json_path)?;
    let rows: Vec<BundleRow> = read_rows(csv_path)?;
    let n_weeks = meta.baseline_len + meta.eval_len;
    let mut counts = vec![vec![None; n_weeks]; meta.series.len()];
    for r in &rows {
        if r.test_case != meta.test_case_id {
            return Err(Error::Schema(format!(
                "bundle row for test case {} in file of test case {}",
                r.test_case, meta.test_case_id
            )));
        }
        let cell = counts
            .get_mut(r.series as usize)
            .and_then(|c| c.get_mut(r.week as usize))
            .ok_or_else(|| Error::Schema(format!("row (series {}, week {}) out of range", r.series, r.week)))?;
        if cell.replace(r.count).is_some() {
            return Err(Error::Schema(format!("duplicate row (series {}, week {})", r.series, r.week)));
        }
    }
    let mut series = Vec::with_capacity(meta.series.len());
    for (s, (m, c)) in meta.series.into_iter().zip(counts).enumerate() {
        let c = c
            .into_iter()
            .collect::<Option<Vec<u64>>>()
            .ok_or_else(|| Error::Schema(format!("series {s} is missing weeks")))?;
        series.push(SeriesEntry {
            series: CountSeries::with_origin(m.series_id, c, m.origin_week)?,
            baseline_spans: m.baseline_spans,
            eval_spans: m.eval_spans,
        });
    }
    let bundle = SeriesBundle {
        test_case_id: meta.test_case_id,
        series,
        baseline_len: meta.baseline_len,
        eval_len: meta.eval_len,
    };
    bundle.validate()?;
    for r in &rows {
        let expect = bundle.series[r.series as usize].active_span(r.week as usize).map(|i| i as u32);
        if r.span_id != expect || r.outbreak_active != expect.is_some() {
            return Err(Error::Schema(format!(
                "outbreak columns of (series {}, week {}) disagree with the sidecar",
                r.series, r.week
            )));
        }
    }
    Ok(bundle)
}

#[derive(Debug, Serialize, Deserialize)]
struct PValueRow {
    test_case: u32,
    series: u32,
    week: u32,
    detector: Detector,
    p_value: Option<f64>,
    defined: bool,
}

pub fn write_pvalues(path: &Path, test_case: u32, matrices: &[PValueMatrix]) -> Result<()> {
    let rows = matrices.iter().enumerate().flat_map(|(s, pm)| {
        (0..pm.n_weeks()).flat_map(move |t| {
            pm.detectors().iter().enumerate().map(move |(d, &detector)| {
                let p = pm.get(t, d);
                PValueRow {
                    test_case,
                    series: s as u32,
                    week: t as u32,
                    detector,
                    p_value: p,
                    defined: p.is_some(),
                }
            })
        })
    });
    write_rows(path, rows)
}

/// Reads p-values back as `(test_case, one matrix per series)`.
pub fn read_pvalues(path: &Path) -> Result<(u32, Vec<PValueMatrix>)> {
    let rows: Vec<PValueRow> = read_rows(path)?;
    let first = rows.first().ok_or_else(|| Error::Schema("p-value file is empty".into()))?;
    let test_case = first.test_case;
    let mut detectors: Vec<Detector> = Vec::new();
    for r in &rows {
        if !detectors.contains(&r.detector) {
            detectors.push(r.detector);
        }
    }
    let n_series = rows.iter().map(|r| r.series).max().unwrap_or(0) as usize + 1;
    let n_weeks = rows.iter().map(|r| r.week).max().unwrap_or(0) as usize + 1;
    let mut cells: Vec<Vec<Vec<Option<Option<f64>>>>> = vec![vec![vec![None; n_weeks]; detectors.len()]; n_series];
    for r in &rows {
        if r.test_case != test_case {
            return Err(Error::Schema("p-value file mixes test cases".into()));
        }
        if r.defined != r.p_value.is_some() {
            return Err(Error::Schema(format!(
                "defined flag disagrees with p_value at (series {}, week {})",
                r.series, r.week
            )));
        }
        let d = detectors.iter().position(|&x| x == r.detector).expect("collected above");
        let cell = &mut cells[r.series as usize][d][r.week as usize];
        if cell.replace(r.p_value).is_some() {
            return Err(Error::Schema(format!("duplicate p-value at (series {}, week {})", r.series, r.week)));
        }
    }
    let matrices = cells
        .into_iter()
        .enumerate()
        .map(|(s, cols)| {
            let cols = cols
                .into_iter()
                .map(|c| c.into_iter().collect::<Option<Vec<Option<f64>>>>())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Schema(format!("series {s} has missing p-values")))?;
            PValueMatrix::from_columns(detectors.clone(), cols)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((test_case, matrices))
}

/// Writes feature rows with a trailing `target` column, and the row origins
/// to `index_path` as `series,week`.
pub fn write_dataset(path: &Path, index_path: &Path, ds: &StackDataset) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(ds.features.columns().iter().map(String::as_str).chain([TARGET_COLUMN]))?;
    let mut record = Vec::with_capacity(ds.features.n_cols() + 1);
    for (row, y) in ds.features.rows().zip(&ds.targets) {
        record.clear();
        record.extend(row.iter().map(f64::to_string));
        record.push(y.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    write_rows(index_path, ds.index.iter())
}

pub fn read_dataset(path: &Path, index_path: &Path) -> Result<StackDataset> {
    let mut r = open(path)?;
    let header = r.headers()?.clone();
    if header.iter().last() != Some(TARGET_COLUMN) {
        return Err(Error::Schema(format!("dataset must end with a `{TARGET_COLUMN}` column")));
    }
    let columns: Vec<String> = header.iter().take(header.len() - 1).map(String::from).collect();
    let mut values = Vec::new();
    let mut targets = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
        for field in rec.iter().take(columns.len()) {
            values.push(parse(field)?);
        }
        let y = &rec[columns.len()];
        targets.push(y.parse::<u8>().map_err(|e| Error::Parse(format!("target `{y}`: {e}")))?);
    }
    let index: Vec<RowRef> = read_rows(index_path)?;
    StackDataset::new(FeatureMatrix::new(columns, values)?, targets, index)
}

pub fn write_results(path: &Path, results: &[MethodResult]) -> Result<()> {
    write_rows(path, results)
}

pub fn read_results(path: &Path) -> Result<Vec<MethodResult>> {
    read_rows(path)
}

pub fn write_ranks(path: &Path, ranks: &[RankRow]) -> Result<()> {
    write_rows(path, ranks)
}

pub fn read_ranks(path: &Path) -> Result<Vec<RankRow>> {
    read_rows(path)
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow<'a> {
    method: &'a str,
    x: f64,
    y: f64,
}

pub fn write_curves(path: &Path, curves: &[(String, Curve)]) -> Result<()> {
    let rows = curves.iter().flat_map(|(m, c)| {
        c.vertices().iter().map(move |&(x, y)| CurveRow { method: m, x, y })
    });
    write_rows(path, rows)
}

/// One row of the per-k sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerKRow {
    pub method: String,
    pub k: u32,
    pub test_case: u32,
    pub dauc_1pct: f64,
    pub pauc_1pct: f64,
}

pub fn write_per_k(path: &Path, rows: &[PerKRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_per_k(path: &Path) -> Result<Vec<PerKRow>> {
    read_rows(path)
}

/// Hex SHA-256 of the compact JSON encoding of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub timings_s: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new<T: Serialize>(stage: &str, seed: u64, config: &T) -> Result<Self> {
        Ok(Self {
            stage: stage.to_string(),
            seed,
            config_hash: config_hash(config)?,
            config: serde_json::to_value(config)?,
            timings_s: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(format!("manifest_{}.json", self.stage)), self)
    }
}
