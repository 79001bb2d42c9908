//! Training data for the fusion learner.
//!
//! Each week of a series becomes one row. Features are, in order: the mean
//! of the previous `m` counts (optional), the detector outputs of weeks
//! `t-w, ..., t-1`, and the detector outputs of week `t`. Outputs are raw
//! p-values (mode `P`) or alarm indicators `p <= alpha` (mode `S`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detectors::{run_detectors, Detector, DetectorConfig, PValueMatrix};
use crate::error::{Error, Result};
use crate::series::{CountSeries, OutbreakSpan, SeriesBundle};

pub const DEFAULT_ALPHA: f64 = 0.005;
pub const DEFAULT_MEAN_WINDOW: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionMode {
    /// p-value fusion
    P,
    /// standard fusion over binary alarms
    S,
}

/// Which weeks of an outbreak are positive training targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Labeling {
    /// every active week
    O0,
    /// active weeks up to and including the peak
    O1,
    /// O1 weeks whose count strictly exceeds the previous week's
    O2,
    /// the peak only
    O3,
}

impl Labeling {
    pub const ALL: [Labeling; 4] = [Labeling::O0, Labeling::O1, Labeling::O2, Labeling::O3];
}

impl fmt::Display for Labeling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Labeling::O0 => "O0",
            Labeling::O1 => "O1",
            Labeling::O2 => "O2",
            Labeling::O3 => "O3",
        };
        f.write_str(s)
    }
}

impl FromStr for Labeling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "O0" | "o0" | "O₀" => Ok(Labeling::O0),
            "O1" | "o1" | "O₁" => Ok(Labeling::O1),
            "O2" | "o2" | "O₂" => Ok(Labeling::O2),
            "O3" | "o3" | "O₃" => Ok(Labeling::O3),
            other => Err(Error::Parse(format!("unknown labeling '{other}'"))),
        }
    }
}

/// A fusion configuration, written `M(a,o,w)`: e.g. `P(mu,O3,1)` or
/// `S(~mu,O0,0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub alpha: f64,
    pub include_mean: bool,
    pub mean_window: usize,
    pub window: usize,
    pub labeling: Labeling,
}

impl FusionConfig {
    pub fn new(mode: FusionMode, include_mean: bool, labeling: Labeling, window: usize) -> Self {
        Self {
            mode,
            alpha: DEFAULT_ALPHA,
            include_mean,
            mean_window: DEFAULT_MEAN_WINDOW,
            window,
            labeling,
        }
    }

    /// File-system friendly name, e.g. `P_mu_O3_w1`.
    pub fn slug(&self) -> String {
        let mode = match self.mode {
            FusionMode::P => "P",
            FusionMode::S => "S",
        };
        let mean = if self.include_mean { "mu" } else { "nomu" };
        format!("{mode}_{mean}_{}_w{}", self.labeling, self.window)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.include_mean && self.mean_window == 0 {
            return Err(Error::domain("mean window must be at least 1"));
        }
        Ok(())
    }
}

impl fmt::Display for FusionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            FusionMode::P => 'P',
            FusionMode::S => 'S',
        };
        let mean = if self.include_mean { "mu" } else { "~mu" };
        write!(f, "{mode}({mean},{},{})", self.labeling, self.window)
    }
}

impl FromStr for FusionConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = || Error::Parse(format!("expected M(a,o,w) such as P(mu,O3,1), got '{s}'"));
        let s = s.trim();
        let open = s.find('(').ok_or_else(err)?;
        let inner = s[open + 1..].strip_suffix(')').ok_or_else(err)?;
        let mode = match s[..open].trim() {
            "P" | "p" => FusionMode::P,
            "S" | "s" => FusionMode::S,
            _ => return Err(err()),
        };
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        let [mean, labeling, window] = parts[..] else {
            return Err(err());
        };
        let include_mean = match mean {
            "mu" | "μ" | "mean" => true,
            "~mu" | "!mu" | "-mu" | "nomu" | "¬mu" | "¬μ" | "~μ" => false,
            _ => return Err(err()),
        };
        let labeling = labeling.parse()?;
        let window = window.parse::<usize>().map_err(|_| err())?;
        Ok(FusionConfig::new(mode, include_mean, labeling, window))
    }
}

/// Per-week 0/1 targets for `counts` under `strategy`.
pub fn label_outbreaks(counts: &[u64], spans: &[OutbreakSpan], strategy: Labeling) -> Vec<u8> {
    let mut labels = vec![0u8; counts.len()];
    for span in spans {
        for week in span.active_weeks() {
            let positive = match strategy {
                Labeling::O0 => true,
                Labeling::O1 => week <= span.peak_week,
                Labeling::O2 => {
                    let prev = if week == 0 { 0 } else { counts[week - 1] };
                    week <= span.peak_week && counts[week] > prev
                }
                Labeling::O3 => week == span.peak_week,
            };
            if positive && week < labels.len() {
                labels[week] = 1;
            }
        }
    }
    labels
}

/// Row-major feature matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    columns: Vec<String>,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Schema("feature matrix needs at least one column".into()));
        }
        if values.len() % columns.len() != 0 {
            return Err(Error::Schema(format!(
                "{} values do not fill rows of {} columns",
                values.len(),
                columns.len()
            )));
        }
        Ok(Self { columns, values })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_cols();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_cols())
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }

    fn extend(&mut self, other: FeatureMatrix) -> Result<()> {
        if other.columns != self.columns {
            return Err(Error::Schema("cannot append rows with a different schema".into()));
        }
        self.values.extend(other.values);
        Ok(())
    }
}

/// Column names for `detectors` under `config`.
pub fn feature_columns(detectors: &[Detector], config: &FusionConfig) -> Vec<String> {
    let mut cols = Vec::new();
    if config.include_mean {
        cols.push("mean".to_string());
    }
    for lag in (0..=config.window).rev() {
        for d in detectors {
            cols.push(format!("{}_lag{lag}", d.name()));
        }
    }
    cols
}

/// Mean of the `m` counts before week `t`; shorter history averages what
/// exists, week 0 gets 0.
fn trailing_mean(counts: &[u64], t: usize, m: usize) -> f64 {
    let lo = t.saturating_sub(m);
    if lo == t {
        return 0.0;
    }
    counts[lo..t].iter().sum::<u64>() as f64 / (t - lo) as f64
}

/// One feature row per week of `series`.
pub fn build_features(pmatrix: &PValueMatrix, series: &CountSeries, config: &FusionConfig) -> Result<FeatureMatrix> {
    build_feature_rows(pmatrix, series, config, 0..series.len())
}

fn build_feature_rows(
    pmatrix: &PValueMatrix,
    series: &CountSeries,
    config: &FusionConfig,
    weeks: std::ops::Range<usize>,
) -> Result<FeatureMatrix> {
    config.validate()?;
    if pmatrix.n_weeks() != series.len() {
        return Err(Error::Schema(format!(
            "p-value matrix covers {} weeks, series has {}",
            pmatrix.n_weeks(),
            series.len()
        )));
    }
    let columns = feature_columns(pmatrix.detectors(), config);
    let k = pmatrix.detectors().len();
    let missing = match config.mode {
        FusionMode::P => 1.0,
        FusionMode::S => 0.0,
    };
    let output = |week: Option<usize>, d: usize| -> f64 {
        match week.and_then(|w| pmatrix.get(w, d)) {
            None => missing,
            Some(p) => match config.mode {
                FusionMode::P => p,
                FusionMode::S => {
                    if p <= config.alpha {
                        1.0
                    } else {
                        0.0
                    }
                }
            },
        }
    };
    let mut values = Vec::with_capacity(weeks.len() * columns.len());
    for t in weeks {
        if config.include_mean {
            values.push(trailing_mean(series.counts(), t, config.mean_window));
        }
        for lag in (0..=config.window).rev() {
            let week = t.checked_sub(lag);
            for d in 0..k {
                values.push(output(week, d));
            }
        }
    }
    FeatureMatrix::new(columns, values)
}

/// `(series, week)` origin of a dataset row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowRef {
    pub series: u32,
    pub week: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackDataset {
    pub features: FeatureMatrix,
    pub targets: Vec<u8>,
    pub index: Vec<RowRef>,
}

impl StackDataset {
    pub fn new(features: FeatureMatrix, targets: Vec<u8>, index: Vec<RowRef>) -> Result<Self> {
        if features.n_rows() != targets.len() || targets.len() != index.len() {
            return Err(Error::Schema(format!(
                "dataset parts disagree: {} feature rows, {} targets, {} index rows",
                features.n_rows(),
                targets.len(),
                index.len()
            )));
        }
        if targets.iter().any(|&y| y > 1) {
            return Err(Error::invalid("targets must be 0 or 1"));
        }
        Ok(Self {
            features,
            targets,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.targets.iter().filter(|&&y| y == 1).count()
    }
}

/// Runs the detectors on each full series of the bundle.
pub fn detect_bundle(bundle: &SeriesBundle, detectors: &[Detector], det_config: &DetectorConfig) -> Vec<PValueMatrix> {
    bundle
        .series
        .iter()
        .map(|e| run_detectors(&e.series, detectors, det_config))
        .collect()
}

/// Builds the training set (baseline window, labels per `config.labeling`)
/// and the evaluation set (evaluation window, labels = every active week).
pub fn assemble(
    bundle: &SeriesBundle,
    detectors: &[Detector],
    det_config: &DetectorConfig,
    config: &FusionConfig,
) -> Result<(StackDataset, StackDataset)> {
    let pmatrices = detect_bundle(bundle, detectors, det_config);
    assemble_with(bundle, &pmatrices, config)
}

/// As [`assemble`], reusing p-value matrices computed per series.
pub fn assemble_with(
    bundle: &SeriesBundle,
    pmatrices: &[PValueMatrix],
    config: &FusionConfig,
) -> Result<(StackDataset, StackDataset)> {
    if pmatrices.len() != bundle.series.len() {
        return Err(Error::Schema(format!(
            "{} p-value matrices for {} series",
            pmatrices.len(),
            bundle.series.len()
        )));
    }
    let detectors = pmatrices.first().map(|p| p.detectors().to_vec()).unwrap_or_default();
    let columns = feature_columns(&detectors, config);
    let total = bundle.total_len();
    let split = bundle.baseline_len;

    let mut parts = [
        (FeatureMatrix { columns: columns.clone(), values: Vec::new() }, Vec::new(), Vec::new()),
        (FeatureMatrix { columns, values: Vec::new() }, Vec::new(), Vec::new()),
    ];
    for (s, (entry, pm)) in bundle.series.iter().zip(pmatrices).enumerate() {
        if pm.detectors() != detectors.as_slice() {
            return Err(Error::Schema("p-value matrices use different detector sets".into()));
        }
        let counts = entry.series.counts();
        let train_labels = label_outbreaks(counts, &entry.baseline_spans, config.labeling);
        let eval_labels = label_outbreaks(counts, &entry.eval_spans, Labeling::O0);
        for (part, weeks, labels) in [(0, 0..split, &train_labels), (1, split..total, &eval_labels)] {
            let (features, targets, index) = &mut parts[part];
            features.extend(build_feature_rows(pm, &entry.series, config, weeks.clone())?)?;
            targets.extend(weeks.clone().map(|t| labels[t]));
            index.extend(weeks.map(|t| RowRef {
                series: s as u32,
                week: t as u32,
            }));
        }
    }
    let [(ft, yt, it), (fe, ye, ie)] = parts;
    Ok((StackDataset::new(ft, yt, it)?, StackDataset::new(fe, ye, ie)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::TailConvention;

    #[test]
    fn notation_round_trip() {
        for text in ["P(mu,O3,1)", "S(~mu,O0,0)", "P(~mu,O2,12)"] {
            let cfg: FusionConfig = text.parse().unwrap();
            assert_eq!(cfg.to_string(), text);
        }
        let cfg: FusionConfig = "P(¬μ, O₃, 4)".parse().unwrap();
        assert_eq!(cfg, FusionConfig::new(FusionMode::P, false, Labeling::O3, 4));
        assert!("Q(mu,O3,1)".parse::<FusionConfig>().is_err());
        assert!("P(mu,O4,1)".parse::<FusionConfig>().is_err());
        assert!("P(mu,O3)".parse::<FusionConfig>().is_err());
    }

    #[test]
    fn labeling_example() {
        // active weeks 10..15 with counts (1,2,5,9,4,2), c9 = 1
        let mut counts = vec![0u64; 20];
        counts[9] = 1;
        counts[10..16].copy_from_slice(&[1, 2, 5, 9, 4, 2]);
        let span = OutbreakSpan::new(10, vec![1, 2, 5, 9, 4, 2], 1.0, &counts).unwrap();
        let weeks = |l: Labeling| -> Vec<usize> {
            let y = label_outbreaks(&counts, std::slice::from_ref(&span), l);
            (0..y.len()).filter(|&t| y[t] == 1).collect()
        };
        assert_eq!(weeks(Labeling::O0), (10..16).collect::<Vec<_>>());
        assert_eq!(weeks(Labeling::O1), vec![10, 11, 12, 13]);
        assert_eq!(weeks(Labeling::O2), vec![11, 12, 13]);
        assert_eq!(weeks(Labeling::O3), vec![13]);
    }

    #[test]
    fn single_week_outbreak() {
        let counts = vec![3, 4, 2];
        let span = OutbreakSpan::new(1, vec![2], 1.0, &counts).unwrap();
        let spans = [span];
        for l in [Labeling::O0, Labeling::O1, Labeling::O2, Labeling::O3] {
            assert_eq!(label_outbreaks(&counts, &spans, l), vec![0, 1, 0]);
        }
        let counts = vec![5, 4, 2];
        let span = OutbreakSpan::new(1, vec![2], 1.0, &counts).unwrap();
        assert_eq!(label_outbreaks(&counts, &[span], Labeling::O2), vec![0, 0, 0]);
    }

    fn flat_pmatrix(n: usize, p: f64) -> (PValueMatrix, CountSeries) {
        let series = CountSeries::new("s", vec![1; n]).unwrap();
        let cols = vec![vec![Some(p); n], vec![None; n]];
        (PValueMatrix::from_columns(vec![Detector::C1, Detector::Rki], cols).unwrap(), series)
    }

    #[test]
    fn shape_without_extras() {
        let (pm, s) = flat_pmatrix(5, 0.3);
        let cfg = FusionConfig::new(FusionMode::P, false, Labeling::O0, 0);
        let fm = build_features(&pm, &s, &cfg).unwrap();
        assert_eq!(fm.n_cols(), 2);
        assert_eq!(fm.n_rows(), 5);
        // undefined RKI cells are imputed as "no evidence"
        assert_eq!(fm.row(2), &[0.3, 1.0]);
    }

    #[test]
    fn alarm_threshold_is_inclusive() {
        for (p, want) in [(0.004, 1.0), (0.005, 1.0), (0.006, 0.0)] {
            let (pm, s) = flat_pmatrix(3, p);
            let cfg = FusionConfig::new(FusionMode::S, false, Labeling::O0, 1);
            let fm = build_features(&pm, &s, &cfg).unwrap();
            assert_eq!(fm.columns(), &["C1_lag1", "RKI_lag1", "C1_lag0", "RKI_lag0"]);
            // week 0 has no lag-1 output -> 0 in mode S
            assert_eq!(fm.row(0), &[0.0, 0.0, want, 0.0]);
            assert_eq!(fm.row(2), &[want, 0.0, want, 0.0]);
        }
    }

    #[test]
    fn trailing_mean_short_history() {
        let counts = [4, 2, 6, 8];
        assert_eq!(trailing_mean(&counts, 0, 7), 0.0);
        assert_eq!(trailing_mean(&counts, 2, 7), 3.0);
        assert_eq!(trailing_mean(&counts, 4, 2), 7.0);
    }

    #[test]
    fn worked_example_row() {
        // weeks 30..43 of the worked example; m = 4 with exclusive tails
        let counts = vec![2, 1, 0, 1, 0, 1, 0, 5, 3, 10, 7, 4, 1, 0];
        let series = CountSeries::with_origin("example", counts, 30).unwrap();
        let det = DetectorConfig {
            window: 4,
            tail: TailConvention::Exclusive,
            ..DetectorConfig::default()
        };
        let pm = run_detectors(&series, &[Detector::Rki, Detector::Bayes], &det);
        let mut cfg = FusionConfig::new(FusionMode::P, true, Labeling::O0, 1);
        cfg.mean_window = 4;
        let fm = build_features(&pm, &series, &cfg).unwrap();
        let row: Vec<f64> = fm.row(39 - 30).iter().map(|v| (v * 100.0).round() / 100.0).collect();
        assert_eq!(row, vec![2.25, 0.14, 0.10, 0.0, 0.0]);
        assert_eq!(fm.columns(), &["mean", "RKI_lag1", "Bayes_lag1", "RKI_lag0", "Bayes_lag0"]);
    }
}
