//! Synthetic benchmark: seasonal/trending negative-binomial baselines with
//! injected outbreaks.
//!
//! A test case is generated as 100 series of 624 weeks. The first 575 weeks
//! (baseline window) receive four non-overlapping outbreaks, the last 49 weeks
//! (evaluation window) exactly one. An outbreak of size parameter `k` starting
//! at week `s` draws `N ~ Poisson(k * sd(s))` cases, where `sd(s)` is the
//! theoretical baseline standard deviation at `s`, and places each case at
//! `s + floor(d)` with `d ~ LogNormal(0, 0.5)`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_stream, RngStream, StreamId};
use crate::series::{CountSeries, OutbreakSpan, SeriesBundle, SeriesEntry, BASELINE_OUTBREAKS, BASELINE_WEEKS, EVAL_WEEKS};

pub const SERIES_PER_CASE: usize = 100;
pub const SERIES_WEEKS: usize = BASELINE_WEEKS + EVAL_WEEKS;
/// Baseline outbreak starts: first week with a full detector history.
pub const BASELINE_START_RANGE: (usize, usize) = (56, 570);
pub const EVAL_START_RANGE: (usize, usize) = (575, 620);
pub const MAX_ATTEMPTS: usize = 1000;
const DELAY_SIGMA: f64 = 0.5;
const WEEKS_PER_YEAR: f64 = 52.0;

/// Default 42-case grid shipped with the crate.
pub const DEFAULT_GRID_JSON: &str = include_str!("../configs/default_grid.json");

/// How the outbreak size parameter `k` is chosen for each outbreak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMode {
    /// Uniform integer in `1..=10`, drawn per outbreak.
    #[default]
    Uniform,
    Fixed(u32),
}

impl KMode {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            KMode::Uniform => rng.random_range(1..=10u32) as f64,
            KMode::Fixed(k) => k as f64,
        }
    }
}

impl std::str::FromStr for KMode {
    type Err = Error;

    /// Parses `uniform` or `fixed:<int>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("uniform") {
            return Ok(KMode::Uniform);
        }
        let k = s
            .strip_prefix("fixed:")
            .and_then(|v| v.trim().parse::<u32>().ok())
            .filter(|&k| k > 0)
            .ok_or_else(|| Error::Parse(format!("expected 'uniform' or 'fixed:<positive int>', got '{s}'")))?;
        Ok(KMode::Fixed(k))
    }
}

impl std::fmt::Display for KMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KMode::Uniform => f.write_str("uniform"),
            KMode::Fixed(k) => write!(f, "fixed:{k}"),
        }
    }
}

/// Trend / annual / biannual flags of a test case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Structure {
    pub trend: bool,
    pub seasonal: bool,
    pub biannual: bool,
}

impl Structure {
    /// The six combinations used by the benchmark, in reporting order.
    pub const ALL: [Structure; 6] = [
        Structure::new(false, false, false),
        Structure::new(false, true, false),
        Structure::new(false, true, true),
        Structure::new(true, false, false),
        Structure::new(true, true, false),
        Structure::new(true, true, true),
    ];

    pub const fn new(trend: bool, seasonal: bool, biannual: bool) -> Self {
        Self {
            trend,
            seasonal,
            biannual,
        }
    }

    /// Compact label such as `~T/S1/~S2`.
    pub fn label(&self) -> String {
        let flag = |on: bool, name: &str| if on { name.to_string() } else { format!("~{name}") };
        format!("{}/{}/{}", flag(self.trend, "T"), flag(self.seasonal, "S1"), flag(self.biannual, "S2"))
    }
}

/// Parameters of one test case. The log-mean is
/// `theta + beta*t + g0 cos(2 pi t/52) + g1 sin(2 pi t/52) + g2 cos(4 pi t/52) + g3 sin(4 pi t/52)`
/// and counts have variance `phi * mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCaseSpec {
    pub id: u32,
    pub trend: bool,
    pub seasonal: bool,
    pub biannual: bool,
    pub theta: f64,
    pub beta: f64,
    pub gamma: [f64; 4],
    pub phi: f64,
    #[serde(default)]
    pub k_mode: KMode,
}

impl TestCaseSpec {
    pub fn structure(&self) -> Structure {
        Structure::new(self.trend, self.seasonal, self.biannual)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = self.theta.is_finite() && self.beta.is_finite() && self.gamma.iter().all(|g| g.is_finite());
        if !all_finite {
            return Err(Error::invalid(format!("test case {}: non-finite coefficient", self.id)));
        }
        if !(self.phi >= 1.0) || !self.phi.is_finite() {
            return Err(Error::invalid(format!("test case {}: dispersion must be >= 1", self.id)));
        }
        if !self.trend && self.beta != 0.0 {
            return Err(Error::invalid(format!("test case {}: trend coefficient set without trend flag", self.id)));
        }
        if !self.seasonal && (self.gamma[0] != 0.0 || self.gamma[1] != 0.0) {
            return Err(Error::invalid(format!("test case {}: annual terms set without seasonal flag", self.id)));
        }
        if !self.biannual && (self.gamma[2] != 0.0 || self.gamma[3] != 0.0) {
            return Err(Error::invalid(format!("test case {}: biannual terms set without biannual flag", self.id)));
        }
        if let KMode::Fixed(0) = self.k_mode {
            return Err(Error::invalid(format!("test case {}: fixed k must be positive", self.id)));
        }
        Ok(())
    }

    /// Expected baseline count at week `t`.
    pub fn baseline_mean(&self, t: usize) -> f64 {
        let t = t as f64;
        let w = 2.0 * PI * t / WEEKS_PER_YEAR;
        let g = &self.gamma;
        (self.theta + self.beta * t + g[0] * w.cos() + g[1] * w.sin() + g[2] * (2.0 * w).cos() + g[3] * (2.0 * w).sin())
            .exp()
    }

    /// Theoretical baseline standard deviation at week `t`.
    pub fn baseline_sd(&self, t: usize) -> f64 {
        (self.phi * self.baseline_mean(t)).sqrt()
    }
}

/// The list of test cases driving an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub test_cases: Vec<TestCaseSpec>,
}

impl Grid {
    pub fn default_grid() -> Self {
        Self::from_json(DEFAULT_GRID_JSON).expect("bundled grid is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let grid: Grid = serde_json::from_str(text)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.test_cases.is_empty() {
            return Err(Error::invalid("grid has no test cases"));
        }
        let mut ids: Vec<u32> = self.test_cases.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("grid contains duplicate test case ids"));
        }
        self.test_cases.iter().try_for_each(TestCaseSpec::validate)
    }

    /// Copy of the grid with every test case switched to `k_mode`.
    pub fn with_k_mode(&self, k_mode: KMode) -> Self {
        let mut grid = self.clone();
        for tc in &mut grid.test_cases {
            tc.k_mode = k_mode;
        }
        grid
    }
}

/// Draws one count with mean `mu` and variance `phi * mu` (Poisson when
/// `phi == 1`, otherwise a gamma-Poisson mixture).
fn draw_count<R: Rng + ?Sized>(mu: f64, phi: f64, rng: &mut R) -> u64 {
    let lambda = if phi > 1.0 {
        let shape = mu / (phi - 1.0);
        Gamma::new(shape, phi - 1.0).expect("positive gamma parameters").sample(rng)
    } else {
        mu
    };
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive Poisson mean").sample(rng) as u64
}

/// Samples the 624-week outbreak-free baseline of a test case.
pub fn sample_baseline(spec: &TestCaseSpec, rng: &mut RngStream, series_id: impl Into<String>) -> CountSeries {
    let counts = (0..SERIES_WEEKS)
        .map(|t| draw_count(spec.baseline_mean(t), spec.phi, rng))
        .collect();
    CountSeries::new(series_id, counts).expect("non-empty")
}

/// Adds one outbreak starting at `start_week` to `counts`.
///
/// Cases landing at or after `end_week` are discarded; the draw is repeated
/// until at least one case lands inside `[start_week, end_week)`.
pub fn inject_outbreak<R: Rng + ?Sized>(
    counts: &[u64],
    spec: &TestCaseSpec,
    start_week: usize,
    end_week: usize,
    k: f64,
    rng: &mut R,
) -> Result<(Vec<u64>, OutbreakSpan)> {
    if start_week >= end_week || end_week > counts.len() {
        return Err(Error::domain(format!(
            "outbreak start {start_week} outside window ending at {end_week} (series length {})",
            counts.len()
        )));
    }
    if !(k > 0.0) {
        return Err(Error::domain(format!("outbreak size parameter must be > 0, got {k}")));
    }
    let mean_cases = k * spec.baseline_sd(start_week);
    let size_dist = Poisson::new(mean_cases).map_err(|e| Error::domain(format!("outbreak size: {e}")))?;
    let delay_dist = LogNormal::new(0.0, DELAY_SIGMA).expect("valid log-normal");
    let capacity = end_week - start_week;
    for _ in 0..MAX_ATTEMPTS {
        let n = size_dist.sample(rng) as u64;
        let mut per_week = vec![0u64; capacity];
        for _ in 0..n {
            let delay = delay_dist.sample(rng).floor() as usize;
            if delay < capacity {
                per_week[delay] += 1;
            }
        }
        let Some(last) = per_week.iter().rposition(|&c| c > 0) else {
            continue;
        };
        per_week.truncate(last + 1);
        let mut out = counts.to_vec();
        for (i, &c) in per_week.iter().enumerate() {
            out[start_week + i] += c;
        }
        let span = OutbreakSpan::new(start_week, per_week, k, &out)?;
        return Ok((out, span));
    }
    Err(Error::Generation(format!(
        "no outbreak case landed in the window after {MAX_ATTEMPTS} draws (mean size {mean_cases})"
    )))
}

fn overlaps(a: &OutbreakSpan, b: &OutbreakSpan) -> bool {
    a.start_week <= b.end_week() && b.start_week <= a.end_week()
}

/// Generates `n_series` series for one test case.
pub fn generate_bundle(spec: &TestCaseSpec, n_series: usize, seed: u64) -> Result<SeriesBundle> {
    spec.validate()?;
    let series = (0..n_series)
        .map(|s| generate_series(spec, s as u32, seed))
        .collect::<Result<Vec<_>>>()?;
    let bundle = SeriesBundle {
        test_case_id: spec.id,
        series,
        baseline_len: BASELINE_WEEKS,
        eval_len: EVAL_WEEKS,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn generate_series(spec: &TestCaseSpec, index: u32, seed: u64) -> Result<SeriesEntry> {
    let mut base_rng = derive_stream(seed, StreamId::new(spec.id, index, "baseline"));
    let mut rng = derive_stream(seed, StreamId::new(spec.id, index, "outbreaks"));
    let baseline = sample_baseline(spec, &mut base_rng, format!("tc{}-s{}", spec.id, index));
    let mut counts = baseline.counts().to_vec();

    let mut baseline_spans: Vec<OutbreakSpan> = Vec::with_capacity(BASELINE_OUTBREAKS);
    let mut attempts = 0;
    while baseline_spans.len() < BASELINE_OUTBREAKS {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::Generation(format!(
                "test case {} series {index}: could not place {BASELINE_OUTBREAKS} disjoint outbreaks",
                spec.id
            )));
        }
        let start = rng.random_range(BASELINE_START_RANGE.0..=BASELINE_START_RANGE.1);
        let k = spec.k_mode.draw(&mut rng);
        let (next, span) = inject_outbreak(&counts, spec, start, BASELINE_WEEKS, k, &mut rng)?;
        if baseline_spans.iter().any(|s| overlaps(s, &span)) {
            continue;
        }
        counts = next;
        baseline_spans.push(span);
    }
    baseline_spans.sort_by_key(|s| s.start_week);

    let start = rng.random_range(EVAL_START_RANGE.0..=EVAL_START_RANGE.1);
    let k = spec.k_mode.draw(&mut rng);
    let (counts, eval_span) = inject_outbreak(&counts, spec, start, SERIES_WEEKS, k, &mut rng)?;

    Ok(SeriesEntry {
        series: CountSeries::new(baseline.series_id(), counts)?,
        baseline_spans,
        eval_spans: vec![eval_span],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn flat_spec(mean: f64, phi: f64) -> TestCaseSpec {
        TestCaseSpec {
            id: 0,
            trend: false,
            seasonal: false,
            biannual: false,
            theta: mean.ln(),
            beta: 0.0,
            gamma: [0.0; 4],
            phi,
            k_mode: KMode::Uniform,
        }
    }

    #[test]
    fn flat_mean_is_constant() {
        let spec = flat_spec(5.0, 1.0);
        for t in [0, 1, 100, 623] {
            assert!((spec.baseline_mean(t) - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trend_is_increasing() {
        let mut spec = flat_spec(5.0, 1.0);
        spec.trend = true;
        spec.beta = 0.001;
        assert!((0..623).all(|t| spec.baseline_mean(t + 1) > spec.baseline_mean(t)));
    }

    #[test]
    fn annual_season_repeats_every_52_weeks() {
        let mut spec = flat_spec(5.0, 1.0);
        spec.seasonal = true;
        spec.gamma = [0.6, 0.3, 0.0, 0.0];
        for t in 0..500 {
            let a = spec.baseline_mean(t);
            let b = spec.baseline_mean(t + 52);
            assert!((a - b).abs() < 1e-9 * a, "t={t}");
        }
    }

    #[test]
    fn spec_flag_consistency() {
        let mut spec = flat_spec(5.0, 1.0);
        spec.beta = 0.01;
        assert!(spec.validate().is_err());
        let mut spec = flat_spec(5.0, 0.5);
        assert!(spec.validate().is_err());
        spec.phi = 1.0;
        spec.gamma[3] = 0.2;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn k_mode_parsing() {
        assert_eq!("uniform".parse::<KMode>().unwrap(), KMode::Uniform);
        assert_eq!("fixed:6".parse::<KMode>().unwrap(), KMode::Fixed(6));
        assert!("fixed:0".parse::<KMode>().is_err());
        assert!("fixed".parse::<KMode>().is_err());
        assert_eq!(KMode::Fixed(3).to_string(), "fixed:3");
    }

    #[test]
    fn injection_is_additive() {
        let spec = flat_spec(5.0, 1.0);
        let mut rng = derive_stream(9, StreamId::new(0, 0, "test"));
        let base = sample_baseline(&spec, &mut rng, "s");
        let (out, span) = inject_outbreak(base.counts(), &spec, 100, SERIES_WEEKS, 4.0, &mut rng).unwrap();
        for (t, (&o, &b)) in out.iter().zip(base.counts()).enumerate() {
            let injected = if t >= span.start_week && t <= span.end_week() {
                span.injected_cases[t - span.start_week]
            } else {
                0
            };
            assert_eq!(o - b, injected, "week {t}");
        }
        assert!(span.is_active(span.peak_week));
    }

    #[test]
    fn injection_truncates_at_window_end() {
        let spec = flat_spec(50.0, 1.0);
        let mut rng = derive_stream(3, StreamId::new(0, 0, "test"));
        let counts = vec![0u64; 30];
        for _ in 0..200 {
            let (_, span) = inject_outbreak(&counts, &spec, 28, 30, 10.0, &mut rng).unwrap();
            assert!(span.end_week() < 30);
        }
    }

    #[test]
    fn bundle_shape() {
        let spec = flat_spec(5.0, 1.0);
        let bundle = generate_bundle(&spec, 100, 11).unwrap();
        assert_eq!(bundle.series.len(), 100);
        let baseline_weeks: usize = bundle.series.iter().map(|_| bundle.baseline_len).sum();
        assert_eq!(baseline_weeks, 57_500);
        let baseline_outbreaks: usize = bundle.series.iter().map(|e| e.baseline_spans.len()).sum();
        assert_eq!(baseline_outbreaks, 400);
        let eval_outbreaks: usize = bundle.series.iter().map(|e| e.eval_spans.len()).sum();
        assert_eq!(eval_outbreaks, 100);
        for e in &bundle.series {
            assert_eq!(e.series.len(), 624);
            assert!(e.eval_spans[0].active_weeks().all(|w| (575..624).contains(&w)));
        }
    }

    #[test]
    fn bundle_is_deterministic() {
        let spec = flat_spec(3.0, 2.0);
        let a = generate_bundle(&spec, 5, 42).unwrap();
        let b = generate_bundle(&spec, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_bundle(&spec, 5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_grid_partitions_structures() {
        let grid = Grid::default_grid();
        assert_eq!(grid.test_cases.len(), 42);
        for s in Structure::ALL {
            assert_eq!(grid.test_cases.iter().filter(|t| t.structure() == s).count(), 7, "{}", s.label());
        }
        for tc in &grid.test_cases {
            let growth = tc.baseline_mean(623) / tc.baseline_mean(0);
            let trend_growth = (tc.beta * 623.0).exp();
            assert!(trend_growth <= 3.0 + 1e-9, "tc {} grows {growth}", tc.id);
            assert!(tc.phi == 1.0 || tc.phi == 2.0);
            for g in tc.gamma.iter().filter(|g| **g != 0.0) {
                assert!((0.2..=1.0).contains(g));
            }
        }
    }
}
