//! Statistical surveillance detectors. Each fits a null distribution to the
//! `m` reference counts preceding a week and reports the one-tailed p-value of
//! the observed count.

pub mod dist;
pub mod window;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::CountSeries;

pub use dist::{gaussian_upper_tail, negbin_upper_tail, poisson_upper_tail};
pub use window::{window_stats, VarianceDivisor, WindowStats};

use window::window_stats_with;

/// Threshold on the window mean above which RKI switches to the Gaussian.
pub const RKI_POISSON_LIMIT: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Detector {
    C1,
    C2,
    C3,
    Bayes,
    #[serde(rename = "RKI")]
    Rki,
}

impl Detector {
    pub const ALL: [Detector; 5] = [Detector::C1, Detector::C2, Detector::C3, Detector::Bayes, Detector::Rki];

    pub fn name(self) -> &'static str {
        match self {
            Detector::C1 => "C1",
            Detector::C2 => "C2",
            Detector::C3 => "C3",
            Detector::Bayes => "Bayes",
            Detector::Rki => "RKI",
        }
    }

    /// Smallest week index with a defined p-value.
    pub fn min_history(self, m: usize) -> usize {
        match self {
            Detector::C1 | Detector::Bayes | Detector::Rki => m,
            Detector::C2 => m + 2,
            Detector::C3 => m + 4,
        }
    }

    pub fn p_value(self, series: &CountSeries, t: usize, config: &DetectorConfig) -> Result<f64> {
        self.p_value_counts(series.counts(), t, config)
    }

    fn p_value_counts(self, counts: &[u64], t: usize, cfg: &DetectorConfig) -> Result<f64> {
        let m = cfg.window;
        let required = self.min_history(m);
        if t < required {
            return Err(Error::InsufficientHistory { week: t, required });
        }
        if t >= counts.len() {
            return Err(Error::domain(format!("week {t} outside a {}-week series", counts.len())));
        }
        let stats = |u: usize| window_stats_with(counts, u, m, cfg.variance);
        let c = counts[t];
        match self {
            Detector::C1 => {
                let w = stats(t)?;
                gaussian_upper_tail(c as f64, w.mu, w.sigma2)
            }
            Detector::C2 => {
                let w = stats(t - 2)?;
                gaussian_upper_tail(c as f64, w.mu, w.sigma2)
            }
            Detector::C3 => {
                let z = |u: usize| -> Result<f64> { Ok(z_score(counts[u] as f64, &stats(u - 2)?)) };
                let current = z(t)?;
                if current == f64::INFINITY {
                    return Ok(0.0);
                }
                let penalty: f64 = [z(t - 1)?, z(t - 2)?].iter().map(|&zi| (zi - 1.0).max(0.0)).sum();
                Ok(dist::normal_sf(current - penalty))
            }
            Detector::Bayes => {
                let w = stats(t)?;
                let size = w.sum() + 0.5;
                let prob = m as f64 / (m as f64 + 1.0);
                cfg.tail.apply(c, |k| negbin_upper_tail(k, size, prob))
            }
            Detector::Rki => {
                let w = stats(t)?;
                if w.mu <= RKI_POISSON_LIMIT {
                    let lambda = w.mu.floor() + 1.0;
                    cfg.tail.apply(c, |k| poisson_upper_tail(k, lambda))
                } else {
                    gaussian_upper_tail(c as f64, w.mu, w.sigma2)
                }
            }
        }
    }
}

/// Standardised count; a zero-variance window maps to 0 or +inf.
fn z_score(c: f64, w: &WindowStats) -> f64 {
    if w.sigma2 == 0.0 {
        if c > w.mu {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        (c - w.mu) / w.sigma2.sqrt()
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "c1" => Ok(Detector::C1),
            "c2" => Ok(Detector::C2),
            "c3" => Ok(Detector::C3),
            "bayes" => Ok(Detector::Bayes),
            "rki" => Ok(Detector::Rki),
            other => Err(Error::Parse(format!("unknown detector '{other}'"))),
        }
    }
}

/// Which discrete tail is reported for the count-distribution detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailConvention {
    /// `P(X >= c)`
    #[default]
    Inclusive,
    /// `P(X > c)`
    Exclusive,
}

impl TailConvention {
    fn apply(self, c: u64, tail: impl Fn(u64) -> Result<f64>) -> Result<f64> {
        match self {
            TailConvention::Inclusive => tail(c),
            TailConvention::Exclusive => tail(c + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Reference window length `m`.
    pub window: usize,
    #[serde(default)]
    pub variance: VarianceDivisor,
    #[serde(default)]
    pub tail: TailConvention,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 7,
            variance: VarianceDivisor::Population,
            tail: TailConvention::Inclusive,
        }
    }
}

impl DetectorConfig {
    pub fn with_window(window: usize) -> Self {
        Self {
            window,
            ..Self::default()
        }
    }
}

fn cfg_m(m: usize) -> DetectorConfig {
    DetectorConfig::with_window(m)
}

/// EARS C1: `c_t ~ N(mu(t), sigma2(t))`.
pub fn c1_pvalue(series: &CountSeries, t: usize, m: usize) -> Result<f64> {
    Detector::C1.p_value(series, t, &cfg_m(m))
}

/// EARS C2: as C1 with a two-week gap, `N(mu(t-2), sigma2(t-2))`.
pub fn c2_pvalue(series: &CountSeries, t: usize, m: usize) -> Result<f64> {
    Detector::C2.p_value(series, t, &cfg_m(m))
}

/// EARS C3: current C2 z-score minus the excess over 1 of the two previous
/// C2 z-scores, referred to `N(0,1)`.
pub fn c3_pvalue(series: &CountSeries, t: usize, m: usize) -> Result<f64> {
    Detector::C3.p_value(series, t, &cfg_m(m))
}

/// Bayes: `c_t ~ NB(m*mu(t) + 1/2, m/(m+1))`.
pub fn bayes_pvalue(series: &CountSeries, t: usize, m: usize) -> Result<f64> {
    Detector::Bayes.p_value(series, t, &cfg_m(m))
}

/// RKI: `Poisson(floor(mu(t)) + 1)` while `mu(t) <= 20`, Gaussian above.
pub fn rki_pvalue(series: &CountSeries, t: usize, m: usize) -> Result<f64> {
    Detector::Rki.p_value(series, t, &cfg_m(m))
}

/// Per-week, per-detector p-values. Cells without enough history are
/// undefined.
#[derive(Debug, Clone)]
pub struct PValueMatrix {
    detectors: Vec<Detector>,
    n_weeks: usize,
    // column-major: values[d][t]; NaN where undefined
    values: Vec<Vec<f64>>,
}

impl PValueMatrix {
    /// Builds a matrix from explicit columns; `None` marks undefined cells.
    pub fn from_columns(detectors: Vec<Detector>, columns: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if detectors.len() != columns.len() {
            return Err(Error::Schema(format!(
                "{} detectors but {} columns",
                detectors.len(),
                columns.len()
            )));
        }
        let n_weeks = columns.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(columns.len());
        for col in columns {
            if col.len() != n_weeks {
                return Err(Error::Schema("p-value columns differ in length".into()));
            }
            let mut v = Vec::with_capacity(n_weeks);
            for cell in col {
                match cell {
                    Some(p) if (0.0..=1.0).contains(&p) => v.push(p),
                    Some(p) => return Err(Error::invalid(format!("p-value {p} outside [0,1]"))),
                    None => v.push(f64::NAN),
                }
            }
            values.push(v);
        }
        Ok(Self {
            detectors,
            n_weeks,
            values,
        })
    }

    pub fn detectors(&self) -> &[Detector] {
        &self.detectors
    }

    pub fn n_weeks(&self) -> usize {
        self.n_weeks
    }

    pub fn get(&self, week: usize, detector_idx: usize) -> Option<f64> {
        let v = self.values[detector_idx][week];
        (!v.is_nan()).then_some(v)
    }

    pub fn is_defined(&self, week: usize, detector_idx: usize) -> bool {
        self.get(week, detector_idx).is_some()
    }

    pub fn index_of(&self, detector: Detector) -> Option<usize> {
        self.detectors.iter().position(|&d| d == detector)
    }
}

impl PartialEq for PValueMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.detectors == other.detectors
            && self.n_weeks == other.n_weeks
            && self
                .values
                .iter()
                .flatten()
                .zip(other.values.iter().flatten())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Runs every detector over every week of `series`.
pub fn run_detectors(series: &CountSeries, detectors: &[Detector], config: &DetectorConfig) -> PValueMatrix {
    let n = series.len();
    let values = detectors
        .iter()
        .map(|&d| {
            (0..n)
                .map(|t| {
                    if t < d.min_history(config.window) {
                        f64::NAN
                    } else {
                        d.p_value_counts(series.counts(), t, config)
                            .expect("history and parameters checked")
                    }
                })
                .collect()
        })
        .collect();
    PValueMatrix {
        detectors: detectors.to_vec(),
        n_weeks: n,
        values,
    }
}
