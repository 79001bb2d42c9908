use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::CountSeries;

/// Divisor used for the reference-window variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceDivisor {
    /// `1/m`
    #[default]
    Population,
    /// `1/(m-1)`
    Sample,
}

/// Mean and variance of the `m` counts preceding a week.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub mu: f64,
    pub sigma2: f64,
    pub m: usize,
}

impl WindowStats {
    /// Sum of the reference counts, `m * mu`.
    pub fn sum(&self) -> f64 {
        self.mu * self.m as f64
    }
}

/// Statistics of `c[t-m..t]` (the `m` weeks before `t`, excluding `t`).
pub fn window_stats(series: &CountSeries, t: usize, m: usize) -> Result<WindowStats> {
    window_stats_with(series.counts(), t, m, VarianceDivisor::Population)
}

pub fn window_stats_with(counts: &[u64], t: usize, m: usize, divisor: VarianceDivisor) -> Result<WindowStats> {
    if m == 0 {
        return Err(Error::domain("window length must be at least 1"));
    }
    if t < m {
        return Err(Error::InsufficientHistory { week: t, required: m });
    }
    if t > counts.len() {
        return Err(Error::domain(format!("week {t} lies past the end of a {}-week series", counts.len())));
    }
    let window = &counts[t - m..t];
    let sum: u64 = window.iter().sum();
    let mu = sum as f64 / m as f64;
    let ss: f64 = window.iter().map(|&c| (c as f64 - mu).powi(2)).sum();
    let sigma2 = match divisor {
        VarianceDivisor::Population => ss / m as f64,
        VarianceDivisor::Sample if m > 1 => ss / (m - 1) as f64,
        VarianceDivisor::Sample => 0.0,
    };
    Ok(WindowStats { mu, sigma2, m })
}
