//! Weekly count series, annotated outbreak spans and generated bundles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A weekly infection-count series. Week indices used throughout the crate
/// are 0-based positions into `counts`; `origin_week` is metadata only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSeries {
    series_id: String,
    counts: Vec<u64>,
    origin_week: i64,
}

impl CountSeries {
    pub fn new(series_id: impl Into<String>, counts: Vec<u64>) -> Result<Self> {
        Self::with_origin(series_id, counts, 0)
    }

    pub fn with_origin(series_id: impl Into<String>, counts: Vec<u64>, origin_week: i64) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("count series must contain at least one week"));
        }
        Ok(Self {
            series_id: series_id.into(),
            counts,
            origin_week,
        })
    }

    pub fn series_id(&self) -> &str {
        &self.series_id
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn origin_week(&self) -> i64 {
        self.origin_week
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn count(&self, week: usize) -> u64 {
        self.counts[week]
    }
}

/// An injected epidemic: per-week injected cases starting at `start_week`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutbreakSpan {
    pub start_week: usize,
    pub injected_cases: Vec<u64>,
    pub peak_week: usize,
    pub size_param_k: f64,
}

impl OutbreakSpan {
    /// Builds a span and locates its peak: the earliest active week with the
    /// largest total (baseline + injected) count in `counts`.
    pub fn new(start_week: usize, injected_cases: Vec<u64>, size_param_k: f64, counts: &[u64]) -> Result<Self> {
        let peak_week = peak_of(start_week, &injected_cases, counts)?;
        Ok(Self {
            start_week,
            injected_cases,
            peak_week,
            size_param_k,
        })
    }

    /// Last week covered by `injected_cases` (inclusive).
    pub fn end_week(&self) -> usize {
        self.start_week + self.injected_cases.len() - 1
    }

    pub fn is_active(&self, week: usize) -> bool {
        week >= self.start_week
            && week <= self.end_week()
            && self.injected_cases[week - self.start_week] > 0
    }

    pub fn active_weeks(&self) -> impl Iterator<Item = usize> + '_ {
        self.injected_cases
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(move |(i, _)| self.start_week + i)
    }

    pub fn total_cases(&self) -> u64 {
        self.injected_cases.iter().sum()
    }

    /// Checks the span invariants against the observed counts it lives in.
    pub fn validate(&self, counts: &[u64]) -> Result<()> {
        let expected = peak_of(self.start_week, &self.injected_cases, counts)?;
        if expected != self.peak_week {
            return Err(Error::invalid(format!(
                "span starting at {} records peak {} but counts put it at {}",
                self.start_week, self.peak_week, expected
            )));
        }
        Ok(())
    }
}

fn peak_of(start_week: usize, injected: &[u64], counts: &[u64]) -> Result<usize> {
    if injected.is_empty() || injected.iter().all(|&c| c == 0) {
        return Err(Error::invalid("outbreak span has no injected cases"));
    }
    if start_week + injected.len() > counts.len() {
        return Err(Error::invalid(format!(
            "outbreak span {}..{} exceeds series length {}",
            start_week,
            start_week + injected.len(),
            counts.len()
        )));
    }
    let mut best: Option<(usize, u64)> = None;
    for (i, &inj) in injected.iter().enumerate() {
        if inj == 0 {
            continue;
        }
        let week = start_week + i;
        let c = counts[week];
        if c < inj {
            return Err(Error::invalid(format!(
                "week {week}: count {c} is below injected cases {inj}"
            )));
        }
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((week, c));
        }
    }
    Ok(best.map(|(w, _)| w).expect("at least one active week"))
}

/// One series of a bundle with its annotated outbreaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub series: CountSeries,
    pub baseline_spans: Vec<OutbreakSpan>,
    pub eval_spans: Vec<OutbreakSpan>,
}

impl SeriesEntry {
    /// All spans, baseline first. The position in this list is the span id
    /// used in persisted files.
    pub fn spans(&self) -> impl Iterator<Item = &OutbreakSpan> {
        self.baseline_spans.iter().chain(self.eval_spans.iter())
    }

    /// Span id active at `week`, if any.
    pub fn active_span(&self, week: usize) -> Option<usize> {
        self.spans().position(|s| s.is_active(week))
    }
}

pub const BASELINE_WEEKS: usize = 575;
pub const EVAL_WEEKS: usize = 49;
pub const BASELINE_OUTBREAKS: usize = 4;

/// The generated series of one test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesBundle {
    pub test_case_id: u32,
    pub series: Vec<SeriesEntry>,
    pub baseline_len: usize,
    pub eval_len: usize,
}

impl SeriesBundle {
    pub fn total_len(&self) -> usize {
        self.baseline_len + self.eval_len
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.total_len();
        for (idx, entry) in self.series.iter().enumerate() {
            let counts = entry.series.counts();
            if counts.len() != n {
                return Err(Error::invalid(format!(
                    "series {idx} has {} weeks, expected {n}",
                    counts.len()
                )));
            }
            if entry.baseline_spans.len() != BASELINE_OUTBREAKS || entry.eval_spans.len() != 1 {
                return Err(Error::invalid(format!(
                    "series {idx} has {} baseline and {} evaluation outbreaks",
                    entry.baseline_spans.len(),
                    entry.eval_spans.len()
                )));
            }
            for span in entry.spans() {
                span.validate(counts)?;
            }
            if entry.baseline_spans.iter().any(|s| s.end_week() >= self.baseline_len) {
                return Err(Error::invalid(format!("series {idx}: baseline outbreak reaches the evaluation window")));
            }
            if entry.eval_spans.iter().any(|s| s.start_week < self.baseline_len) {
                return Err(Error::invalid(format!("series {idx}: evaluation outbreak starts in the baseline window")));
            }
            for (i, a) in entry.baseline_spans.iter().enumerate() {
                for b in &entry.baseline_spans[i + 1..] {
                    if a.active_weeks().any(|w| b.is_active(w)) {
                        return Err(Error::invalid(format!("series {idx}: baseline outbreaks overlap")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_series_rejected() {
        assert!(CountSeries::new("x", vec![]).is_err());
    }

    #[test]
    fn peak_is_earliest_maximum_over_active_weeks() {
        // week 3 is inside the span but inactive; its large count must not win
        let counts = vec![0, 4, 2, 9, 4, 1];
        let span = OutbreakSpan::new(1, vec![3, 1, 0, 4, 1], 2.0, &counts).unwrap();
        assert_eq!(span.peak_week, 1);
        assert_eq!(span.end_week(), 5);
        assert_eq!(span.active_weeks().collect::<Vec<_>>(), vec![1, 2, 4, 5]);
        assert!(!span.is_active(3));
    }

    #[test]
    fn span_without_cases_rejected() {
        assert!(OutbreakSpan::new(0, vec![0, 0], 1.0, &[1, 1]).is_err());
    }

    #[test]
    fn span_validate_catches_wrong_peak() {
        let counts = vec![1, 5, 3];
        let mut span = OutbreakSpan::new(0, vec![1, 2, 1], 1.0, &counts).unwrap();
        assert_eq!(span.peak_week, 1);
        span.peak_week = 2;
        assert!(span.validate(&counts).is_err());
    }
}
