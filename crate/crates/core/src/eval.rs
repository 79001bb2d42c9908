//! ROC and detection-rate curves, partial areas under them, and average
//! ranks across test cases.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::Structure;

pub const DEFAULT_E: f64 = 0.01;
pub const OVERALL: &str = "overall";

/// One evaluated week. Higher scores are more alarming.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredWeek {
    pub series: u32,
    pub week: u32,
    pub alarm_score: f64,
    /// Outbreak the week belongs to, unique within its series.
    pub span_id: Option<u32>,
}

impl ScoredWeek {
    pub fn new(series: u32, week: u32, alarm_score: f64, span_id: Option<u32>) -> Result<Self> {
        check_score(alarm_score)?;
        Ok(Self {
            series,
            week,
            alarm_score,
            span_id,
        })
    }

    pub fn is_outbreak_week(&self) -> bool {
        self.span_id.is_some()
    }
}

fn check_score(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::domain(format!("alarm score must lie in [0,1], got {s}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    vertices: Vec<(f64, f64)>,
}

impl Curve {
    /// Validates anchoring at (0,0) and (1,1) and monotonicity.
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.first() != Some(&(0.0, 0.0)) || vertices.last() != Some(&(1.0, 1.0)) {
            return Err(Error::domain("curve must run from (0,0) to (1,1)"));
        }
        if vertices.windows(2).any(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1) {
            return Err(Error::domain("curve vertices must be non-decreasing"));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }
}

/// Sweeps thresholds over descending distinct scores; `events` holds
/// `(score, negatives, positives)` increments.
fn sweep(mut events: Vec<(f64, u64, u64)>, n_neg: u64, n_pos: u64) -> Curve {
    events.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut vertices = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0u64, 0u64);
    let mut i = 0;
    while i < events.len() {
        let s = events[i].0;
        while i < events.len() && events[i].0 == s {
            fp += events[i].1;
            tp += events[i].2;
            i += 1;
        }
        vertices.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Curve { vertices }
}

fn validate(scored: &[ScoredWeek]) -> Result<u64> {
    for w in scored {
        check_score(w.alarm_score)?;
    }
    let n_neg = scored.iter().filter(|w| !w.is_outbreak_week()).count() as u64;
    if n_neg == 0 {
        return Err(Error::invalid("evaluation needs at least one non-outbreak week"));
    }
    Ok(n_neg)
}

/// ROC curve: true positive rate against false alarm rate, one vertex per
/// tie group of scores.
pub fn roc_curve(scored: &[ScoredWeek]) -> Result<Curve> {
    let n_neg = validate(scored)?;
    let n_pos = scored.len() as u64 - n_neg;
    if n_pos == 0 {
        return Err(Error::invalid("ROC needs at least one outbreak week"));
    }
    let events = scored
        .iter()
        .map(|w| {
            let pos = u64::from(w.is_outbreak_week());
            (w.alarm_score, 1 - pos, pos)
        })
        .collect();
    Ok(sweep(events, n_neg, n_pos))
}

/// Highest score inside each outbreak, keyed by `(series, span_id)`.
pub fn span_maxima(scored: &[ScoredWeek]) -> BTreeMap<(u32, u32), f64> {
    let mut max = BTreeMap::new();
    for w in scored {
        if let Some(id) = w.span_id {
            let e = max.entry((w.series, id)).or_insert(w.alarm_score);
            if w.alarm_score > *e {
                *e = w.alarm_score;
            }
        }
    }
    max
}

/// Detection-rate curve: fraction of outbreaks with at least one alarmed
/// week against the false alarm rate. Outbreaks are the distinct
/// `(series, span_id)` pairs among `scored`; thresholds run over the
/// non-outbreak scores and the outbreak maxima.
pub fn detection_curve(scored: &[ScoredWeek]) -> Result<Curve> {
    let n_neg = validate(scored)?;
    let spans = span_maxima(scored);
    if spans.is_empty() {
        return Err(Error::invalid("detection curve needs at least one outbreak"));
    }
    let mut events: Vec<(f64, u64, u64)> = scored
        .iter()
        .filter(|w| !w.is_outbreak_week())
        .map(|w| (w.alarm_score, 1, 0))
        .collect();
    events.extend(spans.values().map(|&s| (s, 0, 1)));
    Ok(sweep(events, n_neg, spans.len() as u64))
}

/// Area under the linearly interpolated curve on `[0, e]`, divided by `e`.
pub fn partial_auc(curve: &Curve, e: f64) -> Result<f64> {
    if !(e > 0.0 && e <= 1.0) {
        return Err(Error::domain(format!("e must lie in (0,1], got {e}")));
    }
    let mut area = 0.0;
    for seg in curve.vertices.windows(2) {
        let (x0, y0) = seg[0];
        let (x1, y1) = seg[1];
        if x0 >= e {
            break;
        }
        let (x1, y1) = if x1 > e {
            (e, y0 + (e - x0) / (x1 - x0) * (y1 - y0))
        } else {
            (x1, y1)
        };
        area += (x1 - x0) / e * (y0 + y1) / 2.0;
    }
    Ok(area.clamp(0.0, 1.0))
}

pub fn pauc(scored: &[ScoredWeek], e: f64) -> Result<f64> {
    partial_auc(&roc_curve(scored)?, e)
}

pub fn dauc(scored: &[ScoredWeek], e: f64) -> Result<f64> {
    partial_auc(&detection_curve(scored)?, e)
}

/// Scores of one method on one test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub test_case: u32,
    pub method: String,
    #[serde(rename = "dauc_1pct")]
    pub dauc: f64,
    #[serde(rename = "pauc_1pct")]
    pub pauc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub method: String,
    pub subset: String,
    pub avg_rank: f64,
}

/// Ranks with 1 for the largest value; ties share the mean of their
/// positions.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Average dAUC rank of each method overall and within each structural
/// subset present in `structures`. Rows come out method-major in the order
/// of `methods`, subsets as `overall` then [`Structure::ALL`] order.
pub fn rank_methods(
    methods: &[String],
    results: &[MethodResult],
    structures: &BTreeMap<u32, Structure>,
) -> Result<Vec<RankRow>> {
    if methods.is_empty() {
        return Err(Error::invalid("no methods to rank"));
    }
    let method_idx: HashMap<&str, usize> = methods.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let mut table: BTreeMap<u32, Vec<Option<f64>>> = structures.keys().map(|&c| (c, vec![None; methods.len()])).collect();
    for r in results {
        let Some(&mi) = method_idx.get(r.method.as_str()) else {
            continue;
        };
        let row = table
            .get_mut(&r.test_case)
            .ok_or_else(|| Error::invalid(format!("result for unknown test case {}", r.test_case)))?;
        if row[mi].replace(r.dauc).is_some() {
            return Err(Error::invalid(format!(
                "duplicate result for test case {} method {}",
                r.test_case, r.method
            )));
        }
    }

    let mut sums: BTreeMap<Option<Structure>, (Vec<f64>, usize)> = BTreeMap::new();
    for (case, row) in &table {
        let values = row
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| Error::invalid(format!("missing result for test case {case} method {}", methods[i])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let ranks = fractional_ranks(&values);
        for key in [None, Some(structures[case])] {
            let entry = sums.entry(key).or_insert_with(|| (vec![0.0; methods.len()], 0));
            for (s, r) in entry.0.iter_mut().zip(&ranks) {
                *s += r;
            }
            entry.1 += 1;
        }
    }

    let subsets: Vec<Option<Structure>> =
        std::iter::once(None).chain(Structure::ALL.iter().copied().map(Some)).collect();
    let mut out = Vec::new();
    for (mi, m) in methods.iter().enumerate() {
        for key in &subsets {
            if let Some((s, n)) = sums.get(key) {
                out.push(RankRow {
                    method: m.clone(),
                    subset: key.map_or_else(|| OVERALL.to_string(), |st| st.label()),
                    avg_rank: s[mi] / *n as f64,
                });
            }
        }
    }
    Ok(out)
}
