#![allow(dead_code)]

use std::collections::BTreeMap;

use outbreak_fusion::eval::ScoredWeek;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Discrete, NegativeBinomial, Normal, Poisson};

/// `P(X >= c)` by summing the pmf upward from `c` until the terms vanish.
pub fn upper_sum(c: u64, mean: f64, pmf: impl Fn(u64) -> f64) -> f64 {
    let mut total = 0.0;
    let mut k = c;
    loop {
        let p = pmf(k);
        total += p;
        if (k as f64) > mean && p < 1e-30 {
            break;
        }
        k += 1;
    }
    total.min(1.0)
}

pub fn poisson_tail(c: u64, lambda: f64) -> f64 {
    let d = Poisson::new(lambda).unwrap();
    upper_sum(c, lambda, |k| d.pmf(k))
}

pub fn negbin_tail(c: u64, size: f64, prob: f64) -> f64 {
    let d = NegativeBinomial::new(size, prob).unwrap();
    upper_sum(c, size * (1.0 - prob) / prob, |k| d.pmf(k))
}

pub fn gaussian_tail(x: f64, mu: f64, sigma2: f64) -> f64 {
    if sigma2 == 0.0 {
        return if x <= mu { 1.0 } else { 0.0 };
    }
    Normal::new(mu, sigma2.sqrt()).unwrap().sf(x)
}

pub fn mean_var(window: &[u64]) -> (f64, f64) {
    let m = window.len() as f64;
    let mu = window.iter().sum::<u64>() as f64 / m;
    let var = window.iter().map(|&c| (c as f64 - mu).powi(2)).sum::<f64>() / m;
    (mu, var)
}

/// ROC vertices by testing every distinct threshold directly.
pub fn brute_roc(scored: &[ScoredWeek]) -> Vec<(f64, f64)> {
    let n_pos = scored.iter().filter(|w| w.is_outbreak_week()).count() as f64;
    let n_neg = scored.len() as f64 - n_pos;
    let mut out = vec![(0.0, 0.0)];
    for th in distinct_desc(scored.iter().map(|w| w.alarm_score)) {
        let tp = scored.iter().filter(|w| w.is_outbreak_week() && w.alarm_score >= th).count() as f64;
        let fp = scored.iter().filter(|w| !w.is_outbreak_week() && w.alarm_score >= th).count() as f64;
        out.push((fp / n_neg, tp / n_pos));
    }
    out
}

/// Detection-rate vertices by testing every distinct threshold directly;
/// thresholds that move neither coordinate add no vertex.
pub fn brute_detection(scored: &[ScoredWeek]) -> Vec<(f64, f64)> {
    let mut spans: BTreeMap<(u32, u32), Vec<f64>> = BTreeMap::new();
    for w in scored {
        if let Some(id) = w.span_id {
            spans.entry((w.series, id)).or_default().push(w.alarm_score);
        }
    }
    let n_neg = scored.iter().filter(|w| !w.is_outbreak_week()).count() as f64;
    let mut out = vec![(0.0, 0.0)];
    for th in distinct_desc(scored.iter().map(|w| w.alarm_score)) {
        let fp = scored.iter().filter(|w| !w.is_outbreak_week() && w.alarm_score >= th).count() as f64;
        let hit = spans.values().filter(|s| s.iter().any(|&x| x >= th)).count() as f64;
        let v = (fp / n_neg, hit / spans.len() as f64);
        if *out.last().unwrap() != v {
            out.push(v);
        }
    }
    out
}

fn distinct_desc(it: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = it.collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v.dedup();
    v
}

/// Partial area by integrating each segment clipped to `[0, e]`.
pub fn brute_partial_auc(vertices: &[(f64, f64)], e: f64) -> f64 {
    let mut area = 0.0;
    for w in vertices.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let lo = x0.min(e);
        let hi = x1.min(e);
        if hi <= lo {
            continue;
        }
        let at = |x: f64| y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        area += (hi - lo) * (at(lo) + at(hi)) / 2.0;
    }
    area / e
}

/// Random evaluation instance: a few series of contiguous weeks with
/// outbreak blocks, scores drawn from a small grid to force ties.
/// Always contains at least one outbreak week and one non-outbreak week.
pub fn random_instance<R: Rng>(rng: &mut R, max_weeks: usize) -> Vec<ScoredWeek> {
    loop {
        let n_series = rng.random_range(1..=4);
        let total = rng.random_range(2..=max_weeks);
        let levels = rng.random_range(2..=20);
        let mut out = Vec::with_capacity(total);
        for i in 0..total {
            let series = (i * n_series / total) as u32;
            // outbreak blocks of about 6 weeks, ids per series
            let block = i / 6;
            let span = (block % 3 == 1).then_some(block as u32);
            let score = rng.random_range(0..=levels) as f64 / levels as f64;
            out.push(ScoredWeek::new(series, i as u32, score, span).unwrap());
        }
        let pos = out.iter().any(|w| w.is_outbreak_week());
        let neg = out.iter().any(|w| !w.is_outbreak_week());
        if pos && neg {
            return out;
        }
    }
}
