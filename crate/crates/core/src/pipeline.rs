//! End-to-end experiment: generate, detect, fuse, evaluate and rank.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::{Detector, DetectorConfig, PValueMatrix};
use crate::error::{Error, Result};
use crate::eval::{self, Curve, MethodResult, RankRow, ScoredWeek};
use crate::forest::{self, ClassWeight, ForestParams};
use crate::persist::PerKRow;
use crate::rng::{derive_stream, StreamId};
use crate::series::SeriesBundle;
use crate::stacking::{assemble_with, detect_bundle, FusionConfig};
use crate::synthgen::{generate_bundle, Grid, KMode, Structure, TestCaseSpec, SERIES_PER_CASE};

/// A method under evaluation: a single detector or a fusion configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Detector(Detector),
    Fusion(FusionConfig),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Detector(d) => d.fmt(f),
            Method::Fusion(c) => c.fmt(f),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(d) = s.parse::<Detector>() {
            return Ok(Method::Detector(d));
        }
        s.parse::<FusionConfig>()
            .map(Method::Fusion)
            .map_err(|_| Error::Parse(format!("`{s}` is neither a detector nor a fusion notation")))
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Splits a comma-separated method list, keeping commas inside parentheses.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in list.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(list[start..i].parse()?);
                start = i + 1;
            }
            _ => {}
        }
    }
    if !list[start..].trim().is_empty() {
        out.push(list[start..].parse()?);
    }
    if out.is_empty() {
        return Err(Error::Parse("empty method list".into()));
    }
    Ok(out)
}

/// The seven-method comparison set.
pub fn default_methods() -> Vec<Method> {
    parse_methods("C1,C2,C3,Bayes,RKI,S(mu,O3,1),P(mu,O3,1)").expect("valid notation")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub seed: u64,
    pub detectors: Vec<Detector>,
    pub methods: Vec<Method>,
    pub e: f64,
    pub k_mode: KMode,
    pub n_series: usize,
    pub detector_config: DetectorConfig,
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    pub class_weight: ClassWeight,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            detectors: Detector::ALL.to_vec(),
            methods: default_methods(),
            e: eval::DEFAULT_E,
            k_mode: KMode::Uniform,
            n_series: SERIES_PER_CASE,
            detector_config: DetectorConfig::default(),
            n_trees: 100,
            min_samples_leaf: 5,
            class_weight: ClassWeight::None,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.detectors.is_empty() {
            return Err(Error::invalid("no detectors configured"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods configured"));
        }
        if !(self.e > 0.0 && self.e <= 1.0) {
            return Err(Error::domain(format!("e must lie in (0,1], got {}", self.e)));
        }
        for m in &self.methods {
            if let Method::Fusion(c) = m {
                c.validate()?;
            }
        }
        Ok(())
    }

    /// Forest parameters for one fusion method on one test case.
    pub fn forest_params(&self, test_case: u32, method: &Method) -> ForestParams {
        let mut rng = derive_stream(self.seed, StreamId::new(test_case, 0, format!("forest/{method}")));
        ForestParams {
            n_trees: self.n_trees,
            min_samples_leaf: self.min_samples_leaf,
            seed: rng.next_u64(),
            class_weight: self.class_weight,
            ..ForestParams::default()
        }
    }

    pub fn method_names(&self) -> Vec<String> {
        self.methods.iter().map(Method::to_string).collect()
    }
}

/// Alarm scores `1 - p` of one detector over the evaluation window.
pub fn detector_scores(bundle: &SeriesBundle, pmatrices: &[PValueMatrix], detector: Detector) -> Result<Vec<ScoredWeek>> {
    let mut out = Vec::with_capacity(bundle.series.len() * bundle.eval_len);
    for (s, (entry, pm)) in bundle.series.iter().zip(pmatrices).enumerate() {
        let d = pm
            .index_of(detector)
            .ok_or_else(|| Error::Schema(format!("no p-values for detector {detector}")))?;
        for t in bundle.baseline_len..bundle.total_len() {
            // an undefined p-value raises no alarm
            let p = pm.get(t, d).unwrap_or(1.0);
            let span = entry.active_span(t).map(|i| i as u32);
            out.push(ScoredWeek::new(s as u32, t as u32, 1.0 - p, span)?);
        }
    }
    Ok(out)
}

/// Trains a fusion model on the baseline window and scores the evaluation
/// window.
pub fn fusion_scores(
    bundle: &SeriesBundle,
    pmatrices: &[PValueMatrix],
    config: &FusionConfig,
    params: &ForestParams,
) -> Result<Vec<ScoredWeek>> {
    let (train, test) = assemble_with(bundle, pmatrices, config)?;
    let model = forest::fit(&train.features, &train.targets, params)?;
    let scores = model.predict_matrix(&test.features)?;
    test.index
        .iter()
        .zip(scores)
        .map(|(r, score)| {
            let span = bundle.series[r.series as usize].active_span(r.week as usize).map(|i| i as u32);
            ScoredWeek::new(r.series, r.week, score, span)
        })
        .collect()
}

/// Scores of every method of the plan on one bundle.
pub fn score_methods(
    plan: &ExperimentPlan,
    bundle: &SeriesBundle,
    pmatrices: &[PValueMatrix],
) -> Result<Vec<(Method, Vec<ScoredWeek>)>> {
    plan.methods
        .iter()
        .map(|m| {
            let scored = match m {
                Method::Detector(d) => detector_scores(bundle, pmatrices, *d)?,
                Method::Fusion(c) => {
                    fusion_scores(bundle, pmatrices, c, &plan.forest_params(bundle.test_case_id, m))?
                }
            };
            Ok((*m, scored))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutcome {
    pub test_case: u32,
    pub results: Vec<MethodResult>,
    /// Detection curves, one per method.
    pub curves: Vec<(String, Curve)>,
}

/// Generates, detects, fuses and evaluates one test case.
pub fn run_test_case(plan: &ExperimentPlan, spec: &TestCaseSpec) -> Result<CaseOutcome> {
    let bundle = generate_bundle(spec, plan.n_series, plan.seed)?;
    let pmatrices = detect_bundle(&bundle, &plan.detectors, &plan.detector_config);
    evaluate_bundle(plan, &bundle, &pmatrices)
}

pub fn evaluate_bundle(plan: &ExperimentPlan, bundle: &SeriesBundle, pmatrices: &[PValueMatrix]) -> Result<CaseOutcome> {
    let mut results = Vec::new();
    let mut curves = Vec::new();
    for (m, scored) in score_methods(plan, bundle, pmatrices)? {
        let det = eval::detection_curve(&scored)?;
        let name = m.to_string();
        results.push(MethodResult {
            test_case: bundle.test_case_id,
            method: name.clone(),
            dauc: eval::partial_auc(&det, plan.e)?,
            pauc: eval::pauc(&scored, plan.e)?,
        });
        curves.push((name, det));
    }
    Ok(CaseOutcome {
        test_case: bundle.test_case_id,
        results,
        curves,
    })
}

/// Runs every test case of the grid (with the plan's k mode).
pub fn run_grid(plan: &ExperimentPlan, grid: &Grid) -> Result<Vec<CaseOutcome>> {
    plan.validate()?;
    let grid = grid.with_k_mode(plan.k_mode);
    grid.test_cases
        .par_iter()
        .map(|spec| {
            let start = std::time::Instant::now();
            let out = run_test_case(plan, spec);
            log::info!("test case {} done in {:.1?}", spec.id, start.elapsed());
            out
        })
        .collect()
}

pub fn structures(grid: &Grid) -> BTreeMap<u32, Structure> {
    grid.test_cases.iter().map(|s| (s.id, s.structure())).collect()
}

/// Average ranks of the plan's methods over the grid.
pub fn rank(plan: &ExperimentPlan, grid: &Grid, outcomes: &[CaseOutcome]) -> Result<Vec<RankRow>> {
    let results: Vec<MethodResult> = outcomes.iter().flat_map(|o| o.results.iter().cloned()).collect();
    eval::rank_methods(&plan.method_names(), &results, &structures(grid))
}

/// Re-runs the grid once per fixed outbreak size parameter.
pub fn run_k_sweep(plan: &ExperimentPlan, grid: &Grid, ks: &[u32]) -> Result<Vec<PerKRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        let fixed = ExperimentPlan {
            k_mode: KMode::Fixed(k),
            ..plan.clone()
        };
        for o in run_grid(&fixed, grid)? {
            rows.extend(o.results.into_iter().map(|r| PerKRow {
                method: r.method,
                k,
                test_case: r.test_case,
                dauc_1pct: r.dauc,
                pauc_1pct: r.pauc,
            }));
        }
    }
    Ok(rows)
}

/// Median of the values (mean of the middle two for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_list_parsing() {
        let m = parse_methods("C1, rki,S(mu,O3,1),P(~mu,O0,0)").unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m[1], Method::Detector(Detector::Rki));
        assert_eq!(m[3].to_string(), "P(~mu,O0,0)");
        assert!(parse_methods("C1,C9").is_err());
        assert!(parse_methods("").is_err());
        assert_eq!(default_methods().len(), 7);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn small_case_runs_end_to_end() {
        let grid = Grid::default_grid();
        let plan = ExperimentPlan {
            seed: 3,
            n_series: 4,
            n_trees: 5,
            ..Default::default()
        };
        let a = run_test_case(&plan, &grid.test_cases[0]).unwrap();
        assert_eq!(a.results.len(), 7);
        for r in &a.results {
            assert!((0.0..=1.0).contains(&r.dauc) && (0.0..=1.0).contains(&r.pauc));
        }
        let b = run_test_case(&plan, &grid.test_cases[0]).unwrap();
        assert_eq!(a, b);
    }
}
