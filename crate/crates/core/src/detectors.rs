//! The four detectors and the single / multiple / intersectional drivers.
//!
//! Every protected row is a complainant, whatever its decision. Control
//! groups are the complainant's nearest protected neighbors (the complainant
//! itself excluded); test groups are the nearest non-protected rows to the
//! counterfactual (CST, CF) or to the complainant (ST).
//!
//! | method        | test center     | centers counted | detected when           |
//! |---------------|-----------------|-----------------|-------------------------|
//! | `cst_without` | counterfactual  | no              | Δp > τ                  |
//! | `cst_with`    | counterfactual  | yes (k + 1)     | Δp > τ                  |
//! | `st`          | complainant     | no (ablation)   | Δp > τ                  |
//! | `cf`          | -               | -               | ŷ = 0 and ŷ^CF = 1      |
//!
//! CF significance reuses the CST-with interval. Positive runs flip the
//! comparisons (Δp < τ, upper bound below τ).
//!
//! Neighborhoods are computed once at the largest k of interest and cut by
//! prefix for smaller k, which gives the same groups as fresh queries.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfgen::{do_zero, generate_counterfactual_dataset, CfDataset};
use crate::dataset::Dataset;
use crate::error::{AuditError, Result};
use crate::scm::{merge_intersectional, FittedScm};
use crate::search::{top_k_excluding, top_k_neighbors, CenterKind, Neighborhood};
use crate::similarity::DistanceContext;
use crate::stattest::{ResultStatus, TestResult};
use crate::synthgen::Classifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CstWithout,
    CstWith,
    St,
    Cf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::CstWithout, Method::CstWith, Method::St, Method::Cf];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CstWithout => "cst_without",
            Method::CstWith => "cst_with",
            Method::St => "st",
            Method::Cf => "cf",
        }
    }

    pub fn needs_counterfactual(self) -> bool {
        self != Method::St
    }
}

impl std::str::FromStr for Method {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| AuditError::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Single,
    Multiple,
    Intersectional,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Multiple => "multiple",
            Mode::Intersectional => "intersectional",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        [Mode::Single, Mode::Multiple, Mode::Intersectional]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| AuditError::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Negative,
    Positive,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Negative => "negative",
            Direction::Positive => "positive",
        }
    }

    pub fn is_positive(self) -> bool {
        self == Direction::Positive
    }
}

impl std::str::FromStr for Direction {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative" => Ok(Direction::Negative),
            "positive" => Ok(Direction::Positive),
            _ => Err(AuditError::Config(format!("unknown direction `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub direction: Direction,
    pub attrs: Vec<String>,
    pub k: usize,
    #[serde(default)]
    pub tau: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Count the search centers in ST groups (ablation).
    #[serde(default)]
    pub include_centers: bool,
    /// Divide numeric distances by the factual range.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn new(method: Method, attr: &str, k: usize) -> Self {
        RunConfig {
            method,
            mode: Mode::Single,
            direction: Direction::Negative,
            attrs: vec![attr.to_string()],
            k,
            tau: 0.0,
            alpha: 0.05,
            epsilon: None,
            seed: 0,
            include_centers: false,
            normalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(AuditError::Config("k must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(AuditError::Config(format!("alpha must lie in (0, 0.5], got {}", self.alpha)));
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(AuditError::Config(format!("tau must lie in [-1, 1], got {}", self.tau)));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(AuditError::Config("epsilon must be positive".into()));
            }
        }
        let need = if self.mode == Mode::Single { 1 } else { 2 };
        if self.mode == Mode::Single && self.attrs.len() != 1 {
            return Err(AuditError::Config("single mode takes exactly one attribute".into()));
        }
        if self.attrs.len() < need {
            return Err(AuditError::Config(format!(
                "{} mode requires at least two protected attributes",
                self.mode.as_str()
            )));
        }
        let mut seen = HashSet::new();
        for a in &self.attrs {
            if !seen.insert(a) {
                return Err(AuditError::DuplicateAttribute(a.clone()));
            }
        }
        Ok(())
    }

    fn epsilon_for(&self, method: Method) -> Option<f64> {
        if method == Method::Cf {
            None
        } else {
            self.epsilon
        }
    }
}

/// Evaluation settings shared by all complainants of one run.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    pub method: Method,
    pub k: usize,
    pub direction: Direction,
    pub alpha: f64,
    pub tau: f64,
    pub epsilon: Option<f64>,
    pub include_centers: bool,
}

impl Evaluation {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Evaluation {
            method: cfg.method,
            k: cfg.k,
            direction: cfg.direction,
            alpha: cfg.alpha,
            tau: cfg.tau,
            epsilon: cfg.epsilon_for(cfg.method),
            include_centers: cfg.include_centers,
        }
    }
}

/// Precomputed neighborhoods of every complainant for one protected attribute.
#[derive(Debug, Clone)]
pub struct AttributeNeighborhoods {
    pub attr: String,
    pub complainants: Vec<usize>,
    pub control: Vec<Neighborhood>,
    /// Around the counterfactual; empty when no counterfactuals were given.
    pub test_counterfactual: Vec<Neighborhood>,
    /// Around the complainant; empty unless requested.
    pub test_factual: Vec<Neighborhood>,
    /// ŷ^CF per complainant, when counterfactuals were given.
    pub cf_decisions: Vec<u8>,
    pub decisions: Vec<u8>,
    pub k_max: usize,
}

impl AttributeNeighborhoods {
    /// Neighborhoods of size `k_max`. Complainants are the rows protected on
    /// every attribute in `complainant_attrs` (just `attr` for single runs).
    pub fn build(
        d: &Dataset,
        cf: Option<&CfDataset>,
        attr: &str,
        complainant_attrs: &[&str],
        k_max: usize,
        factual_test: bool,
        normalize: bool,
    ) -> Result<Self> {
        if k_max < 1 {
            return Err(AuditError::Config("k must be at least 1".into()));
        }
        let ctx = DistanceContext::from_dataset(d, normalize)?;
        let (control_space, test_space) = d.partition_search_spaces(attr)?;
        if control_space.is_empty() || test_space.is_empty() {
            return Err(AuditError::EmptySearchSpace);
        }
        let cols = complainant_attrs
            .iter()
            .map(|a| d.schema().protected_index(a))
            .collect::<Result<Vec<_>>>()?;
        let attr_col = d.schema().protected_index(attr)?;
        let complainants: Vec<usize> = (0..d.len())
            .filter(|&r| d.row(r).a[attr_col] == 1 && cols.iter().all(|&j| d.row(r).a[j] == 1))
            .collect();
        if let Some(cf) = cf {
            if !cf.intervention().contains_key(attr) {
                return Err(AuditError::Config(format!(
                    "counterfactuals were generated under {:?}, not for `{attr}`",
                    cf.intervention().keys().collect::<Vec<_>>()
                )));
            }
        }
        let per: Vec<(Neighborhood, Option<Neighborhood>, Option<Neighborhood>, Option<u8>)> = complainants
            .par_iter()
            .map(|&c| {
                let row = d.row(c);
                let control = top_k_excluding(
                    &row.x,
                    &control_space,
                    d,
                    k_max,
                    &ctx,
                    None,
                    CenterKind::Factual,
                    Some(c),
                )?;
                let (test_cf, y_cf) = match cf {
                    Some(cf) => {
                        let r = cf.get(c).ok_or(AuditError::MissingCounterfactual(c))?;
                        let n = top_k_neighbors(&r.x, &test_space, d, k_max, &ctx, None, CenterKind::Counterfactual)?;
                        (Some(n), Some(r.y_hat))
                    }
                    None => (None, None),
                };
                let test_f = if factual_test {
                    Some(top_k_neighbors(&row.x, &test_space, d, k_max, &ctx, None, CenterKind::Factual)?)
                } else {
                    None
                };
                Ok((control, test_cf, test_f, y_cf))
            })
            .collect::<Result<_>>()?;
        let mut out = AttributeNeighborhoods {
            attr: attr.to_string(),
            complainants,
            control: Vec::with_capacity(per.len()),
            test_counterfactual: Vec::new(),
            test_factual: Vec::new(),
            cf_decisions: Vec::new(),
            decisions: d.decisions(),
            k_max,
        };
        for (c, t_cf, t_f, y) in per {
            out.control.push(c);
            out.test_counterfactual.extend(t_cf);
            out.test_factual.extend(t_f);
            out.cf_decisions.extend(y);
        }
        Ok(out)
    }

    pub fn has_counterfactuals(&self) -> bool {
        self.test_counterfactual.len() == self.complainants.len()
    }

    pub fn has_factual_tests(&self) -> bool {
        self.test_factual.len() == self.complainants.len()
    }

    /// Results per complainant in id order.
    pub fn evaluate(&self, e: &Evaluation) -> Result<Vec<TestResult>> {
        if e.k > self.k_max {
            return Err(AuditError::Config(format!(
                "k = {} exceeds the precomputed size {}",
                e.k, self.k_max
            )));
        }
        let needs_cf = e.method.needs_counterfactual();
        if needs_cf && !self.has_counterfactuals() {
            return Err(AuditError::Config(format!(
                "{} requires counterfactual neighborhoods",
                e.method.as_str()
            )));
        }
        if e.method == Method::St && !self.has_factual_tests() {
            return Err(AuditError::Config("st requires factual test neighborhoods".into()));
        }
        Ok((0..self.complainants.len())
            .into_par_iter()
            .map(|i| self.evaluate_one(i, e))
            .collect())
    }

    fn evaluate_one(&self, i: usize, e: &Evaluation) -> TestResult {
        let c = self.complainants[i];
        let y_c = self.decisions[c];
        let positive = e.direction.is_positive();
        let eps = if e.method == Method::Cf { None } else { e.epsilon };
        let cut = |n: &Neighborhood| {
            let p = n.prefix(e.k);
            let saturated = p.len() < e.k;
            (eps.map_or(p.clone(), |x| p.within(x)), saturated)
        };
        let (control, sat_c) = cut(&self.control[i]);
        let (test, sat_t, center_outcome) = match e.method {
            Method::St => {
                let (t, s) = cut(&self.test_factual[i]);
                (t, s, y_c)
            }
            _ => {
                let (t, s) = cut(&self.test_counterfactual[i]);
                (t, s, self.cf_decisions[i])
            }
        };
        let include = match e.method {
            Method::CstWith | Method::Cf => true,
            Method::St => e.include_centers,
            Method::CstWithout => false,
        };
        if !include && (control.is_empty() || test.is_empty()) {
            return TestResult::empty_group(c);
        }
        let negatives = |n: &Neighborhood| n.members.iter().filter(|&&id| self.decisions[id] == 0).count();
        let extra = usize::from(include);
        let m_c = control.len() + extra;
        let m_t = test.len() + extra;
        let neg_c = negatives(&control) + usize::from(include && y_c == 0);
        let neg_t = negatives(&test) + usize::from(include && center_outcome == 0);
        let p_c = neg_c as f64 / m_c as f64;
        let p_t = neg_t as f64 / m_t as f64;
        let status = if sat_c || sat_t {
            ResultStatus::Saturated
        } else {
            ResultStatus::Ok
        };
        let mut r = TestResult::from_rates(c, p_c, m_c, p_t, m_t, e.alpha, e.tau, positive, status);
        if e.method == Method::Cf {
            let y_cf = self.cf_decisions[i];
            let flipped = if positive {
                y_c == 1 && y_cf == 0
            } else {
                y_c == 0 && y_cf == 1
            };
            r.detected = flipped;
            r.significant = flipped && r.significant;
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub complainants: usize,
    pub detected: usize,
    pub detected_pct: f64,
    pub significant: usize,
    pub significant_pct: f64,
    /// Mean Δp over detected cases; `None` when nothing was detected.
    pub avg_delta_p: Option<f64>,
    /// Mean Δp over every complainant with formed groups.
    pub mean_delta_p: Option<f64>,
    pub saturated: usize,
    pub empty_groups: usize,
}

impl Summary {
    pub fn from_results(results: &[TestResult]) -> Summary {
        let n = results.len();
        let detected: Vec<&TestResult> = results.iter().filter(|r| r.detected).collect();
        let significant = results.iter().filter(|r| r.significant).count();
        let pct = |x: usize| if n == 0 { 0.0 } else { 100.0 * x as f64 / n as f64 };
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let formed: Vec<f64> = results
            .iter()
            .filter(|r| r.status != ResultStatus::EmptyGroup)
            .map(|r| r.delta_p)
            .collect();
        let det: Vec<f64> = detected.iter().map(|r| r.delta_p).collect();
        Summary {
            complainants: n,
            detected: detected.len(),
            detected_pct: pct(detected.len()),
            significant,
            significant_pct: pct(significant),
            avg_delta_p: mean(&det),
            mean_delta_p: mean(&formed),
            saturated: results.iter().filter(|r| r.status == ResultStatus::Saturated).count(),
            empty_groups: results.iter().filter(|r| r.status == ResultStatus::EmptyGroup).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub method: Method,
    pub mode: Mode,
    pub direction: Direction,
    pub k: usize,
    /// Tested attribute; for multiple runs the attributes joined by `+`.
    pub attribute: String,
    pub results: Vec<TestResult>,
    /// Per-attribute results of a multiple run, aligned with `results`.
    pub components: BTreeMap<String, Vec<TestResult>>,
    pub summary: Summary,
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    method: Method,
    mode: Mode,
    direction: Direction,
    k: usize,
    attribute: &'a str,
    #[serde(flatten)]
    result: &'a TestResult,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    components: BTreeMap<&'a str, &'a TestResult>,
}

impl AuditReport {
    pub fn new(
        method: Method,
        mode: Mode,
        direction: Direction,
        k: usize,
        attribute: String,
        results: Vec<TestResult>,
        components: BTreeMap<String, Vec<TestResult>>,
    ) -> Self {
        let summary = Summary::from_results(&results);
        AuditReport {
            method,
            mode,
            direction,
            k,
            attribute,
            results,
            components,
            summary,
        }
    }

    pub fn detected_ids(&self) -> Vec<usize> {
        self.results.iter().filter(|r| r.detected).map(|r| r.complainant).collect()
    }

    pub fn significant_ids(&self) -> Vec<usize> {
        self.results.iter().filter(|r| r.significant).map(|r| r.complainant).collect()
    }

    /// One JSON object per complainant.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, r) in self.results.iter().enumerate() {
            let rec = JsonRecord {
                method: self.method,
                mode: self.mode,
                direction: self.direction,
                k: self.k,
                attribute: &self.attribute,
                result: r,
                components: self
                    .components
                    .iter()
                    .map(|(a, v)| (a.as_str(), &v[i]))
                    .collect(),
            };
            serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "method",
    "mode",
    "k",
    "detected",
    "detected_pct",
    "significant",
    "significant_pct",
    "avg_delta_p",
];

/// Summary CSV, one row per report; percentages to one decimal.
pub fn write_summary_csv<W: Write>(reports: &[AuditReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for r in reports {
        let s = &r.summary;
        w.write_record([
            r.method.as_str().to_string(),
            r.mode.as_str().to_string(),
            r.k.to_string(),
            s.detected.to_string(),
            format!("{:.1}", s.detected_pct),
            s.significant.to_string(),
            format!("{:.1}", s.significant_pct),
            s.avg_delta_p.map_or(String::new(), |v| format!("{v:.6}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn single_attr(cfg: &RunConfig) -> Result<&str> {
    match cfg.attrs.as_slice() {
        [a] => Ok(a),
        _ => Err(AuditError::Config("single-attribute run takes exactly one attribute".into())),
    }
}

fn run_single(d: &Dataset, cf: Option<&CfDataset>, cfg: &RunConfig) -> Result<AuditReport> {
    let attr = single_attr(cfg)?;
    let hood = AttributeNeighborhoods::build(
        d,
        cf,
        attr,
        &[attr],
        cfg.k,
        cfg.method == Method::St,
        cfg.normalize,
    )?;
    let results = hood.evaluate(&Evaluation::from_config(cfg))?;
    Ok(AuditReport::new(
        cfg.method,
        cfg.mode,
        cfg.direction,
        cfg.k,
        attr.to_string(),
        results,
        BTreeMap::new(),
    ))
}

fn expect_method(cfg: &RunConfig, allowed: &[Method]) -> Result<()> {
    if allowed.contains(&cfg.method) {
        Ok(())
    } else {
        Err(AuditError::Config(format!(
            "method {} is not valid here",
            cfg.method.as_str()
        )))
    }
}

/// CST with or without centers, per `cfg.method`.
pub fn run_cst(d: &Dataset, cf: &CfDataset, cfg: &RunConfig) -> Result<AuditReport> {
    expect_method(cfg, &[Method::CstWithout, Method::CstWith])?;
    run_single(d, Some(cf), cfg)
}

pub fn run_st(d: &Dataset, cfg: &RunConfig) -> Result<AuditReport> {
    expect_method(cfg, &[Method::St])?;
    run_single(d, None, cfg)
}

pub fn run_cf(d: &Dataset, cf: &CfDataset, cfg: &RunConfig) -> Result<AuditReport> {
    expect_method(cfg, &[Method::Cf])?;
    run_single(d, Some(cf), cfg)
}

/// Any single-attribute method; `cf` may be omitted for ST.
pub fn run_method(d: &Dataset, cf: Option<&CfDataset>, cfg: &RunConfig) -> Result<AuditReport> {
    if cfg.method.needs_counterfactual() && cf.is_none() {
        return Err(AuditError::Config(format!(
            "{} requires a counterfactual dataset",
            cfg.method.as_str()
        )));
    }
    run_single(d, cf, cfg)
}

/// Combines per-attribute results of one complainant.
pub fn combine_multiple(parts: &[&TestResult]) -> TestResult {
    let q = parts.len() as f64;
    let complainant = parts[0].complainant;
    if parts.iter().any(|r| r.status == ResultStatus::EmptyGroup) {
        return TestResult::empty_group(complainant);
    }
    let p_c = parts.iter().map(|r| r.p_c).sum::<f64>() / q;
    let p_t = parts.iter().map(|r| r.p_t).sum::<f64>() / q;
    let fold = |f: fn(&TestResult) -> f64, min: bool| {
        parts
            .iter()
            .map(|r| f(r))
            .reduce(|a, b| if min { a.min(b) } else { a.max(b) })
            .unwrap()
    };
    TestResult {
        complainant,
        p_c,
        p_t,
        delta_p: p_c - p_t,
        ci_one_sided_lo: fold(|r| r.ci_one_sided_lo, true),
        ci_one_sided_hi: fold(|r| r.ci_one_sided_hi, false),
        ci_two_sided: (fold(|r| r.ci_two_sided.0, true), fold(|r| r.ci_two_sided.1, false)),
        m_control: parts.iter().map(|r| r.m_control).min().unwrap(),
        m_test: parts.iter().map(|r| r.m_test).min().unwrap(),
        detected: parts.iter().all(|r| r.detected),
        significant: parts.iter().all(|r| r.significant),
        status: if parts.iter().any(|r| r.status == ResultStatus::Saturated) {
            ResultStatus::Saturated
        } else {
            ResultStatus::Ok
        },
    }
}

/// Multiple discrimination: the method runs once per attribute at level
/// α/q over rows protected on every attribute.
pub fn run_multiple(
    d: &Dataset,
    cfs: &BTreeMap<String, CfDataset>,
    cfg: &RunConfig,
) -> Result<AuditReport> {
    let hoods = multiple_neighborhoods(d, cfs, cfg, cfg.k)?;
    evaluate_multiple(&hoods, cfg, cfg.k)
}

/// Per-attribute neighborhoods for a multiple run, at size `k_max`.
pub fn multiple_neighborhoods(
    d: &Dataset,
    cfs: &BTreeMap<String, CfDataset>,
    cfg: &RunConfig,
    k_max: usize,
) -> Result<Vec<AttributeNeighborhoods>> {
    if cfg.attrs.is_empty() {
        return Err(AuditError::Config("no protected attributes".into()));
    }
    let attrs: Vec<&str> = cfg.attrs.iter().map(String::as_str).collect();
    attrs
        .iter()
        .map(|&a| {
            let cf = if cfg.method.needs_counterfactual() {
                Some(cfs.get(a).ok_or_else(|| {
                    AuditError::Config(format!("missing counterfactual dataset for `{a}`"))
                })?)
            } else {
                None
            };
            AttributeNeighborhoods::build(d, cf, a, &attrs, k_max, cfg.method == Method::St, cfg.normalize)
        })
        .collect()
}

pub fn evaluate_multiple(
    hoods: &[AttributeNeighborhoods],
    cfg: &RunConfig,
    k: usize,
) -> Result<AuditReport> {
    let q = hoods.len();
    let e = Evaluation {
        k,
        alpha: cfg.alpha / q as f64,
        ..Evaluation::from_config(cfg)
    };
    let per: Vec<Vec<TestResult>> = hoods.iter().map(|h| h.evaluate(&e)).collect::<Result<_>>()?;
    let n = per[0].len();
    let results: Vec<TestResult> = (0..n)
        .map(|i| combine_multiple(&per.iter().map(|v| &v[i]).collect::<Vec<_>>()))
        .collect();
    let components = hoods
        .iter()
        .map(|h| h.attr.clone())
        .zip(per)
        .collect();
    Ok(AuditReport::new(
        cfg.method,
        Mode::Multiple,
        cfg.direction,
        k,
        cfg.attrs.join("+"),
        results,
        components,
    ))
}

/// Dataset with the conjunction attribute and counterfactuals under
/// `do(A* := 0)` from the merged and refitted SCM.
pub fn prepare_intersectional(
    d: &Dataset,
    attrs: &[&str],
    scm: &FittedScm,
    clf: &Classifier,
) -> Result<(Dataset, CfDataset, FittedScm)> {
    let merged_data = d.derive_intersection_attribute(attrs)?;
    let (_, merged) = merge_intersectional(scm, &merged_data, attrs)?;
    let name = crate::dataset::intersection_name(attrs);
    let cf = generate_counterfactual_dataset(&merged, &merged_data, &do_zero(&name), clf)?;
    Ok((merged_data, cf, merged))
}

/// Intersectional discrimination: a single run on the conjunction attribute.
pub fn run_intersectional(
    d: &Dataset,
    cfg: &RunConfig,
    scm: &FittedScm,
    clf: &Classifier,
) -> Result<AuditReport> {
    if cfg.attrs.len() < 2 {
        return Err(AuditError::Intersection(
            "an intersection needs at least two attributes".into(),
        ));
    }
    let attrs: Vec<&str> = cfg.attrs.iter().map(String::as_str).collect();
    let (merged, cf, _) = prepare_intersectional(d, &attrs, scm, clf)?;
    let name = crate::dataset::intersection_name(&attrs);
    let single = RunConfig {
        mode: Mode::Single,
        attrs: vec![name],
        ..cfg.clone()
    };
    let mut report = run_method(&merged, Some(&cf), &single)?;
    report.mode = Mode::Intersectional;
    Ok(report)
}
