//! Seeded synthetic scenarios and the threshold classifiers that label them.
//!
//! Two generators are provided. The loan scenario follows a fully declared
//! generative SCM whose exogenous draws are all stored, so counterfactuals can
//! be computed exactly from the draws. The school scenario is a stand-in with
//! the admissions causal structure (two binary roots driving grade average and
//! test score) and invented coefficients.
//!
//! All randomness comes from a `ChaCha8Rng` seeded with `seed_from_u64`, and
//! every sampler is implemented here so the streams are reproducible across
//! platforms: uniforms are `rng.random::<f64>()`, normals use Box–Muller (one
//! draw per pair of uniforms), Poisson variates use sequential inversion and
//! χ²(k) is the sum of k squared normals.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cfgen::CounterfactualModel;
use crate::dataset::{Dataset, Record, Schema};
use crate::error::{AuditError, Result};
use crate::scm::{
    Distribution, Equation, FittedScm, GenerativeSpec, GenerativeTerm, Link, NodeSpec, ScmSpec,
    DesignTerm,
};

pub fn uniform(rng: &mut impl Rng) -> f64 {
    rng.random::<f64>()
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    // 1 - u keeps the logarithm finite.
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn poisson(rng: &mut impl Rng, rate: f64) -> f64 {
    let u = uniform(rng);
    let mut k = 0u64;
    let mut p = (-rate).exp();
    let mut cdf = p;
    // Cap guards against an unbounded loop when rounding stalls the cdf.
    while u > cdf && k < 10_000 {
        k += 1;
        p *= rate / k as f64;
        cdf += p;
        if p == 0.0 && cdf < u {
            break;
        }
    }
    k as f64
}

pub fn chi_squared(rng: &mut impl Rng, dof: u32) -> f64 {
    (0..dof).map(|_| standard_normal(rng).powi(2)).sum()
}

pub fn bernoulli(rng: &mut impl Rng, p: f64) -> f64 {
    if uniform(rng) < p {
        1.0
    } else {
        0.0
    }
}

impl Distribution {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Distribution::Bernoulli { p } => bernoulli(rng, p),
            Distribution::Poisson { rate, scale, shift } => scale * poisson(rng, rate) + shift,
            Distribution::ChiSquared { dof, scale } => scale * chi_squared(rng, dof),
            Distribution::Normal { mean, sd } => mean + sd * standard_normal(rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    LoanLinearThreshold,
    SchoolWeightedCutoff,
    LinearThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weight {
    pub feature: String,
    pub weight: f64,
}

/// `ŷ = 1{Σ w·x > threshold}` over named features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub kind: ClassifierKind,
    pub weights: Vec<Weight>,
    pub threshold: f64,
}

impl Classifier {
    pub fn linear_threshold(weights: &[(&str, f64)], threshold: f64) -> Self {
        Classifier {
            kind: ClassifierKind::LinearThreshold,
            weights: weights
                .iter()
                .map(|(f, w)| Weight {
                    feature: f.to_string(),
                    weight: *w,
                })
                .collect(),
            threshold,
        }
    }

    /// `1{AnnualSalary + 5·AccountBalance > 225000}`.
    pub fn loan() -> Self {
        Classifier {
            kind: ClassifierKind::LoanLinearThreshold,
            ..Classifier::linear_threshold(&[(LOAN_SALARY, 1.0), (LOAN_BALANCE, 5.0)], 225000.0)
        }
    }

    /// `1{0.6·UGPA + 0.4·LSAT > 20.8}`.
    pub fn school() -> Self {
        Classifier {
            kind: ClassifierKind::SchoolWeightedCutoff,
            ..Classifier::linear_threshold(&[(SCHOOL_UGPA, 0.6), (SCHOOL_LSAT, 0.4)], 20.8)
        }
    }

    pub fn score(&self, x: &BTreeMap<String, f64>) -> Result<f64> {
        self.weights.iter().try_fold(0.0, |acc, w| {
            x.get(&w.feature)
                .map(|v| acc + w.weight * v)
                .ok_or_else(|| AuditError::Classifier(format!("missing feature `{}`", w.feature)))
        })
    }

    /// Resolves feature names against `schema`.
    pub fn bind(&self, schema: &Schema) -> Result<BoundClassifier> {
        let mut index = Vec::with_capacity(self.weights.len());
        for w in &self.weights {
            let j = schema
                .feature_index(&w.feature)
                .ok_or_else(|| AuditError::Classifier(format!("missing feature `{}`", w.feature)))?;
            if !schema.features[j].kind.is_numeric() {
                return Err(AuditError::Classifier(format!(
                    "feature `{}` is categorical",
                    w.feature
                )));
            }
            index.push(j);
        }
        Ok(BoundClassifier {
            index,
            weights: self.weights.iter().map(|w| w.weight).collect(),
            threshold: self.threshold,
        })
    }

    /// Relabels every row of `d`.
    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        let b = self.bind(d.schema())?;
        let y: Vec<u8> = d.rows().iter().map(|r| b.classify(&r.x)).collect();
        d.with_decisions(&y)
    }
}

#[derive(Debug, Clone)]
pub struct BoundClassifier {
    index: Vec<usize>,
    weights: Vec<f64>,
    threshold: f64,
}

impl BoundClassifier {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.index
            .iter()
            .zip(&self.weights)
            .map(|(&j, w)| w * x[j])
            .sum()
    }

    pub fn classify(&self, x: &[f64]) -> u8 {
        u8::from(self.score(x) > self.threshold)
    }
}

/// Decision for a feature vector laid out per `schema`.
pub fn classify(clf: &Classifier, schema: &Schema, x: &[f64]) -> Result<u8> {
    Ok(clf.bind(schema)?.classify(x))
}

#[derive(Debug, Clone, PartialEq)]
enum DrawSlot {
    Root,
    Multiplier(usize),
    Noise,
}

#[derive(Debug, Clone, PartialEq)]
struct DrawColumn {
    name: String,
    node: usize,
    slot: DrawSlot,
    dist: Distribution,
}

/// An SCM whose every node carries a generative declaration.
///
/// Draw columns per node in declaration order: `<root>` for a root;
/// `<node>.mult.<parent>` for each multiplied term, then `<node>.noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeScm {
    spec: ScmSpec,
    columns: Vec<DrawColumn>,
    /// Per node, the offset of its first draw column.
    offsets: Vec<usize>,
}

impl GenerativeScm {
    pub fn new(spec: ScmSpec) -> Result<Self> {
        let mut columns = Vec::new();
        let mut offsets = Vec::new();
        for (i, n) in spec.nodes().iter().enumerate() {
            let g = n.generative.as_ref().ok_or_else(|| {
                AuditError::SpecFormat(format!("node `{}` has no generative declaration", n.name))
            })?;
            offsets.push(columns.len());
            if n.is_root() {
                if !g.terms.is_empty() {
                    return Err(AuditError::SpecFormat(format!("root `{}` cannot have terms", n.name)));
                }
                columns.push(DrawColumn {
                    name: n.name.clone(),
                    node: i,
                    slot: DrawSlot::Root,
                    dist: g.noise.clone(),
                });
                continue;
            }
            for (t_idx, t) in g.terms.iter().enumerate() {
                if let Some(m) = &t.multiplier {
                    columns.push(DrawColumn {
                        name: format!("{}.mult.{}", n.name, t.parent),
                        node: i,
                        slot: DrawSlot::Multiplier(t_idx),
                        dist: m.clone(),
                    });
                }
            }
            columns.push(DrawColumn {
                name: format!("{}.noise", n.name),
                node: i,
                slot: DrawSlot::Noise,
                dist: g.noise.clone(),
            });
        }
        Ok(GenerativeScm {
            spec,
            columns,
            offsets,
        })
    }

    pub fn spec(&self) -> &ScmSpec {
        &self.spec
    }

    pub fn draw_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// One row of draws, in column order.
    pub fn sample_draws(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.columns.iter().map(|c| c.dist.sample(rng)).collect()
    }

    /// Draws with the root values supplied by the caller.
    pub fn sample_draws_with_roots(&self, rng: &mut impl Rng, roots: &BTreeMap<String, f64>) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| match (&c.slot, roots.get(&self.spec.nodes()[c.node].name)) {
                (DrawSlot::Root, Some(&v)) => v,
                _ => c.dist.sample(rng),
            })
            .collect()
    }

    /// Node values (spec order) from one row of draws under `do(interventions)`.
    pub fn evaluate(&self, draws: &[f64], interventions: &BTreeMap<String, f64>) -> Vec<f64> {
        let nodes = self.spec.nodes();
        let mut values = vec![f64::NAN; nodes.len()];
        for &i in self.spec.topo_order() {
            let n = &nodes[i];
            if let Some(&v) = interventions.get(&n.name) {
                values[i] = v;
                continue;
            }
            let g = n.generative.as_ref().unwrap();
            let base = self.offsets[i];
            if n.is_root() {
                values[i] = draws[base];
                continue;
            }
            let mut acc = g.intercept;
            let mut col = base;
            for t in &g.terms {
                let parent = values[self.spec.node_index(&t.parent).unwrap()];
                let mut term = t.coef * parent;
                if t.multiplier.is_some() {
                    term *= draws[col];
                    col += 1;
                }
                acc += term;
            }
            acc += draws[col];
            values[i] = match n.link {
                Link::Identity => acc,
                Link::Log => acc.exp(),
            };
        }
        values
    }

    /// Linear model whose weights are the expected generative coefficients
    /// and whose intercepts absorb the noise means.
    pub fn mean_model(&self) -> Result<FittedScm> {
        let mut equations = Vec::new();
        for n in self.spec.nodes().iter().filter(|n| !n.is_root()) {
            let g = n.generative.as_ref().unwrap();
            let mut terms = Vec::new();
            let mut coefs = Vec::new();
            for p in &n.parents {
                let coef: f64 = g
                    .terms
                    .iter()
                    .filter(|t| &t.parent == p)
                    .map(|t| t.coef * t.multiplier.as_ref().map_or(1.0, Distribution::mean))
                    .sum();
                terms.push(DesignTerm::numeric(p.clone()));
                coefs.push(coef);
            }
            equations.push(Equation {
                node: n.name.clone(),
                link: n.link,
                intercept: g.intercept + g.noise.mean(),
                terms,
                coefs,
                std_errors: Vec::new(),
                resid_se: 0.0,
            });
        }
        FittedScm::from_equations(self.spec.clone(), equations)
    }

    /// Rows of a dataset with `schema` from the draw table. Nodes must cover
    /// every feature and protected attribute of `schema`.
    pub fn materialize(&self, schema: Schema, draws: &DrawTable, clf: &Classifier) -> Result<Dataset> {
        let feature_nodes = schema
            .features
            .iter()
            .map(|f| {
                self.spec
                    .node_index(&f.name)
                    .ok_or_else(|| AuditError::UnknownNode(f.name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let protected_nodes = schema
            .protected
            .iter()
            .map(|p| {
                self.spec
                    .node_index(&p.name)
                    .ok_or_else(|| AuditError::UnknownNode(p.name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let bound = clf.bind(&schema)?;
        let none = BTreeMap::new();
        let rows = draws
            .rows
            .iter()
            .enumerate()
            .map(|(id, draw)| {
                let v = self.evaluate(draw, &none);
                let x: Vec<f64> = feature_nodes.iter().map(|&i| v[i]).collect();
                let a: Vec<u8> = protected_nodes.iter().map(|&i| u8::from(v[i] == 1.0)).collect();
                let y_hat = bound.classify(&x);
                Record { id, x, a, y_hat }
            })
            .collect();
        let levels = vec![Vec::new(); schema.features.len()];
        Dataset::new(schema, rows, levels)
    }
}

/// Stored exogenous draws, one row per generated record.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DrawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Sidecar CSV: `row_id` then one column per draw.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["row_id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(r.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<DrawTable> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("row_id") {
            return Err(AuditError::MissingColumn("row_id".into()));
        }
        let columns: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let id: usize = rec[0].parse().map_err(|_| AuditError::InvalidCell {
                row: i,
                column: "row_id".into(),
                value: rec[0].to_string(),
                reason: "not a row index".into(),
            })?;
            if id != i {
                return Err(AuditError::InvalidCell {
                    row: i,
                    column: "row_id".into(),
                    value: rec[0].to_string(),
                    reason: "rows must be listed in order".into(),
                });
            }
            let vals = columns
                .iter()
                .enumerate()
                .map(|(c, name)| {
                    let cell = rec.get(c + 1).unwrap_or("");
                    cell.parse::<f64>().map_err(|_| AuditError::InvalidCell {
                        row: i,
                        column: name.clone(),
                        value: cell.to_string(),
                        reason: "not a number".into(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(vals);
        }
        Ok(DrawTable { columns, rows })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<DrawTable> {
        DrawTable::read_csv(std::fs::File::open(path)?)
    }
}

/// Exact counterfactuals from stored draws.
#[derive(Debug, Clone)]
pub struct StoredNoiseModel<'a> {
    scm: &'a GenerativeScm,
    draws: &'a DrawTable,
    interventions: BTreeMap<String, f64>,
}

impl<'a> StoredNoiseModel<'a> {
    pub fn new(
        scm: &'a GenerativeScm,
        draws: &'a DrawTable,
        interventions: BTreeMap<String, f64>,
    ) -> Result<Self> {
        if draws.columns != scm.draw_names() {
            return Err(AuditError::Config(
                "draw table columns do not match the generative model".into(),
            ));
        }
        for node in interventions.keys() {
            if scm.spec.node_index(node).is_none() {
                return Err(AuditError::UnknownNode(node.clone()));
            }
        }
        Ok(StoredNoiseModel {
            scm,
            draws,
            interventions,
        })
    }
}

impl CounterfactualModel for StoredNoiseModel<'_> {
    fn spec(&self) -> &ScmSpec {
        self.scm.spec()
    }

    fn interventions(&self) -> &BTreeMap<String, f64> {
        &self.interventions
    }

    fn evaluate(&self, row: usize) -> Result<Vec<f64>> {
        let draws = self.draws.rows.get(row).ok_or_else(|| AuditError::MissingNoise {
            row,
            node: self.draws.columns.first().cloned().unwrap_or_default(),
        })?;
        Ok(self.scm.evaluate(draws, &self.interventions))
    }
}

pub const LOAN_GENDER: &str = "Gender";
pub const LOAN_SALARY: &str = "AnnualSalary";
pub const LOAN_BALANCE: &str = "AccountBalance";
pub const LOAN_DECISION: &str = "LoanApproval";

/// Loan scenario:
///
/// ```text
/// A  ~ Ber(p_protected)
/// X1 = salary_penalty · Poi(10) · A + u1_scale · Poi(10)
/// X2 = balance_penalty · χ²(4) · A + balance_salary_weight · X1 + u2_scale · N(0, 1)
/// Ŷ  = 1{X1 + 5·X2 > threshold}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoanScenarioParams {
    pub n: usize,
    pub p_protected: f64,
    pub salary_penalty: f64,
    pub balance_penalty: f64,
    pub balance_salary_weight: f64,
    pub u1_scale: f64,
    pub u2_scale: f64,
    pub threshold: f64,
    pub seed: u64,
}

/// Seed used by the shipped loan scenario.
pub const LOAN_SEED: u64 = 20240501;

impl Default for LoanScenarioParams {
    fn default() -> Self {
        LoanScenarioParams {
            n: 5000,
            p_protected: 0.3429,
            salary_penalty: -1500.0,
            balance_penalty: -300.0,
            balance_salary_weight: 0.3,
            u1_scale: 10000.0,
            u2_scale: 2500.0,
            threshold: 225000.0,
            seed: LOAN_SEED,
        }
    }
}

impl LoanScenarioParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(AuditError::Config("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p_protected) {
            return Err(AuditError::Config("p_protected must lie in [0, 1]".into()));
        }
        if !(self.u1_scale > 0.0 && self.u2_scale > 0.0) {
            return Err(AuditError::Config("noise scales must be positive".into()));
        }
        if !(self.salary_penalty.is_finite()
            && self.balance_penalty.is_finite()
            && self.balance_salary_weight.is_finite()
            && self.threshold.is_finite())
        {
            return Err(AuditError::Config("loan parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<ScmSpec> {
        let mut a = NodeSpec::root(LOAN_GENDER, true);
        a.generative = Some(GenerativeSpec {
            intercept: 0.0,
            terms: Vec::new(),
            noise: Distribution::Bernoulli { p: self.p_protected },
        });
        let mut x1 = NodeSpec::child(LOAN_SALARY, &[LOAN_GENDER], Link::Identity);
        x1.generative = Some(GenerativeSpec {
            intercept: 0.0,
            terms: vec![GenerativeTerm {
                parent: LOAN_GENDER.into(),
                coef: self.salary_penalty,
                multiplier: Some(Distribution::Poisson {
                    rate: 10.0,
                    scale: 1.0,
                    shift: 0.0,
                }),
            }],
            noise: Distribution::Poisson {
                rate: 10.0,
                scale: self.u1_scale,
                shift: 0.0,
            },
        });
        let mut x2 = NodeSpec::child(LOAN_BALANCE, &[LOAN_SALARY, LOAN_GENDER], Link::Identity);
        x2.generative = Some(GenerativeSpec {
            intercept: 0.0,
            terms: vec![
                GenerativeTerm {
                    parent: LOAN_GENDER.into(),
                    coef: self.balance_penalty,
                    multiplier: Some(Distribution::ChiSquared { dof: 4, scale: 1.0 }),
                },
                GenerativeTerm {
                    parent: LOAN_SALARY.into(),
                    coef: self.balance_salary_weight,
                    multiplier: None,
                },
            ],
            noise: Distribution::Normal {
                mean: 0.0,
                sd: self.u2_scale,
            },
        });
        ScmSpec::new(vec![a, x1, x2])
    }

    pub fn classifier(&self) -> Classifier {
        Classifier {
            threshold: self.threshold,
            ..Classifier::loan()
        }
    }
}

pub fn loan_schema() -> Schema {
    Schema::numeric(&[LOAN_SALARY, LOAN_BALANCE], &[LOAN_GENDER], LOAN_DECISION)
        .expect("loan schema is valid")
}

#[derive(Debug, Clone)]
pub struct LoanScenario {
    pub dataset: Dataset,
    pub draws: DrawTable,
    pub model: GenerativeScm,
    /// Mean-coefficient linear model of the generator.
    pub truth: FittedScm,
}

impl LoanScenario {
    /// Counterfactual engine reading the stored draws under `do(Gender := 0)`.
    pub fn stored_noise(&self) -> StoredNoiseModel<'_> {
        StoredNoiseModel::new(
            &self.model,
            &self.draws,
            BTreeMap::from([(LOAN_GENDER.to_string(), 0.0)]),
        )
        .expect("draws match the generator")
    }
}

pub fn generate_loan(params: &LoanScenarioParams) -> Result<LoanScenario> {
    params.validate()?;
    let model = GenerativeScm::new(params.spec()?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let rows = (0..params.n).map(|_| model.sample_draws(&mut rng)).collect();
    let draws = DrawTable {
        columns: model.draw_names(),
        rows,
    };
    let dataset = model.materialize(loan_schema(), &draws, &params.classifier())?;
    let truth = model.mean_model()?;
    Ok(LoanScenario {
        dataset,
        draws,
        model,
        truth,
    })
}

pub const SCHOOL_RACE: &str = "Race";
pub const SCHOOL_GENDER: &str = "Gender";
pub const SCHOOL_UGPA: &str = "UGPA";
pub const SCHOOL_LSAT: &str = "LSAT";
pub const SCHOOL_DECISION: &str = "Admitted";

/// Stand-in admissions equations:
///
/// ```text
/// UGPA = b_u + beta1·R + lambda1·G + N(0, sigma_u)
/// LSAT = exp(b_l + beta2·R + lambda2·G + lsat_scale·(Poi(lsat_rate) − lsat_rate))
/// ```
/// Defaults are calibrated so that the cutoff classifier admits about 2.3%
/// of applicants, with lower rates for female and non-white applicants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchoolCoefficients {
    pub b_u: f64,
    pub beta1: f64,
    pub lambda1: f64,
    pub sigma_u: f64,
    pub b_l: f64,
    pub beta2: f64,
    pub lambda2: f64,
    pub lsat_rate: f64,
    pub lsat_scale: f64,
}

impl Default for SchoolCoefficients {
    fn default() -> Self {
        SchoolCoefficients {
            b_u: 3.3,
            beta1: -0.15,
            lambda1: 0.0,
            sigma_u: 0.4,
            b_l: 3.62,
            beta2: -0.03,
            lambda2: -0.02,
            lsat_rate: 100.0,
            lsat_scale: 0.012,
        }
    }
}

impl SchoolCoefficients {
    pub fn zero_effect(self) -> Self {
        SchoolCoefficients {
            beta1: 0.0,
            lambda1: 0.0,
            beta2: 0.0,
            lambda2: 0.0,
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchoolParams {
    pub n: usize,
    pub p_nonwhite: f64,
    pub p_female: f64,
    /// Share that is both non-white and female.
    pub p_both: f64,
    pub coefficients: SchoolCoefficients,
    pub seed: u64,
}

pub const SCHOOL_SEED: u64 = 20240502;

impl Default for SchoolParams {
    fn default() -> Self {
        SchoolParams {
            n: 21790,
            p_nonwhite: 0.161,
            p_female: 0.438,
            p_both: 0.084,
            coefficients: SchoolCoefficients::default(),
            seed: SCHOOL_SEED,
        }
    }
}

impl SchoolParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(AuditError::Config("n must be at least 1".into()));
        }
        let p = [self.p_nonwhite, self.p_female, self.p_both];
        if p.iter().any(|v| !(0.0..=1.0).contains(v))
            || self.p_both > self.p_nonwhite.min(self.p_female)
            || self.p_nonwhite + self.p_female - self.p_both > 1.0
        {
            return Err(AuditError::Config("inconsistent group shares".into()));
        }
        let c = &self.coefficients;
        if !(c.sigma_u >= 0.0 && c.lsat_rate > 0.0 && c.lsat_scale >= 0.0) {
            return Err(AuditError::Config("invalid school noise parameters".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<ScmSpec> {
        let c = &self.coefficients;
        let root = |name: &str, p: f64| {
            let mut n = NodeSpec::root(name, true);
            n.generative = Some(GenerativeSpec {
                intercept: 0.0,
                terms: Vec::new(),
                noise: Distribution::Bernoulli { p },
            });
            n
        };
        let term = |parent: &str, coef: f64| GenerativeTerm {
            parent: parent.into(),
            coef,
            multiplier: None,
        };
        let mut ugpa = NodeSpec::child(SCHOOL_UGPA, &[SCHOOL_RACE, SCHOOL_GENDER], Link::Identity);
        ugpa.generative = Some(GenerativeSpec {
            intercept: c.b_u,
            terms: vec![term(SCHOOL_RACE, c.beta1), term(SCHOOL_GENDER, c.lambda1)],
            noise: Distribution::Normal {
                mean: 0.0,
                sd: c.sigma_u,
            },
        });
        let mut lsat = NodeSpec::child(SCHOOL_LSAT, &[SCHOOL_RACE, SCHOOL_GENDER], Link::Log);
        lsat.generative = Some(GenerativeSpec {
            intercept: c.b_l,
            terms: vec![term(SCHOOL_RACE, c.beta2), term(SCHOOL_GENDER, c.lambda2)],
            noise: Distribution::Poisson {
                rate: c.lsat_rate,
                scale: c.lsat_scale,
                shift: -c.lsat_scale * c.lsat_rate,
            },
        });
        ScmSpec::new(vec![
            root(SCHOOL_RACE, self.p_nonwhite),
            root(SCHOOL_GENDER, self.p_female),
            ugpa,
            lsat,
        ])
    }
}

pub fn school_schema() -> Schema {
    Schema::numeric(&[SCHOOL_UGPA, SCHOOL_LSAT], &[SCHOOL_RACE, SCHOOL_GENDER], SCHOOL_DECISION)
        .expect("school schema is valid")
}

#[derive(Debug, Clone)]
pub struct SchoolScenario {
    pub dataset: Dataset,
    pub draws: DrawTable,
    pub model: GenerativeScm,
}

/// Draws the two roots jointly (matching both marginals and the overlap),
/// then the features from the stand-in equations.
pub fn generate_school(params: &SchoolParams) -> Result<SchoolScenario> {
    params.validate()?;
    let model = GenerativeScm::new(params.spec()?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let r1g1 = params.p_both;
    let r1g0 = r1g1 + (params.p_nonwhite - params.p_both);
    let r0g1 = r1g0 + (params.p_female - params.p_both);
    let rows = (0..params.n)
        .map(|_| {
            let u = uniform(&mut rng);
            let (r, g) = if u < r1g1 {
                (1.0, 1.0)
            } else if u < r1g0 {
                (1.0, 0.0)
            } else if u < r0g1 {
                (0.0, 1.0)
            } else {
                (0.0, 0.0)
            };
            let roots = BTreeMap::from([(SCHOOL_RACE.to_string(), r), (SCHOOL_GENDER.to_string(), g)]);
            model.sample_draws_with_roots(&mut rng, &roots)
        })
        .collect();
    let draws = DrawTable {
        columns: model.draw_names(),
        rows,
    };
    let dataset = model.materialize(school_schema(), &draws, &Classifier::school())?;
    Ok(SchoolScenario {
        dataset,
        draws,
        model,
    })
}

/// The school stand-in dataset alone.
pub fn generate_school_standin(n: usize, coefficients: SchoolCoefficients, seed: u64) -> Result<Dataset> {
    let params = SchoolParams {
        n,
        coefficients,
        seed,
        ..SchoolParams::default()
    };
    Ok(generate_school(&params)?.dataset)
}
