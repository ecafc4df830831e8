//! Counterfactual generation by abduction, action and prediction.
//!
//! Abduction recovers each row's exogenous terms as residuals of the fitted
//! additive-noise model; the action replaces the protected node by a constant;
//! prediction re-evaluates the graph in topological order with the recovered
//! noise. When the data came from a known generator whose noise is not
//! recoverable from residuals, [`CounterfactualModel`] lets stored draws take
//! the place of abduction.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{AuditError, Result};
use crate::scm::{column_value, resolve_column, FittedScm, Link, NodeColumn, ScmSpec};
use crate::synthgen::{BoundClassifier, Classifier};

/// Per-row exogenous values: the observed value for roots, the residual
/// û for every other node. Columns follow the spec's node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTable {
    nodes: Vec<String>,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl NoiseTable {
    pub fn new(nodes: Vec<String>) -> Self {
        NoiseTable {
            nodes,
            rows: BTreeMap::new(),
        }
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn insert(&mut self, row: usize, values: Vec<f64>) {
        assert_eq!(values.len(), self.nodes.len(), "noise row width");
        self.rows.insert(row, values);
    }

    pub fn remove(&mut self, row: usize) -> Option<Vec<f64>> {
        self.rows.remove(&row)
    }

    pub fn row(&self, row: usize) -> Option<&[f64]> {
        self.rows.get(&row).map(Vec::as_slice)
    }

    pub fn get(&self, row: usize, node: &str) -> Option<f64> {
        let j = self.nodes.iter().position(|n| n == node)?;
        self.rows.get(&row).map(|r| r[j])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.keys().copied()
    }
}

fn node_columns(spec: &ScmSpec, d: &Dataset) -> Result<Vec<NodeColumn>> {
    spec.nodes().iter().map(|n| resolve_column(d, &n.name)).collect()
}

/// Residual abduction on every row of `d`.
pub fn abduct(m: &FittedScm, d: &Dataset) -> Result<NoiseTable> {
    let spec = m.spec();
    let cols = node_columns(spec, d)?;
    let names: Vec<String> = spec.nodes().iter().map(|n| n.name.clone()).collect();
    let rows: Vec<(usize, Vec<f64>)> = (0..d.len())
        .into_par_iter()
        .map(|r| {
            let observed: Vec<f64> = cols.iter().map(|&c| column_value(d, c, r)).collect();
            let mut u = Vec::with_capacity(observed.len());
            for (i, node) in spec.nodes().iter().enumerate() {
                let Some(eq) = m.equation_at(i) else {
                    u.push(observed[i]);
                    continue;
                };
                let mean = eq.linear_predictor(|p| observed[spec.node_index(p).unwrap()]);
                let v = observed[i];
                u.push(match node.link {
                    Link::Identity => v - mean,
                    Link::Log => {
                        if v <= 0.0 {
                            return Err(AuditError::NonPositiveLog {
                                node: node.name.clone(),
                                row: r,
                                value: v,
                            });
                        }
                        v.ln() - mean
                    }
                });
            }
            Ok((r, u))
        })
        .collect::<Result<_>>()?;
    Ok(NoiseTable {
        nodes: names,
        rows: rows.into_iter().collect(),
    })
}

/// The mutilated model under `do(assignments)`.
pub fn intervene(m: &FittedScm, assignments: &BTreeMap<String, f64>) -> Result<FittedScm> {
    m.intervene(assignments)
}

fn predict_row(m: &FittedScm, noise: &NoiseTable, row: usize) -> Result<Vec<f64>> {
    let spec = m.spec();
    let u = noise.row(row).ok_or_else(|| AuditError::MissingNoise {
        row,
        node: spec.nodes().first().map(|n| n.name.clone()).unwrap_or_default(),
    })?;
    let mut values = vec![f64::NAN; spec.nodes().len()];
    for &i in spec.topo_order() {
        let node = &spec.nodes()[i];
        let j = noise
            .nodes
            .iter()
            .position(|n| *n == node.name)
            .ok_or_else(|| AuditError::MissingNoise {
                row,
                node: node.name.clone(),
            })?;
        values[i] = if let Some(&v) = m.interventions().get(&node.name) {
            v
        } else {
            match m.equation_at(i) {
                None => u[j],
                Some(eq) => {
                    let lin = eq.linear_predictor(|p| values[spec.node_index(p).unwrap()]) + u[j];
                    match node.link {
                        Link::Identity => lin,
                        Link::Log => lin.exp(),
                    }
                }
            }
        };
    }
    Ok(values)
}

/// Evaluates the (possibly intervened) model on the stored noise of each
/// requested row. Values follow the spec's node order.
pub fn predict(m: &FittedScm, noise: &NoiseTable, row_ids: &[usize]) -> Result<Vec<Vec<f64>>> {
    row_ids
        .par_iter()
        .map(|&r| predict_row(m, noise, r))
        .collect()
}

/// Anything that can produce a row's node values under a fixed intervention.
pub trait CounterfactualModel: Sync {
    fn spec(&self) -> &ScmSpec;
    fn interventions(&self) -> &BTreeMap<String, f64>;
    /// Node values for row `row`, in spec node order.
    fn evaluate(&self, row: usize) -> Result<Vec<f64>>;
}

/// Fitted model plus abducted residuals.
#[derive(Debug, Clone)]
pub struct AbductedModel {
    pub model: FittedScm,
    pub noise: NoiseTable,
}

impl AbductedModel {
    /// Abducts on `d` and applies `do(assignments)`.
    pub fn new(m: &FittedScm, d: &Dataset, assignments: &BTreeMap<String, f64>) -> Result<Self> {
        Ok(AbductedModel {
            noise: abduct(m, d)?,
            model: m.intervene(assignments)?,
        })
    }
}

impl CounterfactualModel for AbductedModel {
    fn spec(&self) -> &ScmSpec {
        self.model.spec()
    }

    fn interventions(&self) -> &BTreeMap<String, f64> {
        self.model.interventions()
    }

    fn evaluate(&self, row: usize) -> Result<Vec<f64>> {
        predict_row(&self.model, &self.noise, row)
    }
}

/// Counterfactual image of one protected row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfRecord {
    pub source_id: usize,
    pub x: Vec<f64>,
    pub a: Vec<u8>,
    pub y_hat: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfDataset {
    intervention: BTreeMap<String, f64>,
    rows: Vec<CfRecord>,
    index: HashMap<usize, usize>,
}

impl CfDataset {
    pub fn new(intervention: BTreeMap<String, f64>, rows: Vec<CfRecord>) -> Self {
        let index = rows.iter().enumerate().map(|(i, r)| (r.source_id, i)).collect();
        CfDataset {
            intervention,
            rows,
            index,
        }
    }

    pub fn intervention(&self) -> &BTreeMap<String, f64> {
        &self.intervention
    }

    pub fn rows(&self) -> &[CfRecord] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Counterfactual of factual row `source_id`, if it was mapped.
    pub fn get(&self, source_id: usize) -> Option<&CfRecord> {
        self.index.get(&source_id).map(|&i| &self.rows[i])
    }

    /// CSV mirroring the factual schema with a leading source row column.
    pub fn write_csv<W: Write>(&self, d: &Dataset, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let s = d.schema();
        let mut header = vec!["source_id".to_string()];
        header.extend(s.features.iter().map(|f| f.name.clone()));
        header.extend(s.protected.iter().map(|p| p.name.clone()));
        header.push(s.decision.clone());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.source_id.to_string()];
            rec.extend(d.format_features(&r.x));
            rec.extend(d.format_protected(&r.a));
            rec.push(r.y_hat.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(d, std::io::BufWriter::new(f))
    }
}

fn check_intervention(d: &Dataset, assignments: &BTreeMap<String, f64>) -> Result<Vec<usize>> {
    if assignments.is_empty() {
        return Err(AuditError::Config("empty intervention".into()));
    }
    assignments
        .iter()
        .map(|(name, &v)| {
            let j = d
                .schema()
                .protected_index(name)
                .map_err(|_| AuditError::Config(format!("intervention target `{name}` is not a protected attribute")))?;
            if v != 0.0 {
                return Err(AuditError::Config(format!(
                    "intervention on `{name}` must set the non-protected value 0, got {v}"
                )));
            }
            Ok(j)
        })
        .collect()
}

/// Maps every row protected on all intervened attributes to its
/// counterfactual and reclassifies it.
pub fn generate_from_model(
    model: &dyn CounterfactualModel,
    d: &Dataset,
    clf: &Classifier,
) -> Result<CfDataset> {
    let assignments = model.interventions().clone();
    let targets = check_intervention(d, &assignments)?;
    let bound: BoundClassifier = clf.bind(d.schema())?;
    let spec = model.spec();
    // Dataset feature j takes node value feature_node[j] when the node exists.
    let feature_node: Vec<Option<usize>> = d
        .schema()
        .features
        .iter()
        .map(|f| spec.node_index(&f.name))
        .collect();
    let ids: Vec<usize> = (0..d.len())
        .filter(|&r| targets.iter().all(|&j| d.row(r).a[j] == 1))
        .collect();
    let rows = ids
        .par_iter()
        .map(|&r| {
            let values = model.evaluate(r)?;
            let src = d.row(r);
            let x: Vec<f64> = feature_node
                .iter()
                .zip(&src.x)
                .map(|(n, &fx)| n.map_or(fx, |i| values[i]))
                .collect();
            let mut a = src.a.clone();
            for &j in &targets {
                a[j] = 0;
            }
            let y_hat = bound.classify(&x);
            Ok(CfRecord {
                source_id: r,
                x,
                a,
                y_hat,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CfDataset::new(assignments, rows))
}

/// Abduction on all rows, `do(assignments)`, prediction for protected rows.
pub fn generate_counterfactual_dataset(
    m: &FittedScm,
    d: &Dataset,
    assignments: &BTreeMap<String, f64>,
    clf: &Classifier,
) -> Result<CfDataset> {
    check_intervention(d, assignments)?;
    let engine = AbductedModel::new(m, d, assignments)?;
    generate_from_model(&engine, d, clf)
}

/// `{attr: 0}`.
pub fn do_zero(attr: &str) -> BTreeMap<String, f64> {
    BTreeMap::from([(attr.to_string(), 0.0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Schema;
    use crate::scm::parse_scm_spec;

    const LOAN: &str = r#"
[[node]]
name = "A"
protected = true
[[node]]
name = "X1"
parents = ["A"]
[[node]]
name = "X2"
parents = ["X1", "A"]
"#;

    fn loan_model(w1a: f64, w21: f64, w2a: f64, b2: f64) -> FittedScm {
        FittedScm::linear(
            parse_scm_spec(LOAN).unwrap(),
            &[("X1", 0.0, &[("A", w1a)]), ("X2", b2, &[("X1", w21), ("A", w2a)])],
        )
        .unwrap()
    }

    fn data(rows: &[(f64, f64, u8)]) -> Dataset {
        Dataset::from_numeric(
            Schema::numeric(&["X1", "X2"], &["A"], "y").unwrap(),
            rows.iter().map(|r| vec![r.0, r.1]).collect(),
            rows.iter().map(|r| vec![r.2]).collect(),
            vec![0; rows.len()],
        )
        .unwrap()
    }

    fn linear_clf() -> Classifier {
        Classifier::linear_threshold(&[("X1", 1.0), ("X2", 5.0)], 225000.0)
    }

    #[test]
    fn residual_arithmetic() {
        let m = loan_model(0.0, 0.3, 0.0, 10.0);
        let d = data(&[(100.0, 45.0, 0)]);
        let u = abduct(&m, &d).unwrap();
        assert!((u.get(0, "X2").unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(u.get(0, "A"), Some(0.0));
        assert_eq!(u.get(0, "X1"), Some(100.0));
    }

    #[test]
    fn log_link_residual() {
        let text = r#"
[[node]]
name = "R"
protected = true
[[node]]
name = "LSAT"
parents = ["R"]
link = "log"
"#;
        let m = FittedScm::linear(parse_scm_spec(text).unwrap(), &[("LSAT", 3.6, &[("R", 0.0)])]).unwrap();
        let d = Dataset::from_numeric(
            Schema::numeric(&["LSAT"], &["R"], "y").unwrap(),
            vec![vec![40.0]],
            vec![vec![1]],
            vec![0],
        )
        .unwrap();
        let u = abduct(&m, &d).unwrap().get(0, "LSAT").unwrap();
        assert!((u - (40f64.ln() - 3.6)).abs() < 1e-12);
        assert!((u - 0.0889).abs() < 1e-4);
    }

    #[test]
    fn reconstruction_without_intervention() {
        let m = loan_model(-1000.0, 0.3, -500.0, 12.0);
        let d = data(&[(35000.0, 7048.0, 1), (52000.0, 14000.0, 0), (1.5, -3.2, 1)]);
        let u = abduct(&m, &d).unwrap();
        let got = predict(&m, &u, &[0, 1, 2]).unwrap();
        for (r, v) in got.iter().enumerate() {
            assert_eq!(v[0], d.row(r).a[0] as f64);
            assert!((v[1] - d.row(r).x[0]).abs() < 1e-8);
            assert!((v[2] - d.row(r).x[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn intervention_recomputes_downstream() {
        let m = loan_model(-1000.0, 0.5, -200.0, 0.0);
        let d = data(&[(1000.0, 700.0, 1)]);
        let u = abduct(&m, &d).unwrap();
        let mi = intervene(&m, &do_zero("A")).unwrap();
        let v = &predict(&mi, &u, &[0]).unwrap()[0];
        // û1 = 2000, û2 = 700 − 500 + 200 = 400
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 2000.0).abs() < 1e-9);
        assert!((v[2] - (0.5 * 2000.0 + 400.0)).abs() < 1e-9);
    }

    #[test]
    fn missing_noise_entry() {
        let m = loan_model(-1.0, 0.3, 0.0, 0.0);
        let d = data(&[(1.0, 1.0, 1)]);
        let mut u = abduct(&m, &d).unwrap();
        u.remove(0);
        assert!(matches!(predict(&m, &u, &[0]), Err(AuditError::MissingNoise { row: 0, .. })));
    }

    #[test]
    fn fitted_coefficients_reproduce_complainant_counterfactual() {
        // The complainant of the loan walkthrough under a model whose female
        // penalties are 15796 on salary and 2065.2 on balance.
        let m = loan_model(-15796.0, 0.3, -2065.2, 0.0);
        let d = data(&[(35000.0, 7048.0, 1), (60000.0, 20000.0, 0)]);
        let cf = generate_counterfactual_dataset(&m, &d, &do_zero("A"), &linear_clf()).unwrap();
        assert_eq!(cf.len(), 1);
        let r = cf.get(0).unwrap();
        assert!((r.x[0] - 50796.0).abs() < 1e-6);
        assert!((r.x[1] - 13852.0).abs() < 1e-6);
        assert_eq!(r.a, vec![0]);
        assert_eq!(r.y_hat, 0);
        assert!(cf.get(1).is_none());
    }

    #[test]
    fn only_protected_rows_are_mapped() {
        let m = loan_model(-10.0, 0.3, -5.0, 0.0);
        let d = data(&[(10.0, 1.0, 0), (20.0, 2.0, 1), (30.0, 3.0, 0), (40.0, 4.0, 1)]);
        let cf = generate_counterfactual_dataset(&m, &d, &do_zero("A"), &linear_clf()).unwrap();
        let ids: Vec<usize> = cf.rows().iter().map(|r| r.source_id).collect();
        assert_eq!(ids, vec![1, 3]);
    }

    #[test]
    fn intervention_must_target_protected_zero() {
        let m = loan_model(-10.0, 0.3, -5.0, 0.0);
        let d = data(&[(10.0, 1.0, 1)]);
        let one = BTreeMap::from([("A".to_string(), 1.0)]);
        assert!(generate_counterfactual_dataset(&m, &d, &one, &linear_clf()).is_err());
        let feat = BTreeMap::from([("X1".to_string(), 0.0)]);
        assert!(generate_counterfactual_dataset(&m, &d, &feat, &linear_clf()).is_err());
    }

    #[test]
    fn classifier_reapplied_to_counterfactual() {
        let m = loan_model(-100000.0, 0.0, 0.0, 0.0);
        let d = data(&[(150000.0, 0.0, 1)]);
        let cf = generate_counterfactual_dataset(&m, &d, &do_zero("A"), &linear_clf()).unwrap();
        assert_eq!(cf.get(0).unwrap().y_hat, 1);
    }

    #[test]
    fn csv_export_has_source_column() {
        let m = loan_model(-10.0, 0.3, -5.0, 0.0);
        let d = data(&[(10.0, 1.0, 0), (20.0, 2.0, 1)]);
        let cf = generate_counterfactual_dataset(&m, &d, &do_zero("A"), &linear_clf()).unwrap();
        let mut buf = Vec::new();
        cf.write_csv(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("source_id,X1,X2,A,y"));
        assert_eq!(lines.next(), Some("1,30,10,0,0"));
    }
}
