//! Structural causal models: graph specification, validation and fitting.
//!
//! Every non-root node has a structural equation that is linear in its
//! parents, either on the identity scale or on the log scale:
//!
//! ```text
//! identity:  W_j =      b_j + Σ w_jk · W_k  + U_j
//! log:       W_j = exp( b_j + Σ w_jk · W_k  + U_j )
//! ```
//!
//! Categorical parents are dummy coded against a reference level. Fitting is
//! ordinary least squares per node.
//!
//! The spec document is TOML:
//!
//! ```toml
//! [[node]]
//! name = "Gender"
//! protected = true
//!
//! [[node]]
//! name = "AnnualSalary"
//! parents = ["Gender"]
//!
//! [[node]]
//! name = "AccountBalance"
//! parents = ["AnnualSalary", "Gender"]
//! link = "identity"
//! ```
//!
//! A node may also carry a `[node.generative]` table describing how synthetic
//! data is drawn (see [`GenerativeSpec`]).

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{intersection_name, Dataset, FeatureKind};
use crate::error::{AuditError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Identity,
    Log,
}

/// Exogenous distribution used by the synthetic generators. Samples are
/// `scale · raw + shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Distribution {
    Bernoulli {
        p: f64,
    },
    Poisson {
        rate: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        shift: f64,
    },
    ChiSquared {
        dof: u32,
        #[serde(default = "one")]
        scale: f64,
    },
    Normal {
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        sd: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Distribution {
    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Bernoulli { p } => p,
            Distribution::Poisson { rate, scale, shift } => scale * rate + shift,
            Distribution::ChiSquared { dof, scale } => scale * dof as f64,
            Distribution::Normal { mean, .. } => mean,
        }
    }

    fn validate(&self, node: &str) -> Result<()> {
        let ok = match *self {
            Distribution::Bernoulli { p } => (0.0..=1.0).contains(&p),
            Distribution::Poisson { rate, scale, .. } => rate > 0.0 && scale.is_finite(),
            Distribution::ChiSquared { dof, scale } => dof >= 1 && scale.is_finite(),
            Distribution::Normal { sd, mean } => sd >= 0.0 && mean.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(AuditError::SpecFormat(format!(
                "invalid distribution parameters on `{node}`"
            )))
        }
    }
}

/// One term `coef · parent [· multiplier]` of a generative equation. The
/// optional multiplier is a fresh per-row exogenous draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeTerm {
    pub parent: String,
    pub coef: f64,
    #[serde(default)]
    pub multiplier: Option<Distribution>,
}

/// Data-generating equation: for roots the node value is the `noise` draw;
/// otherwise `link⁻¹(intercept + Σ terms + noise)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSpec {
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub terms: Vec<GenerativeTerm>,
    pub noise: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    #[serde(default)]
    pub parents: Vec<String>,
    #[serde(default)]
    pub link: Link,
    #[serde(default)]
    pub protected: bool,
    /// Reference level when this node is a categorical parent.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub generative: Option<GenerativeSpec>,
}

impl NodeSpec {
    pub fn root(name: impl Into<String>, protected: bool) -> Self {
        NodeSpec {
            name: name.into(),
            parents: Vec::new(),
            link: Link::Identity,
            protected,
            reference: None,
            generative: None,
        }
    }

    pub fn child(name: impl Into<String>, parents: &[&str], link: Link) -> Self {
        NodeSpec {
            name: name.into(),
            parents: parents.iter().map(|p| p.to_string()).collect(),
            link,
            protected: false,
            reference: None,
            generative: None,
        }
    }

    pub fn is_root(&self) -> bool {
        self.parents.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpecDocument {
    node: Vec<NodeSpec>,
}

/// Validated causal graph. Node order is declaration order; `topo_order`
/// lists node indices so that parents precede children.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmSpec {
    nodes: Vec<NodeSpec>,
    topo_order: Vec<usize>,
}

impl ScmSpec {
    pub fn new(nodes: Vec<NodeSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for n in &nodes {
            if !seen.insert(n.name.as_str()) {
                return Err(AuditError::SpecFormat(format!("node `{}` declared twice", n.name)));
            }
        }
        for n in &nodes {
            if n.protected && !n.parents.is_empty() {
                return Err(AuditError::ProtectedWithParents(n.name.clone()));
            }
            let mut ps = HashSet::new();
            for p in &n.parents {
                if !seen.contains(p.as_str()) {
                    return Err(AuditError::UnknownParent {
                        node: n.name.clone(),
                        parent: p.clone(),
                    });
                }
                if !ps.insert(p.as_str()) {
                    return Err(AuditError::SpecFormat(format!(
                        "node `{}` lists parent `{p}` twice",
                        n.name
                    )));
                }
            }
            if let Some(g) = &n.generative {
                g.noise.validate(&n.name)?;
                for t in &g.terms {
                    if !n.parents.contains(&t.parent) {
                        return Err(AuditError::SpecFormat(format!(
                            "generative term on `{}` uses non-parent `{}`",
                            n.name, t.parent
                        )));
                    }
                    if let Some(m) = &t.multiplier {
                        m.validate(&n.name)?;
                    }
                }
            }
        }
        let topo_order = topological_order(&nodes)?;
        Ok(ScmSpec { nodes, topo_order })
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn topo_names(&self) -> Vec<&str> {
        self.topo_order.iter().map(|&i| self.nodes[i].name.as_str()).collect()
    }

    pub fn protected_nodes(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| n.protected)
            .map(|n| n.name.as_str())
            .collect()
    }

    /// Indices of `name` and everything downstream of it.
    pub fn descendants(&self, name: &str) -> Result<HashSet<usize>> {
        let start = self
            .node_index(name)
            .ok_or_else(|| AuditError::UnknownNode(name.to_string()))?;
        let mut out = HashSet::from([start]);
        for &i in &self.topo_order {
            if self.nodes[i]
                .parents
                .iter()
                .any(|p| out.contains(&self.node_index(p).unwrap()))
            {
                out.insert(i);
            }
        }
        Ok(out)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&SpecDocument {
            node: self.nodes.clone(),
        })
        .expect("scm spec serializes")
    }
}

/// Parses and validates a TOML spec document.
pub fn parse_scm_spec(text: &str) -> Result<ScmSpec> {
    let doc: SpecDocument =
        toml::from_str(text).map_err(|e| AuditError::SpecFormat(e.to_string()))?;
    ScmSpec::new(doc.node)
}

fn topological_order(nodes: &[NodeSpec]) -> Result<Vec<usize>> {
    let index: HashMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.name.as_str(), i))
        .collect();
    let mut indegree: Vec<usize> = nodes.iter().map(|n| n.parents.len()).collect();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for p in &n.parents {
            children[index[p.as_str()]].push(i);
        }
    }
    let mut order = Vec::with_capacity(nodes.len());
    let mut done = vec![false; nodes.len()];
    // Repeatedly take the first ready node in declaration order.
    while order.len() < nodes.len() {
        let Some(next) = (0..nodes.len()).find(|&i| !done[i] && indegree[i] == 0) else {
            return Err(AuditError::Cycle(find_cycle(nodes, &index, &done)));
        };
        done[next] = true;
        order.push(next);
        for &c in &children[next] {
            indegree[c] -= 1;
        }
    }
    Ok(order)
}

fn find_cycle(nodes: &[NodeSpec], index: &HashMap<&str, usize>, done: &[bool]) -> Vec<String> {
    // Every remaining node has a remaining parent; walk parents until a repeat.
    let start = (0..nodes.len()).find(|&i| !done[i]).unwrap();
    let mut path = vec![start];
    let mut pos: HashMap<usize, usize> = HashMap::from([(start, 0)]);
    let mut cur = start;
    loop {
        let parent = nodes[cur]
            .parents
            .iter()
            .map(|p| index[p.as_str()])
            .find(|&p| !done[p])
            .unwrap();
        if let Some(&at) = pos.get(&parent) {
            let mut cycle: Vec<String> = path[at..]
                .iter()
                .rev()
                .map(|&i| nodes[i].name.clone())
                .collect();
            cycle.push(cycle[0].clone());
            return cycle;
        }
        pos.insert(parent, path.len());
        path.push(parent);
        cur = parent;
    }
}

/// Where a node's values live in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeColumn {
    Feature(usize),
    Protected(usize),
}

pub fn resolve_column(d: &Dataset, name: &str) -> Result<NodeColumn> {
    if let Some(j) = d.schema().feature_index(name) {
        return Ok(NodeColumn::Feature(j));
    }
    d.schema()
        .protected_index(name)
        .map(NodeColumn::Protected)
        .map_err(|_| AuditError::MissingColumn(name.to_string()))
}

pub fn column_value(d: &Dataset, col: NodeColumn, row: usize) -> f64 {
    match col {
        NodeColumn::Feature(j) => d.row(row).x[j],
        NodeColumn::Protected(j) => d.row(row).a[j] as f64,
    }
}

/// One regressor of a fitted equation: a numeric parent, or the dummy for
/// one non-reference level of a categorical parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTerm {
    pub parent: String,
    #[serde(default)]
    pub level: Option<usize>,
}

impl DesignTerm {
    pub fn numeric(parent: impl Into<String>) -> Self {
        DesignTerm {
            parent: parent.into(),
            level: None,
        }
    }

    pub fn value(&self, parent_value: f64) -> f64 {
        match self.level {
            None => parent_value,
            Some(l) => f64::from(u8::from(parent_value == l as f64)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equation {
    pub node: String,
    pub link: Link,
    pub intercept: f64,
    pub terms: Vec<DesignTerm>,
    pub coefs: Vec<f64>,
    /// Standard errors, intercept first; empty when the equation was given explicitly.
    #[serde(default)]
    pub std_errors: Vec<f64>,
    /// Residual standard error on the fitted scale.
    #[serde(default)]
    pub resid_se: f64,
}

impl Equation {
    /// `b + Σ w·term` on the link scale, with parent values looked up by name.
    pub fn linear_predictor(&self, parent_value: impl Fn(&str) -> f64) -> f64 {
        let mut acc = self.intercept;
        for (t, w) in self.terms.iter().zip(&self.coefs) {
            acc += w * t.value(parent_value(&t.parent));
        }
        acc
    }

    pub fn weight_len(&self) -> usize {
        1 + self.coefs.len()
    }

    pub fn coef_of(&self, parent: &str) -> Option<f64> {
        self.terms
            .iter()
            .position(|t| t.parent == parent && t.level.is_none())
            .map(|i| self.coefs[i])
    }
}

/// A graph together with one equation per non-root node.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedScm {
    spec: ScmSpec,
    /// Aligned with `spec.nodes()`; `None` for roots.
    equations: Vec<Option<Equation>>,
    /// Nodes fixed by `do(·)`.
    interventions: BTreeMap<String, f64>,
}

impl FittedScm {
    /// Builds a model from explicit equations, one per non-root node.
    pub fn from_equations(spec: ScmSpec, equations: Vec<Equation>) -> Result<Self> {
        let mut slots: Vec<Option<Equation>> = vec![None; spec.nodes().len()];
        for eq in equations {
            let i = spec
                .node_index(&eq.node)
                .ok_or_else(|| AuditError::UnknownNode(eq.node.clone()))?;
            let node = &spec.nodes()[i];
            if node.is_root() {
                return Err(AuditError::SpecFormat(format!(
                    "root node `{}` cannot have an equation",
                    node.name
                )));
            }
            if eq.terms.len() != eq.coefs.len() {
                return Err(AuditError::SpecFormat(format!(
                    "equation for `{}` has {} terms but {} coefficients",
                    eq.node,
                    eq.terms.len(),
                    eq.coefs.len()
                )));
            }
            if let Some(t) = eq.terms.iter().find(|t| !node.parents.contains(&t.parent)) {
                return Err(AuditError::UnknownParent {
                    node: eq.node.clone(),
                    parent: t.parent.clone(),
                });
            }
            slots[i] = Some(eq);
        }
        if let Some(i) = (0..slots.len()).find(|&i| !spec.nodes()[i].is_root() && slots[i].is_none()) {
            return Err(AuditError::SpecFormat(format!(
                "missing equation for `{}`",
                spec.nodes()[i].name
            )));
        }
        Ok(FittedScm {
            spec,
            equations: slots,
            interventions: BTreeMap::new(),
        })
    }

    /// Linear model where each listed coefficient multiplies a numeric parent.
    pub fn linear(spec: ScmSpec, equations: &[(&str, f64, &[(&str, f64)])]) -> Result<Self> {
        let eqs = equations
            .iter()
            .map(|(node, intercept, coefs)| {
                let link = spec.node(node).map(|n| n.link).unwrap_or_default();
                Equation {
                    node: node.to_string(),
                    link,
                    intercept: *intercept,
                    terms: coefs.iter().map(|(p, _)| DesignTerm::numeric(*p)).collect(),
                    coefs: coefs.iter().map(|(_, w)| *w).collect(),
                    std_errors: Vec::new(),
                    resid_se: 0.0,
                }
            })
            .collect();
        FittedScm::from_equations(spec, eqs)
    }

    pub fn spec(&self) -> &ScmSpec {
        &self.spec
    }

    pub fn equation(&self, node: &str) -> Option<&Equation> {
        self.spec.node_index(node).and_then(|i| self.equations[i].as_ref())
    }

    pub fn equations(&self) -> impl Iterator<Item = &Equation> {
        self.equations.iter().flatten()
    }

    pub(crate) fn equation_at(&self, i: usize) -> Option<&Equation> {
        self.equations[i].as_ref()
    }

    pub fn topo_order(&self) -> Vec<&str> {
        self.spec.topo_names()
    }

    pub fn interventions(&self) -> &BTreeMap<String, f64> {
        &self.interventions
    }

    /// The mutilated model under `do(node := value)` for every entry: the
    /// intervened nodes become constants, their outgoing edges stay.
    pub fn intervene(&self, assignments: &BTreeMap<String, f64>) -> Result<FittedScm> {
        let mut out = self.clone();
        for (node, &value) in assignments {
            let i = self
                .spec
                .node_index(node)
                .ok_or_else(|| AuditError::UnknownNode(node.clone()))?;
            if !value.is_finite() {
                return Err(AuditError::Config(format!("non-finite intervention on `{node}`")));
            }
            if self.spec.nodes()[i].link == Link::Log && value <= 0.0 {
                return Err(AuditError::Config(format!(
                    "log-link node `{node}` cannot be set to {value}"
                )));
            }
            if self.spec.nodes()[i].protected && value != 0.0 && value != 1.0 {
                return Err(AuditError::Config(format!(
                    "protected node `{node}` is binary, cannot be set to {value}"
                )));
            }
            out.interventions.insert(node.clone(), value);
        }
        Ok(out)
    }
}

/// Ordinary least squares for every non-root node (on the log scale for
/// log-link nodes).
pub fn fit_scm(spec: &ScmSpec, d: &Dataset) -> Result<FittedScm> {
    let columns: Vec<NodeColumn> = spec
        .nodes()
        .iter()
        .map(|n| resolve_column(d, &n.name))
        .collect::<Result<_>>()?;
    for (n, col) in spec.nodes().iter().zip(&columns) {
        if n.protected && !matches!(col, NodeColumn::Protected(_)) {
            return Err(AuditError::SpecFormat(format!(
                "node `{}` is protected in the scm but not in the dataset schema",
                n.name
            )));
        }
    }
    let kind_of = |col: NodeColumn| match col {
        NodeColumn::Feature(j) => d.schema().features[j].kind,
        NodeColumn::Protected(_) => FeatureKind::Continuous,
    };

    let mut equations = Vec::new();
    for (i, node) in spec.nodes().iter().enumerate() {
        if node.is_root() {
            continue;
        }
        if kind_of(columns[i]) == FeatureKind::Categorical {
            return Err(AuditError::SpecFormat(format!(
                "categorical node `{}` cannot have a linear equation",
                node.name
            )));
        }
        let mut terms = Vec::new();
        for p in &node.parents {
            let pi = spec.node_index(p).unwrap();
            match columns[pi] {
                NodeColumn::Feature(j) if d.schema().features[j].kind == FeatureKind::Categorical => {
                    let levels = d.levels(j);
                    let reference = match &spec.nodes()[pi].reference {
                        Some(r) => d.level_code(j, r).ok_or_else(|| {
                            AuditError::SpecFormat(format!("unknown reference level `{r}` for `{p}`"))
                        })?,
                        None => 0,
                    };
                    for l in (0..levels.len()).filter(|&l| l != reference) {
                        terms.push(DesignTerm {
                            parent: p.clone(),
                            level: Some(l),
                        });
                    }
                }
                _ => terms.push(DesignTerm::numeric(p.clone())),
            }
        }

        let n = d.len();
        let p = 1 + terms.len();
        if n < p {
            return Err(AuditError::SingularFit(node.name.clone()));
        }
        let mut y = DVector::<f64>::zeros(n);
        let mut x = DMatrix::<f64>::zeros(n, p);
        for r in 0..n {
            let v = column_value(d, columns[i], r);
            y[r] = match node.link {
                Link::Identity => v,
                Link::Log => {
                    if v <= 0.0 {
                        return Err(AuditError::NonPositiveLog {
                            node: node.name.clone(),
                            row: r,
                            value: v,
                        });
                    }
                    v.ln()
                }
            };
            x[(r, 0)] = 1.0;
            for (c, t) in terms.iter().enumerate() {
                let pi = spec.node_index(&t.parent).unwrap();
                x[(r, c + 1)] = t.value(column_value(d, columns[pi], r));
            }
        }
        let fit = least_squares(&x, &y).ok_or_else(|| AuditError::SingularFit(node.name.clone()))?;
        equations.push(Equation {
            node: node.name.clone(),
            link: node.link,
            intercept: fit.beta[0],
            terms,
            coefs: fit.beta[1..].to_vec(),
            std_errors: fit.std_errors,
            resid_se: fit.resid_se,
        });
    }
    FittedScm::from_equations(spec.clone(), equations)
}

struct LeastSquares {
    beta: Vec<f64>,
    std_errors: Vec<f64>,
    resid_se: f64,
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<LeastSquares> {
    let (n, p) = x.shape();
    // Scale columns to unit norm so the rank test is unit-free.
    let norms: Vec<f64> = (0..p).map(|c| x.column(c).norm()).collect();
    if norms.iter().any(|&s| s == 0.0) {
        return None;
    }
    let mut xs = x.clone();
    for (c, s) in norms.iter().enumerate() {
        xs.column_mut(c).unscale_mut(*s);
    }
    let svd = xs.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.iter().any(|&s| s <= smax * 1e-10) {
        return None;
    }
    let beta_s = svd.solve(y, 0.0).ok()?;
    let beta: Vec<f64> = (0..p).map(|c| beta_s[c] / norms[c]).collect();
    let resid = y - x * DVector::from_vec(beta.clone());
    let dof = n.saturating_sub(p);
    let sigma2 = if dof > 0 {
        resid.norm_squared() / dof as f64
    } else {
        0.0
    };
    // Var(β_s) = σ² V S⁻² Vᵀ
    let v_t = svd.v_t.as_ref()?;
    let std_errors = (0..p)
        .map(|c| {
            let mut acc = 0.0;
            for (k, s) in svd.singular_values.iter().enumerate() {
                acc += (v_t[(k, c)] / s).powi(2);
            }
            (sigma2 * acc).sqrt() / norms[c]
        })
        .collect();
    Some(LeastSquares {
        beta,
        std_errors,
        resid_se: sigma2.sqrt(),
    })
}

/// Replaces the root nodes `attrs` with their conjunction root and refits
/// every equation on `d`, which must already carry the conjunction column.
pub fn merge_intersectional(
    fitted: &FittedScm,
    d: &Dataset,
    attrs: &[&str],
) -> Result<(ScmSpec, FittedScm)> {
    if attrs.len() < 2 {
        return Err(AuditError::Intersection(
            "an intersection needs at least two attributes".into(),
        ));
    }
    let spec = fitted.spec();
    let mut seen = HashSet::new();
    for &a in attrs {
        if !seen.insert(a) {
            return Err(AuditError::DuplicateAttribute(a.to_string()));
        }
        let node = spec.node(a).ok_or_else(|| AuditError::UnknownNode(a.to_string()))?;
        if !node.is_root() {
            return Err(AuditError::Intersection(format!("`{a}` is not a root node")));
        }
    }
    let merged = intersection_name(attrs);
    let mut nodes = Vec::with_capacity(spec.nodes().len());
    let mut inserted = false;
    for n in spec.nodes() {
        if seen.contains(n.name.as_str()) {
            if !inserted {
                nodes.push(NodeSpec::root(merged.clone(), true));
                inserted = true;
            }
            continue;
        }
        let mut n = n.clone();
        let mut parents = Vec::with_capacity(n.parents.len());
        for p in &n.parents {
            let p = if seen.contains(p.as_str()) { &merged } else { p };
            if !parents.contains(p) {
                parents.push(p.clone());
            }
        }
        n.parents = parents;
        // Generative declarations describe the unmerged world only.
        n.generative = None;
        nodes.push(n);
    }
    let new_spec = ScmSpec::new(nodes)?;
    let refit = fit_scm(&new_spec, d)?;
    Ok((new_spec, refit))
}
