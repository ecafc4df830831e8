//! Run manifests.
//!
//! A manifest is one TOML file that fixes every input of an audit: where the
//! data comes from (a CSV file or a built-in scenario generator), the causal
//! graph, the classifier, the counterfactual source, the methods and the
//! neighborhood sizes. Relative paths are resolved against the manifest's
//! directory. `manifest.schema.json` next to this crate describes the format.
//!
//! ```toml
//! seed = 20240501
//! output = "out/loan"
//!
//! [dataset]
//! scenario = "loan"
//!
//! [scm]
//! path = "../scm/loan.scm.toml"
//! counterfactuals = "stored_noise"
//!
//! [classifier]
//! preset = "loan"
//!
//! [audit]
//! methods = ["cst_without", "cst_with", "st", "cf"]
//! attrs = ["Gender"]
//! k = [15, 30, 50, 100, 250]
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use cst_core::dataset::Schema;
use cst_core::detectors::{Direction, Method, Mode, RunConfig};
use cst_core::synthgen::Classifier;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Loan,
    School,
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "loan" => Ok(Scenario::Loan),
            "school" => Ok(Scenario::School),
            _ => Err(format!("unknown scenario `{s}` (expected loan or school)")),
        }
    }
}

/// How `x^CF` is obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterfactualSource {
    /// Fit the SCM on the data, abduct residuals, intervene, predict.
    #[default]
    Abduction,
    /// Re-evaluate the generative SCM on the stored exogenous draws.
    StoredNoise,
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// CSV input; when absent the scenario generator produces the data.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    /// Row count for the generator.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Required for CSV input unless a scenario supplies it.
    #[serde(default)]
    pub schema: Option<Schema>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmConfig {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub counterfactuals: CounterfactualSource,
    /// Draw sidecar for stored-noise counterfactuals over a CSV input.
    #[serde(default)]
    pub draws: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassifierConfig {
    Preset { preset: Scenario },
    Custom(Classifier),
}

impl ClassifierConfig {
    pub fn build(&self) -> Classifier {
        match self {
            ClassifierConfig::Preset { preset: Scenario::Loan } => Classifier::loan(),
            ClassifierConfig::Preset { preset: Scenario::School } => Classifier::school(),
            ClassifierConfig::Custom(c) => c.clone(),
        }
    }
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_alpha() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub direction: Direction,
    pub attrs: Vec<String>,
    pub k: Vec<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub include_centers: bool,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

/// Sizes for `sweep`: an explicit list, an inclusive range, or both.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub k: Vec<usize>,
    #[serde(default)]
    pub start: Option<usize>,
    #[serde(default)]
    pub end: Option<usize>,
    #[serde(default)]
    pub step: Option<usize>,
}

impl SweepConfig {
    /// Sorted, deduplicated sizes.
    pub fn sizes(&self) -> Result<Vec<usize>> {
        let mut ks = self.k.clone();
        match (self.start, self.end) {
            (Some(s), Some(e)) => {
                let step = self.step.unwrap_or(1);
                if step == 0 || s > e {
                    return Err(CliError::Manifest(format!(
                        "sweep range {s}..={e} step {step} is empty"
                    )));
                }
                ks.extend((s..=e).step_by(step));
            }
            (None, None) if self.step.is_none() => {}
            _ => {
                return Err(CliError::Manifest(
                    "sweep range needs both start and end".into(),
                ))
            }
        }
        ks.sort_unstable();
        ks.dedup();
        if ks.is_empty() {
            return Err(CliError::Manifest("sweep has no neighborhood sizes".into()));
        }
        if ks[0] < 1 {
            return Err(CliError::Manifest("sweep sizes must be at least 1".into()));
        }
        Ok(ks)
    }
}

/// Parses `start:end:step` (step defaults to 1).
pub fn parse_k_range(s: &str) -> std::result::Result<SweepConfig, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}"));
    match parts.as_slice() {
        [a, b] => Ok(SweepConfig {
            start: Some(num(a)?),
            end: Some(num(b)?),
            ..SweepConfig::default()
        }),
        [a, b, c] => Ok(SweepConfig {
            start: Some(num(a)?),
            end: Some(num(b)?),
            step: Some(num(c)?),
            ..SweepConfig::default()
        }),
        _ => Err(format!("expected start:end[:step], got `{s}`")),
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub scm: ScmConfig,
    #[serde(default)]
    pub classifier: Option<ClassifierConfig>,
    pub audit: AuditConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line values that replace manifest fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub k: Option<Vec<usize>>,
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    pub methods: Option<Vec<Method>>,
    pub mode: Option<Mode>,
    pub direction: Option<Direction>,
    pub attrs: Option<Vec<String>>,
    pub include_centers: bool,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    /// Resolved against the working directory, not the manifest.
    pub out: Option<PathBuf>,
}

impl RunManifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut m: RunManifest =
            toml::from_str(text).map_err(|e| CliError::Manifest(e.to_string()))?;
        m.base_dir = base_dir.into();
        m.output = m.base_dir.join(&m.output);
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(CliError::file(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        RunManifest::parse(&text, base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let a = &mut self.audit;
        if let Some(k) = &o.k {
            a.k = k.clone();
        }
        if let Some(v) = o.alpha {
            a.alpha = v;
        }
        if let Some(v) = o.tau {
            a.tau = v;
        }
        if let Some(v) = &o.methods {
            a.methods = v.clone();
        }
        if let Some(v) = o.mode {
            a.mode = v;
        }
        if let Some(v) = o.direction {
            a.direction = v;
        }
        if let Some(v) = &o.attrs {
            a.attrs = v.clone();
        }
        if o.include_centers {
            a.include_centers = true;
        }
        if o.epsilon.is_some() {
            a.epsilon = o.epsilon;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.output = out.clone();
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.audit;
        if a.k.is_empty() {
            return Err(CliError::Manifest("audit.k must list at least one size".into()));
        }
        if a.k.iter().any(|&k| k < 1) {
            return Err(CliError::Manifest("audit.k entries must be at least 1".into()));
        }
        if a.methods.is_empty() {
            return Err(CliError::Manifest("audit.methods is empty".into()));
        }
        let mut seen = HashSet::new();
        for m in &a.methods {
            if !seen.insert(m) {
                return Err(CliError::Manifest(format!("method {} listed twice", m.as_str())));
            }
        }
        let mut seen = HashSet::new();
        for k in &a.k {
            if !seen.insert(k) {
                return Err(CliError::Manifest(format!("k = {k} listed twice")));
            }
        }
        if self.dataset.path.is_none() && self.dataset.scenario.is_none() {
            return Err(CliError::Manifest(
                "dataset needs a path or a scenario".into(),
            ));
        }
        if self.dataset.n == Some(0) {
            return Err(CliError::Manifest("dataset.n must be positive".into()));
        }
        if !self.dataset.delimiter.is_ascii() {
            return Err(CliError::Manifest("dataset.delimiter must be ASCII".into()));
        }
        if let Some(s) = &self.sweep {
            s.sizes()?;
        }
        for &method in &a.methods {
            self.run_config(method, a.k[0]).validate()?;
        }
        Ok(())
    }

    /// Methods in canonical order.
    pub fn methods(&self) -> Vec<Method> {
        Method::ALL
            .iter()
            .copied()
            .filter(|m| self.audit.methods.contains(m))
            .collect()
    }

    /// Audit sizes, ascending.
    pub fn ks(&self) -> Vec<usize> {
        let mut ks = self.audit.k.clone();
        ks.sort_unstable();
        ks
    }

    pub fn run_config(&self, method: Method, k: usize) -> RunConfig {
        let a = &self.audit;
        RunConfig {
            method,
            mode: a.mode,
            direction: a.direction,
            attrs: a.attrs.clone(),
            k,
            tau: a.tau,
            alpha: a.alpha,
            epsilon: a.epsilon,
            seed: self.seed,
            include_centers: a.include_centers,
            normalize: a.normalize,
        }
    }

    /// SHA-256 over the manifest contents, ignoring the output location.
    pub fn parameter_hash(&self) -> String {
        let mut m = self.clone();
        m.output = PathBuf::new();
        let json = serde_json::to_vec(&m).expect("manifest serializes");
        crate::sha256_hex(&json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[dataset]
scenario = "loan"
[audit]
attrs = ["Gender"]
k = [15, 30]
"#;

    #[test]
    fn defaults_fill_in() {
        let m = RunManifest::parse(MINIMAL, "/tmp/x").unwrap();
        m.validate().unwrap();
        assert_eq!(m.audit.methods, Method::ALL.to_vec());
        assert_eq!(m.audit.alpha, 0.05);
        assert_eq!(m.audit.tau, 0.0);
        assert!(m.audit.normalize);
        assert_eq!(m.output, PathBuf::from("/tmp/x/out"));
        assert_eq!(m.scm.counterfactuals, CounterfactualSource::Abduction);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |edit: &dyn Fn(&mut RunManifest)| {
            let mut m = RunManifest::parse(MINIMAL, "").unwrap();
            edit(&mut m);
            m.validate().is_err()
        };
        assert!(bad(&|m| m.audit.k.clear()));
        assert!(bad(&|m| m.audit.k = vec![0]));
        assert!(bad(&|m| m.audit.k = vec![5, 5]));
        assert!(bad(&|m| m.audit.alpha = 0.0));
        assert!(bad(&|m| m.audit.alpha = 0.6));
        assert!(bad(&|m| m.audit.tau = 1.5));
        assert!(bad(&|m| m.audit.tau = -1.01));
        assert!(bad(&|m| m.audit.methods.clear()));
        assert!(bad(&|m| m.audit.attrs.clear()));
        assert!(bad(&|m| m.audit.epsilon = Some(0.0)));
        assert!(bad(&|m| m.dataset.scenario = None));
        assert!(!bad(&|m| m.audit.alpha = 0.5));
        assert!(!bad(&|m| m.audit.tau = -1.0));
    }

    #[test]
    fn unknown_fields_are_errors() {
        let text = MINIMAL.replace("k = [15, 30]", "k = [15]\nkk = 3");
        assert!(RunManifest::parse(&text, "").is_err());
    }

    #[test]
    fn overrides_replace_fields() {
        let mut m = RunManifest::parse(MINIMAL, "base").unwrap();
        m.apply(&Overrides {
            k: Some(vec![5]),
            alpha: Some(0.01),
            methods: Some(vec![Method::Cf]),
            include_centers: true,
            seed: Some(3),
            out: Some(PathBuf::from("elsewhere")),
            ..Overrides::default()
        });
        assert_eq!(m.audit.k, vec![5]);
        assert_eq!(m.audit.alpha, 0.01);
        assert_eq!(m.audit.methods, vec![Method::Cf]);
        assert!(m.audit.include_centers);
        assert_eq!(m.seed, 3);
        assert_eq!(m.output, PathBuf::from("elsewhere"));
    }

    #[test]
    fn hash_ignores_output_only() {
        let a = RunManifest::parse(MINIMAL, "").unwrap();
        let mut b = a.clone();
        b.output = PathBuf::from("other");
        assert_eq!(a.parameter_hash(), b.parameter_hash());
        b.audit.alpha = 0.1;
        assert_ne!(a.parameter_hash(), b.parameter_hash());
        assert_eq!(a.parameter_hash().len(), 64);
    }

    #[test]
    fn sweep_sizes() {
        let s = SweepConfig {
            k: vec![1, 15, 30],
            start: Some(50),
            end: Some(500),
            step: Some(10),
        };
        let ks = s.sizes().unwrap();
        assert_eq!(&ks[..4], &[1, 15, 30, 50]);
        assert_eq!(*ks.last().unwrap(), 500);
        assert_eq!(ks.len(), 3 + 46);
        assert!(parse_k_range("1:500:10").unwrap().sizes().unwrap().len() == 50);
        assert!(parse_k_range("5:1").unwrap().sizes().is_err());
        assert!(parse_k_range("5").is_err());
    }

    #[test]
    fn classifier_presets_and_custom() {
        let text = format!(
            "{MINIMAL}\n[classifier]\nkind = \"linear_threshold\"\nthreshold = 1.0\nweights = [{{ feature = \"AnnualSalary\", weight = 2.0 }}]\n"
        );
        let m = RunManifest::parse(&text, "").unwrap();
        let c = m.classifier.unwrap().build();
        assert_eq!(c.threshold, 1.0);
        let text = format!("{MINIMAL}\n[classifier]\npreset = \"school\"\n");
        let m = RunManifest::parse(&text, "").unwrap();
        assert_eq!(m.classifier.unwrap().build(), Classifier::school());
    }
}
