//! Manifest-driven stages: generate, fit, counterfactuals, audit, sweep and
//! report. Every stage writes its artifacts plus a provenance record into the
//! output directory; nothing depends on wall-clock time, so the same manifest
//! yields byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cst_core::cfgen::{do_zero, generate_counterfactual_dataset, generate_from_model};
use cst_core::dataset::{intersection_name, CsvOptions};
use cst_core::detectors::{
    evaluate_multiple, prepare_intersectional, write_summary_csv, AttributeNeighborhoods,
    AuditReport, Direction, Evaluation, Method, Mode,
};
use cst_core::scm::{fit_scm, parse_scm_spec, Equation};
use cst_core::synthgen::{
    generate_loan, generate_school, loan_schema, school_schema, DrawTable, GenerativeScm,
    LoanScenarioParams, SchoolParams, StoredNoiseModel,
};
use cst_core::{CfDataset, Classifier, Dataset, ScmSpec, TestResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::manifest::{CounterfactualSource, RunManifest, Scenario};
use crate::sha256_hex;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TABLE_FILE: &str = "table.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Everything an audit reads, resolved from a manifest.
pub struct Inputs {
    pub dataset: Dataset,
    pub spec: ScmSpec,
    pub classifier: Classifier,
    /// Generator and its draws, present for stored-noise counterfactuals.
    pub generative: Option<(GenerativeScm, DrawTable)>,
    /// Files read, as written in the manifest.
    pub files: Vec<(PathBuf, PathBuf)>,
}

/// Output of a scenario generator.
pub struct Generated {
    pub dataset: Dataset,
    pub draws: DrawTable,
    pub model: GenerativeScm,
}

pub fn generate_scenario(scenario: Scenario, n: Option<usize>, seed: u64) -> Result<Generated> {
    Ok(match scenario {
        Scenario::Loan => {
            let d = LoanScenarioParams::default();
            let s = generate_loan(&LoanScenarioParams {
                n: n.unwrap_or(d.n),
                seed,
                ..d
            })?;
            Generated {
                dataset: s.dataset,
                draws: s.draws,
                model: s.model,
            }
        }
        Scenario::School => {
            let d = SchoolParams::default();
            let s = generate_school(&SchoolParams {
                n: n.unwrap_or(d.n),
                seed,
                ..d
            })?;
            Generated {
                dataset: s.dataset,
                draws: s.draws,
                model: s.model,
            }
        }
    })
}

fn scenario_spec(s: Scenario) -> Result<ScmSpec> {
    Ok(match s {
        Scenario::Loan => LoanScenarioParams::default().spec()?,
        Scenario::School => SchoolParams::default().spec()?,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(CliError::file(path))
}

pub fn load_inputs(m: &RunManifest) -> Result<Inputs> {
    m.validate()?;
    let scenario = m.dataset.scenario;
    let mut files = Vec::new();
    let schema = match (&m.dataset.schema, scenario) {
        (Some(s), _) => s.clone(),
        (None, Some(Scenario::Loan)) => loan_schema(),
        (None, Some(Scenario::School)) => school_schema(),
        (None, None) => return Err(CliError::Manifest("dataset.schema is required".into())),
    };
    let spec = match (&m.scm.path, scenario) {
        (Some(p), _) => {
            let full = m.resolve(p);
            let spec = parse_scm_spec(&read_text(&full)?)?;
            files.push((p.clone(), full));
            spec
        }
        (None, Some(s)) => scenario_spec(s)?,
        (None, None) => return Err(CliError::Manifest("scm.path is required".into())),
    };
    let classifier = match (&m.classifier, scenario) {
        (Some(c), _) => c.build(),
        (None, Some(Scenario::Loan)) => Classifier::loan(),
        (None, Some(Scenario::School)) => Classifier::school(),
        (None, None) => return Err(CliError::Manifest("classifier is required".into())),
    };
    let (dataset, generated_draws) = match &m.dataset.path {
        Some(p) => {
            let full = m.resolve(p);
            let opts = CsvOptions {
                delimiter: m.dataset.delimiter as u8,
            };
            let d = Dataset::load_csv(&full, schema, opts).map_err(|e| match e {
                cst_core::AuditError::Io(source) => CliError::File {
                    path: full.clone(),
                    source,
                },
                e => e.into(),
            })?;
            files.push((p.clone(), full));
            (d, None)
        }
        None => {
            let s = scenario.expect("validated");
            let g = generate_scenario(s, m.dataset.n, m.seed)?;
            if g.dataset.schema() != &schema {
                return Err(CliError::Manifest(
                    "dataset.schema does not match the scenario generator".into(),
                ));
            }
            (g.dataset, Some(g.draws))
        }
    };
    let generative = match m.scm.counterfactuals {
        CounterfactualSource::Abduction => None,
        CounterfactualSource::StoredNoise => {
            let draws = match (&m.scm.draws, generated_draws) {
                (Some(p), _) => {
                    let full = m.resolve(p);
                    let t = DrawTable::load_csv(&full)?;
                    files.push((p.clone(), full));
                    t
                }
                (None, Some(t)) => t,
                (None, None) => {
                    return Err(CliError::Manifest(
                        "stored-noise counterfactuals over a CSV input need scm.draws".into(),
                    ))
                }
            };
            if draws.len() != dataset.len() {
                return Err(CliError::Manifest(format!(
                    "draw table has {} rows but the dataset has {}",
                    draws.len(),
                    dataset.len()
                )));
            }
            Some((GenerativeScm::new(spec.clone())?, draws))
        }
    };
    for a in &m.audit.attrs {
        dataset.schema().protected_index(a)?;
    }
    Ok(Inputs {
        dataset,
        spec,
        classifier,
        generative,
        files,
    })
}

/// The dataset searched and the counterfactuals per tested attribute.
pub struct Prepared {
    pub dataset: Dataset,
    /// Attribute whose search spaces are used, one per neighborhood set.
    pub attrs: Vec<String>,
    /// Rows must be protected on all of these to be complainants.
    pub complainant_attrs: Vec<String>,
    pub counterfactuals: BTreeMap<String, CfDataset>,
}

fn counterfactual(inputs: &Inputs, fitted: Option<&cst_core::FittedScm>, attr: &str) -> Result<CfDataset> {
    let d = &inputs.dataset;
    Ok(match (&inputs.generative, fitted) {
        (Some((g, draws)), _) => {
            let model = StoredNoiseModel::new(g, draws, do_zero(attr))?;
            generate_from_model(&model, d, &inputs.classifier)?
        }
        (None, Some(f)) => generate_counterfactual_dataset(f, d, &do_zero(attr), &inputs.classifier)?,
        (None, None) => unreachable!("abduction needs a fitted model"),
    })
}

pub fn prepare(m: &RunManifest, inputs: &Inputs, need_cf: bool) -> Result<Prepared> {
    let attrs = m.audit.attrs.clone();
    match m.audit.mode {
        Mode::Intersectional => {
            if inputs.generative.is_some() {
                return Err(CliError::Manifest(
                    "intersectional mode refits the merged SCM; use abduction counterfactuals".into(),
                ));
            }
            let refs: Vec<&str> = attrs.iter().map(String::as_str).collect();
            let fitted = fit_scm(&inputs.spec, &inputs.dataset)?;
            let (merged, cf, _) = prepare_intersectional(&inputs.dataset, &refs, &fitted, &inputs.classifier)?;
            let name = intersection_name(&refs);
            Ok(Prepared {
                dataset: merged,
                attrs: vec![name.clone()],
                complainant_attrs: vec![name.clone()],
                counterfactuals: BTreeMap::from([(name, cf)]),
            })
        }
        Mode::Single | Mode::Multiple => {
            let mut cfs = BTreeMap::new();
            if need_cf {
                let fitted = match inputs.generative {
                    Some(_) => None,
                    None => Some(fit_scm(&inputs.spec, &inputs.dataset)?),
                };
                for a in &attrs {
                    cfs.insert(a.clone(), counterfactual(inputs, fitted.as_ref(), a)?);
                }
            }
            Ok(Prepared {
                dataset: inputs.dataset.clone(),
                attrs: attrs.clone(),
                complainant_attrs: attrs,
                counterfactuals: cfs,
            })
        }
    }
}

/// Neighborhoods at the largest size, one set per tested attribute.
pub fn neighborhoods(
    m: &RunManifest,
    p: &Prepared,
    methods: &[Method],
    k_max: usize,
) -> Result<Vec<AttributeNeighborhoods>> {
    let need_cf = methods.iter().any(|x| x.needs_counterfactual());
    let factual = methods.contains(&Method::St);
    let comp: Vec<&str> = p.complainant_attrs.iter().map(String::as_str).collect();
    p.attrs
        .iter()
        .map(|a| {
            let cf = if need_cf { p.counterfactuals.get(a) } else { None };
            Ok(AttributeNeighborhoods::build(
                &p.dataset,
                cf,
                a,
                &comp,
                k_max,
                factual,
                m.audit.normalize,
            )?)
        })
        .collect()
}

/// Runs every (method, k) cell; reports come back in canonical order.
pub fn evaluate_cells(
    m: &RunManifest,
    hoods: &[AttributeNeighborhoods],
    methods: &[Method],
    ks: &[usize],
) -> Result<Vec<AuditReport>> {
    let cells: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&x| ks.iter().map(move |&k| (x, k)))
        .collect();
    cells
        .par_iter()
        .map(|&(method, k)| {
            let cfg = m.run_config(method, k);
            cfg.validate()?;
            if m.audit.mode == Mode::Multiple {
                return Ok(evaluate_multiple(hoods, &cfg, k)?);
            }
            let h = &hoods[0];
            let results = h.evaluate(&Evaluation::from_config(&cfg))?;
            Ok(AuditReport::new(
                method,
                m.audit.mode,
                m.audit.direction,
                k,
                h.attr.clone(),
                results,
                BTreeMap::new(),
            ))
        })
        .collect()
}

pub fn run_reports(m: &RunManifest, inputs: &Inputs, ks: &[usize]) -> Result<Vec<AuditReport>> {
    let methods = m.methods();
    let need_cf = methods.iter().any(|x| x.needs_counterfactual());
    let prepared = prepare(m, inputs, need_cf)?;
    let k_max = *ks.iter().max().expect("non-empty k list");
    let hoods = neighborhoods(m, &prepared, &methods, k_max)?;
    evaluate_cells(m, &hoods, &methods, ks)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub parameter_hash: String,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
}

fn digest_file(label: &str, path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(CliError::file(path))?;
    Ok(FileDigest {
        path: label.to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Writes named artifacts into an output directory and records their digests.
pub struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(CliError::file(dir))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(CliError::file(&p))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Records provenance as `provenance_<command>.json`.
    pub fn finish(
        mut self,
        command: &str,
        seed: u64,
        parameter_hash: String,
        inputs: &[(PathBuf, PathBuf)],
    ) -> Result<PathBuf> {
        let inputs = inputs
            .iter()
            .map(|(label, full)| digest_file(&label.to_string_lossy(), full))
            .collect::<Result<Vec<_>>>()?;
        let artifacts = self
            .written
            .iter()
            .map(|n| digest_file(n, &self.dir.join(n)))
            .collect::<Result<Vec<_>>>()?;
        let p = Provenance {
            tool: "cst".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            parameter_hash,
            inputs,
            artifacts,
        };
        let mut json = serde_json::to_vec_pretty(&p)?;
        json.push(b'\n');
        let name = format!("provenance_{command}.json");
        self.write(&name, &json)?;
        Ok(self.path(&name))
    }
}

pub fn report_file_name(method: Method, k: usize) -> String {
    format!("{}_k{k}.jsonl", method.as_str())
}

fn summary_bytes(reports: &[AuditReport]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_summary_csv(reports, &mut buf)?;
    Ok(buf)
}

/// Methods × k layout: for each k a `count (pct%)` cell and a starred
/// cell with the significant count.
pub fn table_bytes(reports: &[AuditReport]) -> Result<Vec<u8>> {
    let mut ks: Vec<usize> = reports.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut methods: Vec<Method> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string()];
    for k in &ks {
        header.push(format!("k={k}"));
        header.push(format!("k={k}*"));
    }
    w.write_record(&header).map_err(cst_core::AuditError::from)?;
    for method in methods {
        let mut row = vec![method.as_str().to_string()];
        for &k in &ks {
            match reports.iter().find(|r| r.method == method && r.k == k) {
                Some(r) => {
                    let s = &r.summary;
                    row.push(format!("{} ({:.1}%)", s.detected, s.detected_pct));
                    row.push(format!("{} ({:.1}%)", s.significant, s.significant_pct));
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&row).map_err(cst_core::AuditError::from)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Manifest(e.to_string()))
}

/// Subset checks between methods that the theory pairs; logged, not enforced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Containment {
    pub k: usize,
    pub subset: Method,
    pub superset: Method,
    pub violations: usize,
}

pub fn containment(reports: &[AuditReport]) -> Vec<Containment> {
    let pairs = [(Method::St, Method::CstWithout), (Method::Cf, Method::CstWith)];
    let mut out = Vec::new();
    let mut ks: Vec<usize> = reports.iter().map(|r| r.k).collect();
    ks.dedup();
    for &k in &ks {
        for (sub, sup) in pairs {
            let find = |m: Method| reports.iter().find(|r| r.method == m && r.k == k);
            if let (Some(a), Some(b)) = (find(sub), find(sup)) {
                let violations = a
                    .results
                    .iter()
                    .zip(&b.results)
                    .filter(|(x, y)| x.detected && !y.detected)
                    .count();
                out.push(Containment {
                    k,
                    subset: sub,
                    superset: sup,
                    violations,
                });
            }
        }
    }
    out
}

pub fn run_audit(m: &RunManifest) -> Result<Vec<AuditReport>> {
    let inputs = load_inputs(m)?;
    let reports = run_reports(m, &inputs, &m.ks())?;
    let mut out = Artifacts::create(&m.output)?;
    for r in &reports {
        let mut buf = Vec::new();
        r.write_jsonl(&mut buf)?;
        out.write(&report_file_name(r.method, r.k), &buf)?;
    }
    out.write(SUMMARY_FILE, &summary_bytes(&reports)?)?;
    out.write(TABLE_FILE, &table_bytes(&reports)?)?;
    let mut diag = serde_json::to_vec_pretty(&containment(&reports))?;
    diag.push(b'\n');
    out.write("containment.json", &diag)?;
    out.finish("audit", m.seed, m.parameter_hash(), &inputs.files)?;
    Ok(reports)
}

pub const SWEEP_HEADER: [&str; 5] = ["method", "k", "detected", "significant", "avg_delta_p"];

pub fn sweep_bytes(reports: &[AuditReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER).map_err(cst_core::AuditError::from)?;
    for r in reports {
        let s = &r.summary;
        w.write_record([
            r.method.as_str().to_string(),
            r.k.to_string(),
            s.detected.to_string(),
            s.significant.to_string(),
            s.avg_delta_p.map_or(String::new(), |v| format!("{v:.6}")),
        ])
        .map_err(cst_core::AuditError::from)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Manifest(e.to_string()))
}

pub fn run_sweep(m: &RunManifest, ks: &[usize]) -> Result<Vec<AuditReport>> {
    let inputs = load_inputs(m)?;
    let reports = run_reports(m, &inputs, ks)?;
    let mut out = Artifacts::create(&m.output)?;
    out.write(SWEEP_FILE, &sweep_bytes(&reports)?)?;
    let mut hash_input = m.clone();
    hash_input.audit.k = ks.to_vec();
    out.finish("sweep", m.seed, hash_input.parameter_hash(), &inputs.files)?;
    Ok(reports)
}

/// One JSONL line read back.
#[derive(Debug, Clone, Deserialize)]
struct ReportLine {
    method: Method,
    mode: Mode,
    direction: Direction,
    k: usize,
    attribute: String,
    #[serde(flatten)]
    result: TestResult,
}

/// Rebuilds reports from every `*.jsonl` file in `dir`.
pub fn read_reports(dir: &Path) -> Result<Vec<AuditReport>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(CliError::file(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    names.sort();
    type Key = (usize, usize, &'static str, &'static str, String);
    let mut groups: BTreeMap<Key, (Method, Mode, Direction, Vec<TestResult>)> = BTreeMap::new();
    for path in names {
        let text = read_text(&path)?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: ReportLine = serde_json::from_str(line).map_err(|e| {
                CliError::Manifest(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            let order = Method::ALL.iter().position(|&x| x == r.method).expect("known method");
            groups
                .entry((order, r.k, r.mode.as_str(), r.direction.as_str(), r.attribute))
                .or_insert_with(|| (r.method, r.mode, r.direction, Vec::new()))
                .3
                .push(r.result);
        }
    }
    if groups.is_empty() {
        return Err(CliError::Manifest(format!("no JSONL reports in {}", dir.display())));
    }
    Ok(groups
        .into_iter()
        .map(|((_, k, _, _, attribute), (method, mode, direction, results))| {
            AuditReport::new(method, mode, direction, k, attribute, results, BTreeMap::new())
        })
        .collect())
}

/// Recomputes the summary and table from JSONL reports alone.
pub fn run_report(input: &Path, output: &Path) -> Result<Vec<AuditReport>> {
    let reports = read_reports(input)?;
    let mut out = Artifacts::create(output)?;
    out.write(SUMMARY_FILE, &summary_bytes(&reports)?)?;
    out.write(TABLE_FILE, &table_bytes(&reports)?)?;
    let mut inputs: Vec<(PathBuf, PathBuf)> = reports
        .iter()
        .map(|r| {
            let n = report_file_name(r.method, r.k);
            (PathBuf::from(&n), input.join(&n))
        })
        .filter(|(_, p)| p.exists())
        .collect();
    inputs.dedup();
    let hash = sha256_hex(
        inputs
            .iter()
            .map(|(n, _)| n.to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("\n")
            .as_bytes(),
    );
    out.finish("report", 0, hash, &inputs)?;
    Ok(reports)
}

/// Writes the generator's data, draw sidecar and SCM spec.
pub fn run_generate(scenario: Scenario, n: Option<usize>, seed: u64, output: &Path) -> Result<Generated> {
    let g = generate_scenario(scenario, n, seed)?;
    let mut out = Artifacts::create(output)?;
    let mut buf = Vec::new();
    g.dataset.write_csv(&mut buf)?;
    out.write("data.csv", &buf)?;
    let mut buf = Vec::new();
    g.draws.write_csv(&mut buf)?;
    out.write("draws.csv", &buf)?;
    out.write("scm.toml", g.model.spec().to_toml().as_bytes())?;
    let params = serde_json::json!({ "scenario": scenario, "n": g.dataset.len(), "seed": seed });
    out.finish("generate", seed, sha256_hex(params.to_string().as_bytes()), &[])?;
    Ok(g)
}

#[derive(Debug, Serialize)]
struct FitDocument<'a> {
    topo_order: Vec<&'a str>,
    equations: Vec<&'a Equation>,
}

pub fn run_fit(m: &RunManifest) -> Result<cst_core::FittedScm> {
    let inputs = load_inputs(m)?;
    let fitted = fit_scm(&inputs.spec, &inputs.dataset)?;
    let doc = FitDocument {
        topo_order: fitted.topo_order(),
        equations: fitted.equations().collect(),
    };
    let mut out = Artifacts::create(&m.output)?;
    let mut json = serde_json::to_vec_pretty(&doc)?;
    json.push(b'\n');
    out.write("scm_fit.json", &json)?;
    out.finish("fit-scm", m.seed, m.parameter_hash(), &inputs.files)?;
    Ok(fitted)
}

pub fn run_cfgen(m: &RunManifest) -> Result<Prepared> {
    let inputs = load_inputs(m)?;
    let p = prepare(m, &inputs, true)?;
    let mut out = Artifacts::create(&m.output)?;
    for (attr, cf) in &p.counterfactuals {
        let mut buf = Vec::new();
        cf.write_csv(&p.dataset, &mut buf)?;
        out.write(&format!("counterfactuals_{attr}.csv"), &buf)?;
    }
    out.finish("cfgen", m.seed, m.parameter_hash(), &inputs.files)?;
    Ok(p)
}
