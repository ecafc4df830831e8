//! File round trips through the stored-noise and abduction pipelines.

use cst_core::cfgen::{do_zero, generate_counterfactual_dataset, generate_from_model};
use cst_core::dataset::CsvOptions;
use cst_core::scm::{fit_scm, parse_scm_spec};
use cst_core::synthgen::{
    generate_loan, loan_schema, DrawTable, GenerativeScm, LoanScenarioParams, StoredNoiseModel, LOAN_GENDER,
};
use cst_core::{Classifier, Dataset};
use std::collections::BTreeMap;

fn small_loan() -> cst_core::synthgen::LoanScenario {
    generate_loan(&LoanScenarioParams { n: 300, ..LoanScenarioParams::default() }).unwrap()
}

#[test]
fn saved_draws_reproduce_stored_noise_counterfactuals() {
    let s = small_loan();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let draws = dir.path().join("draws.csv");
    s.dataset.save_csv(&data).unwrap();
    s.draws.save_csv(&draws).unwrap();

    let d = Dataset::load_csv(&data, loan_schema(), CsvOptions::default()).unwrap();
    let table = DrawTable::load_csv(&draws).unwrap();
    let model = GenerativeScm::new(parse_scm_spec(&s.model.spec().to_toml()).unwrap()).unwrap();
    let reloaded = StoredNoiseModel::new(&model, &table, BTreeMap::from([(LOAN_GENDER.to_string(), 0.0)])).unwrap();

    let clf = Classifier::loan();
    let want = generate_from_model(&s.stored_noise(), &s.dataset, &clf).unwrap();
    let got = generate_from_model(&reloaded, &d, &clf).unwrap();
    assert_eq!(got, want);
}

#[test]
fn abduction_is_stable_across_csv_reload() {
    let s = small_loan();
    let mut buf = Vec::new();
    s.dataset.write_csv(&mut buf).unwrap();
    let d = Dataset::read_csv(buf.as_slice(), loan_schema(), CsvOptions::default()).unwrap();
    let clf = Classifier::loan();
    let cf = |d: &Dataset| {
        let m = fit_scm(s.model.spec(), d).unwrap();
        generate_counterfactual_dataset(&m, d, &do_zero(LOAN_GENDER), &clf).unwrap()
    };
    let (a, b) = (cf(&s.dataset), cf(&d));
    let mut out_a = Vec::new();
    let mut out_b = Vec::new();
    a.write_csv(&s.dataset, &mut out_a).unwrap();
    b.write_csv(&d, &mut out_b).unwrap();
    assert_eq!(out_a, out_b);
}

#[test]
fn mismatched_draw_table_is_rejected() {
    let s = small_loan();
    let mut buf = Vec::new();
    s.draws.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[0] = lines[0].replacen(',', ",extra_", 1);
    let table = DrawTable::read_csv(lines.join("\n").as_bytes()).unwrap();
    assert!(StoredNoiseModel::new(&s.model, &table, BTreeMap::new()).is_err());
}
