//! Property checks shared by the property suite and the acceptance run.
//!
//! Each property runs a fixed number of cases on a deterministic proptest
//! runner and returns how many it ran.

#![allow(dead_code)]

use cst_core::cfgen::{abduct, do_zero, predict, CfRecord};
use cst_core::dataset::{FeatureKind, FeatureSpec, ProtectedSpec, Record};
use cst_core::detectors::{evaluate_multiple, AttributeNeighborhoods, Evaluation, Method, Mode, RunConfig};
use cst_core::scm::{fit_scm, Link, NodeSpec};
use cst_core::search::{top_k_neighbors, CenterKind};
use cst_core::similarity::DistanceContext;
use cst_core::stattest::{ResultStatus, TestResult};
use cst_core::synthgen::{generate_loan, generate_school, LoanScenarioParams, SchoolParams};
use cst_core::{CfDataset, Dataset, Schema, ScmSpec};
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub type Check = std::result::Result<(), TestCaseError>;

pub fn run<S: Strategy>(cases: u32, strategy: S, check: impl Fn(S::Value) -> Check) -> Result<u32, String>
where
    S::Value: std::fmt::Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, check).map_err(|e| e.to_string())?;
    Ok(cases)
}

/// Raw material for a small mixed-type dataset with frequent ties.
#[derive(Debug, Clone)]
pub struct Mixed {
    pub kinds: Vec<FeatureKind>,
    pub values: Vec<Vec<u8>>,
    pub protected: Vec<bool>,
    pub decisions: Vec<bool>,
}

pub const LEVELS: usize = 3;

fn kind() -> impl Strategy<Value = FeatureKind> {
    prop_oneof![
        Just(FeatureKind::Continuous),
        Just(FeatureKind::Ordinal),
        Just(FeatureKind::Categorical),
    ]
}

pub fn mixed(max_rows: usize) -> impl Strategy<Value = Mixed> {
    (1usize..5, 2usize..max_rows).prop_flat_map(|(p, n)| {
        (
            vec(kind(), p),
            vec(vec(0u8..10, p), n),
            vec(any::<bool>(), n),
            vec(any::<bool>(), n),
        )
            .prop_map(|(kinds, values, protected, decisions)| Mixed {
                kinds,
                values,
                protected,
                decisions,
            })
    })
}

pub fn build(m: &Mixed) -> Dataset {
    let features: Vec<FeatureSpec> = m
        .kinds
        .iter()
        .enumerate()
        .map(|(j, &kind)| FeatureSpec {
            name: format!("f{j}"),
            kind,
        })
        .collect();
    let levels: Vec<Vec<String>> = m
        .kinds
        .iter()
        .map(|k| match k {
            FeatureKind::Categorical => (0..LEVELS).map(|l| format!("l{l}")).collect(),
            _ => Vec::new(),
        })
        .collect();
    let schema = Schema::new(features, vec![ProtectedSpec::new("A")], "y").unwrap();
    let rows = m
        .values
        .iter()
        .zip(&m.protected)
        .zip(&m.decisions)
        .map(|((v, &a), &y)| Record {
            id: 0,
            x: v
                .iter()
                .zip(&m.kinds)
                .map(|(&x, k)| match k {
                    FeatureKind::Categorical => f64::from(x % LEVELS as u8),
                    _ => f64::from(x),
                })
                .collect(),
            a: vec![u8::from(a)],
            y_hat: u8::from(y),
        })
        .collect();
    Dataset::new(schema, rows, levels).unwrap()
}

/// Independent Gower distance: range-scaled Manhattan for numeric features,
/// overlap for categorical ones, averaged over features.
pub fn oracle_distance(d: &Dataset, x: &[f64], y: &[f64]) -> f64 {
    let feats = &d.schema().features;
    let mut total = 0.0;
    for (j, f) in feats.iter().enumerate() {
        total += if f.kind == FeatureKind::Categorical {
            if x[j] == y[j] {
                0.0
            } else {
                1.0
            }
        } else {
            let col: Vec<f64> = d.rows().iter().map(|r| r.x[j]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let diff = (x[j] - y[j]).abs();
            if hi == lo {
                assert_eq!(diff, 0.0);
                0.0
            } else {
                diff / (hi - lo)
            }
        };
    }
    total / feats.len() as f64
}

/// Full sort by (distance, id), first `k`.
pub fn oracle_knn(d: &Dataset, center: &[f64], space: &[usize], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = space
        .iter()
        .map(|&id| (id, oracle_distance(d, center, &d.row(id).x)))
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub fn distance_symmetry(cases: u32) -> Result<u32, String> {
    run(cases, (mixed(30), any::<prop::sample::Index>(), any::<prop::sample::Index>()), |(m, i, j)| {
        let d = build(&m);
        let ctx = DistanceContext::from_dataset(&d, true).unwrap();
        let (a, b) = (&d.row(i.index(d.len())).x, &d.row(j.index(d.len())).x);
        let ab = ctx.distance(a, b).unwrap();
        prop_assert_eq!(ab, ctx.distance(b, a).unwrap());
        prop_assert_eq!(ctx.distance(a, a).unwrap(), 0.0);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - oracle_distance(&d, a, b)).abs() < 1e-12);
        Ok(())
    })
}

pub fn partition(cases: u32) -> Result<u32, String> {
    run(cases, mixed(60), |m| {
        let d = build(&m);
        let (c, t) = d.partition_search_spaces("A").unwrap();
        prop_assert_eq!(c.len() + t.len(), d.len());
        let mut all: Vec<usize> = c.iter().chain(&t).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
        prop_assert!(c.iter().all(|&r| d.row(r).a[0] == 1));
        prop_assert!(t.iter().all(|&r| d.row(r).a[0] == 0));
        Ok(())
    })
}

fn rate_strategy() -> impl Strategy<Value = (f64, usize)> {
    (1usize..300).prop_flat_map(|m| (0..=m, Just(m)).prop_map(|(j, m)| (j as f64 / m as f64, m)))
}

pub fn significant_implies_detected(cases: u32) -> Result<u32, String> {
    let s = (rate_strategy(), rate_strategy(), 0.001f64..=0.5, -1.0f64..=1.0, any::<bool>());
    run(cases, s, |((p_c, m_c), (p_t, m_t), alpha, tau, positive)| {
        let r = TestResult::from_rates(0, p_c, m_c, p_t, m_t, alpha, tau, positive, ResultStatus::Ok);
        prop_assert!(!r.significant || r.detected);
        prop_assert!(r.ci_one_sided_lo <= r.delta_p && r.delta_p <= r.ci_one_sided_hi);
        let (lo, hi) = r.ci_two_sided;
        prop_assert!((-1.0..=1.0).contains(&lo) && (-1.0..=1.0).contains(&hi) && lo <= hi);
        prop_assert_eq!(r.detected, if positive { r.delta_p < tau } else { r.delta_p > tau });
        Ok(())
    })
}

pub fn seed_determinism(cases: u32) -> Result<u32, String> {
    run(cases, (any::<u64>(), 5usize..60), |(seed, n)| {
        let p = LoanScenarioParams {
            n,
            seed,
            ..LoanScenarioParams::default()
        };
        let a = generate_loan(&p).unwrap();
        let b = generate_loan(&p).unwrap();
        prop_assert_eq!(a.dataset.rows(), b.dataset.rows());
        prop_assert_eq!(&a.draws.rows, &b.draws.rows);
        let other = generate_loan(&LoanScenarioParams {
            seed: seed.wrapping_add(1),
            ..p
        })
        .unwrap();
        prop_assert_ne!(&a.draws.rows, &other.draws.rows);
        let s = SchoolParams {
            n,
            seed,
            ..SchoolParams::default()
        };
        let (x, y) = (generate_school(&s).unwrap(), generate_school(&s).unwrap());
        prop_assert_eq!(x.dataset.rows(), y.dataset.rows());
        Ok(())
    })
}

pub fn space_purity(cases: u32) -> Result<u32, String> {
    let s = (mixed(60), any::<prop::sample::Index>(), 1usize..40, any::<bool>());
    run(cases, s, |(m, c, k, control)| {
        let d = build(&m);
        let ctx = DistanceContext::from_dataset(&d, true).unwrap();
        let (cs, ts) = d.partition_search_spaces("A").unwrap();
        let space = if control { cs } else { ts };
        prop_assume!(!space.is_empty());
        let center = &d.row(c.index(d.len())).x;
        let n = top_k_neighbors(center, &space, &d, k, &ctx, None, CenterKind::Factual).unwrap();
        let want = if control { 1 } else { 0 };
        prop_assert!(n.members.iter().all(|&r| d.row(r).a[0] == want));
        prop_assert_eq!(n.len(), k.min(space.len()));
        prop_assert_eq!(n.is_saturated(), space.len() < k);
        for w in n.members.iter().zip(&n.distances).collect::<Vec<_>>().windows(2) {
            let ((a, da), (b, db)) = (w[0], w[1]);
            prop_assert!(da < db || (da == db && a < b));
        }
        for j in 1..=k {
            let fresh = top_k_neighbors(center, &space, &d, j, &ctx, None, CenterKind::Factual).unwrap();
            prop_assert_eq!(&n.prefix(j).members, &fresh.members);
        }
        Ok(())
    })
}

pub fn knn_oracle(cases: u32) -> Result<u32, String> {
    let s = (mixed(80), any::<prop::sample::Index>(), 1usize..50, any::<bool>());
    run(cases, s, |(m, c, k, control)| {
        let d = build(&m);
        let ctx = DistanceContext::from_dataset(&d, true).unwrap();
        let (cs, ts) = d.partition_search_spaces("A").unwrap();
        let space = if control { cs } else { ts };
        prop_assume!(!space.is_empty());
        let center = d.row(c.index(d.len())).x.clone();
        let got = top_k_neighbors(&center, &space, &d, k, &ctx, None, CenterKind::Factual).unwrap();
        let want = oracle_knn(&d, &center, &space, k);
        prop_assert_eq!(&got.members, &want.iter().map(|w| w.0).collect::<Vec<_>>());
        for (g, w) in got.distances.iter().zip(&want) {
            prop_assert!((g - w.1).abs() < 1e-12);
        }
        Ok(())
    })
}

pub fn three_node_spec() -> ScmSpec {
    ScmSpec::new(vec![
        NodeSpec::root("X1", false),
        NodeSpec::child("X2", &["X1"], Link::Identity),
        NodeSpec::child("X3", &["X1", "X2"], Link::Identity),
    ])
    .unwrap()
}

pub fn numeric_dataset(cols: &[Vec<f64>], a: &[u8]) -> Dataset {
    let names: Vec<String> = (1..=cols.len()).map(|j| format!("X{j}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let n = cols[0].len();
    Dataset::from_numeric(
        Schema::numeric(&refs, &["A"], "y").unwrap(),
        (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect(),
        a.iter().map(|&v| vec![v]).collect(),
        vec![0; n],
    )
    .unwrap()
}

pub fn reconstruction(cases: u32) -> Result<u32, String> {
    let coef = -3.0f64..3.0;
    let s = (
        (coef.clone(), coef.clone(), coef.clone(), coef.clone(), coef),
        vec((-10.0f64..10.0, -1.0f64..1.0, -1.0f64..1.0, any::<bool>()), 8..40),
    );
    run(cases, s, |((c2, a, c3, b1, b2), rows)| {
        let x1: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let x2: Vec<f64> = rows.iter().map(|r| c2 + a * r.0 + r.1).collect();
        let x3: Vec<f64> = rows
            .iter()
            .zip(&x2)
            .map(|(r, &v)| c3 + b1 * r.0 + b2 * v + r.2)
            .collect();
        let flags: Vec<u8> = rows.iter().map(|r| u8::from(r.3)).collect();
        let d = numeric_dataset(&[x1, x2, x3], &flags);
        let fitted = fit_scm(&three_node_spec(), &d).unwrap();
        let noise = abduct(&fitted, &d).unwrap();
        let ids: Vec<usize> = (0..d.len()).collect();
        let back = predict(&fitted, &noise, &ids).unwrap();
        for (row, orig) in back.iter().zip(d.rows()) {
            for (u, v) in row.iter().zip(&orig.x) {
                prop_assert!((u - v).abs() <= 1e-8 * (1.0 + v.abs()));
            }
        }
        Ok(())
    })
}

pub fn multiple_with_one_attribute(cases: u32) -> Result<u32, String> {
    let s = (mixed(40), vec(0u8..10, 40), vec(any::<bool>(), 40), 1usize..20, -0.5f64..0.5);
    run(cases, s, |(m, shift, flips, k, tau)| {
        let d = build(&m);
        let (cs, ts) = d.partition_search_spaces("A").unwrap();
        prop_assume!(!cs.is_empty() && !ts.is_empty());
        let rows = cs
            .iter()
            .map(|&id| {
                let r = d.row(id);
                let mut x = r.x.clone();
                if d.schema().features[0].kind != FeatureKind::Categorical {
                    x[0] = f64::from(shift[id % 40]);
                }
                CfRecord {
                    source_id: id,
                    x,
                    a: vec![0],
                    y_hat: r.y_hat ^ u8::from(flips[id % 40]),
                }
            })
            .collect();
        let cf = CfDataset::new(do_zero("A"), rows);
        let hood = AttributeNeighborhoods::build(&d, Some(&cf), "A", &["A"], k, true, true).unwrap();
        for method in Method::ALL {
            let mut cfg = RunConfig::new(method, "A", k);
            cfg.tau = tau;
            let single = hood.evaluate(&Evaluation::from_config(&cfg)).unwrap();
            cfg.mode = Mode::Multiple;
            let multi = evaluate_multiple(std::slice::from_ref(&hood), &cfg, k).unwrap();
            prop_assert_eq!(&multi.results, &single);
            prop_assert_eq!(multi.components.len(), 1);
        }
        Ok(())
    })
}

pub fn csv_round_trip(cases: u32) -> Result<u32, String> {
    run(cases, mixed(30), |m| {
        let d = build(&m);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), d.schema().clone(), Default::default()).unwrap();
        prop_assert_eq!(back.len(), d.len());
        for (b, r) in back.rows().iter().zip(d.rows()) {
            prop_assert_eq!(back.format_features(&b.x), d.format_features(&r.x));
            prop_assert_eq!(&b.a, &r.a);
            prop_assert_eq!(b.y_hat, r.y_hat);
        }
        Ok(())
    })
}

/// Name, case count and runner of every property.
pub const PROPERTIES: [(&str, u32, fn(u32) -> Result<u32, String>); 9] = [
    ("distance symmetry and identity", 2500, distance_symmetry),
    ("search space partition", 1000, partition),
    ("significant implies detected", 4000, significant_implies_detected),
    ("seed determinism", 100, seed_determinism),
    ("neighborhood space purity", 1000, space_purity),
    ("k-NN brute-force oracle", 1000, knn_oracle),
    ("abduction reconstruction", 300, reconstruction),
    ("multiple mode with q = 1", 300, multiple_with_one_attribute),
    ("dataset CSV round trip", 300, csv_round_trip),
];
