//! Counterfactual situation testing: auditing a classifier's decisions for
//! individual discrimination by comparing each protected complainant's
//! neighbors with the neighbors of its counterfactual under a structural
//! causal model.
//!
//! The pipeline is `synthgen`/`dataset` → `scm` → `cfgen` → `search` →
//! `stattest` → `detectors`.

pub mod cfgen;
pub mod dataset;
pub mod detectors;
pub mod error;
pub mod scm;
pub mod search;
pub mod similarity;
pub mod stattest;
pub mod synthgen;

pub use cfgen::{CfDataset, CfRecord, NoiseTable};
pub use dataset::{Dataset, Schema};
pub use detectors::{AuditReport, Direction, Method, Mode, RunConfig};
pub use error::{AuditError, Result};
pub use scm::{FittedScm, ScmSpec};
pub use stattest::TestResult;
pub use synthgen::Classifier;
