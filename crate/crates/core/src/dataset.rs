//! Decision datasets: typed schema, CSV loading, search-space partitions.
//!
//! Every record carries a feature vector `x`, one binary flag per protected
//! attribute (`1` = protected status) and the classifier decision `y_hat`
//! (`1` = positive outcome). Categorical features are stored as level codes
//! into a per-feature dictionary so that the whole feature vector is `f64`.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Ordinal,
    /// Handled exactly like `Continuous`.
    Interval,
    Categorical,
}

impl FeatureKind {
    pub fn is_numeric(self) -> bool {
        !matches!(self, FeatureKind::Categorical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

fn default_protected_label() -> String {
    "1".to_string()
}

fn default_other_label() -> String {
    "0".to_string()
}

/// A binary protected attribute and the source labels mapped to 1 and 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedSpec {
    pub name: String,
    #[serde(default = "default_protected_label")]
    pub protected_label: String,
    #[serde(default = "default_other_label")]
    pub other_label: String,
}

impl ProtectedSpec {
    pub fn new(name: impl Into<String>) -> Self {
        ProtectedSpec {
            name: name.into(),
            protected_label: default_protected_label(),
            other_label: default_other_label(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
    pub protected: Vec<ProtectedSpec>,
    pub decision: String,
}

impl Schema {
    pub fn new(
        features: Vec<FeatureSpec>,
        protected: Vec<ProtectedSpec>,
        decision: impl Into<String>,
    ) -> Result<Self> {
        let schema = Schema {
            features,
            protected,
            decision: decision.into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Numeric features plus binary protected attributes, all labelled "1"/"0".
    pub fn numeric(features: &[&str], protected: &[&str], decision: &str) -> Result<Self> {
        Schema::new(
            features
                .iter()
                .map(|n| FeatureSpec {
                    name: n.to_string(),
                    kind: FeatureKind::Continuous,
                })
                .collect(),
            protected.iter().map(|n| ProtectedSpec::new(*n)).collect(),
            decision,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(AuditError::Schema("at least one feature is required".into()));
        }
        if self.protected.is_empty() {
            return Err(AuditError::Schema(
                "at least one protected attribute is required".into(),
            ));
        }
        let mut seen = HashSet::new();
        let names = self
            .features
            .iter()
            .map(|f| f.name.as_str())
            .chain(self.protected.iter().map(|p| p.name.as_str()))
            .chain(std::iter::once(self.decision.as_str()));
        for name in names {
            if !seen.insert(name) {
                return Err(AuditError::Schema(format!("column name `{name}` used twice")));
            }
        }
        for p in &self.protected {
            if p.protected_label == p.other_label {
                return Err(AuditError::Schema(format!(
                    "protected attribute `{}` maps both statuses to `{}`",
                    p.name, p.protected_label
                )));
            }
        }
        Ok(())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn protected_index(&self, name: &str) -> Result<usize> {
        self.protected
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| AuditError::UnknownAttribute(name.to_string()))
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: usize,
    pub x: Vec<f64>,
    /// Aligned with `Schema::protected`.
    pub a: Vec<u8>,
    pub y_hat: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub min: f64,
    pub max: f64,
}

impl FeatureStats {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn is_constant(&self) -> bool {
        self.max == self.min
    }
}

/// Immutable table of decision records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    rows: Vec<Record>,
    /// `None` for categorical features (and for numeric ones on an empty dataset).
    stats: Vec<Option<FeatureStats>>,
    /// Level dictionary per feature; empty for numeric features.
    levels: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { delimiter: b',' }
    }
}

impl Dataset {
    /// Builds a dataset from already-coded records. Row ids are reassigned to
    /// positions so that `rows()[id].id == id`.
    pub fn new(schema: Schema, mut rows: Vec<Record>, levels: Vec<Vec<String>>) -> Result<Self> {
        schema.validate()?;
        let nf = schema.features.len();
        let levels = if levels.is_empty() {
            vec![Vec::new(); nf]
        } else {
            levels
        };
        if levels.len() != nf {
            return Err(AuditError::Schema("level dictionary length mismatch".into()));
        }
        for (i, row) in rows.iter_mut().enumerate() {
            if row.x.len() != nf {
                return Err(AuditError::Schema(format!(
                    "row {i} has {} features, schema declares {nf}",
                    row.x.len()
                )));
            }
            if row.a.len() != schema.protected.len() {
                return Err(AuditError::Schema(format!(
                    "row {i} has {} protected values, schema declares {}",
                    row.a.len(),
                    schema.protected.len()
                )));
            }
            if row.a.iter().any(|&v| v > 1) || row.y_hat > 1 {
                return Err(AuditError::Schema(format!("row {i} has a non-binary flag")));
            }
            for (j, f) in schema.features.iter().enumerate() {
                let v = row.x[j];
                if !v.is_finite() {
                    return Err(AuditError::InvalidCell {
                        row: i,
                        column: f.name.clone(),
                        value: v.to_string(),
                        reason: "non-finite value".into(),
                    });
                }
                if !f.kind.is_numeric() && (v < 0.0 || v.fract() != 0.0 || v as usize >= levels[j].len()) {
                    return Err(AuditError::InvalidCell {
                        row: i,
                        column: f.name.clone(),
                        value: v.to_string(),
                        reason: "not a valid level code".into(),
                    });
                }
            }
            row.id = i;
        }
        let stats = compute_stats(&schema, &rows);
        Ok(Dataset {
            schema,
            rows,
            stats,
            levels,
        })
    }

    /// Convenience constructor for all-numeric feature data.
    pub fn from_numeric(
        schema: Schema,
        x: Vec<Vec<f64>>,
        a: Vec<Vec<u8>>,
        y_hat: Vec<u8>,
    ) -> Result<Self> {
        if x.len() != a.len() || x.len() != y_hat.len() {
            return Err(AuditError::Schema("column lengths differ".into()));
        }
        if schema.features.iter().any(|f| !f.kind.is_numeric()) {
            return Err(AuditError::Schema(
                "from_numeric requires numeric features".into(),
            ));
        }
        let rows = x
            .into_iter()
            .zip(a)
            .zip(y_hat)
            .enumerate()
            .map(|(id, ((x, a), y_hat))| Record { id, x, a, y_hat })
            .collect();
        Dataset::new(schema, rows, Vec::new())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn row(&self, id: usize) -> &Record {
        &self.rows[id]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn stats(&self) -> &[Option<FeatureStats>] {
        &self.stats
    }

    pub fn levels(&self, feature: usize) -> &[String] {
        &self.levels[feature]
    }

    pub fn all_levels(&self) -> &[Vec<String>] {
        &self.levels
    }

    /// Level code of a categorical value, if the level exists.
    pub fn level_code(&self, feature: usize, label: &str) -> Option<usize> {
        self.levels[feature].iter().position(|l| l == label)
    }

    pub fn decisions(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.y_hat).collect()
    }

    /// Value of protected attribute `attr` for every row.
    pub fn protected_column(&self, attr: &str) -> Result<Vec<u8>> {
        let j = self.schema.protected_index(attr)?;
        Ok(self.rows.iter().map(|r| r.a[j]).collect())
    }

    /// Copy of this dataset with new decisions (e.g. after re-classification).
    pub fn with_decisions(&self, y_hat: &[u8]) -> Result<Dataset> {
        if y_hat.len() != self.rows.len() {
            return Err(AuditError::Schema("decision vector length mismatch".into()));
        }
        let rows = self
            .rows
            .iter()
            .zip(y_hat)
            .map(|(r, &y)| Record { y_hat: y, ..r.clone() })
            .collect();
        Dataset::new(self.schema.clone(), rows, self.levels.clone())
    }

    /// Control search space (`a = 1`) and test search space (`a = 0`) for `attr`,
    /// both as ascending row ids.
    pub fn partition_search_spaces(&self, attr: &str) -> Result<(Vec<usize>, Vec<usize>)> {
        let j = self.schema.protected_index(attr)?;
        let (control, test): (Vec<&Record>, Vec<&Record>) =
            self.rows.iter().partition(|r| r.a[j] == 1);
        Ok((
            control.into_iter().map(|r| r.id).collect(),
            test.into_iter().map(|r| r.id).collect(),
        ))
    }

    /// Adds the conjunction attribute `A* = 1` iff every listed attribute is 1.
    /// The new column is named by [`intersection_name`].
    pub fn derive_intersection_attribute(&self, attrs: &[&str]) -> Result<Dataset> {
        if attrs.len() < 2 {
            return Err(AuditError::Intersection(
                "an intersection needs at least two attributes".into(),
            ));
        }
        let mut seen = HashSet::new();
        let mut idx = Vec::with_capacity(attrs.len());
        for &name in attrs {
            if !seen.insert(name) {
                return Err(AuditError::DuplicateAttribute(name.to_string()));
            }
            idx.push(self.schema.protected_index(name)?);
        }
        let name = intersection_name(attrs);
        let mut schema = self.schema.clone();
        schema.protected.push(ProtectedSpec::new(name));
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut a = r.a.clone();
                a.push(u8::from(idx.iter().all(|&j| r.a[j] == 1)));
                Record { a, ..r.clone() }
            })
            .collect();
        Dataset::new(schema, rows, self.levels.clone())
    }

    /// `(P(Ŷ=1 | A=1), P(Ŷ=1 | A=0))`.
    pub fn demographic_parity(&self, attr: &str) -> Result<(f64, f64)> {
        let j = self.schema.protected_index(attr)?;
        let mut counts = [[0usize; 2]; 2];
        for r in &self.rows {
            counts[r.a[j] as usize][r.y_hat as usize] += 1;
        }
        let rate = |a: usize| -> Result<f64> {
            let n = counts[a][0] + counts[a][1];
            if n == 0 {
                return Err(AuditError::UndefinedRate(format!(
                    "no rows with {attr} = {a}"
                )));
            }
            Ok(counts[a][1] as f64 / n as f64)
        };
        Ok((rate(1)?, rate(0)?))
    }

    /// Joint shares `(P(Ŷ=1, A=1), P(Ŷ=1, A=0))` over the whole dataset; they
    /// sum to the overall acceptance rate.
    pub fn acceptance_shares(&self, attr: &str) -> Result<(f64, f64)> {
        let j = self.schema.protected_index(attr)?;
        if self.rows.is_empty() {
            return Err(AuditError::UndefinedRate("empty dataset".into()));
        }
        let n = self.rows.len() as f64;
        let prot = self.rows.iter().filter(|r| r.y_hat == 1 && r.a[j] == 1).count();
        let non = self.rows.iter().filter(|r| r.y_hat == 1 && r.a[j] == 0).count();
        Ok((prot as f64 / n, non as f64 / n))
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.y_hat == 1).count() as f64 / self.rows.len() as f64
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: Schema, opts: CsvOptions) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Dataset::read_csv(file, schema, opts)
    }

    /// Parses a CSV whose header contains every schema column (extra columns are ignored).
    pub fn read_csv<R: Read>(reader: R, schema: Schema, opts: CsvOptions) -> Result<Dataset> {
        schema.validate()?;
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(opts.delimiter)
            .has_headers(true)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| AuditError::MissingColumn(name.to_string()))
        };
        let feature_cols = schema
            .features
            .iter()
            .map(|f| col(&f.name))
            .collect::<Result<Vec<_>>>()?;
        let protected_cols = schema
            .protected
            .iter()
            .map(|p| col(&p.name))
            .collect::<Result<Vec<_>>>()?;
        let decision_col = col(&schema.decision)?;

        let nf = schema.features.len();
        // First pass collects raw strings so categorical dictionaries can be sorted.
        let mut raw_rows: Vec<(Vec<String>, Vec<u8>, u8)> = Vec::new();
        let mut level_sets: Vec<std::collections::BTreeSet<String>> =
            vec![Default::default(); nf];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let cell = |c: usize, name: &str| -> Result<String> {
                let v = rec.get(c).unwrap_or("").trim();
                if v.is_empty() {
                    return Err(AuditError::InvalidCell {
                        row: i,
                        column: name.to_string(),
                        value: String::new(),
                        reason: "missing value".into(),
                    });
                }
                Ok(v.to_string())
            };
            let mut xs = Vec::with_capacity(nf);
            for (j, f) in schema.features.iter().enumerate() {
                let v = cell(feature_cols[j], &f.name)?;
                if !f.kind.is_numeric() {
                    level_sets[j].insert(v.clone());
                }
                xs.push(v);
            }
            let mut a = Vec::with_capacity(schema.protected.len());
            for (j, p) in schema.protected.iter().enumerate() {
                let v = cell(protected_cols[j], &p.name)?;
                let flag = if v == p.protected_label {
                    1
                } else if v == p.other_label {
                    0
                } else {
                    return Err(AuditError::InvalidCell {
                        row: i,
                        column: p.name.clone(),
                        value: v,
                        reason: format!(
                            "expected `{}` (protected) or `{}`",
                            p.protected_label, p.other_label
                        ),
                    });
                };
                a.push(flag);
            }
            let y = cell(decision_col, &schema.decision)?;
            let y = match y.as_str() {
                "1" => 1,
                "0" => 0,
                _ => {
                    return Err(AuditError::InvalidCell {
                        row: i,
                        column: schema.decision.clone(),
                        value: y,
                        reason: "decision must be 0 or 1".into(),
                    })
                }
            };
            raw_rows.push((xs, a, y));
        }

        let levels: Vec<Vec<String>> = level_sets
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();
        let lookup: Vec<BTreeMap<&str, usize>> = levels
            .iter()
            .map(|l| l.iter().enumerate().map(|(c, s)| (s.as_str(), c)).collect())
            .collect();
        let mut rows = Vec::with_capacity(raw_rows.len());
        for (i, (xs, a, y_hat)) in raw_rows.iter().enumerate() {
            let mut x = Vec::with_capacity(nf);
            for (j, f) in schema.features.iter().enumerate() {
                let v = &xs[j];
                if f.kind.is_numeric() {
                    let parsed: f64 = v.parse().map_err(|_| AuditError::InvalidCell {
                        row: i,
                        column: f.name.clone(),
                        value: v.clone(),
                        reason: "not a number".into(),
                    })?;
                    if !parsed.is_finite() {
                        return Err(AuditError::InvalidCell {
                            row: i,
                            column: f.name.clone(),
                            value: v.clone(),
                            reason: "non-finite value".into(),
                        });
                    }
                    x.push(parsed);
                } else {
                    x.push(lookup[j][v.as_str()] as f64);
                }
            }
            rows.push(Record {
                id: i,
                x,
                a: a.clone(),
                y_hat: *y_hat,
            });
        }
        drop(lookup);
        Dataset::new(schema, rows, levels)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.schema.feature_names();
        header.extend(self.schema.protected.iter().map(|p| p.name.as_str()));
        header.push(&self.schema.decision);
        w.write_record(&header)?;
        for r in &self.rows {
            w.write_record(self.format_row(r))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Feature cells formatted for output (categorical codes decoded).
    pub fn format_features(&self, x: &[f64]) -> Vec<String> {
        self.schema
            .features
            .iter()
            .enumerate()
            .map(|(j, f)| {
                if f.kind.is_numeric() {
                    format!("{}", x[j])
                } else {
                    self.levels[j][x[j] as usize].clone()
                }
            })
            .collect()
    }

    pub fn format_protected(&self, a: &[u8]) -> Vec<String> {
        self.schema
            .protected
            .iter()
            .zip(a)
            .map(|(p, &v)| {
                if v == 1 {
                    p.protected_label.clone()
                } else {
                    p.other_label.clone()
                }
            })
            .collect()
    }

    fn format_row(&self, r: &Record) -> Vec<String> {
        let mut cells = self.format_features(&r.x);
        cells.extend(self.format_protected(&r.a));
        cells.push(r.y_hat.to_string());
        cells
    }
}

/// Name of the conjunction attribute built from `attrs`, e.g. `R_x_G`.
pub fn intersection_name(attrs: &[&str]) -> String {
    attrs.join("_x_")
}

fn compute_stats(schema: &Schema, rows: &[Record]) -> Vec<Option<FeatureStats>> {
    schema
        .features
        .iter()
        .enumerate()
        .map(|(j, f)| {
            if !f.kind.is_numeric() || rows.is_empty() {
                return None;
            }
            let (min, max) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.x[j]), hi.max(r.x[j]))
            });
            Some(FeatureStats { min, max })
        })
        .collect()
}
