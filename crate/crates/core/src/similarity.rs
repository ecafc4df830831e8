//! Gower-style distance over mixed-type feature vectors.
//!
//! Categorical features contribute an overlap term (0 when equal, 1
//! otherwise); continuous, ordinal and interval features contribute the
//! Manhattan distance divided by the factual range. The distance is the mean
//! of the per-feature terms. Protected attributes and decisions never enter.
//!
//! Ranges come from the factual dataset and are reused for counterfactual
//! centers, so a counterfactual value outside the factual range can yield a
//! per-feature term above 1.

use crate::dataset::{Dataset, FeatureKind, FeatureStats, Schema};
use crate::error::{AuditError, Result};

#[derive(Debug, Clone)]
pub struct DistanceContext {
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
    stats: Vec<Option<FeatureStats>>,
    normalize: bool,
}

impl DistanceContext {
    pub fn new(schema: &Schema, stats: Vec<Option<FeatureStats>>, normalize: bool) -> Result<Self> {
        if stats.len() != schema.features.len() {
            return Err(AuditError::Schema("stats length differs from feature count".into()));
        }
        if normalize {
            for (f, s) in schema.features.iter().zip(&stats) {
                if f.kind.is_numeric() && s.is_none() {
                    return Err(AuditError::Schema(format!(
                        "normalization requested but no range for `{}`",
                        f.name
                    )));
                }
            }
        }
        Ok(DistanceContext {
            names: schema.features.iter().map(|f| f.name.clone()).collect(),
            kinds: schema.features.iter().map(|f| f.kind).collect(),
            stats,
            normalize,
        })
    }

    pub fn from_dataset(d: &Dataset, normalize: bool) -> Result<Self> {
        DistanceContext::new(d.schema(), d.stats().to_vec(), normalize)
    }

    pub fn normalize(&self) -> bool {
        self.normalize
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn distance(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        gower_distance(x1, x2, self)
    }
}

/// Distance between two values of one feature.
pub fn per_attribute_distance(
    v1: f64,
    v2: f64,
    kind: FeatureKind,
    stats: Option<&FeatureStats>,
    normalize: bool,
) -> std::result::Result<f64, ConstantRange> {
    match kind {
        FeatureKind::Categorical => Ok(if v1 == v2 { 0.0 } else { 1.0 }),
        FeatureKind::Continuous | FeatureKind::Ordinal | FeatureKind::Interval => {
            let diff = (v1 - v2).abs();
            if !normalize {
                return Ok(diff);
            }
            match stats {
                Some(s) if s.is_constant() => {
                    if diff == 0.0 {
                        Ok(0.0)
                    } else {
                        Err(ConstantRange)
                    }
                }
                Some(s) => Ok(diff / s.range()),
                // Without stats there is nothing to normalize by.
                None => Ok(diff),
            }
        }
    }
}

/// Marker error: differing values on a zero-range feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantRange;

pub fn gower_distance(x1: &[f64], x2: &[f64], ctx: &DistanceContext) -> Result<f64> {
    debug_assert_eq!(x1.len(), ctx.dim());
    debug_assert_eq!(x2.len(), ctx.dim());
    let mut total = 0.0;
    for j in 0..ctx.kinds.len() {
        total += per_attribute_distance(x1[j], x2[j], ctx.kinds[j], ctx.stats[j].as_ref(), ctx.normalize)
            .map_err(|_| AuditError::ConstantFeature(ctx.names[j].clone()))?;
    }
    Ok(total / ctx.kinds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureSpec, ProtectedSpec};

    fn stats(min: f64, max: f64) -> Option<FeatureStats> {
        Some(FeatureStats { min, max })
    }

    #[test]
    fn overlap_term() {
        let k = FeatureKind::Categorical;
        assert_eq!(per_attribute_distance(2.0, 2.0, k, None, true), Ok(0.0));
        assert_eq!(per_attribute_distance(2.0, 3.0, k, None, true), Ok(1.0));
    }

    #[test]
    fn manhattan_term() {
        let s = stats(0.0, 100.0);
        let k = FeatureKind::Continuous;
        assert_eq!(per_attribute_distance(30.0, 50.0, k, s.as_ref(), true), Ok(0.2));
        // Out-of-range counterfactual value: term exceeds the in-range bound.
        let d = per_attribute_distance(90.0, 130.0, k, s.as_ref(), true).unwrap();
        assert!((d - 0.4).abs() < 1e-15);
        let d = per_attribute_distance(-50.0, 90.0, k, s.as_ref(), true).unwrap();
        assert!((d - 1.4).abs() < 1e-15);
        assert_eq!(per_attribute_distance(30.0, 50.0, k, s.as_ref(), false), Ok(20.0));
        assert_eq!(
            per_attribute_distance(1.0, 4.0, FeatureKind::Ordinal, stats(1.0, 7.0).as_ref(), true),
            Ok(0.5)
        );
    }

    #[test]
    fn constant_feature() {
        let s = stats(5.0, 5.0);
        let k = FeatureKind::Continuous;
        assert_eq!(per_attribute_distance(5.0, 5.0, k, s.as_ref(), true), Ok(0.0));
        assert_eq!(per_attribute_distance(5.0, 6.0, k, s.as_ref(), true), Err(ConstantRange));
    }

    #[test]
    fn two_term_average() {
        let schema = Schema::new(
            vec![
                FeatureSpec {
                    name: "c".into(),
                    kind: FeatureKind::Categorical,
                },
                FeatureSpec {
                    name: "v".into(),
                    kind: FeatureKind::Continuous,
                },
            ],
            vec![ProtectedSpec::new("A")],
            "y",
        )
        .unwrap();
        let ctx = DistanceContext::new(&schema, vec![None, stats(0.0, 100.0)], true).unwrap();
        let d = gower_distance(&[0.0, 30.0], &[1.0, 50.0], &ctx).unwrap();
        assert!((d - 0.6).abs() < 1e-15);
        assert_eq!(gower_distance(&[1.0, 42.0], &[1.0, 42.0], &ctx).unwrap(), 0.0);
    }

    #[test]
    fn constant_feature_error_names_feature() {
        let schema = Schema::numeric(&["x", "k"], &["A"], "y").unwrap();
        let ctx = DistanceContext::new(&schema, vec![stats(0.0, 1.0), stats(3.0, 3.0)], true).unwrap();
        let err = gower_distance(&[0.0, 3.0], &[1.0, 4.0], &ctx).unwrap_err();
        assert!(matches!(err, AuditError::ConstantFeature(n) if n == "k"));
    }

    #[test]
    fn normalize_requires_stats() {
        let schema = Schema::numeric(&["x"], &["A"], "y").unwrap();
        assert!(DistanceContext::new(&schema, vec![None], true).is_err());
        assert!(DistanceContext::new(&schema, vec![None], false).is_ok());
    }
}
