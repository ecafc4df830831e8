//! k-nearest-neighbor construction of control and test groups.
//!
//! Queries are brute-force linear scans. Ranking is total: ties on distance
//! are broken by ascending row id, so neighborhoods are reproducible.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfgen::CfDataset;
use crate::dataset::Dataset;
use crate::error::{AuditError, Result};
use crate::similarity::DistanceContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterKind {
    Factual,
    Counterfactual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub center_kind: CenterKind,
    /// Row ids by ascending (distance, id).
    pub members: Vec<usize>,
    pub distances: Vec<f64>,
    /// Requested size.
    pub k: usize,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// True when fewer than `k` members were available.
    pub fn is_saturated(&self) -> bool {
        self.members.len() < self.k
    }

    /// The first `k` members. Because ranking is total, this equals the
    /// neighborhood a fresh query with size `k` would return.
    pub fn prefix(&self, k: usize) -> Neighborhood {
        let n = k.min(self.members.len());
        Neighborhood {
            center_kind: self.center_kind,
            members: self.members[..n].to_vec(),
            distances: self.distances[..n].to_vec(),
            k,
        }
    }

    /// Members within distance `epsilon`.
    pub fn within(&self, epsilon: f64) -> Neighborhood {
        let n = self.distances.partition_point(|&d| d <= epsilon);
        Neighborhood {
            center_kind: self.center_kind,
            members: self.members[..n].to_vec(),
            distances: self.distances[..n].to_vec(),
            k: self.k,
        }
    }
}

fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn finish(
    mut scored: Vec<(f64, usize)>,
    k: usize,
    epsilon: Option<f64>,
    center_kind: CenterKind,
) -> Neighborhood {
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    if let Some(eps) = epsilon {
        scored.retain(|(d, _)| *d <= eps);
    }
    let (distances, members) = scored.into_iter().unzip();
    Neighborhood {
        center_kind,
        members,
        distances,
        k,
    }
}

fn check_query(space: &[usize], k: usize) -> Result<()> {
    if k == 0 {
        return Err(AuditError::Config("neighborhood size k must be at least 1".into()));
    }
    if space.is_empty() {
        return Err(AuditError::EmptySearchSpace);
    }
    Ok(())
}

/// The `k` rows of `space` closest to `center`, optionally capped at distance `epsilon`.
pub fn top_k_neighbors(
    center: &[f64],
    space: &[usize],
    d: &Dataset,
    k: usize,
    ctx: &DistanceContext,
    epsilon: Option<f64>,
    center_kind: CenterKind,
) -> Result<Neighborhood> {
    top_k_excluding(center, space, d, k, ctx, epsilon, center_kind, None)
}

/// As [`top_k_neighbors`], skipping row `exclude` during the scan.
#[allow(clippy::too_many_arguments)]
pub fn top_k_excluding(
    center: &[f64],
    space: &[usize],
    d: &Dataset,
    k: usize,
    ctx: &DistanceContext,
    epsilon: Option<f64>,
    center_kind: CenterKind,
    exclude: Option<usize>,
) -> Result<Neighborhood> {
    check_query(space, k)?;
    let rows = d.rows();
    let mut scored = Vec::with_capacity(space.len());
    for &id in space {
        if Some(id) == exclude {
            continue;
        }
        scored.push((ctx.distance(center, &rows[id].x)?, id));
    }
    Ok(finish(scored, k, epsilon, center_kind))
}

/// Parallel-scan variant of [`top_k_neighbors`]; identical output.
pub fn top_k_neighbors_par(
    center: &[f64],
    space: &[usize],
    d: &Dataset,
    k: usize,
    ctx: &DistanceContext,
    epsilon: Option<f64>,
    center_kind: CenterKind,
) -> Result<Neighborhood> {
    check_query(space, k)?;
    let rows = d.rows();
    let scored = space
        .par_iter()
        .map(|&id| Ok((ctx.distance(center, &rows[id].x)?, id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(scored, k, epsilon, center_kind))
}

/// Where the test group is searched from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestCenter {
    /// The complainant's counterfactual (counterfactual situation testing).
    Counterfactual,
    /// The complainant itself (standard situation testing).
    Factual,
}

#[derive(Debug, Clone, Copy)]
pub struct GroupOptions {
    pub k: usize,
    pub epsilon: Option<f64>,
    pub test_center: TestCenter,
    /// Drop the complainant from its own control neighborhood.
    pub exclude_complainant: bool,
}

impl GroupOptions {
    pub fn new(k: usize) -> Self {
        GroupOptions {
            k,
            epsilon: None,
            test_center: TestCenter::Counterfactual,
            exclude_complainant: false,
        }
    }
}

/// Control group around the complainant within the protected rows and test
/// group around the chosen test center within the non-protected rows.
pub fn build_groups(
    complainant: usize,
    cf: Option<&CfDataset>,
    d: &Dataset,
    attr: &str,
    ctx: &DistanceContext,
    opts: GroupOptions,
) -> Result<(Neighborhood, Neighborhood)> {
    let (control_space, test_space) = d.partition_search_spaces(attr)?;
    build_groups_in(complainant, cf, d, &control_space, &test_space, attr, ctx, opts)
}

/// [`build_groups`] with precomputed search spaces.
#[allow(clippy::too_many_arguments)]
pub fn build_groups_in(
    complainant: usize,
    cf: Option<&CfDataset>,
    d: &Dataset,
    control_space: &[usize],
    test_space: &[usize],
    attr: &str,
    ctx: &DistanceContext,
    opts: GroupOptions,
) -> Result<(Neighborhood, Neighborhood)> {
    let j = d.schema().protected_index(attr)?;
    let row = d.row(complainant);
    if row.a[j] != 1 {
        return Err(AuditError::Config(format!(
            "row {complainant} is not protected on `{attr}`"
        )));
    }
    let exclude = opts.exclude_complainant.then_some(complainant);
    let control = top_k_excluding(
        &row.x,
        control_space,
        d,
        opts.k,
        ctx,
        opts.epsilon,
        CenterKind::Factual,
        exclude,
    )?;
    let test = match opts.test_center {
        TestCenter::Factual => top_k_neighbors(
            &row.x,
            test_space,
            d,
            opts.k,
            ctx,
            opts.epsilon,
            CenterKind::Factual,
        )?,
        TestCenter::Counterfactual => {
            let cf = cf.ok_or(AuditError::MissingCounterfactual(complainant))?;
            let cf_row = cf
                .get(complainant)
                .ok_or(AuditError::MissingCounterfactual(complainant))?;
            top_k_neighbors(
                &cf_row.x,
                test_space,
                d,
                opts.k,
                ctx,
                opts.epsilon,
                CenterKind::Counterfactual,
            )?
        }
    };
    Ok((control, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Schema;

    fn line(values: &[f64], a: &[u8]) -> Dataset {
        Dataset::from_numeric(
            Schema::numeric(&["x"], &["A"], "y").unwrap(),
            values.iter().map(|&v| vec![v]).collect(),
            a.iter().map(|&v| vec![v]).collect(),
            vec![0; values.len()],
        )
        .unwrap()
    }

    #[test]
    fn nearest_with_id_tiebreak() {
        let d = line(&[0.0, 2.0, 4.0, 6.0, 2.0], &[0; 5]);
        let ctx = DistanceContext::from_dataset(&d, true).unwrap();
        let space: Vec<usize> = (0..5).collect();
        let n = top_k_neighbors(&[3.0], &space, &d, 3, &ctx, None, CenterKind::Factual).unwrap();
        // rows 1, 2, 4 are all at distance 1/6; id order decides.
        assert_eq!(n.members, vec![1, 2, 4]);
        assert!(n.distances.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn saturation_and_epsilon() {
        let d = line(&[0.0, 1.0, 2.0, 3.0], &[0; 4]);
        let ctx = DistanceContext::from_dataset(&d, true).unwrap();
        let space = vec![3, 1, 0];
        let n = top_k_neighbors(&[0.0], &space, &d, 10, &ctx, None, CenterKind::Factual).unwrap();
        assert_eq!(n.members, vec![0, 1, 3]);
        assert!(n.is_saturated());

        let n = top_k_neighbors(&[0.5], &space, &d, 3, &ctx, Some(0.0), CenterKind::Factual).unwrap();
        assert!(n.is_empty());
        let n = top_k_neighbors(&[0.0], &space, &d, 3, &ctx, Some(1.0 / 3.0), CenterKind::Factual).unwrap();
        assert_eq!(n.members, vec![0, 1]);
    }

    #[test]
    fn query_errors() {
        let d = line(&[0.0, 1.0], &[0, 0]);
        let ctx = DistanceContext::from_dataset(&d, true).unwrap();
        assert!(matches!(
            top_k_neighbors(&[0.0], &[], &d, 1, &ctx, None, CenterKind::Factual),
            Err(AuditError::EmptySearchSpace)
        ));
        assert!(top_k_neighbors(&[0.0], &[0], &d, 0, &ctx, None, CenterKind::Factual).is_err());
    }

    #[test]
    fn prefix_matches_fresh_query() {
        let d = line(&[5.0, 1.0, 1.0, 3.0, 9.0, 1.0, 7.0], &[0; 7]);
        let ctx = DistanceContext::from_dataset(&d, true).unwrap();
        let space: Vec<usize> = (0..7).collect();
        let big = top_k_neighbors(&[2.0], &space, &d, 7, &ctx, None, CenterKind::Factual).unwrap();
        for k in 1..=7 {
            let fresh = top_k_neighbors(&[2.0], &space, &d, k, &ctx, None, CenterKind::Factual).unwrap();
            assert_eq!(big.prefix(k), fresh);
        }
    }

    #[test]
    fn parallel_scan_agrees() {
        let values: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64).collect();
        let d = line(&values, &vec![0; 500]);
        let ctx = DistanceContext::from_dataset(&d, true).unwrap();
        let space: Vec<usize> = (0..500).collect();
        let a = top_k_neighbors(&[50.5], &space, &d, 25, &ctx, None, CenterKind::Factual).unwrap();
        let b = top_k_neighbors_par(&[50.5], &space, &d, 25, &ctx, None, CenterKind::Factual).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn st_groups_share_control_and_exclude_option() {
        let d = line(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], &[1, 0, 1, 0, 1, 0]);
        let ctx = DistanceContext::from_dataset(&d, true).unwrap();
        let mut opts = GroupOptions::new(2);
        opts.test_center = TestCenter::Factual;
        let (control, test) = build_groups(2, None, &d, "A", &ctx, opts).unwrap();
        assert_eq!(control.members[0], 2);
        assert_eq!(control.distances[0], 0.0);
        assert_eq!(test.members, vec![1, 3]);
        opts.exclude_complainant = true;
        let (control, _) = build_groups(2, None, &d, "A", &ctx, opts).unwrap();
        assert_eq!(control.members, vec![0, 4]);
        assert!(build_groups(1, None, &d, "A", &ctx, opts).is_err());
        opts.test_center = TestCenter::Counterfactual;
        assert!(matches!(
            build_groups(2, None, &d, "A", &ctx, opts),
            Err(AuditError::MissingCounterfactual(2))
        ));
    }
}
