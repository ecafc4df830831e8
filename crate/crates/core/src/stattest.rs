//! Negative-decision rates, Wald intervals for their difference, and the
//! detection rules built on them.

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::search::Neighborhood;

/// Standard normal quantile `Φ⁻¹(p)`, Wichura's AS241 (PPND16), relative
/// accuracy about 1e-16.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "normal_quantile requires 0 < p < 1, got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((r * 2509.080_928_730_122_7 + 33430.575_583_588_128) * r
                + 67265.770_927_008_700)
                * r
                + 45921.953_931_549_871)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((r * 5226.495_278_852_545_4 + 28729.085_735_721_943) * r
                + 39307.895_800_092_710)
                * r
                + 21213.794_301_586_596)
                * r
                + 5394.196_021_424_751_1)
                * r
                + 687.187_007_492_057_91)
                * r
                + 42.313_330_701_600_911)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        (((((((r * 7.745_450_142_783_414_1e-4 + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_61)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691_4)
            * r
            + 4.630_337_846_156_545_3)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((r * 1.050_750_071_644_416_9e-9 + 5.475_938_084_995_344_9e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_07)
                * r
                + 0.689_767_334_985_100_05)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_758_8)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((r * 2.010_334_399_292_288_1e-7 + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 0.026_532_189_526_576_123)
            * r
            + 0.296_560_571_828_504_89)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114_4)
            * r
            + 6.657_904_643_501_103_3)
            / (((((((r * 2.044_263_103_389_939_7e-15 + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_7e-5)
                * r
                + 7.868_691_311_456_132_6e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888_0)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// `z_α = Φ⁻¹(1 − α)`.
pub fn z_quantile(alpha: f64) -> f64 {
    normal_quantile(1.0 - alpha)
}

fn check_alpha(alpha: f64) {
    assert!(alpha > 0.0 && alpha <= 0.5, "alpha must lie in (0, 0.5], got {alpha}");
}

/// Fraction of negative decisions in `group`, optionally counting the search
/// center as one more member. The denominator is the member count (plus one).
pub fn negative_rate(
    group: &Neighborhood,
    decisions: &[u8],
    include_center: bool,
    center_outcome: u8,
) -> Result<f64> {
    let negatives = group.members.iter().filter(|&&id| decisions[id] == 0).count();
    let extra = usize::from(include_center);
    let denom = group.len() + extra;
    if denom == 0 {
        return Err(AuditError::UndefinedRate("empty group without center".into()));
    }
    let neg = negatives + usize::from(include_center && center_outcome == 0);
    Ok(neg as f64 / denom as f64)
}

/// Half-width `z · sqrt((p_c(1−p_c) + p_t(1−p_t)) / m)`.
pub fn wald_width(p_c: f64, p_t: f64, m: usize, z: f64) -> f64 {
    z * ((p_c * (1.0 - p_c) + p_t * (1.0 - p_t)) / m as f64).sqrt()
}

/// Half-width for groups of different sizes; equals [`wald_width`] when `m_c == m_t`.
pub fn wald_width_unequal(p_c: f64, m_c: usize, p_t: f64, m_t: usize, z: f64) -> f64 {
    if m_c == m_t {
        return wald_width(p_c, p_t, m_c, z);
    }
    z * (p_c * (1.0 - p_c) / m_c as f64 + p_t * (1.0 - p_t) / m_t as f64).sqrt()
}

/// Lower end of the one-sided interval `[Δp − w_α, +∞)`.
pub fn one_sided_ci(p_c: f64, p_t: f64, m: usize, alpha: f64) -> f64 {
    check_alpha(alpha);
    (p_c - p_t) - wald_width(p_c, p_t, m, z_quantile(alpha))
}

/// Upper end of the one-sided interval `(−∞, Δp + w_α]`.
pub fn one_sided_upper_ci(p_c: f64, p_t: f64, m: usize, alpha: f64) -> f64 {
    check_alpha(alpha);
    (p_c - p_t) + wald_width(p_c, p_t, m, z_quantile(alpha))
}

/// `[Δp − w_{α/2}, Δp + w_{α/2}]` clipped to `[−1, 1]`.
pub fn two_sided_ci(p_c: f64, p_t: f64, m: usize, alpha: f64) -> (f64, f64) {
    check_alpha(alpha);
    let delta = p_c - p_t;
    let w = wald_width(p_c, p_t, m, z_quantile(alpha / 2.0));
    clip_interval(delta - w, delta + w)
}

pub fn clip_interval(lo: f64, hi: f64) -> (f64, f64) {
    (lo.clamp(-1.0, 1.0), hi.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub detected: bool,
    pub significant: bool,
}

/// Discrimination against the complainant: `Δp > τ`, significant when the
/// one-sided lower bound also exceeds `τ`.
pub fn decide(delta_p: f64, ci_lo: f64, tau: f64) -> Decision {
    let detected = delta_p > tau;
    Decision {
        detected,
        significant: detected && ci_lo > tau,
    }
}

/// Positive discrimination: `Δp < τ`, significant when `Δp + w_α < τ`.
pub fn decide_positive(delta_p: f64, p_c: f64, p_t: f64, m: usize, alpha: f64, tau: f64) -> Decision {
    check_alpha(alpha);
    let upper = delta_p + wald_width(p_c, p_t, m, z_quantile(alpha));
    decide_positive_with_upper(delta_p, upper, tau)
}

pub fn decide_positive_with_upper(delta_p: f64, ci_hi: f64, tau: f64) -> Decision {
    let detected = delta_p < tau;
    Decision {
        detected,
        significant: detected && ci_hi < tau,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    Ok,
    /// A search space held fewer than `k` candidates.
    Saturated,
    /// A group came back empty (epsilon constraint) and no center was counted;
    /// the complainant is reported but never detected.
    EmptyGroup,
}

/// Outcome of testing one complainant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub complainant: usize,
    pub p_c: f64,
    pub p_t: f64,
    pub delta_p: f64,
    pub ci_one_sided_lo: f64,
    pub ci_one_sided_hi: f64,
    pub ci_two_sided: (f64, f64),
    pub m_control: usize,
    pub m_test: usize,
    pub detected: bool,
    pub significant: bool,
    pub status: ResultStatus,
}

impl TestResult {
    /// Builds the full result from the two rates and their group sizes.
    #[allow(clippy::too_many_arguments)]
    pub fn from_rates(
        complainant: usize,
        p_c: f64,
        m_control: usize,
        p_t: f64,
        m_test: usize,
        alpha: f64,
        tau: f64,
        positive: bool,
        status: ResultStatus,
    ) -> TestResult {
        check_alpha(alpha);
        let delta_p = p_c - p_t;
        let w = wald_width_unequal(p_c, m_control, p_t, m_test, z_quantile(alpha));
        let w2 = wald_width_unequal(p_c, m_control, p_t, m_test, z_quantile(alpha / 2.0));
        let lo = delta_p - w;
        let hi = delta_p + w;
        let decision = if positive {
            decide_positive_with_upper(delta_p, hi, tau)
        } else {
            decide(delta_p, lo, tau)
        };
        TestResult {
            complainant,
            p_c,
            p_t,
            delta_p,
            ci_one_sided_lo: lo,
            ci_one_sided_hi: hi,
            ci_two_sided: clip_interval(delta_p - w2, delta_p + w2),
            m_control,
            m_test,
            detected: decision.detected,
            significant: decision.significant,
            status,
        }
    }

    /// Placeholder for a complainant whose groups could not be formed.
    pub fn empty_group(complainant: usize) -> TestResult {
        TestResult {
            complainant,
            p_c: 0.0,
            p_t: 0.0,
            delta_p: 0.0,
            ci_one_sided_lo: 0.0,
            ci_one_sided_hi: 0.0,
            ci_two_sided: (0.0, 0.0),
            m_control: 0,
            m_test: 0,
            detected: false,
            significant: false,
            status: ResultStatus::EmptyGroup,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::CenterKind;

    fn group(n: usize) -> Neighborhood {
        Neighborhood {
            center_kind: CenterKind::Factual,
            members: (0..n).collect(),
            distances: vec![0.0; n],
            k: n,
        }
    }

    #[test]
    fn quantile_constants() {
        assert!((z_quantile(0.05) - 1.644_853_626_951_472_2).abs() < 1e-12);
        assert!((z_quantile(0.025) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((normal_quantile(0.5)).abs() < 1e-15);
        assert!((normal_quantile(1e-10) + 6.361_340_902_404_056).abs() < 1e-9);
        assert!((normal_quantile(0.9) - 1.281_551_565_544_601).abs() < 1e-12);
    }

    #[test]
    fn negative_rate_counts() {
        let g = group(15);
        let mut dec = vec![1u8; 15];
        for d in dec.iter_mut().take(9) {
            *d = 0;
        }
        assert_eq!(negative_rate(&g, &dec, false, 1).unwrap(), 0.6);
        let mut dec = vec![1u8; 15];
        for d in dec.iter_mut().take(12) {
            *d = 0;
        }
        assert_eq!(negative_rate(&g, &dec, true, 0).unwrap(), 0.8125);
        assert_eq!(negative_rate(&g, &[1; 15], true, 1).unwrap(), 0.0);
        assert!(negative_rate(&group(0), &[], false, 0).is_err());
        assert_eq!(negative_rate(&group(0), &[], true, 0).unwrap(), 1.0);
    }

    #[test]
    fn table_style_intervals() {
        let lo = one_sided_ci(13.0 / 16.0, 0.0, 16, 0.05);
        assert!((lo - 0.65).abs() < 0.005);
        assert_eq!(one_sided_ci(1.0, 0.0, 16, 0.05), 1.0);
        let (lo, hi) = two_sided_ci(13.0 / 16.0, 0.0, 16, 0.05);
        assert!((lo - 0.62).abs() < 0.005);
        assert_eq!(hi, 1.0);
        let (lo, hi) = two_sided_ci(1.0, 15.0 / 16.0, 16, 0.05);
        assert!((lo + 0.06).abs() < 0.005 && (hi - 0.18).abs() < 0.005);
        let (lo, hi) = two_sided_ci(0.3, 0.3, 20, 0.05);
        assert!((lo + hi).abs() < 1e-15);
    }

    #[test]
    fn decisions() {
        assert_eq!(decide(0.56, 0.36, 0.0), Decision { detected: true, significant: true });
        assert_eq!(decide(0.06, -0.04, 0.0), Decision { detected: true, significant: false });
        assert_eq!(decide(0.0, -0.1, 0.0), Decision { detected: false, significant: false });
        assert_eq!(decide(1.0, 1.0, 1.0).detected, false);
    }

    #[test]
    fn positive_decisions() {
        // p_c = 0.1, p_t = 0.6, m = 20: w = 1.6449 * sqrt((0.09 + 0.24) / 20) = 0.21129
        let d = decide_positive(-0.5, 0.1, 0.6, 20, 0.05, 0.0);
        assert_eq!(d, Decision { detected: true, significant: true });
        let upper = one_sided_upper_ci(0.1, 0.6, 20, 0.05);
        assert!((upper - (-0.5 + 0.211_29)).abs() < 1e-4);
        assert_eq!(
            decide_positive(0.1, 0.3, 0.2, 20, 0.05, 0.0),
            Decision { detected: false, significant: false }
        );
        // p_c = 0.9, p_t = 0.95, m = 76: w = 1.6449 * sqrt(0.1375 / 76) = 0.069964,
        // so the upper bound is about +0.02.
        let upper = one_sided_upper_ci(0.9, 0.95, 76, 0.05);
        assert!((upper - 0.019_964).abs() < 1e-5);
        let d = decide_positive(0.9 - 0.95, 0.9, 0.95, 76, 0.05, 0.0);
        assert_eq!(d, Decision { detected: true, significant: false });
    }

    #[test]
    fn unequal_width_reduces_to_pooled() {
        assert_eq!(wald_width_unequal(0.3, 10, 0.6, 10, 1.6), wald_width(0.3, 0.6, 10, 1.6));
        let w = wald_width_unequal(0.5, 4, 0.5, 16, 2.0);
        assert!((w - 2.0 * (0.25f64 / 4.0 + 0.25 / 16.0).sqrt()).abs() < 1e-15);
    }
}
