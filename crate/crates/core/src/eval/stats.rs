//! Wilcoxon rank-sum test and chi-square goodness of fit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Combined sample size up to which p-values are enumerated exactly.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("both samples must be non-empty")]
    EmptySample,
    #[error("samples contain NaN")]
    NotANumber,
    #[error("all values are identical; the test is undefined")]
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSum {
    /// Standardized statistic; positive when `a` tends to rank higher.
    pub w: f64,
    pub p: f64,
    pub rank_sum: f64,
    pub method: PMethod,
}

/// Midranks (1-based) of the pooled sample, ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

struct Pooled {
    n1: usize,
    n2: usize,
    ranks: Vec<f64>,
    rank_sum: f64,
    var: f64,
}

fn pool(a: &[f64], b: &[f64]) -> Result<Pooled, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(StatsError::NotANumber);
    }
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&all);
    let (n1, n2) = (a.len(), b.len());
    let n = (n1 + n2) as f64;
    let rank_sum: f64 = ranks[..n1].iter().sum();
    let mut sorted = all.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let correction = if n > 1.0 {
        tie_term / (n * (n - 1.0))
    } else {
        0.0
    };
    let var = ((n1 * n2) as f64 / 12.0) * ((n + 1.0) - correction);
    if var <= 0.0 {
        return Err(StatsError::Degenerate);
    }
    Ok(Pooled {
        n1,
        n2,
        ranks,
        rank_sum,
        var,
    })
}

fn z_of(p: &Pooled) -> f64 {
    let mean = p.n1 as f64 * (p.n1 + p.n2 + 1) as f64 / 2.0;
    let d = p.rank_sum - mean;
    let corrected = d.signum() * (d.abs() - 0.5).max(0.0);
    corrected / p.var.sqrt()
}

/// Two-sided normal tail probability of a standard score.
pub fn normal_two_sided(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Standardized rank-sum statistic with tie-corrected variance and
/// continuity correction.
pub fn rank_sum_z(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    pool(a, b).map(|p| z_of(&p))
}

/// Two-sided p from the normal approximation, regardless of sample size.
pub fn normal_p(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    rank_sum_z(a, b).map(normal_two_sided)
}

/// Two-sided p by enumerating every assignment of the pooled midranks to a
/// sample of size |a|. Cost grows as C(|a|+|b|, |a|).
pub fn exact_p(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    let p = pool(a, b)?;
    // doubled ranks are integers even with ties
    let doubled: Vec<i64> = p.ranks.iter().map(|r| (r * 2.0).round() as i64).collect();
    let n = doubled.len();
    let mean2 = (p.n1 * (n + 1)) as i64;
    let observed = (doubled[..p.n1].iter().sum::<i64>() - mean2).abs();
    let mut extreme = 0u64;
    let mut total = 0u64;
    #[allow(clippy::too_many_arguments)]
    fn walk(
        d: &[i64],
        start: usize,
        left: usize,
        sum: i64,
        mean2: i64,
        observed: i64,
        extreme: &mut u64,
        total: &mut u64,
    ) {
        if left == 0 {
            *total += 1;
            if (sum - mean2).abs() >= observed {
                *extreme += 1;
            }
            return;
        }
        for i in start..=d.len() - left {
            walk(
                d,
                i + 1,
                left - 1,
                sum + d[i],
                mean2,
                observed,
                extreme,
                total,
            );
        }
    }
    walk(
        &doubled,
        0,
        p.n1,
        0,
        mean2,
        observed,
        &mut extreme,
        &mut total,
    );
    Ok(extreme as f64 / total as f64)
}

/// Rank-sum test of `a` against `b`. The p-value is exact when the pooled
/// size is at most [`EXACT_LIMIT`], otherwise from the normal approximation.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<RankSum, StatsError> {
    let p = pool(a, b)?;
    let w = z_of(&p);
    let (pv, method) = if p.n1 + p.n2 <= EXACT_LIMIT {
        (exact_p(a, b)?, PMethod::Exact)
    } else {
        (normal_two_sided(w), PMethod::Normal)
    };
    Ok(RankSum {
        w,
        p: pv,
        rank_sum: p.rank_sum,
        method,
    })
}

/// Upper tail of the chi-square distribution with integer degrees of freedom.
pub fn chi_square_sf(x: f64, df: u32) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let h = x / 2.0;
    let e = (-h).exp();
    if df.is_multiple_of(2) {
        let mut term = 1.0;
        let mut sum = 1.0;
        for i in 1..df / 2 {
            term *= h / i as f64;
            sum += term;
        }
        (e * sum).min(1.0)
    } else {
        let mut q = libm::erfc(h.sqrt());
        let mut term = h.sqrt() / (std::f64::consts::PI.sqrt() / 2.0);
        for i in 0..(df - 1) / 2 {
            q += e * term;
            term *= h / (i as f64 + 1.5);
        }
        q.min(1.0)
    }
}

/// p-value of Pearson's chi-square test against equal expected counts.
pub fn chi_square_uniform_p(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if counts.len() < 2 || total == 0 {
        return 1.0;
    }
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    chi_square_sf(stat, counts.len() as u32 - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_p_for_fully_separated_triples() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.method, PMethod::Exact);
        assert_eq!(r.rank_sum, 6.0);
        assert!((r.p - 0.1).abs() < 1e-12);
        assert!(r.w < 0.0);
    }

    #[test]
    fn identical_samples_give_p_one() {
        let a = [1.0, 5.0, 3.0, 8.0, 2.0, 9.0, 4.0];
        let r = wilcoxon_rank_sum(&a, &a).unwrap();
        assert_eq!(r.w, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_equal_is_degenerate() {
        assert_eq!(
            wilcoxon_rank_sum(&[2.0, 2.0], &[2.0]),
            Err(StatsError::Degenerate)
        );
        assert_eq!(wilcoxon_rank_sum(&[], &[2.0]), Err(StatsError::EmptySample));
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn large_samples_use_the_normal_tail() {
        let a: Vec<f64> = (0..20).map(f64::from).collect();
        let b: Vec<f64> = (20..40).map(f64::from).collect();
        let r = wilcoxon_rank_sum(&a, &b).unwrap();
        assert_eq!(r.method, PMethod::Normal);
        // rank sum 210, mean 410, sd sqrt(20*20*41/12); corrected z = -199.5/sd
        let z = -199.5 / (400.0f64 * 41.0 / 12.0).sqrt();
        assert!((r.w - z).abs() < 1e-12);
    }

    #[test]
    fn chi_square_tail_matches_tables() {
        // 95th percentiles
        assert!((chi_square_sf(3.841_458_820_694_124, 1) - 0.05).abs() < 1e-9);
        assert!((chi_square_sf(5.991_464_547_107_979, 2) - 0.05).abs() < 1e-9);
        assert!((chi_square_sf(7.814_727_903_251_178, 3) - 0.05).abs() < 1e-9);
        assert!((chi_square_sf(16.918_977_604_620_45, 9) - 0.05).abs() < 1e-9);
        assert!((chi_square_sf(21.026_069_817_483_08, 12) - 0.05).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn swapping_samples_negates_w(
            a in proptest::collection::vec(-50i32..50, 1..15),
            b in proptest::collection::vec(-50i32..50, 1..15),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            if let (Ok(x), Ok(y)) = (rank_sum_z(&a, &b), rank_sum_z(&b, &a)) {
                prop_assert_eq!(x, -y);
            }
        }

        #[test]
        fn p_values_are_probabilities(
            a in proptest::collection::vec(0.0f64..1.0, 1..8),
            b in proptest::collection::vec(0.0f64..1.0, 1..8),
        ) {
            if let Ok(r) = wilcoxon_rank_sum(&a, &b) {
                prop_assert!((0.0..=1.0).contains(&r.p));
                let n = normal_p(&a, &b).unwrap();
                prop_assert!((0.0..=1.0).contains(&n));
            }
        }
    }
}
