//! Summary statistics and the Wilcoxon signed-rank test.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest sample (after dropping zeros) that uses the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::Usage("cannot aggregate an empty list".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(Aggregate { mean, std, n })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// Differences left after dropping exact zeros.
    pub n: usize,
    /// Rank sums of the positive and negative differences.
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W⁺, W⁻)`.
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
    /// Every difference was zero; `p_value` is 1 by convention.
    pub degenerate: bool,
}

/// Midranks of `|d|` (1-based) for the non-zero differences.
fn signed_midranks(diffs: &[f64]) -> Vec<(f64, bool)> {
    let mut items: Vec<(f64, bool)> = diffs.iter().filter(|d| **d != 0.0).map(|&d| (d.abs(), d > 0.0)).collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranked = Vec::with_capacity(items.len());
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        while j + 1 < items.len() && items[j + 1].0 == items[i].0 {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0;
        for item in &items[i..=j] {
            ranked.push((rank, item.1));
        }
        i = j + 1;
    }
    ranked
}

/// Two-sided Wilcoxon signed-rank test on paired differences.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("wilcoxon differences must be finite".into()));
    }
    let ranked = signed_midranks(diffs);
    let n = ranked.len();
    if n == 0 {
        log::warn!("wilcoxon: all differences are zero, reporting p = 1");
        return Ok(WilcoxonResult {
            n: 0,
            w_plus: 0.0,
            w_minus: 0.0,
            statistic: 0.0,
            p_value: 1.0,
            exact: true,
            degenerate: true,
        });
    }
    let w_plus: f64 = ranked.iter().filter(|r| r.1).map(|r| r.0).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let exact = n <= WILCOXON_EXACT_MAX_N;
    let p_value = if exact {
        exact_p(&ranked, w_plus)
    } else {
        normal_p(&ranked, w_plus)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        statistic: w_plus.min(w_minus),
        p_value,
        exact,
        degenerate: false,
    })
}

/// Exact null distribution of W⁺ by dynamic programming over doubled
/// (integer) midranks; every sign pattern is equally likely.
fn exact_p(ranked: &[(f64, bool)], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranked.iter().map(|r| (r.0 * 2.0).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0f64; max + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let total = 2f64.powi(ranked.len() as i32);
    let obs = (w_plus * 2.0).round() as usize;
    let lower: f64 = counts[..=obs].iter().sum::<f64>() / total;
    let upper: f64 = counts[obs..].iter().sum::<f64>() / total;
    (2.0 * lower.min(upper)).min(1.0)
}

/// Normal approximation with tie and continuity corrections.
fn normal_p(ranked: &[(f64, bool)], w_plus: f64) -> f64 {
    let n = ranked.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < ranked.len() {
        let mut j = i;
        while j + 1 < ranked.len() && ranked[j + 1].0 == ranked[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    (2.0 * (1.0 - std_normal.cdf(z))).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Enumerates all 2^n sign assignments of the observed ranks.
    fn brute_force_p(diffs: &[f64]) -> f64 {
        let ranked = signed_midranks(diffs);
        let n = ranked.len();
        let obs: f64 = ranked.iter().filter(|r| r.1).map(|r| r.0).sum();
        let total: f64 = ranked.iter().map(|r| r.0).sum();
        let center = total / 2.0;
        let dev = (obs - center).abs();
        let mut extreme = 0usize;
        for mask in 0u32..(1 << n) {
            let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranked[i].0).sum();
            if (s - center).abs() >= dev - 1e-9 {
                extreme += 1;
            }
        }
        extreme as f64 / (1u64 << n) as f64
    }

    #[test]
    fn aggregate_reference_values() {
        assert_eq!(aggregate(&[5.0]).unwrap(), Aggregate { mean: 5.0, std: 0.0, n: 1 });
        let a = aggregate(&[1.0, 3.0]).unwrap();
        assert_eq!(a.mean, 2.0);
        assert!((a.std - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(aggregate(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn aggregate_of_standard_normal_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let v: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let a = aggregate(&v).unwrap();
        assert!(a.mean.abs() < 0.1 && (a.std - 1.0).abs() < 0.1);
    }

    #[test]
    fn five_positive_differences() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r.w_minus, 0.0);
        assert_eq!(r.w_plus, 15.0);
        assert!((r.p_value - 0.0625).abs() < 1e-15);
        assert!((brute_force_p(&[1.0, 2.0, 3.0, 4.0, 5.0]) - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair_and_zero_dropping() {
        assert_eq!(wilcoxon_signed_rank(&[1.0, -1.0]).unwrap().p_value, 1.0);
        let r = wilcoxon_signed_rank(&[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.n, 1);
        assert_eq!(r.p_value, 1.0);
        let d = wilcoxon_signed_rank(&[0.0, 0.0]).unwrap();
        assert!(d.degenerate && d.p_value == 1.0);
    }

    #[test]
    fn exact_matches_enumeration_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let n = rng.gen_range(1..=12);
            let d: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(-4i32..=4))).collect();
            let r = wilcoxon_signed_rank(&d).unwrap();
            if r.degenerate {
                continue;
            }
            assert!((r.p_value - brute_force_p(&d).min(1.0)).abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn normal_approximation_tracks_exact_at_n15() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let shift = rng.gen_range(-0.5..0.5);
            let d: Vec<f64> = (0..15).map(|_| rng.sample::<f64, _>(StandardNormal) + shift).collect();
            let ranked = signed_midranks(&d);
            let w: f64 = ranked.iter().filter(|r| r.1).map(|r| r.0).sum();
            assert!((exact_p(&ranked, w) - normal_p(&ranked, w)).abs() < 0.05);
        }
    }

    #[test]
    fn large_samples_use_the_normal_approximation() {
        let d: Vec<f64> = (1..=30).map(|i| i as f64 * if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let r = wilcoxon_signed_rank(&d).unwrap();
        assert!(!r.exact && r.p_value > 0.0 && r.p_value < 1.0);
    }
}
