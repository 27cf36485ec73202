//! Paired comparison of two evaluation runs over the same items.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalReport;

pub const DEFAULT_PERMUTATIONS: usize = 10_000;

/// Sign-flip permutation test on paired differences. When `2^n` does not
/// exceed the permutation budget every sign pattern is enumerated and the
/// p-value is exact; otherwise `permutations` random patterns are drawn and
/// `p = (1 + hits) / (1 + permutations)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub mean_difference: f64,
    pub p_value: f64,
    pub exact: bool,
    pub permutations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub items: usize,
    /// Differences are `a - b`.
    pub precision_at_5: PairedTest,
    pub average_precision: PairedTest,
}

impl RunComparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Whether a permuted statistic counts as at least as extreme as the
/// observed one. The slack absorbs summation-order rounding.
pub fn at_least_as_extreme(statistic: f64, observed: f64) -> bool {
    statistic >= observed - 1e-12 * (1.0 + observed.abs())
}

fn signed_mean(diffs: &[f64], sign_of: impl Fn(usize) -> bool) -> f64 {
    let total: f64 = diffs
        .iter()
        .enumerate()
        .map(|(i, d)| if sign_of(i) { -d } else { *d })
        .sum();
    (total / diffs.len() as f64).abs()
}

pub fn paired_permutation_test(
    diffs: &[f64],
    permutations: usize,
    rng_seed: u64,
) -> Result<PairedTest> {
    if diffs.is_empty() {
        return Err(Error::MismatchedItems("no paired items".into()));
    }
    if permutations == 0 {
        return Err(Error::Config("permutations must be at least 1".into()));
    }
    let n = diffs.len();
    let observed = mean(diffs).abs();
    let exhaustive = n < usize::BITS as usize && (1usize << n) <= permutations;
    if exhaustive {
        let patterns = 1usize << n;
        let hits = (0..patterns)
            .filter(|mask| {
                at_least_as_extreme(signed_mean(diffs, |i| mask >> i & 1 == 1), observed)
            })
            .count();
        return Ok(PairedTest {
            mean_difference: mean(diffs),
            p_value: hits as f64 / patterns as f64,
            exact: true,
            permutations: patterns,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut signs = vec![false; n];
    let mut hits = 0usize;
    for _ in 0..permutations {
        signs.iter_mut().for_each(|s| *s = rng.gen());
        if at_least_as_extreme(signed_mean(diffs, |i| signs[i]), observed) {
            hits += 1;
        }
    }
    Ok(PairedTest {
        mean_difference: mean(diffs),
        p_value: (1 + hits) as f64 / (1 + permutations) as f64,
        exact: false,
        permutations,
    })
}

/// Per-item differences `a - b` of p@5 and AP with paired permutation
/// p-values. Both reports must cover the same item ids.
pub fn compare_runs(
    a: &EvalReport,
    b: &EvalReport,
    permutations: usize,
    rng_seed: u64,
) -> Result<RunComparison> {
    let by_id: std::collections::HashMap<&str, _> =
        b.per_seed.iter().map(|s| (s.item_id.as_str(), s)).collect();
    if by_id.len() != a.per_seed.len() || by_id.len() != b.per_seed.len() {
        return Err(Error::MismatchedItems(format!(
            "{} items vs {}",
            a.per_seed.len(),
            b.per_seed.len()
        )));
    }
    let mut d_p5 = Vec::with_capacity(a.per_seed.len());
    let mut d_ap = Vec::with_capacity(a.per_seed.len());
    for s in &a.per_seed {
        let other = by_id.get(s.item_id.as_str()).ok_or_else(|| {
            Error::MismatchedItems(format!("{:?} missing from second run", s.item_id))
        })?;
        d_p5.push(s.precision_at_5 - other.precision_at_5);
        d_ap.push(s.average_precision - other.average_precision);
    }
    Ok(RunComparison {
        items: d_p5.len(),
        precision_at_5: paired_permutation_test(&d_p5, permutations, rng_seed)?,
        average_precision: paired_permutation_test(&d_ap, permutations, rng_seed.wrapping_add(1))?,
    })
}
