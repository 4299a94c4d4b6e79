//! Scalar metrics over test outcomes and memory contents.

use std::collections::BTreeSet;

use num_rational::Ratio;

use crate::error::{Error, Result};

/// Instruction accuracy for one round.
pub fn ia(round_tests_passed: bool) -> u8 {
    u8::from(round_tests_passed)
}

/// Conversation accuracy: fraction of cumulative tests that pass.
pub fn ca(cumulative_results: &[bool]) -> Result<f64> {
    if cumulative_results.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let passed = cumulative_results.iter().filter(|p| **p).count();
    Ok(passed as f64 / cumulative_results.len() as f64)
}

/// Instruction forgetting ratio: share of previously passed tests that now
/// fail. Zero when nothing passed before.
pub fn ifr(previously_passed: &BTreeSet<String>, current_failures: &BTreeSet<String>) -> f64 {
    if previously_passed.is_empty() {
        return 0.0;
    }
    let forgotten = previously_passed.intersection(current_failures).count();
    forgotten as f64 / previously_passed.len() as f64
}

fn check_pass_at_k(n: u64, c: u64, k: u64) -> Result<()> {
    if c > n || k == 0 || k > n {
        return Err(Error::Domain(format!(
            "pass@k requires 0 <= c <= n and 1 <= k <= n (n={n}, c={c}, k={k})"
        )));
    }
    Ok(())
}

/// Unbiased pass@k, `1 - C(n-c, k) / C(n, k)`, evaluated as a running
/// product so large `n` cannot overflow.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64> {
    check_pass_at_k(n, c, k)?;
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// Exact rational pass@k. The product stays reduced at every step, which
/// keeps it within `u128` for any realistic sample count.
pub fn pass_at_k_exact(n: u64, c: u64, k: u64) -> Result<Ratio<u128>> {
    check_pass_at_k(n, c, k)?;
    let one = Ratio::from_integer(1u128);
    if n - c < k {
        return Ok(one);
    }
    let miss = (0..k).fold(one, |acc, i| {
        acc * Ratio::new(u128::from(n - c - i), u128::from(n - i))
    });
    Ok(one - miss)
}

/// `(recall, precision)` of memory namespaces against gold namespaces.
/// Recall is 0 for an empty gold set and precision is 0 for empty memory.
pub fn context_scores(memory: &BTreeSet<String>, gold: &BTreeSet<String>) -> (f64, f64) {
    let hit = memory.intersection(gold).count() as f64;
    let recall = if gold.is_empty() { 0.0 } else { hit / gold.len() as f64 };
    let precision = if memory.is_empty() { 0.0 } else { hit / memory.len() as f64 };
    (recall, precision)
}
