//! Cut-off retrieval metrics.

use std::collections::HashSet;

use crate::error::{Error, Result};

fn check(relevant: &HashSet<String>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::domain("cutoff k must be at least 1"));
    }
    if relevant.is_empty() {
        return Err(Error::domain("relevant set is empty"));
    }
    Ok(())
}

/// Fraction of `relevant` found in the first `k` ranked ids. Relevant ids
/// absent from the ranking still count in the denominator.
pub fn recall_at_k<I, S>(ranking: I, relevant: &HashSet<String>, k: usize) -> Result<f64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    check(relevant, k)?;
    let hits = ranking
        .into_iter()
        .take(k)
        .filter(|id| relevant.contains(id.as_ref()))
        .count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Average precision over the first `k` ranks, normalized by
/// `min(|relevant|, k)`.
pub fn average_precision_at_k<I, S>(ranking: I, relevant: &HashSet<String>, k: usize) -> Result<f64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    check(relevant, k)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranking.into_iter().take(k).enumerate() {
        if relevant.contains(id.as_ref()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len().min(k) as f64)
}
