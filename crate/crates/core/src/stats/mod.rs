//! Accuracies, paired t-tests, verdicts, pass rates, ICL-effectiveness and
//! needle recall. Generic over the floating-point scalar.

mod special;
mod ttest;
mod verdict;

use std::collections::HashMap;

use num_traits::{Float, FromPrimitive};
use thiserror::Error;

pub use special::{incbeta, incbeta_with_complement, ln_beta, ln_gamma, student_t_two_sided_p};
pub use ttest::{paired_t_test, TTest};
pub use verdict::{
    cell_verdict, icl_effectiveness_split, pass_rate, CellVerdict, EffectivenessSplit, Marginal,
    PassRateSummary, Verdict,
};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptySet,
    #[error("at least 2 pairs are required, got {0}")]
    TooFewPairs(usize),
    #[error("needle has no tokens")]
    EmptyNeedle,
    #[error("missing cells: {0:?}")]
    MissingCells(Vec<String>),
}

/// Exact-match accuracy.
pub fn accuracy<T: PartialEq, F: Float + FromPrimitive>(
    predictions: &[T],
    gold: &[T],
) -> Result<F, StatsError> {
    if predictions.len() != gold.len() {
        return Err(StatsError::LengthMismatch(predictions.len(), gold.len()));
    }
    if gold.is_empty() {
        return Err(StatsError::EmptySet);
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(F::from_usize(hits).expect("count fits") / F::from_usize(gold.len()).expect("count fits"))
}

/// Lowercased alphanumeric runs; whitespace and punctuation separate tokens.
pub fn recall_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// `|response ∩ needle| / |needle|` over token multisets.
pub fn token_recall<F: Float + FromPrimitive>(response: &str, needle: &str) -> Result<F, StatsError> {
    let needle_tokens = recall_tokens(needle);
    if needle_tokens.is_empty() {
        return Err(StatsError::EmptyNeedle);
    }
    let mut available: HashMap<String, usize> = HashMap::new();
    for token in recall_tokens(response) {
        *available.entry(token).or_default() += 1;
    }
    let mut hits = 0usize;
    for token in &needle_tokens {
        if let Some(n) = available.get_mut(token) {
            if *n > 0 {
                *n -= 1;
                hits += 1;
            }
        }
    }
    Ok(F::from_usize(hits).expect("count fits") / F::from_usize(needle_tokens.len()).expect("count fits"))
}
