use serde::{Deserialize, Serialize};

fn is_word(c: char) -> bool {
    c.is_alphanumeric()
}

/// Approximate token count: maximal alphanumeric runs plus every
/// non-whitespace punctuation character.
pub fn count_tokens(text: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for c in text.chars() {
        if is_word(c) {
            if !in_word {
                count += 1;
            }
            in_word = true;
        } else {
            in_word = false;
            if !c.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}

/// Longest prefix of `text` holding at most `max` approximate tokens.
pub fn truncate_tokens(text: &str, max: usize) -> &str {
    let mut count = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        let starts = if is_word(c) {
            let s = !in_word;
            in_word = true;
            s
        } else {
            in_word = false;
            !c.is_whitespace()
        };
        if starts {
            count += 1;
            if count > max {
                return text[..i].trim_end();
            }
        }
    }
    text
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub per_product_tokens: Vec<usize>,
    pub total_tokens: usize,
    pub baseline_per_product_tokens: Vec<usize>,
    pub baseline_total_tokens: usize,
    /// `1 − total / baseline`; absent when the baseline is empty.
    pub reduction_ratio: Option<f64>,
}

impl TokenStats {
    pub fn from_counts(structured: Vec<usize>, raw: Vec<usize>) -> Self {
        let total: usize = structured.iter().sum();
        let baseline: usize = raw.iter().sum();
        TokenStats {
            per_product_tokens: structured,
            total_tokens: total,
            baseline_per_product_tokens: raw,
            baseline_total_tokens: baseline,
            reduction_ratio: (baseline > 0).then(|| 1.0 - total as f64 / baseline as f64),
        }
    }

    pub fn mean_tokens(&self) -> f64 {
        mean(&self.per_product_tokens)
    }

    pub fn mean_baseline_tokens(&self) -> f64 {
        mean(&self.baseline_per_product_tokens)
    }
}

fn mean(v: &[usize]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<usize>() as f64 / v.len() as f64
    }
}

/// Token counts for per-product renderings of the structured and raw
/// payloads, in the same product order.
pub fn token_report<S: AsRef<str>, R: AsRef<str>>(structured: &[S], raw: &[R]) -> TokenStats {
    TokenStats::from_counts(
        structured.iter().map(|s| count_tokens(s.as_ref())).collect(),
        raw.iter().map(|s| count_tokens(s.as_ref())).collect(),
    )
}
