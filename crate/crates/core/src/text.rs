//! Text normalization shared by schema standardization, extraction and scoring.

/// Collapses runs of whitespace into single spaces and trims both ends.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const TRAILING_PUNCTUATION: &[char] = &['.', ',', ':', ';', '!', '?', '-', '_', '*'];

/// Normalizes an attribute name: lowercase, trimmed, single-spaced, with
/// trailing punctuation stripped.
///
/// ```
/// assert_eq!(attrgraph::text::normalize_name("  Screen  Size: "), "screen size");
/// ```
pub fn normalize_name(name: &str) -> String {
    let collapsed = collapse_whitespace(&name.to_lowercase());
    collapsed
        .trim_end_matches(TRAILING_PUNCTUATION)
        .trim_end()
        .to_string()
}

/// Normalizes an attribute value for storage: trim + whitespace collapse.
/// Case and units are preserved.
pub fn normalize_value(value: &str) -> String {
    collapse_whitespace(value)
}

/// Normalization used when comparing two values: storage normalization plus
/// lowercasing.
pub fn comparable_value(value: &str) -> String {
    collapse_whitespace(&value.to_lowercase())
}

/// Values that carry no information and are dropped at extraction time.
pub fn is_placeholder_value(value: &str) -> bool {
    let v = value.trim().to_lowercase();
    v.is_empty() || v == "unknown" || v == "n/a" || v == "null"
}
