//! Text normalization and bag-of-terms helpers shared by the offline fallbacks.

use std::collections::BTreeMap;

/// Lowercased alphanumeric terms, in order of appearance.
pub fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase()).collect()
}

/// Canonical form: terms joined by single spaces.
pub fn normalize(text: &str) -> String {
    terms(text).join(" ")
}

pub fn term_frequencies(text: &str) -> BTreeMap<String, u32> {
    let mut tf = BTreeMap::new();
    for t in terms(text) {
        *tf.entry(t).or_insert(0) += 1;
    }
    tf
}

/// Cosine similarity of raw term-frequency vectors. Zero when either side has no terms.
pub fn tf_cosine(a: &str, b: &str) -> f64 {
    let ta = term_frequencies(a);
    let tb = term_frequencies(b);
    let norm = |m: &BTreeMap<String, u32>| m.values().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt();
    let (na, nb) = (norm(&ta), norm(&tb));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = ta.iter().filter_map(|(t, &ca)| tb.get(t).map(|&cb| ca as f64 * cb as f64)).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_collapses_whitespace_and_case() {
        assert_eq!(normalize("  What   is\tthe KETTLE? "), "what is the kettle");
        assert_eq!(terms("a,b;;c"), vec!["a", "b", "c"]);
    }

    #[test]
    fn tf_cosine_basics() {
        assert!((tf_cosine("red car", "red car") - 1.0).abs() < 1e-12);
        assert_eq!(tf_cosine("red car", "blue boat"), 0.0);
        assert!((tf_cosine("a b", "a c") - 0.5).abs() < 1e-12);
        assert_eq!(tf_cosine("", "a"), 0.0);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
