//! The shared analyzer: lowercase, split on non-alphanumerics, drop empties.
//! No stemming and no stopwords, except the keyword-only stopword list.

pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Applied only when extracting topic keywords.
pub const KEYWORD_STOPWORDS: [&str; 30] = [
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "in", "is", "it",
    "its", "of", "on", "or", "that", "the", "this", "to", "was", "were", "which", "with",
    "we", "these", "those", "their",
];

pub fn is_stopword(term: &str) -> bool {
    KEYWORD_STOPWORDS.contains(&term)
}

/// 64-bit FNV-1a. Stable across platforms and releases.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}
