//! Tokenization and hashing helpers shared by the analyzer and the embedder.

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Lowercased word tokens. Apostrophes are dropped so "mom's" becomes "moms".
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '\u{2019}'))
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "cant", "could", "couldnt", "day", "did", "didnt", "do", "does",
    "doesnt", "doing", "dont", "down", "during", "each", "even", "ever", "every", "feel",
    "feeling", "felt", "few", "for", "from", "further", "get", "got", "had", "has", "have",
    "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "id",
    "if", "im", "in", "into", "is", "it", "its", "itself", "ive", "just", "know", "like",
    "made", "make", "me", "more", "most", "much", "my", "myself", "no", "nor", "not", "now",
    "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves", "out", "over",
    "own", "really", "same", "she", "should", "so", "some", "still", "such", "than", "that",
    "thats", "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they",
    "thing", "things", "think", "this", "those", "through", "to", "today", "too", "under",
    "until", "up", "very", "was", "wasnt", "way", "we", "well", "went", "were", "what", "when",
    "where", "which", "while", "who", "whom", "why", "will", "with", "would", "yeah", "yes",
    "yesterday", "you", "your", "yours", "yourself",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Crude suffix stripping so that "splashed" and "splashing" compare equal.
pub fn stem(token: &str) -> &str {
    for suffix in ["ing", "ed", "es", "s"] {
        if let Some(stripped) = token.strip_suffix(suffix) {
            if stripped.chars().count() >= 3 {
                return stripped;
            }
        }
    }
    token
}

/// Non-stopword alphabetic tokens of at least three characters.
pub fn content_words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().count() >= 3 && t.chars().all(char::is_alphabetic) && !is_stopword(t))
        .collect()
}

/// `word` with its first character uppercased.
pub fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
