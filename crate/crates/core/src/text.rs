//! Tokenization shared by features, BM25 and hashed embeddings.
//!
//! Text is lowercased and split at every character that is not alphanumeric,
//! so Unicode whitespace and punctuation both act as token boundaries and are
//! never emitted as tokens themselves.

/// Lowercase and split `text` into alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Tokenize each utterance and concatenate the results in order.
pub fn tokenize_all<S: AsRef<str>>(utterances: &[S]) -> Vec<String> {
    utterances
        .iter()
        .flat_map(|u| tokenize(u.as_ref()))
        .collect()
}
