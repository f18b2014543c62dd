//! Tokenization. Whitespace split with punctuation detached into
//! single-character tokens; alphabetic text is lowercased. Every length
//! in the toolkit is measured in these tokens.

/// Surface form of the mask standing in for the target citation.
pub const MASK_TOKEN: &str = "[CITE_MASK]";

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Split `text` into tokens. A whitespace-delimited chunk equal to
/// [`MASK_TOKEN`] survives as a single token; otherwise alphanumeric runs
/// and individual punctuation characters become tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        if chunk == MASK_TOKEN {
            tokens.push(MASK_TOKEN.to_string());
            continue;
        }
        let mut word = String::new();
        for c in chunk.chars() {
            if is_word_char(c) {
                word.extend(c.to_lowercase());
            } else {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(c.to_string());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

/// Inverse-ish of [`tokenize`]: space-join. Round-trips the token multiset.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}
