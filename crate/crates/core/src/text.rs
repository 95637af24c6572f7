//! Tokenizers.
//!
//! Two schemes are used: `terms` (lowercased alphanumeric runs) for lexical
//! scoring and hashed embeddings, and `whitespace_spans` for chunking, where
//! byte spans must map back onto the original text.

use alloc::string::String;
use alloc::vec::Vec;

/// Lowercased runs of alphanumeric characters.
pub fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Byte spans `(start, end)` of every whitespace-separated token.
pub fn whitespace_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Number of whitespace tokens.
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn terms_lowercase_and_split() {
        assert_eq!(terms("Restart the SERVER!"), vec!["restart", "the", "server"]);
        assert_eq!(terms("kql.executor/v2"), vec!["kql", "executor", "v2"]);
        assert!(terms("  -- ").is_empty());
    }

    #[test]
    fn spans_map_back_to_text() {
        let text = "  fn main() {\n\tlet x = 1;\n}";
        let spans = whitespace_spans(text);
        let tokens: Vec<&str> = spans.iter().map(|&(s, e)| &text[s..e]).collect();
        let expected: Vec<&str> = text.split_whitespace().collect();
        assert_eq!(tokens, expected);
        assert_eq!(whitespace_token_count(text), expected.len());
    }
}
