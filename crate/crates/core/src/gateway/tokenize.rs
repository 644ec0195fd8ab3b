//! Reference tokenizer used by the mock backend.
//!
//! A byte-pair-style pre-tokenizer: optional leading space + up to six letters,
//! up to three digits, runs of punctuation, or whitespace. Every character of
//! the input lands in exactly one piece, so pieces concatenate back to the input.

use std::sync::LazyLock;

use regex::Regex;

static PIECE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r" ?\p{L}{1,6}| ?\p{N}{1,3}| ?[^\s\p{L}\p{N}]+|\s+").expect("valid regex")
});

pub fn tokenize(text: &str) -> Vec<&str> {
    PIECE.find_iter(text).map(|m| m.as_str()).collect()
}

pub fn count_tokens(text: &str) -> usize {
    PIECE.find_iter(text).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_words_numbers_and_punctuation() {
        assert_eq!(tokenize("a b c"), vec!["a", " b", " c"]);
        assert_eq!(tokenize("steps: 10000"), vec!["steps", ":", " 100", "00"]);
        assert_eq!(tokenize("efficiency"), vec!["effici", "ency"]);
        assert!(tokenize("").is_empty());
    }

    proptest! {
        #[test]
        fn pieces_concatenate_to_input(s in "\\PC{0,200}") {
            let joined: String = tokenize(&s).concat();
            prop_assert_eq!(joined, s);
        }
    }
}
