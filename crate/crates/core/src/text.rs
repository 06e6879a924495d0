//! Word-level text helpers shared by the engine and the scripted backend.

use std::collections::BTreeSet;

const STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "against", "also", "been", "before", "being", "below", "between", "both",
    "could", "does", "doing", "down", "during", "each", "even", "from", "further", "have", "having", "here",
    "hers", "herself", "himself", "into", "itself", "just", "like", "maybe", "more", "most", "myself", "only",
    "other", "ours", "ourselves", "over", "really", "same", "should", "some", "such", "than", "that", "their",
    "theirs", "them", "themselves", "then", "there", "these", "they", "thing", "things", "think", "this",
    "those", "through", "under", "until", "very", "want", "were", "what", "when", "where", "which", "while",
    "will", "with", "would", "yeah", "your", "yours", "yourself", "yourselves",
];

/// Lowercased alphanumeric tokens; everything else separates words.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// Words longer than three characters that are not stopwords.
pub fn content_words(text: &str) -> BTreeSet<String> {
    tokens(text).into_iter().filter(|w| w.chars().count() > 3 && !is_stopword(w)).collect()
}

/// True when `name` occurs in `text` as a whole word (or contiguous word
/// sequence), ignoring case and punctuation.
pub fn mentions_name(text: &str, name: &str) -> bool {
    let needle = tokens(name);
    if needle.is_empty() {
        return false;
    }
    let hay = tokens(text);
    hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

pub fn first_words(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_are_sorted_for_binary_search() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn tokens_strip_punctuation() {
        assert_eq!(tokens("Lisa, what do you THINK?!"), vec!["lisa", "what", "do", "you", "think"]);
    }

    #[test]
    fn content_words_drop_short_and_stop() {
        let words = content_words("What about the pizza toppings, they matter");
        assert_eq!(words.into_iter().collect::<Vec<_>>(), vec!["matter", "pizza", "toppings"]);
    }

    #[test]
    fn multi_word_names() {
        assert!(mentions_name("hey mary ann, go on", "Mary Ann"));
        assert!(!mentions_name("mary and ann", "Mary Ann"));
    }
}
