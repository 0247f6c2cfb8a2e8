//! Word-level text handling: every algorithm in the crate sees lowercased,
//! whitespace-split words with punctuation marks as separate words.

use std::ops::Range;

/// A whitespace-free, lowercased word sequence.
pub type Words = Vec<String>;

/// Splits `text` on whitespace and lowercases each word.
pub fn words(text: &str) -> Words {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Joins words back into display text.
pub fn join(words: &[String]) -> String {
    words.join(" ")
}

pub fn is_terminal_punct(word: &str) -> bool {
    matches!(word, "." | "!" | "?")
}

/// True when the word is made only of punctuation characters.
pub fn is_punctuation(word: &str) -> bool {
    !word.is_empty() && word.chars().all(|c| c.is_ascii_punctuation())
}

/// Sentence ranges over `words`; terminal punctuation closes a sentence and a
/// trailing unterminated run forms a final sentence.
pub fn sentences(words: &[String]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, w) in words.iter().enumerate() {
        if is_terminal_punct(w) {
            out.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < words.len() {
        out.push(start..words.len());
    }
    out
}

/// Lowercases and strips trailing punctuation words/characters, for persona
/// sentence comparison.
pub fn normalize_sentence(words: &[String]) -> String {
    let mut ws: Vec<String> = words
        .iter()
        .map(|w| w.to_lowercase())
        .filter(|w| !is_punctuation(w))
        .collect();
    if let Some(last) = ws.last_mut() {
        let trimmed = last.trim_end_matches(|c: char| c.is_ascii_punctuation());
        *last = trimmed.to_string();
    }
    ws.retain(|w| !w.is_empty());
    ws.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_split_handles_unterminated_tail() {
        let w = words("i like apples . the weather is nice ! ok then");
        assert_eq!(sentences(&w), vec![0..4, 4..9, 9..11]);
        assert!(sentences(&[]).is_empty());
        assert_eq!(sentences(&words("no punct here")), vec![0..3]);
    }

    #[test]
    fn normalization_ignores_case_and_punct() {
        assert_eq!(normalize_sentence(&words("I like Apples .")), "i like apples");
        assert_eq!(normalize_sentence(&words("i like apples")), "i like apples");
        assert_eq!(normalize_sentence(&words("i like apples!")), "i like apples");
    }
}
