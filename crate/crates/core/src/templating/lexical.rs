use std::collections::HashSet;

/// Maps a word to its lemma.
pub trait Lemmatizer {
    fn lemma(&self, word: &str) -> String;
}

impl<F: Fn(&str) -> String> Lemmatizer for F {
    fn lemma(&self, word: &str) -> String {
        self(word)
    }
}

/// Suffix-stripping English lemmatizer with a small irregular table.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleLemmatizer;

const IRREGULAR: [(&str, &str); 22] = [
    ("am", "be"),
    ("is", "be"),
    ("are", "be"),
    ("was", "be"),
    ("were", "be"),
    ("been", "be"),
    ("being", "be"),
    ("has", "have"),
    ("had", "have"),
    ("having", "have"),
    ("does", "do"),
    ("did", "do"),
    ("done", "do"),
    ("went", "go"),
    ("gone", "go"),
    ("goes", "go"),
    ("children", "child"),
    ("men", "man"),
    ("women", "woman"),
    ("people", "person"),
    ("feet", "foot"),
    ("teeth", "tooth"),
];

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Restores a silent "e" or undoubles a final consonant after an
/// inflectional suffix was removed.
fn repair_stem(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 2 && b[n - 1] == b[n - 2] && !is_vowel(b[n - 1]) && !matches!(b[n - 1], b'l' | b's' | b'z') {
        return stem[..n - 1].to_string();
    }
    if n >= 1 && matches!(b[n - 1], b'c' | b'v') {
        return format!("{stem}e");
    }
    if n >= 3 {
        let (c1, v, c2) = (b[n - 3], b[n - 2], b[n - 1]);
        if !is_vowel(c1) && is_vowel(v) && !is_vowel(c2) && !matches!(c2, b'w' | b'x' | b'y') {
            return format!("{stem}e");
        }
    }
    stem.to_string()
}

impl Lemmatizer for RuleLemmatizer {
    fn lemma(&self, word: &str) -> String {
        let w = word.to_lowercase();
        if let Some((_, l)) = IRREGULAR.iter().find(|(f, _)| *f == w) {
            return l.to_string();
        }
        if !w.bytes().all(|c| c.is_ascii_lowercase()) {
            return w;
        }
        let n = w.len();
        if n > 4 && w.ends_with("ies") {
            return format!("{}y", &w[..n - 3]);
        }
        if w.ends_with("sses") || w.ends_with("ches") || w.ends_with("shes") || w.ends_with("xes") {
            return w[..n - 2].to_string();
        }
        if n > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") && !w.ends_with("is") {
            return w[..n - 1].to_string();
        }
        if n > 4 && w.ends_with("ied") {
            return format!("{}y", &w[..n - 3]);
        }
        if n > 4 && w.ends_with("ed") {
            return repair_stem(&w[..n - 2]);
        }
        if n > 5 && w.ends_with("ing") {
            return repair_stem(&w[..n - 3]);
        }
        w
    }
}

/// Stopword list; punctuation-only words are stopwords as well.
#[derive(Clone, Debug)]
pub struct Stoplist {
    words: HashSet<String>,
}

const ENGLISH: &str = include_str!("../../assets/stopwords_en.txt");

impl Stoplist {
    /// The standard English stopword list shipped with the crate.
    pub fn english() -> Self {
        Self::from_words(ENGLISH.lines())
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        Stoplist {
            words: words
                .into_iter()
                .map(|w| w.trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word) || crate::text::is_punctuation(word)
    }
}
