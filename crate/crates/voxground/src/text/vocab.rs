//! Tiny closed vocabulary covering the words the scene generator emits:
//! colors, object categories, spatial relations and glue words.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Reserved id 0: unknown word.
pub const UNK: &str = "<unk>";

/// Maximum tokens per description.
pub const MAX_WORDS: usize = 16;

/// Color attribute names with their point RGB.
pub const COLORS: [(&str, [f64; 3]); 12] = [
    ("red", [1.0, 0.0, 0.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("purple", [1.0, 0.0, 1.0]),
    ("cyan", [0.0, 1.0, 1.0]),
    ("orange", [1.0, 0.5, 0.0]),
    ("white", [1.0, 1.0, 1.0]),
    ("black", [0.05, 0.05, 0.05]),
    ("gray", [0.5, 0.5, 0.5]),
    ("brown", [0.55, 0.27, 0.07]),
    ("pink", [1.0, 0.6, 0.8]),
];

/// Object category names with their base (sx, sy, sz) extents in meters.
/// Shapes differ enough that categories are recognizable from geometry.
pub const CATEGORIES: [(&str, [f64; 3]); 8] = [
    ("box", [0.30, 0.30, 0.30]),
    ("crate", [0.50, 0.40, 0.35]),
    ("block", [0.22, 0.22, 0.22]),
    ("slab", [0.55, 0.45, 0.10]),
    ("post", [0.12, 0.12, 0.75]),
    ("board", [0.60, 0.08, 0.40]),
    ("bin", [0.35, 0.30, 0.25]),
    ("cart", [0.45, 0.30, 0.32]),
];

/// Remaining words used by description templates.
pub const GLUE_WORDS: [&str; 10] =
    ["the", "left", "right", "of", "behind", "in", "front", "nearest", "a", "near"];

/// Word-to-id map with dense ids starting at 0 (the UNK id).
#[derive(Clone, Debug)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Result<Self> {
        let mut v = Vocabulary { words: Vec::new(), index: HashMap::new() };
        v.push(UNK)?;
        for w in words {
            v.push(&w)?;
        }
        Ok(v)
    }

    fn push(&mut self, word: &str) -> Result<()> {
        if self.index.contains_key(word) {
            return Err(Error::InvalidInput(format!("duplicate vocabulary word {word}")));
        }
        self.index.insert(word.to_string(), self.words.len());
        self.words.push(word.to_string());
        Ok(())
    }

    /// The built-in vocabulary: UNK, colors, categories, glue words.
    pub fn builtin() -> Self {
        let words = COLORS
            .iter()
            .map(|(w, _)| w.to_string())
            .chain(CATEGORIES.iter().map(|(w, _)| w.to_string()))
            .chain(GLUE_WORDS.iter().map(|w| w.to_string()));
        Self::from_words(words).expect("builtin words are unique")
    }

    /// Loads a vocabulary file: one word per line, line number = id.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut v = Vocabulary { words: Vec::new(), index: HashMap::new() };
        for line in text.lines() {
            let word = line.trim();
            if word.is_empty() {
                return Err(Error::Parse("empty vocabulary line".into()));
            }
            v.push(word)?;
        }
        if v.words.is_empty() {
            return Err(Error::Parse("vocabulary file is empty".into()));
        }
        if v.words[0] != UNK {
            return Err(Error::Parse(format!("first vocabulary word must be {UNK}")));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.words.join("\n") + "\n")?;
        Ok(())
    }

    /// Id of a word; unknown words map to the UNK id 0.
    pub fn id_of(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}
