use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::char_stream_build;
use super::conllu::{Sentence, Task};

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;
pub const SPACE_ID: usize = 1;

/// Insertion-ordered string index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Index {
    items: Vec<String>,
    map: HashMap<String, usize>,
}

impl From<Vec<String>> for Index {
    fn from(items: Vec<String>) -> Self {
        let map = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Index { items, map }
    }
}

impl From<Index> for Vec<String> {
    fn from(index: Index) -> Self {
        index.items
    }
}

impl Index {
    pub fn insert(&mut self, item: &str) -> usize {
        if let Some(&i) = self.map.get(item) {
            return i;
        }
        self.items.push(item.to_string());
        self.map.insert(item.to_string(), self.items.len() - 1);
        self.items.len() - 1
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.map.get(item).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.items.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

/// Word, character and tag indices built from training data.
///
/// Words and characters reserve id 0 for unknowns, and character id 1 is the
/// inter-token space. Tags have no unknown entry: a gold tag missing from the
/// index can never be predicted and always scores as an error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabs {
    pub words: Index,
    pub chars: Index,
    pub tags: Index,
    pub task: Task,
    /// Lowercase forms before the learned-embedding lookup.
    pub lowercase_words: bool,
}

/// A sentence mapped to ids, ready for the encoders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub word_ids: Vec<usize>,
    /// Character ids of the whole sentence, spaces included.
    pub char_ids: Vec<usize>,
    /// Inclusive `(first, last)` character positions of each token.
    pub spans: Vec<(usize, usize)>,
    /// Gold tag ids; `None` for tags unseen in training or unlabelled input.
    pub tags: Vec<Option<usize>>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }

    /// Character ids of token `i` alone.
    pub fn token_chars(&self, i: usize) -> &[usize] {
        let (a, b) = self.spans[i];
        &self.char_ids[a..=b]
    }
}

pub fn build_vocabs(train: &[Sentence], task: Task, min_count: usize, lowercase_words: bool) -> Result<Vocabs> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("cannot build vocabularies from an empty corpus".into()));
    }
    let mut word_counts: HashMap<String, usize> = HashMap::new();
    let mut word_order = Vec::new();
    let mut chars = Index::from(vec![UNK.to_string(), " ".to_string()]);
    let mut tags = Index::default();
    for s in train {
        for tok in &s.tokens {
            let w = normalise(tok.form(), lowercase_words);
            let c = word_counts.entry(w.clone()).or_insert(0);
            if *c == 0 {
                word_order.push(w);
            }
            *c += 1;
            for ch in tok.form().chars() {
                chars.insert(ch.encode_utf8(&mut [0; 4]));
            }
            tags.insert(&task.tag_of(tok)?);
        }
    }
    let mut words = Index::from(vec![UNK.to_string()]);
    for w in word_order {
        if word_counts[&w] >= min_count.max(1) {
            words.insert(&w);
        }
    }
    Ok(Vocabs {
        words,
        chars,
        tags,
        task,
        lowercase_words,
    })
}

fn normalise(form: &str, lowercase: bool) -> String {
    if lowercase {
        form.to_lowercase()
    } else {
        form.to_string()
    }
}

impl Vocabs {
    pub fn word_id(&self, form: &str) -> usize {
        if self.lowercase_words {
            self.words.get(&form.to_lowercase()).unwrap_or(UNK_ID)
        } else {
            self.words.get(form).unwrap_or(UNK_ID)
        }
    }

    pub fn char_id(&self, c: char) -> usize {
        self.chars.get(c.encode_utf8(&mut [0; 4])).unwrap_or(UNK_ID)
    }

    pub fn tag_id(&self, tag: &str) -> Option<usize> {
        self.tags.get(tag)
    }

    pub fn tag_name(&self, id: usize) -> &str {
        self.tags.name(id).expect("tag id out of range")
    }

    /// Maps a sentence to ids. Unknown words and characters map to id 0.
    pub fn encode(&self, sentence: &Sentence) -> Result<EncodedSentence> {
        let forms = sentence.forms();
        let (chars, spans) = char_stream_build(&forms)?;
        // A malformed gold bundle cannot match any training tag.
        let tags = sentence
            .tokens
            .iter()
            .map(|t| self.task.tag_of(t).ok().and_then(|tag| self.tag_id(&tag)))
            .collect();
        Ok(EncodedSentence {
            word_ids: forms.iter().map(|f| self.word_id(f)).collect(),
            char_ids: chars.iter().map(|&c| self.char_id(c)).collect(),
            spans,
            tags,
        })
    }

    pub fn encode_all(&self, sentences: &[Sentence]) -> Result<Vec<EncodedSentence>> {
        sentences.iter().map(|s| self.encode(s)).collect()
    }
}
