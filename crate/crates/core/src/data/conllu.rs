//! Reading and writing CoNLL-U.
//!
//! Every line of a sentence block is kept verbatim so that a parsed file
//! serialises back byte for byte, and tagging only touches one column.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::morph_bundle_tag;

pub const COLUMNS: usize = 10;

/// Which column is the tagging target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Upos,
    Xpos,
    Feats,
}

impl Task {
    /// Zero-based column index (UPOS 4, XPOS 5, FEATS 6 in 1-based terms).
    pub fn column(self) -> usize {
        match self {
            Task::Upos => 3,
            Task::Xpos => 4,
            Task::Feats => 5,
        }
    }

    /// The tag of `token` for this task. FEATS bundles are canonicalised.
    pub fn tag_of(self, token: &Token) -> Result<String> {
        let raw = &token.columns[self.column()];
        match self {
            Task::Feats => morph_bundle_tag(raw),
            _ => Ok(raw.clone()),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Upos => "upos",
            Task::Xpos => "xpos",
            Task::Feats => "feats",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upos" => Ok(Task::Upos),
            "xpos" => Ok(Task::Xpos),
            "feats" => Ok(Task::Feats),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?} (expected xpos, feats or upos)"))),
        }
    }
}

/// A syntactic word line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub columns: Vec<String>,
}

impl Token {
    pub fn form(&self) -> &str {
        &self.columns[1]
    }

    pub fn upos(&self) -> &str {
        &self.columns[3]
    }

    pub fn xpos(&self) -> &str {
        &self.columns[4]
    }

    pub fn feats(&self) -> &str {
        &self.columns[5]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Line {
    Comment(String),
    /// Multiword token range such as `3-4`.
    Range(String),
    /// Empty node such as `5.1`.
    EmptyNode(String),
    /// Index into [`Sentence::tokens`].
    Word(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sentence {
    pub lines: Vec<Line>,
    pub tokens: Vec<Token>,
}

impl Sentence {
    /// Builds a sentence from `(form, tag)` pairs with the tag in `task`'s column.
    pub fn from_tagged(pairs: &[(&str, &str)], task: Task) -> Self {
        let mut s = Sentence::default();
        for (i, (form, tag)) in pairs.iter().enumerate() {
            let mut columns = vec!["_".to_string(); COLUMNS];
            columns[0] = (i + 1).to_string();
            columns[1] = form.to_string();
            columns[task.column()] = tag.to_string();
            s.lines.push(Line::Word(s.tokens.len()));
            s.tokens.push(Token { columns });
        }
        s
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(Token::form).collect()
    }

    pub fn tags(&self, task: Task) -> Result<Vec<String>> {
        self.tokens.iter().map(|t| task.tag_of(t)).collect()
    }

    /// Replaces the `task` column of every token.
    pub fn set_tags(&mut self, task: Task, tags: &[String]) -> Result<()> {
        if tags.len() != self.tokens.len() {
            return Err(Error::Alignment(format!(
                "{} tags for a sentence of {} tokens",
                tags.len(),
                self.tokens.len()
            )));
        }
        for (tok, tag) in self.tokens.iter_mut().zip(tags) {
            tok.columns[task.column()] = tag.clone();
        }
        Ok(())
    }

    fn write_to(&self, out: &mut String) {
        for line in &self.lines {
            match line {
                Line::Comment(s) | Line::Range(s) | Line::EmptyNode(s) => out.push_str(s),
                Line::Word(i) => out.push_str(&self.tokens[*i].columns.join("\t")),
            }
            out.push('\n');
        }
        out.push('\n');
    }
}

/// Parses CoNLL-U text. Range and empty-node lines are kept for output
/// but do not become tokens.
pub fn parse_conllu(text: &str) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut current = Sentence::default();
    let mut start_line = 1;

    let mut finish = |current: &mut Sentence, start_line: usize| -> Result<()> {
        if current.lines.is_empty() {
            return Ok(());
        }
        if current.tokens.is_empty() {
            return Err(Error::Parse {
                line: start_line,
                message: "sentence has no word lines".into(),
            });
        }
        sentences.push(std::mem::take(current));
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            finish(&mut current, start_line)?;
            start_line = lineno + 1;
            continue;
        }
        if line.starts_with('#') {
            current.lines.push(Line::Comment(line.to_string()));
            continue;
        }
        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() != COLUMNS {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {COLUMNS} tab-separated columns, found {}", columns.len()),
            });
        }
        let id = columns[0];
        if id.contains('-') {
            current.lines.push(Line::Range(line.to_string()));
        } else if id.contains('.') {
            current.lines.push(Line::EmptyNode(line.to_string()));
        } else {
            if id.parse::<usize>().is_err() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("invalid token id {id:?}"),
                });
            }
            if columns[1].is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "empty form".into(),
                });
            }
            current.lines.push(Line::Word(current.tokens.len()));
            current.tokens.push(Token {
                columns: columns.iter().map(|c| c.to_string()).collect(),
            });
        }
    }
    finish(&mut current, start_line)?;
    Ok(sentences)
}

pub fn write_conllu(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        s.write_to(&mut out);
    }
    out
}

pub fn read_conllu(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conllu(&text)
}
