//! Vocabulary and the two tokenizer modes.
//!
//! `WordPiece` is greedy longest-match subword segmentation with `##`
//! continuation pieces (the scheme pretrained BERT vocabularies use).
//! `ClosedWhitespace` is exact lookup of whitespace-separated words, used by
//! toy models whose vocabulary is closed over their corpus.

use std::collections::HashMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Special tokens in their required file order; line index is the id.
pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

const CONTINUATION: &str = "##";
const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerMode {
    WordPiece,
    ClosedWhitespace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        for (i, expected) in SPECIAL_TOKENS.iter().enumerate() {
            match tokens.get(i) {
                Some(t) if t == expected => {}
                Some(t) => {
                    return Err(Error::Vocabulary(format!(
                        "line {i} must be {expected}, found `{t}`"
                    )))
                }
                None => return Err(Error::Vocabulary(format!("missing special token {expected}"))),
            }
        }
        if tokens.len() <= NUM_SPECIAL {
            return Err(Error::Vocabulary("vocabulary has no words".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::Vocabulary(format!("empty token at line {i}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Special tokens followed by `words` in order.
    pub fn with_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(Into::into))
            .collect();
        Self::new(tokens)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    /// Wordpiece mode when any continuation piece is present.
    pub fn infer_mode(&self) -> TokenizerMode {
        if self.tokens.iter().any(|t| t.starts_with(CONTINUATION) && t.len() > CONTINUATION.len()) {
            TokenizerMode::WordPiece
        } else {
            TokenizerMode::ClosedWhitespace
        }
    }
}

/// Token ids with surface forms. `word_of[i]` is the index of the source
/// word a piece came from (`None` for framing tokens); `continuation[i]`
/// marks `##` pieces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub pieces: Vec<String>,
    pub word_of: Vec<Option<usize>>,
    pub continuation: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Piece range covering word `w`.
    pub fn word_span(&self, w: usize) -> Option<Range<usize>> {
        let start = self.word_of.iter().position(|x| *x == Some(w))?;
        let len = self.word_of[start..].iter().take_while(|x| **x == Some(w)).count();
        Some(start..start + len)
    }

    /// Joins pieces back into words (framing tokens dropped).
    pub fn detokenize(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.pieces.iter().enumerate() {
            if self.word_of[i].is_none() {
                continue;
            }
            if self.continuation[i] {
                out.push_str(p.strip_prefix(CONTINUATION).unwrap_or(p));
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(p);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    mode: TokenizerMode,
}

impl Tokenizer {
    pub fn new(mode: TokenizerMode) -> Self {
        Self { mode }
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    /// Tokenize free text with `[CLS]`/`[SEP]` framing.
    pub fn tokenize(&self, vocab: &Vocabulary, text: &str) -> Result<TokenSequence> {
        if text.trim().is_empty() {
            return Err(Error::Vocabulary("cannot tokenize empty text".into()));
        }
        let words: Vec<String> = match self.mode {
            TokenizerMode::WordPiece => basic_split(text),
            TokenizerMode::ClosedWhitespace => text.split_whitespace().map(str::to_string).collect(),
        };
        self.tokenize_words(vocab, &words)
    }

    /// Tokenize pre-split words with framing; keeps the word → piece mapping.
    pub fn tokenize_words<S: AsRef<str>>(&self, vocab: &Vocabulary, words: &[S]) -> Result<TokenSequence> {
        if words.is_empty() {
            return Err(Error::Vocabulary("cannot tokenize empty text".into()));
        }
        let mut seq = TokenSequence {
            ids: vec![CLS_ID],
            pieces: vec![CLS.to_string()],
            word_of: vec![None],
            continuation: vec![false],
        };
        for (w, word) in words.iter().enumerate() {
            let word = word.as_ref();
            let pieces = match self.mode {
                TokenizerMode::ClosedWhitespace => match vocab.id(word) {
                    Some(id) if !Vocabulary::is_special(id) || id == MASK_ID => vec![(id, word.to_string())],
                    _ => return Err(Error::Vocabulary(format!("word `{word}` is not in the vocabulary"))),
                },
                TokenizerMode::WordPiece => {
                    if word == MASK {
                        vec![(MASK_ID, MASK.to_string())]
                    } else {
                        wordpiece(vocab, word)
                    }
                }
            };
            for (k, (id, piece)) in pieces.into_iter().enumerate() {
                seq.ids.push(id);
                seq.continuation.push(k > 0);
                seq.pieces.push(piece);
                seq.word_of.push(Some(w));
            }
        }
        seq.ids.push(SEP_ID);
        seq.pieces.push(SEP.to_string());
        seq.word_of.push(None);
        seq.continuation.push(false);
        Ok(seq)
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

/// Whitespace split followed by splitting off each punctuation character.
fn basic_split(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut cur = String::new();
        for c in chunk.chars() {
            if c.is_control() {
                continue;
            }
            if is_punctuation(c) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Greedy longest-match segmentation of one word. If any position has no
/// matching piece the whole word becomes `[UNK]`.
pub fn wordpiece(vocab: &Vocabulary, word: &str) -> Vec<(u32, String)> {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() > MAX_WORD_CHARS {
        return vec![(UNK_ID, UNK.to_string())];
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            let mut candidate: String = chars[start..end].iter().collect();
            if start > 0 {
                candidate.insert_str(0, CONTINUATION);
            }
            if let Some(id) = vocab.id(&candidate) {
                if !Vocabulary::is_special(id) {
                    found = Some((id, candidate));
                    break;
                }
            }
            end -= 1;
        }
        match found {
            Some(p) => {
                pieces.push(p);
                start = end;
            }
            None => return vec![(UNK_ID, UNK.to_string())],
        }
    }
    pieces
}
