//! Token-level masks over a program's token stream.
//!
//! A token is selected when its character span intersects the span of any
//! diff line. Line spans include the terminating newline, and offsets count
//! Unicode scalar values rather than bytes.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::model::{CodeVersion, DiffLines, TokenMask};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// A tokenizer that reports character offsets for each token.
pub trait TokenizerBackend: Send + Sync {
    /// Backend name and version, recorded in every mask it produces.
    fn id(&self) -> &str;

    fn tokenize_with_offsets(&self, source: &str) -> Vec<Token>;

    /// Whether the backend may be called from several threads at once.
    fn concurrent_safe(&self) -> bool {
        true
    }

    fn count_tokens(&self, source: &str) -> usize {
        self.tokenize_with_offsets(source).len()
    }
}

/// Maximal runs of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl TokenizerBackend for WhitespaceTokenizer {
    fn id(&self) -> &str {
        "whitespace-v1"
    }

    fn tokenize_with_offsets(&self, source: &str) -> Vec<Token> {
        let mut out = Vec::new();
        let mut current: Option<(usize, String)> = None;
        let mut pos = 0;
        for ch in source.chars() {
            if ch.is_whitespace() {
                if let Some((start, text)) = current.take() {
                    out.push(Token {
                        text,
                        start,
                        end: pos,
                    });
                }
            } else {
                current
                    .get_or_insert_with(|| (pos, String::new()))
                    .1
                    .push(ch);
            }
            pos += 1;
        }
        if let Some((start, text)) = current {
            out.push(Token {
                text,
                start,
                end: pos,
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Word,
    Space,
    Newline,
    Punct,
}

fn class_of(ch: char) -> CharClass {
    if ch == '\n' {
        CharClass::Newline
    } else if ch.is_whitespace() {
        CharClass::Space
    } else if ch.is_alphanumeric() || ch == '_' {
        CharClass::Word
    } else {
        CharClass::Punct
    }
}

/// Code-oriented lexer: identifier/number runs, single punctuation marks,
/// horizontal whitespace runs, and each newline as its own token.
///
/// Every character belongs to exactly one token, so newline tokens exist and
/// are masked together with the line they terminate.
#[derive(Debug, Clone, Copy, Default)]
pub struct CodeLexTokenizer;

impl TokenizerBackend for CodeLexTokenizer {
    fn id(&self) -> &str {
        "code-lex-v1"
    }

    fn tokenize_with_offsets(&self, source: &str) -> Vec<Token> {
        let mut out: Vec<Token> = Vec::new();
        let mut prev: Option<CharClass> = None;
        for (pos, ch) in source.chars().enumerate() {
            let class = class_of(ch);
            let extend = prev == Some(class) && matches!(class, CharClass::Word | CharClass::Space);
            match out.last_mut() {
                Some(last) if extend => {
                    last.text.push(ch);
                    last.end = pos + 1;
                }
                _ => out.push(Token {
                    text: ch.to_string(),
                    start: pos,
                    end: pos + 1,
                }),
            }
            prev = Some(class);
        }
        out
    }
}

/// Tokenizers addressable by id.
#[derive(Clone)]
pub struct TokenizerRegistry {
    backends: BTreeMap<String, Arc<dyn TokenizerBackend>>,
}

impl Default for TokenizerRegistry {
    fn default() -> Self {
        let mut r = Self {
            backends: BTreeMap::new(),
        };
        r.register(Arc::new(WhitespaceTokenizer));
        r.register(Arc::new(CodeLexTokenizer));
        r
    }
}

impl TokenizerRegistry {
    pub fn register(&mut self, backend: Arc<dyn TokenizerBackend>) {
        self.backends.insert(backend.id().to_owned(), backend);
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn TokenizerBackend>, MaskError> {
        self.backends
            .get(id)
            .cloned()
            .ok_or_else(|| MaskError::UnknownTokenizer {
                id: id.to_owned(),
                known: self.backends.keys().cloned().collect::<Vec<_>>().join(", "),
            })
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("tokenizer {backend} produced invalid offsets: {detail}")]
    BadOffsets { backend: String, detail: String },
    #[error("diff index {index} out of range for a {lines}-line program")]
    BadDiffIndex { index: usize, lines: usize },
    #[error("unknown tokenizer {id:?} (known: {known})")]
    UnknownTokenizer { id: String, known: String },
}

/// Character span of every line, newline included.
pub fn line_char_spans(source: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    let mut pos = 0;
    for ch in source.chars() {
        pos += 1;
        if ch == '\n' {
            spans.push((start, pos));
            start = pos;
        }
    }
    if pos > start {
        spans.push((start, pos));
    }
    spans
}

fn checked_tokens(
    tokenizer: &dyn TokenizerBackend,
    source: &str,
) -> Result<Vec<(usize, usize)>, MaskError> {
    let len = source.chars().count();
    let bad = |detail: String| MaskError::BadOffsets {
        backend: tokenizer.id().to_owned(),
        detail,
    };
    let tokens = tokenizer.tokenize_with_offsets(source);
    let mut prev_end = 0;
    let mut spans = Vec::with_capacity(tokens.len());
    for (i, t) in tokens.iter().enumerate() {
        if t.start >= t.end || t.end > len {
            return Err(bad(format!(
                "token {i} span ({}, {}) outside 0..{len} or empty",
                t.start, t.end
            )));
        }
        if t.start < prev_end {
            return Err(bad(format!("token {i} overlaps its predecessor")));
        }
        prev_end = t.end;
        spans.push((t.start, t.end));
    }
    Ok(spans)
}

fn mask_for(
    version: &CodeVersion,
    diff: &DiffLines,
    tokenizer: &dyn TokenizerBackend,
) -> Result<TokenMask, MaskError> {
    let lines = line_char_spans(&version.source);
    let mut selected: Vec<(usize, usize)> = Vec::with_capacity(diff.len());
    for index in diff.indices() {
        let span = lines.get(index).ok_or(MaskError::BadDiffIndex {
            index,
            lines: lines.len(),
        })?;
        selected.push(*span);
    }
    selected.sort_unstable();

    let token_spans = checked_tokens(tokenizer, &version.source)?;
    // both lists are sorted by start, so one forward sweep suffices
    let mut cursor = 0;
    let mask = token_spans
        .iter()
        .map(|&(ts, te)| {
            while cursor < selected.len() && selected[cursor].1 <= ts {
                cursor += 1;
            }
            selected[cursor..]
                .iter()
                .take_while(|(ls, _)| *ls < te)
                .any(|&(ls, le)| ls < te && ts < le)
        })
        .collect();

    Ok(TokenMask {
        tokenizer_id: tokenizer.id().to_owned(),
        mask,
        token_spans,
    })
}

/// Marks the rejected-side tokens that touch a `D-` line.
pub fn build_mask(
    rejected: &CodeVersion,
    diff_minus: &DiffLines,
    tokenizer: &dyn TokenizerBackend,
) -> Result<TokenMask, MaskError> {
    mask_for(rejected, diff_minus, tokenizer)
}

/// Marks the chosen-side tokens that touch a `D+` line.
pub fn build_symmetric_mask(
    chosen: &CodeVersion,
    diff_plus: &DiffLines,
    tokenizer: &dyn TokenizerBackend,
) -> Result<TokenMask, MaskError> {
    mask_for(chosen, diff_plus, tokenizer)
}
