//! Pluggable tokenizers used for token accounting, first-token validation and
//! filler truncation.
//!
//! Three implementations ship with the crate:
//! * [`WhitespaceTokenizer`]: maximal non-whitespace runs, used for fixtures.
//! * [`ByteTokenizer`]: one token per UTF-8 byte.
//! * [`BpeTokenizer`]: merge-rank byte-pair encoding loaded from a vocabulary file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("unknown tokenizer id `{0}` (expected whitespace, byte or bpe:<path>)")]
    UnknownId(String),
    #[error("cannot read vocabulary file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed vocabulary file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

/// A token with its byte span in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

pub trait Tokenizer: Send + Sync {
    /// Identifier used in manifests, e.g. `whitespace` or `bpe:/path/vocab.json`.
    fn id(&self) -> String;

    fn tokenize(&self, text: &str) -> Vec<Token>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }

    /// Text of the first token, if any.
    fn first_token<'a>(&self, text: &'a str) -> Option<&'a str> {
        self.tokenize(text)
            .first()
            .map(|token| &text[token.start..token.end])
    }

    /// Longest prefix of `text` holding at most `max_tokens` whole tokens.
    /// Returns the prefix and the number of tokens it holds.
    fn truncate<'a>(&self, text: &'a str, max_tokens: usize) -> (&'a str, usize) {
        let tokens = self.tokenize(text);
        if tokens.len() <= max_tokens {
            return (text, tokens.len());
        }
        if max_tokens == 0 {
            return ("", 0);
        }
        let mut end = tokens[max_tokens - 1].end;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        (&text[..end], max_tokens)
    }
}

fn fnv1a(text: &str) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for byte in text.bytes() {
        hash ^= u32::from(byte);
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn id(&self) -> String {
        "whitespace".to_string()
    }

    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut tokens = Vec::new();
        let mut start = None;
        for (pos, ch) in text.char_indices() {
            match (ch.is_whitespace(), start) {
                (true, Some(s)) => {
                    tokens.push(Token {
                        id: fnv1a(&text[s..pos]),
                        start: s,
                        end: pos,
                    });
                    start = None;
                }
                (false, None) => start = Some(pos),
                _ => {}
            }
        }
        if let Some(s) = start {
            tokens.push(Token {
                id: fnv1a(&text[s..]),
                start: s,
                end: text.len(),
            });
        }
        tokens
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl Tokenizer for ByteTokenizer {
    fn id(&self) -> String {
        "byte".to_string()
    }

    fn tokenize(&self, text: &str) -> Vec<Token> {
        text.bytes()
            .enumerate()
            .map(|(i, b)| Token {
                id: u32::from(b),
                start: i,
                end: i + 1,
            })
            .collect()
    }

    fn count(&self, text: &str) -> usize {
        text.len()
    }
}

/// On-disk vocabulary: `{"vocab": {"tok": id, ...}, "merges": ["a b", ...]}`.
/// Spaces and newlines inside tokens are written as `Ġ` and `Ċ`.
#[derive(Debug, Deserialize)]
struct VocabFile {
    vocab: HashMap<String, u32>,
    #[serde(default)]
    merges: Vec<String>,
}

/// Byte-pair tokenizer over characters.
///
/// Pre-tokens are an optional single leading space followed by a run of
/// letters, a run of digits, or a run of other symbols; every other
/// whitespace character stands alone. Merges never cross pre-token
/// boundaries, so token counts are additive across whitespace separators.
#[derive(Debug, Clone)]
pub struct BpeTokenizer {
    source: PathBuf,
    vocab: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    unknown_id: u32,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Letter,
    Digit,
    Symbol,
    Space,
}

fn classify(ch: char) -> CharClass {
    if ch.is_alphabetic() {
        CharClass::Letter
    } else if ch.is_numeric() {
        CharClass::Digit
    } else if ch.is_whitespace() {
        CharClass::Space
    } else {
        CharClass::Symbol
    }
}

fn pretokenize(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, ch) = chars[i];
        let mut j = i;
        let class = if ch == ' ' && i + 1 < chars.len() && classify(chars[i + 1].1) != CharClass::Space
        {
            j += 1;
            classify(chars[j].1)
        } else {
            classify(ch)
        };
        if class == CharClass::Space {
            j = i + 1;
        } else {
            while j < chars.len() && classify(chars[j].1) == class {
                j += 1;
            }
        }
        let end = chars.get(j).map_or(text.len(), |&(pos, _)| pos);
        spans.push((start, end));
        i = j;
    }
    spans
}

impl BpeTokenizer {
    pub fn from_file(path: &Path) -> Result<Self, TokenizerError> {
        let raw = std::fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: VocabFile =
            serde_json::from_str(&raw).map_err(|e| TokenizerError::Malformed {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let mut ranks = HashMap::new();
        for (rank, line) in file.merges.iter().enumerate() {
            let mut parts = line.splitn(2, ' ');
            match (parts.next(), parts.next()) {
                (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                    ranks.insert((a.to_string(), b.to_string()), rank);
                }
                _ => {
                    return Err(TokenizerError::Malformed {
                        path: path.to_path_buf(),
                        message: format!("merge {rank} is not `left right`: {line:?}"),
                    })
                }
            }
        }
        let unknown_id = file.vocab.values().copied().max().map_or(0, |m| m + 1);
        Ok(Self {
            source: path.to_path_buf(),
            vocab: file.vocab,
            ranks,
            unknown_id,
        })
    }

    fn encode_piece(&self, piece: &str, offset: usize, out: &mut Vec<Token>) {
        let visible = |s: &str| s.replace(' ', "Ġ").replace('\n', "Ċ");
        let mut symbols: Vec<(usize, usize)> = piece
            .char_indices()
            .map(|(i, c)| (i, i + c.len_utf8()))
            .collect();
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    let key = (
                        visible(&piece[w[0].0..w[0].1]),
                        visible(&piece[w[1].0..w[1].1]),
                    );
                    self.ranks.get(&key).map(|&rank| (rank, i))
                })
                .min();
            let Some((_, i)) = best else { break };
            symbols[i].1 = symbols[i + 1].1;
            symbols.remove(i + 1);
        }
        for (start, end) in symbols {
            let id = self
                .vocab
                .get(&visible(&piece[start..end]))
                .copied()
                .unwrap_or(self.unknown_id);
            out.push(Token {
                id,
                start: offset + start,
                end: offset + end,
            });
        }
    }
}

impl Tokenizer for BpeTokenizer {
    fn id(&self) -> String {
        format!("bpe:{}", self.source.display())
    }

    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        for (start, end) in pretokenize(text) {
            self.encode_piece(&text[start..end], start, &mut out);
        }
        out
    }
}

/// Resolve a tokenizer from its identifier.
pub fn resolve(id: &str) -> Result<Arc<dyn Tokenizer>, TokenizerError> {
    match id {
        "whitespace" => Ok(Arc::new(WhitespaceTokenizer)),
        "byte" => Ok(Arc::new(ByteTokenizer)),
        other => match other.strip_prefix("bpe:") {
            Some(path) => Ok(Arc::new(BpeTokenizer::from_file(Path::new(path))?)),
            None => Err(TokenizerError::UnknownId(other.to_string())),
        },
    }
}
