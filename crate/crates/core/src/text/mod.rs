//! Word-level tokenizer, vocabulary and zero-shot prompt sets.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::{Error, Result};

mod prompts;

pub use prompts::{make_prompt_set, PromptSet, PROMPTS_PER_CLASS, PROMPT_TEMPLATES};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const START: TokenId = 1;
pub const END: TokenId = 2;
pub const UNK: TokenId = 3;
pub const N_SPECIAL: usize = 4;

const SPECIAL_NAMES: [&str; N_SPECIAL] = ["[PAD]", "[START]", "[END]", "[UNK]"];

/// Tokens that attach to the word before them when detokenizing.
const GLUE_LEFT: &[&str] = &[".", ",", ";", ":", "!", "?", ")", "'", "-"];
/// Tokens that attach to the word after them.
const GLUE_RIGHT: &[&str] = &["(", "'", "-"];

/// Splits text into lowercase word, number and punctuation tokens.
///
/// A number is a run of digits that may contain `.` between digits and may
/// start with `-` when the minus begins a word. Letters directly following
/// digits stay in the same token (`80th`).
pub fn split_words(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let word_start = i == 0 || chars[i - 1].is_whitespace();
        let negative = c == '-' && word_start && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit());
        if c.is_alphanumeric() || negative {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let decimal = d == '.'
                    && chars[i - 1].is_ascii_digit()
                    && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
                if d.is_alphanumeric() || decimal {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(chars[start..i].iter().collect());
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
    out
}

/// Joins tokens back into text using the spacing rules of the caption language.
pub fn join_words<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for t in tokens {
        let t = t.as_ref();
        if !glue_next && !GLUE_LEFT.contains(&t) {
            out.push(' ');
        }
        out.push_str(t);
        glue_next = GLUE_RIGHT.contains(&t);
    }
    out
}

/// Lowercase canonical form of a sentence, as reproduced by a tokenize/detokenize round trip.
pub fn normalize_text(text: &str) -> String {
    join_words(&split_words(text))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, TokenId>,
    tokens: Vec<String>,
}

impl Vocabulary {
    fn from_tokens(words: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        let mut ids = HashMap::with_capacity(words.len());
        for w in words {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::format(format!("invalid vocabulary token {w:?}")));
            }
            if SPECIAL_NAMES.contains(&w.as_str()) {
                return Err(Error::format(format!("vocabulary lists reserved token {w}")));
            }
            let id = tokens.len() as TokenId;
            if ids.insert(w.clone(), id).is_some() {
                return Err(Error::format(format!("duplicate vocabulary token {w:?}")));
            }
            tokens.push(w);
        }
        Ok(Self { ids, tokens })
    }

    /// Builds a vocabulary from every token occurring at least `min_freq` times,
    /// ordered by descending frequency then token.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_freq: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for w in split_words(line.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, n)| *n >= min_freq.max(1)).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(words.into_iter().map(|(w, _)| w).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Token ids of `text` without any framing.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        split_words(text).iter().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    /// Text of `ids`, skipping PAD/START and stopping at END.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut words = Vec::new();
        for &id in ids {
            match id {
                PAD | START => {}
                END => break,
                _ => words.push(self.token(id).unwrap_or(SPECIAL_NAMES[UNK as usize])),
            }
        }
        join_words(&words)
    }

    /// One token per line, specials omitted; line `k` holds id `k + 4`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens[N_SPECIAL..] {
            let _ = writeln!(s, "{t}");
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let words = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
        Self::from_tokens(words)
    }
}

/// Decoder input and target for one caption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderPair {
    /// `[START, t1, .., tn]`
    pub input: Vec<TokenId>,
    /// `[t1, .., tn, END]`
    pub target: Vec<TokenId>,
}

/// Frames content ids for teacher forcing, truncating so that `input` has at most `max_len` ids.
pub fn frame_for_decoder(ids: &[TokenId], max_len: usize) -> Result<DecoderPair> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let body = &ids[..ids.len().min(max_len - 1)];
    let mut input = Vec::with_capacity(body.len() + 1);
    input.push(START);
    input.extend_from_slice(body);
    let mut target = body.to_vec();
    target.push(END);
    Ok(DecoderPair { input, target })
}

/// `[START, t1, .., tn, END]` truncated to `max_len` ids, END kept.
pub fn frame_for_encoder(ids: &[TokenId], max_len: usize) -> Result<Vec<TokenId>> {
    if max_len < 2 {
        return Err(Error::invalid("text encoder input needs room for START and END"));
    }
    let body = &ids[..ids.len().min(max_len - 2)];
    let mut out = Vec::with_capacity(body.len() + 2);
    out.push(START);
    out.extend_from_slice(body);
    out.push(END);
    Ok(out)
}

/// Right-pads with PAD up to `len`.
pub fn pad_to(ids: &[TokenId], len: usize) -> Result<Vec<TokenId>> {
    if ids.len() > len {
        return Err(Error::invalid(format!("sequence of {} ids exceeds length {len}", ids.len())));
    }
    let mut out = ids.to_vec();
    out.resize(len, PAD);
    Ok(out)
}
