//! Byte-level tokenizer with three reserved specials.
//!
//! Ids `0..3` are `PAD`, `BOS` and `EOS`; byte `b` maps to `b + 3`. Ids at
//! or above [`BYTE_VOCAB`] exist only when a model is configured with a
//! larger vocabulary and are never produced here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const N_SPECIAL: TokenId = 3;
/// Smallest vocabulary that covers every byte plus the specials.
pub const BYTE_VOCAB: usize = 256 + N_SPECIAL as usize;

/// Token id for a raw byte.
#[inline]
pub fn byte_token(b: u8) -> TokenId {
    b as TokenId + N_SPECIAL
}

/// Inverse of [`byte_token`]; `None` for specials and out-of-range ids.
#[inline]
pub fn token_byte(id: TokenId) -> Option<u8> {
    if (N_SPECIAL..N_SPECIAL + 256).contains(&id) {
        Some((id - N_SPECIAL) as u8)
    } else {
        None
    }
}

#[inline]
pub fn is_special(id: TokenId) -> bool {
    id < N_SPECIAL
}

/// BOS-prefixed token ids for one input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn from_ids(ids: Vec<TokenId>) -> Self {
        TokenSequence(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.0
    }

    /// Bytes of all non-special tokens, in order.
    pub fn to_bytes(&self) -> Vec<u8> {
        detokenize(&self.0)
    }
}

/// Bytes of all non-special ids in `ids`.
pub fn detokenize(ids: &[TokenId]) -> Vec<u8> {
    ids.iter().filter_map(|&id| token_byte(id)).collect()
}

/// Byte-level tokenizer bound to a context length.
#[derive(Debug, Clone, Copy)]
pub struct Tokenizer {
    max_seq_len: usize,
}

impl Tokenizer {
    pub fn new(max_seq_len: usize) -> Self {
        Tokenizer { max_seq_len }
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    /// Longest text (in bytes) accepted by [`Tokenizer::tokenize`]; two slots
    /// are kept for BOS and an eventual EOS.
    pub fn max_text_len(&self) -> usize {
        self.max_seq_len.saturating_sub(2)
    }

    /// `[BOS, b0 + 3, b1 + 3, ...]`.
    pub fn tokenize(&self, text: &[u8]) -> Result<TokenSequence> {
        if text.len() > self.max_text_len() {
            return Err(Error::Length {
                len: text.len(),
                limit: self.max_text_len(),
            });
        }
        let mut ids = Vec::with_capacity(text.len() + 1);
        ids.push(BOS);
        ids.extend(text.iter().map(|&b| byte_token(b)));
        Ok(TokenSequence(ids))
    }

    /// Byte tokens without BOS, used for scored continuations.
    pub fn encode_continuation(&self, text: &[u8]) -> Vec<TokenId> {
        text.iter().map(|&b| byte_token(b)).collect()
    }

    pub fn detokenize(&self, seq: &TokenSequence) -> Vec<u8> {
        seq.to_bytes()
    }
}
