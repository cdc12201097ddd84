//! Word-level tokenizer over the fixed context vocabulary.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};

/// One row of `text.token_embedding` per entry.
pub const VOCABULARY: [&str; 16] = [
    "<pad>",
    "<sep>",
    "a",
    "an",
    "the",
    "of",
    "real",
    "fake",
    "image",
    "photo",
    "picture",
    "authentic",
    "synthetic",
    "generated",
    ".",
    ",",
];

/// Lowercases `text`, splits on whitespace and detaches `.`/`,` into their
/// own tokens.
pub fn tokenize(text: &str) -> Result<Vec<usize>> {
    let mut ids = Vec::new();
    for raw in text.split_whitespace() {
        let word = raw.to_lowercase();
        let stem = word.trim_end_matches(['.', ',']);
        let tail = &word[stem.len()..];
        if !stem.is_empty() {
            ids.push(lookup(stem)?);
        }
        for ch in tail.chars() {
            ids.push(lookup(ch.encode_utf8(&mut [0; 4]))?);
        }
    }
    if ids.is_empty() {
        return Err(Error::EmptyInput("context text"));
    }
    Ok(ids)
}

fn lookup(word: &str) -> Result<usize> {
    VOCABULARY
        .iter()
        .position(|&v| v == word)
        .ok_or_else(|| Error::Vocabulary(word.to_string()))
}

/// Frozen context rows for `text`: one token-embedding row per word.
pub fn tokenize_context(text: &str, params: &ParamStore) -> Result<Tensor> {
    let ids = tokenize(text)?;
    let table = params
        .get("text.token_embedding")
        .ok_or_else(|| Error::UnknownParam("text.token_embedding".into()))?;
    let width = table.shape()[1];
    let data = ids.iter().flat_map(|&i| table.row(i).iter().copied()).collect();
    Tensor::new(&[ids.len(), width], data)
}
