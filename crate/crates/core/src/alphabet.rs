//! Ordered symbol table shared by the corpus, the detectors and the
//! character-level attacks.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Index of a symbol in an [`Alphabet`].
pub type SymbolId = u16;

/// Ordered symbol table: printable ASCII plus any extension codepoints
/// contributed by a character embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, SymbolId>,
}

impl Alphabet {
    /// Builds an alphabet from an ordered, duplicate-free symbol list.
    pub fn new(symbols: Vec<char>) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            if index.insert(c, i as SymbolId).is_some() {
                return Err(Error::validation(format!("duplicate symbol {c:?}")));
            }
        }
        if symbols.len() > SymbolId::MAX as usize {
            return Err(Error::validation("alphabet too large for u16 ids"));
        }
        Ok(Alphabet { symbols, index })
    }

    /// Printable ASCII (0x20..=0x7E) plus the given extension codepoints,
    /// extensions sorted and deduplicated after the ASCII block.
    pub fn ascii_with_extensions(extensions: impl IntoIterator<Item = char>) -> Self {
        let mut symbols: Vec<char> = (0x20u8..=0x7E).map(|b| b as char).collect();
        let mut extra: Vec<char> = extensions
            .into_iter()
            .filter(|c| !c.is_ascii() || (*c as u32) < 0x20 || (*c as u32) > 0x7E)
            .collect();
        extra.sort_unstable();
        extra.dedup();
        symbols.extend(extra);
        Alphabet::new(symbols).expect("ascii plus deduped extensions cannot collide")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn char_of(&self, id: SymbolId) -> Option<char> {
        self.symbols.get(id as usize).copied()
    }

    pub fn id_of(&self, c: char) -> Result<SymbolId> {
        self.index.get(&c).copied().ok_or(Error::UnknownSymbol(c))
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    /// Encodes a string, failing on the first unknown symbol.
    pub fn encode(&self, s: &str) -> Result<Vec<SymbolId>> {
        s.chars().map(|c| self.id_of(c)).collect()
    }

    pub fn decode(&self, ids: &[SymbolId]) -> Result<String> {
        ids.iter()
            .map(|&i| {
                self.char_of(i)
                    .ok_or_else(|| Error::validation(format!("symbol id {i} out of range")))
            })
            .collect()
    }

    /// Rebuilds the char index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .symbols
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as SymbolId))
            .collect();
    }
}
