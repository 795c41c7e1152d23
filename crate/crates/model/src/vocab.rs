//! Character-level symbol table with reserved structural tokens.

use std::collections::HashMap;

pub const ENTITY: &str = "<entity>";
pub const TEXT: &str = "<text>";
pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Special tokens, in id order.
pub const SPECIALS: [&str; 6] = [ENTITY, TEXT, PAD, BOS, EOS, UNK];

pub const ENTITY_ID: u32 = 0;
pub const TEXT_ID: u32 = 1;
pub const PAD_ID: u32 = 2;
pub const BOS_ID: u32 = 3;
pub const EOS_ID: u32 = 4;
pub const UNK_ID: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Specials first, then every character in order of first occurrence.
    /// Sentinel substrings inside `texts` are treated as single symbols.
    pub fn build<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut symbols: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        for text in texts {
            for piece in split_symbols(text) {
                if let Piece::Char(c) = piece {
                    let key = c.to_string();
                    if !index.contains_key(&key) {
                        index.insert(key.clone(), symbols.len() as u32);
                        symbols.push(key);
                    }
                }
            }
        }
        Self { symbols, index }
    }

    /// Rebuilds from a persisted symbol list; the list must start with the
    /// specials and contain no duplicates.
    pub fn from_symbols(symbols: Vec<String>) -> Option<Self> {
        if symbols.len() < SPECIALS.len()
            || symbols.iter().zip(SPECIALS.iter()).any(|(a, b)| a != b)
        {
            return None;
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i as u32).is_some() {
                return None;
            }
        }
        Some(Self { symbols, index })
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    /// Encodes a string; sentinels become single ids, unseen characters map
    /// to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut buf = [0u8; 4];
        split_symbols(text)
            .map(|piece| match piece {
                Piece::Entity => ENTITY_ID,
                Piece::Text => TEXT_ID,
                Piece::Char(c) => self
                    .index
                    .get(c.encode_utf8(&mut buf) as &str)
                    .copied()
                    .unwrap_or(UNK_ID),
            })
            .collect()
    }

    /// Decodes ids up to (excluding) the first `<eos>`; `<pad>`/`<bos>` are
    /// skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                EOS_ID => break,
                PAD_ID | BOS_ID => {}
                _ => {
                    if let Some(s) = self.symbols.get(id as usize) {
                        out.push_str(s);
                    }
                }
            }
        }
        out
    }
}

enum Piece {
    Entity,
    Text,
    Char(char),
}

fn split_symbols(text: &str) -> impl Iterator<Item = Piece> + '_ {
    let mut rest = text;
    std::iter::from_fn(move || {
        if rest.is_empty() {
            return None;
        }
        if let Some(r) = rest.strip_prefix(ENTITY) {
            rest = r;
            return Some(Piece::Entity);
        }
        if let Some(r) = rest.strip_prefix(TEXT) {
            rest = r;
            return Some(Piece::Text);
        }
        let c = rest.chars().next()?;
        rest = &rest[c.len_utf8()..];
        Some(Piece::Char(c))
    })
}
