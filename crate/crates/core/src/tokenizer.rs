//! Word-level tokenizer with a corpus-built vocabulary.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{EntityRecord, KnowledgeGraph, RelationRecord};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Lowercases and splits on whitespace; punctuation becomes its own token.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(core::mem::take(&mut cur));
            }
        } else if ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_whitespace()) {
            if !cur.is_empty() {
                out.push(core::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        } else {
            cur.extend(ch.to_lowercase());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    ids: BTreeMap<String, u32>,
    tokens: Vec<String>,
}

impl Tokenizer {
    /// Builds a vocabulary from `texts`, keeping words seen at least
    /// `min_freq` times. Ids are assigned by descending frequency, then
    /// lexicographically, after the four special tokens.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in split_words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq && !SPECIALS.contains(&w.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens).expect("constructed vocabulary is valid")
    }

    /// Vocabulary over every training example, inverse triples included, so
    /// each word is counted once per appearance in an encoder input.
    pub fn from_graph(graph: &KnowledgeGraph, min_freq: usize) -> Self {
        let mut texts: Vec<String> = Vec::new();
        for t in graph.training_examples() {
            let h = graph.entity(t.head);
            let r = graph.relation(t.relation);
            let tl = graph.entity(t.tail);
            texts.push(entity_text(h));
            texts.push(relation_text(r));
            texts.push(entity_text(tl));
        }
        Self::build(texts.iter().map(String::as_str), min_freq)
    }

    /// Restores a vocabulary from tokens listed in id order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Config(format!("vocabulary id {i} must be {s}")));
            }
        }
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { ids, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_words(text).iter().map(|w| self.id(w)).collect()
    }

    /// `[CLS] h d_h [SEP] r d_r [SEP]`, at most `max_len` ids. The entity
    /// description is cut first, then the entity name, then the relation.
    pub fn tokenize_hr(&self, entity: &EntityRecord, relation: &RelationRecord, max_len: usize) -> Vec<u32> {
        let mut name = self.encode(&entity.name);
        let mut desc = self.encode(&entity.description);
        let mut rel = self.encode(&relation.name);
        rel.extend(self.encode(&relation.description));

        let budget = max_len.saturating_sub(3);
        let mut excess = (name.len() + desc.len() + rel.len()).saturating_sub(budget);
        for seg in [&mut desc, &mut name, &mut rel] {
            let cut = excess.min(seg.len());
            seg.truncate(seg.len() - cut);
            excess -= cut;
        }

        let mut out = Vec::with_capacity(name.len() + desc.len() + rel.len() + 3);
        out.push(CLS);
        out.extend(name);
        out.extend(desc);
        out.push(SEP);
        out.extend(rel);
        out.push(SEP);
        out.truncate(max_len);
        out
    }

    /// `[CLS] t d_t [SEP]`, description cut first.
    pub fn tokenize_entity(&self, entity: &EntityRecord, max_len: usize) -> Vec<u32> {
        let mut name = self.encode(&entity.name);
        let mut desc = self.encode(&entity.description);
        let budget = max_len.saturating_sub(2);
        let mut excess = (name.len() + desc.len()).saturating_sub(budget);
        for seg in [&mut desc, &mut name] {
            let cut = excess.min(seg.len());
            seg.truncate(seg.len() - cut);
            excess -= cut;
        }
        let mut out = Vec::with_capacity(name.len() + desc.len() + 2);
        out.push(CLS);
        out.extend(name);
        out.extend(desc);
        out.push(SEP);
        out.truncate(max_len);
        out
    }
}

fn entity_text(e: &EntityRecord) -> String {
    format!("{} {}", e.name, e.description)
}

fn relation_text(r: &RelationRecord) -> String {
    format!("{} {}", r.name, r.description)
}
