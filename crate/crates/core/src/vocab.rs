//! Whole-word vocabulary: one page token is one model token.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::model::Dataset;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const BLK: usize = 4;
pub const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BLK]"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }

    /// Build from every token text in the dataset. Words seen fewer than
    /// `min_count` times map to [UNK]. Ids are assigned in sorted word order
    /// so the result does not depend on page order.
    pub fn build(dataset: &Dataset, min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for page in &dataset.pages {
            for t in &page.tokens {
                *counts.entry(t.text.as_str()).or_default() += 1;
            }
        }
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        words.extend(
            counts
                .into_iter()
                .filter(|&(w, c)| c >= min_count.max(1) && !SPECIALS.contains(&w))
                .map(|(w, _)| w.to_owned()),
        );
        Vocab::from_words(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Rebuild the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, LabelSet, Page, Token};

    fn page(words: &[&str]) -> Page {
        let mut p = Page::new("p", 0, 100.0, 100.0);
        p.tokens = words
            .iter()
            .enumerate()
            .map(|(i, w)| Token::new(*w, BBox::new(i as f64 * 10.0, 0.0, i as f64 * 10.0 + 8.0, 5.0), None))
            .collect();
        p
    }

    #[test]
    fn specials_are_reserved_and_order_is_stable() {
        let ds = Dataset { labels: LabelSet::default15(), pages: vec![page(&["b", "a", "b"]), page(&["c"])] };
        let v = Vocab::build(&ds, 1);
        assert_eq!(&v.words()[..5], &SPECIALS.map(String::from));
        assert_eq!(v.id("a"), 5);
        assert_eq!(v.id("b"), 6);
        assert_eq!(v.id("zzz"), UNK);
        let ds2 = Dataset { labels: LabelSet::default15(), pages: ds.pages.iter().rev().cloned().collect() };
        assert_eq!(Vocab::build(&ds2, 1), v);
        let rare = Vocab::build(&ds, 2);
        assert_eq!(rare.len(), 6);
        assert_eq!(rare.id("a"), UNK);
    }
}
