//! Text similarity used for relation filtering and relation-string matching.
//!
//! The default provider is a character-trigram TF-IDF cosine over case-folded
//! strings, with IDF fitted on the graph's entity and relation labels. It is
//! fully deterministic; a neural embedder can replace it behind the trait.

use std::collections::{BTreeMap, HashSet};

use crate::kg::KnowledgeGraph;

pub trait SimilarityProvider: Send + Sync {
    fn name(&self) -> &str;

    /// Similarity in [-1, 1]; symmetric, and `sim(x, x)` maximal for any x.
    fn sim(&self, a: &str, b: &str) -> f64;
}

/// Character-trigram TF-IDF cosine similarity.
pub struct TrigramTfidf {
    idf: BTreeMap<String, f64>,
    n_docs: usize,
}

impl TrigramTfidf {
    /// Fit IDF on the graph's entity and relation labels, one label per document.
    pub fn from_kg(kg: &KnowledgeGraph) -> Self {
        Self::from_labels(kg.entity_labels().iter().chain(kg.relation_labels().iter()))
    }

    pub fn from_labels<'a, I: IntoIterator<Item = &'a String>>(labels: I) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for label in labels {
            n_docs += 1;
            let grams: HashSet<String> = trigrams(label).into_iter().collect();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let idf = df
            .into_iter()
            .map(|(g, d)| (g, idf_value(n_docs, d)))
            .collect();
        TrigramTfidf { idf, n_docs }
    }

    fn idf_of(&self, gram: &str) -> f64 {
        self.idf
            .get(gram)
            .copied()
            .unwrap_or_else(|| idf_value(self.n_docs, 0))
    }

    fn vector(&self, text: &str) -> BTreeMap<String, f64> {
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for g in trigrams(text) {
            *counts.entry(g).or_insert(0.0) += 1.0;
        }
        for (g, v) in counts.iter_mut() {
            *v *= self.idf_of(g);
        }
        counts
    }
}

fn idf_value(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

fn trigrams(text: &str) -> Vec<String> {
    let folded = text.to_lowercase();
    let chars: Vec<char> = folded.chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() < 3 {
        return vec![folded];
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

impl SimilarityProvider for TrigramTfidf {
    fn name(&self) -> &str {
        "trigram-tfidf"
    }

    fn sim(&self, a: &str, b: &str) -> f64 {
        let va = self.vector(a);
        let vb = self.vector(b);
        let dot: f64 = va
            .iter()
            .filter_map(|(g, x)| vb.get(g).map(|y| x * y))
            .sum();
        let na: f64 = va.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}
