//! Memory selection: rank a user's fragments against the current dialogue
//! context by `max(0, cosine) * strength`, after short/long-term gating.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{classify_term, memory_strength, MemoryError, MemoryFragment, MemoryTerm, ScoringParams, Timestamp};
use crate::text::{fnv1a64, tokenize};

pub const DEFAULT_DIMENSION: usize = 64;
pub const DEFAULT_K: usize = 3;
pub const DEFAULT_CONTEXT_TURNS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("invalid argument `{field}`: {message}")]
    InvalidArgument { field: &'static str, message: String },
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

fn invalid(field: &'static str, message: impl Into<String>) -> RetrievalError {
    RetrievalError::InvalidArgument {
        field,
        message: message.into(),
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    /// Unit vector of length [`Embedder::dimension`].
    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError>;
}

/// Hashed bag-of-words: each token is FNV-1a hashed into a bucket, counts are
/// L2-normalized. Order-free and fully deterministic.
#[derive(Debug, Clone, Copy)]
pub struct HashedBagOfWords {
    dimension: usize,
}

impl HashedBagOfWords {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for HashedBagOfWords {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        if text.trim().is_empty() {
            return Err(invalid("text", "cannot embed empty text"));
        }
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            // Punctuation-only input still gets a stable vector.
            tokens.push(text.trim().to_string());
        }
        let mut v = vec![0.0; self.dimension];
        for t in &tokens {
            v[(fnv1a64(t.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

pub fn embed_text(text: &str, embedder: &dyn Embedder) -> Result<Vec<f64>, RetrievalError> {
    embedder.embed(text)
}

/// Text a fragment is indexed under.
pub fn fragment_text(fragment: &MemoryFragment) -> String {
    let mut parts = vec![fragment.event_summary.clone()];
    parts.extend(fragment.people.iter().cloned());
    parts.extend(fragment.objects.iter().cloned());
    parts.extend(fragment.places.iter().cloned());
    parts.extend(fragment.hashtags.iter().map(|h| h.trim_start_matches('#').to_string()));
    parts.join(" ")
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, RetrievalError> {
    if u.len() != v.len() {
        return Err(invalid(
            "embedding",
            format!("dimension mismatch: {} vs {}", u.len(), v.len()),
        ));
    }
    Ok(u.iter().zip(v).map(|(a, b)| a * b).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub user_id: String,
    pub context_text: String,
    pub k: usize,
    pub now: Timestamp,
}

impl RetrievalQuery {
    pub fn new(user_id: impl Into<String>, context_text: impl Into<String>, now: Timestamp) -> Self {
        Self {
            user_id: user_id.into(),
            context_text: context_text.into(),
            k: DEFAULT_K,
            now,
        }
    }

    fn validate(&self) -> Result<(), RetrievalError> {
        if self.k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if self.context_text.trim().is_empty() {
            return Err(invalid("context_text", "must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMemory {
    #[serde(rename = "id")]
    pub fragment_id: String,
    pub similarity: f64,
    pub strength: f64,
    pub combined: f64,
    pub term: MemoryTerm,
    #[serde(skip)]
    pub created_at: Timestamp,
}

/// Total order: combined desc, then newer first, then id asc.
pub fn rank_order(a: &RankedMemory, b: &RankedMemory) -> Ordering {
    b.combined
        .total_cmp(&a.combined)
        .then_with(|| b.created_at.cmp(&a.created_at))
        .then_with(|| a.fragment_id.cmp(&b.fragment_id))
}

struct Worst(RankedMemory);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        rank_order(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}

fn fragment_embedding<'a>(
    fragment: &'a MemoryFragment,
    embedder: &dyn Embedder,
    scratch: &'a mut Vec<f64>,
) -> Result<&'a [f64], RetrievalError> {
    match &fragment.embedding {
        Some(e) => Ok(e),
        None => {
            *scratch = embedder.embed(&fragment_text(fragment))?;
            Ok(scratch)
        }
    }
}

/// Top-`k` eligible fragments for `query`.
///
/// Fragments created after `query.now` and fragments with zero similarity are
/// skipped. Short-term fragments are always eligible; long-term ones need
/// `strength >= forget_threshold`. Callers are expected to `register_recall`
/// on what is returned.
pub fn select_memories(
    query: &RetrievalQuery,
    corpus: &[MemoryFragment],
    params: &ScoringParams,
    embedder: &dyn Embedder,
) -> Result<Vec<RankedMemory>, RetrievalError> {
    query.validate()?;
    if corpus.is_empty() {
        return Ok(Vec::new());
    }
    let q = embedder.embed(&query.context_text)?;
    let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(query.k + 1);
    let mut scratch = Vec::new();

    for fragment in corpus.iter().filter(|f| f.created_at <= query.now) {
        let embedding = fragment_embedding(fragment, embedder, &mut scratch)?;
        let similarity = cosine(&q, embedding)?.max(0.0);
        if similarity <= 0.0 {
            continue;
        }
        let term = classify_term(fragment, params, query.now)?;
        let strength = memory_strength(fragment, params, query.now)?;
        if term == MemoryTerm::LongTerm && strength < params.forget_threshold {
            continue;
        }
        let candidate = RankedMemory {
            fragment_id: fragment.id.clone(),
            similarity,
            strength,
            combined: similarity * strength,
            term,
            created_at: fragment.created_at,
        };
        if heap.len() < query.k {
            heap.push(Worst(candidate));
        } else if let Some(worst) = heap.peek() {
            if rank_order(&candidate, &worst.0) == Ordering::Less {
                heap.pop();
                heap.push(Worst(candidate));
            }
        }
    }
    Ok(heap.into_sorted_vec().into_iter().map(|w| w.0).collect())
}

/// Exhaustive reference for [`select_memories`]: score everything, gate,
/// sort the full list, truncate.
pub fn brute_force_select(
    query: &RetrievalQuery,
    corpus: &[MemoryFragment],
    params: &ScoringParams,
    embedder: &dyn Embedder,
) -> Result<Vec<RankedMemory>, RetrievalError> {
    query.validate()?;
    let q = embedder.embed(&query.context_text)?;
    let mut scored = Vec::with_capacity(corpus.len());
    for fragment in corpus {
        if fragment.created_at > query.now {
            continue;
        }
        let embedding = match &fragment.embedding {
            Some(e) => e.clone(),
            None => embedder.embed(&fragment_text(fragment))?,
        };
        if embedding.len() != q.len() {
            return Err(invalid("embedding", "dimension mismatch"));
        }
        let mut dot = 0.0;
        for i in 0..q.len() {
            dot += q[i] * embedding[i];
        }
        let similarity = if dot > 0.0 { dot } else { 0.0 };
        let age = query.now.days_since(fragment.created_at);
        let term = if age <= params.short_term_window {
            MemoryTerm::ShortTerm
        } else {
            MemoryTerm::LongTerm
        };
        let strength = memory_strength(fragment, params, query.now)?;
        scored.push(RankedMemory {
            fragment_id: fragment.id.clone(),
            similarity,
            strength,
            combined: similarity * strength,
            term,
            created_at: fragment.created_at,
        });
    }
    let mut eligible: Vec<RankedMemory> = scored
        .into_iter()
        .filter(|r| r.similarity > 0.0)
        .filter(|r| r.term == MemoryTerm::ShortTerm || r.strength >= params.forget_threshold)
        .collect();
    eligible.sort_by(rank_order);
    eligible.truncate(query.k);
    Ok(eligible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::Emotion;

    fn e(i: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn embedding_is_unit_and_order_free() {
        let emb = HashedBagOfWords::default();
        let a = emb.embed("hello hello").unwrap();
        let b = emb.embed("hello").unwrap();
        assert_eq!(a, b);
        assert!((norm(&a) - 1.0).abs() < 1e-9);
        assert_eq!(emb.embed("a b").unwrap(), emb.embed("b a").unwrap());
        assert!((norm(&emb.embed("?!").unwrap()) - 1.0).abs() < 1e-9);
        assert!(emb.embed("   ").is_err());
    }

    #[test]
    fn permutation_matches_hand_built_vector() {
        let emb = HashedBagOfWords::new(16);
        let mut expected = vec![0.0; 16];
        for t in ["rain", "cat", "rain"] {
            expected[(fnv1a64(t.as_bytes()) % 16) as usize] += 1.0;
        }
        let n = norm(&expected);
        expected.iter_mut().for_each(|x| *x /= n);
        assert_eq!(emb.embed("cat rain rain").unwrap(), expected);
        assert_eq!(emb.embed("rain Rain cat").unwrap(), expected);
    }

    #[test]
    fn cosine_cases() {
        let u = e(0, 4);
        assert_eq!(cosine(&u, &u).unwrap(), 1.0);
        assert_eq!(cosine(&u, &e(1, 4)).unwrap(), 0.0);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert_eq!(cosine(&u, &neg).unwrap(), -1.0);
        assert_eq!(cosine(&u, &neg).unwrap().max(0.0), 0.0);
        assert!(cosine(&u, &e(0, 3)).is_err());
    }

    #[test]
    fn empty_corpus_and_invalid_queries() {
        let emb = HashedBagOfWords::default();
        let p = ScoringParams::default();
        let q = RetrievalQuery::new("u", "hello", Timestamp(0));
        assert!(select_memories(&q, &[], &p, &emb).unwrap().is_empty());
        assert!(brute_force_select(&q, &[], &p, &emb).unwrap().is_empty());
        let bad = RetrievalQuery { k: 0, ..q.clone() };
        assert!(select_memories(&bad, &[], &p, &emb).is_err());
        let blank = RetrievalQuery { context_text: " ".into(), ..q };
        assert!(select_memories(&blank, &[], &p, &emb).is_err());
    }

    /// Fragments whose similarity to `e0` and strength are set by hand.
    fn shaped(id: &str, similarity: f64, strength: f64) -> MemoryFragment {
        let dim = 4;
        let mut emb = vec![0.0; dim];
        emb[0] = similarity;
        emb[1] = (1.0 - similarity * similarity).sqrt();
        // Weights (1,0,0), age 0: strength == E.
        let mut f = MemoryFragment::new(id, "u", id, vec![Emotion::new("joy", strength)], 0.0, Timestamp(0));
        f.embedding = Some(emb);
        f
    }

    struct Basis;
    impl Embedder for Basis {
        fn dimension(&self) -> usize {
            4
        }
        fn embed(&self, _: &str) -> Result<Vec<f64>, RetrievalError> {
            Ok(e(0, 4))
        }
    }

    #[test]
    fn hand_computed_ranking() {
        let p = ScoringParams {
            w_e: 1.0,
            w_r: 0.0,
            w_c: 0.0,
            ..Default::default()
        };
        let corpus = vec![shaped("f1", 0.9, 0.2), shaped("f2", 0.5, 0.8), shaped("f3", 0.3, 0.9)];
        let q = RetrievalQuery::new("u", "ctx", Timestamp(0));
        let ranked = select_memories(&q, &corpus, &p, &Basis).unwrap();
        let ids: Vec<&str> = ranked.iter().map(|r| r.fragment_id.as_str()).collect();
        assert_eq!(ids, ["f2", "f3", "f1"]);
        let combined: Vec<f64> = ranked.iter().map(|r| r.combined).collect();
        for (got, want) in combined.iter().zip([0.40, 0.27, 0.18]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(ranked, brute_force_select(&q, &corpus, &p, &Basis).unwrap());
    }

    #[test]
    fn single_candidate_and_large_k() {
        let p = ScoringParams { w_e: 1.0, w_r: 0.0, w_c: 0.0, ..Default::default() };
        let corpus = vec![shaped("only", 0.4, 0.5)];
        let q = RetrievalQuery { k: 10, ..RetrievalQuery::new("u", "ctx", Timestamp(0)) };
        let ranked = select_memories(&q, &corpus, &p, &Basis).unwrap();
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].fragment_id, "only");
        assert_eq!(ranked, brute_force_select(&q, &corpus, &p, &Basis).unwrap());
    }

    #[test]
    fn ties_break_by_recency_then_id() {
        let p = ScoringParams { w_e: 1.0, w_r: 0.0, w_c: 0.0, ..Default::default() };
        let mut older = shaped("a-old", 0.5, 0.5);
        older.created_at = Timestamp(0);
        let mut b = shaped("b", 0.5, 0.5);
        b.created_at = Timestamp(10);
        let mut a = shaped("a", 0.5, 0.5);
        a.created_at = Timestamp(10);
        let q = RetrievalQuery { k: 5, ..RetrievalQuery::new("u", "ctx", Timestamp(10)) };
        let corpus = vec![older, b, a];
        let ranked = select_memories(&q, &corpus, &p, &Basis).unwrap();
        let ids: Vec<&str> = ranked.iter().map(|r| r.fragment_id.as_str()).collect();
        // Equal similarity, but the older one has decayed slightly.
        assert_eq!(ids, ["a", "b", "a-old"]);
    }

    #[test]
    fn long_term_gating() {
        let p = ScoringParams { w_e: 1.0, w_r: 0.0, w_c: 0.0, forget_threshold: 0.05, ..Default::default() };
        let mut weak_old = shaped("weak-old", 0.9, 0.1);
        weak_old.created_at = Timestamp(0);
        let mut weak_new = shaped("weak-new", 0.9, 0.01);
        weak_new.created_at = Timestamp::from_days(29.0);
        let q = RetrievalQuery { k: 5, ..RetrievalQuery::new("u", "ctx", Timestamp::from_days(30.0)) };
        let ranked = select_memories(&q, &[weak_old, weak_new], &p, &Basis).unwrap();
        // weak-old: 0.1 * 0.25^5 < 0.05, gated out; weak-new is short-term.
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].fragment_id, "weak-new");
        assert_eq!(ranked[0].term, MemoryTerm::ShortTerm);
    }

    #[test]
    fn dump_format_uses_id_key() {
        let r = RankedMemory {
            fragment_id: "x".into(),
            similarity: 0.5,
            strength: 0.5,
            combined: 0.25,
            term: MemoryTerm::LongTerm,
            created_at: Timestamp(3),
        };
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"id": "x", "similarity": 0.5, "strength": 0.5, "combined": 0.25, "term": "long_term"})
        );
    }
}
