//! In-memory embedding corpus with exact cosine top-K retrieval.
//!
//! Vectors are unit-normalized once at ingest, so every similarity
//! computed against the corpus afterwards is a plain dot product.

mod format;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{
    ingest_corpus, labels_path_for, read_corpus, read_labels, write_binary, write_labels, MAGIC,
};

/// Width of the ViT-B/32 family's joint embedding space; used only when no
/// corpus header is available (the stub embedder's fallback).
pub const DEFAULT_DIMENSION: usize = 512;

/// Tolerance on the Euclidean norm of a normalized vector.
pub const NORM_TOLERANCE: f64 = 1e-5;

/// A dense embedding (image or query representation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Wraps raw values, rejecting empty or non-finite input.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("embedding vector must not be empty"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite value {} at position {pos}",
                values[pos]
            )));
        }
        Ok(Self(values))
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    /// Dot product accumulated in `f64`, in index order.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }

    /// Returns the unit vector with the same direction.
    pub fn normalize(&self) -> Result<EmbeddingVector> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(Error::domain("cannot normalize a zero vector"));
        }
        Ok(Self(
            self.0
                .iter()
                .map(|&v| (f64::from(v) / norm) as f32)
                .collect(),
        ))
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() < NORM_TOLERANCE
    }

    fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    b.ensure_dim(a.dim())?;
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return Err(Error::domain("cosine similarity of a zero vector"));
    }
    Ok((a.dot(b) / denom).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub vector: EmbeddingVector,
    pub label: Option<String>,
    pub media_path: Option<PathBuf>,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, vector: EmbeddingVector) -> Self {
        Self {
            id: id.into(),
            vector,
            label: None,
            media_path: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

/// Immutable, ordered collection of normalized image records.
#[derive(Clone, Debug)]
pub struct Corpus {
    dimension: usize,
    records: Vec<ImageRecord>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Validates and normalizes `records`, keeping their order.
    pub fn new(dimension: usize, records: Vec<ImageRecord>) -> Result<Self> {
        if dimension < 2 {
            return Err(Error::domain(format!(
                "corpus dimension must be at least 2, got {dimension}"
            )));
        }
        let mut index = HashMap::with_capacity(records.len());
        let mut normalized = Vec::with_capacity(records.len());
        for (pos, mut record) in records.into_iter().enumerate() {
            if record.id.is_empty() {
                return Err(Error::domain(format!("record {pos} has an empty id")));
            }
            record.vector.ensure_dim(dimension)?;
            // Vectors already unit length to f32 precision are kept as-is so
            // that a save/load cycle reproduces them bit for bit.
            if (record.vector.norm() - 1.0).abs() > 4.0 * f64::from(f32::EPSILON) {
                record.vector = record
                    .vector
                    .normalize()
                    .map_err(|_| Error::ZeroVector(record.id.clone()))?;
            }
            if index.insert(record.id.clone(), pos).is_some() {
                return Err(Error::DuplicateId(record.id));
            }
            normalized.push(record);
        }
        Ok(Self {
            dimension,
            records: normalized,
            index,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.position(id).map(|i| &self.records[i])
    }

    /// id → label for every labelled record.
    pub fn labels(&self) -> HashMap<String, String> {
        self.records
            .iter()
            .filter_map(|r| r.label.as_ref().map(|l| (r.id.clone(), l.clone())))
            .collect()
    }

    /// Distinct labels in first-appearance order.
    pub fn label_set(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.records
            .iter()
            .filter_map(|r| r.label.as_ref())
            .filter(|l| seen.insert(l.as_str()))
            .cloned()
            .collect()
    }

    /// Similarity of `query` against every record, in corpus order.
    ///
    /// Each score is computed independently so the parallel scan is
    /// bit-identical to a sequential one.
    pub fn scores(&self, query: &EmbeddingVector) -> Result<Vec<f64>> {
        query.ensure_dim(self.dimension)?;
        Ok(self
            .records
            .par_iter()
            .map(|r| r.vector.dot(query).clamp(-1.0, 1.0))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingSource {
    InitialCosine,
    SvmConfidence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub score: f64,
}

/// Ranking order: score descending, then id ascending.
pub(crate) fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
    pub produced_by: RankingSource,
}

impl RankedList {
    /// Sorts `entries` into ranking order.
    pub fn from_scored(mut entries: Vec<RankedEntry>, produced_by: RankingSource) -> Self {
        entries.sort_by(|a, b| rank_order((&a.id, a.score), (&b.id, b.score)));
        Self {
            entries,
            produced_by,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }
}

/// Exact top-`limit` records by cosine similarity to `query`.
pub fn initial_retrieval(
    query: &EmbeddingVector,
    corpus: &Corpus,
    limit: usize,
) -> Result<RankedList> {
    if limit == 0 {
        return Err(Error::domain("retrieval limit must be at least 1"));
    }
    let normalized;
    let query = if query.is_normalized() {
        query
    } else {
        normalized = query.normalize()?;
        &normalized
    };
    let scores = corpus.scores(query)?;
    let records = corpus.records();
    let cmp = |&a: &usize, &b: &usize| {
        rank_order((&records[a].id, scores[a]), (&records[b].id, scores[b]))
    };

    let mut order: Vec<usize> = (0..records.len()).collect();
    let keep = limit.min(order.len());
    if keep < order.len() {
        order.select_nth_unstable_by(keep, cmp);
        order.truncate(keep);
    }
    order.sort_unstable_by(cmp);

    Ok(RankedList {
        entries: order
            .into_iter()
            .map(|i| RankedEntry {
                id: records[i].id.clone(),
                score: scores[i],
            })
            .collect(),
        produced_by: RankingSource::InitialCosine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn rebuilding_a_corpus_keeps_vectors_bit_exact() {
        let records: Vec<ImageRecord> = (0..200)
            .map(|i| {
                let x = i as f32;
                ImageRecord::new(format!("r{i}"), v(&[x.sin() + 0.1, (x * 0.7).cos(), x * 0.01 - 1.0]))
            })
            .collect();
        let first = Corpus::new(3, records).unwrap();
        let again = Corpus::new(3, first.records().to_vec()).unwrap();
        assert_eq!(first.records(), again.records());
        assert!(first.records().iter().all(|r| r.vector.is_normalized()));
    }

    #[test]
    fn normalize_three_four() {
        let n = v(&[3.0, 4.0]).normalize().unwrap();
        assert!((n.as_slice()[0] - 0.6).abs() < 1e-7);
        assert!((n.as_slice()[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn normalize_unit_is_identity() {
        let u = v(&[0.6, 0.8]);
        let n = u.normalize().unwrap();
        for (a, b) in u.as_slice().iter().zip(n.as_slice()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn normalize_zero_fails() {
        assert!(matches!(v(&[0.0, 0.0]).normalize(), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(EmbeddingVector::new(vec![1.0, f32::NAN]).is_err());
        assert!(EmbeddingVector::new(vec![f32::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn cosine_cases() {
        let u = v(&[0.6, 0.8]);
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&v(&[1.0, 0.0]), &u).unwrap();
        assert!((c - 0.6).abs() < 1e-7);
        assert!(matches!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn corpus_normalizes_and_rejects() {
        let recs = vec![
            ImageRecord::new("a", v(&[1.0, 2.0, 3.0, 4.0])),
            ImageRecord::new("b", v(&[0.0, 0.0, 0.0, 9.0])),
            ImageRecord::new("c", v(&[-1.0, 0.5, 0.0, 0.0])),
        ];
        let corpus = Corpus::new(4, recs.clone()).unwrap();
        assert_eq!(corpus.len(), 3);
        assert!(corpus.records().iter().all(|r| r.vector.is_normalized()));

        let mut dup = recs.clone();
        dup.push(ImageRecord::new("a", v(&[1.0, 0.0, 0.0, 0.0])));
        assert!(matches!(Corpus::new(4, dup), Err(Error::DuplicateId(id)) if id == "a"));

        let mut zero = recs.clone();
        zero.push(ImageRecord::new("z", v(&[0.0; 4])));
        assert!(matches!(Corpus::new(4, zero), Err(Error::ZeroVector(id)) if id == "z"));

        let mut wide = recs;
        wide.push(ImageRecord::new("w", v(&[1.0; 5])));
        assert!(matches!(
            Corpus::new(4, wide),
            Err(Error::DimensionMismatch { expected: 4, found: 5 })
        ));
    }

    #[test]
    fn retrieval_self_query_and_clamp() {
        let recs = (0..10)
            .map(|i| ImageRecord::new(format!("r{i}"), v(&[i as f32 + 1.0, 1.0, (i % 3) as f32])))
            .collect();
        let corpus = Corpus::new(3, recs).unwrap();
        let q = corpus.get("r4").unwrap().vector.clone();
        let list = initial_retrieval(&q, &corpus, 2500).unwrap();
        assert_eq!(list.len(), 10);
        assert_eq!(list.entries[0].id, "r4");
        assert!((list.entries[0].score - 1.0).abs() < 1e-6);
        assert_eq!(list.produced_by, RankingSource::InitialCosine);
        assert_eq!(initial_retrieval(&q, &corpus, 3).unwrap().len(), 3);
    }

    #[test]
    fn ties_break_by_id() {
        let recs = ["d", "b", "c", "a"]
            .iter()
            .map(|id| ImageRecord::new(*id, v(&[1.0, 1.0])))
            .collect();
        let corpus = Corpus::new(2, recs).unwrap();
        let list = initial_retrieval(&v(&[1.0, 0.0]), &corpus, 3).unwrap();
        assert_eq!(list.ids().collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn empty_corpus_gives_empty_list() {
        let corpus = Corpus::new(2, vec![]).unwrap();
        assert!(initial_retrieval(&v(&[1.0, 0.0]), &corpus, 5).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric(
            a in prop::collection::vec(-10.0f32..10.0, 8),
            b in prop::collection::vec(-10.0f32..10.0, 8),
        ) {
            let (a, b) = (v(&a), v(&b));
            prop_assume!(a.norm() > 1e-3 && b.norm() > 1e-3);
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-7);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn retrieval_is_sorted_permutation_prefix(
            rows in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), 1..60),
            q in prop::collection::vec(-1.0f32..1.0, 4),
            limit in 1usize..80,
        ) {
            let recs: Vec<_> = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| v(r).norm() > 1e-3)
                .map(|(i, r)| ImageRecord::new(format!("{i:03}"), v(r)))
                .collect();
            let q = v(&q);
            prop_assume!(q.norm() > 1e-3);
            let corpus = Corpus::new(4, recs).unwrap();
            let list = initial_retrieval(&q, &corpus, limit).unwrap();
            prop_assert_eq!(list.len(), limit.min(corpus.len()));
            let ids: std::collections::HashSet<_> = list.ids().collect();
            prop_assert_eq!(ids.len(), list.len());
            prop_assert!(list.entries.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }
}
