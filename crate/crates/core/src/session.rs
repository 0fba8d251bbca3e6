//! The interactive loop: query, initial retrieval, cumulative feedback,
//! retraining and re-ranking over a pool fixed at session start.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provider::{Content, EmbeddingProvider};
use crate::store::{initial_retrieval, Corpus, EmbeddingVector, RankedList};
use crate::svm::{rank_by_confidence, train, SvmConfig, TrainingSet};

/// Prepended to text queries when `prefix_enabled` is set.
pub const PROMPT_PREFIX: &str = "a photo of a ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRef {
    CorpusId(String),
    Bytes(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub modality: Modality,
    pub text: Option<String>,
    pub image: Option<ImageRef>,
    pub prefix_enabled: bool,
}

impl Query {
    pub fn text(text: impl Into<String>, prefix_enabled: bool) -> Self {
        Self {
            modality: Modality::Text,
            text: Some(text.into()),
            image: None,
            prefix_enabled,
        }
    }

    pub fn image_id(id: impl Into<String>) -> Self {
        Self {
            modality: Modality::Image,
            text: None,
            image: Some(ImageRef::CorpusId(id.into())),
            prefix_enabled: false,
        }
    }

    pub fn image_bytes(bytes: Vec<u8>) -> Self {
        Self {
            modality: Modality::Image,
            text: None,
            image: Some(ImageRef::Bytes(bytes)),
            prefix_enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.modality, &self.text, &self.image) {
            (Modality::Text, Some(t), None) if !t.trim().is_empty() => Ok(()),
            (Modality::Text, Some(_), None) => Err(Error::domain("text query is empty")),
            (Modality::Image, None, Some(ImageRef::Bytes(b))) if b.is_empty() => {
                Err(Error::domain("image query has no bytes"))
            }
            (Modality::Image, None, Some(_)) => Ok(()),
            _ => Err(Error::domain(
                "a query carries exactly one of text or image, matching its modality",
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub image_id: String,
    pub relevant: bool,
}

impl Judgment {
    pub fn new(image_id: impl Into<String>, relevant: bool) -> Self {
        Self {
            image_id: image_id.into(),
            relevant,
        }
    }
}

/// Embeds a query into the corpus space. Image queries by corpus id reuse
/// the stored vector and never touch the provider.
pub fn encode_query(
    query: &Query,
    provider: &dyn EmbeddingProvider,
    corpus: &Corpus,
) -> Result<EmbeddingVector> {
    query.validate()?;
    let vector = match (&query.text, &query.image) {
        (Some(text), _) => {
            let text = if query.prefix_enabled {
                format!("{PROMPT_PREFIX}{text}")
            } else {
                text.clone()
            };
            provider.embed(Content::Text(&text))?
        }
        (None, Some(ImageRef::CorpusId(id))) => {
            let record = corpus
                .get(id)
                .ok_or_else(|| Error::NotFound(format!("image `{id}`")))?;
            return Ok(record.vector.clone());
        }
        (None, Some(ImageRef::Bytes(bytes))) => provider.embed(Content::Image(bytes))?,
        (None, None) => unreachable!("validated above"),
    };
    if vector.dim() != corpus.dimension() {
        return Err(Error::Provider(format!(
            "provider dimension {} does not match corpus dimension {}",
            vector.dim(),
            corpus.dimension()
        )));
    }
    vector.normalize()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Badge {
    Relevant,
    NonRelevant,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    /// 1-based position in the current ranking.
    pub rank: usize,
    pub image_id: String,
    pub score: f64,
    pub badge: Badge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultPage {
    pub entries: Vec<ResultEntry>,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FinetuneOutcome {
    Retrained {
        round: u32,
        support_vectors: usize,
        converged: bool,
    },
    /// Training needs at least one relevant and one non-relevant judgment.
    InsufficientFeedback { positives: usize, negatives: usize },
}

#[derive(Clone, Debug)]
pub struct Session {
    id: String,
    query: Query,
    query_vector: EmbeddingVector,
    pool: RankedList,
    pool_ids: HashSet<String>,
    current: RankedList,
    judgments: BTreeMap<String, bool>,
    round: u32,
}

/// Encodes `query` and opens a session over the top `retrieval_limit`
/// records.
pub fn start_session(
    query: Query,
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    retrieval_limit: usize,
) -> Result<Session> {
    Session::start(uuid::Uuid::new_v4().to_string(), query, corpus, provider, retrieval_limit)
}

impl Session {
    /// Like [`start_session`] with a caller-chosen id.
    pub fn start(
        id: String,
        query: Query,
        corpus: &Corpus,
        provider: &dyn EmbeddingProvider,
        retrieval_limit: usize,
    ) -> Result<Session> {
        if corpus.is_empty() {
            return Err(Error::domain("corpus is empty"));
        }
        let query_vector = encode_query(&query, provider, corpus)?;
        let pool = initial_retrieval(&query_vector, corpus, retrieval_limit)?;
        let pool_ids = pool.ids().map(str::to_owned).collect();
        Ok(Session {
            id,
            query,
            query_vector,
            current: pool.clone(),
            pool,
            pool_ids,
            judgments: BTreeMap::new(),
            round: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn query_vector(&self) -> &EmbeddingVector {
        &self.query_vector
    }

    pub fn pool(&self) -> &RankedList {
        &self.pool
    }

    pub fn current_ranking(&self) -> &RankedList {
        &self.current
    }

    pub fn judgments(&self) -> &BTreeMap<String, bool> {
        &self.judgments
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn in_pool(&self, id: &str) -> bool {
        self.pool_ids.contains(id)
    }

    /// Merges judgments into the cumulative map, later entries winning.
    /// Rejects the whole batch if any id lies outside the pool.
    pub fn submit_feedback(&mut self, judgments: &[Judgment]) -> Result<usize> {
        let mut outside: Vec<String> = judgments
            .iter()
            .filter(|j| !self.in_pool(&j.image_id))
            .map(|j| j.image_id.clone())
            .collect();
        if !outside.is_empty() {
            outside.sort();
            outside.dedup();
            return Err(Error::NotInPool(outside));
        }
        for j in judgments {
            self.judgments.insert(j.image_id.clone(), j.relevant);
        }
        Ok(judgments.len())
    }

    /// Trains on every judgment so far and re-ranks the whole pool.
    pub fn finetune(&mut self, corpus: &Corpus, config: &SvmConfig) -> Result<FinetuneOutcome> {
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for (id, &relevant) in &self.judgments {
            let record = corpus
                .get(id)
                .ok_or_else(|| Error::NotFound(format!("image `{id}`")))?;
            if relevant {
                positives.push(record.vector.clone());
            } else {
                negatives.push(record.vector.clone());
            }
        }
        if positives.is_empty() || negatives.is_empty() {
            return Ok(FinetuneOutcome::InsufficientFeedback {
                positives: positives.len(),
                negatives: negatives.len(),
            });
        }
        let model = train(&TrainingSet::new(positives, negatives)?, config)?;
        let candidates = self
            .pool
            .ids()
            .map(|id| corpus.get(id).ok_or_else(|| Error::NotFound(format!("image `{id}`"))))
            .collect::<Result<Vec<_>>>()?;
        self.current = rank_by_confidence(&model, &candidates)?;
        self.round += 1;
        Ok(FinetuneOutcome::Retrained {
            round: self.round,
            support_vectors: model.support_vectors.len(),
            converged: model.converged,
        })
    }

    pub fn badge(&self, id: &str) -> Badge {
        match self.judgments.get(id) {
            Some(true) => Badge::Relevant,
            Some(false) => Badge::NonRelevant,
            None => Badge::None,
        }
    }

    /// A slice of the current ranking; past the end yields an empty page.
    pub fn get_results(&self, offset: usize, limit: usize) -> ResultPage {
        let entries = self
            .current
            .entries
            .iter()
            .enumerate()
            .skip(offset)
            .take(limit)
            .map(|(i, e)| ResultEntry {
                rank: i + 1,
                image_id: e.id.clone(),
                score: e.score,
                badge: self.badge(&e.id),
            })
            .collect();
        ResultPage {
            entries,
            total: self.current.len(),
        }
    }
}
