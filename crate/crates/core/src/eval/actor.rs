//! Scripted user: picks feedback from the top of a ranking and makes
//! occasional mistakes.

use std::collections::{HashMap, HashSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::Judgment;
use crate::store::{Corpus, EmbeddingVector, RankedList};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorConfig {
    pub positives: usize,
    /// Negatives per round are `positives · negative_multiplier`.
    pub negative_multiplier: usize,
    /// Negatives more similar than this to the round's positive mean are
    /// skipped as likely near-duplicates.
    pub similarity_threshold: f64,
    pub error_rate: f64,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self {
            positives: 4,
            negative_multiplier: 2,
            similarity_threshold: 0.75,
            error_rate: 0.2,
        }
    }
}

impl ActorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.positives == 0 || self.negative_multiplier == 0 {
            return Err(Error::Config("positives and negative_multiplier must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::Config("similarity_threshold must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(Error::Config("error_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Scans `ranking` from the top: the first `p` unjudged images of `scene`
/// become positives; the first `p · m` unjudged others whose cosine to the
/// normalized mean of this round's positives is at most the threshold
/// become negatives.
pub fn actor_select(
    ranking: &RankedList,
    labels: &HashMap<String, String>,
    already_judged: &HashSet<String>,
    scene: &str,
    cfg: &ActorConfig,
    corpus: &Corpus,
) -> Result<Vec<Judgment>> {
    let fresh = || ranking.ids().filter(|id| !already_judged.contains(*id));
    let is_scene = |id: &str| labels.get(id).is_some_and(|l| l == scene);
    let vector = |id: &str| {
        corpus
            .get(id)
            .map(|r| &r.vector)
            .ok_or_else(|| Error::NotFound(format!("image `{id}`")))
    };

    let positives: Vec<&str> = fresh().filter(|id| is_scene(id)).take(cfg.positives).collect();
    let mu = if positives.is_empty() {
        None
    } else {
        let d = corpus.dimension();
        let mut sum = vec![0.0f64; d];
        for id in &positives {
            for (s, x) in sum.iter_mut().zip(vector(id)?.as_slice()) {
                *s += *x as f64;
            }
        }
        EmbeddingVector::from_f64(&sum)?.normalize().ok()
    };

    let wanted = cfg.positives * cfg.negative_multiplier;
    let mut negatives = Vec::with_capacity(wanted);
    for id in fresh().filter(|id| !is_scene(id)) {
        if negatives.len() == wanted {
            break;
        }
        if let Some(mu) = &mu {
            if mu.dot(vector(id)?) > cfg.similarity_threshold {
                continue;
            }
        }
        negatives.push(id);
    }

    Ok(positives
        .into_iter()
        .map(|id| Judgment::new(id, true))
        .chain(negatives.into_iter().map(|id| Judgment::new(id, false)))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbed {
    pub judgments: Vec<Judgment>,
    pub dropped: usize,
    pub flipped: usize,
}

/// `r = (next_u64 >> 11) · 2⁻⁵³`, uniform in `[0, 1)`.
fn unit_draw(rng: &mut dyn RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// For each judgment draws `r`; if `r > 1 − error_rate` a second draw
/// decides between dropping it (`< ½`) and flipping its relevance.
pub fn apply_error_model(judgments: Vec<Judgment>, error_rate: f64, rng: &mut dyn RngCore) -> Perturbed {
    let mut out = Perturbed {
        judgments: Vec::with_capacity(judgments.len()),
        dropped: 0,
        flipped: 0,
    };
    if error_rate <= 0.0 {
        out.judgments = judgments;
        return out;
    }
    let cut = 1.0 - error_rate;
    for mut j in judgments {
        // With error_rate = 1 every draw counts, including r = 0.
        if unit_draw(rng) > cut || error_rate >= 1.0 {
            if unit_draw(rng) < 0.5 {
                out.dropped += 1;
                continue;
            }
            j.relevant = !j.relevant;
            out.flipped += 1;
        }
        out.judgments.push(j);
    }
    out
}
