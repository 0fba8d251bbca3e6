//! Clustered synthetic corpora standing in for a labeled photo collection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{Corpus, EmbeddingVector, ImageRecord};

/// Maximum pairwise cosine between scene centroids.
pub const CENTROID_SEPARATION: f64 = 0.6;
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_scenes: usize,
    pub per_scene: usize,
    pub dimension: usize,
    pub intra_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_scenes: 20,
            per_scene: 100,
            dimension: 64,
            intra_noise: 0.4,
            seed: 7,
        }
    }
}

pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// `(label, centroid)` per scene, in scene order.
    pub prototypes: Vec<(String, EmbeddingVector)>,
}

pub fn scene_label(scene: usize) -> String {
    format!("scene_{scene:02}")
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// One unit centroid per scene (pairwise cosine below
/// [`CENTROID_SEPARATION`]); each image is
/// `normalize(centroid + intra_noise · N(0, I))`.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    let SyntheticSpec {
        n_scenes,
        per_scene,
        dimension: d,
        intra_noise,
        seed,
    } = *spec;
    if n_scenes < 2 || per_scene < 1 || d < 8 {
        return Err(Error::domain(
            "synthetic corpus needs n_scenes >= 2, per_scene >= 1, dimension >= 8",
        ));
    }
    if !(intra_noise >= 0.0 && intra_noise.is_finite()) {
        return Err(Error::domain("intra_noise must be a non-negative number"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(n_scenes);
    let mut attempts = 0;
    while centroids.len() < n_scenes {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::domain(format!(
                "could not place {n_scenes} separated centroids in {MAX_ATTEMPTS} attempts; \
                 use a higher dimension"
            )));
        }
        let c = unit(&gaussian(&mut rng, d));
        let separated = centroids
            .iter()
            .all(|o| o.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() < CENTROID_SEPARATION);
        if separated {
            centroids.push(c);
        }
    }

    let mut records = Vec::with_capacity(n_scenes * per_scene);
    for (s, c) in centroids.iter().enumerate() {
        let label = scene_label(s);
        for _ in 0..per_scene {
            let noise = gaussian(&mut rng, d);
            let v: Vec<f64> = c.iter().zip(&noise).map(|(ci, ni)| ci + intra_noise * ni).collect();
            let id = format!("img_{:05}", records.len());
            records.push(ImageRecord::new(id, EmbeddingVector::from_f64(&unit(&v))?).with_label(&label));
        }
    }
    let prototypes = centroids
        .iter()
        .enumerate()
        .map(|(s, c)| Ok((scene_label(s), EmbeddingVector::from_f64(c)?.normalize()?)))
        .collect::<Result<_>>()?;
    Ok(SyntheticCorpus {
        corpus: Corpus::new(d, records)?,
        prototypes,
    })
}
