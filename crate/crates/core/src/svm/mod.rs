//! Binary kernel SVM trained on relevance judgments.
//!
//! The classifier's raw decision value is used as the re-ranking
//! confidence: only its order matters, so no probability calibration is
//! applied.

mod kernel;
mod smo;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{rank_order, EmbeddingVector, ImageRecord, RankedEntry, RankedList, RankingSource};

pub use kernel::{Kernel, KernelKind};

/// Coefficients with magnitude at or below this are not support vectors.
pub const SUPPORT_THRESHOLD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    /// `1 / (d · mean feature variance)` over the training vectors.
    Scale,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub c_reg: f64,
    pub kernel: KernelKind,
    pub gamma_mode: GammaMode,
    pub degree: u32,
    pub coef0: f64,
    pub tolerance: f64,
    pub max_passes: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c_reg: 10.0,
            kernel: KernelKind::Rbf,
            gamma_mode: GammaMode::Scale,
            degree: 3,
            coef0: 0.0,
            tolerance: 1e-3,
            max_passes: 200,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_reg > 0.0 && self.c_reg.is_finite()) {
            return Err(Error::domain(format!("c_reg must be positive, got {}", self.c_reg)));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::domain(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.degree < 1 {
            return Err(Error::domain("degree must be at least 1"));
        }
        if self.max_passes < 1 {
            return Err(Error::domain("max_passes must be at least 1"));
        }
        if let GammaMode::Fixed(g) = self.gamma_mode {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::domain(format!("fixed gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }

    pub fn kernel_with_gamma(&self, gamma: f64) -> Kernel {
        Kernel {
            kind: self.kernel,
            gamma,
            degree: self.degree,
            coef0: self.coef0,
        }
    }
}

/// The positives (relevant) and negatives (non-relevant) of one training call.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    positives: Vec<EmbeddingVector>,
    negatives: Vec<EmbeddingVector>,
}

impl TrainingSet {
    pub fn new(positives: Vec<EmbeddingVector>, negatives: Vec<EmbeddingVector>) -> Result<Self> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::domain(format!(
                "training needs both classes, got {} positive and {} negative",
                positives.len(),
                negatives.len()
            )));
        }
        let dim = positives[0].dim();
        if let Some(v) = positives.iter().chain(&negatives).find(|v| v.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        Ok(Self {
            positives,
            negatives,
        })
    }

    pub fn dim(&self) -> usize {
        self.positives[0].dim()
    }

    pub fn positives(&self) -> &[EmbeddingVector] {
        &self.positives
    }

    pub fn negatives(&self) -> &[EmbeddingVector] {
        &self.negatives
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Samples labelled ±1 in a canonical order (label, then vector
    /// contents) so the solver's path does not depend on input order.
    fn canonical(&self) -> Vec<(&EmbeddingVector, f64)> {
        let mut samples: Vec<_> = self
            .positives
            .iter()
            .map(|v| (v, 1.0f64))
            .chain(self.negatives.iter().map(|v| (v, -1.0)))
            .collect();
        samples.sort_by(|a, b| {
            b.1.total_cmp(&a.1).then_with(|| {
                a.0.as_slice()
                    .iter()
                    .zip(b.0.as_slice())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
        });
        samples
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<EmbeddingVector>,
    /// `α_i · y_i` per support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub config: SvmConfig,
    pub resolved_gamma: f64,
    /// Dual objective reached by the solver (maximization form).
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Evaluates the configured kernel with an already resolved gamma.
pub fn kernel_eval(
    config: &SvmConfig,
    resolved_gamma: f64,
    a: &EmbeddingVector,
    b: &EmbeddingVector,
) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(config
        .kernel_with_gamma(resolved_gamma)
        .eval(a.as_slice(), b.as_slice()))
}

pub fn resolve_gamma(config: &SvmConfig, training: &TrainingSet) -> f64 {
    match config.gamma_mode {
        GammaMode::Fixed(g) => g,
        GammaMode::Scale => {
            let d = training.dim();
            let n = training.len() as f64;
            let samples = training.canonical();
            let mut mean = vec![0.0f64; d];
            for (v, _) in &samples {
                for (m, &x) in mean.iter_mut().zip(v.as_slice()) {
                    *m += f64::from(x);
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0f64; d];
            for (v, _) in &samples {
                for ((s, &x), m) in var.iter_mut().zip(v.as_slice()).zip(&mean) {
                    let dev = f64::from(x) - m;
                    *s += dev * dev;
                }
            }
            let mean_var = var.iter().sum::<f64>() / (n * d as f64);
            if mean_var > 1e-15 {
                1.0 / (d as f64 * mean_var)
            } else {
                1.0 / d as f64
            }
        }
    }
}

/// Fits the soft-margin dual with relevant = +1, non-relevant = −1.
///
/// If the solver hits its iteration budget the best model found so far is
/// returned with `converged == false`.
pub fn train(training: &TrainingSet, config: &SvmConfig) -> Result<SvmModel> {
    config.validate()?;
    let samples = training.canonical();
    let gamma = resolve_gamma(config, training);
    let kernel = config.kernel_with_gamma(gamma);

    let n = samples.len();
    let y: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = kernel.eval(samples[i].0.as_slice(), samples[j].0.as_slice());
            let v = y[i] * y[j] * k;
            if !v.is_finite() {
                return Err(Error::domain(format!(
                    "{} kernel produced a non-finite value",
                    config.kernel
                )));
            }
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }

    let solution = smo::Problem {
        q: &q,
        y: &y,
        c: config.c_reg,
        eps: config.tolerance,
        max_iter: config.max_passes.saturating_mul(n.max(1)),
    }
    .solve();
    if !solution.converged {
        log::warn!(
            "SMO stopped after {} iterations without reaching tolerance {}",
            solution.iterations,
            config.tolerance
        );
    }

    let (support_vectors, dual_coefs) = samples
        .iter()
        .zip(&solution.alpha)
        .filter(|(_, &a)| a.abs() > SUPPORT_THRESHOLD)
        .map(|((v, y), &a)| ((*v).clone(), a * y))
        .unzip();

    Ok(SvmModel {
        support_vectors,
        dual_coefs,
        bias: -solution.rho,
        config: config.clone(),
        resolved_gamma: gamma,
        objective: solution.objective,
        iterations: solution.iterations,
        converged: solution.converged,
    })
}

impl SvmModel {
    pub fn kernel(&self) -> Kernel {
        self.config.kernel_with_gamma(self.resolved_gamma)
    }

    pub fn dim(&self) -> Option<usize> {
        self.support_vectors.first().map(EmbeddingVector::dim)
    }

    fn score_unchecked(&self, kernel: &Kernel, x: &[f32]) -> f64 {
        let mut sum = 0.0;
        for (sv, coef) in self.support_vectors.iter().zip(&self.dual_coefs) {
            sum += coef * kernel.eval(sv.as_slice(), x);
        }
        sum + self.bias
    }

    fn check_dim(&self, x: &EmbeddingVector) -> Result<()> {
        match self.dim() {
            Some(d) if d != x.dim() => Err(Error::DimensionMismatch {
                expected: d,
                found: x.dim(),
            }),
            _ => Ok(()),
        }
    }
}

/// `Σ coef_i · K(sv_i, x) + bias`; positive means predicted relevant.
pub fn decision_score(model: &SvmModel, x: &EmbeddingVector) -> Result<f64> {
    model.check_dim(x)?;
    Ok(model.score_unchecked(&model.kernel(), x.as_slice()))
}

/// Orders `candidates` by decision score, descending, ties by id.
pub fn rank_by_confidence(model: &SvmModel, candidates: &[&ImageRecord]) -> Result<RankedList> {
    for c in candidates {
        model.check_dim(&c.vector)?;
    }
    let kernel = model.kernel();
    let mut entries: Vec<RankedEntry> = candidates
        .par_iter()
        .map(|c| RankedEntry {
            id: c.id.clone(),
            score: model.score_unchecked(&kernel, c.vector.as_slice()),
        })
        .collect();
    entries.sort_by(|a, b| rank_order((&a.id, a.score), (&b.id, b.score)));
    Ok(RankedList {
        entries,
        produced_by: RankingSource::SvmConfidence,
    })
}
