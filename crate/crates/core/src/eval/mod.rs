//! Simulated-user evaluation: scripted actors drive sessions for every
//! scene and strategy, and per-round MAP/Recall are reported.
//!
//! Randomness is ChaCha8 seeded with `seed_from_u64(config.seed)`, split
//! into independent streams with `set_stream`. The stream for a given
//! (strategy, scene, round) is
//! `strategy_index << 56 | scene_index << 24 | round`, where
//! `strategy_index` is 0 for natural language and 1 for image, and
//! `scene_index` is the scene's position in the corpus label order.
//! Round 0 picks the image-strategy query; round `r ≥ 1` drives the error
//! model.

mod actor;
mod grid;
mod metrics;
mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use actor::{actor_select, apply_error_model, ActorConfig, Perturbed};
pub use grid::{grid_search, write_grid_csv, Grid, GridCell, GridResult};
pub use metrics::{average_precision_at_k, recall_at_k};
pub use synthetic::{generate_synthetic_corpus, scene_label, SyntheticCorpus, SyntheticSpec, CENTROID_SEPARATION};

use crate::error::{Error, Result};
use crate::provider::{EmbeddingProvider, ProviderConfig};
use crate::session::{Judgment, Query, Session};
use crate::store::{ingest_corpus, read_corpus, Corpus};
use crate::svm::SvmConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    NaturalLanguage,
    Image,
}

impl Strategy {
    fn stream_index(self) -> u64 {
        match self {
            Strategy::NaturalLanguage => 0,
            Strategy::Image => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::NaturalLanguage => "natural-language",
            Strategy::Image => "image",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// Binary or JSONL embeddings with labels (inline or `labels` CSV).
    File {
        path: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub corpus: CorpusSource,
    /// Scenes to simulate; empty means the first `max_scenes` labels.
    pub scenes: Vec<String>,
    pub max_scenes: usize,
    pub strategies: Vec<Strategy>,
    pub rounds: usize,
    pub retrieval_limit: usize,
    pub k_map: usize,
    pub k_recall: usize,
    pub prefix_enabled: bool,
    pub svm: SvmConfig,
    pub actor: ActorConfig,
    pub provider: ProviderConfig,
    /// Only read by grid search.
    pub grid: Grid,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            corpus: CorpusSource::Synthetic(SyntheticSpec::default()),
            scenes: Vec::new(),
            max_scenes: 20,
            strategies: vec![Strategy::NaturalLanguage, Strategy::Image],
            rounds: 10,
            retrieval_limit: 2500,
            k_map: 50,
            k_recall: 200,
            prefix_enabled: false,
            svm: SvmConfig::default(),
            actor: ActorConfig::default(),
            provider: ProviderConfig::default(),
            grid: Grid::default(),
        }
    }
}

impl SimulationConfig {
    /// Reads JSON (by `.json` extension) or TOML. Relative corpus paths are
    /// resolved against the config file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: SimulationConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        if let CorpusSource::File { path: p, labels } = &mut cfg.corpus {
            let base = path.parent().unwrap_or(Path::new("."));
            *p = base.join(&*p);
            if let Some(l) = labels {
                *l = base.join(&*l);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.k_map == 0 || self.k_recall == 0 || self.retrieval_limit == 0 {
            return Err(Error::Config(
                "rounds, k_map, k_recall and retrieval_limit must be >= 1".into(),
            ));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies selected".into()));
        }
        self.actor.validate()?;
        self.svm.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// A corpus prepared for simulation.
pub struct EvalCorpus {
    pub corpus: Corpus,
    pub labels: HashMap<String, String>,
}

impl EvalCorpus {
    pub fn load(source: &CorpusSource) -> Result<Self> {
        match source {
            CorpusSource::File { path, labels } => {
                let corpus = match labels {
                    Some(labels) => ingest_corpus(path, Some(labels))?,
                    None => read_corpus(path)?,
                };
                Ok(Self::from_corpus(corpus))
            }
            CorpusSource::Synthetic(spec) => {
                Ok(Self::from_corpus(generate_synthetic_corpus(spec)?.corpus))
            }
        }
    }

    pub fn from_corpus(corpus: Corpus) -> Self {
        Self {
            labels: corpus.labels(),
            corpus,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub strategy: Strategy,
    pub scene: String,
    pub round: usize,
    pub map: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub strategy: Strategy,
    pub round: usize,
    pub mean_map: f64,
    pub mean_recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub k_map: usize,
    pub k_recall: usize,
    pub rounds: usize,
    /// Ordered by strategy, scene, round.
    pub rows: Vec<RoundRow>,
    /// Per-strategy means over scenes, ordered by strategy then round.
    pub aggregates: Vec<AggregateRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Map,
    Recall,
}

impl SimulationReport {
    pub fn curve(&self, strategy: Strategy, metric: Metric) -> Vec<f64> {
        self.aggregates
            .iter()
            .filter(|a| a.strategy == strategy)
            .map(|a| match metric {
                Metric::Map => a.mean_map,
                Metric::Recall => a.mean_recall,
            })
            .collect()
    }

    /// Relative improvement from the initial ranking to the last round.
    pub fn il_gain(&self, strategy: Strategy, metric: Metric) -> Option<f64> {
        let curve = self.curve(strategy, metric);
        let (first, last) = (*curve.first()?, *curve.last()?);
        (first > 0.0).then(|| (last - first) / first)
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        let mut s: Vec<Strategy> = self.aggregates.iter().map(|a| a.strategy).collect();
        s.dedup();
        s
    }

    pub fn write_rows_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "strategy,scene,round,map_at_{},recall_at_{}", self.k_map, self.k_recall)?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{:.6},{:.6}", r.strategy, r.scene, r.round, r.map, r.recall)?;
        }
        Ok(())
    }

    /// One row per strategy and metric: initial value, every round, and
    /// the percentage gain.
    pub fn write_aggregate_csv(&self, mut w: impl Write) -> Result<()> {
        write!(w, "strategy,metric,initial")?;
        for r in 1..=self.rounds {
            write!(w, ",round_{r}")?;
        }
        writeln!(w, ",il_gain_pct")?;
        for strategy in self.strategies() {
            for (metric, name) in [
                (Metric::Map, format!("map_at_{}", self.k_map)),
                (Metric::Recall, format!("recall_at_{}", self.k_recall)),
            ] {
                write!(w, "{strategy},{name}")?;
                for v in self.curve(strategy, metric) {
                    write!(w, ",{v:.6}")?;
                }
                match self.il_gain(strategy, metric) {
                    Some(g) => writeln!(w, ",{:.2}", g * 100.0)?,
                    None => writeln!(w, ",NA")?,
                }
            }
        }
        Ok(())
    }
}

/// Independent generator for one (strategy, scene, round) cell.
pub fn stream_rng(seed: u64, strategy: Strategy, scene_index: usize, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(strategy.stream_index() << 56 | (scene_index as u64) << 24 | round as u64);
    rng
}

fn resolve_scenes(cfg: &SimulationConfig, data: &EvalCorpus) -> Result<Vec<(usize, String)>> {
    let all = data.corpus.label_set();
    let wanted: Vec<String> = if cfg.scenes.is_empty() {
        all.iter().take(cfg.max_scenes).cloned().collect()
    } else {
        cfg.scenes.clone()
    };
    if wanted.is_empty() {
        return Err(Error::Config("corpus has no labels to simulate".into()));
    }
    wanted
        .into_iter()
        .map(|scene| match all.iter().position(|l| *l == scene) {
            Some(i) => Ok((i, scene)),
            None => Err(Error::Config(format!("scene `{scene}` is not a corpus label"))),
        })
        .collect()
}

/// Loads the configured corpus and runs every (strategy, scene) actor.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let data = EvalCorpus::load(&cfg.corpus)?;
    run_simulation_on(cfg, &data)
}

pub fn run_simulation_on(cfg: &SimulationConfig, data: &EvalCorpus) -> Result<SimulationReport> {
    cfg.validate()?;
    let scenes = resolve_scenes(cfg, data)?;
    let provider = cfg.provider.build(data.corpus.dimension())?;
    let jobs: Vec<(Strategy, usize, &str)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| scenes.iter().map(move |(i, name)| (s, *i, name.as_str())))
        .collect();
    let per_job: Vec<ActorTrace> = jobs
        .par_iter()
        .map(|&(strategy, scene_index, scene)| run_actor(cfg, data, provider.as_ref(), strategy, scene_index, scene))
        .collect::<Result<_>>()?;
    let rows: Vec<RoundRow> = per_job.into_iter().flat_map(|t| t.rows).collect();

    let mut aggregates = Vec::new();
    for &strategy in &cfg.strategies {
        for round in 0..=cfg.rounds {
            let cell: Vec<&RoundRow> = rows
                .iter()
                .filter(|r| r.strategy == strategy && r.round == round)
                .collect();
            let n = cell.len() as f64;
            aggregates.push(AggregateRow {
                strategy,
                round,
                mean_map: cell.iter().map(|r| r.map).sum::<f64>() / n,
                mean_recall: cell.iter().map(|r| r.recall).sum::<f64>() / n,
            });
        }
    }
    Ok(SimulationReport {
        k_map: cfg.k_map,
        k_recall: cfg.k_recall,
        rounds: cfg.rounds,
        rows,
        aggregates,
    })
}

/// What one actor saw and did in each feedback round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundTrace {
    /// Actor picks before the error model.
    pub selected: Vec<Judgment>,
    pub submitted: Vec<Judgment>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorTrace {
    pub rows: Vec<RoundRow>,
    /// Feedback rounds `1..=rounds`.
    pub rounds: Vec<RoundTrace>,
}

/// Runs a single (strategy, scene) actor exactly as [`run_simulation_on`]
/// would, keeping its per-round judgments.
pub fn trace_actor(cfg: &SimulationConfig, data: &EvalCorpus, strategy: Strategy, scene: &str) -> Result<ActorTrace> {
    cfg.validate()?;
    let scene_index = data
        .corpus
        .label_set()
        .iter()
        .position(|l| l == scene)
        .ok_or_else(|| Error::Config(format!("scene `{scene}` is not a corpus label")))?;
    let provider = cfg.provider.build(data.corpus.dimension())?;
    run_actor(cfg, data, provider.as_ref(), strategy, scene_index, scene)
}

fn run_actor(
    cfg: &SimulationConfig,
    data: &EvalCorpus,
    provider: &dyn EmbeddingProvider,
    strategy: Strategy,
    scene_index: usize,
    scene: &str,
) -> Result<ActorTrace> {
    let members: Vec<&str> = data
        .corpus
        .records()
        .iter()
        .filter(|r| r.label.as_deref() == Some(scene))
        .map(|r| r.id.as_str())
        .collect();
    let relevant: HashSet<String> = members.iter().map(|s| s.to_string()).collect();
    let query = match strategy {
        Strategy::NaturalLanguage => Query::text(scene, cfg.prefix_enabled),
        Strategy::Image => {
            let mut rng = stream_rng(cfg.seed, strategy, scene_index, 0);
            Query::image_id(members[(rng.next_u64() % members.len() as u64) as usize])
        }
    };
    let mut session = Session::start(
        format!("{strategy}/{scene}"),
        query,
        &data.corpus,
        provider,
        cfg.retrieval_limit,
    )?;

    let measure = |session: &Session, round: usize| -> Result<RoundRow> {
        let ranking = session.current_ranking();
        Ok(RoundRow {
            strategy,
            scene: scene.to_owned(),
            round,
            map: average_precision_at_k(ranking.ids(), &relevant, cfg.k_map)?,
            recall: recall_at_k(ranking.ids(), &relevant, cfg.k_recall)?,
        })
    };

    let mut rows = vec![measure(&session, 0)?];
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut judged: HashSet<String> = HashSet::new();
    for round in 1..=cfg.rounds {
        let selected = actor_select(
            session.current_ranking(),
            &data.labels,
            &judged,
            scene,
            &cfg.actor,
            &data.corpus,
        )?;
        judged.extend(selected.iter().map(|j| j.image_id.clone()));
        let mut rng = stream_rng(cfg.seed, strategy, scene_index, round);
        let perturbed = apply_error_model(selected.clone(), cfg.actor.error_rate, &mut rng);
        session.submit_feedback(&perturbed.judgments)?;
        session.finetune(&data.corpus, &cfg.svm)?;
        rows.push(measure(&session, round)?);
        rounds.push(RoundTrace {
            selected,
            submitted: perturbed.judgments,
        });
    }
    Ok(ActorTrace { rows, rounds })
}
