use std::collections::HashSet;
use std::path::PathBuf;

use loupe_core::eval::{
    actor_select, apply_error_model, grid_search, run_simulation, run_simulation_on, trace_actor, write_grid_csv,
    ActorConfig, CorpusSource, EvalCorpus, Grid, SimulationConfig, Strategy, SyntheticSpec,
};
use loupe_core::session::Judgment;
use loupe_core::store::{cosine_similarity, initial_retrieval, Corpus, EmbeddingVector, ImageRecord};
use loupe_core::svm::{KernelKind, SvmConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn defaults_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/defaults.toml")
}

fn small(noise: f64) -> SimulationConfig {
    SimulationConfig {
        corpus: CorpusSource::Synthetic(SyntheticSpec {
            n_scenes: 5,
            per_scene: 40,
            dimension: 24,
            intra_noise: noise,
            seed: 5,
        }),
        rounds: 4,
        k_map: 20,
        k_recall: 60,
        ..SimulationConfig::default()
    }
}

#[test]
fn shipped_defaults_match_builtin_defaults() {
    let cfg = SimulationConfig::from_path(&defaults_path()).unwrap();
    assert_eq!(cfg, SimulationConfig::default());
    assert_eq!(cfg.svm.c_reg, 10.0);
    assert_eq!(cfg.svm.kernel, KernelKind::Rbf);
    assert_eq!(cfg.actor.positives, 4);
    assert_eq!(cfg.actor.negative_multiplier, 2);
    assert_eq!(cfg.actor.similarity_threshold, 0.75);
    assert_eq!(cfg.actor.error_rate, 0.2);
    assert_eq!(cfg.retrieval_limit, 2500);
    assert_eq!((cfg.k_map, cfg.k_recall, cfg.rounds), (50, 200, 10));
}

#[test]
fn json_config_with_relative_corpus_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.jsonl"),
        "{\"id\":\"a\",\"vec\":[1,0],\"label\":\"x\"}\n{\"id\":\"b\",\"vec\":[0,1],\"label\":\"y\"}\n",
    )
    .unwrap();
    let cfg_path = dir.path().join("sim.json");
    std::fs::write(&cfg_path, r#"{"corpus":{"file":{"path":"c.jsonl"}},"rounds":2,"k_map":1,"k_recall":2}"#).unwrap();
    let cfg = SimulationConfig::from_path(&cfg_path).unwrap();
    let report = run_simulation(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2 * 2 * 3);

    std::fs::write(&cfg_path, r#"{"rounds":2,"surprise":1}"#).unwrap();
    assert!(SimulationConfig::from_path(&cfg_path).is_err());
}

#[test]
fn file_corpus_reads_sidecar_labels() {
    let dir = tempfile::tempdir().unwrap();
    let source = loupe_core::eval::generate_synthetic_corpus(&SyntheticSpec {
        n_scenes: 3,
        per_scene: 10,
        dimension: 8,
        intra_noise: 0.2,
        seed: 1,
    })
    .unwrap()
    .corpus;
    let store = dir.path().join("c.xcal");
    let mut bin = Vec::new();
    loupe_core::store::write_binary(&source, &mut bin).unwrap();
    std::fs::write(&store, bin).unwrap();
    let mut labels = Vec::new();
    loupe_core::store::write_labels(&source, &mut labels).unwrap();
    std::fs::write(loupe_core::store::labels_path_for(&store), labels).unwrap();

    let data = EvalCorpus::load(&CorpusSource::File {
        path: store,
        labels: None,
    })
    .unwrap();
    assert_eq!(data.corpus.records(), source.records());
    assert_eq!(data.corpus.label_set().len(), 3);
}

#[test]
fn error_model_statistics() {
    let judgments: Vec<Judgment> = (0..10_000).map(|i| Judgment::new(format!("j{i}"), i % 2 == 0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let out = apply_error_model(judgments.clone(), 0.2, &mut rng);
    let affected = out.dropped + out.flipped;
    let fraction = affected as f64 / 10_000.0;
    assert!((0.185..=0.215).contains(&fraction), "{fraction}");
    let imbalance = (out.dropped as f64 - out.flipped as f64).abs() / affected as f64;
    assert!(imbalance < 0.15, "{imbalance}");
    assert_eq!(out.judgments.len(), 10_000 - out.dropped);
    let flipped = out
        .judgments
        .iter()
        .filter(|j| {
            let i: usize = j.image_id[1..].parse().unwrap();
            j.relevant != i.is_multiple_of(2)
        })
        .count();
    assert_eq!(flipped, out.flipped);

    let same = apply_error_model(judgments.clone(), 0.0, &mut rng);
    assert_eq!(same.judgments, judgments);
}

/// Scene `s` on +x with an off-scene near duplicate at cosine ≈ 0.9.
fn near_duplicate_corpus() -> Corpus {
    let v = |x: [f32; 3]| EmbeddingVector::new(x.to_vec()).unwrap();
    let mut records = vec![
        ImageRecord::new("s1", v([1.0, 0.0, 0.0])).with_label("s"),
        ImageRecord::new("dup", v([0.9, 0.436, 0.0])).with_label("other"),
        ImageRecord::new("s2", v([0.98, 0.0, 0.2])).with_label("s"),
    ];
    for i in 0..12 {
        let angle = 1.2 + i as f32 * 0.1;
        records.push(ImageRecord::new(format!("n{i:02}"), v([angle.cos(), 0.0, angle.sin()])).with_label("other"));
    }
    Corpus::new(3, records).unwrap()
}

#[test]
fn near_duplicate_negative_never_selected() {
    let corpus = near_duplicate_corpus();
    let mu = EmbeddingVector::new(vec![1.98, 0.0, 0.2]).unwrap().normalize().unwrap();
    assert!(cosine_similarity(&mu, &corpus.get("dup").unwrap().vector).unwrap() > 0.75);
    let ranking = initial_retrieval(&corpus.get("s1").unwrap().vector, &corpus, 100).unwrap();
    assert_eq!(ranking.entries[2].id, "dup");
    let cfg = ActorConfig {
        positives: 2,
        negative_multiplier: 2,
        similarity_threshold: 0.75,
        error_rate: 0.0,
    };
    let picks = actor_select(&ranking, &corpus.labels(), &HashSet::new(), "s", &cfg, &corpus).unwrap();
    assert!(picks.iter().all(|j| j.image_id != "dup"));
    assert_eq!(picks.iter().filter(|j| !j.relevant).count(), 4);
    let open = ActorConfig {
        similarity_threshold: 1.0,
        ..cfg
    };
    let picks = actor_select(&ranking, &corpus.labels(), &HashSet::new(), "s", &open, &corpus).unwrap();
    assert!(picks.iter().any(|j| j.image_id == "dup"));
}

#[test]
fn full_runs_respect_protocol() {
    let cfg = SimulationConfig {
        actor: ActorConfig {
            error_rate: 0.0,
            ..ActorConfig::default()
        },
        ..small(0.25)
    };
    let data = EvalCorpus::load(&cfg.corpus).unwrap();
    for strategy in [Strategy::NaturalLanguage, Strategy::Image] {
        for scene in data.corpus.label_set() {
            let trace = trace_actor(&cfg, &data, strategy, &scene).unwrap();
            let mut seen = HashSet::new();
            for round in &trace.rounds {
                assert_eq!(round.selected, round.submitted);
                let positives: Vec<&EmbeddingVector> = round
                    .selected
                    .iter()
                    .filter(|j| j.relevant)
                    .map(|j| &data.corpus.get(&j.image_id).unwrap().vector)
                    .collect();
                let mut mean = vec![0.0f64; data.corpus.dimension()];
                for p in &positives {
                    for (m, x) in mean.iter_mut().zip(p.as_slice()) {
                        *m += *x as f64;
                    }
                }
                let mu = EmbeddingVector::from_f64(&mean).unwrap();
                for j in &round.selected {
                    assert!(seen.insert(j.image_id.clone()), "{} judged twice", j.image_id);
                    assert_eq!(data.labels[&j.image_id] == scene, j.relevant);
                    if !j.relevant && !positives.is_empty() {
                        let v = &data.corpus.get(&j.image_id).unwrap().vector;
                        assert!(cosine_similarity(&mu, v).unwrap() <= 0.75 + 1e-6);
                    }
                }
            }
        }
    }
}

#[test]
fn simulation_is_deterministic() {
    let cfg = small(0.3);
    let a = run_simulation(&cfg).unwrap();
    let b = run_simulation(&cfg).unwrap();
    let csv = |r: &loupe_core::eval::SimulationReport| {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        r.write_rows_csv(&mut x).unwrap();
        r.write_aggregate_csv(&mut y).unwrap();
        (x, y)
    };
    assert_eq!(csv(&a), csv(&b));
    let other = run_simulation(&SimulationConfig { seed: 7, ..cfg }).unwrap();
    assert_ne!(csv(&a).0, csv(&other).0);
}

#[test]
fn two_by_two_grid_is_reproducible() {
    let base = small(0.3);
    let data = EvalCorpus::load(&base.corpus).unwrap();
    let grid = Grid {
        c_reg: vec![1.0, 10.0],
        positives: vec![4],
        negative_multiplier: vec![1, 2],
        kernel: vec![KernelKind::Rbf],
        retrieval_limit: vec![2500],
    };
    let table = || {
        let mut out = Vec::new();
        write_grid_csv(&grid_search(&grid, &base, &data).unwrap(), 20, 60, &mut out).unwrap();
        String::from_utf8(out).unwrap()
    };
    let first = table();
    assert_eq!(first, table());
    assert_eq!(first.lines().count(), 5);

    let single = Grid {
        c_reg: vec![10.0],
        negative_multiplier: vec![2],
        ..grid.clone()
    };
    let results = grid_search(&single, &base, &data).unwrap();
    let report = run_simulation_on(
        &SimulationConfig {
            svm: SvmConfig {
                c_reg: 10.0,
                ..SvmConfig::default()
            },
            ..base.clone()
        },
        &data,
    )
    .unwrap();
    let expected: f64 = report
        .strategies()
        .iter()
        .map(|&s| *report.curve(s, loupe_core::eval::Metric::Map).last().unwrap())
        .sum::<f64>()
        / 2.0;
    assert_eq!(results.len(), 1);
    assert_eq!(results[0].final_map, expected);
}
