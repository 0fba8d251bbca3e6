//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the solver, ranking, or metric code paths it is
//! used to check.

#![allow(dead_code)]

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use loupe_core::store::{Corpus, EmbeddingVector, ImageRecord, RankedEntry};
use loupe_core::svm::{kernel_eval, resolve_gamma, KernelKind, SvmConfig, TrainingSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense SVM dual solved by accelerated projected gradient.
pub struct QpOracle {
    pub points: Vec<EmbeddingVector>,
    pub y: Vec<f64>,
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub objective: f64,
    pub gamma: f64,
    pub config: SvmConfig,
}

fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lambda: f64| -> (Vec<f64>, f64) {
        let a: Vec<f64> = v
            .iter()
            .zip(y)
            .map(|(&vi, &yi)| (vi - lambda * yi).clamp(0.0, c))
            .collect();
        let s = a.iter().zip(y).map(|(ai, yi)| ai * yi).sum();
        (a, s)
    };
    let bound = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if at(mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (mut a, _) = at(0.5 * (lo + hi));
    // Remove the last rounding residue of yᵀα on a free coordinate.
    let resid: f64 = a.iter().zip(y).map(|(ai, yi)| ai * yi).sum();
    if let Some(k) = (0..a.len()).find(|&k| a[k] > 1e-12 && a[k] < c - 1e-12) {
        a[k] = (a[k] - resid * y[k]).clamp(0.0, c);
    }
    a
}

fn objective(q: &[f64], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * q[i * n + j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

impl QpOracle {
    pub fn solve(training: &TrainingSet, config: &SvmConfig) -> Self {
        let gamma = resolve_gamma(config, training);
        let points: Vec<EmbeddingVector> = training
            .positives()
            .iter()
            .chain(training.negatives())
            .cloned()
            .collect();
        let y: Vec<f64> = training
            .positives()
            .iter()
            .map(|_| 1.0)
            .chain(training.negatives().iter().map(|_| -1.0))
            .collect();
        let n = points.len();
        let c = config.c_reg;
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                q[i * n + j] = y[i] * y[j] * kernel_eval(config, gamma, &points[i], &points[j]).unwrap();
            }
        }
        // Dominant |eigenvalue| of Q by power iteration.
        let mut u = vec![1.0; n];
        let mut lipschitz = 0.0;
        for _ in 0..500 {
            let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q[i * n + j] * u[j]).sum()).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            lipschitz = norm / u.iter().map(|x| x * x).sum::<f64>().sqrt();
            u = w.iter().map(|x| x / norm).collect();
        }
        let step = 1.0 / (1.05 * lipschitz).max(1e-12);

        let grad = |a: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| (0..n).map(|j| q[i * n + j] * a[j]).sum::<f64>() - 1.0)
                .collect()
        };

        let kkt_gap = |a: &[f64]| -> f64 {
            let g = grad(a);
            let (mut up, mut low) = (f64::NEG_INFINITY, f64::INFINITY);
            for i in 0..n {
                let v = -y[i] * g[i];
                let can_up = (y[i] > 0.0 && a[i] < c) || (y[i] < 0.0 && a[i] > 0.0);
                let can_low = (y[i] > 0.0 && a[i] > 0.0) || (y[i] < 0.0 && a[i] < c);
                if can_up {
                    up = up.max(v);
                }
                if can_low {
                    low = low.min(v);
                }
            }
            up - low
        };

        // FISTA with gradient-based adaptive restart.
        let fista = |start: Vec<f64>| -> Vec<f64> {
            let mut alpha = start;
            let mut z = alpha.clone();
            let mut t = 1.0f64;
            for iter in 0..400_000 {
                if iter % 25 == 0 && kkt_gap(&alpha) < 1e-10 {
                    break;
                }
                let g = grad(&z);
                let v: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - step * gi).collect();
                let next = project(&v, &y, c);
                let restart: f64 = z
                    .iter()
                    .zip(&next)
                    .zip(&alpha)
                    .map(|((zi, ni), ai)| (zi - ni) * (ni - ai))
                    .sum();
                if restart > 0.0 {
                    t = 1.0;
                }
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                z = next
                    .iter()
                    .zip(&alpha)
                    .map(|(a1, a0)| a1 + (t - 1.0) / t_next * (a1 - a0))
                    .collect();
                t = t_next;
                alpha = next;
            }
            alpha
        };

        // An indefinite Q (sigmoid kernels) has several stationary points:
        // restart from scattered feasible points and keep the best.
        let smallest_eig = {
            let shift = lipschitz;
            let mut u: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
            let mut mu = 0.0;
            for _ in 0..2000 {
                let w: Vec<f64> = (0..n)
                    .map(|i| shift * u[i] - (0..n).map(|j| q[i * n + j] * u[j]).sum::<f64>())
                    .collect();
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    break;
                }
                mu = norm / u.iter().map(|x| x * x).sum::<f64>().sqrt();
                u = w.iter().map(|x| x / norm).collect();
            }
            shift - mu
        };
        let mut alpha = fista(vec![0.0; n]);
        if smallest_eig < -1e-9 {
            let mut state = 0x9E37_79B9_7F4A_7C15u64;
            for _ in 0..32 {
                let start: Vec<f64> = (0..n)
                    .map(|_| {
                        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        (state >> 11) as f64 / (1u64 << 53) as f64 * c
                    })
                    .collect();
                let candidate = fista(project(&start, &y, c));
                if objective(&q, &candidate) > objective(&q, &alpha) + 1e-12 {
                    alpha = candidate;
                }
            }
        }
        let g = grad(&alpha);
        let (mut ub, mut lb, mut free_sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0);
        for i in 0..n {
            let yg = y[i] * g[i];
            let at_upper = alpha[i] >= c - 1e-12 * c.max(1.0);
            let at_lower = alpha[i] <= 1e-12;
            if at_upper {
                if y[i] < 0.0 {
                    ub = ub.min(yg)
                } else {
                    lb = lb.max(yg)
                }
            } else if at_lower {
                if y[i] > 0.0 {
                    ub = ub.min(yg)
                } else {
                    lb = lb.max(yg)
                }
            } else {
                free += 1;
                free_sum += yg;
            }
        }
        let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };

        QpOracle {
            objective: objective(&q, &alpha),
            points,
            y,
            alpha,
            rho,
            gamma,
            config: config.clone(),
        }
    }

    pub fn decision(&self, x: &EmbeddingVector) -> f64 {
        self.points
            .iter()
            .zip(&self.y)
            .zip(&self.alpha)
            .map(|((p, y), a)| a * y * kernel_eval(&self.config, self.gamma, p, x).unwrap())
            .sum::<f64>()
            - self.rho
    }
}

/// Recall@k by explicit set intersection.
pub fn brute_recall(ranking: &[String], relevant: &HashSet<String>, k: usize) -> f64 {
    let top: HashSet<&String> = ranking.iter().take(k).collect();
    let hits = relevant.iter().filter(|r| top.contains(r)).count();
    hits as f64 / relevant.len() as f64
}

/// AP@k by recomputing precision at every relevant rank from scratch.
pub fn brute_average_precision(ranking: &[String], relevant: &HashSet<String>, k: usize) -> f64 {
    let mut total = 0.0;
    for i in 1..=k.min(ranking.len()) {
        if relevant.contains(&ranking[i - 1]) {
            let hits_so_far = ranking[..i].iter().filter(|id| relevant.contains(*id)).count();
            total += hits_so_far as f64 / i as f64;
        }
    }
    total / relevant.len().min(k) as f64
}

/// A random SVM instance: ≤ 20 points, d ≤ 16, both classes present.
pub fn random_instance(seed: u64, kernel: KernelKind, c_reg: f64) -> (TrainingSet, SvmConfig, Vec<EmbeddingVector>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=20usize);
    let d = rng.random_range(2..=16usize);
    let point = |rng: &mut ChaCha8Rng| {
        EmbeddingVector::new((0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    };
    let n_pos = rng.random_range(1..n);
    let positives: Vec<_> = (0..n_pos).map(|_| point(&mut rng)).collect();
    let negatives: Vec<_> = (n_pos..n).map(|_| point(&mut rng)).collect();
    let probes = (0..5).map(|_| point(&mut rng)).collect();
    let config = SvmConfig {
        kernel,
        c_reg,
        ..SvmConfig::default()
    };
    (TrainingSet::new(positives, negatives).unwrap(), config, probes)
}

/// Every record sorted by (cosine descending, id ascending), scored with a
/// plain sequential dot product.
pub fn exhaustive_ranking(corpus: &Corpus, query: &EmbeddingVector) -> Vec<RankedEntry> {
    let q = query.as_slice();
    let mut all: Vec<RankedEntry> = corpus
        .records()
        .iter()
        .map(|r| {
            let mut s = 0.0f64;
            for (a, b) in r.vector.as_slice().iter().zip(q) {
                s += f64::from(*a) * f64::from(*b);
            }
            RankedEntry {
                id: r.id.clone(),
                score: s.clamp(-1.0, 1.0),
            }
        })
        .collect();
    all.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then_with(|| a.id.cmp(&b.id)));
    all
}

/// Random unit-ish vectors with deliberate duplicates so ties occur.
pub fn random_corpus(seed: u64, n: usize, d: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records: Vec<ImageRecord> = Vec::with_capacity(n);
    for i in 0..n {
        let v = if i > 0 && i % 17 == 0 {
            records[rng.random_range(0..i)].vector.clone()
        } else {
            EmbeddingVector::new((0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
        };
        records.push(ImageRecord::new(format!("r{:05}", (i * 7919) % n), v));
    }
    Corpus::new(d, records).unwrap()
}

// ---------------------------------------------------------------------------
// In-process HTTP servers on real sockets.

pub struct TestServer {
    pub url: String,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Runs `router` on 127.0.0.1 with an ephemeral port in a background
/// runtime.
pub fn spawn_router(router: axum::Router) -> TestServer {
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            addr_tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
        });
    });
    let addr = addr_rx.recv().unwrap();
    TestServer {
        url: format!("http://{addr}"),
        shutdown: Some(tx),
        thread: Some(thread),
    }
}

/// A sidecar speaking the `/embed` protocol. Replies with `reply_dim`
/// coordinates derived from the stub embedder and records every request
/// body.
pub fn spawn_mock_sidecar(reply_dim: usize) -> (TestServer, Arc<Mutex<Vec<serde_json::Value>>>) {
    use axum::routing::{get, post};
    use axum::Json;
    use base64::Engine as _;
    use loupe_core::provider::{stub_embed, Content};

    let seen: Arc<Mutex<Vec<serde_json::Value>>> = Arc::default();
    let log = seen.clone();
    let router = axum::Router::new()
        .route("/health", get(|| async { Json(serde_json::json!({"status": "ok"})) }))
        .route(
            "/embed",
            post(move |Json(body): Json<serde_json::Value>| {
                let log = log.clone();
                async move {
                    log.lock().unwrap().push(body.clone());
                    let v = match body["type"].as_str() {
                        Some("text") => stub_embed(Content::Text(body["text"].as_str().unwrap()), reply_dim, 99),
                        _ => {
                            let bytes = base64::engine::general_purpose::STANDARD
                                .decode(body["data_base64"].as_str().unwrap())
                                .unwrap();
                            stub_embed(Content::Image(&bytes), reply_dim, 99)
                        }
                    };
                    Json(serde_json::json!({"dim": reply_dim, "vec": v.as_slice()}))
                }
            }),
        );
    (spawn_router(router), seen)
}
