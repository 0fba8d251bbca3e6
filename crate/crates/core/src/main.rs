use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};

use loupe_core::eval::{grid_search, run_simulation_on, write_grid_csv, EvalCorpus, SimulationConfig};
use loupe_core::provider::{ProviderConfig, ProviderMode};
use loupe_core::server::{serve, AppState, ServiceConfig};
use loupe_core::store::{ingest_corpus, labels_path_for, read_corpus, write_binary, write_labels};
use loupe_core::svm::SvmConfig;
use loupe_core::{Error, Result};

#[derive(Parser)]
#[command(name = "loupe", version, about = "Interactive image retrieval with SVM relevance feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an embedding file and optionally convert it to the binary store.
    Ingest {
        embeddings: PathBuf,
        /// Defaults to `<embeddings>.labels.csv` when that file exists.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Binary store to write; labels go to `<out>.labels.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the simulated-user evaluation.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Per-scene CSV; the aggregate table goes next to it.
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
    },
    /// Rank hyperparameter combinations by final-round MAP.
    Gridsearch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "gridsearch.csv")]
        out: PathBuf,
    },
    /// Serve the HTTP API over a corpus.
    Serve {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, value_enum, default_value = "stub")]
        provider: ProviderMode,
        #[arg(long)]
        provider_url: Option<String>,
        #[arg(long, default_value_t = 5000)]
        provider_timeout_ms: u64,
        #[arg(long, default_value_t = 0)]
        stub_seed: u64,
        #[arg(long, default_value_t = 2500)]
        retrieval_limit: usize,
        #[arg(long, default_value_t = 60)]
        idle_minutes: u64,
    },
}

/// `report.csv` → `report.aggregate.csv`.
fn aggregate_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    out.with_file_name(format!("{stem}.aggregate.csv"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { embeddings, labels, out } => {
            let labels = labels.or_else(|| Some(labels_path_for(&embeddings)).filter(|p| p.exists()));
            let corpus = ingest_corpus(&embeddings, labels.as_deref())?;
            let labeled = corpus.records().iter().filter(|r| r.label.is_some()).count();
            println!(
                "{} records, dimension {}, {} labeled, {} distinct labels",
                corpus.len(),
                corpus.dimension(),
                labeled,
                corpus.label_set().len()
            );
            if let Some(out) = out {
                let mut w = create(&out)?;
                write_binary(&corpus, &mut w)?;
                w.flush()?;
                if labeled > 0 {
                    let mut w = create(&labels_path_for(&out))?;
                    write_labels(&corpus, &mut w)?;
                    w.flush()?;
                }
                println!("wrote {}", out.display());
            }
        }
        Command::Simulate { config, out } => {
            let cfg = SimulationConfig::from_path(&config)?;
            cfg.validate()?;
            let data = EvalCorpus::load(&cfg.corpus)?;
            let report = run_simulation_on(&cfg, &data)?;
            let mut w = create(&out)?;
            report.write_rows_csv(&mut w)?;
            w.flush()?;
            let agg = aggregate_path(&out);
            let mut w = create(&agg)?;
            report.write_aggregate_csv(&mut w)?;
            w.flush()?;
            report.write_aggregate_csv(std::io::stdout().lock())?;
            println!("wrote {} and {}", out.display(), agg.display());
        }
        Command::Gridsearch { config, out } => {
            let cfg = SimulationConfig::from_path(&config)?;
            cfg.validate()?;
            let data = EvalCorpus::load(&cfg.corpus)?;
            let results = grid_search(&cfg.grid, &cfg, &data)?;
            let mut w = create(&out)?;
            write_grid_csv(&results, cfg.k_map, cfg.k_recall, &mut w)?;
            w.flush()?;
            write_grid_csv(&results[..results.len().min(5)], cfg.k_map, cfg.k_recall, std::io::stdout().lock())?;
            println!("wrote {} ({} configurations)", out.display(), results.len());
        }
        Command::Serve {
            corpus,
            host,
            port,
            provider,
            provider_url,
            provider_timeout_ms,
            stub_seed,
            retrieval_limit,
            idle_minutes,
        } => {
            let corpus = Arc::new(read_corpus(&corpus)?);
            let provider = ProviderConfig {
                mode: provider,
                remote_url: provider_url,
                timeout_ms: provider_timeout_ms,
                stub_seed,
            }
            .build(corpus.dimension())?;
            let state = AppState::new(ServiceConfig {
                corpus,
                provider: Arc::from(provider),
                svm: SvmConfig::default(),
                retrieval_limit,
                idle_timeout: Duration::from_secs(idle_minutes * 60),
            });
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Error::Config(format!("bad listen address: {e}")))?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                log::info!("listening on http://{}", listener.local_addr()?);
                eprintln!("listening on http://{}", listener.local_addr()?);
                serve(listener, state, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
