use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use hreflex_core::analytics::{loss_report, parse_loss_log, render_svg, ReportOptions, METRIC_VERSION};
use hreflex_core::mock_server::{MockScript, MockServer};
use hreflex_core::orchestrator::{self, Pipeline, PipelineConfig};
use hreflex_core::record_store::{
    export_instruction_dataset, split_dataset, CaseStore, ExportOptions, ImageMode, Partition,
    SplitRatios, EXPORT_FORMAT_VERSION,
};

#[derive(Debug, Parser)]
#[command(name = "hreflex", version, about = "H-reflex EMG consensus pipeline")]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true, env = "HREFLEX_CONFIG")]
    config: Option<PathBuf>,
    /// Case store directory; overrides `store_path` from the config.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest every case JSON file in a directory.
    Ingest { dir: PathBuf },
    /// Compute and save a seeded train/val/test split.
    Split {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        train: u32,
        #[arg(long, default_value_t = 1)]
        val: u32,
        #[arg(long, default_value_t = 1)]
        test: u32,
    },
    /// Write one partition of the saved split as an instruction dataset.
    ExportDataset {
        #[arg(long, value_enum)]
        partition: Partition,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "path")]
        image_mode: ImageMode,
    },
    /// Analyze one case end to end.
    Analyze {
        case_id: String,
        /// Print the rendered prompts and exit without querying any model.
        #[arg(long)]
        show_prompt: bool,
    },
    /// Analyze many cases (all stored cases when none are given).
    Batch {
        ids: Vec<String>,
        #[arg(long, default_value_t = 4)]
        parallel: usize,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Loss-curve metrics for a training log.
    LossReport {
        file: PathBuf,
        /// Write an SVG plot here.
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long, default_value_t = 1e-3)]
        rel_tol: f64,
        #[arg(long, default_value_t = 5)]
        spike_window: usize,
        #[arg(long, default_value_t = 0.1)]
        spike_threshold: f64,
    },
    /// Run a scripted mock model server.
    MockServe {
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 11434)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        writeln!(std::io::stdout(), $($arg)*)?
    }};
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli.config.as_deref().context("this command needs --config")?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(store) = &cli.store {
        config.store_path = store.clone();
    }
    Ok(config)
}

fn store_path(cli: &Cli) -> Result<PathBuf> {
    if let Some(store) = &cli.store {
        return Ok(store.clone());
    }
    if cli.config.is_some() {
        return Ok(load_config(cli)?.store_path);
    }
    bail!("no store given: pass --store or --config")
}

fn open_store(cli: &Cli) -> Result<CaseStore> {
    let path = store_path(cli)?;
    CaseStore::open(&path).with_context(|| format!("opening store {}", path.display()))
}

async fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Ingest { dir } => {
            let store = open_store(&cli)?;
            let summary = store.ingest_dir(dir)?;
            for (file, reason) in &summary.failed {
                eprintln!("rejected {}: {reason}", file.display());
            }
            out!("ingested {} case(s), rejected {}", summary.ingested.len(), summary.failed.len());
            if !summary.failed.is_empty() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Split { seed, train, val, test } => {
            let store = open_store(&cli)?;
            let ratios = SplitRatios { train: *train, val: *val, test: *test };
            let split = split_dataset(&store.ids(), *seed, ratios)?;
            store.save_split(&split)?;
            let (a, b, c) = split.sizes();
            out!("split seed={seed}: train={a} val={b} test={c}");
        }
        Command::ExportDataset { partition, out, image_mode } => {
            let store = open_store(&cli)?;
            let split = store.load_split()?;
            let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
            let mut sink = BufWriter::new(file);
            let summary = export_instruction_dataset(
                &store,
                split.partition(*partition),
                ExportOptions { image_mode: *image_mode },
                &mut sink,
            )?;
            sink.flush()?;
            out!(
                "exported {} sample(s), {} bytes, format {EXPORT_FORMAT_VERSION} -> {}",
                summary.count,
                summary.bytes,
                out.display()
            );
        }
        Command::Analyze { case_id, show_prompt } => {
            let pipeline = Pipeline::new(load_config(&cli)?)?;
            if *show_prompt {
                out!("template version: {}", pipeline.prompts().version());
                for (model, prompt) in pipeline.render_prompts(case_id)? {
                    out!("=== {model} ===");
                    out!("--- system ---\n{}", prompt.system_text);
                    out!("--- user ---\n{}", prompt.user_text);
                }
                return Ok(ExitCode::SUCCESS);
            }
            let result = pipeline.analyze_case(case_id).await?;
            out!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Batch { ids, parallel } => {
            let pipeline = Pipeline::new(load_config(&cli)?)?;
            let ids = if ids.is_empty() { pipeline.store().ids() } else { ids.clone() };
            if ids.is_empty() {
                bail!("no cases to analyze");
            }
            let results = pipeline.batch_analyze(&ids, *parallel).await;
            let mut failed = 0;
            for (id, result) in ids.iter().zip(&results) {
                match result {
                    Ok(r) => out!(
                        "{id}\tok\t{}\t{:?}\tagreement={:.3}",
                        r.consensus.final_assessment.state, r.consensus.method, r.consortium.agreement_score
                    ),
                    Err(e) => {
                        failed += 1;
                        out!("{id}\terror\t{e}");
                    }
                }
            }
            if failed > 0 {
                eprintln!("{failed} of {} case(s) failed", ids.len());
                return Ok(ExitCode::from(2));
            }
        }
        Command::Serve { bind } => {
            let pipeline = Pipeline::new(load_config(&cli)?)?;
            orchestrator::serve(pipeline, bind).await?;
        }
        Command::LossReport { file, plot, window, rel_tol, spike_window, spike_threshold } => {
            let reader = BufReader::new(fs::File::open(file).with_context(|| format!("opening {}", file.display()))?);
            let log = parse_loss_log(reader)?;
            let options = ReportOptions {
                plateau_window: *window,
                plateau_rel_tol: *rel_tol,
                spike_window: *spike_window,
                spike_threshold: *spike_threshold,
            };
            let report = loss_report(&log, &options)?;
            if let Some(path) = plot {
                write_plot(path, &render_svg(&log, &report))?;
                eprintln!("plot written to {}", path.display());
            }
            eprintln!("metric version {METRIC_VERSION}");
            out!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::MockServe { script, port, host } => {
            let text = fs::read_to_string(script).with_context(|| format!("reading {}", script.display()))?;
            let script = MockScript::from_json(&text).context("parsing mock script")?;
            let server = MockServer::start(script, SocketAddr::new(*host, *port)).await?;
            out!("mock model server on {}", server.chat_url());
            server
                .run_until(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write_plot(path: &Path, svg: &str) -> Result<()> {
    fs::write(path, svg).with_context(|| format!("writing {}", path.display()))
}
