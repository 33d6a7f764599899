//! Command-line entry points. Everything except `serve`, `simulate` and
//! `rank` works directly on the data directory, so run those while no
//! server holds it.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use duelbench::domain::{CriterionKind, ModelRef};
use duelbench::platform::{rank_offline, CreateBenchmark, Platform};
use duelbench::ranking::RankingResult;
use duelbench::scheduler::{DEFAULT_IMAGES_PER_MODEL, DEFAULT_QUOTA};
use duelbench::sim::{run_benchmark_sim_in, SimConfig};
use figment::providers::{Format, Serialized, Toml};
use figment::Figment;

use crate::api::{router, system_clock, AppState};
use crate::config::ServiceConfig;
use crate::report::{score_table_csv, score_table_text, write_report};

#[derive(Debug, Parser)]
#[command(name = "duelbench", version, about = "Pairwise image evaluation: serve, ingest, simulate and rank")]
pub struct Cli {
    /// Service configuration file (TOML). Environment variables prefixed
    /// DUELBENCH_ override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve,
    /// Create a draft benchmark.
    CreateBenchmark {
        #[arg(long)]
        name: String,
        /// Model as `id=Display Name`; repeat for each model.
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_IMAGES_PER_MODEL)]
        images_per_model: u32,
        #[arg(long, default_value_t = DEFAULT_QUOTA)]
        votes_per_comparison: u32,
        /// Comma-separated; all three by default.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<CriterionKind>,
    },
    /// Register prompts from a JSONL file.
    IngestPrompts {
        #[arg(long)]
        benchmark: String,
        file: PathBuf,
    },
    /// Register generated images from a JSONL manifest.
    IngestManifest {
        #[arg(long)]
        benchmark: String,
        file: PathBuf,
    },
    /// Register validation pairs from a JSONL file.
    IngestValidation {
        #[arg(long)]
        benchmark: String,
        file: PathBuf,
    },
    /// Generate the schedule and open a benchmark for annotation.
    Launch {
        #[arg(long)]
        benchmark: String,
    },
    /// Print per-criterion progress.
    Progress {
        #[arg(long)]
        benchmark: String,
    },
    /// Run a simulated benchmark from a TOML config.
    Simulate {
        config_file: Option<PathBuf>,
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
    },
    /// Fit rankings offline from a benchmark directory and its event log.
    Rank {
        /// Directory holding `benchmark.json` (and `votes.log` by default).
        #[arg(long)]
        benchmark_dir: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<CriterionKind>,
        /// Add bootstrap intervals.
        #[arg(long)]
        ci: bool,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Write leaderboard tables, chart data and demographics for a benchmark.
    Report {
        #[arg(long)]
        benchmark: String,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long)]
        ci: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
    Csv,
}

fn parse_model(spec: &str) -> anyhow::Result<ModelRef> {
    let (id, name) = spec.split_once('=').unwrap_or((spec, spec));
    if id.trim().is_empty() {
        bail!("model {spec:?} has an empty id");
    }
    Ok(ModelRef::new(id.trim(), name.trim()))
}

fn open(config: &ServiceConfig) -> anyhow::Result<Platform> {
    Platform::open(config.platform_config())
        .with_context(|| format!("opening data directory {}", config.data_dir.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn load_sim_config(path: Option<&Path>) -> anyhow::Result<SimConfig> {
    let mut figment = Figment::from(Serialized::defaults(SimConfig::default()));
    if let Some(path) = path {
        if !path.is_file() {
            bail!("simulation config {} not found", path.display());
        }
        figment = figment.merge(Toml::file(path));
    }
    Ok(figment.extract()?)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let config = ServiceConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Serve => serve(config),
        Command::CreateBenchmark {
            name,
            models,
            images_per_model,
            votes_per_comparison,
            criteria,
        } => {
            let platform = open(&config)?;
            let models = models.iter().map(|m| parse_model(m)).collect::<anyhow::Result<_>>()?;
            let criteria = if criteria.is_empty() { CriterionKind::ALL.to_vec() } else { criteria };
            let id = platform.create_benchmark(CreateBenchmark {
                name,
                models,
                images_per_model,
                votes_per_comparison,
                criteria,
            })?;
            println!("{id}");
            Ok(())
        }
        Command::IngestPrompts { benchmark, file } => {
            let platform = open(&config)?;
            let id = platform.resolve(&benchmark)?;
            print_json(&platform.add_prompts(&id, &fs::read(&file)?)?)
        }
        Command::IngestManifest { benchmark, file } => {
            let platform = open(&config)?;
            let id = platform.resolve(&benchmark)?;
            let report = platform.add_manifest(&id, &fs::read(&file)?)?;
            print_json(&serde_json::json!({
                "added": report.assets.len(),
                "asset_count": report.asset_count,
                "missing_cells": report.missing_cells,
            }))
        }
        Command::IngestValidation { benchmark, file } => {
            let platform = open(&config)?;
            let id = platform.resolve(&benchmark)?;
            print_json(&platform.add_validation_pool(&id, &fs::read(&file)?)?)
        }
        Command::Launch { benchmark } => {
            let platform = open(&config)?;
            let id = platform.resolve(&benchmark)?;
            print_json(&platform.launch(&id)?)
        }
        Command::Progress { benchmark } => {
            let platform = open(&config)?;
            let id = platform.resolve(&benchmark)?;
            print_json(&platform.progress(&id)?)
        }
        Command::Simulate { config_file, out } => simulate(config_file.as_deref(), &out),
        Command::Rank {
            benchmark_dir,
            log,
            criteria,
            ci,
            lambda,
            format,
        } => {
            let mut platform_config = config.platform_config();
            if let Some(lambda) = lambda {
                platform_config.fit.regularization_lambda = lambda;
            }
            let criteria = (!criteria.is_empty()).then_some(criteria.as_slice());
            let offline = rank_offline(&benchmark_dir, log.as_deref(), &platform_config, criteria, ci)?;
            if let Some(offset) = offline.truncated_at {
                eprintln!("warning: ignoring a damaged log tail from byte {offset}");
            }
            let mut fitted: Vec<RankingResult> = Vec::new();
            for r in &offline.results {
                match r {
                    Ok(r) => fitted.push(r.clone()),
                    Err(e) => eprintln!("warning: {e}"),
                }
            }
            match format {
                OutputFormat::Text => print!("{}", score_table_text(&offline.models, &fitted)),
                OutputFormat::Csv => print!("{}", score_table_csv(&offline.models, &fitted)?),
                OutputFormat::Json => print_json(&fitted)?,
            }
            Ok(())
        }
        Command::Report { benchmark, out, ci } => {
            let platform = open(&config)?;
            let id = platform.resolve(&benchmark)?;
            let plan = platform.plan(&id)?;
            let mut results = Vec::new();
            for c in &plan.criteria {
                match platform.rankings(&id, *c, ci) {
                    Ok(r) => results.push(r),
                    Err(e) => eprintln!("warning: {c}: {e}"),
                }
            }
            let demographics = platform.demographics(&id)?;
            for path in write_report(&out, &plan.models, &results, Some(&demographics))? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn simulate(config_file: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let sim = load_sim_config(config_file)?;
    let data = out.join("data");
    if data.exists() {
        bail!("{} already exists; pick a fresh --out", data.display());
    }
    let run = run_benchmark_sim_in(&sim, Some(data.clone()))?;
    let results: Vec<RankingResult> = run.report.rankings.values().cloned().collect();
    write_report(out, &sim.models, &results, Some(&run.platform.demographics(&run.report.benchmark_id)?))?;
    fs::write(out.join("qa.txt"), run.report.qa.render())?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&run.report)?)?;
    print!("{}", score_table_text(&sim.models, &results));
    for (c, e) in &run.report.recovery_error {
        println!("recovery error {c}: {e:.4}");
    }
    print!("{}", run.report.qa.render());
    println!(
        "vote log: {}",
        data.join("benchmarks").join(run.report.benchmark_id.as_str()).join("votes.log").display()
    );
    Ok(())
}

fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let addr: SocketAddr = config.listen.parse().with_context(|| format!("listen address {}", config.listen))?;
        let platform = Arc::new(open(&config)?);
        let state = AppState::new(platform.clone()).with_admin_token(config.admin_token.clone());
        let app = router(state, config.static_dir.as_deref(), &config.cors_allowed_origins);

        let sweep = Duration::from_millis(config.expiry_sweep_ms.max(100));
        let clock = system_clock();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(sweep);
            loop {
                tick.tick().await;
                let platform = platform.clone();
                let now = clock();
                match tokio::task::spawn_blocking(move || platform.expire_overdue(now)).await {
                    Ok(Ok(0)) => {}
                    Ok(Ok(n)) => tracing::info!(expired = n, "expired overdue sessions"),
                    Ok(Err(e)) => tracing::error!(error = %e, "expiry sweep failed"),
                    Err(e) => tracing::error!(error = %e, "expiry sweep panicked"),
                }
            }
        });

        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_specs() {
        assert_eq!(parse_model("sd=Stable Diffusion").unwrap(), ModelRef::new("sd", "Stable Diffusion"));
        assert_eq!(parse_model("flux").unwrap(), ModelRef::new("flux", "flux"));
        assert!(parse_model("=x").is_err());
    }

    #[test]
    fn arguments_parse() {
        let cli = Cli::try_parse_from([
            "duelbench",
            "create-benchmark",
            "--name",
            "demo",
            "--model",
            "a=A",
            "--model",
            "b=B",
            "--criteria",
            "preference,alignment",
        ])
        .unwrap();
        match cli.command {
            Command::CreateBenchmark { models, criteria, .. } => {
                assert_eq!(models.len(), 2);
                assert_eq!(criteria, vec![CriterionKind::Preference, CriterionKind::Alignment]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sim_config_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.toml");
        fs::write(
            &path,
            r#"
                seed = 4
                prompts = 3
                criteria = ["preference"]
                [[population]]
                count = 30
                behavior = { kind = "faithful" }
                [[population]]
                count = 5
                behavior = { kind = "speeder", response_ms = 400 }
            "#,
        )
        .unwrap();
        let sim = load_sim_config(Some(&path)).unwrap();
        assert_eq!(sim.prompts, 3);
        assert_eq!(sim.population.len(), 2);
        assert_eq!(sim.votes_per_comparison, DEFAULT_QUOTA);
        assert!(sim.validate().is_ok());
    }
}
