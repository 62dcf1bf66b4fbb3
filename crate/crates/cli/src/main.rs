use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sortcma_cli::{reward_fit, run_bench, server};
use sortcma_core::harness::{ExperimentPlan, FinalMode, Schedule, DEFAULT_L2};
use sortcma_core::session::{CommandHook, Hooks, SessionStore};
use sortcma_core::{Function, SpaceConfig};

#[derive(Parser)]
#[command(name = "sortcma", version, about = "CMA-ES driven by pairwise comparisons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run simulated-oracle experiments and write CSV results.
    Bench(BenchArgs),
    /// Fit a linear reward model to a preference log.
    RewardFit {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// L2 strength on standardized features.
        #[arg(long, default_value_t = DEFAULT_L2)]
        l2: f64,
        /// Space config used to label the weights with parameter names.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve interactive sessions over HTTP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Shell command that renders a candidate (JSON params on stdin, file path on stdout).
        #[arg(long)]
        render_cmd: Option<String>,
        /// Shell command that scores a candidate (JSON params on stdin, number on stdout).
        #[arg(long)]
        heuristic_cmd: Option<String>,
        #[arg(long, default_value_t = 30)]
        hook_timeout: u64,
        #[arg(long, default_value = "image/png")]
        media_type: String,
        #[arg(long)]
        state_dir: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long, value_parser = parse_function)]
    function: Function,
    #[arg(long, value_delimiter = ',', required = true)]
    dim: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    crossover: Vec<f64>,
    #[arg(long)]
    seeds: u64,
    /// Defaults to about 3000 evaluations per run.
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    lambda: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    sigma0: f64,
    #[arg(long, default_value = "single", value_parser = parse_schedule)]
    schedule: Schedule,
    #[arg(long, default_value_t = 4)]
    instances: usize,
    #[arg(long = "final", default_value = "tournament", value_parser = parse_final)]
    final_mode: FinalMode,
    /// Probability that the simulated user defers to the heuristic.
    #[arg(long, default_value_t = 0.0)]
    defer_rate: f64,
    /// Subject deferred comparisons to the same crossover noise.
    #[arg(long)]
    noisy_heuristic: bool,
    #[arg(long)]
    out: PathBuf,
}

fn parse_function(s: &str) -> Result<Function, String> {
    s.parse().map_err(|e: sortcma_core::Error| e.to_string())
}

fn parse_schedule(s: &str) -> Result<Schedule, String> {
    s.parse().map_err(|e: sortcma_core::Error| e.to_string())
}

fn parse_final(s: &str) -> Result<FinalMode, String> {
    s.parse().map_err(|e: sortcma_core::Error| e.to_string())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Bench(a) => {
            let plan = ExperimentPlan {
                function: a.function,
                dimensions: a.dim,
                crossover: a.crossover,
                seeds: a.seeds,
                generations: a.generations,
                lambda: a.lambda,
                sigma0: a.sigma0,
                schedule: a.schedule,
                instances: a.instances,
                final_mode: a.final_mode,
                defer_rate: a.defer_rate,
                noisy_heuristic: a.noisy_heuristic,
            };
            for path in run_bench(&plan, &a.out)? {
                log::info!("wrote {}", path.display());
            }
        }
        Command::RewardFit { log, out, l2, config } => {
            let names = config
                .map(|p| SpaceConfig::load(&p).map(|c| c.space().names().map(String::from).collect()))
                .transpose()?;
            let fitted = reward_fit(&log, l2, names)?;
            std::fs::write(&out, serde_json::to_string_pretty(&fitted)?)
                .with_context(|| format!("writing {}", out.display()))?;
            log::info!("fitted {} weights on {} pairs; wrote {}", fitted.model.weights.len(), fitted.model.pairs, out.display());
        }
        Command::Serve { config, render_cmd, heuristic_cmd, hook_timeout, media_type, state_dir, port, host } => {
            let config = SpaceConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let timeout = Duration::from_secs(hook_timeout);
            let hooks = Hooks {
                renderer: render_cmd.map(|c| {
                    Arc::new(CommandHook::new(c).with_timeout(timeout).with_media_type(media_type)) as Arc<_>
                }),
                scorer: heuristic_cmd.map(|c| Arc::new(CommandHook::new(c).with_timeout(timeout)) as Arc<_>),
            };
            let store = Arc::new(SessionStore::open(&state_dir, Some(config), hooks)?);
            let addr = SocketAddr::new(host, port);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
                log::info!("serving on http://{addr}");
                axum::serve(listener, server::router(store)).await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
    }
    Ok(())
}
