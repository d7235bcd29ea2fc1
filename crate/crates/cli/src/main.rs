use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use se3_gic::control::ErrorKind;
use se3_gic::environment::SceneCase;
use se3_gic::experiments::{self, dataset_path, policy_path, Combo, ExperimentConfig};
use se3_gic_teleop::{ServerConfig, SessionConfig};

#[derive(Parser)]
#[command(name = "gic", version, about = "Geometric impedance control experiments")]
struct Cli {
    /// Experiment configuration (JSON); missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record scripted-expert demonstrations on the default scene (GCEV and CEV datasets).
    Collect {
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Behaviour-clone a policy from a dataset.
    Train {
        #[arg(long, value_parser = parse::<ErrorKind>)]
        error: ErrorKind,
        /// Defaults to `<out-dir>/demos_<error>.jsonl`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Defaults to `<out-dir>/policy_<error>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate controller/error pairings on the scenes and print the success table.
    Eval {
        #[arg(long)]
        gcev_policy: Option<PathBuf>,
        #[arg(long)]
        cev_policy: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_delimiter = ',', value_parser = parse::<SceneCase>)]
        cases: Option<Vec<SceneCase>>,
        #[arg(long, value_delimiter = ',', value_parser = parse::<Combo>)]
        combos: Option<Vec<Combo>>,
    },
    /// Invariance and equivariance audit; exits with 2 if any property fails.
    Propcheck {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
    },
    /// Write a per-step CSV trace of one episode.
    Trace {
        #[arg(long, value_parser = parse::<Combo>, default_value = "GIC+GCEV")]
        combo: Combo,
        #[arg(long, value_parser = parse::<SceneCase>, default_value = "default")]
        case: SceneCase,
        /// Defaults to the policy matching the combo's error vector in `<out-dir>`.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        episode_seed: u64,
        /// Defaults to `<out-dir>/trace_<combo>_<case>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the teleoperation server.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: SocketAddr,
        #[arg(long, value_parser = parse::<SceneCase>, default_value = "default")]
        case: SceneCase,
        /// Simulated seconds per wall-clock second; 0 runs unpaced.
        #[arg(long, default_value_t = 1.0)]
        realtime_factor: f64,
    },
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

enum Failure {
    Property,
    MissingArtifact(String),
    Other(anyhow::Error),
}

impl From<se3_gic::Error> for Failure {
    fn from(e: se3_gic::Error) -> Self {
        match e {
            se3_gic::Error::MissingPolicy(m) => Failure::MissingArtifact(m),
            se3_gic::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                Failure::MissingArtifact(io.to_string())
            }
            e => Failure::Other(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn require(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::MissingArtifact(format!("{} not found", path.display())))
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Property) => ExitCode::from(2),
        Err(Failure::MissingArtifact(m)) => {
            eprintln!("missing artifact: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => {
            require(p)?;
            ExperimentConfig::load(p)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    let out = cli.out_dir.as_path();
    match cli.command {
        Cmd::Collect { trajectories, noise } => {
            if let Some(n) = trajectories {
                cfg.trajectories = n;
            }
            if let Some(s) = noise {
                cfg.noise_sigma = s;
            }
            let c = experiments::cmd_collect(&cfg, out)?;
            println!(
                "expert succeeded in {}/{} trajectories; {} records per dataset",
                c.succeeded,
                c.attempted,
                c.gcev.len()
            );
            for kind in [ErrorKind::Gcev, ErrorKind::Cev] {
                println!("wrote {}", dataset_path(out, kind).display());
            }
        }
        Cmd::Train { error, dataset, out: target, epochs } => {
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            let dataset = dataset.unwrap_or_else(|| dataset_path(out, error));
            require(&dataset)?;
            let target = target.unwrap_or_else(|| policy_path(out, error));
            let r = experiments::cmd_train(&dataset, error, &cfg.train, &target)?;
            println!(
                "{} epochs, best validation loss {:.5} at epoch {}; wrote {}",
                r.epochs,
                r.best_validation_loss,
                r.best_epoch,
                target.display()
            );
        }
        Cmd::Eval { gcev_policy, cev_policy, episodes, cases, combos } => {
            if let Some(n) = episodes {
                cfg.episodes_per_cell = n;
            }
            if let Some(c) = cases {
                cfg.cases = c;
            }
            if let Some(c) = combos {
                cfg.combos = c;
            }
            let g = gcev_policy.unwrap_or_else(|| policy_path(out, ErrorKind::Gcev));
            let c = cev_policy.unwrap_or_else(|| policy_path(out, ErrorKind::Cev));
            let table = experiments::cmd_eval(&cfg, Some(&g), Some(&c), out)?;
            println!("success rate (%), {} episodes per cell", cfg.episodes_per_cell);
            print!("{}", table.render());
            println!("wrote {}", out.join("episodes.csv").display());
        }
        Cmd::Propcheck { samples, tolerance } => {
            let report = experiments::cmd_propcheck(samples, tolerance, cfg.seed)?;
            std::fs::create_dir_all(out).map_err(se3_gic::Error::from)?;
            let path = out.join("propcheck.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report).map_err(se3_gic::Error::from)?)
                .map_err(se3_gic::Error::from)?;
            print!("{}", report.summary());
            println!("wrote {}", path.display());
            if !report.passed() {
                return Err(Failure::Property);
            }
        }
        Cmd::Trace { combo, case, policy, episode_seed, out: target } => {
            let policy = policy.unwrap_or_else(|| policy_path(out, combo.error_kind));
            require(&policy)?;
            let name = combo.to_string().replace('+', "_").to_lowercase();
            let target = target.unwrap_or_else(|| out.join(format!("trace_{name}_{case}.csv")));
            let r = experiments::cmd_trace(&cfg, &policy, combo, case, episode_seed, &target)?;
            println!(
                "{combo} on {case}: {} after {} steps; wrote {}",
                if r.success { "inserted" } else { "not inserted" },
                r.steps,
                target.display()
            );
        }
        Cmd::Serve { bind, case, realtime_factor } => {
            let config = ServerConfig {
                bind,
                session: SessionConfig { case, seed: cfg.seed, ..SessionConfig::default() },
                realtime_factor: (realtime_factor > 0.0).then_some(realtime_factor),
                ..ServerConfig::default()
            };
            let model = cfg.model()?;
            let rt = tokio::runtime::Runtime::new().map_err(se3_gic::Error::from)?;
            rt.block_on(async {
                let handle = se3_gic_teleop::spawn(model, config).await.map_err(anyhow::Error::from)?;
                println!("serving ws://{}/session (ctrl-c to stop)", handle.addr);
                tokio::signal::ctrl_c().await.map_err(anyhow::Error::from)?;
                handle.shutdown().await.map_err(anyhow::Error::from)
            })?;
        }
    }
    Ok(())
}
