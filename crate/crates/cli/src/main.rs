use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spadfuse_cli::pipeline::{self, Overrides};
use spadfuse_cli::{CliError, CliResult, Manifest, RunConfig};
use spadfuse_core::snr::{log_grid, reference_grid, SnrModels};
use spadfuse_core::Method;

#[derive(Parser)]
#[command(name = "spadfuse", version, about = "SPAD + event camera simulation and fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_bins: Option<usize>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    adaptive: bool,
    #[arg(long)]
    u_threshold: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Edi,
    Nedi,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate binary SPAD frames, events and ground truth.
    Simulate(RunArgs),
    /// Deblur the aggregate windows of a simulated dataset.
    Deblur {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_bins: Option<usize>,
        #[arg(long, value_enum, default_value = "nedi")]
        method: MethodArg,
    },
    /// Fuse events and SPAD frames of a simulated dataset.
    Fuse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_bins: Option<usize>,
        #[command(flatten)]
        filter: FilterArgs,
    },
    /// Emit SNR-vs-flux curves.
    Snr {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        flux_min: f64,
        #[arg(long, default_value_t = 1e10)]
        flux_max: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Use the grid of the bundled reference curves.
        #[arg(long)]
        reference_grid: bool,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.3, 1.0])]
        delta_phi: Vec<f64>,
        /// JSON file overriding the model constants.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// MTF of static, fused and naive captures of a rotating Siemens star.
    Mtf(RunArgs),
    /// Score a `fuse` output against the scene.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate, reconstruct with every method and report.
    E2e {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        filter: FilterArgs,
    },
}

fn filter_overrides(f: &FilterArgs) -> Overrides {
    Overrides {
        adaptive: f.adaptive.then_some(true),
        u_threshold: f.u_threshold,
        ..Overrides::default()
    }
}

fn load(run: &RunArgs, extra: Overrides) -> CliResult<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&run.config)?;
    Overrides {
        seed: run.seed,
        n_bins: run.n_bins,
        ..extra
    }
    .apply(&mut cfg)?;
    let out = run
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Config("no output directory (--out or config.out)".into()))?;
    Ok((cfg, out))
}

fn report(out: &Path, m: &Manifest) {
    println!("{} -> {} ({} artifacts)", m.pipeline, out.display(), m.artifacts.len());
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(args) => {
            let (cfg, out) = load(&args, Overrides::default())?;
            report(&out, &pipeline::run_simulate(&cfg, &out)?);
        }
        Command::Deblur {
            input,
            out,
            n_bins,
            method,
        } => {
            let method = match method {
                MethodArg::Edi => Method::Edi,
                MethodArg::Nedi => Method::Nedi,
            };
            let o = Overrides {
                n_bins,
                ..Overrides::default()
            };
            report(&out, &pipeline::run_deblur(&input, &out, &o, method)?);
        }
        Command::Fuse {
            input,
            out,
            n_bins,
            filter,
        } => {
            let o = Overrides {
                n_bins,
                ..filter_overrides(&filter)
            };
            report(&out, &pipeline::run_fuse(&input, &out, &o)?);
        }
        Command::Snr {
            out,
            flux_min,
            flux_max,
            points,
            reference_grid: use_ref,
            delta_phi,
            models,
        } => {
            let models = match models {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                    serde_json::from_str::<SnrModels>(&text).map_err(|e| CliError::Config(e.to_string()))?
                }
                None => SnrModels::default(),
            };
            if delta_phi.iter().any(|d| !(*d > 0.0)) {
                return Err(CliError::Config("--delta-phi values must be > 0".into()));
            }
            let grid = if use_ref {
                reference_grid()
            } else {
                log_grid(flux_min, flux_max, points)?
            };
            report(&out, &pipeline::run_snr(&out, &grid, &delta_phi, &models)?);
        }
        Command::Mtf(args) => {
            let (cfg, out) = load(&args, Overrides::default())?;
            report(&out, &pipeline::run_mtf(&cfg, &out)?);
        }
        Command::Eval { input, out } => {
            report(&out, &pipeline::run_eval(&input, &out)?);
        }
        Command::E2e { run, filter } => {
            let (cfg, out) = load(&run, filter_overrides(&filter))?;
            let (m, rep) = pipeline::run_e2e(&cfg, &out)?;
            print!("{}", rep.table_csv());
            report(&out, &m);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
