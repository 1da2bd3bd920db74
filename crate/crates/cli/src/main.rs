//! `rsgm`: train, sample and evaluate score-based generative models on
//! manifolds.

mod run;

use clap::{Args, Parser, Subcommand};
use rsgm_core::data::{density_grid, mmd, MmdConfig, Part};
use rsgm_core::likelihood::nll;
use rsgm_core::nn::{read_checkpoint, write_checkpoint, ParamVector, ScoreNet};
use rsgm_core::sde::{sample_reverse_batch, write_samples};
use rsgm_core::train::{init_params, train, write_trace};
use rsgm_core::validate::{corrupted_exp, run_suite, Suite, ValidateOptions};
use run::RunConfig;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or missing inputs (exit 2).
    Config(String),
    /// Numerical abort (exit 3).
    Numerical(String),
    /// Checkpoint written for another network (exit 4).
    HashMismatch(String),
    /// Failed validation checks (exit 1).
    Validation(String),
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::HashMismatch(_) => 4,
            CliError::Validation(_) | CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) | CliError::HashMismatch(m) | CliError::Validation(m) | CliError::Other(m) => m,
        }
    }
}

impl From<rsgm_core::Error> for CliError {
    fn from(e: rsgm_core::Error) -> Self {
        use rsgm_core::Error as E;
        match e {
            E::NonFinite(_) | E::MaxStepsExceeded(_) | E::StiffnessDetected { .. } => CliError::Numerical(e.to_string()),
            E::SpecHashMismatch { .. } => CliError::HashMismatch(e.to_string()),
            E::InvalidArgument(_) | E::MalformedRow { .. } | E::UnsupportedScheme { .. } | E::UnsupportedManifold(_) | E::NonCompact(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "rsgm", version, about = "Score-based generative models on Riemannian manifolds")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides, self.seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a score network; writes checkpoint.bin, trace.txt and manifest.txt.
    Train(ConfigArgs),
    /// Draw samples by reverse diffusion into samples.txt.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to checkpoint.bin in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, short, default_value_t = 1000)]
        n: usize,
    },
    /// Per-point log-likelihoods of a data split through the probability-flow ODE.
    Nll {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// train, valid, test or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Model log-density on a latitude/longitude grid of S2.
    Grid {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 90)]
        nlat: usize,
        #[arg(long, default_value_t = 180)]
        nlon: usize,
    },
    /// Run self-check suites and print one line per check.
    Validate {
        /// geometry, heatkernel, grw, losses, ode or all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random cases per geometry check.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Sample size of each MMD estimate in the grw suite.
        #[arg(long, default_value_t = 10_000)]
        mmd_samples: usize,
        /// Replace the exponential map with a slightly wrong one.
        #[arg(long, hide = true)]
        corrupt_exp: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train(a) => cmd_train(&a.resolve()?),
        Command::Sample { cfg, checkpoint, n } => cmd_sample(&cfg.resolve()?, checkpoint.as_deref(), n),
        Command::Nll { cfg, checkpoint, split } => {
            let part: Part = split.parse().map_err(|e: rsgm_core::Error| CliError::Config(e.to_string()))?;
            cmd_nll(&cfg.resolve()?, checkpoint.as_deref(), part)
        }
        Command::Grid { cfg, checkpoint, nlat, nlon } => cmd_grid(&cfg.resolve()?, checkpoint.as_deref(), nlat, nlon),
        Command::Validate { suite, seed, samples, mmd_samples, corrupt_exp } => {
            cmd_validate(&suite, ValidateOptions { seed, samples, mmd_samples, exp_hook: corrupt_exp.then_some(corrupted_exp as _) })
        }
    }
}

fn output_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&cfg.output).map_err(|e| CliError::Other(format!("cannot create {}: {e}", cfg.output.display())))?;
    Ok(&cfg.output)
}

fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let data = cfg.load_dataset()?;
    let points = data.part(Part::Train);
    log::info!("training on {} points of {} ({})", points.len(), cfg.manifold, data.provenance);
    let start = Instant::now();
    let every = (cfg.train.iters / 10).max(1);
    let out = train(&points, &cfg.process, &cfg.net, init_params(&cfg.net, cfg.seed), &cfg.loss, &cfg.train, |k, loss| {
        if (k + 1) % every == 0 {
            log::info!("iteration {} loss {loss:.6}", k + 1);
        }
    })?;
    let wall = start.elapsed().as_secs_f64();
    let dir = output_dir(cfg)?;
    write_checkpoint(&dir.join("checkpoint.bin"), &cfg.net, &out.params)?;
    write_trace(&dir.join("trace.txt"), &out.trace)?;
    std::fs::write(dir.join("config.txt"), cfg.raw.to_text())?;
    let manifest = format!(
        "config_hash {}\nspec_hash {}\nseed {}\nthreads {}\niters {}\ndropped {}\nwall_time_s {wall:.3}\n",
        cfg.hash_hex(),
        cfg.net.hash_hex(),
        cfg.seed,
        rayon::current_num_threads(),
        cfg.train.iters,
        out.dropped,
    );
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ScoreNet, CliError> {
    let path = checkpoint.map_or_else(|| cfg.output.join("checkpoint.bin"), Path::to_path_buf);
    if !path.exists() {
        return Err(CliError::Config(format!("checkpoint not found: {}", path.display())));
    }
    let params: ParamVector = read_checkpoint(&path, &cfg.net)?;
    Ok(ScoreNet::new(cfg.net, params)?)
}

fn cmd_sample(cfg: &RunConfig, checkpoint: Option<&Path>, n: usize) -> Result<(), CliError> {
    let net = load_model(cfg, checkpoint)?;
    let samples = sample_reverse_batch(&cfg.process, &net, &cfg.sampler, n, cfg.seed)?;
    let dir = output_dir(cfg)?;
    let path = dir.join("samples.txt");
    write_samples(&path, &cfg.manifold, cfg.seed, &samples)?;
    println!("wrote {} samples to {}", samples.len(), path.display());
    if cfg.dataset.is_some() && samples.len() >= 2 {
        let test = cfg.load_dataset()?.part(Part::Test);
        if test.len() >= 2 {
            let v = mmd(&cfg.manifold, &samples, &test, &MmdConfig::default())?;
            println!("mmd2_vs_test {v:.6e}");
        }
    }
    Ok(())
}

fn cmd_nll(cfg: &RunConfig, checkpoint: Option<&Path>, part: Part) -> Result<(), CliError> {
    let net = load_model(cfg, checkpoint)?;
    let points = cfg.load_dataset()?.part(part);
    if points.is_empty() {
        return Err(CliError::Config(format!("the {part:?} split is empty")));
    }
    let report = nll(&cfg.process, &net, &points, &cfg.ode);
    if report.excluded() == points.len() {
        return Err(CliError::Numerical("the ODE failed at every point".into()));
    }
    let dir = output_dir(cfg)?;
    let path = dir.join(format!("nll-{}.txt", format!("{part:?}").to_lowercase()));
    std::fs::write(&path, report.to_text())?;
    println!(
        "mean_nll {:.6} std_error {:.6} points {} excluded {}",
        report.mean_nll(),
        report.std_error(),
        points.len(),
        report.excluded()
    );
    Ok(())
}

fn cmd_grid(cfg: &RunConfig, checkpoint: Option<&Path>, nlat: usize, nlon: usize) -> Result<(), CliError> {
    let net = load_model(cfg, checkpoint)?;
    let grid = density_grid(&cfg.process, &net, nlat, nlon, &cfg.ode)?;
    let dir = output_dir(cfg)?;
    let path = dir.join("grid.txt");
    std::fs::write(&path, grid.to_text())?;
    println!("wrote {} cells to {} (missing {}, mass {:.4})", grid.cells.len(), path.display(), grid.missing(), grid.total_mass());
    Ok(())
}

fn cmd_validate(suite: &str, opts: ValidateOptions) -> Result<(), CliError> {
    let suites: Vec<Suite> = if suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![suite.parse().map_err(|e: rsgm_core::Error| CliError::Config(e.to_string()))?]
    };
    let mut failed = Vec::new();
    for s in suites {
        let start = Instant::now();
        let report = run_suite(s, &opts)?;
        print!("{}", report.to_text());
        println!(
            "suite {s} status={} checks={} seconds={:.2}",
            if report.passed() { "pass" } else { "fail" },
            report.checks.len(),
            start.elapsed().as_secs_f64()
        );
        failed.extend(report.failures().map(|c| c.name.clone()));
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("failed checks: {}", failed.join(", "))))
    }
}
