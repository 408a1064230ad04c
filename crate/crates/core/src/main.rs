use std::path::PathBuf;
use std::process::ExitCode;

use chancepred::config::RunConfig;
use chancepred::pipeline::{cmd_calibrate, cmd_evaluate, cmd_simulate, cmd_train, Layout};
use chancepred::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "chancepred", version, about = "Calibrated safety-chance predictors with conformal bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: Global,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate episodes and write train/calib/valid/test datasets per horizon.
    Simulate,
    /// Train the requested predictor kinds for every horizon.
    Train,
    /// Fit calibrators on the calibration split and conformal bounds on the validation split.
    Calibrate,
    /// Compute test metrics, reliability diagrams and empirical coverage.
    Evaluate,
}

#[derive(Args, Debug)]
struct Global {
    /// Root seed every stage derives its randomness from.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// File of `key = value` lines applied before flag overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Window length m.
    #[arg(long, short = 'm', global = true)]
    window: Option<usize>,

    /// Horizons as `a..b` or a comma list.
    #[arg(long, global = true)]
    horizons: Option<String>,

    /// Adaptive bins Q.
    #[arg(long, global = true)]
    bins: Option<usize>,

    /// Bootstrap resamples per bin, M.
    #[arg(long, global = true)]
    resamples: Option<usize>,

    /// Draws per resample, N.
    #[arg(long, global = true)]
    resample_size: Option<usize>,

    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// `standard` or `paper`.
    #[arg(long, global = true)]
    quantile_rule: Option<String>,

    #[arg(long, global = true)]
    episodes: Option<usize>,

    /// Comma list of monolithic, composite_image, composite_latent.
    #[arg(long, global = true)]
    kinds: Option<String>,

    /// Also build the controller-independent datasets and predictors.
    #[arg(long, global = true)]
    independent: bool,

    /// Any other parameter, as `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Global {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for kv in &self.overrides {
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                chancepred::Error::InvalidParameter(format!("--set expects KEY=VALUE, got `{kv}`"))
            })?;
            cfg.set(key, value)?;
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("window", self.window.map(|v| v.to_string())),
            ("horizons", self.horizons.clone()),
            ("bins", self.bins.map(|v| v.to_string())),
            ("resamples", self.resamples.map(|v| v.to_string())),
            ("resample_size", self.resample_size.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("quantile_rule", self.quantile_rule.clone()),
            ("episodes", self.episodes.map(|v| v.to_string())),
            ("kinds", self.kinds.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        if self.independent {
            cfg.independent = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.global.config()?;
    let layout = Layout::new(&cli.global.out_dir);
    let mut log = |line: &str| println!("{line}");
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &layout, &mut log),
        Command::Train => cmd_train(&cfg, &layout, &mut log),
        Command::Calibrate => cmd_calibrate(&cfg, &layout, &mut log),
        Command::Evaluate => cmd_evaluate(&cfg, &layout, &mut log),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
