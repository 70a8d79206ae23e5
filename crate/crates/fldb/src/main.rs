use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fldb::output::{group_summaries, write_summary};
use fldb::{RunError, SimConfig, SweepAxis};

/// Simulate federated contextual linear dueling bandits.
#[derive(Parser)]
#[command(name = "fldb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration over its seeds and write the regret CSV.
    Run(Overrides),
    /// Vary one parameter and write a combined CSV.
    Sweep {
        /// Parameter to vary: N, tau, sigma or K.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    /// Flat key = value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// LDB, FLDB-GD or FLDB-OGD.
    #[arg(long)]
    algo: Option<String>,
    #[arg(long = "T")]
    horizon: Option<String>,
    #[arg(long = "N")]
    agents: Option<String>,
    #[arg(long = "K")]
    arms: Option<String>,
    #[arg(long = "d")]
    dim: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// Ridge parameter; defaults to 1/T.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    /// Reward-gap bound B used to derive kappa.
    #[arg(long = "gap_bound", alias = "gap-bound")]
    gap_bound: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    /// First seed.
    #[arg(long)]
    seed: Option<String>,
    /// Number of consecutive seeds.
    #[arg(long)]
    runs: Option<String>,
    #[arg(long = "normalize_theta_star", alias = "normalize-theta-star")]
    normalize_theta_star: Option<String>,
    #[arg(long = "recenter_projection", alias = "recenter-projection")]
    recenter_projection: Option<String>,
    /// Ratings file (tab-separated user, item, rating, timestamp).
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long = "n_users", alias = "n-users")]
    n_users: Option<String>,
    #[arg(long = "n_items", alias = "n-items")]
    n_items: Option<String>,
    #[arg(long = "feature_rows", alias = "feature-rows")]
    feature_rows: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<String>,
}

impl Overrides {
    fn resolve(&self) -> Result<SimConfig, RunError> {
        let mut cfg = match &self.config {
            Some(path) => SimConfig::from_file(path)?,
            None => SimConfig::default(),
        };
        let pairs = [
            ("algo", &self.algo),
            ("T", &self.horizon),
            ("N", &self.agents),
            ("K", &self.arms),
            ("d", &self.dim),
            ("tau", &self.tau),
            ("alpha", &self.alpha),
            ("lambda", &self.lambda),
            ("delta", &self.delta),
            ("sigma", &self.sigma),
            ("gap_bound", &self.gap_bound),
            ("kappa", &self.kappa),
            ("seed", &self.seed),
            ("runs", &self.runs),
            ("normalize_theta_star", &self.normalize_theta_star),
            ("recenter_projection", &self.recenter_projection),
            ("dataset", &self.dataset),
            ("n_users", &self.n_users),
            ("n_items", &self.n_items),
            ("feature_rows", &self.feature_rows),
            ("workers", &self.workers),
            ("out", &self.out),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<(), RunError> {
    let (cfg, result) = match cli.command {
        Command::Run(o) => {
            let cfg = o.resolve()?;
            let result = fldb::run(&cfg)?;
            (cfg, result)
        }
        Command::Sweep {
            axis,
            values,
            overrides,
        } => {
            let cfg = overrides.resolve()?;
            let axis: SweepAxis = axis.parse()?;
            let result = fldb::sweep(&cfg, axis, &values)?;
            (cfg, result)
        }
    };
    if cfg.out.is_none() {
        print!("{}", result.csv());
    } else {
        write_summary(io::stdout().lock(), &group_summaries(&result.trials)).map_err(|source| RunError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return if usage_error { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
