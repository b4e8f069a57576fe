use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use latent_adjust::fdr::FdrMethod;
use latent_adjust::omega::DEFAULT_CLAMP_EPS;
use latent_adjust::Error;
use latent_adjust_cli::{
    adjust_command, error_json, parse_methods, simulate_command, validate_command, AdjustConfig,
};

#[derive(Parser)]
#[command(name = "latent-adjust", version, about = "Latent confounder adjustment for high-dimensional regressions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the bias-corrected estimator to a features × samples matrix.
    Adjust {
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        x: PathBuf,
        /// Nuisance covariates (for example an intercept column).
        #[arg(long)]
        z: Option<PathBuf>,
        /// Number of latent factors, at least 1.
        #[arg(long)]
        k: usize,
        #[arg(long, default_value = "storey")]
        fdr_method: FdrMethod,
        #[arg(long, default_value_t = DEFAULT_CLAMP_EPS)]
        clamp_eps: f64,
        /// Comparators to report as well: adjusted_uncorrected, unadjusted.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        /// The response file is samples × features.
        #[arg(long)]
        transpose: bool,
    },
    /// Run the simulation study described by a key = value config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a validation suite and print one line per criterion.
    Validate {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
    },
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn set_threads(threads: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Adjust {
            y,
            x,
            z,
            k,
            fdr_method,
            clamp_eps,
            methods,
            out,
            summary,
            threads,
            transpose,
        } => {
            if k == 0 {
                return Err(Failure::Usage(
                    "--k must be at least 1; use --methods unadjusted for a plain OLS comparison".into(),
                ));
            }
            set_threads(threads)?;
            let mut cfg = AdjustConfig::new(y, x, k);
            cfg.z = z;
            cfg.fdr_method = fdr_method;
            cfg.clamp_eps = clamp_eps;
            cfg.transpose = transpose;
            if let Some(list) = methods {
                cfg.methods = parse_methods(&list)?;
            }
            adjust_command(&cfg, &out, &summary)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            config,
            reps,
            seed,
            out,
            threads,
        } => {
            set_threads(threads)?;
            let report = simulate_command(&config, reps, seed, &out)?;
            for s in &report.summary {
                let fdp: Vec<String> = s.mean_fdp.iter().map(|v| format!("{v:.4}")).collect();
                println!(
                    "{}\tmean_fdp=[{}]\tcoverage={:.4}\trmse={:.4}",
                    s.method,
                    fdp.join(","),
                    s.coverage,
                    s.rmse
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { suite, seed, threads } => {
            if !latent_adjust::validation::SUITES.contains(&suite.as_str()) {
                return Err(Failure::Usage(format!(
                    "unknown suite `{suite}` (expected one of {})",
                    latent_adjust::validation::SUITES.join(", ")
                )));
            }
            set_threads(threads)?;
            let results = validate_command(&suite, seed)?;
            for r in &results {
                println!("{r}");
            }
            Ok(if results.iter().all(|r| r.pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_json("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("{}", error_json("usage", &msg));
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string()));
            ExitCode::from(1)
        }
    }
}
