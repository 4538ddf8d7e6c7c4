use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use wmlab::harness::experiments::{write_summary, ExperimentOutput};
use wmlab::harness::{run_named, ExperimentConfig, EXPERIMENTS};
use wmlab::Error;

/// Trajectory-persistent adversarial attacks on recurrent world models.
#[derive(Debug, Parser)]
#[command(name = "wmlab", version)]
struct Cli {
    /// TOML config file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory [default: $WMLAB_OUT or ./results].
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Monte Carlo trial count, overriding the config file.
    #[arg(long, global = true)]
    trials: Option<usize>,

    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Exit with status 3 when an acceptance property fails.
    #[arg(long, global = true)]
    check: bool,

    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// GRU error curves and amplification.
    Core,
    /// GRU against the RSSM proxy.
    ArchCompare,
    /// Adversarial fine-tuning and the budget sweep.
    Mitigate,
    /// Cumulative reward gaps.
    RewardGap,
    /// Risk estimators on the synthetic testbed.
    Risk,
    /// Finite-difference checks of every differentiable objective.
    Gradcheck,
    /// Every experiment above.
    All,
    /// Print the effective config as TOML.
    ShowConfig,
}

impl Command {
    fn experiments(&self) -> Vec<&'static str> {
        match self {
            Command::Core => vec!["core"],
            Command::ArchCompare => vec!["arch-compare"],
            Command::Mitigate => vec!["mitigate"],
            Command::RewardGap => vec!["reward-gap"],
            Command::Risk => vec!["risk"],
            Command::Gradcheck => vec!["gradcheck"],
            Command::All => EXPERIMENTS.to_vec(),
            Command::ShowConfig => vec![],
        }
    }
}

const EXIT_INVALID: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter(_) | Error::Parse { .. } => EXIT_INVALID,
        _ => EXIT_RUNTIME,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.master_seed = s;
    }
    if let Some(n) = cli.trials {
        config.trials = n;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("WMLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn report(o: &ExperimentOutput, out: &Path, secs: f64) {
    println!("[{}]", o.name);
    println!("  elapsed {secs:.2}s");
    for c in &o.checks {
        println!("  {} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for f in &o.files {
        println!("  wrote {}", f.strip_prefix(out).unwrap_or(f).display());
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    if let Command::ShowConfig = cli.command {
        print!("{}", config.to_toml());
        return ExitCode::SUCCESS;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(EXIT_INVALID);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool set once");
    }

    let out = out_dir(&cli);
    let mut outputs = Vec::new();
    for name in cli.command.experiments() {
        let start = Instant::now();
        match run_named(name, &config, &out) {
            Ok(o) => {
                if !cli.quiet {
                    report(&o, &out, start.elapsed().as_secs_f64());
                }
                outputs.push(o);
            }
            Err(e) => {
                eprintln!("error in {name}: {e}");
                return ExitCode::from(exit_code(&e));
            }
        }
    }
    if let Err(e) = write_summary(&out, &outputs) {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    let failed: Vec<&str> =
        outputs.iter().flat_map(|o| &o.checks).filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let gradcheck_failed = outputs.iter().any(|o| o.name == "gradcheck" && o.checks.iter().any(|c| !c.passed));
    if !failed.is_empty() && (cli.check || gradcheck_failed) {
        eprintln!("{} check(s) failed: {}", failed.len(), failed.join(", "));
        return ExitCode::from(EXIT_CHECK);
    }
    ExitCode::SUCCESS
}
