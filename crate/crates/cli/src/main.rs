use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nsfide_cli::{parse_config, run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "nsfide", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("NSFIDE_GIT_REV"), ")"))]
#[command(about = "Simulate neutral stochastic integro-differential equations driven by fractional Brownian motion")]
struct Cli {
    /// TOML run configuration; the built-in reference model when omitted.
    #[arg(long, global = true, env = "NSFIDE_CONFIG")]
    config: Option<PathBuf>,
    /// Override the number of Monte Carlo paths.
    #[arg(long, global = true, env = "NSFIDE_PATHS")]
    paths: Option<usize>,
    /// Override the master seed.
    #[arg(long, global = true, env = "NSFIDE_SEED")]
    seed: Option<u64>,
    /// Output directory (default: output.dir from the config, else `out`).
    #[arg(long, global = true, env = "NSFIDE_OUT")]
    out: Option<PathBuf>,
    /// Worker threads; affects speed only.
    #[arg(long, global = true, env = "NSFIDE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Moments of the solution and its derivatives (moments.csv).
    Simulate,
    /// Density criterion per path (density.csv).
    Density,
    /// Resolvent table (resolvent.csv).
    Resolvent,
    /// Empirical fBm covariance against the exact one.
    FbmTest,
    /// Run the full oracle suite.
    Validate,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Simulate => Command::Simulate,
            Cmd::Density => Command::Density,
            Cmd::Resolvent => Command::Resolvent,
            Cmd::FbmTest => Command::FbmTest,
            Cmd::Validate => Command::Validate,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            parse_config(&text).map_err(|e| format!("{}:\n{e}", p.display()))?
        }
        None => RunConfig::builtin(),
    };
    if let Some(n) = cli.paths {
        cfg.monte_carlo.paths = n;
        cfg.fbm_test.paths = n;
    }
    if let Some(s) = cli.seed {
        cfg.monte_carlo.seed = s;
    }
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(problems.join("\n"));
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error:\n{e}");
            return ExitCode::from(2);
        }
    };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.threads {
        pool = pool.num_threads(k);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start worker threads: {e}");
            return ExitCode::from(3);
        }
    };
    let command = Command::from(cli.command);
    let outcome = match pool.install(|| run(command, &cfg)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{} failed: {e}", command.name());
            return ExitCode::from(3);
        }
    };
    match outcome.bundle.write(&out) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(3);
        }
    }
    for a in &outcome.audits {
        println!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    if outcome.passed() {
        ExitCode::SUCCESS
    } else {
        for a in outcome.failures() {
            eprintln!("audit failed: {}", a.name);
        }
        ExitCode::from(1)
    }
}
