use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use uwsvc_core::report::{self, ExitStatus};
use uwsvc_core::scenario::{self, ConfigError, ScenarioConfig};
use uwsvc_core::{selftest, sweep};

const OUT_DIR_ENV: &str = "UWSVC_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "uwsvc-out";

/// Cooperative underwater video multicast simulator.
#[derive(Parser)]
#[command(name = "uwsvc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario and write events, metrics, rates and a summary.
    Run {
        config: PathBuf,
        /// Output directory [default: $UWSVC_OUT_DIR, else ./uwsvc-out]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Power profile to run [default: the scenario's active profile]
        #[arg(long)]
        profile: Option<String>,
    },
    /// Broadcast rate against the number of weakest receivers shut down.
    Sweep {
        config: PathBuf,
        /// Shutdown counts as `K` or `A..K`, both ends inclusive [default: 0..(receivers - 1)]
        #[arg(long, value_name = "RANGE", value_parser = parse_range)]
        shutdowns: Option<(usize, usize)>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the built-in oracle suites.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let num = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
        None => (0, num(s)?),
    };
    if lo > hi {
        return Err(format!("empty range {s}"));
    }
    Ok((lo, hi))
}

fn out_dir(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
    })
    .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, ExitStatus> {
    match scenario::load_config(path) {
        Ok(mut cfg) => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            Ok(cfg)
        }
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            Err(match e {
                ConfigError::Io { .. } => ExitStatus::Io,
                _ => ExitStatus::Config,
            })
        }
    }
}

fn run(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    profile: Option<String>,
) -> ExitStatus {
    let cfg = match load(config, seed) {
        Ok(c) => c,
        Err(s) => return s,
    };
    if let Some(p) = &profile {
        if cfg.profile(Some(p)).is_none() {
            eprintln!("error: unknown power profile {p:?}");
            return ExitStatus::Config;
        }
    }
    let dir = out_dir(out);
    match report::run_to_dir(&cfg, profile.as_deref(), &dir) {
        Ok(s) => {
            match (&s.frv, &s.error) {
                (Some(frv), None) => println!(
                    "profile {}: FRV {frv} after {} iteration(s), {} events",
                    s.profile, s.iterations, s.events
                ),
                (_, Some(e)) => eprintln!("error: {e}"),
                (None, None) => {}
            }
            println!("wrote {}", dir.display());
            s.status
        }
        Err(e) => {
            eprintln!("error: writing {}: {e}", dir.display());
            ExitStatus::Io
        }
    }
}

fn sweep_cmd(
    config: &Path,
    shutdowns: Option<(usize, usize)>,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> ExitStatus {
    let cfg = match load(config, seed) {
        Ok(c) => c,
        Err(s) => return s,
    };
    let lo = shutdowns.map_or(0, |r| r.0);
    let rows = shutdowns
        .map(|r| Ok(r.1))
        .unwrap_or_else(|| sweep::max_shutdowns(&cfg))
        .and_then(|k| sweep::rate_sweep(&cfg, k));
    let rows = match rows {
        Ok(r) => r
            .into_iter()
            .filter(|r| r.shutdowns >= lo)
            .collect::<Vec<_>>(),
        Err(e) => {
            eprintln!("error: {e}");
            return match &e {
                sweep::SweepError::Setup(m) => ExitStatus::from_error(m),
                _ => ExitStatus::Config,
            };
        }
    };
    println!(
        "{:<10} {:>9} {:>9} {:>14} {:>14}",
        "profile", "shutdowns", "feasible", "avg_rate_bps", "min_rate_bps"
    );
    for r in &rows {
        println!(
            "{:<10} {:>9} {:>9} {:>14.1} {:>14.1}",
            r.profile, r.shutdowns, r.feasible, r.avg_rate, r.min_rate
        );
    }
    println!("monotone: {}", sweep::is_monotone(&rows));
    let dir = out_dir(out);
    let written = std::fs::create_dir_all(&dir).and_then(|_| {
        let f = std::fs::File::create(dir.join(report::RATES_FILE))?;
        report::write_rates(std::io::BufWriter::new(f), &rows)
    });
    match written {
        Ok(()) => {
            println!("wrote {}", dir.join(report::RATES_FILE).display());
            ExitStatus::Ok
        }
        Err(e) => {
            eprintln!("error: writing {}: {e}", dir.display());
            ExitStatus::Io
        }
    }
}

fn selftest_cmd(seed: u64) -> ExitStatus {
    let reports = selftest::run_all(seed);
    for r in &reports {
        println!("{r}");
    }
    if reports.iter().all(|r| r.passed()) {
        ExitStatus::Ok
    } else {
        ExitStatus::SelftestFailed
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                ExitStatus::Config.code() as u8
            } else {
                0
            });
        }
    };
    let status = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            profile,
        } => run(&config, out, seed, profile),
        Command::Sweep {
            config,
            shutdowns,
            out,
            seed,
        } => sweep_cmd(&config, shutdowns, out, seed),
        Command::Selftest { seed } => selftest_cmd(seed),
    };
    ExitCode::from(status.code() as u8)
}
