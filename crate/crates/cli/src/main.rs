//! `xxchain`: dissipative XX-chain experiments from JSON configs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 physicality abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use xxchain::error::{Error, Result};
use xxchain_cli::commands;
use xxchain_cli::config::{preset_path, ExperimentConfig};

#[derive(Parser)]
#[command(name = "xxchain", version, about = "Dissipative XX qubit chain simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dark-space census from the gcd condition, with a darkness check.
    Dfs(RunArgs),
    /// Integrate the master equation and run the configured analyses.
    Simulate(RunArgs),
    /// Closed-form asymptotics: synchronization verdict and edge series.
    Predict(RunArgs),
    /// Simulation vs closed form past the transient cutoff.
    Compare(RunArgs),
    /// Dense-Liouvillian peripheral spectrum (small chains).
    Oracle(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (JSON).
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset shipped with the tool (fig1a, fig1b, fig2).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory (overrides the config's output_dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Parameter sweep `key:v1,v2,...` or `key:lo..hi:count`; runs fan out
    /// over a worker pool with isolated output directories.
    #[arg(long, value_name = "SPEC")]
    sweep: Option<String>,
    /// Recorded in run metadata; reserved (the dynamics is deterministic).
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
}

impl RunArgs {
    fn load_config(&self) -> Result<ExperimentConfig> {
        let path = match (&self.config, &self.preset) {
            (Some(p), None) => p.clone(),
            (None, Some(name)) => preset_path(name)?,
            (None, None) => {
                return Err(Error::Config("pass --config <path> or --preset <name>".into()))
            }
            (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
        };
        ExperimentConfig::from_path(&path)
    }

    fn out_dir(&self, config: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// `key:v1,v2,...` or `key:lo..hi:count` into per-run parameter values.
fn parse_sweep(spec: &str) -> Result<(String, Vec<f64>)> {
    let (key, rest) = spec
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("sweep spec {spec:?} is not key:values")))?;
    let bad = |what: &str| Error::Config(format!("sweep spec {spec:?}: {what}"));
    let values: Vec<f64> = if let Some((range, count)) = rest.split_once(':') {
        let (lo, hi) = range
            .split_once("..")
            .ok_or_else(|| bad("range form is key:lo..hi:count"))?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad("bad range start"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad("bad range end"))?;
        let count: usize = count.trim().parse().map_err(|_| bad("bad range count"))?;
        if count < 2 {
            return Err(bad("range count must be at least 2"));
        }
        (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect()
    } else {
        rest.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad("bad value list")))
            .collect::<Result<_>>()?
    };
    if values.is_empty() {
        return Err(bad("no values"));
    }
    Ok((key.to_string(), values))
}

fn run_one(command: &Command, config: &ExperimentConfig, dir: &PathBuf, seed: Option<u64>) -> Result<()> {
    match command {
        Command::Dfs(_) => {
            let out = commands::run_dfs(config)?;
            let path = commands::write_dfs(&out, dir)?;
            let r = &out.report;
            println!(
                "g = {}, r = {}, labels {:?}, dark dimension {} (darkness check: {})",
                r.g,
                r.r,
                r.labels,
                out.dark_dim,
                if out.pass { "pass" } else { "FAIL" }
            );
            println!("{}", serde_json::to_string_pretty(&commands::dfs_json(&out)).unwrap());
            eprintln!("wrote {}", path.display());
        }
        Command::Simulate(_) => {
            let sim = commands::run_simulate(config)?;
            let written = commands::write_simulation(config, &sim, dir, seed)?;
            println!(
                "integrated {} records to t = {}; transient cutoff {:?}",
                sim.trajectory.len(),
                config.integrator.t_max,
                sim.trajectory.settling_time(xxchain::dynamics::BRIGHT_TOL),
            );
            for p in &written {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Predict(_) => {
            let out = commands::run_predict(config)?;
            let written = commands::write_predict(&out, config.chain.n, dir)?;
            println!("{}", serde_json::to_string_pretty(&json!({
                "verdict": out.verdict,
                "asymptotic_concurrence": out.asymptotic_concurrence,
            })).unwrap());
            for p in &written {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Compare(_) => {
            let sim = commands::run_simulate(config)?;
            let out = commands::run_compare(config, &sim)?;
            let written = commands::write_compare(&out, config.chain.n, dir)?;
            println!(
                "T* = {}, window end {}, max residual {:e} (site 1: {:e}, site {}: {:e})",
                out.t_star,
                out.window_end,
                out.max_residual(),
                out.max_residual_site1,
                config.chain.n,
                out.max_residual_siten,
            );
            for p in &written {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Oracle(_) => {
            let out = commands::run_oracle(config)?;
            let written = commands::write_oracle(&out, dir)?;
            match out.expected_count {
                Some(e) => println!(
                    "peripheral count {} (census predicts {})",
                    out.spectrum.count, e
                ),
                None => println!(
                    "peripheral count {} (thermal noise; census prediction not applicable)",
                    out.spectrum.count
                ),
            }
            for p in &written {
                eprintln!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let args = match &cli.command {
        Command::Dfs(a)
        | Command::Simulate(a)
        | Command::Predict(a)
        | Command::Compare(a)
        | Command::Oracle(a) => a,
    };
    let config = args.load_config()?;
    let base_dir = args.out_dir(&config);

    let Some(spec) = &args.sweep else {
        return run_one(&cli.command, &config, &base_dir, args.seed);
    };

    let (key, values) = parse_sweep(spec)?;
    // Validate every variant before launching any of them.
    let mut variants = Vec::new();
    for &v in &values {
        let mut c = config.clone();
        c.apply_parameter(&key, v)?;
        let dir = base_dir.join(format!("{key}={v}"));
        variants.push((v, c, dir));
    }
    std::fs::create_dir_all(&base_dir)?;
    let manifest = json!({
        "sweep": { "parameter": key, "values": values },
        "seed": args.seed,
        "seed_note": "reserved; the dynamics is deterministic",
        "runs": variants
            .iter()
            .map(|(v, _, dir)| json!({ "value": v, "dir": dir.file_name().unwrap().to_str() }))
            .collect::<Vec<_>>(),
    });
    std::fs::write(
        base_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap() + "\n",
    )?;

    let failures: Vec<String> = variants
        .par_iter()
        .filter_map(|(v, c, dir)| {
            run_one(&cli.command, c, dir, args.seed)
                .err()
                .map(|e| format!("{key} = {v}: {e}"))
        })
        .collect();
    if failures.is_empty() {
        println!("sweep over {} values of {key} complete", values.len());
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{} of {} sweep runs failed: {}",
            failures.len(),
            values.len(),
            failures.join("; ")
        )))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Physicality { .. } => 3,
        Error::InvalidChain(_)
        | Error::InvalidNoise(_)
        | Error::InvalidState(_)
        | Error::SiteOutOfRange { .. }
        | Error::SectorMissing { .. }
        | Error::BasisMismatch(_)
        | Error::TruncationExceeded { .. }
        | Error::TooLarge(_)
        | Error::Config(_) => 2,
        Error::Linalg(_) | Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
