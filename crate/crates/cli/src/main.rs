//! `traclin`: scenario runner, load checker, flow sweep and inequality probe.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use traclin::domain::{build_box_mesh, BoxDomain};
use traclin::experiments::{exit_code, probe_inequalities, run_flow, run_scenario, ScenarioConfig, ScenarioReport};
use traclin::loads::{check_equilibrium, compatibility_margin, Classification};
use traclin::Error;

#[derive(Parser)]
#[command(name = "traclin", version, about = "Pure-traction incompressible elasticity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Threads for the per-h solves; overrides the config.
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory; defaults to the config's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report equilibrium and compatibility of the configured load.
    CheckLoads {
        #[arg(long)]
        config: PathBuf,
    },
    /// Flow recovery errors against the flux bounds for each h.
    Flow {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Korn and rigidity quotients of random fields.
    Probe {
        #[arg(long, default_value_t = 8)]
        mesh_n: usize,
        #[arg(long, default_value_t = 50)]
        fields: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Growth exponent of the rigidity quotient and Lebesgue exponent of the Korn quotient.
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn out_dir(config: &Path, cfg: &ScenarioConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| config.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn finish(report: &ScenarioReport, dir: &Path, stem: &str) -> Result<ExitCode, Error> {
    let (csv, json) = report.write(dir, stem)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn execute(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::Run { config, workers, out } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let dir = out_dir(&config, &cfg, out);
            let report = run_scenario(&cfg)?;
            let stem = cfg.output.stem.clone().unwrap_or_else(|| cfg.id.stem().to_string());
            finish(&report, &dir, &stem)
        }
        Command::CheckLoads { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            let eq = check_equilibrium(&cfg.load, &cfg.domain)?;
            let comp = compatibility_margin(&cfg.load, &cfg.domain)?;
            let doc = serde_json::json!({ "equilibrium": eq, "compatibility": comp });
            println!("{}", serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?);
            let ok = eq.pass && comp.classification != Classification::Violating;
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(4) })
        }
        Command::Flow { config, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let dir = out_dir(&config, &cfg, out);
            let report = run_flow(&cfg)?;
            let stem = cfg.output.stem.clone().map_or_else(|| "flow".to_string(), |s| format!("{s}_flow"));
            finish(&report, &dir, &stem)
        }
        Command::Probe { mesh_n, fields, seed, p, out } => {
            let mesh = build_box_mesh(&BoxDomain::unit(), mesh_n).map_err(|e| Error::Config(e.to_string()))?;
            let report = probe_inequalities(&mesh, seed, fields, p)?;
            finish(&report, &out, "probe")
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
