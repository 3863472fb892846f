//! `ipg` command-line front end.
//!
//! Exit codes: 0 all verdicts pass, 1 verdict failure, 2 configuration
//! error, 3 numerical divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ipg_harness::{
    audit, collect_report, expand_sweep, run_experiment, simulate_truth, write_audit, write_trajectory, ExperimentConfig,
    ExperimentResult, Format, HarnessError,
};
use rayon::prelude::*;

const EXIT_VERDICT: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "ipg", version, about = "IPG observer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the true trajectory only.
    Simulate(Common),
    /// Run a single experiment.
    Run(Common),
    /// Run every point of the config's [sweep] grid.
    Sweep(Common),
    /// Estimate constants and check the convergence conditions.
    Audit(Common),
    /// Aggregate result.json files below a directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `outputs` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write only this format.
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory to scan.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

fn exit_for(e: &HarnessError) -> u8 {
    if e.is_numerical() {
        EXIT_DIVERGENCE
    } else {
        EXIT_CONFIG
    }
}

impl Common {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(format) = self.format {
            cfg.formats = vec![format];
        }
    }

    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        self.apply(&mut cfg);
        if let Some(out) = &self.out {
            cfg.outputs = out.clone();
        }
        Ok(cfg)
    }
}

fn result_code(result: &ExperimentResult) -> u8 {
    if result.diverged {
        EXIT_DIVERGENCE
    } else if result.all_pass() {
        0
    } else {
        EXIT_VERDICT
    }
}

fn summarize(label: &str, r: &ExperimentResult) {
    println!(
        "{label}: {} / {} d={} final_error={} fitted_mu={}",
        r.system,
        serde_json::to_value(r.observer).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
        r.d,
        r.final_error.map_or("n/a".into(), |e| format!("{e:e}")),
        r.fitted_mu.map_or("n/a".into(), |m| format!("{m:.6}")),
    );
    for v in &r.verdicts {
        println!("  {} {}: {}", if v.passed { "pass" } else { "FAIL" }, v.name, v.detail);
    }
}

fn simulate(args: &Common) -> Result<u8, HarnessError> {
    let cfg = args.load()?;
    let truth = simulate_truth(&cfg)?;
    write_trajectory(&truth, &cfg, &cfg.outputs)?;
    println!("wrote {} states to {}", truth.len(), cfg.outputs.display());
    Ok(0)
}

fn run(args: &Common) -> Result<u8, HarnessError> {
    let cfg = args.load()?;
    let result = run_experiment(&cfg)?;
    summarize("run", &result);
    Ok(result_code(&result))
}

fn sweep(args: &Common) -> Result<u8, HarnessError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| HarnessError::Io {
        path: args.config.clone(),
        source: e,
    })?;
    let mut points = expand_sweep(&text)?;
    for p in &mut points {
        let cfg = p.config.as_mut().expect("expanded config");
        args.apply(cfg);
        if let Some(out) = &args.out {
            // a config without a [sweep] table expands to the single point "run"
            cfg.outputs = if p.label == "run" { out.clone() } else { out.join(&p.label) };
        }
    }
    let results: Vec<Result<ExperimentResult, HarnessError>> = points
        .par_iter()
        .map(|p| run_experiment(p.config.as_ref().expect("expanded config")))
        .collect();

    let base = args.out.clone().unwrap_or_else(|| {
        let first = points[0].config.as_ref().expect("expanded config");
        first.outputs.parent().map(Path::to_path_buf).unwrap_or_else(|| first.outputs.clone())
    });
    std::fs::create_dir_all(&base).map_err(|e| HarnessError::Io {
        path: base.clone(),
        source: e,
    })?;
    let manifest = serde_json::to_string_pretty(&points).expect("serializable") + "\n";
    std::fs::write(base.join("sweep.json"), manifest).map_err(|e| HarnessError::Io {
        path: base.join("sweep.json"),
        source: e,
    })?;

    let mut code = 0;
    for (p, r) in points.iter().zip(&results) {
        let c = match r {
            Ok(result) => {
                summarize(&p.label, result);
                result_code(result)
            }
            Err(e) => {
                eprintln!("{}: {e}", p.label);
                exit_for(e)
            }
        };
        code = code.max(c);
    }
    Ok(code)
}

fn audit_cmd(args: &Common) -> Result<u8, HarnessError> {
    let cfg = args.load()?;
    let outcome = audit(&cfg)?;
    write_audit(&outcome, &cfg.outputs)?;
    let c = &outcome.constants;
    println!(
        "{}: L={:e} l={:e} gamma={:e} Lambda={:e} lambda_min={:e} eta={:e} L2={:e}",
        outcome.system, c.lipschitz_dynamics, c.lipschitz_map, c.gamma, c.lambda_max, c.lambda_min, c.eta, c.lipschitz_inverse
    );
    match &outcome.conditions {
        Some(report) => {
            for e in report.conditions.iter().chain(&report.preconditions) {
                println!("  {:>9} {:?}: {}", e.id, e.verdict, e.instantiated);
            }
            Ok(if report.all_pass { 0 } else { EXIT_VERDICT })
        }
        None => Ok(0),
    }
}

fn report(args: &ReportArgs) -> Result<u8, HarnessError> {
    let report = collect_report(&args.out)?;
    let json = serde_json::to_string_pretty(&report).expect("serializable") + "\n";
    let path = args.out.join("report.json");
    std::fs::write(&path, &json).map_err(|e| HarnessError::Io { path, source: e })?;
    if args.format == Some(Format::Csv) {
        println!("run,system,observer,d,fitted_mu,final_error,diverged,all_pass");
        for r in &report.rows {
            println!(
                "{},{},{},{},{},{},{},{}",
                r.run,
                r.system,
                r.observer,
                r.d,
                r.fitted_mu.map_or(String::new(), |v| format!("{v:e}")),
                r.final_error.map_or(String::new(), |v| format!("{v:e}")),
                r.diverged,
                r.all_pass
            );
        }
    } else {
        print!("{json}");
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Audit(a) => audit_cmd(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
