use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cst_cli::manifest::{parse_k_range, Scenario, SweepConfig};
use cst_cli::pipeline;
use cst_cli::{CliError, ErrorRecord, Overrides, Result, RunManifest};
use cst_core::detectors::{Direction, Method, Mode};

#[derive(Parser)]
#[command(name = "cst", version, about = "Counterfactual situation testing audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scenario: data, draw sidecar and SCM spec.
    Generate(GenerateArgs),
    /// Fit the manifest's SCM and write its equations.
    FitScm(RunArgs),
    /// Write the counterfactual dataset of each tested attribute.
    Cfgen(RunArgs),
    /// Run every (method, k) cell and write reports, summary and provenance.
    Audit(RunArgs),
    /// Run a k sweep and write one long-format CSV.
    Sweep(SweepArgs),
    /// Rebuild the summary and table from JSONL reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Take scenario, n and seed from a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Run manifest (TOML).
    manifest: PathBuf,
    /// Neighborhood sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<f64>,
    /// Methods, comma separated (cst_without, cst_with, st, cf).
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<Method>>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    direction: Option<Direction>,
    /// Protected attributes, comma separated.
    #[arg(long, value_delimiter = ',')]
    attrs: Option<Vec<String>>,
    #[arg(long)]
    include_centers: bool,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn manifest(&self) -> Result<RunManifest> {
        let mut m = RunManifest::load(&self.manifest)?;
        m.apply(&Overrides {
            k: self.k.clone(),
            alpha: self.alpha,
            tau: self.tau,
            methods: self.method.clone(),
            mode: self.mode,
            direction: self.direction,
            attrs: self.attrs.clone(),
            include_centers: self.include_centers,
            epsilon: self.epsilon,
            seed: self.seed,
            out: self.out.clone(),
        });
        m.validate()?;
        Ok(m)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Inclusive range `start:end[:step]`; replaces the manifest's sweep.
    #[arg(long, value_parser = parse_k_range)]
    k_range: Option<SweepConfig>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding `*.jsonl` reports.
    input: PathBuf,
    /// Defaults to the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn print_file(path: &Path) {
    if let Ok(s) = std::fs::read_to_string(path) {
        print!("{s}");
    }
}

/// Best guess at the output directory, for the error record.
fn output_dir(cmd: &Command) -> Option<PathBuf> {
    let run_out = |r: &RunArgs| {
        r.out.clone().or_else(|| RunManifest::load(&r.manifest).ok().map(|m| m.output))
    };
    match cmd {
        Command::Generate(g) => g.out.clone(),
        Command::FitScm(r) | Command::Cfgen(r) | Command::Audit(r) => run_out(r),
        Command::Sweep(s) => run_out(&s.run),
        Command::Report(r) => r.out.clone().or_else(|| Some(r.input.clone())),
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Generate(_) => "generate",
        Command::FitScm(_) => "fit-scm",
        Command::Cfgen(_) => "cfgen",
        Command::Audit(_) => "audit",
        Command::Sweep(_) => "sweep",
        Command::Report(_) => "report",
    }
}

fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Generate(g) => {
            let m = g.manifest.as_ref().map(RunManifest::load).transpose()?;
            let scenario = g
                .scenario
                .or_else(|| m.as_ref().and_then(|m| m.dataset.scenario))
                .ok_or_else(|| CliError::Manifest("generate needs --scenario".into()))?;
            let seed = g.seed.or(m.as_ref().map(|m| m.seed)).unwrap_or(match scenario {
                Scenario::Loan => cst_core::synthgen::LOAN_SEED,
                Scenario::School => cst_core::synthgen::SCHOOL_SEED,
            });
            let n = g.n.or_else(|| m.as_ref().and_then(|m| m.dataset.n));
            let out = g
                .out
                .clone()
                .or_else(|| m.as_ref().map(|m| m.output.clone()))
                .unwrap_or_else(|| PathBuf::from("out"));
            let gen = pipeline::run_generate(scenario, n, seed, &out)?;
            println!("wrote {} rows to {}", gen.dataset.len(), out.display());
        }
        Command::FitScm(r) => {
            let m = r.manifest()?;
            let fitted = pipeline::run_fit(&m)?;
            for eq in fitted.equations() {
                println!("{}: intercept {} coefs {:?}", eq.node, eq.intercept, eq.coefs);
            }
        }
        Command::Cfgen(r) => {
            let m = r.manifest()?;
            let p = pipeline::run_cfgen(&m)?;
            for (attr, cf) in &p.counterfactuals {
                println!("{attr}: {} counterfactual rows", cf.len());
            }
        }
        Command::Audit(r) => {
            let m = r.manifest()?;
            pipeline::run_audit(&m)?;
            print_file(&m.output.join(pipeline::TABLE_FILE));
        }
        Command::Sweep(s) => {
            let m = s.run.manifest()?;
            let ks = match (&s.k_range, &s.run.k, &m.sweep) {
                (Some(r), _, _) => r.sizes()?,
                (None, Some(_), _) => m.ks(),
                (None, None, Some(sw)) => sw.sizes()?,
                (None, None, None) => m.ks(),
            };
            pipeline::run_sweep(&m, &ks)?;
            print_file(&m.output.join(pipeline::SWEEP_FILE));
        }
        Command::Report(r) => {
            let out = r.out.clone().unwrap_or_else(|| r.input.clone());
            pipeline::run_report(&r.input, &out)?;
            print_file(&out.join(pipeline::TABLE_FILE));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let name = command_name(&cli.command);
            let record = ErrorRecord::new(name, &e);
            let json = serde_json::to_string(&record).expect("error record serializes");
            eprintln!("{json}");
            if let Some(dir) = output_dir(&cli.command) {
                if std::fs::create_dir_all(&dir).is_ok() {
                    let _ = std::fs::write(dir.join("error.json"), format!("{json}\n"));
                }
            }
            ExitCode::FAILURE
        }
    }
}
