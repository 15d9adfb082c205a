use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use optctl::harness::{
    checks, emit_report, render_summary, run_experiment, ControllerSpec, FileConfig, MemorySetting,
    OracleChoice, RunSettings,
};
use optctl::plant::ScenarioId;

#[derive(Parser)]
#[command(name = "optctl", version, about = "Online DAC control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run controllers on a scenario and write CSV, summary and plot.
    Run(RunArgs),
    /// Run the randomized gradient and truncation checks.
    TestLemmas {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "a")]
    scenario: ScenarioId,
    #[arg(long = "T", default_value_t = 1000)]
    horizon: usize,
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    #[arg(long, default_value = "bernoulli")]
    oracle: OracleChoice,
    /// Comma-separated: gpc, optimal, optftrl or optftrl:<oracle>.
    #[arg(long, default_value = "gpc,optftrl,optimal")]
    controllers: String,
    #[arg(long, default_value = "10")]
    d: MemorySetting,
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long = "kappa-m", default_value_t = 1.0)]
    kappa_m: f64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    replications: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// TOML file whose keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_plot: bool,
    /// Gradient bound used to tune GPC's step size.
    #[arg(long)]
    gpc_gradient_bound: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    gpc_step_scale: f64,
}

impl RunArgs {
    fn settings(&self) -> optctl::Result<RunSettings> {
        let mut s = RunSettings {
            scenario: self.scenario,
            horizon: self.horizon,
            rho: self.rho,
            oracle: self.oracle,
            controllers: ControllerSpec::parse_list(&self.controllers)?,
            memory: self.d,
            p: self.p,
            kappa_m: self.kappa_m,
            epsilon: self.epsilon,
            seed: self.seed,
            replications: self.replications,
            out: self.out.clone(),
            plot: !self.no_plot,
            gpc_gradient_bound: self.gpc_gradient_bound,
            gpc_step_scale: self.gpc_step_scale,
            custom: None,
        };
        if let Some(path) = &self.config {
            FileConfig::load(path)?.apply(&mut s)?;
        }
        Ok(s)
    }
}

fn run(args: &RunArgs) -> optctl::Result<bool> {
    let settings = args.settings()?;
    let cfg = settings.experiment()?;
    let report = run_experiment(&cfg)?;
    emit_report(&report, &settings.out, settings.plot)?;
    print!("{}", render_summary(&report));
    println!("\nwrote {}", settings.out.display());
    Ok(!report.any_failed())
}

fn test_lemmas(seed: u64) -> optctl::Result<bool> {
    let mut ok = true;
    for c in checks::run_all(seed)? {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::TestLemmas { seed } => test_lemmas(*seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(2)
        }
    }
}
