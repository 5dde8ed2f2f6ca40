use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use complex_time_cli::{run, CliError, Settings, Verb};

#[derive(Parser)]
#[command(
    name = "ctlab",
    version,
    about = "Maximal-estimate experiments for complex-time Schrödinger flows"
)]
struct Cli {
    #[command(subcommand)]
    verb: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for report.json, records.csv and timing.json.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Dense-grid maximal ratio over an R ladder, slope against the predicted exponent.
    MaximalSweep {
        #[arg(long)]
        d: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        gamma: Option<String>,
        /// Comma-separated, e.g. `2^4,2^5,2^6,2^7`.
        #[arg(long)]
        ladder: Option<String>,
        /// case1 or annulus.
        #[arg(long)]
        family: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo lower bound on Ω* for the comb datum.
    Counterexample {
        #[arg(long)]
        d: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        gamma: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        s: Option<String>,
        #[arg(long)]
        ladder: Option<String>,
        #[arg(long)]
        samples: Option<String>,
        /// Abort at the first R whose error budget is inadmissible.
        #[arg(long)]
        strict_budget: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Number-theory and covering checks.
    LemmasVerify {
        #[command(flatten)]
        common: Common,
    },
    /// Factorized vs direct evaluation of the comb at sample points.
    PropagatorCheck {
        #[arg(long = "R")]
        r: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn settings(common: &Common, flags: &[(&str, Option<String>)]) -> Result<Settings, CliError> {
    let mut s = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
            Settings::parse(&text)?
        }
        None => Settings::default(),
    };
    let shared = [
        ("out", common.out.clone()),
        ("seed", common.seed.map(|v| v.to_string())),
        ("workers", common.workers.map(|v| v.to_string())),
    ];
    for (k, v) in shared.iter().chain(flags) {
        if let Some(v) = v {
            s.set(k, v)?;
        }
    }
    Ok(s)
}

fn dispatch(cli: Cli) -> Result<bool, CliError> {
    let (verb, s) = match cli.verb {
        Command::MaximalSweep {
            d,
            gamma,
            ladder,
            family,
            common,
        } => (
            Verb::MaximalSweep,
            settings(
                &common,
                &[
                    ("model.d", d),
                    ("model.gamma", gamma),
                    ("ladder", ladder),
                    ("family", family),
                ],
            )?,
        ),
        Command::Counterexample {
            d,
            gamma,
            s,
            ladder,
            samples,
            strict_budget,
            common,
        } => (
            Verb::Counterexample,
            settings(
                &common,
                &[
                    ("model.d", d),
                    ("model.gamma", gamma),
                    ("model.s", s),
                    ("ladder", ladder),
                    ("samples", samples),
                    ("budget", strict_budget.then(|| "abort".to_string())),
                ],
            )?,
        ),
        Command::LemmasVerify { common } => (Verb::LemmasVerify, settings(&common, &[])?),
        Command::PropagatorCheck { r, common } => {
            (Verb::PropagatorCheck, settings(&common, &[("model.R", r)])?)
        }
    };
    let outcome = run(verb, &s)?;
    eprintln!(
        "{}: {} -> {}",
        verb.name(),
        if outcome.report.verdict {
            "ok"
        } else {
            "FAILED"
        },
        outcome.out_dir.display()
    );
    Ok(outcome.report.verdict)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
