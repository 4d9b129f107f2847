//! `nonholo` command-line front end.
//!
//! Exit codes: 0 success, 1 setup error, 2 the integration halted at a
//! singularity, 3 a `check` hypothesis or `validate` row failed.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "nonholo",
    version,
    about = "Simulate mechanical systems under virtual nonholonomic constraints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in scenarios and any scenario files in a directory.
    List {
        /// Also list `*.toml` scenarios found here.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Integrate the closed loop and write CSV output plus summary.json.
    Run(RunArgs),
    /// Audit the feedback hypotheses at the initial state.
    Check {
        /// Built-in scenario name or path to a TOML scenario file.
        scenario: String,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        json: bool,
    },
    /// Re-read a trajectory CSV and recompute its energy columns.
    Validate {
        csv: PathBuf,
        /// Scenario the CSV was produced from.
        #[arg(long)]
        scenario: String,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario name or path to a TOML scenario file.
    scenario: String,
    /// Step size.
    #[arg(long)]
    dt: Option<f64>,
    /// Final time.
    #[arg(long)]
    t_final: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also integrate the Chetaev nonholonomic motion from the same state.
    #[arg(long)]
    compare_nonholonomic: bool,
    /// Estimate the convergence order from runs at h, h/2, h/4.
    #[arg(long)]
    order_check: bool,
    #[command(flatten)]
    overrides: Overrides,
    /// Print the summary as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Override a scenario parameter (repeatable).
    #[arg(long = "param", value_name = "NAME=VALUE", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    /// Project the initial velocity onto the constraint manifold.
    #[arg(long)]
    project_initial: bool,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|e| format!("bad value for `{name}`: {e}"))?;
    if !value.is_finite() {
        return Err(format!("value for `{name}` must be finite"));
    }
    Ok((name.trim().to_string(), value))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::List { dir, json } => commands::list(dir.as_deref(), json),
        Command::Run(args) => commands::run(&args),
        Command::Check {
            scenario,
            overrides,
            json,
        } => commands::check(&scenario, &overrides, json),
        Command::Validate {
            csv,
            scenario,
            overrides,
            json,
        } => commands::validate(&csv, &scenario, &overrides, json),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::SETUP_ERROR)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse_param;

    #[test]
    fn param_overrides_parse() {
        assert_eq!(parse_param("a=2.5").unwrap(), ("a".to_string(), 2.5));
        assert_eq!(parse_param(" c = 4 ").unwrap(), ("c".to_string(), 4.0));
        assert!(parse_param("a").is_err());
        assert!(parse_param("a=x").is_err());
        assert!(parse_param("a=inf").is_err());
    }
}
