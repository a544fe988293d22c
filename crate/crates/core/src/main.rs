use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use qsmooth::experiment::{self, ComboSelection, ExperimentConfig};
use qsmooth::Error;

#[derive(Parser)]
#[command(
    name = "qsmooth",
    version,
    about = "Quantum state smoothing of a driven qubit with valid or wrongly assumed unobserved unravelings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep and write powers, correlators, report and manifest.
    Run(Overrides),
    /// Check the configuration without running.
    Validate(Overrides),
    /// Print the projected cost of a run.
    Estimate(Overrides),
    /// Estimate and classify the nine record correlators only.
    Correlators(Overrides),
    /// Summarise the report of a finished run.
    Report {
        /// Output directory of a previous run.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Overrides {
    /// JSON config, or the manifest of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `all27` or a comma-separated list such as `dYdXdY,dNdNdN`.
    #[arg(long)]
    combos: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => ExperimentConfig::desk(),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(c) = &self.combos {
            cfg.combos = ComboSelection::Named(c.clone());
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        Ok(cfg)
    }
}

fn print_report(out: &Path) -> Result<(), Error> {
    let text = std::fs::read_to_string(out.join("report.json"))
        .map_err(|e| Error::config("--out", format!("{}: {e}", out.display())))?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(classes) = doc["classification"].as_array() {
        println!("pair    class    reference  max|z|");
        for c in classes {
            println!(
                "{:<7} {:<8} {:<10} {:.1}",
                c["pair"].as_str().unwrap_or(""),
                c["class"].as_str().unwrap_or(""),
                c["reference"].as_str().unwrap_or(""),
                c["max_sigma"].as_f64().unwrap_or(f64::NAN)
            );
        }
        println!();
    }
    println!("combo     label  R_S                   R_F                   R_P                   alpha^2   pass");
    let est = |v: &serde_json::Value| {
        format!(
            "{:+.4}({:.4})",
            v["mean"].as_f64().unwrap_or(f64::NAN),
            v["stderr"].as_f64().unwrap_or(f64::NAN)
        )
    };
    let combos = doc["combos"].as_array().cloned().unwrap_or_default();
    for e in doc["conjectures"]["entries"]
        .as_array()
        .cloned()
        .unwrap_or_default()
    {
        let name = e["combo"].as_str().unwrap_or("");
        let alpha_sq = combos
            .iter()
            .find(|c| c["combo"].as_str() == Some(name))
            .and_then(|c| c["alpha_sq"].as_f64())
            .unwrap_or(f64::NAN);
        println!(
            "{:<9} {:<6} {:<21} {:<21} {:<21} {:<9.3} {}",
            name,
            e["label"].as_str().unwrap_or("valid"),
            est(&e["r_s"]),
            est(&e["r_f"]),
            est(&e["r_p"]),
            alpha_sq,
            e["pass"].as_bool().unwrap_or(false)
        );
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(o) => {
            let cfg = o.load()?;
            let out = experiment::run(&cfg)?;
            println!("wrote {}", out.output_dir.display());
        }
        Command::Validate(o) => {
            o.load()?.validate()?;
            println!("config is valid");
        }
        Command::Estimate(o) => {
            let cfg = o.load()?;
            cfg.validate()?;
            println!("{}", serde_json::to_string_pretty(&cfg.estimate()?)?);
        }
        Command::Correlators(o) => {
            let cfg = o.load()?;
            for c in experiment::run_correlators_only(&cfg)? {
                println!("{:<7} {:<8} max|z| = {:.1}", c.pair, c.class, c.max_sigma);
            }
        }
        Command::Report { out } => print_report(&out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() || matches!(e, Error::Io(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
