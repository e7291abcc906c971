use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gaclab::gradcheck::TOLERANCE;
use gaclab::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "gaclab", version, about = "Distributional policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent for one seed.
    Train(RunArgs),
    /// Run the tabular solver on a discretized environment.
    DpoTabular(RunArgs),
    /// Policy gradient vs. GAC on the multi-modal bandit, plus the drift field.
    Prop1(RunArgs),
    /// Fit quantile actors to a fixed target distribution.
    Fitcheck(RunArgs),
    /// Finite-difference gradient suite.
    Gradcheck(RunArgs),
    /// Merge metrics.csv files into long-format plot data.
    EmitPlotdata {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "plotdata.csv")]
        out: PathBuf,
    },
    /// List the shipped presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped configuration by name.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: runs/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides any key, e.g. `--set target=boltzmann`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
            }
            (None, Some(name)) => harness::preset(name)?,
            (None, None) => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{o}`");
            };
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        Ok(cfg)
    }

    fn out(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command))
    }
}

fn progress(line: String) {
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.config()?;
            let out = args.out("train");
            if cfg.agent()? == "dpo_tabular" {
                let run = harness::dpo_tabular(&cfg, &out)?;
                report_dpo(&run, &out);
            } else {
                let res = harness::train(&cfg, &out, &mut progress)?;
                for f in res.files {
                    println!("wrote {}", f.display());
                }
            }
        }
        Command::DpoTabular(args) => {
            let cfg = args.config()?;
            let out = args.out("dpo-tabular");
            let run = harness::dpo_tabular(&cfg, &out)?;
            report_dpo(&run, &out);
        }
        Command::Prop1(args) => {
            let cfg = args.config()?;
            let out = args.out("prop1");
            let rows = harness::prop1(&cfg, &out, &mut progress)?;
            for r in &rows {
                println!("seed {} {:<12} final_reward {:.4} escaped {}", r.seed, r.agent, r.final_reward, r.escaped);
            }
            println!("wrote {}", out.display());
        }
        Command::Fitcheck(args) => {
            let cfg = args.config()?;
            let out = args.out("fitcheck");
            harness::fitcheck(&cfg, &out, &mut progress)?;
            println!("wrote {}", out.display());
        }
        Command::Gradcheck(args) => {
            let cfg = args.config()?;
            let out = args.out("gradcheck");
            let report = harness::gradcheck(&cfg, &out)?;
            let totals = report.totals();
            println!(
                "{} cases, {} coordinates checked, {} skipped, max relative error {:.3e}",
                report.cases.len(),
                totals.checked,
                totals.skipped,
                totals.max_rel_error
            );
            if !report.passed(TOLERANCE) {
                if let Some(w) = report.worst() {
                    eprintln!("worst: {} seed {} ({:.3e})", w.case, w.seed, w.report.max_rel_error);
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::EmitPlotdata { inputs, out } => {
            let rows = harness::emit_plotdata(&inputs, &out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Presets => {
            for (name, text) in harness::PRESETS {
                let about = text.lines().next().unwrap_or("").trim_start_matches('#').trim();
                println!("{name:<18} {about}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn report_dpo(run: &gaclab::dpo::DpoRun, out: &std::path::Path) {
    match run.converged_at {
        Some(k) => println!("converged at k = {k}"),
        None => println!("not converged; last distance {:.3e}", run.records.last().map_or(f64::NAN, |r| r.distance)),
    }
    println!("wrote {}", out.display());
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
