use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use colearn::checks::{graph_suite, jacobi_suite, memory_suite};
use colearn::experiment::{meta_tune, run_experiment, write_records_csv, ExperimentConfig, HyperConfig, Variant};
use colearn::Result;

#[derive(Parser)]
#[command(name = "colearn", version, about = "Simulator for peer-to-peer learning over a task stream")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write per-agent metrics as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        /// Overrides both the scenario and the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; falls back to the config's `output`, then stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional per-round message ledger CSV.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Random search over the regularization weights.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        budget: usize,
        /// Writes the config with the best weights filled in.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        train_seeds: u64,
        #[arg(long, default_value_t = 8)]
        val_seeds: u64,
        #[arg(long, default_value_t = 0)]
        search_seed: u64,
    },
    /// Compare the decentralized solvers with centralized references.
    OracleCheck {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Graph,
    Jacobi,
    Memory,
}

// Train and validation seeds start far from the small seeds used in examples.
const TRAIN_BASE: u64 = 10_000;
const VAL_BASE: u64 = 20_000;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            variant,
            seed,
            out,
            ledger,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(s) = seed {
                cfg.seeds.scenario = s;
                cfg.seeds.run = s;
            }
            let dest = out.or(cfg.output.take());
            let output = run_experiment(&cfg)?;
            match dest {
                Some(path) => write_records_csv(cfg.seeds.run, &output.records, BufWriter::new(File::create(path)?))?,
                None => write_records_csv(cfg.seeds.run, &output.records, io::stdout().lock())?,
            }
            if let Some(path) = ledger {
                output.ledger.write_csv(BufWriter::new(File::create(path)?))?;
            }
            let mut err = io::stderr().lock();
            for r in &output.records {
                let gmse = r.gmse.map(|g| format!("{g:.4}")).unwrap_or_else(|| "-".into());
                writeln!(
                    err,
                    "t={:<3} {}={:.5} gmse={} messages={} jacobi_rounds={}",
                    r.t,
                    r.kind.as_str(),
                    r.system_mean(),
                    gmse,
                    r.messages,
                    r.rounds_jacobi
                )?;
            }
            writeln!(err, "illegal edges: {}", output.illegal_edges)?;
            Ok(())
        }
        Command::Tune {
            config,
            budget,
            out,
            train_seeds,
            val_seeds,
            search_seed,
        } => {
            let template = ExperimentConfig::load(&config)?;
            let train: Vec<u64> = (TRAIN_BASE..TRAIN_BASE + train_seeds).collect();
            let val: Vec<u64> = (VAL_BASE..VAL_BASE + val_seeds).collect();
            let report = meta_tune(&template, budget, &train, &val, search_seed)?;
            let tuned = ExperimentConfig {
                hyper: HyperConfig::from_params(&report.best),
                ..template
            };
            std::fs::write(&out, tuned.to_toml()?)?;
            println!(
                "best lambda1={:.4e} lambda2={:.4e} lambda3={:.4e}",
                report.best.lambda1, report.best.lambda2, report.best.lambda3
            );
            println!("train loss {:.6}  val loss {:.6}", report.train_loss, report.val_loss);
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::OracleCheck { suite, instances, seed } => {
            match suite {
                Suite::Graph => println!("{}", graph_suite(instances, seed, 1e-8)?),
                Suite::Jacobi => println!("{}", jacobi_suite(instances, seed)?),
                Suite::Memory => println!("{}", memory_suite(instances, 10, seed, 1e-3)?),
            }
            Ok(())
        }
    }
}
