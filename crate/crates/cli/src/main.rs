use clap::{Args, Parser, Subcommand, ValueEnum};
use evoscope::geometry::{MdsConfig, MdsInit};
use evoscope::workbench::{self, MdsOptions, WorkbenchError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "evoscope", version, about = "Evolutionary search runs and their analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every run of a TOML config.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute per-run, per-generation and per-offspring metrics.
    Analyze {
        /// Glob patterns of trajectory files.
        #[arg(required = true)]
        patterns: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Zero-shot score files (repeatable).
        #[arg(long = "zero-shot")]
        zero_shot: Vec<PathBuf>,
    },
    /// Fit regression models on analysis tables.
    Stats {
        #[arg(long)]
        descriptors: Option<PathBuf>,
        #[arg(long)]
        generations: Option<PathBuf>,
        /// M1..M8, PCD, LRR_PCD, concurrent, lagged or all.
        #[arg(long, default_value = "all")]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// 2-D landscapes, from trajectories or from a distance matrix CSV.
    Mds {
        patterns: Vec<String>,
        /// Square distance matrix with a label header row and column.
        #[arg(long, conflicts_with = "patterns")]
        matrix: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: MdsArgs,
    },
    /// Best-of-n zero-shot score of the config's llm operator.
    Zeroshot {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Token usage and cost from exchange ledgers.
    Cost {
        #[arg(required = true)]
        patterns: Vec<String>,
        /// JSON map of model to {input, output} prices per million tokens.
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Random,
    Classical,
}

#[derive(Args)]
struct MdsArgs {
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Init::Random)]
    init: Init,
    /// Neighbours for placing non-base points.
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 2.0)]
    power: f64,
    #[arg(long, default_value_t = 60)]
    cap_per_bucket: usize,
    #[arg(long, default_value_t = 4000)]
    total_cap: usize,
}

impl MdsArgs {
    fn config(&self) -> MdsConfig {
        MdsConfig {
            max_iter: self.max_iter,
            eps: self.eps,
            seed: self.seed,
            init: match self.init {
                Init::Random => MdsInit::Random,
                Init::Classical => MdsInit::Classical,
            },
        }
    }
}

fn run(cli: Cli) -> Result<(), WorkbenchError> {
    match cli.command {
        Command::Run { config, out } => {
            let s = workbench::cmd_run(&config, out.as_deref(), None)?;
            for r in &s.manifest.runs {
                println!(
                    "{}\tbest {}\tattempts {}\tcalls {}",
                    r.run_id,
                    r.best_final.map_or("-".into(), |b| b.to_string()),
                    r.attempts,
                    r.model_calls
                );
            }
            eprintln!("wrote {}", s.output_dir.display());
        }
        Command::Analyze { patterns, out, zero_shot } => {
            let a = workbench::cmd_analyze(&patterns, &out, &zero_shot)?;
            eprintln!("{} runs analysed, wrote {}", a.runs.len(), out.display());
        }
        Command::Stats { descriptors, generations, spec, out } => {
            if descriptors.is_none() && generations.is_none() {
                return Err(WorkbenchError::Usage("give --descriptors and/or --generations".into()));
            }
            let fits = workbench::cmd_stats(descriptors.as_deref(), generations.as_deref(), &spec, &out)?;
            for (name, fit) in &fits {
                println!("{name}");
                for i in 0..fit.names.len() {
                    println!("  {:<32} {:>10.4} ({:.4})", fit.names[i], fit.coef[i], fit.se[i]);
                }
            }
        }
        Command::Mds { patterns, matrix, out, opts } => match matrix {
            Some(m) => {
                let model = workbench::cmd_mds_matrix(&m, &out, &opts.config())?;
                println!("stress {} after {} iterations", model.stress, model.iterations);
            }
            None => {
                if patterns.is_empty() {
                    return Err(WorkbenchError::Usage("give trajectory patterns or --matrix".into()));
                }
                let o = MdsOptions {
                    mds: opts.config(),
                    k: opts.k,
                    power: opts.power,
                    cap_per_bucket: opts.cap_per_bucket,
                    total_cap: opts.total_cap,
                };
                for s in workbench::cmd_mds(&patterns, &out, &o)? {
                    println!("{}\tstress {}\tbase {}\tpoints {}", s.task, s.stress, s.base_points, s.total_points);
                }
            }
        },
        Command::Zeroshot { config, out } => {
            let z = workbench::cmd_zeroshot(&config, out.as_deref(), None)?;
            println!("{}\t{}\tbest {}\tcalls {}", z.task, z.operator, z.best, z.calls);
        }
        Command::Cost { patterns, prices, out } => {
            let report = workbench::cmd_cost(&patterns, &prices, out.as_deref())?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| WorkbenchError::Usage(e.to_string()))?;
            println!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
