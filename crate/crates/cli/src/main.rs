use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use dair_core::config::ExperimentConfig;
use dair_core::experiment::{run_eval, run_plot_data, run_replay, run_train, EvalRequest, PLOT_DATA, SUMMARY_CSV};
use dair_core::metrics::{write_plot_data, write_summary_csv, Summary, Thresholds};
use dair_core::train::EVAL_SUMMARY;
use dair_core::DairError;

#[derive(Parser, Debug)]
#[command(name = "dair", version, about = "Train and evaluate multi-agent SAC with attention regularization")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train every configured seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only these seeds instead of `run.seeds`.
        #[arg(long)]
        seed: Vec<u64>,
        /// Output directory, replaces `run.out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dotted override, e.g. `--set dair.lambda=0.2`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Continue from each seed's last checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint with frozen policies.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Evaluation seed; defaults to the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides on the stored config, e.g. `--set env.objects=8`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Act with the distribution mean instead of sampling.
        #[arg(long)]
        deterministic: bool,
        /// Write a trajectory dump here.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Directory for eval_summary.json, summary.csv and plot_data.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a trajectory dump into attention heat-map and trace CSVs.
    Replay {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge evaluation summaries from run directories by method.
    PlotData {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        interaction_threshold: f64,
        #[arg(long, default_value_t = 0.06)]
        conflict_threshold: f64,
    },
}

fn print_summary(label: &str, s: &Summary) {
    let overlap = s.overlap.map(|o| format!("{:.4}", o.mean)).unwrap_or_else(|| "-".into());
    println!(
        "{label}: method={} episodes={} success={:.1}% domination={:.1} conflict={:.4} finish={:.1} overlap={overlap}",
        s.method, s.episodes, s.success_rate.mean, s.domination_rate.mean, s.conflict_rate.mean, s.finish_steps.mean
    );
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Train {
            config,
            seed,
            out,
            set,
            resume,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config, &set)?;
            if !seed.is_empty() {
                cfg.run.seeds = seed;
            }
            if let Some(o) = out {
                cfg.run.out_dir = o.to_string_lossy().into_owned();
            }
            let outcomes = run_train(&cfg, resume)?;
            for (s, o) in &outcomes {
                if let Some(e) = &o.eval {
                    print_summary(&format!("seed {s}"), e);
                }
            }
        }
        Cmd::Eval {
            checkpoint,
            episodes,
            seed,
            set,
            deterministic,
            dump,
            out,
        } => {
            let report = run_eval(&EvalRequest {
                checkpoint,
                overrides: set,
                episodes,
                seed,
                deterministic,
                dump,
            })?;
            print_summary(&format!("objects {}", report.objects), &report.summary);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                std::fs::write(dir.join(EVAL_SUMMARY), serde_json::to_vec_pretty(&report.summary)?)?;
                let th = Thresholds {
                    interaction: report.config.env.interaction_threshold,
                    conflict: report.config.env.conflict_threshold,
                };
                write_summary_csv(std::fs::File::create(dir.join(SUMMARY_CSV))?, std::slice::from_ref(&report.summary), th)?;
                write_plot_data(std::fs::File::create(dir.join(PLOT_DATA))?, std::slice::from_ref(&report.summary))?;
            }
        }
        Cmd::Replay { dump, out } => {
            let (a, t) = run_replay(&dump, &out)?;
            println!("{}\n{}", a.display(), t.display());
        }
        Cmd::PlotData {
            runs,
            out,
            interaction_threshold,
            conflict_threshold,
        } => {
            let th = Thresholds {
                interaction: interaction_threshold,
                conflict: conflict_threshold,
            };
            for s in run_plot_data(&runs, &out, th)? {
                print_summary("merged", &s);
            }
        }
    }
    Ok(())
}

/// 1 for problems with what the user supplied, 2 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<DairError>() {
        Some(
            DairError::Config(_)
            | DairError::UnknownKey(_)
            | DairError::MissingKey(_)
            | DairError::Incompatible(_)
            | DairError::Trajectory { .. }
            | DairError::Empty(_)
            | DairError::Checkpoint(_)
            | DairError::FeatureLength { .. }
            | DairError::Layout(_),
        ) => 1,
        Some(DairError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
