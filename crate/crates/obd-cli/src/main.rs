//! `obd`: the offline-behavior-distillation lab runner.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on numerical
//! aborts (non-finite values or failed bound verification).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use obd_cli::csvout::{fmt, Csv};
use obd_cli::eval::{build_pipeline, eval_policy, evaluate_set};
use obd_cli::experiments::{
    compare_methods, cross_arch_eval, density_histograms, distill_run, figure4_csv,
    loss_return_report, loss_return_sweep, misalignment_experiment, tau_sweep, verify_bounds_csv,
    COMPARE_METHODS,
};
use obd_cli::{Config, HarnessError};
use obd_core::datagen::{BehaviorSet, Profile};
use obd_core::policy::MlpPolicy;

#[derive(Parser)]
#[command(name = "obd", about = "Offline behavior distillation lab", version)]
struct Cli {
    /// Configuration file (flat key-value text with section headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every stream derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory for CSV tables and data files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for independent experiment cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline dataset and its relabeled counterpart.
    GenData,
    /// Run one distillation and save the synthetic set and history.
    Distill,
    /// Evaluate a policy checkpoint or a saved behavioral set.
    Eval {
        /// Policy checkpoint file (`mlp-policy v1`).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Behavioral set file (`obd-behavior v1`); trains before evaluating.
        #[arg(long)]
        synset: Option<PathBuf>,
    },
    /// Fuzz the imitation-error bounds on random tabular MDPs.
    VerifyBounds,
    /// Log-density histograms for the three collection profiles.
    DensityHist,
    /// Loss-vs-return sweep on the relabeled data, with a crossover report.
    SweepLoss,
    /// Compare selection baselines and distillation objectives.
    Compare,
    /// Sweep the density-weighting intensity.
    SweepTau,
    /// Evaluate distilled data across architectures and optimizers.
    CrossArch,
    /// Emit the bound-vs-distillation-loss curves.
    Figure4,
    /// Misalignment table: full relabeled data versus distilled data.
    Misalign,
}

fn load_config(path: &Option<PathBuf>) -> Result<Config, HarnessError> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| HarnessError::Config(format!("cannot read {p:?}: {e}")))?;
            Config::parse(&text)
        }
    }
}

fn write_csv(csv: &Csv, dir: &Path, name: &str) -> Result<(), HarnessError> {
    let path = dir.join(name);
    csv.write(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let cfg = load_config(&cli.config)?;
    let seed = cli.seed;
    let dir = &cli.out_dir;
    match cli.command {
        Command::GenData => {
            let pipe = build_pipeline(&cfg, cfg.profile, seed)?;
            fs::create_dir_all(dir)?;
            let d_off_path = dir.join(format!("dataset_{}.txt", cfg.profile.tag()));
            fs::write(&d_off_path, pipe.d_off.to_text())?;
            let d_real_path = dir.join(format!("real_{}.txt", cfg.profile.tag()));
            fs::write(&d_real_path, pipe.d_real.to_text())?;
            println!("wrote {}", d_off_path.display());
            println!("wrote {}", d_real_path.display());
            println!(
                "anchors: random {} expert {}",
                fmt(pipe.anchors.random_return),
                fmt(pipe.anchors.expert_return)
            );
        }
        Command::Distill => {
            let (syn, _, history) = distill_run(&cfg, seed)?;
            fs::create_dir_all(dir)?;
            let syn_path = dir.join(format!("synset_{}.txt", cfg.objective.tag()));
            fs::write(&syn_path, syn.to_behavior_set().to_text())?;
            println!("wrote {}", syn_path.display());
            write_csv(&history, dir, &format!("history_{}.csv", cfg.objective.tag()))?;
        }
        Command::Eval { policy, synset } => {
            let pipe = build_pipeline(&cfg, cfg.profile, seed)?;
            let (label, raw, stderr) = match (policy, synset) {
                (Some(p), None) => {
                    let text = fs::read_to_string(&p)
                        .map_err(|e| HarnessError::Config(format!("cannot read {p:?}: {e}")))?;
                    let policy = MlpPolicy::from_text(&text)
                        .map_err(|e| HarnessError::Config(e.to_string()))?;
                    let (mean, se) = eval_policy(&pipe.env, &policy, cfg.episodes, seed);
                    (format!("policy {}", p.display()), mean, se)
                }
                (None, Some(p)) => {
                    let text = fs::read_to_string(&p)
                        .map_err(|e| HarnessError::Config(format!("cannot read {p:?}: {e}")))?;
                    let set = BehaviorSet::from_text(&text)
                        .map_err(|e| HarnessError::Config(e.to_string()))?;
                    let norm = evaluate_set(&pipe, &cfg, &set, seed)?;
                    println!("normalized_return {}", fmt(norm));
                    let mut csv = Csv::new(cfg.hash(), seed, &["target", "normalized_return"]);
                    csv.row(&[format!("synset {}", p.display()), fmt(norm)]);
                    write_csv(&csv, dir, "eval.csv")?;
                    return Ok(());
                }
                _ => {
                    return Err(HarnessError::Config(
                        "eval needs exactly one of --policy or --synset".into(),
                    ))
                }
            };
            let norm = pipe.anchors.normalize(raw)?;
            println!("mean_return {} stderr {} normalized {}", fmt(raw), fmt(stderr), fmt(norm));
            let mut csv = Csv::new(
                cfg.hash(),
                seed,
                &["target", "mean_return", "stderr", "normalized_return"],
            );
            csv.row(&[label, fmt(raw), fmt(stderr), fmt(norm)]);
            write_csv(&csv, dir, "eval.csv")?;
        }
        Command::VerifyBounds => {
            let (report, csv) = verify_bounds_csv(&cfg, seed);
            write_csv(&csv, dir, "verify_bounds.csv")?;
            println!(
                "trials {} thm3-applicable {} violations: thm1 {} thm3 {} chain {}",
                report.trials.len(),
                report.thm3_applicable,
                report.thm1_violations,
                report.thm3_violations,
                report.chain_violations
            );
            if !report.clean() {
                if let Some(instance) = &report.counterexample {
                    eprintln!("counterexample:\n{instance}");
                }
                return Err(HarnessError::Numerical("bound verification failed".into()));
            }
        }
        Command::DensityHist => {
            let (histograms, summary) = density_histograms(&cfg, seed)?;
            for (profile, csv) in &histograms {
                write_csv(csv, dir, &format!("density_hist_{}.csv", profile.tag()))?;
            }
            write_csv(&summary, dir, "density_summary.csv")?;
        }
        Command::SweepLoss => {
            for profile in [Profile::ReplayLike, Profile::Medium, Profile::ExpertMix] {
                let (_, csv) = loss_return_sweep(&cfg, profile, seed)?;
                write_csv(&csv, dir, &format!("loss_return_{}.csv", profile.tag()))?;
            }
            let report = loss_return_report(&cfg, seed)?;
            write_csv(&report, dir, "loss_return_report.csv")?;
        }
        Command::Compare => {
            let (rows, csv) = compare_methods(&cfg, seed, cli.jobs, &COMPARE_METHODS)?;
            for row in &rows {
                println!("{:<12} {:8.2}", row.name, row.mean);
            }
            write_csv(&csv, dir, "compare.csv")?;
        }
        Command::SweepTau => {
            let (rows, csv) = tau_sweep(&cfg, seed, cli.jobs)?;
            for row in &rows {
                println!("tau {:<8} {:8.2}", row.name, row.mean);
            }
            write_csv(&csv, dir, "tau_sweep.csv")?;
        }
        Command::CrossArch => {
            let (rows, csv) = cross_arch_eval(&cfg, seed, cli.jobs)?;
            for row in &rows {
                println!("{:<20} {:8.2}", row.name, row.mean);
            }
            write_csv(&csv, dir, "cross_arch.csv")?;
        }
        Command::Figure4 => {
            let csv = figure4_csv(&cfg, seed)?;
            write_csv(&csv, dir, "figure4.csv")?;
        }
        Command::Misalign => {
            let (rows, csv) = misalignment_experiment(&cfg, seed, cli.jobs)?;
            for row in &rows {
                println!("{:<24} {:8.2}", row.name, row.mean);
            }
            write_csv(&csv, dir, "misalignment.csv")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
