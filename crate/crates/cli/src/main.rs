use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afguide_core::afdt::{load_planner, pretrain, save_planner, AfdtConfig, PlannerMode};
use afguide_core::dataset;
use afguide_core::envs::PolicyKind;
use afguide_core::guided_sac::{train, GuidedSacConfig, SacMode};
use afguide_core::harness::{
    aggregate_report, evaluate_checkpoint, run_experiment, write_run_outputs, write_summary_csv, ExperimentConfig,
};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "afguide", version, about = "Action-free offline pretraining for guided online RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out a scripted behaviour policy and save an action-free dataset.
    GenData {
        #[arg(long)]
        env: String,
        /// expert, medium or random
        #[arg(long)]
        policy: PolicyKind,
        #[arg(long)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain a planner on a dataset.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        /// Planner config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one agent and write its learning curve and policy.
    Train {
        #[arg(long)]
        env: String,
        /// guided, sac, reward-mix or imitation-guided
        #[arg(long)]
        mode: SacMode,
        #[arg(long)]
        afdt: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        rtg: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Agent config JSON; `--mode` and `--beta` override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Aggregate learning-curve CSVs across seeds.
    Report {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved policy deterministically.
    Evaluate {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a full multi-mode, multi-seed experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { env, policy, episodes, seed, out } => {
            let generated = dataset::generate_behavior_dataset(&env, policy, episodes, seed)?;
            dataset::save(&generated.dataset, &out)?;
            println!(
                "wrote {} episodes ({} steps), mean return {:.3}, success {:.2}",
                episodes,
                generated.dataset.total_steps(),
                generated.mean_return(),
                generated.success_fraction()
            );
        }
        Command::Pretrain { data, config, out, seed } => {
            let config: AfdtConfig = match config {
                Some(p) => read_json(&p)?,
                None => AfdtConfig::default(),
            };
            let data = dataset::load(&data)?;
            let (model, report) = pretrain(&data, &config, seed)?;
            save_planner(&model, Some(&report), &out)?;
            let log = PathBuf::from(format!("{}.log.csv", out.display()));
            report.write_csv(BufWriter::new(fs::File::create(&log)?))?;
            println!(
                "selected step {} val L1 {:.5} (untrained {:.5})",
                report.selected_step,
                report.selected().val_loss,
                report.untrained_val_loss
            );
        }
        Command::Train { env, mode, afdt, beta, rtg, steps, seed, out, config } => {
            let mut cfg: GuidedSacConfig = match config {
                Some(p) => read_json(&p)?,
                None => GuidedSacConfig::default(),
            };
            cfg.mode = mode;
            if let Some(b) = beta {
                cfg.beta = b;
            }
            let planner = match (mode.uses_planner(), afdt) {
                (false, _) => None,
                (true, None) => bail!("mode {mode} needs --afdt"),
                (true, Some(p)) => {
                    let (planner, sidecar) = load_planner(&p)?;
                    let want = if mode == SacMode::ImitationGuided { PlannerMode::Imitation } else { PlannerMode::Udrl };
                    if sidecar.config.mode != want {
                        bail!("{} was trained as {:?}, mode {mode} needs {want:?}", p.display(), sidecar.config.mode);
                    }
                    Some(planner)
                }
            };
            let run = train(&cfg, &env, planner.as_ref(), rtg, steps, seed)?;
            let files = write_run_outputs(&run, &out, mode, seed)?;
            let last = run.rows.last().ok_or_else(|| anyhow!("no evaluation rows; steps < eval_every"))?;
            println!(
                "{}: step {} eval_return {:.3} success {:.2}",
                out.join(&files[0]).display(),
                last.step,
                last.eval_return,
                last.success_rate
            );
        }
        Command::Report { inputs, out } => {
            let rows = aggregate_report(&inputs)?;
            write_summary_csv(&rows, BufWriter::new(fs::File::create(&out)?))?;
            println!("{} steps from {} files", rows.len(), inputs.len());
        }
        Command::Evaluate { policy, env, episodes, seed } => {
            let s = evaluate_checkpoint(&policy, &env, episodes, seed)?;
            for (i, r) in s.returns.iter().enumerate() {
                println!("episode {i}: return {r}");
            }
            println!("mean_return {} success_rate {}", s.mean_return, s.success_rate);
        }
        Command::Run { config } => {
            let config = ExperimentConfig::load(&config)?;
            let m = run_experiment(&config)?;
            for f in &m.failures {
                eprintln!("seed {} ({}) failed: {}", f.seed, f.mode, f.error);
            }
            println!(
                "{} runs, {} failures, manifest at {}",
                m.runs.len(),
                m.failures.len(),
                config.output_dir.join("manifest.json").display()
            );
            if !m.failures.is_empty() {
                bail!("{} seed(s) failed", m.failures.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("afguide: {msg}");
            ExitCode::FAILURE
        }
    }
}
