use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use super::{aggregate_report, write_summary_csv, ExperimentConfig, Result};
use crate::afdt::{load_planner, pretrain, save_planner, AfdtConfig, Planner, PlannerMode};
use crate::dataset;
use crate::guided_sac::{train, write_curve_csv, SacMode, TrainRun};
use crate::nn::save_checkpoint;

/// Hash of `content` as git would name the blob.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestInput {
    pub path: PathBuf,
    pub git_hash: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: SacMode,
    pub seed: u64,
    pub curve: String,
    pub policy: String,
    pub final_eval_return: Option<f64>,
    pub final_success_rate: Option<f64>,
    pub updates: u64,
    pub aborted_updates: u64,
    pub planner_incidents: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub mode: SacMode,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub inputs: Vec<ManifestInput>,
    /// `"none"` when no mode consulted a planner.
    pub planner: String,
    /// Planner kind to checkpoint path.
    pub planners: BTreeMap<String, String>,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<SeedFailure>,
    /// Every file written, relative to the output directory.
    pub outputs: Vec<String>,
}

fn input(path: &Path) -> Result<ManifestInput> {
    let content = fs::read(path)?;
    Ok(ManifestInput {
        path: path.to_path_buf(),
        git_hash: git_blob_hash(&content),
        bytes: content.len() as u64,
    })
}

fn planner_kind(mode: SacMode) -> Option<PlannerMode> {
    match mode {
        SacMode::Sac => None,
        SacMode::Guided | SacMode::RewardMix => Some(PlannerMode::Udrl),
        SacMode::ImitationGuided => Some(PlannerMode::Imitation),
    }
}

fn kind_name(kind: PlannerMode) -> &'static str {
    match kind {
        PlannerMode::Udrl => "udrl",
        PlannerMode::Imitation => "imitation",
    }
}

/// Pretrains (or loads) every planner the modes need, then trains each mode
/// for each seed. A failing seed is recorded and the rest still run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Manifest> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out)?;
    let modes = config.resolved_modes();
    let mut outputs: Vec<String> = Vec::new();
    let mut inputs = Vec::new();
    if let Some(p) = &config.dataset {
        inputs.push(input(p)?);
    }

    let mut kinds: Vec<PlannerMode> = modes.iter().filter_map(|&m| planner_kind(m)).collect();
    kinds.sort_by_key(|k| kind_name(*k));
    kinds.dedup();
    let mut planners: BTreeMap<&'static str, Planner> = BTreeMap::new();
    let mut planner_paths = BTreeMap::new();
    let data = match &config.dataset {
        Some(p) if kinds.iter().any(|k| *k == PlannerMode::Imitation || config.planner.is_none()) => {
            Some(dataset::load(p)?)
        }
        _ => None,
    };
    for kind in kinds {
        let name = kind_name(kind);
        if let (PlannerMode::Udrl, Some(path)) = (kind, &config.planner) {
            inputs.push(input(path)?);
            let (planner, _) = load_planner(path)?;
            planner_paths.insert(name.to_string(), path.display().to_string());
            planners.insert(name, planner);
            continue;
        }
        let data = data.as_ref().expect("validated: dataset present");
        let cfg = AfdtConfig {
            mode: kind,
            ..config.afdt.clone()
        };
        let (model, report) = pretrain(data, &cfg, config.pretrain_seed)?;
        let ckpt = format!("afdt_{name}.afgc");
        save_planner(&model, Some(&report), &out.join(&ckpt))?;
        let log = format!("afdt_{name}_log.csv");
        report.write_csv(BufWriter::new(fs::File::create(out.join(&log))?))?;
        outputs.extend([ckpt.clone(), format!("{ckpt}.json"), log]);
        planner_paths.insert(name.to_string(), out.join(&ckpt).display().to_string());
        planners.insert(name, Planner::new(model));
    }

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &mode in &modes {
        let planner = planner_kind(mode).map(|k| &planners[kind_name(k)]);
        let sac = crate::guided_sac::GuidedSacConfig {
            mode,
            ..config.sac.clone()
        };
        let mut curves = Vec::new();
        for &seed in &config.seeds {
            let result = train(&sac, &config.env, planner, config.initial_rtg, config.total_steps, seed)
                .map_err(Into::into)
                .and_then(|run| write_run_outputs(&run, out, mode, seed).map(|files| (run, files)));
            match result {
                Ok((run, files)) => {
                    let last = run.rows.last();
                    runs.push(RunRecord {
                        mode,
                        seed,
                        curve: files[0].clone(),
                        policy: files[1].clone(),
                        final_eval_return: last.map(|r| r.eval_return),
                        final_success_rate: last.map(|r| r.success_rate),
                        updates: run.updates,
                        aborted_updates: run.aborted_updates,
                        planner_incidents: run.planner_incidents,
                    });
                    curves.push(out.join(&files[0]));
                    outputs.extend(files);
                }
                Err(e) => failures.push(SeedFailure {
                    mode,
                    seed,
                    error: e.to_string(),
                }),
            }
        }
        if !curves.is_empty() {
            if let Ok(rows) = aggregate_report(&curves) {
                let name = format!("{mode}_summary.csv");
                write_summary_csv(&rows, BufWriter::new(fs::File::create(out.join(&name))?))?;
                outputs.push(name);
            }
        }
    }

    outputs.push("manifest.json".into());
    let manifest = Manifest {
        config: config.clone(),
        inputs,
        planner: if planner_paths.is_empty() {
            "none".into()
        } else {
            planner_paths.keys().cloned().collect::<Vec<_>>().join("+")
        },
        planners: planner_paths,
        runs,
        failures,
        outputs,
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Writes the learning curve and final policy of one run; returns their
/// file names relative to `dir`.
pub fn write_run_outputs(run: &TrainRun<f32>, dir: &Path, mode: SacMode, seed: u64) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let curve = format!("{mode}_seed{seed}.csv");
    let policy = format!("{mode}_seed{seed}_policy.afgc");
    write_curve_csv(&run.rows, BufWriter::new(fs::File::create(dir.join(&curve))?))?;
    save_checkpoint(&run.agent.policy, &dir.join(&policy))?;
    Ok(vec![curve, policy])
}
