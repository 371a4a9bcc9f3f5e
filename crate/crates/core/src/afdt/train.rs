use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AfdtConfig, AfdtModel, Result};
use crate::dataset::{sample_windows, ActionFreeDataset, Window};
use crate::nn::{Optimizer, Real, Tape};
use crate::rng::{stream, stream_rng, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: usize,
    /// Mean training loss since the previous record.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub selected_step: usize,
    pub untrained_val_loss: f64,
    pub checkpoints: Vec<CheckpointRecord>,
    pub train_trajectories: Vec<usize>,
    pub val_trajectories: Vec<usize>,
    pub skipped_updates: u64,
}

impl PretrainReport {
    pub fn selected(&self) -> &CheckpointRecord {
        self.checkpoints
            .iter()
            .find(|c| c.step == self.selected_step)
            .expect("selected step is one of the records")
    }

    /// `step,train_loss,val_loss`; the untrained row has an empty train loss.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,train_loss,val_loss")?;
        writeln!(w, "0,,{}", self.untrained_val_loss)?;
        for c in &self.checkpoints {
            writeln!(w, "{},{},{}", c.step, c.train_loss, c.val_loss)?;
        }
        Ok(())
    }
}

/// One AdamW update on a batch; returns the pre-update loss.
pub fn train_step<F: Real>(
    model: &mut AfdtModel<F>,
    opt: &mut Optimizer<F>,
    windows: &[Window],
    dropout: &mut Rng,
) -> Result<f64> {
    let batch = model.batch(windows)?;
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, &batch, Some(dropout))?;
    let value = tape.scalar(loss).f64();
    let grads = tape.backward(loss)?;
    model.store.accumulate(&tape, &grads);
    opt.step(&mut model.store);
    Ok(value)
}

/// Eval-mode L1 over `windows`, weighted by the number of targets.
pub fn evaluate_l1<F: Real>(model: &AfdtModel<F>, windows: &[Window]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(64) {
        let batch = model.batch(chunk)?;
        if batch.n_targets == 0 {
            continue;
        }
        let mut tape = Tape::new();
        let l = model.loss(&mut tape, &batch, None)?;
        total += tape.scalar(l).f64() * batch.n_targets as f64;
        count += batch.n_targets;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Splits trajectories into training and validation sets; both are non-empty
/// whenever the dataset holds at least two trajectories. A single trajectory
/// is used for both.
fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if n < 2 {
        return (idx.clone(), idx);
    }
    idx.shuffle(&mut stream_rng(seed, stream::SPLIT));
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut val = idx.split_off(n - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

/// Trains a planner on `dataset` and returns the snapshot, among
/// `config.checkpoint_steps`, with the lowest validation loss (earliest on
/// ties).
pub fn pretrain(dataset: &ActionFreeDataset, config: &AfdtConfig, seed: u64) -> Result<(AfdtModel<f32>, PretrainReport)> {
    config.validate()?;
    let (train_idx, val_idx) = split(dataset.len(), config.val_fraction, seed);
    let train = dataset.subset(&train_idx)?;
    let val = dataset.subset(&val_idx)?;
    let mut model = AfdtModel::<f32>::new(config.clone(), dataset.state_dim(), dataset.norm_stats().clone(), seed)?;
    let mut opt = Optimizer::adamw(config.learning_rate, config.weight_decay);
    let mut sampling = stream_rng(seed, stream::SAMPLING);
    let mut dropout = stream_rng(seed, stream::DROPOUT);
    let k = config.context_len;
    let val_windows = sample_windows(&val, config.val_windows.max(1), k, &mut stream_rng(seed, stream::EVAL));

    let untrained_val_loss = evaluate_l1(&model, &val_windows)?;
    let mut marks: Vec<usize> = config
        .checkpoint_steps
        .iter()
        .copied()
        .filter(|&s| s >= 1 && s <= config.train_steps)
        .collect();
    marks.sort_unstable();
    marks.dedup();
    let last = *marks.last().expect("validated checkpoint steps");

    let mut records = Vec::with_capacity(marks.len());
    let mut best: Option<(f64, usize, AfdtModel<f32>)> = None;
    let mut running = 0.0;
    let mut running_n = 0usize;
    let mut next = 0;
    for step in 1..=last {
        let windows = sample_windows(&train, config.batch_size, k, &mut sampling);
        running += train_step(&mut model, &mut opt, &windows, &mut dropout)?;
        running_n += 1;
        if step == marks[next] {
            let val_loss = evaluate_l1(&model, &val_windows)?;
            records.push(CheckpointRecord {
                step,
                train_loss: running / running_n as f64,
                val_loss,
            });
            running = 0.0;
            running_n = 0;
            if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
                best = Some((val_loss, step, model.clone()));
            }
            next += 1;
        }
    }
    let (_, selected_step, selected) = best.expect("at least one checkpoint");
    Ok((
        selected,
        PretrainReport {
            selected_step,
            untrained_val_loss,
            checkpoints: records,
            train_trajectories: train_idx,
            val_trajectories: val_idx,
            skipped_updates: opt.skipped(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Trajectory;
    use crate::nn::TransformerSpec;
    use ndarray::Array2;

    fn config(steps: usize, marks: Vec<usize>) -> AfdtConfig {
        AfdtConfig {
            context_len: 4,
            transformer: TransformerSpec {
                n_blocks: 1,
                n_heads: 1,
                d_embed: 16,
                dropout: 0.0,
                max_tokens: 8,
            },
            train_steps: steps,
            checkpoint_steps: marks,
            batch_size: 16,
            learning_rate: 3e-3,
            val_windows: 32,
            max_timestep: 40,
            ..AfdtConfig::default()
        }
    }

    /// Constant-velocity ramps: the next-state change is a fixed function of
    /// the current state.
    fn ramps(n: usize) -> ActionFreeDataset {
        let trajs = (0..n)
            .map(|i| {
                let v = 0.1 + 0.05 * (i % 4) as f32;
                let s = Array2::from_shape_fn((30, 2), |(t, c)| if c == 0 { v * t as f32 } else { v });
                Trajectory::new(s, vec![v; 30]).unwrap()
            })
            .collect();
        ActionFreeDataset::new(trajs).unwrap()
    }

    #[test]
    fn split_is_disjoint_and_covers() {
        for n in [1, 2, 3, 10, 37] {
            let (t, v) = split(n, 0.1, 4);
            assert!(!t.is_empty() && !v.is_empty());
            if n > 1 {
                let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
        }
        assert_eq!(split(37, 0.1, 4), split(37, 0.1, 4));
    }

    #[test]
    fn training_reduces_validation_loss() {
        let d = ramps(12);
        let (_, report) = pretrain(&d, &config(150, vec![50, 150]), 1).unwrap();
        let best = report.selected().val_loss;
        assert!(best < 0.5 * report.untrained_val_loss, "{best} vs {}", report.untrained_val_loss);
    }

    #[test]
    fn selection_picks_lowest_validation_loss() {
        let d = ramps(8);
        let (model, report) = pretrain(&d, &config(60, vec![20, 40, 60, 500]), 2).unwrap();
        assert_eq!(report.checkpoints.len(), 3);
        let min = report.checkpoints.iter().map(|c| c.val_loss).fold(f64::INFINITY, f64::min);
        let first_min = report.checkpoints.iter().find(|c| c.val_loss == min).unwrap();
        assert_eq!(report.selected_step, first_min.step);
        let val = d.subset(&report.val_trajectories).unwrap();
        let ws = sample_windows(&val, 32, 4, &mut stream_rng(2, stream::EVAL));
        assert_eq!(evaluate_l1(&model, &ws).unwrap(), min);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let d = ramps(6);
        let (a, ra) = pretrain(&d, &config(15, vec![15]), 3).unwrap();
        let (b, rb) = pretrain(&d, &config(15, vec![15]), 3).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.store.flat_values(), b.store.flat_values());
    }

    #[test]
    fn log_has_expected_header() {
        let d = ramps(4);
        let (_, r) = pretrain(&d, &config(5, vec![5]), 4).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,train_loss,val_loss");
        assert!(lines[1].starts_with("0,,"));
        assert!(lines[2].starts_with("5,"));
    }
}
