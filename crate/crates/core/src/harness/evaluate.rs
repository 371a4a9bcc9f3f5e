use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use super::{HarnessError, Result};
use crate::envs::make_env;
use crate::guided_sac::{evaluate_policy, EvalSummary};
use crate::nn::{apply_entries, read_checkpoint, Mlp, MlpSpec, ParamStore};
use crate::rng::stream_rng;

/// Rebuilds a policy network from a checkpoint of its parameters, inferring
/// the layer sizes from the stored shapes.
pub fn load_policy(path: &Path) -> Result<(Mlp, ParamStore<f32>)> {
    let entries = read_checkpoint(BufReader::new(File::open(path)?))?;
    let weights: Vec<&crate::nn::CheckpointEntry> = entries.iter().filter(|e| e.name.ends_with(".w")).collect();
    let (first, last) = match (weights.first(), weights.last()) {
        (Some(f), Some(l)) if entries.iter().all(|e| e.name.starts_with("policy.")) => (f, l),
        _ => {
            return Err(HarnessError::InvalidConfig(format!(
                "{} is not a policy checkpoint",
                path.display()
            )))
        }
    };
    let spec = MlpSpec {
        input_dim: first.shape[0],
        hidden_dim: if weights.len() > 1 { first.shape[1] } else { 0 },
        n_hidden_layers: weights.len() - 1,
        output_dim: last.shape[1],
    };
    let mut store = ParamStore::new();
    let net = Mlp::new(&mut store, "policy", spec, &mut stream_rng(0, 0))?;
    apply_entries(&mut store, &entries)?;
    Ok((net, store))
}

/// Deterministic evaluation of a saved policy on fixed episode seeds.
pub fn evaluate_checkpoint(path: &Path, env_name: &str, n_episodes: usize, seed: u64) -> Result<EvalSummary> {
    if n_episodes == 0 {
        return Err(HarnessError::InvalidConfig("n_episodes must be >= 1".into()));
    }
    let (net, store) = load_policy(path)?;
    let spec = make_env(env_name)?.spec().clone();
    if net.spec.input_dim != spec.state_dim || net.spec.output_dim != 2 * spec.action_dim {
        return Err(HarnessError::DimensionMismatch {
            env: env_name.into(),
            reason: format!(
                "policy maps {} -> {}, env has state_dim {} and action_dim {}",
                net.spec.input_dim, net.spec.output_dim, spec.state_dim, spec.action_dim
            ),
        });
    }
    let ad = spec.action_dim;
    Ok(evaluate_policy(env_name, n_episodes, seed, |s| {
        let x: Vec<f32> = s.iter().map(|&v| v as f32).collect();
        let out = net.eval(&store, &x).map_err(crate::guided_sac::SacError::from)?;
        Ok(out[..ad]
            .iter()
            .map(|&m| {
                let m = m as f64;
                if m.is_finite() { m.tanh().clamp(-crate::guided_sac::ACTION_LIMIT, crate::guided_sac::ACTION_LIMIT) } else { 0.0 }
            })
            .collect())
    })?)
}
