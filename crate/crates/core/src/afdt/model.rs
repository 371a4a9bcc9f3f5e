use ndarray::{Array2, Axis};

use super::{AfdtConfig, AfdtError, PlannerMode, Result};
use crate::dataset::{NormStats, Window};
use crate::nn::{Init, LayerNorm, Linear, ParamId, ParamStore, Real, Tape, Transformer, Var};
use crate::rng::{stream, stream_rng, Rng};

/// Decision transformer over interleaved `(s_t, R_t)` tokens. The next-state
/// change is read from the return token of each step, so the prediction for
/// step `t` sees `s_0..s_t` and `R_0..R_t` and nothing later.
#[derive(Clone, Debug)]
pub struct AfdtModel<F: Real> {
    pub config: AfdtConfig,
    pub state_dim: usize,
    /// Dataset statistics carried alongside the weights for the guiding reward.
    pub norm: NormStats,
    pub store: ParamStore<F>,
    embed_state: Linear,
    embed_rtg: Linear,
    embed_time: ParamId,
    embed_ln: LayerNorm,
    trunk: Transformer,
    head: Linear,
}

/// Model-ready tensors for a batch of equal-length windows.
#[derive(Clone, Debug)]
pub struct WindowBatch<F> {
    pub batch: usize,
    pub k: usize,
    pub states: Array2<F>,
    pub rtgs: Array2<F>,
    pub timesteps: Vec<usize>,
    pub token_mask: Vec<bool>,
    /// `s_{t+1} - s_t` in raw units; zero where there is no successor.
    pub targets: Array2<F>,
    /// 1 where a target exists, broadcast over state dimensions.
    pub target_mask: Array2<F>,
    pub n_targets: usize,
}

impl<F: Real> AfdtModel<F> {
    pub fn new(config: AfdtConfig, state_dim: usize, norm: NormStats, seed: u64) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 || norm.mean.len() != state_dim || norm.sigma.len() != state_dim {
            return Err(AfdtError::Shape(format!(
                "state_dim {state_dim} with normalisation of length {}",
                norm.mean.len()
            )));
        }
        let mut rng = stream_rng(seed, stream::MODEL_INIT);
        let d = config.transformer.d_embed;
        let init = Init::TruncatedNormal(0.02);
        let mut store = ParamStore::new();
        let embed_state = Linear::new(&mut store, "embed_state", state_dim, d, init, &mut rng);
        let embed_rtg = Linear::new(&mut store, "embed_rtg", 1, d, init, &mut rng);
        let embed_time = store.add("embed_time", init.sample(config.max_timestep + 1, d, &mut rng));
        let embed_ln = LayerNorm::new(&mut store, "embed_ln", d);
        let trunk = Transformer::new(&mut store, "trunk", config.transformer.clone(), &mut rng)?;
        // Untrained planners predict "no change".
        let head = Linear::new(&mut store, "pred_state", d, state_dim, Init::Zeros, &mut rng);
        Ok(Self {
            config,
            state_dim,
            norm,
            store,
            embed_state,
            embed_rtg,
            embed_time,
            embed_ln,
            trunk,
            head,
        })
    }

    /// Same architecture with parameters cast to another precision.
    pub fn cast<G: Real>(&self) -> AfdtModel<G> {
        AfdtModel {
            config: self.config.clone(),
            state_dim: self.state_dim,
            norm: self.norm.clone(),
            store: self.store.cast(),
            embed_state: self.embed_state.clone(),
            embed_rtg: self.embed_rtg.clone(),
            embed_time: self.embed_time,
            embed_ln: self.embed_ln.clone(),
            trunk: self.trunk.clone(),
            head: self.head.clone(),
        }
    }

    pub fn batch(&self, windows: &[Window]) -> Result<WindowBatch<F>> {
        let first = windows.first().ok_or(AfdtError::EmptyContext)?;
        let k = first.len();
        if k == 0 || k > self.config.context_len {
            return Err(AfdtError::Shape(format!(
                "window length {k} outside 1..={}",
                self.config.context_len
            )));
        }
        let sd = self.state_dim;
        let rows = windows.len() * k;
        let imitation = self.config.mode == PlannerMode::Imitation;
        let mut out = WindowBatch {
            batch: windows.len(),
            k,
            states: Array2::zeros((rows, sd)),
            rtgs: Array2::zeros((rows, 1)),
            timesteps: vec![0; rows],
            token_mask: vec![false; 2 * rows],
            targets: Array2::zeros((rows, sd)),
            target_mask: Array2::zeros((rows, sd)),
            n_targets: 0,
        };
        for (b, w) in windows.iter().enumerate() {
            if w.len() != k || w.states.ncols() != sd {
                return Err(AfdtError::Shape(format!(
                    "window {b} is {}x{}, expected {k}x{sd}",
                    w.len(),
                    w.states.ncols()
                )));
            }
            for i in 0..k {
                if !w.valid[i] {
                    continue;
                }
                let r = b * k + i;
                let t = w.timesteps[i];
                if t > self.config.max_timestep {
                    return Err(AfdtError::TimestepOutOfRange {
                        t,
                        max: self.config.max_timestep,
                    });
                }
                out.timesteps[r] = t;
                out.token_mask[2 * r] = true;
                out.token_mask[2 * r + 1] = true;
                if !imitation {
                    out.rtgs[[r, 0]] = F::of(w.rtgs[i] / self.config.rtg_scale);
                }
                for j in 0..sd {
                    let s = w.states[[i, j]];
                    out.states[[r, j]] = F::of(s);
                    if w.has_next[i] {
                        out.targets[[r, j]] = F::of(w.next_states[[i, j]] - s);
                        out.target_mask[[r, j]] = F::one();
                    }
                }
                if w.has_next[i] {
                    out.n_targets += 1;
                }
            }
        }
        Ok(out)
    }

    /// Predicted state changes, one row per window slot.
    pub fn forward(&self, tape: &mut Tape<F>, batch: &WindowBatch<F>, dropout: Option<&mut Rng>) -> Result<Var> {
        self.forward_in(tape, &self.store, batch, dropout)
    }

    /// As [`Self::forward`] but reading parameters from `store`, which must
    /// share this model's layout.
    pub fn forward_in(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        batch: &WindowBatch<F>,
        mut dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        let rows = batch.batch * batch.k;
        let states = tape.constant(batch.states.clone());
        let rtgs = tape.constant(batch.rtgs.clone());
        let se = self.embed_state.forward(tape, store, states)?;
        let re = self.embed_rtg.forward(tape, store, rtgs)?;
        let table = tape.param(store, self.embed_time);
        let te = tape.gather_rows(table, &batch.timesteps);
        let se = tape.add(se, te);
        let re = tape.add(re, te);
        let stacked = tape.concat_rows(&[se, re]);
        let order: Vec<usize> = (0..rows).flat_map(|r| [r, rows + r]).collect();
        let tokens = tape.gather_rows(stacked, &order);
        let mut x = self.embed_ln.forward(tape, store, tokens);
        let p = self.config.transformer.dropout;
        if let Some(rng) = dropout.as_deref_mut().filter(|_| p > 0.0) {
            x = tape.dropout(x, crate::nn::dropout_mask(tape.value(x).dim(), p, rng));
        }
        let h = self.trunk.forward(tape, store, x, 2 * batch.k, Some(&batch.token_mask), dropout)?;
        let rtg_rows: Vec<usize> = (0..rows).map(|r| 2 * r + 1).collect();
        let h = tape.gather_rows(h, &rtg_rows);
        self.head.forward(tape, store, h).map_err(Into::into)
    }

    /// Mean absolute error of predicted state changes over slots that have a
    /// successor.
    pub fn loss(&self, tape: &mut Tape<F>, batch: &WindowBatch<F>, dropout: Option<&mut Rng>) -> Result<Var> {
        self.loss_in(tape, &self.store, batch, dropout)
    }

    pub fn loss_in(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        batch: &WindowBatch<F>,
        dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        let pred = self.forward_in(tape, store, batch, dropout)?;
        let target = tape.constant(batch.targets.clone());
        let mask = tape.constant(batch.target_mask.clone());
        let diff = tape.sub(pred, target);
        let err = tape.abs(diff);
        let err = tape.mul(err, mask);
        let total = tape.sum(err);
        let denom = (batch.n_targets.max(1) * self.state_dim) as f64;
        Ok(tape.scale(total, F::of(1.0 / denom)))
    }

    /// Eval-mode predicted changes.
    pub fn predict_deltas(&self, batch: &WindowBatch<F>) -> Result<Array2<F>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch, None)?;
        Ok(tape.value(out).clone())
    }

    /// Eval-mode next-state predictions for the final slot of each window:
    /// the latest state plus the predicted change.
    pub fn predict_last(&self, windows: &[Window]) -> Result<Vec<Vec<f64>>> {
        let batch = self.batch(windows)?;
        let deltas = self.predict_deltas(&batch)?;
        Ok(windows
            .iter()
            .enumerate()
            .map(|(b, w)| {
                let r = b * batch.k + batch.k - 1;
                deltas
                    .index_axis(Axis(0), r)
                    .iter()
                    .zip(w.states.row(batch.k - 1))
                    .map(|(d, s)| s + d.f64())
                    .collect()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Window;
    use crate::nn::{finite_difference_check, GradCheckOptions, TransformerSpec};
    use rand::Rng as _;

    pub(crate) fn small_config(k: usize) -> AfdtConfig {
        AfdtConfig {
            context_len: k,
            transformer: TransformerSpec {
                n_blocks: 1,
                n_heads: 2,
                d_embed: 8,
                dropout: 0.1,
                max_tokens: 2 * k,
            },
            max_timestep: 50,
            train_steps: 10,
            checkpoint_steps: vec![10],
            ..AfdtConfig::default()
        }
    }

    fn random_window(k: usize, sd: usize, n_valid: usize, rng: &mut Rng) -> Window {
        let mut w = Window::empty(k, sd);
        let t0 = rng.random_range(0..20);
        for i in k - n_valid..k {
            for j in 0..sd {
                w.states[[i, j]] = rng.random_range(-2.0..2.0);
                w.next_states[[i, j]] = rng.random_range(-2.0..2.0);
            }
            w.rtgs[i] = rng.random_range(-3.0..3.0);
            w.timesteps[i] = t0 + i;
            w.valid[i] = true;
            w.has_next[i] = true;
        }
        w
    }

    /// Perturbs every parameter so the zero-initialised head does not hide
    /// the rest of the network.
    fn randomise<F: Real>(store: &mut ParamStore<F>, seed: u64) {
        let mut rng = stream_rng(seed, 99);
        for p in store.iter_mut() {
            p.value.mapv_inplace(|v| v + F::of(rng.random_range(-0.3..0.3)));
        }
    }

    #[test]
    fn untrained_planner_predicts_no_change() {
        let m = AfdtModel::<f64>::new(small_config(4), 3, NormStats::unit(3), 1).unwrap();
        let mut rng = stream_rng(2, 0);
        let w = random_window(4, 3, 3, &mut rng);
        let next = m.predict_last(&[w.clone()]).unwrap();
        let last: Vec<f64> = w.states.row(3).to_vec();
        assert_eq!(next[0], last);
    }

    #[test]
    fn later_steps_do_not_affect_earlier_predictions() {
        let mut m = AfdtModel::<f64>::new(small_config(6), 2, NormStats::unit(2), 3).unwrap();
        randomise(&mut m.store, 3);
        let mut rng = stream_rng(4, 0);
        let a = random_window(6, 2, 6, &mut rng);
        let mut b = a.clone();
        b.states[[5, 0]] += 1.0;
        b.rtgs[4] -= 2.0;
        b.states[[4, 1]] = 7.0;
        let pa = m.predict_deltas(&m.batch(&[a]).unwrap()).unwrap();
        let pb = m.predict_deltas(&m.batch(&[b]).unwrap()).unwrap();
        for r in 0..4 {
            assert_eq!(pa.row(r), pb.row(r), "slot {r}");
        }
        assert_ne!(pa.row(4), pb.row(4));
    }

    #[test]
    fn padded_slot_contents_are_ignored() {
        let mut m = AfdtModel::<f64>::new(small_config(5), 2, NormStats::unit(2), 5).unwrap();
        randomise(&mut m.store, 5);
        let mut rng = stream_rng(6, 0);
        let a = random_window(5, 2, 2, &mut rng);
        let mut b = a.clone();
        b.states[[0, 0]] = 100.0;
        b.rtgs[1] = -50.0;
        b.timesteps[2] = 40;
        let pa = m.predict_last(&[a]).unwrap();
        let pb = m.predict_last(&[b]).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn padding_matches_unpadded_context() {
        let mut m = AfdtModel::<f64>::new(small_config(8), 3, NormStats::unit(3), 7).unwrap();
        randomise(&mut m.store, 7);
        let mut rng = stream_rng(8, 0);
        let padded = random_window(8, 3, 3, &mut rng);
        let mut short = Window::empty(3, 3);
        for i in 0..3 {
            short.states.row_mut(i).assign(&padded.states.row(5 + i));
            short.next_states.row_mut(i).assign(&padded.next_states.row(5 + i));
            short.rtgs[i] = padded.rtgs[5 + i];
            short.timesteps[i] = padded.timesteps[5 + i];
            short.valid[i] = true;
            short.has_next[i] = true;
        }
        let a = m.predict_last(&[padded]).unwrap();
        let b = m.predict_last(&[short]).unwrap();
        for (x, y) in a[0].iter().zip(&b[0]) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn batched_rows_are_independent() {
        let mut m = AfdtModel::<f64>::new(small_config(4), 2, NormStats::unit(2), 9).unwrap();
        randomise(&mut m.store, 9);
        let mut rng = stream_rng(10, 0);
        let ws: Vec<Window> = (0..3).map(|i| random_window(4, 2, 2 + i % 3, &mut rng)).collect();
        let together = m.predict_last(&ws).unwrap();
        for (i, w) in ws.iter().enumerate() {
            let alone = m.predict_last(std::slice::from_ref(w)).unwrap();
            for (x, y) in together[i].iter().zip(&alone[0]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translating_states_leaves_targets_unchanged() {
        let m = AfdtModel::<f64>::new(small_config(4), 2, NormStats::unit(2), 12).unwrap();
        let mut rng = stream_rng(11, 0);
        let w = random_window(4, 2, 4, &mut rng);
        let mut shifted = w.clone();
        shifted.states.mapv_inplace(|v| v + 10.0);
        shifted.next_states.mapv_inplace(|v| v + 10.0);
        let ba = m.batch(&[w]).unwrap();
        let bb = m.batch(&[shifted]).unwrap();
        assert!(ba.targets.iter().zip(bb.targets.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_ne!(ba.states, bb.states);
    }

    #[test]
    fn imitation_mode_ignores_returns() {
        let mut cfg = small_config(4);
        cfg.mode = PlannerMode::Imitation;
        let mut m = AfdtModel::<f64>::new(cfg, 2, NormStats::unit(2), 13).unwrap();
        randomise(&mut m.store, 13);
        let mut rng = stream_rng(14, 0);
        let a = random_window(4, 2, 4, &mut rng);
        let mut b = a.clone();
        b.rtgs.iter_mut().for_each(|r| *r = *r * 7.0 + 3.0);
        assert_eq!(m.predict_last(&[a]).unwrap(), m.predict_last(&[b]).unwrap());
    }

    #[test]
    fn loss_matches_hand_computed_l1() {
        let m = AfdtModel::<f64>::new(small_config(3), 2, NormStats::unit(2), 15).unwrap();
        let mut w = Window::empty(3, 2);
        w.valid = vec![false, true, true];
        w.has_next = vec![false, true, false];
        w.timesteps = vec![0, 4, 5];
        w.states[[1, 0]] = 1.0;
        w.states[[1, 1]] = 2.0;
        w.next_states[[1, 0]] = 1.5;
        w.next_states[[1, 1]] = 1.0;
        let batch = m.batch(&[w]).unwrap();
        let mut tape = Tape::new();
        let l = m.loss(&mut tape, &batch, None).unwrap();
        // Zero head: predicted change is 0, one target row of |0.5| and |-1|.
        assert_eq!(tape.scalar(l), (0.5 + 1.0) / 2.0);
    }

    #[test]
    fn constant_trajectories_give_zero_loss() {
        let m = AfdtModel::<f64>::new(small_config(4), 2, NormStats::unit(2), 16).unwrap();
        let mut w = Window::empty(4, 2);
        for i in 0..4 {
            w.states.row_mut(i).fill(3.0);
            w.next_states.row_mut(i).fill(3.0);
            w.valid[i] = true;
            w.has_next[i] = true;
            w.timesteps[i] = i;
        }
        let batch = m.batch(&[w]).unwrap();
        let mut tape = Tape::new();
        let l = m.loss(&mut tape, &batch, None).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut cfg = small_config(3);
        cfg.transformer.dropout = 0.0;
        let mut m = AfdtModel::<f64>::new(cfg, 2, NormStats::unit(2), 17).unwrap();
        randomise(&mut m.store, 17);
        let mut rng = stream_rng(18, 0);
        let ws: Vec<Window> = (0..2).map(|_| random_window(3, 2, 3, &mut rng)).collect();
        let batch = m.batch(&ws).unwrap();
        let mut store = m.store.clone();
        let err = finite_difference_check(
            &mut store,
            |tape, s| {
                m.loss_in(tape, s, &batch, None).map_err(|e| match e {
                    AfdtError::Nn(n) => n,
                    other => crate::nn::NnError::InvalidSpec(other.to_string()),
                })
            },
            &GradCheckOptions {
                epsilon: 1e-6,
                coords_per_param: 4,
                seed: 19,
            },
        )
        .unwrap();
        assert!(err < 1e-5, "relative gradient error {err}");
    }

    type Mat = Vec<Vec<f64>>;

    fn p(store: &ParamStore<f64>, name: &str) -> Mat {
        let v = store.value(store.find(name).unwrap_or_else(|| panic!("{name}")));
        v.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn affine(x: &[f64], w: &Mat, b: &Mat) -> Vec<f64> {
        (0..w[0].len())
            .map(|j| b[0][j] + x.iter().zip(w).map(|(xi, row)| xi * row[j]).sum::<f64>())
            .collect()
    }

    fn norm(x: &[f64], g: &Mat, b: &Mat) -> Vec<f64> {
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - mu) / (var + 1e-5).sqrt() * g[0][i] + b[0][i])
            .collect()
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
    }

    #[test]
    fn two_step_forward_matches_hand_computation() {
        let mut cfg = small_config(2);
        cfg.transformer.n_heads = 1;
        let mut m = AfdtModel::<f64>::new(cfg, 2, NormStats::unit(2), 21).unwrap();
        randomise(&mut m.store, 21);
        let mut w = Window::empty(2, 2);
        w.states = ndarray::array![[0.3, -1.2], [0.5, 0.7]];
        w.rtgs = vec![2.5, 1.75];
        w.timesteps = vec![3, 4];
        w.valid = vec![true, true];
        let got = m.predict_deltas(&m.batch(&[w.clone()]).unwrap()).unwrap();

        let st = &m.store;
        let time = p(st, "embed_time");
        let mut x: Mat = Vec::new();
        for i in 0..2 {
            let t = &time[w.timesteps[i]];
            let se = affine(&w.states.row(i).to_vec(), &p(st, "embed_state.w"), &p(st, "embed_state.b"));
            let re = affine(&[w.rtgs[i]], &p(st, "embed_rtg.w"), &p(st, "embed_rtg.b"));
            x.push(se.iter().zip(t).map(|(a, b)| a + b).collect());
            x.push(re.iter().zip(t).map(|(a, b)| a + b).collect());
        }
        let (g, b) = (p(st, "embed_ln.gamma"), p(st, "embed_ln.beta"));
        let mut x: Mat = x.iter().map(|r| norm(r, &g, &b)).collect();
        let pre = "trunk.h0";
        let h: Mat = x.iter().map(|r| norm(r, &p(st, &format!("{pre}.ln1.gamma")), &p(st, &format!("{pre}.ln1.beta")))).collect();
        let lin = |r: &[f64], n: &str| affine(r, &p(st, &format!("{pre}.{n}.w")), &p(st, &format!("{pre}.{n}.b")));
        let q: Mat = h.iter().map(|r| lin(r, "attn.q")).collect();
        let k: Mat = h.iter().map(|r| lin(r, "attn.k")).collect();
        let v: Mat = h.iter().map(|r| lin(r, "attn.v")).collect();
        let d = q[0].len() as f64;
        for i in 0..4 {
            let scores: Vec<f64> = (0..=i).map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / d.sqrt()).collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            let att: Vec<f64> = (0..v[0].len()).map(|c| (0..=i).map(|j| e[j] / z * v[j][c]).sum()).collect();
            let o = lin(&att, "attn.proj");
            x[i] = x[i].iter().zip(&o).map(|(a, b)| a + b).collect();
        }
        for row in x.iter_mut() {
            let h = norm(row, &p(st, &format!("{pre}.ln2.gamma")), &p(st, &format!("{pre}.ln2.beta")));
            let f: Vec<f64> = lin(&h, "mlp.fc").into_iter().map(gelu).collect();
            let o = lin(&f, "mlp.proj");
            *row = row.iter().zip(&o).map(|(a, b)| a + b).collect();
        }
        for i in 0..2 {
            let want = affine(&x[2 * i + 1], &p(st, "pred_state.w"), &p(st, "pred_state.b"));
            for j in 0..2 {
                assert!((got[[i, j]] - want[j]).abs() < 1e-5, "step {i} dim {j}: {} vs {}", got[[i, j]], want[j]);
            }
        }
    }

    #[test]
    fn out_of_range_timestep_is_rejected() {
        let m = AfdtModel::<f64>::new(small_config(2), 1, NormStats::unit(1), 20).unwrap();
        let mut w = Window::empty(2, 1);
        w.valid[1] = true;
        w.timesteps[1] = 51;
        assert!(matches!(m.batch(&[w]), Err(AfdtError::TimestepOutOfRange { t: 51, max: 50 })));
    }
}
