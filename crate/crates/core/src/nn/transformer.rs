use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::layers::{Init, LayerNorm, Linear};
use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::{check_dim, NnError, Real, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerSpec {
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_embed: usize,
    pub dropout: f64,
    pub max_tokens: usize,
}

impl Default for TransformerSpec {
    fn default() -> Self {
        Self {
            n_blocks: 3,
            n_heads: 1,
            d_embed: 128,
            dropout: 0.1,
            max_tokens: 40,
        }
    }
}

impl TransformerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.n_heads == 0 || self.d_embed == 0 || self.max_tokens == 0 {
            return Err(NnError::InvalidSpec(format!("transformer sizes must be >= 1: {self:?}")));
        }
        if self.d_embed % self.n_heads != 0 {
            return Err(NnError::InvalidSpec(format!(
                "d_embed {} not divisible by n_heads {}",
                self.d_embed, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::InvalidSpec(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Pre-norm decoder block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[derive(Clone, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc: Linear,
    pub fc_out: Linear,
}

/// Causal transformer trunk. Positional information is supplied by the
/// caller; the trunk has no position table and no final norm.
#[derive(Clone, Debug)]
pub struct Transformer {
    pub spec: TransformerSpec,
    pub blocks: Vec<Block>,
}

pub(crate) fn dropout_mask<F: Real>(shape: (usize, usize), p: f64, rng: &mut Rng) -> Array2<F> {
    let keep = F::of(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    })
}

impl Transformer {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, spec: TransformerSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let d = spec.d_embed;
        let init = Init::TruncatedNormal(0.02);
        let blocks = (0..spec.n_blocks)
            .map(|i| {
                let p = format!("{name}.h{i}");
                Block {
                    ln1: LayerNorm::new(store, &format!("{p}.ln1"), d),
                    query: Linear::new(store, &format!("{p}.attn.q"), d, d, init, rng),
                    key: Linear::new(store, &format!("{p}.attn.k"), d, d, init, rng),
                    value: Linear::new(store, &format!("{p}.attn.v"), d, d, init, rng),
                    proj: Linear::new(store, &format!("{p}.attn.proj"), d, d, init, rng),
                    ln2: LayerNorm::new(store, &format!("{p}.ln2"), d),
                    fc: Linear::new(store, &format!("{p}.mlp.fc"), d, 4 * d, init, rng),
                    fc_out: Linear::new(store, &format!("{p}.mlp.proj"), 4 * d, d, init, rng),
                }
            })
            .collect();
        Ok(Self { spec, blocks })
    }

    /// `tokens` holds `rows / seq_len` sequences stacked row-wise. Passing a
    /// dropout RNG switches on training-mode dropout.
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        tokens: Var,
        seq_len: usize,
        key_mask: Option<&[bool]>,
        mut dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        if seq_len > self.spec.max_tokens {
            return Err(NnError::SequenceTooLong {
                got: seq_len,
                max: self.spec.max_tokens,
            });
        }
        let (rows, width) = tape.value(tokens).dim();
        check_dim("transformer width", self.spec.d_embed, width)?;
        if seq_len == 0 || rows % seq_len != 0 {
            return Err(NnError::InvalidSpec(format!(
                "{rows} token rows do not split into sequences of {seq_len}"
            )));
        }
        let p = self.spec.dropout;
        let mut x = tokens;
        for block in &self.blocks {
            let h = block.ln1.forward(tape, store, x);
            let q = block.query.forward(tape, store, h)?;
            let k = block.key.forward(tape, store, h)?;
            let v = block.value.forward(tape, store, h)?;
            let a = tape.attention(q, k, v, self.spec.n_heads, seq_len, true, key_mask);
            let mut a = block.proj.forward(tape, store, a)?;
            if let Some(rng) = dropout.as_deref_mut().filter(|_| p > 0.0) {
                a = tape.dropout(a, dropout_mask(tape.value(a).dim(), p, rng));
            }
            x = tape.add(x, a);

            let h = block.ln2.forward(tape, store, x);
            let h = block.fc.forward(tape, store, h)?;
            let h = tape.gelu(h);
            let mut m = block.fc_out.forward(tape, store, h)?;
            if let Some(rng) = dropout.as_deref_mut().filter(|_| p > 0.0) {
                m = tape.dropout(m, dropout_mask(tape.value(m).dim(), p, rng));
            }
            x = tape.add(x, m);
        }
        Ok(x)
    }
}
