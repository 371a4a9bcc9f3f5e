use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::{check_dim, NnError, Real, Result};
use crate::rng::Rng;

/// Weight initialisation schemes. Biases always start at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanInUniform,
    /// Normal with the given std, resampled outside two standard deviations.
    TruncatedNormal(f64),
    Zeros,
}

impl Init {
    pub fn sample<F: Real>(self, rows: usize, cols: usize, rng: &mut Rng) -> Array2<F> {
        match self {
            Init::FanInUniform => {
                let bound = 1.0 / (rows as f64).sqrt();
                Array2::from_shape_simple_fn((rows, cols), || {
                    F::of(rng.random_range(-bound..bound))
                })
            }
            Init::TruncatedNormal(std) => Array2::from_shape_simple_fn((rows, cols), || loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break F::of(z * std);
                }
            }),
            Init::Zeros => Array2::zeros((rows, cols)),
        }
    }
}

/// Affine map `x W + b`, with `W` stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.w"), init.sample(in_dim, out_dim, rng));
        let bias = store.add(format!("{name}.b"), Array2::zeros((1, out_dim)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        check_dim("linear input", self.in_dim, tape.value(x).ncols())?;
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w);
        Ok(tape.add_bias(xw, b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Array2::ones((1, dim)));
        let beta = store.add(format!("{name}.beta"), Array2::zeros((1, dim)));
        Self {
            gamma,
            beta,
            eps: 1e-5,
        }
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Var {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, self.eps)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_layers")]
    pub n_hidden_layers: usize,
    pub output_dim: usize,
}

fn default_hidden() -> usize {
    256
}

fn default_layers() -> usize {
    3
}

impl MlpSpec {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: default_hidden(),
            n_hidden_layers: default_layers(),
            output_dim,
        }
    }

    pub fn with_hidden(mut self, hidden_dim: usize, n_hidden_layers: usize) -> Self {
        self.hidden_dim = hidden_dim;
        self.n_hidden_layers = n_hidden_layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || (self.n_hidden_layers > 0 && self.hidden_dim == 0) {
            return Err(NnError::InvalidSpec(format!("MLP dims must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

/// ReLU multilayer perceptron. `n_hidden_layers == 0` is a single affine map.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut dims = vec![spec.input_dim];
        dims.extend(std::iter::repeat_n(spec.hidden_dim, spec.n_hidden_layers));
        dims.push(spec.output_dim);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.l{i}"), w[0], w[1], Init::FanInUniform, rng))
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        check_dim("mlp input", self.spec.input_dim, tape.value(x).ncols())?;
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Forward pass without recording gradients for a single input row.
    pub fn eval<F: Real>(&self, store: &ParamStore<F>, x: &[F]) -> Result<Vec<F>> {
        check_dim("mlp input", self.spec.input_dim, x.len())?;
        let mut tape = Tape::new();
        tape.freeze(store);
        let xv = tape.constant(Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row"));
        let out = self.forward(&mut tape, store, xv)?;
        Ok(tape.value(out).iter().copied().collect())
    }

    /// Smallest absolute pre-activation over every hidden unit for input `x`.
    pub fn min_abs_preactivation<F: Real>(&self, store: &ParamStore<F>, x: &Array2<F>) -> f64 {
        let mut h = x.clone();
        let mut min = f64::INFINITY;
        for layer in &self.layers[..self.layers.len() - 1] {
            let z = h.dot(store.value(layer.weight)) + store.value(layer.bias);
            for &v in z.iter() {
                min = min.min(v.f64().abs());
            }
            h = z.mapv(|v| v.max(F::zero()));
        }
        min
    }
}
