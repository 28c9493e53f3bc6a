//! Parameter storage, layer builders, and the Adam optimizer.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};

/// Index of one named parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
}

/// Named parameter tensors in registration order. Order is part of the
/// checkpoint contract, so construction must be deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.entries.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[Param] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param] {
        &mut self.entries
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }
}

/// Xavier-uniform initialization: +-sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// Tracks which tape leaf each parameter was loaded into during one forward
/// pass, so gradients can be read back in parameter order. A frozen binding
/// loads parameters as constants for inference-only passes.
#[derive(Debug, Default)]
pub struct TapeBindings {
    pairs: Vec<(ParamId, Var)>,
    frozen: bool,
}

impl TapeBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frozen() -> Self {
        TapeBindings {
            pairs: Vec::new(),
            frozen: true,
        }
    }

    /// Load a parameter into the tape (differentiable unless frozen).
    pub fn load(&mut self, tape: &mut Tape, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&(_, var)) = self.pairs.iter().find(|(pid, _)| *pid == id) {
            return var;
        }
        let var = if self.frozen {
            tape.constant(params.value(id).clone())
        } else {
            tape.leaf(params.value(id).clone())
        };
        self.pairs.push((id, var));
        var
    }

    /// Gradients per parameter, zeros for parameters the loss never touched.
    pub fn gradients(&self, tape: &Tape, params: &ParamSet) -> Vec<Array2<f64>> {
        let mut grads: Vec<Array2<f64>> = params
            .entries()
            .iter()
            .map(|p| Array2::zeros(p.value.dim()))
            .collect();
        for &(id, var) in &self.pairs {
            if let Some(g) = tape.grad(var) {
                grads[id.0] += g;
            }
        }
        grads
    }
}

/// Dense layer with bias.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), xavier_uniform(in_dim, out_dim, rng));
        let b = ps.add(format!("{name}.b"), Array2::zeros((1, out_dim)));
        Linear { w, b }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBindings,
        ps: &ParamSet,
        x: Var,
    ) -> Var {
        let w = bind.load(tape, ps, self.w);
        let b = bind.load(tape, ps, self.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

/// LayerNorm over the feature axis with learnable scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        let gain = ps.add(format!("{name}.g"), Array2::ones((1, dim)));
        let bias = ps.add(format!("{name}.b"), Array2::zeros((1, dim)));
        LayerNorm {
            gain,
            bias,
            eps: 1e-5,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBindings,
        ps: &ParamSet,
        x: Var,
    ) -> Var {
        let n = tape.normalize_rows(x, self.eps);
        let g = bind.load(tape, ps, self.gain);
        let b = bind.load(tape, ps, self.bias);
        let scaled = tape.mul_row(n, g);
        tape.add_row(scaled, b)
    }
}

/// Hidden activation for [`Mlp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Elu,
}

/// Feed-forward stack with an activation on every hidden layer and a linear
/// output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        dims: &[usize],
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        debug_assert!(dims.len() >= 2);
        let layers = (0..dims.len() - 1)
            .map(|l| Linear::new(ps, &format!("{name}.l{l}"), dims[l], dims[l + 1], rng))
            .collect();
        Mlp { layers, activation }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBindings,
        ps: &ParamSet,
        mut x: Var,
    ) -> Var {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, bind, ps, x);
            if l < last {
                x = match self.activation {
                    Activation::Tanh => tape.tanh(x),
                    Activation::Elu => tape.elu(x, 1.0),
                };
            }
        }
        x
    }

    /// Tape-free forward for inference on frozen parameters.
    pub fn forward_plain(&self, ps: &ParamSet, x: &Array2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            h = h.dot(ps.value(layer.w)) + ps.value(layer.b);
            if l < last {
                match self.activation {
                    Activation::Tanh => h.mapv_inplace(f64::tanh),
                    Activation::Elu => {
                        h.mapv_inplace(|v| if v > 0.0 { v } else { v.exp() - 1.0 })
                    }
                }
            }
        }
        h
    }
}

/// Adam configuration; defaults follow common practice.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            step: 0,
            m: params
                .entries()
                .iter()
                .map(|p| Array2::zeros(p.value.dim()))
                .collect(),
            v: params
                .entries()
                .iter()
                .map(|p| Array2::zeros(p.value.dim()))
                .collect(),
        }
    }
}

/// One Adam update with bias correction.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[Array2<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    debug_assert_eq!(grads.len(), params.len());
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (idx, grad) in grads.iter().enumerate() {
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        *m *= cfg.beta1;
        *m += &(grad * (1.0 - cfg.beta1));
        *v *= cfg.beta2;
        *v += &(&(grad * grad) * (1.0 - cfg.beta2));
        let value = params.value_mut(ParamId(idx));
        ndarray::Zip::from(&mut *value)
            .and(&*m)
            .and(&*v)
            .for_each(|p, &mi, &vi| {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            });
    }
}

/// Scale all gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}
