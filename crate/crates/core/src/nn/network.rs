use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spec::{LayerSpec, NetworkSpec};
use super::NetError;
use crate::autodiff::{Gradients, Tape, Tensor, TensorError, Var};

/// Standard deviation of the Gaussian used for weight initialisation.
pub const INIT_STD: f64 = 0.02;
/// Weight on the previous running statistic in the batch-norm moving average.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch-norm uses batch statistics and updates its running averages.
    Train,
    /// Batch-norm uses the running averages.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// A [`NetworkSpec`] with its parameters and batch-norm running statistics.
///
/// Serialises to a self-describing checkpoint; floats round-trip exactly
/// through `serde_json` with `float_roundtrip`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    spec: NetworkSpec,
    init_seed: u64,
    /// Per layer, the index range of its parameters in `params`.
    layout: Vec<(usize, usize)>,
    params: Vec<Parameter>,
    /// Per layer; `Some` only for batch-norm layers.
    running: Vec<Option<RunningStats>>,
}

/// Parameters of a [`Network`] recorded on a particular tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    trainable: bool,
}

impl Bound {
    /// Wraps parameter variables recorded by the caller, in the order of
    /// [`Network::params`].
    pub fn from_vars(vars: Vec<Var>, trainable: bool) -> Self {
        Self { vars, trainable }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

impl Network {
    /// Builds a network with freshly initialised parameters.
    ///
    /// Dense and convolution weights are drawn from `N(0, 0.02^2)`; biases
    /// start at zero, batch-norm scales at one and attention gates at zero.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self, NetError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut gauss = |shape: &[usize]| -> Tensor {
            let n = shape.iter().product();
            let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
            Tensor::new(shape.to_vec(), data).expect("positive shape")
        };
        let mut params = Vec::new();
        let mut layout = Vec::new();
        let mut running = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            let start = params.len();
            let mut add = |suffix: &str, value: Tensor| {
                params.push(Parameter {
                    name: format!("{i}.{}.{suffix}", layer.kind()),
                    value,
                })
            };
            let mut stats = None;
            match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    add("weight", gauss(&[outputs, inputs]));
                    add("bias", Tensor::zeros(&[outputs]));
                }
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    add("weight", gauss(&[out_channels, in_channels, kernel]));
                    add("bias", Tensor::zeros(&[out_channels]));
                }
                LayerSpec::Conv1dTranspose {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    add("weight", gauss(&[in_channels, out_channels, kernel]));
                    add("bias", Tensor::zeros(&[out_channels]));
                }
                LayerSpec::BatchNorm { features } => {
                    add("gamma", Tensor::full(&[features], 1.0));
                    add("beta", Tensor::zeros(&[features]));
                    stats = Some(RunningStats {
                        mean: vec![0.0; features],
                        var: vec![1.0; features],
                    });
                }
                LayerSpec::SelfAttention {
                    channels,
                    key_channels,
                } => {
                    add("query", gauss(&[key_channels, channels, 1]));
                    add("key", gauss(&[key_channels, channels, 1]));
                    add("value", gauss(&[channels, channels, 1]));
                    add("gamma", Tensor::zeros(&[1]));
                }
                LayerSpec::Activation { .. } | LayerSpec::Reshape { .. } => {}
            }
            layout.push((start, params.len()));
            running.push(stats);
        }
        Ok(Self {
            spec,
            init_seed: seed,
            layout,
            params,
            running,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn running_stats(&self) -> impl Iterator<Item = &RunningStats> {
        self.running.iter().flatten()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter on `tape`, as variables when `trainable` and
    /// as constants otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Bound, NetError> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let t = p.value.clone().with_requires_grad(trainable);
                tape.leaf(t)
            })
            .collect::<Result<_, _>>()?;
        Ok(Bound { vars, trainable })
    }

    /// Forward pass over a batch `[batch, ..input_shape]`.
    ///
    /// In [`Mode::Train`] batch-norm layers normalise with batch statistics
    /// and fold them into the running averages.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        bound: &Bound,
        input: Var,
        mode: Mode,
    ) -> Result<Var, NetError> {
        let (out, stats) = self.run(tape, bound, input, mode)?;
        for (layer, batch) in stats {
            let rs = self.running[layer].as_mut().expect("batch-norm layer");
            for (r, b) in rs.mean.iter_mut().zip(&batch.mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
            for (r, b) in rs.var.iter_mut().zip(&batch.var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
        }
        Ok(out)
    }

    /// Train-mode normalisation with batch statistics that are not folded into
    /// the running averages; leaves the network untouched.
    pub fn forward_batch_stats(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: Var,
    ) -> Result<Var, NetError> {
        Ok(self.run(tape, bound, input, Mode::Train)?.0)
    }

    /// Eval-mode forward pass; leaves the network untouched.
    pub fn forward_eval(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: Var,
    ) -> Result<Var, NetError> {
        Ok(self.run(tape, bound, input, Mode::Eval)?.0)
    }

    /// Eval-mode forward pass without recording gradients.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor, NetError> {
        let mut tape = Tape::inference();
        let bound = self.bind(&mut tape, false)?;
        let x = tape.constant(input.clone())?;
        let y = self.forward_eval(&mut tape, &bound, x)?;
        Ok(tape.value(y)?.clone())
    }

    fn run(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<(usize, crate::autodiff::BatchStats)>), NetError> {
        if bound.vars.len() != self.params.len() {
            return Err(NetError::Spec(format!(
                "bound {} parameters, network has {}",
                bound.vars.len(),
                self.params.len()
            )));
        }
        let in_shape = tape.shape(input)?.to_vec();
        if in_shape.len() != self.spec.input_shape.len() + 1
            || in_shape[1..] != self.spec.input_shape[..]
        {
            return Err(NetError::Input(format!(
                "expected [batch, {:?}], got {in_shape:?}",
                self.spec.input_shape
            )));
        }
        let batch = in_shape[0];
        let mut stats = Vec::new();
        let mut x = input;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let (s, e) = self.layout[i];
            let p = &bound.vars[s..e];
            let wrap = |err: TensorError| NetError::Layer {
                layer: i,
                kind: layer.kind(),
                source: err,
            };
            x = match *layer {
                LayerSpec::Dense { .. } => {
                    let y = tape.matmul_ext(x, p[0], false, true).map_err(wrap)?;
                    tape.bias_add(y, p[1]).map_err(wrap)?
                }
                LayerSpec::Conv1d {
                    stride, padding, ..
                } => {
                    let y = tape.conv1d(x, p[0], stride, padding).map_err(wrap)?;
                    tape.bias_add(y, p[1]).map_err(wrap)?
                }
                LayerSpec::Conv1dTranspose {
                    stride, padding, ..
                } => {
                    let y = tape
                        .conv1d_transpose(x, p[0], stride, padding)
                        .map_err(wrap)?;
                    tape.bias_add(y, p[1]).map_err(wrap)?
                }
                LayerSpec::BatchNorm { .. } => match mode {
                    Mode::Train => {
                        let (y, st) = tape.batch_norm(x, p[0], p[1], BN_EPS).map_err(wrap)?;
                        stats.push((i, st));
                        y
                    }
                    Mode::Eval => {
                        let rs = self.running[i].as_ref().expect("batch-norm layer");
                        tape.batch_norm_fixed(x, p[0], p[1], &rs.mean, &rs.var, BN_EPS)
                            .map_err(wrap)?
                    }
                },
                LayerSpec::Activation { activation } => {
                    tape.activation(x, activation).map_err(wrap)?
                }
                LayerSpec::SelfAttention { .. } => {
                    self_attention(tape, x, p[0], p[1], p[2], p[3])
                        .map_err(wrap)?
                        .0
                }
                LayerSpec::Reshape { ref shape } => {
                    let mut full = vec![batch];
                    full.extend_from_slice(shape);
                    tape.reshape(x, &full).map_err(wrap)?
                }
            };
        }
        Ok((x, stats))
    }

    /// Adds the gradients of bound parameters to each parameter's `grad`.
    pub fn accumulate_grads(&mut self, bound: &Bound, grads: &Gradients) -> Result<(), NetError> {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(v)? {
                p.value.accumulate_grad(g.data())?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.value.zero_grad();
        }
    }

    /// Reloads a checkpoint, checking it against its own spec.
    pub fn from_json(json: &str) -> Result<Self, NetError> {
        let net: Network =
            serde_json::from_str(json).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        net.check_consistency()?;
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String, NetError> {
        serde_json::to_string(self).map_err(|e| NetError::Checkpoint(e.to_string()))
    }

    fn check_consistency(&self) -> Result<(), NetError> {
        let fresh = Network::new(self.spec.clone(), 0)?;
        let bad = |what: String| Err(NetError::Checkpoint(what));
        if fresh.layout != self.layout || fresh.params.len() != self.params.len() {
            return bad("parameter layout does not match the spec".into());
        }
        for (f, p) in fresh.params.iter().zip(&self.params) {
            if f.name != p.name || f.value.shape() != p.value.shape() {
                return bad(format!("parameter {} does not match the spec", p.name));
            }
            if !p.value.is_finite() {
                return bad(format!("parameter {} is not finite", p.name));
            }
        }
        for (f, r) in fresh.running.iter().zip(&self.running) {
            let ok = match (f, r) {
                (None, None) => true,
                (Some(f), Some(r)) => f.mean.len() == r.mean.len() && f.var.len() == r.var.len(),
                _ => false,
            };
            if !ok {
                return bad("running statistics do not match the spec".into());
            }
        }
        Ok(())
    }
}

/// Self-attention over the positions of `x` (`[channels, L]` or
/// `[batch, channels, L]`), returning the output and the attention map.
///
/// Queries, keys and values are 1x1 convolutions. The map `A` is
/// `[batch, L, L]` with `A[i, j]` the weight of position `i` in the output at
/// position `j`; each column sums to one. The output is `x + gamma * V A`.
pub fn self_attention(
    tape: &mut Tape,
    x: Var,
    w_query: Var,
    w_key: Var,
    w_value: Var,
    gamma: Var,
) -> Result<(Var, Var), TensorError> {
    let shape = tape.shape(x)?.to_vec();
    let x3 = match shape.len() {
        3 => x,
        2 => tape.reshape(x, &[1, shape[0], shape[1]])?,
        _ => {
            return Err(TensorError::Shape(format!(
                "self_attention input must be rank 2 or 3, got {shape:?}"
            )))
        }
    };
    let q = tape.conv1d(x3, w_query, 1, 0)?;
    let k = tape.conv1d(x3, w_key, 1, 0)?;
    let v = tape.conv1d(x3, w_value, 1, 0)?;
    let scores = tape.matmul_ext(q, k, true, false)?;
    let attn = tape.softmax(scores, 1)?;
    let mixed = tape.matmul(v, attn)?;
    let gated = tape.scale_by(mixed, gamma)?;
    let out = tape.add(x3, gated)?;
    let out = if shape.len() == 2 {
        tape.reshape(out, &shape)?
    } else {
        out
    };
    Ok((out, attn))
}
