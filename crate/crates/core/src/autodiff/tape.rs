use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::{Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
    },
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    ScaleBy {
        a: usize,
        s: usize,
    },
    BiasAdd {
        x: usize,
        bias: usize,
    },
    ChannelSum(usize),
    ChannelBroadcast(usize),
    Sum(usize),
    Expand(usize),
    SumAxis {
        a: usize,
        axis: usize,
    },
    BroadcastAxis {
        a: usize,
        axis: usize,
    },
    Reshape(usize),
    Conv1d {
        x: usize,
        w: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose {
        x: usize,
        w: usize,
        stride: usize,
        padding: usize,
    },
    ConvWeightGrad {
        input: usize,
        gout: usize,
        stride: usize,
        padding: usize,
    },
    LeakyRelu {
        a: usize,
        alpha: f64,
    },
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Recip(usize),
    Clamp {
        a: usize,
        lo: f64,
        hi: f64,
    },
    Softmax {
        a: usize,
        axis: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ScaleBy { .. } => "scale_by",
            Op::BiasAdd { .. } => "bias_add",
            Op::ChannelSum(_) => "channel_sum",
            Op::ChannelBroadcast(_) => "channel_broadcast",
            Op::Sum(_) => "sum",
            Op::Expand(_) => "expand",
            Op::SumAxis { .. } => "sum_axis",
            Op::BroadcastAxis { .. } => "broadcast_axis",
            Op::Reshape(_) => "reshape",
            Op::Conv1d { .. } => "conv1d",
            Op::ConvTranspose { .. } => "conv1d_transpose",
            Op::ConvWeightGrad { .. } => "conv1d_weight_grad",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Recip(_) => "recip",
            Op::Clamp { .. } => "clamp",
            Op::Softmax { .. } => "softmax",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::ScaleBy { a, s } => vec![a, s],
            Op::BiasAdd { x, bias } => vec![x, bias],
            Op::Conv1d { x, w, .. } | Op::ConvTranspose { x, w, .. } => vec![x, w],
            Op::ConvWeightGrad { input, gout, .. } => vec![input, gout],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::ChannelSum(a)
            | Op::ChannelBroadcast(a)
            | Op::Sum(a)
            | Op::Expand(a)
            | Op::SumAxis { a, .. }
            | Op::BroadcastAxis { a, .. }
            | Op::Reshape(a)
            | Op::LeakyRelu { a, .. }
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Recip(a)
            | Op::Clamp { a, .. }
            | Op::Softmax { a, .. } => vec![a],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic computation record for reverse-mode differentiation.
///
/// Every operation evaluates eagerly and appends a node; nodes are therefore
/// always in topological order. Backward rules are themselves written in terms
/// of tape operations, so gradients can be recorded and differentiated again
/// (see [`Tape::grad`] with `create_graph = true`).
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grad_enabled: bool,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every gradient-requiring leaf.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient for `var`, `None` if it did not influence the loss.
    pub fn get(&self, var: Var) -> Result<Option<&Tensor>, TensorError> {
        if var.tape != self.tape {
            return Err(TensorError::ForeignVar);
        }
        Ok(self.grads.get(&var.index))
    }

    /// Gradient for `var`, or an error if it received none.
    pub fn wrt(&self, var: Var) -> Result<&Tensor, TensorError> {
        self.get(var)?.ok_or(TensorError::NoGradient)
    }
}

type Vjp = Vec<(usize, Var)>;

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grad_enabled: true,
            backward_done: false,
        }
    }

    /// A tape that never records gradient information (inference).
    pub fn inference() -> Self {
        let mut t = Self::new();
        t.grad_enabled = false;
        t
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize, TensorError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.index)
    }

    fn var(&self, index: usize) -> Var {
        Var {
            tape: self.id,
            index,
        }
    }

    fn node_value(&self, index: usize) -> &Tensor {
        &self.nodes[index].value
    }

    fn shape_of(&self, index: usize) -> &[usize] {
        self.nodes[index].value.shape()
    }

    pub fn value(&self, v: Var) -> Result<&Tensor, TensorError> {
        Ok(self.node_value(self.check(v)?))
    }

    pub fn shape(&self, v: Var) -> Result<&[usize], TensorError> {
        Ok(self.shape_of(self.check(v)?))
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool, TensorError> {
        Ok(self.nodes[self.check(v)?].requires_grad)
    }

    /// Records a leaf; it takes part in differentiation iff
    /// `tensor.requires_grad()` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<Var, TensorError> {
        if !tensor.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        let requires_grad = tensor.requires_grad() && self.grad_enabled;
        let value = Tensor::from_parts(tensor.shape().to_vec(), tensor.into_data());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(self.var(self.nodes.len() - 1))
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Result<Var, TensorError> {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Records a gradient-requiring leaf.
    pub fn variable(&mut self, tensor: Tensor) -> Result<Var, TensorError> {
        self.leaf(tensor.with_requires_grad(true))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad =
            self.grad_enabled && op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(self.var(self.nodes.len() - 1))
    }

    // ---------------------------------------------------------------- ops

    /// Matrix product of two rank-2 tensors, or batched product of two rank-3
    /// tensors, optionally transposing the trailing two dimensions of either.
    pub fn matmul_ext(
        &mut self,
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
    ) -> Result<Var, TensorError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.shape_of(ia).to_vec(), self.shape_of(ib).to_vec());
        if sa.len() != sb.len() || !(sa.len() == 2 || sa.len() == 3) {
            return Err(TensorError::Shape(format!(
                "matmul needs two rank-2 or two rank-3 tensors, got {sa:?} and {sb:?}"
            )));
        }
        let batched = sa.len() == 3;
        let (batch, ra, ca, rb, cb) = if batched {
            if sa[0] != sb[0] {
                return Err(TensorError::Shape(format!(
                    "batch mismatch {sa:?} vs {sb:?}"
                )));
            }
            (sa[0], sa[1], sa[2], sb[1], sb[2])
        } else {
            (1, sa[0], sa[1], sb[0], sb[1])
        };
        let (m, k) = if trans_a { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if trans_b { (cb, rb) } else { (rb, cb) };
        if k != k2 {
            return Err(TensorError::Shape(format!(
                "matmul inner dimensions disagree: {sa:?} x {sb:?}"
            )));
        }
        let data = kernels::matmul(
            self.node_value(ia).data(),
            self.node_value(ib).data(),
            batch,
            m,
            k,
            n,
            trans_a,
            trans_b,
        );
        let shape = if batched {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        self.push(
            Tensor::from_parts(shape, data),
            Op::MatMul {
                a: ia,
                b: ib,
                ta: trans_a,
                tb: trans_b,
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_ext(a, b, false, false)
    }

    fn same_shape(&self, ia: usize, ib: usize, op: &str) -> Result<(), TensorError> {
        if self.shape_of(ia) != self.shape_of(ib) {
            return Err(TensorError::Shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape_of(ia),
                self.shape_of(ib)
            )));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, TensorError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape(ia, ib, op.name())?;
        let data = self
            .node_value(ia)
            .data()
            .iter()
            .zip(self.node_value(ib).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape_of(ia).to_vec();
        self.push(Tensor::from_parts(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with(a, b, Op::Add(a.index, b.index), |x, y| x + y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with(a, b, Op::Mul(a.index, b.index), |x, y| x * y)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, TensorError> {
        let ia = self.check(a)?;
        let v = self.node_value(ia);
        let data = v.data().iter().map(|&x| f(x)).collect();
        let shape = v.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.map(a, Op::Scale(a.index, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.map(a, Op::AddScalar(a.index), |x| x + c)
    }

    /// Multiplies every element of `a` by the single-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, TensorError> {
        let is = self.check(s)?;
        let c = self.node_value(is).item()?;
        self.map(a, Op::ScaleBy { a: a.index, s: is }, |x| x * c)
    }

    /// Adds a per-channel bias: `x` has shape `[batch, channels, ...]`,
    /// `bias` has shape `[channels]`.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let shape = self.shape_of(ix).to_vec();
        let (outer, c, inner) = channel_dims(&shape)?;
        if self.shape_of(ib) != [c] {
            return Err(TensorError::Shape(format!(
                "bias of shape {:?} for input {shape:?}",
                self.shape_of(ib)
            )));
        }
        let b = self.node_value(ib).data().to_vec();
        let mut data = self.node_value(ix).data().to_vec();
        for o in 0..outer {
            for (ch, bv) in b.iter().enumerate() {
                let start = (o * c + ch) * inner;
                for v in &mut data[start..start + inner] {
                    *v += bv;
                }
            }
        }
        self.push(
            Tensor::from_parts(shape, data),
            Op::BiasAdd { x: ix, bias: ib },
        )
    }

    /// Sums over every axis except axis 1, giving shape `[channels]`.
    pub fn channel_sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let ix = self.check(x)?;
        let (outer, c, inner) = channel_dims(self.shape_of(ix))?;
        let src = self.node_value(ix).data();
        let mut data = vec![0.0; c];
        for o in 0..outer {
            for (ch, acc) in data.iter_mut().enumerate() {
                let start = (o * c + ch) * inner;
                *acc += src[start..start + inner].iter().sum::<f64>();
            }
        }
        self.push(Tensor::from_parts(vec![c], data), Op::ChannelSum(ix))
    }

    /// Broadcasts a `[channels]` vector along every other axis of `shape`.
    pub fn channel_broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let ia = self.check(a)?;
        let (outer, c, inner) = channel_dims(shape)?;
        if self.shape_of(ia) != [c] {
            return Err(TensorError::Shape(format!(
                "cannot broadcast {:?} over channels of {shape:?}",
                self.shape_of(ia)
            )));
        }
        let src = self.node_value(ia).data();
        let mut data = Vec::with_capacity(outer * c * inner);
        for _ in 0..outer {
            for &v in src {
                data.extend(std::iter::repeat_n(v, inner));
            }
        }
        self.push(
            Tensor::from_parts(shape.to_vec(), data),
            Op::ChannelBroadcast(ia),
        )
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let ia = self.check(a)?;
        let s = self.node_value(ia).sum();
        self.push(Tensor::scalar(s), Op::Sum(ia))
    }

    /// Broadcasts a single-element tensor to `shape`.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let ia = self.check(a)?;
        let v = self.node_value(ia).item()?;
        self.push(Tensor::full(shape, v), Op::Expand(ia))
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let ia = self.check(a)?;
        let shape = self.shape_of(ia).to_vec();
        let (outer, n, inner) = axis_dims(&shape, axis)?;
        let src = self.node_value(ia).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (acc, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        self.push(
            Tensor::from_parts(out_shape, data),
            Op::SumAxis { a: ia, axis },
        )
    }

    /// Repeats an extent-1 `axis` `n` times.
    pub fn broadcast_axis(&mut self, a: Var, axis: usize, n: usize) -> Result<Var, TensorError> {
        let ia = self.check(a)?;
        let shape = self.shape_of(ia).to_vec();
        let (outer, one, inner) = axis_dims(&shape, axis)?;
        if one != 1 || n == 0 {
            return Err(TensorError::Shape(format!(
                "broadcast_axis needs extent 1 on axis {axis}, got {shape:?}"
            )));
        }
        let src = self.node_value(ia).data();
        let mut data = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                data.extend_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = n;
        self.push(
            Tensor::from_parts(out_shape, data),
            Op::BroadcastAxis { a: ia, axis },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let ia = self.check(a)?;
        let t = self.node_value(ia).reshape(shape)?;
        self.push(t, Op::Reshape(ia))
    }

    fn conv_shapes(
        &self,
        ix: usize,
        iw: usize,
        stride: usize,
        what: &str,
    ) -> Result<(usize, usize, usize, usize, usize), TensorError> {
        let sx = self.shape_of(ix);
        let sw = self.shape_of(iw);
        if sx.len() != 3 || sw.len() != 3 {
            return Err(TensorError::Shape(format!(
                "{what}: expected rank-3 input and kernel, got {sx:?} and {sw:?}"
            )));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument(
                "stride must be positive".into(),
            ));
        }
        Ok((sx[0], sx[1], sx[2], sw[0], sw[1]))
    }

    fn conv1d_batched(
        &mut self,
        ix: usize,
        iw: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let (batch, c_in, len, c_out, wc_in) = self.conv_shapes(ix, iw, stride, "conv1d")?;
        let k = self.shape_of(iw)[2];
        if wc_in != c_in {
            return Err(TensorError::Shape(format!(
                "conv1d: kernel expects {wc_in} input channels, input has {c_in}"
            )));
        }
        if len + 2 * padding < k {
            return Err(TensorError::Shape(format!(
                "conv1d: kernel of length {k} longer than padded input {}",
                len + 2 * padding
            )));
        }
        let len_out = (len + 2 * padding - k) / stride + 1;
        let data = kernels::conv1d(
            self.node_value(ix).data(),
            self.node_value(iw).data(),
            batch,
            c_in,
            len,
            c_out,
            k,
            stride,
            padding,
            len_out,
        );
        self.push(
            Tensor::from_parts(vec![batch, c_out, len_out], data),
            Op::Conv1d {
                x: ix,
                w: iw,
                stride,
                padding,
            },
        )
    }

    fn conv1d_transpose_batched(
        &mut self,
        ix: usize,
        iw: usize,
        stride: usize,
        padding: usize,
        len_out: Option<usize>,
    ) -> Result<Var, TensorError> {
        let (batch, c_x, len_x, wc_x, c_y) =
            self.conv_shapes(ix, iw, stride, "conv1d_transpose")?;
        let k = self.shape_of(iw)[2];
        if wc_x != c_x {
            return Err(TensorError::Shape(format!(
                "conv1d_transpose: kernel expects {wc_x} input channels, input has {c_x}"
            )));
        }
        let natural = ((len_x - 1) * stride + k)
            .checked_sub(2 * padding)
            .filter(|&l| l > 0)
            .ok_or_else(|| {
                TensorError::Shape(format!(
                    "conv1d_transpose: padding {padding} too large for length {len_x}, k={k}"
                ))
            })?;
        let len_y = len_out.unwrap_or(natural);
        if len_y < natural || len_y >= natural + stride {
            return Err(TensorError::Shape(format!(
                "conv1d_transpose: output length {len_y} incompatible with natural length {natural}"
            )));
        }
        let data = kernels::conv1d_transpose(
            self.node_value(ix).data(),
            self.node_value(iw).data(),
            batch,
            c_x,
            len_x,
            c_y,
            k,
            stride,
            padding,
            len_y,
        );
        self.push(
            Tensor::from_parts(vec![batch, c_y, len_y], data),
            Op::ConvTranspose {
                x: ix,
                w: iw,
                stride,
                padding,
            },
        )
    }

    fn conv_weight_grad(
        &mut self,
        input: usize,
        gout: usize,
        stride: usize,
        padding: usize,
        k: usize,
    ) -> Result<Var, TensorError> {
        let si = self.shape_of(input).to_vec();
        let sg = self.shape_of(gout).to_vec();
        if si.len() != 3 || sg.len() != 3 || si[0] != sg[0] {
            return Err(TensorError::Shape(format!(
                "conv1d_weight_grad: incompatible {si:?} and {sg:?}"
            )));
        }
        let data = kernels::conv1d_weight_grad(
            self.node_value(input).data(),
            self.node_value(gout).data(),
            si[0],
            si[1],
            si[2],
            sg[1],
            sg[2],
            k,
            stride,
            padding,
        );
        self.push(
            Tensor::from_parts(vec![sg[1], si[1], k], data),
            Op::ConvWeightGrad {
                input,
                gout,
                stride,
                padding,
            },
        )
    }

    /// One-dimensional cross-correlation (no kernel flip) with zero padding.
    ///
    /// `input` is `[channels_in, length]` or `[batch, channels_in, length]`,
    /// `kernel` is `[channels_out, channels_in, k]`.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        self.with_batch_dim(input, |tape, x| {
            let (ix, iw) = (tape.check(x)?, tape.check(kernel)?);
            tape.conv1d_batched(ix, iw, stride, padding)
        })
    }

    /// Adjoint of [`Tape::conv1d`] for the same kernel, stride and padding.
    ///
    /// `input` is `[channels, length]` or `[batch, channels, length]` where
    /// `channels` matches `kernel.shape[0]`; the result has `kernel.shape[1]`
    /// channels and length `(length - 1) * stride - 2 * padding + k`.
    pub fn conv1d_transpose(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        self.with_batch_dim(input, |tape, x| {
            let (ix, iw) = (tape.check(x)?, tape.check(kernel)?);
            tape.conv1d_transpose_batched(ix, iw, stride, padding, None)
        })
    }

    /// [`Tape::conv1d_transpose`] with an explicit output length in
    /// `natural..natural + stride`, making it the exact adjoint of a
    /// [`Tape::conv1d`] whose input length left a remainder under the stride.
    pub fn conv1d_transpose_to(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
        len_out: usize,
    ) -> Result<Var, TensorError> {
        self.with_batch_dim(input, |tape, x| {
            let (ix, iw) = (tape.check(x)?, tape.check(kernel)?);
            tape.conv1d_transpose_batched(ix, iw, stride, padding, Some(len_out))
        })
    }

    fn with_batch_dim(
        &mut self,
        input: Var,
        f: impl FnOnce(&mut Self, Var) -> Result<Var, TensorError>,
    ) -> Result<Var, TensorError> {
        let shape = self.shape(input)?.to_vec();
        match shape.len() {
            3 => f(self, input),
            2 => {
                let x = self.reshape(input, &[1, shape[0], shape[1]])?;
                let y = f(self, x)?;
                let sy = self.shape(y)?.to_vec();
                self.reshape(y, &sy[1..])
            }
            _ => Err(TensorError::Shape(format!(
                "convolution input must be rank 2 or 3, got {shape:?}"
            ))),
        }
    }

    /// `max(x, alpha * x)` for `alpha` in `[0, 1)`; `alpha = 0` is ReLU.
    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Result<Var, TensorError> {
        self.map(a, Op::LeakyRelu { a: a.index, alpha }, |x| {
            if x > 0.0 {
                x
            } else {
                alpha * x
            }
        })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.leaky_relu(a, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.map(a, Op::Tanh(a.index), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.map(a, Op::Sigmoid(a.index), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.map(a, Op::Exp(a.index), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, TensorError> {
        self.map(a, Op::Log(a.index), f64::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, TensorError> {
        self.map(a, Op::Sqrt(a.index), f64::sqrt)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var, TensorError> {
        self.map(a, Op::Recip(a.index), |x| 1.0 / x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, TensorError> {
        if lo > hi {
            return Err(TensorError::InvalidArgument(format!(
                "clamp bounds {lo} > {hi}"
            )));
        }
        self.map(a, Op::Clamp { a: a.index, lo, hi }, |x| x.clamp(lo, hi))
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let ia = self.check(a)?;
        let shape = self.shape_of(ia).to_vec();
        let (outer, n, inner) = axis_dims(&shape, axis)?;
        let src = self.node_value(ia).data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n)
                    .map(|j| src[idx(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (src[idx(j)] - max).exp();
                    data[idx(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    data[idx(j)] /= total;
                }
            }
        }
        self.push(Tensor::from_parts(shape, data), Op::Softmax { a: ia, axis })
    }

    // ----------------------------------------------------------- backward

    /// Accumulates `d output / d leaf` for every gradient-requiring leaf.
    ///
    /// A tape supports a single call; record a fresh forward pass for the next
    /// one.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        let il = self.check(loss)?;
        if self.backward_done {
            return Err(TensorError::BackwardReplayed);
        }
        let shape = self.shape_of(il);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar(shape.to_vec()));
        }
        let grads = self.reverse(il, false)?;
        let mut out = HashMap::new();
        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &self.nodes[i];
                if matches!(node.op, Op::Leaf) && node.requires_grad {
                    out.insert(i, self.nodes[g.index].value.clone());
                }
            }
        }
        self.backward_done = true;
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }

    /// Gradients of scalar `output` with respect to `wrt`, returned as tape
    /// values. With `create_graph` the gradient computation is itself recorded
    /// and can be differentiated by a later [`Tape::backward`].
    pub fn grad(
        &mut self,
        output: Var,
        wrt: &[Var],
        create_graph: bool,
    ) -> Result<Vec<Var>, TensorError> {
        let io = self.check(output)?;
        let shape = self.shape_of(io);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar(shape.to_vec()));
        }
        let idx: Vec<usize> = wrt
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<_, _>>()?;
        let grads = self.reverse(io, create_graph)?;
        idx.into_iter()
            .map(|i| match grads.get(i).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let zeros = Tensor::zeros(self.shape_of(i));
                    self.constant(zeros)
                }
            })
            .collect()
    }

    fn reverse(
        &mut self,
        output: usize,
        create_graph: bool,
    ) -> Result<Vec<Option<Var>>, TensorError> {
        let saved = self.grad_enabled;
        self.grad_enabled = create_graph && saved;
        let result = self.reverse_inner(output);
        self.grad_enabled = saved;
        result
    }

    fn reverse_inner(&mut self, output: usize) -> Result<Vec<Option<Var>>, TensorError> {
        let mut grads: Vec<Option<Var>> = vec![None; output + 1];
        let seed = Tensor::full(self.shape_of(output), 1.0);
        grads[output] = Some(self.constant(seed)?);
        for i in (0..=output).rev() {
            let Some(g) = grads[i] else { continue };
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (input, gin) in self.vjp(&op, i, g)? {
                grads[input] = Some(match grads[input] {
                    Some(prev) => self.add(prev, gin)?,
                    None => gin,
                });
            }
        }
        Ok(grads)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Vector-Jacobian products of one node, expressed as tape operations.
    fn vjp(&mut self, op: &Op, out: usize, g: Var) -> Result<Vjp, TensorError> {
        let out_v = self.var(out);
        let mut res: Vjp = Vec::new();
        match *op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.var(a), self.var(b));
                if self.needs(a) {
                    let ga = if ta {
                        self.matmul_ext(vb, g, tb, true)?
                    } else {
                        self.matmul_ext(g, vb, false, !tb)?
                    };
                    res.push((a, ga));
                }
                if self.needs(b) {
                    let gb = if tb {
                        self.matmul_ext(g, va, true, ta)?
                    } else {
                        self.matmul_ext(va, g, !ta, false)?
                    };
                    res.push((b, gb));
                }
            }
            Op::Add(a, b) => {
                res.push((a, g));
                res.push((b, g));
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let vb = self.var(b);
                    res.push((a, self.mul(g, vb)?));
                }
                if self.needs(b) {
                    let va = self.var(a);
                    res.push((b, self.mul(g, va)?));
                }
            }
            Op::Scale(a, c) => res.push((a, self.scale(g, c)?)),
            Op::AddScalar(a) => res.push((a, g)),
            Op::ScaleBy { a, s } => {
                if self.needs(a) {
                    let vs = self.var(s);
                    res.push((a, self.scale_by(g, vs)?));
                }
                if self.needs(s) {
                    let va = self.var(a);
                    let prod = self.mul(g, va)?;
                    res.push((s, self.sum(prod)?));
                }
            }
            Op::BiasAdd { x, bias } => {
                res.push((x, g));
                if self.needs(bias) {
                    res.push((bias, self.channel_sum(g)?));
                }
            }
            Op::ChannelSum(a) => {
                let shape = self.shape_of(a).to_vec();
                res.push((a, self.channel_broadcast(g, &shape)?));
            }
            Op::ChannelBroadcast(a) => res.push((a, self.channel_sum(g)?)),
            Op::Sum(a) => {
                let shape = self.shape_of(a).to_vec();
                res.push((a, self.expand(g, &shape)?));
            }
            Op::Expand(a) => {
                let s = self.sum(g)?;
                let shape = self.shape_of(a).to_vec();
                res.push((a, self.reshape(s, &shape)?));
            }
            Op::SumAxis { a, axis } => {
                let n = self.shape_of(a)[axis];
                res.push((a, self.broadcast_axis(g, axis, n)?));
            }
            Op::BroadcastAxis { a, axis } => res.push((a, self.sum_axis(g, axis)?)),
            Op::Reshape(a) => {
                let shape = self.shape_of(a).to_vec();
                res.push((a, self.reshape(g, &shape)?));
            }
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            } => {
                let ig = self.check(g)?;
                if self.needs(x) {
                    let len = self.shape_of(x)[2];
                    let gx = self.conv1d_transpose_batched(ig, w, stride, padding, Some(len))?;
                    res.push((x, gx));
                }
                if self.needs(w) {
                    let k = self.shape_of(w)[2];
                    res.push((w, self.conv_weight_grad(x, ig, stride, padding, k)?));
                }
            }
            Op::ConvTranspose {
                x,
                w,
                stride,
                padding,
            } => {
                let ig = self.check(g)?;
                if self.needs(x) {
                    res.push((x, self.conv1d_batched(ig, w, stride, padding)?));
                }
                if self.needs(w) {
                    let k = self.shape_of(w)[2];
                    res.push((w, self.conv_weight_grad(ig, x, stride, padding, k)?));
                }
            }
            Op::ConvWeightGrad {
                input,
                gout,
                stride,
                padding,
            } => {
                let ig = self.check(g)?;
                if self.needs(input) {
                    let len = self.shape_of(input)[2];
                    let gi = self.conv1d_transpose_batched(gout, ig, stride, padding, Some(len))?;
                    res.push((input, gi));
                }
                if self.needs(gout) {
                    res.push((gout, self.conv1d_batched(input, ig, stride, padding)?));
                }
            }
            Op::LeakyRelu { a, alpha } => {
                let mask = self.mask_of(a, |x| if x > 0.0 { 1.0 } else { alpha })?;
                res.push((a, self.mul(g, mask)?));
            }
            Op::Tanh(a) => {
                let sq = self.mul(out_v, out_v)?;
                let neg = self.scale(sq, -1.0)?;
                let d = self.add_scalar(neg, 1.0)?;
                res.push((a, self.mul(g, d)?));
            }
            Op::Sigmoid(a) => {
                let neg = self.scale(out_v, -1.0)?;
                let one_minus = self.add_scalar(neg, 1.0)?;
                let d = self.mul(out_v, one_minus)?;
                res.push((a, self.mul(g, d)?));
            }
            Op::Exp(a) => res.push((a, self.mul(g, out_v)?)),
            Op::Log(a) => {
                let va = self.var(a);
                let r = self.recip(va)?;
                res.push((a, self.mul(g, r)?));
            }
            Op::Sqrt(a) => {
                let r = self.recip(out_v)?;
                let half = self.scale(r, 0.5)?;
                res.push((a, self.mul(g, half)?));
            }
            Op::Recip(a) => {
                let sq = self.mul(out_v, out_v)?;
                let d = self.scale(sq, -1.0)?;
                res.push((a, self.mul(g, d)?));
            }
            Op::Clamp { a, lo, hi } => {
                let mask = self.mask_of(a, |x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 })?;
                res.push((a, self.mul(g, mask)?));
            }
            Op::Softmax { a, axis } => {
                let n = self.shape_of(a)[axis];
                let gy = self.mul(g, out_v)?;
                let s = self.sum_axis(gy, axis)?;
                let sb = self.broadcast_axis(s, axis, n)?;
                let neg = self.scale(sb, -1.0)?;
                let centered = self.add(g, neg)?;
                res.push((a, self.mul(out_v, centered)?));
            }
        }
        Ok(res)
    }

    /// Constant tensor derived elementwise from the value at `index`. Used for
    /// piecewise-linear derivatives whose own derivative is zero.
    fn mask_of(&mut self, index: usize, f: impl Fn(f64) -> f64) -> Result<Var, TensorError> {
        let v = self.node_value(index);
        let data = v.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        self.constant(t)
    }
}

fn channel_dims(shape: &[usize]) -> Result<(usize, usize, usize), TensorError> {
    if shape.len() < 2 {
        return Err(TensorError::Shape(format!(
            "channel operations need rank >= 2, got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

fn axis_dims(shape: &[usize], axis: usize) -> Result<(usize, usize, usize), TensorError> {
    if axis >= shape.len() {
        return Err(TensorError::Shape(format!(
            "axis {axis} out of range for {shape:?}"
        )));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}
