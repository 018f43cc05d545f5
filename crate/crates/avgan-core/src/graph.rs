//! Reverse-mode autodiff on an eager tape.
//!
//! Every operation computes its value immediately and records itself as a
//! node. `backward` walks the tape in reverse and *emits the vector-Jacobian
//! products as new graph ops*, so a gradient is itself differentiable — the
//! gradient penalty of the WGAN-GP objective needs exactly this (gradients of
//! a gradient norm w.r.t. critic parameters).
//!
//! The convolution family is closed under differentiation by three ops:
//! `conv2d`, `conv2d_wgrad` (the weight-gradient contraction) and `flip_tr2`
//! (channel swap + spatial flip), plus their 3-D analogues.

use crate::error::{shape_err, Error, Result};
use crate::kernels as k;
use crate::tensor::Tensor;
use crate::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Value(pub(crate) usize);

/// Which convolution kernel route executes forward convs. `Im2col` is the
/// default; `Direct` is the reference the tests compare against.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ConvBackend {
    Direct,
    Im2col,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    Div(Value, Value),
    Neg(Value),
    AddScalar(Value),
    MulScalar(Value, f64),
    LeakyRelu(Value, f64),
    /// 1 where input > 0 else `slope`; derivative of LeakyRelu. Treated as
    /// locally constant (its own derivative is zero almost everywhere).
    LeakyMask(Value),
    Sigmoid(Value),
    Tanh(Value),
    Sqrt(Value),
    Matmul(Value, Value),
    Transpose(Value),
    Reshape(Value),
    Conv2d(Value, Value),
    Conv2dWgrad { x: Value, g: Value },
    FlipTr2(Value),
    Conv3d(Value, Value),
    Conv3dWgrad { x: Value, g: Value },
    FlipTr3(Value),
    AvgPool2(Value),
    Upsample2(Value),
    AvgPool3(Value),
    Upsample3(Value),
    Subsample2(Value),
    ZeroInterleave2(Value),
    Translate2 { x: Value, dy: isize, dx: isize },
    SumKeep0(Value),
    BroadcastChannel(Value),
    SumAll(Value),
    BroadcastAll(Value),
    Concat0(Vec<Value>),
    Slice0 { x: Value, start: usize, len: usize },
    StackAxis1(Vec<Value>),
    IndexAxis1 { x: Value, t: usize },
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Neg(..) => "neg",
        Op::AddScalar(..) => "add_scalar",
        Op::MulScalar(..) => "mul_scalar",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::LeakyMask(..) => "leaky_mask",
        Op::Sigmoid(..) => "sigmoid",
        Op::Tanh(..) => "tanh",
        Op::Sqrt(..) => "sqrt",
        Op::Matmul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Reshape(..) => "reshape",
        Op::Conv2d(..) => "conv2d",
        Op::Conv2dWgrad { .. } => "conv2d_wgrad",
        Op::FlipTr2(..) => "flip_tr2",
        Op::Conv3d(..) => "conv3d",
        Op::Conv3dWgrad { .. } => "conv3d_wgrad",
        Op::FlipTr3(..) => "flip_tr3",
        Op::AvgPool2(..) => "avg_pool2",
        Op::Upsample2(..) => "upsample2",
        Op::AvgPool3(..) => "avg_pool3",
        Op::Upsample3(..) => "upsample3",
        Op::Subsample2(..) => "subsample2",
        Op::ZeroInterleave2 { .. } => "zero_interleave2",
        Op::Translate2 { .. } => "translate2",
        Op::SumKeep0(..) => "sum_keep0",
        Op::BroadcastChannel(..) => "broadcast_channel",
        Op::SumAll(..) => "sum_all",
        Op::BroadcastAll(..) => "broadcast_all",
        Op::Concat0(..) => "concat0",
        Op::Slice0 { .. } => "slice0",
        Op::StackAxis1(..) => "stack_axis1",
        Op::IndexAxis1 { .. } => "index_axis1",
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    pub conv_backend: ConvBackend,
    /// When set (the default), every computed node is scanned for NaN/Inf and
    /// an error is raised at the offending op — non-finite values are an
    /// error state everywhere in this crate.
    pub check_finite: bool,
}

/// Result of a backward pass: node -> gradient node (itself differentiable).
pub struct GradMap {
    grads: Vec<Option<Value>>,
}

impl GradMap {
    pub fn get(&self, v: Value) -> Option<Value> {
        self.grads.get(v.0).copied().flatten()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), conv_backend: ConvBackend::Im2col, check_finite: true }
    }

    pub fn with_backend(backend: ConvBackend) -> Self {
        Graph { nodes: Vec::new(), conv_backend: backend, check_finite: true }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, v: Value) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Insert a tensor as a leaf. `requires_grad` marks it as a gradient
    /// target for backward passes.
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Value {
        self.push_unchecked(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Value {
        self.leaf(t, false)
    }

    pub fn scalar(&mut self, v: f64) -> Value {
        self.constant(Tensor::scalar(T::of(v)))
    }

    fn push_unchecked(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Value {
        self.nodes.push(Node { value, op, requires_grad });
        Value(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Result<Value> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(op_name(&op).to_string()));
        }
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn rg(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn same_shape(&self, a: Value, b: Value, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    // ------------------------------------------------------- elementwise --

    fn zip_op(&mut self, a: Value, b: Value, op: Op, f: impl Fn(T, T) -> T) -> Result<Value> {
        self.same_shape(a, b, op_name(&op))?;
        let data: Vec<T> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, op, rg)
    }

    fn map_op(&mut self, a: Value, op: Op, f: impl Fn(T) -> T) -> Result<Value> {
        let t = self.nodes[a.0].value.map(f);
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.zip_op(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.zip_op(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.zip_op(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Value, b: Value) -> Result<Value> {
        self.zip_op(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn neg(&mut self, a: Value) -> Result<Value> {
        self.map_op(a, Op::Neg(a), |x| -x)
    }

    pub fn add_scalar(&mut self, a: Value, c: f64) -> Result<Value> {
        let cv = T::of(c);
        self.map_op(a, Op::AddScalar(a), |x| x + cv)
    }

    pub fn mul_scalar(&mut self, a: Value, c: f64) -> Result<Value> {
        let cv = T::of(c);
        self.map_op(a, Op::MulScalar(a, c), |x| x * cv)
    }

    pub fn leaky_relu(&mut self, a: Value, slope: f64) -> Result<Value> {
        let s = T::of(slope);
        self.map_op(a, Op::LeakyRelu(a, slope), |x| if x > T::zero() { x } else { x * s })
    }

    fn leaky_mask(&mut self, a: Value, slope: f64) -> Result<Value> {
        let s = T::of(slope);
        // Not a gradient target: d/dx of the mask is 0 almost everywhere.
        let t = self.nodes[a.0].value.map(|x| if x > T::zero() { T::one() } else { s });
        self.push(t, Op::LeakyMask(a), false)
    }

    pub fn sigmoid(&mut self, a: Value) -> Result<Value> {
        self.map_op(a, Op::Sigmoid(a), |x| T::one() / (T::one() + (-x).exp()))
    }

    pub fn tanh(&mut self, a: Value) -> Result<Value> {
        self.map_op(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn sqrt(&mut self, a: Value) -> Result<Value> {
        self.map_op(a, Op::Sqrt(a), |x| x.sqrt())
    }

    // ------------------------------------------------------------ linalg --

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (m, kk, n) = (sa[0], sa[1], sb[1]);
        let data = k::matmul(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), m, kk, n);
        let t = Tensor::new(&[m, n], data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Matmul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Value) -> Result<Value> {
        let sa = self.shape(a);
        if sa.len() != 2 {
            return Err(shape_err(format!("transpose expects rank 2, got {sa:?}")));
        }
        let (r, c) = (sa[0], sa[1]);
        let data = k::transpose(self.nodes[a.0].value.data(), r, c);
        let t = Tensor::new(&[c, r], data)?;
        let rg = self.rg(a);
        self.push(t, Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: Value, shape: &[usize]) -> Result<Value> {
        let t = self.nodes[a.0].value.clone().reshaped(shape)?;
        let rg = self.rg(a);
        self.push(t, Op::Reshape(a), rg)
    }

    /// x[..,F_in] @ w[F_in,F_out] + b. Rank-1 and rank-2 inputs.
    pub fn linear(&mut self, x: Value, w: Value, b: Option<Value>) -> Result<Value> {
        let sw = self.shape(w).to_vec();
        if sw.len() != 2 {
            return Err(shape_err(format!("linear weight must be rank 2, got {sw:?}")));
        }
        let sx = self.shape(x).to_vec();
        let out = match sx.len() {
            1 => {
                let xr = self.reshape(x, &[1, sx[0]])?;
                let y = self.matmul(xr, w)?;
                let y = self.reshape(y, &[sw[1]])?;
                match b {
                    Some(b) => self.add(y, b)?,
                    None => y,
                }
            }
            2 => {
                let y = self.matmul(x, w)?;
                match b {
                    Some(b) => {
                        let ones = self.constant(Tensor::full(&[sx[0], 1], T::one()));
                        let br = self.reshape(b, &[1, sw[1]])?;
                        let tiled = self.matmul(ones, br)?;
                        self.add(y, tiled)?
                    }
                    None => y,
                }
            }
            _ => return Err(shape_err(format!("linear input rank {} unsupported", sx.len()))),
        };
        Ok(out)
    }

    // -------------------------------------------------------------- conv --

    fn check_odd(k: usize, what: &str) -> Result<()> {
        if k % 2 == 0 {
            return Err(shape_err(format!("{what}: kernel extent {k} must be odd")));
        }
        Ok(())
    }

    /// x[Cin,H,W] * w[Cout,Cin,kh,kw] -> [Cout,H,W]; stride 1, zero same-pad.
    pub fn conv2d(&mut self, x: Value, w: Value) -> Result<Value> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sx[0] != sw[1] {
            return Err(shape_err(format!("conv2d: input {sx:?} kernel {sw:?}")));
        }
        Self::check_odd(sw[2], "conv2d")?;
        Self::check_odd(sw[3], "conv2d")?;
        let (cin, h, wd, cout, kh, kw) = (sx[0], sx[1], sx[2], sw[0], sw[2], sw[3]);
        let xd = self.nodes[x.0].value.data();
        let wd_ = self.nodes[w.0].value.data();
        let data = match self.conv_backend {
            ConvBackend::Direct => k::conv2d_direct(xd, wd_, cin, h, wd, cout, kh, kw),
            ConvBackend::Im2col => k::conv2d_im2col(xd, wd_, cin, h, wd, cout, kh, kw),
        };
        let t = Tensor::new(&[cout, h, wd], data)?;
        let rg = self.rg(x) || self.rg(w);
        self.push(t, Op::Conv2d(x, w), rg)
    }

    /// Weight-gradient contraction: out[co,ci,a,b] = sum_yx g[co,y,x]*xpad[ci,y+a-p,x+b-p].
    pub fn conv2d_wgrad(&mut self, x: Value, g: Value, kh: usize, kw: usize) -> Result<Value> {
        let (sx, sg) = (self.shape(x).to_vec(), self.shape(g).to_vec());
        if sx.len() != 3 || sg.len() != 3 || sx[1..] != sg[1..] {
            return Err(shape_err(format!("conv2d_wgrad: x {sx:?} g {sg:?}")));
        }
        let (cin, h, wd, cout) = (sx[0], sx[1], sx[2], sg[0]);
        let xd = self.nodes[x.0].value.data();
        let gd = self.nodes[g.0].value.data();
        let data = match self.conv_backend {
            ConvBackend::Direct => k::conv2d_wgrad_direct(xd, gd, cin, h, wd, cout, kh, kw),
            ConvBackend::Im2col => k::conv2d_wgrad_im2col(xd, gd, cin, h, wd, cout, kh, kw),
        };
        let t = Tensor::new(&[cout, cin, kh, kw], data)?;
        let rg = self.rg(x) || self.rg(g);
        self.push(t, Op::Conv2dWgrad { x, g }, rg)
    }

    pub fn flip_tr2(&mut self, w: Value) -> Result<Value> {
        let sw = self.shape(w).to_vec();
        if sw.len() != 4 {
            return Err(shape_err(format!("flip_tr2 expects rank 4, got {sw:?}")));
        }
        let data = k::flip_tr2(self.nodes[w.0].value.data(), sw[0], sw[1], sw[2], sw[3]);
        let t = Tensor::new(&[sw[1], sw[0], sw[2], sw[3]], data)?;
        let rg = self.rg(w);
        self.push(t, Op::FlipTr2(w), rg)
    }

    /// x[Cin,T,H,W] * w[Cout,Cin,kt,kh,kw] -> [Cout,T,H,W].
    pub fn conv3d(&mut self, x: Value, w: Value) -> Result<Value> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 5 || sx[0] != sw[1] {
            return Err(shape_err(format!("conv3d: input {sx:?} kernel {sw:?}")));
        }
        for d in &sw[2..] {
            Self::check_odd(*d, "conv3d")?;
        }
        let (cin, t_, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, kt, kh, kw) = (sw[0], sw[2], sw[3], sw[4]);
        let xd = self.nodes[x.0].value.data();
        let wd_ = self.nodes[w.0].value.data();
        let data = match self.conv_backend {
            ConvBackend::Direct => k::conv3d_direct(xd, wd_, cin, t_, h, wd, cout, kt, kh, kw),
            ConvBackend::Im2col => k::conv3d_im2col(xd, wd_, cin, t_, h, wd, cout, kt, kh, kw),
        };
        let t = Tensor::new(&[cout, t_, h, wd], data)?;
        let rg = self.rg(x) || self.rg(w);
        self.push(t, Op::Conv3d(x, w), rg)
    }

    pub fn conv3d_wgrad(
        &mut self,
        x: Value,
        g: Value,
        kt: usize,
        kh: usize,
        kw: usize,
    ) -> Result<Value> {
        let (sx, sg) = (self.shape(x).to_vec(), self.shape(g).to_vec());
        if sx.len() != 4 || sg.len() != 4 || sx[1..] != sg[1..] {
            return Err(shape_err(format!("conv3d_wgrad: x {sx:?} g {sg:?}")));
        }
        let (cin, t_, h, wd, cout) = (sx[0], sx[1], sx[2], sx[3], sg[0]);
        let xd = self.nodes[x.0].value.data();
        let gd = self.nodes[g.0].value.data();
        // im2col route only: this op exists for backward, where speed matters.
        let data = k::conv3d_wgrad_im2col(xd, gd, cin, t_, h, wd, cout, kt, kh, kw);
        let t = Tensor::new(&[cout, cin, kt, kh, kw], data)?;
        let rg = self.rg(x) || self.rg(g);
        self.push(t, Op::Conv3dWgrad { x, g }, rg)
    }

    pub fn flip_tr3(&mut self, w: Value) -> Result<Value> {
        let sw = self.shape(w).to_vec();
        if sw.len() != 5 {
            return Err(shape_err(format!("flip_tr3 expects rank 5, got {sw:?}")));
        }
        let data = k::flip_tr3(self.nodes[w.0].value.data(), sw[0], sw[1], sw[2], sw[3], sw[4]);
        let t = Tensor::new(&[sw[1], sw[0], sw[2], sw[3], sw[4]], data)?;
        let rg = self.rg(w);
        self.push(t, Op::FlipTr3(w), rg)
    }

    /// Convolution with a per-output-channel bias (rank-3 x: conv2d, rank-4
    /// x: conv3d).
    pub fn conv_bias(&mut self, x: Value, w: Value, b: Value) -> Result<Value> {
        let y = match self.shape(x).len() {
            3 => self.conv2d(x, w)?,
            4 => self.conv3d(x, w)?,
            r => return Err(shape_err(format!("conv_bias: rank {r} input"))),
        };
        self.add_channel_bias(y, b)
    }

    pub fn add_channel_bias(&mut self, x: Value, b: Value) -> Result<Value> {
        if self.shape(b).len() != 1 || self.shape(b)[0] != self.shape(x)[0] {
            return Err(shape_err(format!(
                "bias {:?} does not match channels of {:?}",
                self.shape(b),
                self.shape(x)
            )));
        }
        let shape = self.shape(x).to_vec();
        let bb = self.broadcast_channel(b, &shape)?;
        self.add(x, bb)
    }

    // --------------------------------------------------- pool / resample --

    fn last2(&self, v: Value, what: &str) -> Result<(usize, usize, usize)> {
        let s = self.shape(v);
        if s.len() < 2 {
            return Err(shape_err(format!("{what}: rank {} < 2", s.len())));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        Ok((s[..s.len() - 2].iter().product(), h, w))
    }

    /// Factor-2 mean pool over the last two axes (H, W even).
    pub fn avg_pool2(&mut self, x: Value) -> Result<Value> {
        let (lead, h, w) = self.last2(x, "avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err(format!("avg_pool2: odd extent in {:?}", self.shape(x))));
        }
        let data = k::avg_pool2(self.nodes[x.0].value.data(), lead, h, w);
        let mut shape = self.shape(x).to_vec();
        let n = shape.len();
        shape[n - 2] = h / 2;
        shape[n - 1] = w / 2;
        let t = Tensor::new(&shape, data)?;
        let rg = self.rg(x);
        self.push(t, Op::AvgPool2(x), rg)
    }

    /// Nearest-neighbour 2x upsample of the last two axes.
    pub fn upsample2(&mut self, x: Value) -> Result<Value> {
        let (lead, h, w) = self.last2(x, "upsample2")?;
        let data = k::upsample2(self.nodes[x.0].value.data(), lead, h, w);
        let mut shape = self.shape(x).to_vec();
        let n = shape.len();
        shape[n - 2] = h * 2;
        shape[n - 1] = w * 2;
        let t = Tensor::new(&shape, data)?;
        let rg = self.rg(x);
        self.push(t, Op::Upsample2(x), rg)
    }

    /// Factor-2 mean pool over (T,H,W) of a [C,T,H,W] tensor.
    pub fn avg_pool3(&mut self, x: Value) -> Result<Value> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err(format!("avg_pool3 expects rank 4, got {s:?}")));
        }
        if s[1] % 2 != 0 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(shape_err(format!("avg_pool3: odd extent in {s:?}")));
        }
        let data = k::avg_pool3(self.nodes[x.0].value.data(), s[0], s[1], s[2], s[3]);
        let t = Tensor::new(&[s[0], s[1] / 2, s[2] / 2, s[3] / 2], data)?;
        let rg = self.rg(x);
        self.push(t, Op::AvgPool3(x), rg)
    }

    pub fn upsample3(&mut self, x: Value) -> Result<Value> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err(format!("upsample3 expects rank 4, got {s:?}")));
        }
        let data = k::upsample3(self.nodes[x.0].value.data(), s[0], s[1], s[2], s[3]);
        let t = Tensor::new(&[s[0], s[1] * 2, s[2] * 2, s[3] * 2], data)?;
        let rg = self.rg(x);
        self.push(t, Op::Upsample3(x), rg)
    }

    /// Keep even rows/cols of the last two axes (a stride-2 read).
    pub fn subsample2(&mut self, x: Value) -> Result<Value> {
        let (lead, h, w) = self.last2(x, "subsample2")?;
        let data = k::subsample2(self.nodes[x.0].value.data(), lead, h, w);
        let mut shape = self.shape(x).to_vec();
        let n = shape.len();
        shape[n - 2] = (h + 1) / 2;
        shape[n - 1] = (w + 1) / 2;
        let t = Tensor::new(&shape, data)?;
        let rg = self.rg(x);
        self.push(t, Op::Subsample2(x), rg)
    }

    fn zero_interleave2(&mut self, x: Value, h: usize, w: usize) -> Result<Value> {
        let (lead, oh, ow) = self.last2(x, "zero_interleave2")?;
        if oh != (h + 1) / 2 || ow != (w + 1) / 2 {
            return Err(shape_err(format!(
                "zero_interleave2: {:?} does not subsample to target ({h},{w})",
                self.shape(x)
            )));
        }
        let data = k::zero_interleave2(self.nodes[x.0].value.data(), lead, oh, ow, h, w);
        let mut shape = self.shape(x).to_vec();
        let n = shape.len();
        shape[n - 2] = h;
        shape[n - 1] = w;
        let t = Tensor::new(&shape, data)?;
        let rg = self.rg(x);
        self.push(t, Op::ZeroInterleave2(x), rg)
    }

    /// Shift the last two axes by (dy, dx) with zero fill: out[i,j]=x[i-dy,j-dx].
    pub fn translate2(&mut self, x: Value, dy: isize, dx: isize) -> Result<Value> {
        let (lead, h, w) = self.last2(x, "translate2")?;
        let data = k::translate2(self.nodes[x.0].value.data(), lead, h, w, dy, dx);
        let t = Tensor::new(self.shape(x), data)?;
        let rg = self.rg(x);
        self.push(t, Op::Translate2 { x, dy, dx }, rg)
    }

    // -------------------------------------------- reductions / broadcast --

    /// Sum over all axes except axis 0: [C, ...] -> [C].
    pub fn sum_keep0(&mut self, x: Value) -> Result<Value> {
        let s = self.shape(x);
        if s.is_empty() {
            return Err(shape_err("sum_keep0 on rank-0 tensor"));
        }
        let c = s[0];
        let rest = s[1..].iter().product::<usize>();
        let data = k::sum_keep0(self.nodes[x.0].value.data(), c, rest.max(1));
        let t = Tensor::new(&[c], data)?;
        let rg = self.rg(x);
        self.push(t, Op::SumKeep0(x), rg)
    }

    pub fn mean_keep0(&mut self, x: Value) -> Result<Value> {
        let rest: usize = self.shape(x)[1..].iter().product::<usize>().max(1);
        let s = self.sum_keep0(x)?;
        self.mul_scalar(s, 1.0 / rest as f64)
    }

    /// out[c, ...] = s[c] over the given full shape (shape[0] must equal C).
    pub fn broadcast_channel(&mut self, s: Value, shape: &[usize]) -> Result<Value> {
        let ss = self.shape(s);
        if ss.len() != 1 || shape.is_empty() || shape[0] != ss[0] {
            return Err(shape_err(format!("broadcast_channel: {ss:?} over {shape:?}")));
        }
        let rest = shape[1..].iter().product::<usize>().max(1);
        let data = k::broadcast_channel(self.nodes[s.0].value.data(), rest);
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(s);
        self.push(t, Op::BroadcastChannel(s), rg)
    }

    /// Sum of all elements -> rank-0 scalar.
    pub fn sum_all(&mut self, x: Value) -> Result<Value> {
        let mut acc = T::zero();
        for &v in self.nodes[x.0].value.data() {
            acc = acc + v;
        }
        let t = Tensor::scalar(acc);
        let rg = self.rg(x);
        self.push(t, Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Value) -> Result<Value> {
        let n = self.nodes[x.0].value.numel().max(1);
        let s = self.sum_all(x)?;
        self.mul_scalar(s, 1.0 / n as f64)
    }

    fn broadcast_all(&mut self, s: Value, shape: &[usize]) -> Result<Value> {
        if self.nodes[s.0].value.numel() != 1 {
            return Err(shape_err("broadcast_all source must be scalar"));
        }
        let v = self.nodes[s.0].value.data()[0];
        let t = Tensor::full(shape, v);
        let rg = self.rg(s);
        self.push(t, Op::BroadcastAll(s), rg)
    }

    /// Euclidean norm of all elements: sqrt(sum(x^2) + eps). The tiny eps
    /// keeps the derivative finite at exactly zero input.
    pub fn l2_norm(&mut self, x: Value, eps: f64) -> Result<Value> {
        let sq = self.mul(x, x)?;
        let s = self.sum_all(sq)?;
        let s = self.add_scalar(s, eps)?;
        self.sqrt(s)
    }

    // --------------------------------------------------- concat / stack --

    /// Concatenate along axis 0; trailing extents must match.
    pub fn concat0(&mut self, parts: &[Value]) -> Result<Value> {
        if parts.is_empty() {
            return Err(shape_err("concat0 of zero tensors"));
        }
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut c_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(shape_err(format!(
                    "concat0: part shape {:?} incompatible with tail {:?}",
                    s, tail
                )));
            }
            c_total += s[0];
        }
        let rest: usize = tail.iter().product::<usize>().max(1);
        let mut data = Vec::with_capacity(c_total * rest);
        for &p in parts {
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let mut shape = vec![c_total];
        shape.extend_from_slice(&tail);
        let t = Tensor::new(&shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(t, Op::Concat0(parts.to_vec()), rg)
    }

    /// Slice [start, start+len) along axis 0.
    pub fn slice0(&mut self, x: Value, start: usize, len: usize) -> Result<Value> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start + len > s[0] {
            return Err(shape_err(format!("slice0 [{start},{}) of {:?}", start + len, s)));
        }
        let rest: usize = s[1..].iter().product::<usize>().max(1);
        let data = self.nodes[x.0].value.data()[start * rest..(start + len) * rest].to_vec();
        let mut shape = vec![len];
        shape.extend_from_slice(&s[1..]);
        let t = Tensor::new(&shape, data)?;
        let rg = self.rg(x);
        self.push(t, Op::Slice0 { x, start, len }, rg)
    }

    /// Stack rank-R tensors [C, ...] into [C, n, ...] along a new axis 1.
    pub fn stack_axis1(&mut self, parts: &[Value]) -> Result<Value> {
        if parts.is_empty() {
            return Err(shape_err("stack_axis1 of zero tensors"));
        }
        let s0 = self.shape(parts[0]).to_vec();
        for &p in parts {
            if self.shape(p) != s0.as_slice() {
                return Err(shape_err(format!(
                    "stack_axis1: {:?} vs {:?}",
                    self.shape(p),
                    s0
                )));
            }
        }
        let c = s0[0];
        let rest: usize = s0[1..].iter().product::<usize>().max(1);
        let n = parts.len();
        let mut data = vec![T::zero(); c * n * rest];
        for (t_idx, &p) in parts.iter().enumerate() {
            let pd = self.nodes[p.0].value.data();
            for cc in 0..c {
                let dst = (cc * n + t_idx) * rest;
                data[dst..dst + rest].copy_from_slice(&pd[cc * rest..(cc + 1) * rest]);
            }
        }
        let mut shape = vec![c, n];
        shape.extend_from_slice(&s0[1..]);
        let t = Tensor::new(&shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(t, Op::StackAxis1(parts.to_vec()), rg)
    }

    /// Select index t of axis 1: [C, n, ...] -> [C, ...].
    pub fn index_axis1(&mut self, x: Value, t: usize) -> Result<Value> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || t >= s[1] {
            return Err(shape_err(format!("index_axis1 {t} of {:?}", s)));
        }
        let (c, n) = (s[0], s[1]);
        let rest: usize = s[2..].iter().product::<usize>().max(1);
        let xd = self.nodes[x.0].value.data();
        let mut data = vec![T::zero(); c * rest];
        for cc in 0..c {
            data[cc * rest..(cc + 1) * rest]
                .copy_from_slice(&xd[(cc * n + t) * rest..(cc * n + t) * rest + rest]);
        }
        let mut shape = vec![c];
        shape.extend_from_slice(&s[2..]);
        let tt = Tensor::new(&shape, data)?;
        let rg = self.rg(x);
        self.push(tt, Op::IndexAxis1 { x, t }, rg)
    }

    // ---------------------------------------------------------- backward --

    /// Backward from a one-element `root`, producing gradients for every
    /// reachable node that requires grad. Gradients are emitted as new graph
    /// ops and are therefore differentiable in turn.
    pub fn backward(&mut self, root: Value) -> Result<GradMap> {
        self.backward_filtered(root, None)
    }

    /// Backward restricted to ancestors of `wrt` (plus the paths to them) —
    /// cheaper when only a few gradients are needed, e.g. the input gradient
    /// for a gradient penalty.
    pub fn backward_wrt(&mut self, root: Value, wrt: &[Value]) -> Result<GradMap> {
        self.backward_filtered(root, Some(wrt))
    }

    fn backward_filtered(&mut self, root: Value, wrt: Option<&[Value]>) -> Result<GradMap> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(shape_err(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let n0 = root.0 + 1;
        // prop[i]: do we propagate a gradient *into* node i?
        let mut prop = vec![false; n0];
        match wrt {
            None => {
                for i in 0..n0 {
                    prop[i] = self.nodes[i].requires_grad;
                }
            }
            Some(list) => {
                // Pure reachability: propagate into exactly the nodes that
                // lie on a path from the root down to some wrt target.
                for v in list {
                    if v.0 < n0 {
                        prop[v.0] = true;
                    }
                }
                for i in 0..n0 {
                    if !prop[i] {
                        let mut hit = false;
                        self.for_each_input(i, |inp| hit |= prop[inp.0]);
                        prop[i] = hit;
                    }
                }
            }
        }

        let mut grads: Vec<Option<Value>> = vec![None; n0];
        let root_shape = self.shape(root).to_vec();
        grads[root.0] = Some(self.constant(Tensor::full(&root_shape, T::one())));

        for i in (0..n0).rev() {
            let g = match grads[i] {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            self.emit_vjps(Value(i), &op, g, &prop, &mut grads)?;
        }
        Ok(GradMap { grads })
    }

    fn for_each_input(&self, i: usize, mut f: impl FnMut(Value)) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Matmul(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Conv2d(a, b) | Op::Conv3d(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Conv2dWgrad { x, g, .. } | Op::Conv3dWgrad { x, g, .. } => {
                f(*x);
                f(*g);
            }
            Op::Neg(a)
            | Op::AddScalar(a)
            | Op::MulScalar(a, _)
            | Op::LeakyRelu(a, _)
            | Op::LeakyMask(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Sqrt(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::FlipTr2(a)
            | Op::FlipTr3(a)
            | Op::AvgPool2(a)
            | Op::Upsample2(a)
            | Op::AvgPool3(a)
            | Op::Upsample3(a)
            | Op::Subsample2(a)
            | Op::ZeroInterleave2(a)
            | Op::Translate2 { x: a, .. }
            | Op::SumKeep0(a)
            | Op::BroadcastChannel(a)
            | Op::SumAll(a)
            | Op::BroadcastAll(a)
            | Op::Slice0 { x: a, .. }
            | Op::IndexAxis1 { x: a, .. } => f(*a),
            Op::Concat0(parts) | Op::StackAxis1(parts) => {
                for p in parts {
                    f(*p);
                }
            }
        }
    }

    fn accumulate(
        &mut self,
        grads: &mut [Option<Value>],
        target: Value,
        add: Value,
    ) -> Result<()> {
        grads[target.0] = Some(match grads[target.0] {
            None => add,
            Some(existing) => self.add(existing, add)?,
        });
        Ok(())
    }

    fn emit_vjps(
        &mut self,
        out: Value,
        op: &Op,
        g: Value,
        prop: &[bool],
        grads: &mut [Option<Value>],
    ) -> Result<()> {
        let want = |v: Value| prop[v.0];
        match op {
            Op::Leaf | Op::LeakyMask(..) => {}
            Op::Add(a, b) => {
                if want(*a) {
                    self.accumulate(grads, *a, g)?;
                }
                if want(*b) {
                    self.accumulate(grads, *b, g)?;
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    self.accumulate(grads, *a, g)?;
                }
                if want(*b) {
                    let ng = self.neg(g)?;
                    self.accumulate(grads, *b, ng)?;
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    let ga = self.mul(g, *b)?;
                    self.accumulate(grads, *a, ga)?;
                }
                if want(*b) {
                    let gb = self.mul(g, *a)?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Div(a, b) => {
                if want(*a) {
                    let ga = self.div(g, *b)?;
                    self.accumulate(grads, *a, ga)?;
                }
                if want(*b) {
                    // d/db (a/b) = -out/b
                    let t = self.mul(g, out)?;
                    let t = self.div(t, *b)?;
                    let gb = self.neg(t)?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Neg(a) => {
                if want(*a) {
                    let ga = self.neg(g)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::AddScalar(a) => {
                if want(*a) {
                    self.accumulate(grads, *a, g)?;
                }
            }
            Op::MulScalar(a, c) => {
                if want(*a) {
                    let ga = self.mul_scalar(g, *c)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::LeakyRelu(a, slope) => {
                if want(*a) {
                    let m = self.leaky_mask(*a, *slope)?;
                    let ga = self.mul(g, m)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::Sigmoid(a) => {
                if want(*a) {
                    // g * y * (1 - y), written with graph ops so it stays
                    // differentiable for second-order passes.
                    let ny = self.neg(out)?;
                    let one_m = self.add_scalar(ny, 1.0)?;
                    let gy = self.mul(g, out)?;
                    let ga = self.mul(gy, one_m)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::Tanh(a) => {
                if want(*a) {
                    let yy = self.mul(out, out)?;
                    let nyy = self.neg(yy)?;
                    let one_m = self.add_scalar(nyy, 1.0)?;
                    let ga = self.mul(g, one_m)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::Sqrt(a) => {
                if want(*a) {
                    let gh = self.mul_scalar(g, 0.5)?;
                    let ga = self.div(gh, out)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::Matmul(a, b) => {
                if want(*a) {
                    let bt = self.transpose(*b)?;
                    let ga = self.matmul(g, bt)?;
                    self.accumulate(grads, *a, ga)?;
                }
                if want(*b) {
                    let at = self.transpose(*a)?;
                    let gb = self.matmul(at, g)?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Transpose(a) => {
                if want(*a) {
                    let ga = self.transpose(g)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::Reshape(a) => {
                if want(*a) {
                    let sa = self.shape(*a).to_vec();
                    let ga = self.reshape(g, &sa)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::Conv2d(x, w) => {
                if want(*x) {
                    let wf = self.flip_tr2(*w)?;
                    let gx = self.conv2d(g, wf)?;
                    self.accumulate(grads, *x, gx)?;
                }
                if want(*w) {
                    let sw = self.shape(*w).to_vec();
                    let gw = self.conv2d_wgrad(*x, g, sw[2], sw[3])?;
                    self.accumulate(grads, *w, gw)?;
                }
            }
            Op::Conv2dWgrad { x, g: g2 } => {
                // out = wgrad(x, g2); upstream G has kernel shape.
                if want(*x) {
                    let gf = self.flip_tr2(g)?;
                    let gx = self.conv2d(*g2, gf)?;
                    self.accumulate(grads, *x, gx)?;
                }
                if want(*g2) {
                    let gg = self.conv2d(*x, g)?;
                    self.accumulate(grads, *g2, gg)?;
                }
            }
            Op::FlipTr2(a) => {
                if want(*a) {
                    let ga = self.flip_tr2(g)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::Conv3d(x, w) => {
                if want(*x) {
                    let wf = self.flip_tr3(*w)?;
                    let gx = self.conv3d(g, wf)?;
                    self.accumulate(grads, *x, gx)?;
                }
                if want(*w) {
                    let sw = self.shape(*w).to_vec();
                    let gw = self.conv3d_wgrad(*x, g, sw[2], sw[3], sw[4])?;
                    self.accumulate(grads, *w, gw)?;
                }
            }
            Op::Conv3dWgrad { x, g: g2, .. } => {
                if want(*x) {
                    let gf = self.flip_tr3(g)?;
                    let gx = self.conv3d(*g2, gf)?;
                    self.accumulate(grads, *x, gx)?;
                }
                if want(*g2) {
                    let gg = self.conv3d(*x, g)?;
                    self.accumulate(grads, *g2, gg)?;
                }
            }
            Op::FlipTr3(a) => {
                if want(*a) {
                    let ga = self.flip_tr3(g)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::AvgPool2(a) => {
                if want(*a) {
                    let up = self.upsample2(g)?;
                    let ga = self.mul_scalar(up, 0.25)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::Upsample2(a) => {
                if want(*a) {
                    let dn = self.avg_pool2(g)?;
                    let ga = self.mul_scalar(dn, 4.0)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::AvgPool3(a) => {
                if want(*a) {
                    let up = self.upsample3(g)?;
                    let ga = self.mul_scalar(up, 0.125)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::Upsample3(a) => {
                if want(*a) {
                    let dn = self.avg_pool3(g)?;
                    let ga = self.mul_scalar(dn, 8.0)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::Subsample2(a) => {
                if want(*a) {
                    let s = self.shape(*a).to_vec();
                    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                    let ga = self.zero_interleave2(g, h, w)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::ZeroInterleave2(x) => {
                if want(*x) {
                    let ga = self.subsample2(g)?;
                    self.accumulate(grads, *x, ga)?;
                }
            }
            Op::Translate2 { x, dy, dx } => {
                if want(*x) {
                    let ga = self.translate2(g, -dy, -dx)?;
                    self.accumulate(grads, *x, ga)?;
                }
            }
            Op::SumKeep0(a) => {
                if want(*a) {
                    let sa = self.shape(*a).to_vec();
                    let ga = self.broadcast_channel(g, &sa)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::BroadcastChannel(s) => {
                if want(*s) {
                    let gs = self.sum_keep0(g)?;
                    self.accumulate(grads, *s, gs)?;
                }
            }
            Op::SumAll(a) => {
                if want(*a) {
                    let sa = self.shape(*a).to_vec();
                    let ga = self.broadcast_all(g, &sa)?;
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::BroadcastAll(s) => {
                if want(*s) {
                    let sum = self.sum_all(g)?;
                    let ss = self.shape(*s).to_vec();
                    let gs = self.reshape(sum, &ss)?;
                    self.accumulate(grads, *s, gs)?;
                }
            }
            Op::Concat0(parts) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.shape(p)[0];
                    if want(p) {
                        let gp = self.slice0(g, start, len)?;
                        self.accumulate(grads, p, gp)?;
                    }
                    start += len;
                }
            }
            Op::Slice0 { x, start, len } => {
                if want(*x) {
                    let sx = self.shape(*x).to_vec();
                    let tail = &sx[1..];
                    let mut parts = Vec::new();
                    if *start > 0 {
                        let mut zs = vec![*start];
                        zs.extend_from_slice(tail);
                        parts.push(self.constant(Tensor::zeros(&zs)));
                    }
                    parts.push(g);
                    if start + len < sx[0] {
                        let mut zs = vec![sx[0] - start - len];
                        zs.extend_from_slice(tail);
                        parts.push(self.constant(Tensor::zeros(&zs)));
                    }
                    let ga = self.concat0(&parts)?;
                    self.accumulate(grads, *x, ga)?;
                }
            }
            Op::StackAxis1(parts) => {
                for (t_idx, &p) in parts.iter().enumerate() {
                    if want(p) {
                        let gp = self.index_axis1(g, t_idx)?;
                        self.accumulate(grads, p, gp)?;
                    }
                }
            }
            Op::IndexAxis1 { x, t } => {
                if want(*x) {
                    let sx = self.shape(*x).to_vec();
                    let n = sx[1];
                    let mut frame_shape = vec![sx[0]];
                    frame_shape.extend_from_slice(&sx[2..]);
                    let mut parts = Vec::with_capacity(n);
                    for i in 0..n {
                        if i == *t {
                            parts.push(g);
                        } else {
                            parts.push(self.constant(Tensor::zeros(&frame_shape)));
                        }
                    }
                    let ga = self.stack_axis1(&parts)?;
                    self.accumulate(grads, *x, ga)?;
                }
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Convenience used by tests and modules: pull a gradient's tensor out.
impl<T: Scalar> Graph<T> {
    pub fn grad_tensor(&self, map: &GradMap, v: Value) -> Option<Tensor<T>> {
        map.get(v).map(|gv| self.value(gv).clone())
    }

    /// A gradient tensor, or zeros of the node's shape if no path reached it.
    pub fn grad_or_zeros(&self, map: &GradMap, v: Value) -> Tensor<T> {
        self.grad_tensor(map, v).unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }
}
