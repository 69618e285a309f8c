//! Small reverse-mode neural network engine.
//!
//! Two architecture families are supported: plain dense stacks (for vector
//! observations such as lidar ranges) and multi-input networks where a conv
//! stack over an image is fused with a dense branch over a state vector.
//! Inputs are flat rows; for multi-input networks the first `C·H·W` columns of
//! a row are the image in channel-major order and the rest is the state vector.

mod optim;

pub use optim::{adam_update, soft_update, AdamConfig, AdamState};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robot::Limits;

/// Fraction of the half-range a tanh head may reach, keeping outputs strictly inside the limits.
const TANH_CEILING: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Valid (unpadded) convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    Dense {
        hidden: Vec<usize>,
    },
    MultiInput {
        image: ImageShape,
        conv: Vec<ConvSpec>,
        state_hidden: Vec<usize>,
        fusion_hidden: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutputHead {
    /// `center + half_range · tanh(z)` per output.
    TanhScaled { limits: Vec<Limits> },
    Linear,
    /// Emits `2·output_dim` raw values: means followed by log standard deviations.
    GaussianHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    HeUniform,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Length of a flat input row.
    pub input_dim: usize,
    pub architecture: Architecture,
    pub activation: Activation,
    pub output_dim: usize,
    pub head: OutputHead,
    pub init: Init,
    /// When set, the last layer is drawn from `U(-s, s)` instead.
    pub final_layer_scale: Option<f64>,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn dense(input_dim: usize, hidden: Vec<usize>, output_dim: usize, head: OutputHead) -> Self {
        Self {
            input_dim,
            architecture: Architecture::Dense { hidden },
            activation: Activation::Relu,
            output_dim,
            head,
            init: Init::HeUniform,
            final_layer_scale: None,
            seed: 0,
        }
    }

    fn raw_output_dim(&self) -> usize {
        match self.head {
            OutputHead::GaussianHead => 2 * self.output_dim,
            _ => self.output_dim,
        }
    }
}

/// A named 2D tensor; biases are stored as `1 × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterSet {
    pub tensors: Vec<Param>,
}

/// Same layout as the [`ParameterSet`] it was computed for.
pub type GradientSet = ParameterSet;

impl ParameterSet {
    pub fn zeros_like(other: &ParameterSet) -> Self {
        Self {
            tensors: other
                .tensors
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Array2::zeros(p.value.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|p| p.value.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.tensors.iter().find(|p| p.name == name)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.value.dim() == b.value.dim())
    }

    pub fn scale(&mut self, k: f64) {
        for p in &mut self.tensors {
            p.value *= k;
        }
    }

    pub fn add_assign(&mut self, other: &ParameterSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.value += &b.value;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvGeom {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Linear { w: usize, b: usize },
    Conv { w: usize, b: usize, geom: ConvGeom },
    Act(Activation),
}

#[derive(Debug, Clone, PartialEq)]
enum Plan {
    Dense(Vec<Op>),
    Multi {
        image_len: usize,
        /// Flattened width of the conv branch output.
        image_out: usize,
        image: Vec<Op>,
        state: Vec<Op>,
        fusion: Vec<Op>,
    },
}

/// A network: its spec, parameters and the compiled layer plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: ParameterSet,
    plan: Plan,
}

/// Intermediate values recorded by [`Network::forward`] for [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: Array2<f64>,
    pre_head: Array2<f64>,
    inputs: Vec<Vec<Array2<f64>>>,
}

struct Builder<'a> {
    params: Vec<(String, (usize, usize), usize)>,
    spec: &'a NetworkSpec,
}

impl Builder<'_> {
    fn add(&mut self, name: String, shape: (usize, usize), fan_in: usize) -> usize {
        self.params.push((name, shape, fan_in));
        self.params.len() - 1
    }

    fn dense_chain(&mut self, prefix: &str, mut width: usize, hidden: &[usize], out: Option<usize>) -> (Vec<Op>, usize) {
        let mut ops = Vec::new();
        for (i, &h) in hidden.iter().enumerate() {
            let w = self.add(format!("{prefix}{i}.weight"), (width, h), width);
            let b = self.add(format!("{prefix}{i}.bias"), (1, h), width);
            ops.push(Op::Linear { w, b });
            ops.push(Op::Act(self.spec.activation));
            width = h;
        }
        if let Some(o) = out {
            let w = self.add("out.weight".into(), (width, o), width);
            let b = self.add("out.bias".into(), (1, o), width);
            ops.push(Op::Linear { w, b });
            width = o;
        }
        (ops, width)
    }
}

impl Network {
    /// Builds the layer plan and draws initial parameters from `spec.seed`.
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let mut b = Builder {
            params: Vec::new(),
            spec: &spec,
        };
        let out = spec.raw_output_dim();
        let shape_err = |msg: String| Error::ShapeMismatch {
            expected: msg,
            actual: format!("{:?}", spec.architecture),
        };
        let plan = match &spec.architecture {
            Architecture::Dense { hidden } => {
                if spec.input_dim == 0 || hidden.contains(&0) || out == 0 {
                    return Err(shape_err("non-zero widths".into()));
                }
                Plan::Dense(b.dense_chain("dense", spec.input_dim, hidden, Some(out)).0)
            }
            Architecture::MultiInput {
                image,
                conv,
                state_hidden,
                fusion_hidden,
            } => {
                let image_len = image.len();
                if image_len == 0 || spec.input_dim <= image_len {
                    return Err(shape_err(format!("input_dim > image size {image_len}")));
                }
                let (mut c, mut h, mut w) = (image.channels, image.height, image.width);
                let mut image_ops = Vec::new();
                for (i, cs) in conv.iter().enumerate() {
                    if cs.kernel == 0 || cs.stride == 0 || cs.out_channels == 0 || cs.kernel > h || cs.kernel > w {
                        return Err(shape_err(format!("conv{i} fits a {c}x{h}x{w} input")));
                    }
                    let geom = ConvGeom {
                        in_c: c,
                        in_h: h,
                        in_w: w,
                        out_c: cs.out_channels,
                        k: cs.kernel,
                        stride: cs.stride,
                        out_h: (h - cs.kernel) / cs.stride + 1,
                        out_w: (w - cs.kernel) / cs.stride + 1,
                    };
                    let fan_in = c * cs.kernel * cs.kernel;
                    let wi = b.add(format!("conv{i}.weight"), (fan_in, cs.out_channels), fan_in);
                    let bi = b.add(format!("conv{i}.bias"), (1, cs.out_channels), fan_in);
                    image_ops.push(Op::Conv { w: wi, b: bi, geom });
                    image_ops.push(Op::Act(spec.activation));
                    (c, h, w) = (geom.out_c, geom.out_h, geom.out_w);
                }
                let conv_out = c * h * w;
                let (state_ops, state_out) =
                    b.dense_chain("state", spec.input_dim - image_len, state_hidden, None);
                let (fusion_ops, _) = b.dense_chain("fusion", conv_out + state_out, fusion_hidden, Some(out));
                Plan::Multi {
                    image_len,
                    image_out: conv_out,
                    image: image_ops,
                    state: state_ops,
                    fusion: fusion_ops,
                }
            }
        };
        if let OutputHead::TanhScaled { limits } = &spec.head {
            if limits.len() != spec.output_dim {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} action limits", spec.output_dim),
                    actual: limits.len().to_string(),
                });
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = b.params.len();
        let tensors = b
            .params
            .iter()
            .enumerate()
            .map(|(i, (name, shape, fan_in))| {
                let last = i + 2 >= n;
                let bound = match (spec.init, spec.final_layer_scale) {
                    (Init::Zeros, _) => 0.0,
                    (_, Some(s)) if last => s,
                    _ if name.ends_with(".bias") => 0.0,
                    _ => (6.0 / *fan_in as f64).sqrt(),
                };
                let value = Array2::from_shape_simple_fn(*shape, || {
                    if bound == 0.0 {
                        0.0
                    } else {
                        rng.random_range(-bound..=bound)
                    }
                });
                Param {
                    name: name.clone(),
                    value,
                }
            })
            .collect();
        Ok(Self {
            params: ParameterSet { tensors },
            plan,
            spec,
        })
    }

    /// Rebuilds a network around previously saved parameters.
    pub fn from_parts(spec: NetworkSpec, params: ParameterSet) -> Result<Self> {
        let mut net = Self::new(spec)?;
        if !net.params.same_layout(&params) {
            return Err(Error::ShapeMismatch {
                expected: "parameters matching the network spec".into(),
                actual: "different tensor names or shapes".into(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Width of the raw output (twice `output_dim` for Gaussian heads).
    pub fn raw_output_dim(&self) -> usize {
        self.spec.raw_output_dim()
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.spec.input_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} input columns", self.spec.input_dim),
                actual: input.ncols().to_string(),
            });
        }
        Ok(())
    }

    /// Outputs only, without recording intermediates.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(input)?.output)
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Result<ForwardPass> {
        self.check_input(&input)?;
        let mut inputs = Vec::new();
        let pre_head = match &self.plan {
            Plan::Dense(ops) => {
                let mut cache = Vec::new();
                let z = self.run_chain(ops, input.to_owned(), &mut cache);
                inputs.push(cache);
                z
            }
            Plan::Multi {
                image_len,
                image,
                state,
                fusion,
                ..
            } => {
                let (mut ci, mut cs, mut cf) = (Vec::new(), Vec::new(), Vec::new());
                let img = self.run_chain(image, input.slice(s![.., ..*image_len]).to_owned(), &mut ci);
                let st = self.run_chain(state, input.slice(s![.., *image_len..]).to_owned(), &mut cs);
                let fused = ndarray::concatenate(Axis(1), &[img.view(), st.view()]).expect("same batch");
                let z = self.run_chain(fusion, fused, &mut cf);
                inputs.extend([ci, cs, cf]);
                z
            }
        };
        let output = self.apply_head(&pre_head);
        Ok(ForwardPass {
            output,
            pre_head,
            inputs,
        })
    }

    fn apply_head(&self, z: &Array2<f64>) -> Array2<f64> {
        match &self.spec.head {
            OutputHead::TanhScaled { limits } => {
                let mut y = z.clone();
                for mut row in y.rows_mut() {
                    for (v, l) in row.iter_mut().zip(limits) {
                        let t = v.tanh().clamp(-TANH_CEILING, TANH_CEILING);
                        *v = 0.5 * (l.max + l.min) + 0.5 * (l.max - l.min) * t;
                    }
                }
                y
            }
            OutputHead::Linear | OutputHead::GaussianHead => z.clone(),
        }
    }

    fn run_chain(&self, ops: &[Op], mut x: Array2<f64>, cache: &mut Vec<Array2<f64>>) -> Array2<f64> {
        for op in ops {
            let y = match op {
                Op::Linear { w, b } => {
                    x.dot(&self.params.tensors[*w].value) + &self.params.tensors[*b].value
                }
                Op::Conv { w, b, geom } => conv_forward(
                    &x,
                    &self.params.tensors[*w].value,
                    &self.params.tensors[*b].value,
                    geom,
                ),
                Op::Act(a) => activate(*a, &x),
            };
            cache.push(std::mem::replace(&mut x, y));
        }
        x
    }

    /// Reverse pass for `∂L/∂output = grad_output`; returns parameter and input gradients.
    pub fn backward(&self, pass: &ForwardPass, grad_output: ArrayView2<f64>) -> (GradientSet, Array2<f64>) {
        let mut grads = ParameterSet::zeros_like(&self.params);
        let dx = self.backward_impl(pass, grad_output, Some(&mut grads));
        (grads, dx)
    }

    /// Input gradient only; skips accumulating parameter gradients.
    pub fn input_gradient(&self, pass: &ForwardPass, grad_output: ArrayView2<f64>) -> Array2<f64> {
        self.backward_impl(pass, grad_output, None)
    }

    fn backward_impl(&self, pass: &ForwardPass, grad_output: ArrayView2<f64>, mut grads: Option<&mut GradientSet>) -> Array2<f64> {
        let mut dz = grad_output.to_owned();
        if let OutputHead::TanhScaled { limits } = &self.spec.head {
            for (mut row, zrow) in dz.rows_mut().into_iter().zip(pass.pre_head.rows()) {
                for ((g, z), l) in row.iter_mut().zip(zrow).zip(limits) {
                    let t = z.tanh().clamp(-TANH_CEILING, TANH_CEILING);
                    *g *= 0.5 * (l.max - l.min) * (1.0 - t * t);
                }
            }
        }
        match &self.plan {
            Plan::Dense(ops) => self.back_chain(ops, &pass.inputs[0], dz, grads.as_deref_mut()),
            Plan::Multi {
                image_out,
                image,
                state,
                fusion,
                ..
            } => {
                let dfused = self.back_chain(fusion, &pass.inputs[2], dz, grads.as_deref_mut());
                let img_width = *image_out;
                let dimg = dfused.slice(s![.., ..img_width]).to_owned();
                let dst = dfused.slice(s![.., img_width..]).to_owned();
                let di = self.back_chain(image, &pass.inputs[0], dimg, grads.as_deref_mut());
                let ds = self.back_chain(state, &pass.inputs[1], dst, grads);
                ndarray::concatenate(Axis(1), &[di.view(), ds.view()]).expect("same batch")
            }
        }
    }

    fn back_chain(&self, ops: &[Op], inputs: &[Array2<f64>], mut dy: Array2<f64>, mut grads: Option<&mut GradientSet>) -> Array2<f64> {
        for (op, x) in ops.iter().zip(inputs).rev() {
            dy = match op {
                Op::Linear { w, b } => {
                    let wv = &self.params.tensors[*w].value;
                    if let Some(g) = grads.as_deref_mut() {
                        g.tensors[*w].value += &x.t().dot(&dy);
                        g.tensors[*b].value += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    }
                    dy.dot(&wv.t())
                }
                Op::Conv { w, b, geom } => {
                    let wv = &self.params.tensors[*w].value;
                    let (dx, dw, db) = conv_backward(x, wv, &dy, geom, grads.is_some());
                    if let Some(g) = grads.as_deref_mut() {
                        g.tensors[*w].value += &dw;
                        g.tensors[*b].value += &db;
                    }
                    dx
                }
                Op::Act(a) => {
                    let mut d = dy;
                    match a {
                        Activation::Relu => d.zip_mut_with(x, |g, &xi| {
                            if xi <= 0.0 {
                                *g = 0.0
                            }
                        }),
                        Activation::Tanh => d.zip_mut_with(x, |g, &xi| {
                            let t = xi.tanh();
                            *g *= 1.0 - t * t;
                        }),
                        Activation::Linear => {}
                    }
                    d
                }
            };
        }
        dy
    }
}

fn activate(a: Activation, x: &Array2<f64>) -> Array2<f64> {
    match a {
        Activation::Relu => x.mapv(|v| v.max(0.0)),
        Activation::Tanh => x.mapv(f64::tanh),
        Activation::Linear => x.clone(),
    }
}

/// `(out_h·out_w) × (C·k·k)` patch matrix for one channel-major image row.
fn im2col(row: &[f64], g: &ConvGeom) -> Array2<f64> {
    let kk = g.k * g.k;
    let mut p = Array2::zeros((g.out_h * g.out_w, g.in_c * kk));
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let pos = oy * g.out_w + ox;
            for c in 0..g.in_c {
                for ky in 0..g.k {
                    let base = c * g.in_h * g.in_w + (oy * g.stride + ky) * g.in_w + ox * g.stride;
                    for kx in 0..g.k {
                        p[[pos, c * kk + ky * g.k + kx]] = row[base + kx];
                    }
                }
            }
        }
    }
    p
}

fn conv_forward(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>, g: &ConvGeom) -> Array2<f64> {
    let hw = g.out_h * g.out_w;
    let mut out = Array2::zeros((x.nrows(), g.out_c * hw));
    for (i, row) in x.rows().into_iter().enumerate() {
        let row = row.to_vec();
        let y = im2col(&row, g).dot(w) + b;
        let mut orow = out.row_mut(i);
        for pos in 0..hw {
            for oc in 0..g.out_c {
                orow[oc * hw + pos] = y[[pos, oc]];
            }
        }
    }
    out
}

fn conv_backward(
    x: &Array2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    g: &ConvGeom,
    want_params: bool,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let hw = g.out_h * g.out_w;
    let kk = g.k * g.k;
    let mut dx = Array2::zeros(x.raw_dim());
    let mut dw = Array2::zeros(w.raw_dim());
    let mut db = Array2::zeros((1, g.out_c));
    for i in 0..x.nrows() {
        let mut d = Array2::zeros((hw, g.out_c));
        for pos in 0..hw {
            for oc in 0..g.out_c {
                d[[pos, oc]] = dy[[i, oc * hw + pos]];
            }
        }
        if want_params {
            let row = x.row(i).to_vec();
            dw += &im2col(&row, g).t().dot(&d);
            db += &d.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        let dp = d.dot(&w.t());
        let mut dxr = dx.row_mut(i);
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let pos = oy * g.out_w + ox;
                for c in 0..g.in_c {
                    for ky in 0..g.k {
                        let base = c * g.in_h * g.in_w + (oy * g.stride + ky) * g.in_w + ox * g.stride;
                        for kx in 0..g.k {
                            dxr[base + kx] += dp[[pos, c * kk + ky * g.k + kx]];
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}
