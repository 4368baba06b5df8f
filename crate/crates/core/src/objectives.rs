//! Per-sample losses `L_i(θ) = ℓ(f(x_i; θ), y_i)` and the L2 regularizer.
//!
//! Models are dense feed-forward stacks: a single affine map (linear) or
//! affine maps interleaved with an elementwise activation (MLP). The
//! parameter vector is flat; for each layer the weights (`out × in`,
//! row-major) are followed by the bias (`out`).
//!
//! Gradients come from a small reverse-mode tape over whole-vector ops. At
//! non-differentiable points the subgradient uses derivative 0: ReLU at 0 and
//! each hinge term `max(0, ·)` at exactly 0.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::selection::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative from the pre-activation `pre` and the output `out`.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Sigmoid => out * (1.0 - out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Linear {
        #[serde(default = "default_true")]
        bias: bool,
    },
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `-log softmax(a)_y`
    CrossEntropy,
    /// `Σ_{k≠y} max(0, 1 + a_k - a_y)`
    MulticlassHinge,
    /// `log(1 + exp(-y·a))` with `y = 2·label - 1 ∈ {-1, 1}`, scalar output.
    BinaryCrossEntropy,
    /// `½‖a - t‖²`, with `t` the example's real target or else one-hot(label).
    Squared,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weight_offset: usize,
    bias_offset: Option<usize>,
}

/// One training example as seen by an objective.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub x: &'a [f64],
    pub y: usize,
    pub target: Option<&'a [f64]>,
}

impl<'a> Example<'a> {
    pub fn new(x: &'a [f64], y: usize) -> Self {
        Example { x, y, target: None }
    }
}

/// A model plus loss plus L2 coefficient: everything needed to evaluate
/// `L_i(θ)`, its subgradient, and `R(θ) = ½λ‖θ‖²`.
#[derive(Debug, Clone)]
pub struct PerSampleObjective {
    model: ModelSpec,
    loss: LossKind,
    l2: f64,
    d_in: usize,
    d_out: usize,
    layers: Vec<Layer>,
    activation: Option<Activation>,
    dim: usize,
}

impl PerSampleObjective {
    pub fn new(model: ModelSpec, loss: LossKind, l2: f64, d_in: usize, d_out: usize) -> Result<Self> {
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(invalid(format!("L2 coefficient must be finite and >= 0, got {l2}")));
        }
        if d_in == 0 || d_out == 0 {
            return Err(invalid("input and output dimensions must be positive"));
        }
        if loss == LossKind::BinaryCrossEntropy && d_out != 1 {
            return Err(invalid("binary cross-entropy needs a single output"));
        }
        if matches!(loss, LossKind::CrossEntropy | LossKind::MulticlassHinge) && d_out < 2 {
            return Err(invalid("multiclass losses need at least two outputs"));
        }

        let (widths, activation, bias) = match &model {
            ModelSpec::Linear { bias } => (vec![d_in, d_out], None, *bias),
            ModelSpec::Mlp { hidden, activation } => {
                if hidden.contains(&0) {
                    return Err(invalid("hidden widths must be positive"));
                }
                let mut w = vec![d_in];
                w.extend(hidden);
                w.push(d_out);
                (w, Some(*activation), true)
            }
        };
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weight_offset = offset;
            offset += fan_in * fan_out;
            let bias_offset = bias.then(|| {
                let b = offset;
                offset += fan_out;
                b
            });
            layers.push(Layer {
                fan_in,
                fan_out,
                weight_offset,
                bias_offset,
            });
        }
        Ok(PerSampleObjective {
            model,
            loss,
            l2,
            d_in,
            d_out,
            layers,
            activation,
            dim: offset,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// Number of parameters `d_θ`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same objective with a different L2 coefficient.
    pub fn with_l2(&self, l2: f64) -> Result<Self> {
        PerSampleObjective::new(self.model.clone(), self.loss, l2, self.d_in, self.d_out)
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]` for every weight and bias.
    pub fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim];
        for layer in &self.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let w = layer.weight_offset..layer.weight_offset + layer.fan_in * layer.fan_out;
            for v in &mut theta[w] {
                *v = rng.random_range(-bound..=bound);
            }
            if let Some(b) = layer.bias_offset {
                for v in &mut theta[b..b + layer.fan_out] {
                    *v = rng.random_range(-bound..=bound);
                }
            }
        }
        theta
    }

    fn check(&self, theta: &[f64], ex: &Example) -> Result<()> {
        if theta.len() != self.dim {
            return Err(invalid(format!("expected {} parameters, got {}", self.dim, theta.len())));
        }
        if ex.x.len() != self.d_in {
            return Err(invalid(format!("expected {} features, got {}", self.d_in, ex.x.len())));
        }
        match (self.loss, ex.target) {
            (LossKind::Squared, Some(t)) if t.len() != self.d_out => Err(Error::Data(format!(
                "target width {} does not match output width {}",
                t.len(),
                self.d_out
            ))),
            (LossKind::Squared, Some(_)) => Ok(()),
            (LossKind::BinaryCrossEntropy, _) if ex.y > 1 => {
                Err(Error::Data(format!("binary label must be 0 or 1, got {}", ex.y)))
            }
            (LossKind::BinaryCrossEntropy, _) => Ok(()),
            _ if ex.y >= self.d_out => Err(Error::Data(format!(
                "label {} out of range for {} outputs",
                ex.y, self.d_out
            ))),
            _ => Ok(()),
        }
    }

    fn forward(&self, theta: &[f64], x: &[f64]) -> Tape {
        let mut tape = Tape {
            nodes: vec![x.to_vec()],
            ops: Vec::with_capacity(2 * self.layers.len()),
        };
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let input = tape.nodes.len() - 1;
            let out = affine(theta, layer, &tape.nodes[input]);
            tape.push(Op::Affine { layer: li, input }, out);
            if li != last {
                let act = self.activation.expect("MLP layers carry an activation");
                let pre = tape.nodes.len() - 1;
                let out = tape.nodes[pre].iter().map(|&v| act.apply(v)).collect();
                tape.push(Op::Activate { act, input: pre }, out);
            }
        }
        tape
    }

    /// Model output `f(x; θ)` (pre-activation of the last layer).
    pub fn logits(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut tape = self.forward(theta, x);
        tape.nodes.pop().expect("tape has an output node")
    }

    /// Predicted class: argmax with ties to the smaller class index, or for a
    /// single output, class 1 iff the output is positive.
    pub fn predict(&self, theta: &[f64], x: &[f64]) -> usize {
        let a = self.logits(theta, x);
        if a.len() == 1 {
            return usize::from(a[0] > 0.0);
        }
        let mut best = 0;
        for (k, &v) in a.iter().enumerate().skip(1) {
            if v > a[best] {
                best = k;
            }
        }
        best
    }

    /// `L_i(θ)` for one example.
    pub fn per_sample_loss(&self, theta: &[f64], ex: &Example) -> Result<f64> {
        self.check(theta, ex)?;
        let a = self.logits(theta, ex.x);
        Ok(self.output_loss(&a, ex, false).0)
    }

    /// Adds `scale · g` to `grad`, where `g ∈ ∂L_i(θ)`; returns `L_i(θ)`.
    pub fn accumulate_grad(&self, theta: &[f64], ex: &Example, scale: f64, grad: &mut [f64]) -> Result<f64> {
        self.check(theta, ex)?;
        if grad.len() != self.dim {
            return Err(invalid("gradient buffer has the wrong length"));
        }
        let tape = self.forward(theta, ex.x);
        let output = tape.nodes.last().expect("tape has an output node");
        let (loss, adj_out) = self.output_loss(output, ex, true);
        tape.backward(self, theta, adj_out, scale, grad);
        Ok(loss)
    }

    /// A subgradient of `L_i` at `θ`.
    pub fn per_sample_grad(&self, theta: &[f64], ex: &Example) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.dim];
        self.accumulate_grad(theta, ex, 1.0, &mut g)?;
        Ok(g)
    }

    /// Distance from the nearest non-differentiable point along any ReLU
    /// pre-activation or hinge term; infinite for smooth objectives.
    pub fn kink_margin(&self, theta: &[f64], ex: &Example) -> Result<f64> {
        self.check(theta, ex)?;
        let tape = self.forward(theta, ex.x);
        let mut margin = f64::INFINITY;
        for op in &tape.ops {
            if let Op::Activate {
                act: Activation::Relu,
                input,
            } = *op
            {
                margin = tape.nodes[input].iter().fold(margin, |m, v| m.min(v.abs()));
            }
        }
        if self.loss == LossKind::MulticlassHinge {
            let a = tape.nodes.last().expect("tape has an output node");
            for (k, &ak) in a.iter().enumerate() {
                if k != ex.y {
                    margin = margin.min((1.0 + ak - a[ex.y]).abs());
                }
            }
        }
        Ok(margin)
    }

    /// `(R(θ), ∇R(θ))` for this objective's coefficient.
    pub fn regularizer(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        regularizer_value_grad(self.l2, theta)
    }

    /// Loss at the output and, when asked, its gradient with respect to it.
    fn output_loss(&self, a: &[f64], ex: &Example, want_grad: bool) -> (f64, Vec<f64>) {
        match self.loss {
            LossKind::CrossEntropy => {
                let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = a.iter().map(|&v| (v - max).exp()).sum();
                let lse = max + sum_exp.ln();
                let loss = lse - a[ex.y];
                let grad = if want_grad {
                    let mut g: Vec<f64> = a.iter().map(|&v| (v - lse).exp()).collect();
                    g[ex.y] -= 1.0;
                    g
                } else {
                    Vec::new()
                };
                (loss, grad)
            }
            LossKind::MulticlassHinge => {
                let mut loss = 0.0;
                let mut g = if want_grad { vec![0.0; a.len()] } else { Vec::new() };
                for k in (0..a.len()).filter(|&k| k != ex.y) {
                    let margin = 1.0 + a[k] - a[ex.y];
                    if margin > 0.0 {
                        loss += margin;
                        if want_grad {
                            g[k] += 1.0;
                            g[ex.y] -= 1.0;
                        }
                    }
                }
                (loss, g)
            }
            LossKind::BinaryCrossEntropy => {
                let y = if ex.y == 1 { 1.0 } else { -1.0 };
                let m = -y * a[0];
                let loss = m.max(0.0) + (-m.abs()).exp().ln_1p();
                let grad = if want_grad { vec![-y * sigmoid(m)] } else { Vec::new() };
                (loss, grad)
            }
            LossKind::Squared => {
                let diff: Vec<f64> = match ex.target {
                    Some(t) => a.iter().zip(t).map(|(ai, ti)| ai - ti).collect(),
                    None => a
                        .iter()
                        .enumerate()
                        .map(|(k, &ai)| ai - if k == ex.y { 1.0 } else { 0.0 })
                        .collect(),
                };
                let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
                (loss, if want_grad { diff } else { Vec::new() })
            }
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn affine(theta: &[f64], layer: &Layer, input: &[f64]) -> Vec<f64> {
    (0..layer.fan_out)
        .map(|o| {
            let row = &theta[layer.weight_offset + o * layer.fan_in..][..layer.fan_in];
            let dot: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
            dot + layer.bias_offset.map_or(0.0, |b| theta[b + o])
        })
        .collect()
}

enum Op {
    Affine { layer: usize, input: usize },
    Activate { act: Activation, input: usize },
}

/// Forward values for every node; op `k` produced node `k + 1`.
struct Tape {
    nodes: Vec<Vec<f64>>,
    ops: Vec<Op>,
}

impl Tape {
    fn push(&mut self, op: Op, value: Vec<f64>) {
        self.ops.push(op);
        self.nodes.push(value);
    }

    fn backward(&self, obj: &PerSampleObjective, theta: &[f64], adj_out: Vec<f64>, scale: f64, grad: &mut [f64]) {
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        *adjoints.last_mut().expect("non-empty tape") = Some(adj_out);
        for (k, op) in self.ops.iter().enumerate().rev() {
            let Some(adj) = adjoints[k + 1].take() else {
                continue;
            };
            match *op {
                Op::Affine { layer, input } => {
                    let layer = &obj.layers[layer];
                    let x = &self.nodes[input];
                    for (o, &d) in adj.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let row = &mut grad[layer.weight_offset + o * layer.fan_in..][..layer.fan_in];
                        for (g, xi) in row.iter_mut().zip(x) {
                            *g += scale * d * xi;
                        }
                        if let Some(b) = layer.bias_offset {
                            grad[b + o] += scale * d;
                        }
                    }
                    if input > 0 {
                        let mut adj_in = vec![0.0; layer.fan_in];
                        for (o, &d) in adj.iter().enumerate() {
                            let row = &theta[layer.weight_offset + o * layer.fan_in..][..layer.fan_in];
                            for (ai, w) in adj_in.iter_mut().zip(row) {
                                *ai += w * d;
                            }
                        }
                        accumulate(&mut adjoints[input], adj_in);
                    }
                }
                Op::Activate { act, input } => {
                    let pre = &self.nodes[input];
                    let out = &self.nodes[k + 1];
                    let adj_in = adj
                        .iter()
                        .zip(pre.iter().zip(out))
                        .map(|(d, (&p, &y))| d * act.derivative(p, y))
                        .collect();
                    accumulate(&mut adjoints[input], adj_in);
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, v: Vec<f64>) {
    match slot {
        Some(existing) => existing.iter_mut().zip(v).for_each(|(a, b)| *a += b),
        None => *slot = Some(v),
    }
}

/// `R(θ) = ½λ‖θ‖²` and `∇R(θ) = λθ`.
pub fn regularizer_value_grad(l2: f64, theta: &[f64]) -> (f64, Vec<f64>) {
    let value = 0.5 * l2 * theta.iter().map(|t| t * t).sum::<f64>();
    (value, theta.iter().map(|t| l2 * t).collect())
}
