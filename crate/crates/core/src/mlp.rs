//! Fully connected ReLU networks with hand-written reverse mode.
//!
//! Parameters live in one flat vector (layer by layer, weights row-major
//! `out x in` followed by the bias) so optimizers and checkpoints can treat
//! them as a single array.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative given pre-activation `z` and output `a`. ReLU'(0) = 0.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// Layer widths `w0 -> w1 -> ... -> w_{k+1}`, ReLU hidden layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, output: Activation) -> Result<Self> {
        let s = Self { widths, output };
        s.validate()?;
        Ok(s)
    }

    /// `input -> hidden... -> 1`, linear output.
    pub fn potential(input: usize, hidden: &[usize]) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Self::new(widths, Activation::Linear)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::InvalidParam(format!("bad layer widths {:?}", self.widths)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub(crate) fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            self.output
        } else {
            Activation::Relu
        }
    }

    /// Offset of layer `l`'s weights in the flat vector; the bias follows.
    fn offset(&self, layer: usize) -> usize {
        self.widths[..=layer].windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitRecord {
    pub scheme: String,
    pub seed: u64,
}

/// Flat parameter (or gradient) vector for an [`MlpSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub data: Vec<f64>,
    pub init: InitRecord,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            data: vec![0.0; spec.n_params()],
            init: InitRecord {
                scheme: "zeros".into(),
                seed: 0,
            },
        }
    }

    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn he_uniform(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = Rng::substream(seed, "mlp-init", 0);
        let mut p = Self::zeros(spec);
        for l in 0..spec.n_layers() {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let off = spec.offset(l);
            for w in &mut p.data[off..off + fan_in * fan_out] {
                *w = rng.uniform(-bound, bound);
            }
        }
        p.init = InitRecord {
            scheme: "he-uniform".into(),
            seed,
        };
        p
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A network: spec plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

/// Per-sample activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    /// `acts[0]` is the input, `acts[l+1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Mlp {
    pub fn new(spec: MlpSpec, params: MlpParams) -> Result<Self> {
        spec.validate()?;
        if params.data.len() != spec.n_params() {
            return Err(Error::Shape(format!(
                "spec needs {} parameters, got {}",
                spec.n_params(),
                params.data.len()
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = MlpParams::he_uniform(&spec, seed);
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = MlpParams::zeros(&spec);
        Ok(Self { spec, params })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Weight matrix view (`out x in`, row-major) and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (i, o) = (self.spec.widths[l], self.spec.widths[l + 1]);
        let off = self.spec.offset(l);
        let (w, rest) = self.params.data[off..].split_at(i * o);
        (w, &rest[..o])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (i, o) = (self.spec.widths[l], self.spec.widths[l + 1]);
        let off = self.spec.offset(l);
        let (w, rest) = self.params.data[off..].split_at_mut(i * o);
        (w, &mut rest[..o])
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects input of {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Forward pass recording activations in `tape`; returns the output.
    pub fn forward_tape<'t>(&self, x: &[f64], tape: &'t mut Tape) -> &'t [f64] {
        let nl = self.spec.n_layers();
        if tape.acts.len() != nl + 1 {
            tape.acts = self.spec.widths.iter().map(|w| vec![0.0; *w]).collect();
            tape.pre = self.spec.widths[1..].iter().map(|w| vec![0.0; *w]).collect();
        }
        tape.acts[0].copy_from_slice(x);
        for l in 0..nl {
            let (w, b) = self.layer(l);
            let act = self.spec.activation(l);
            let n_in = self.spec.widths[l];
            let (head, tail) = tape.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            let pre = &mut tape.pre[l];
            for (o, (z, a)) in pre.iter_mut().zip(out.iter_mut()).enumerate() {
                *z = dot(&w[o * n_in..(o + 1) * n_in], input) + b[o];
                *a = act.apply(*z);
            }
        }
        &tape.acts[nl]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut tape = Tape::default();
        Ok(self.forward_tape(x, &mut tape).to_vec())
    }

    /// Scalar output of a width-1 network.
    pub fn forward_scalar(&self, x: &[f64], tape: &mut Tape) -> f64 {
        self.forward_tape(x, tape)[0]
    }

    /// Row-wise forward over a batch.
    pub fn forward_batch(&self, xs: &Matrix) -> Result<Matrix> {
        if xs.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects input of {}, got {}",
                self.input_dim(),
                xs.cols()
            )));
        }
        let mut out = Matrix::zeros(xs.rows(), self.output_dim());
        let mut tape = Tape::default();
        for i in 0..xs.rows() {
            let y = self.forward_tape(xs.row(i), &mut tape);
            out.row_mut(i).copy_from_slice(y);
        }
        Ok(out)
    }

    /// Backpropagate `upstream` (d loss / d output) through the last
    /// `forward_tape` call. Parameter gradients are accumulated into
    /// `grad` when given; the input gradient is written to `input_grad`
    /// when given.
    pub fn backward_tape(
        &self,
        tape: &mut Tape,
        upstream: &[f64],
        mut grad: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) {
        let nl = self.spec.n_layers();
        let Tape {
            acts,
            pre,
            delta,
            delta_prev,
        } = tape;
        delta.clear();
        let act = self.spec.activation(nl - 1);
        delta.extend(
            upstream
                .iter()
                .zip(pre[nl - 1].iter().zip(&acts[nl]))
                .map(|(u, (z, a))| u * act.derivative(*z, *a)),
        );
        for l in (0..nl).rev() {
            let n_in = self.spec.widths[l];
            let (w, _) = self.layer(l);
            if let Some(g) = grad.as_deref_mut() {
                let off = self.spec.offset(l);
                let n_out = self.spec.widths[l + 1];
                let (gw, gb) = g[off..off + n_out * (n_in + 1)].split_at_mut(n_out * n_in);
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (gwi, a) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(&acts[l]) {
                        *gwi += d * a;
                    }
                    gb[o] += d;
                }
            }
            if l == 0 && input_grad.is_none() {
                break;
            }
            delta_prev.clear();
            delta_prev.resize(n_in, 0.0);
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (p, wi) in delta_prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            if l > 0 {
                for (p, z) in delta_prev.iter_mut().zip(&pre[l - 1]) {
                    if *z <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            std::mem::swap(delta, delta_prev);
        }
        if let Some(ig) = input_grad {
            ig.copy_from_slice(delta);
        }
    }

    /// Gradient of `upstream · output` with respect to every parameter.
    pub fn param_grad(&self, x: &[f64], upstream: &[f64]) -> Result<MlpParams> {
        self.check_input(x)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape("upstream width differs from output".into()));
        }
        let mut tape = Tape::default();
        self.forward_tape(x, &mut tape);
        let mut g = MlpParams::zeros(&self.spec);
        self.backward_tape(&mut tape, upstream, Some(&mut g.data), None);
        g.init.scheme = "gradient".into();
        Ok(g)
    }

    /// `∂ output / ∂ x` for a width-1 network.
    pub fn input_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if self.output_dim() != 1 {
            return Err(Error::Shape("input gradient needs a scalar output".into()));
        }
        let mut tape = Tape::default();
        let mut g = vec![0.0; x.len()];
        self.input_grad_tape(x, &mut tape, &mut g);
        Ok(g)
    }

    /// Allocation-free input gradient; returns the output value.
    pub fn input_grad_tape(&self, x: &[f64], tape: &mut Tape, out: &mut [f64]) -> f64 {
        let y = self.forward_tape(x, tape)[0];
        self.backward_tape(tape, &[1.0], None, Some(out));
        y
    }
}

/// `mlp_forward(spec, params, x)`.
pub fn mlp_forward(spec: &MlpSpec, params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    Mlp::new(spec.clone(), params.clone())?.forward(x)
}

/// `mlp_param_grad(spec, params, x, upstream)` for scalar-output networks.
pub fn mlp_param_grad(spec: &MlpSpec, params: &MlpParams, x: &[f64], upstream: f64) -> Result<MlpParams> {
    Mlp::new(spec.clone(), params.clone())?.param_grad(x, &[upstream])
}

/// `mlp_input_grad(spec, params, x)`.
pub fn mlp_input_grad(spec: &MlpSpec, params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    Mlp::new(spec.clone(), params.clone())?.input_grad(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Sgd { lr } => lr > 0.0,
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("bad optimizer settings {self:?}")))
        }
    }
}

/// Adam moment accumulators for one flat parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, n_params: usize) -> Self {
        match cfg {
            OptimizerConfig::Sgd { lr } => Optimizer::Sgd { lr },
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => Optimizer::Adam(AdamState {
                m: vec![0.0; n_params],
                v: vec![0.0; n_params],
                step: 0,
                lr,
                beta1,
                beta2,
                eps,
            }),
        }
    }

    /// One descent step `params -= lr * update(grad)`.
    pub fn descend(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam(s) => {
                s.step += 1;
                let t = s.step as i32;
                let c1 = 1.0 - s.beta1.powi(t);
                let c2 = 1.0 - s.beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
                    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
                    let mh = s.m[i] / c1;
                    let vh = s.v[i] / c2;
                    params[i] -= s.lr * mh / (vh.sqrt() + s.eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Mlp {
        let spec = MlpSpec::new(vec![1, 2, 1], Activation::Linear).unwrap();
        // W1 = [[1], [-1]], b1 = 0, W2 = [[1, 1]], b2 = 0
        let params = MlpParams {
            data: vec![1.0, -1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
            init: InitRecord {
                scheme: "manual".into(),
                seed: 0,
            },
        };
        Mlp::new(spec, params).unwrap()
    }

    #[test]
    fn hand_composition() {
        let net = toy();
        assert_eq!(net.forward(&[2.0]).unwrap(), vec![2.0]);
        assert_eq!(net.forward(&[-3.0]).unwrap(), vec![3.0]);
        let mut z = Mlp::zeros(MlpSpec::new(vec![3, 4, 2], Activation::Linear).unwrap()).unwrap();
        let (_, b) = z.layer_mut(1);
        b.copy_from_slice(&[0.5, -2.0]);
        assert_eq!(z.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5, -2.0]);
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn linear_grads() {
        let spec = MlpSpec::new(vec![1, 1], Activation::Linear).unwrap();
        let params = MlpParams {
            data: vec![0.7, -0.2],
            init: InitRecord {
                scheme: "manual".into(),
                seed: 0,
            },
        };
        let g = mlp_param_grad(&spec, &params, &[3.0], 1.0).unwrap();
        assert_eq!(g.data, vec![3.0, 1.0]);
        let g = mlp_param_grad(&spec, &params, &[3.0], 0.0).unwrap();
        assert!(g.data.iter().all(|v| *v == 0.0));
        let ig = mlp_input_grad(&spec, &params, &[3.0]).unwrap();
        assert_eq!(ig, vec![0.7]);
    }

    #[test]
    fn dead_relu_input_grad() {
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Linear).unwrap();
        let mut net = Mlp::init(spec, 1).unwrap();
        let (_, b) = net.layer_mut(0);
        b.iter_mut().for_each(|v| *v = -100.0);
        assert_eq!(net.input_grad(&[0.3, -0.4]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn sigmoid_output_grad_matches_fd() {
        let spec = MlpSpec::new(vec![3, 5, 2], Activation::Sigmoid).unwrap();
        let net = Mlp::init(spec, 4).unwrap();
        let x = [0.2, -0.5, 0.9];
        let up = [0.3, -1.1];
        let g = net.param_grad(&x, &up).unwrap();
        let f = |n: &Mlp| {
            let y = n.forward(&x).unwrap();
            up[0] * y[0] + up[1] * y[1]
        };
        for k in 0..net.params.data.len() {
            let mut p = net.clone();
            let mut m = net.clone();
            p.params.data[k] += 1e-6;
            m.params.data[k] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - g.data[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn adam_bias_correction_first_step() {
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1), 2);
        let mut p = vec![1.0, 1.0];
        opt.descend(&mut p, &[2.0, -0.5]);
        // first Adam step moves every coordinate by lr·sign(g)
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] - 1.1).abs() < 1e-7);
    }

    #[test]
    fn he_init_is_seeded() {
        let spec = MlpSpec::potential(4, &[8, 8]).unwrap();
        assert_eq!(Mlp::init(spec.clone(), 9).unwrap(), Mlp::init(spec.clone(), 9).unwrap());
        assert_ne!(Mlp::init(spec.clone(), 9).unwrap(), Mlp::init(spec, 10).unwrap());
    }
}
