//! Small dense feed-forward networks with exact gradients and sound bounds.

mod bounds;
pub mod interval;

pub use bounds::{spectral_norm, SmoothnessBound};
pub use interval::{Interval, IntervalBox};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("input has dimension {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layer {layer} expects {expected} inputs but receives {got}")]
    BrokenChain { layer: usize, expected: usize, got: usize },
    #[error("layer {0} holds non-finite weights")]
    NonFinite(usize),
    #[error("invalid input box: {0}")]
    InvalidBox(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Softplus,
    Identity,
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Softplus => softplus(z),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation. The relu kink gets 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Softplus => sigmoid(z),
            Activation::Identity => 1.0,
        }
    }

    /// Upper bound on |σ''|; infinite for relu.
    pub fn curvature(self) -> f64 {
        match self {
            Activation::Relu => f64::INFINITY,
            Activation::Tanh => 4.0 / (3.0 * 3f64.sqrt()),
            Activation::Softplus => 0.25,
            Activation::Identity => 0.0,
        }
    }

    pub fn interval(self, z: Interval) -> Interval {
        match self {
            Activation::Relu => Interval::new(z.lo.max(0.0), z.hi.max(0.0)),
            Activation::Tanh => z.map_monotone(f64::tanh).clamp(-1.0, 1.0),
            Activation::Softplus => {
                let v = z.map_monotone(softplus);
                Interval::new(v.lo.max(0.0), v.hi)
            }
            Activation::Identity => z,
        }
    }

    /// Range of σ' over `z`.
    pub fn derivative_interval(self, z: Interval) -> Interval {
        match self {
            Activation::Relu => {
                if z.lo > 0.0 {
                    Interval::point(1.0)
                } else if z.hi <= 0.0 {
                    Interval::point(0.0)
                } else {
                    Interval::new(0.0, 1.0)
                }
            }
            Activation::Tanh => {
                let d = |x: f64| {
                    let t = x.tanh();
                    1.0 - t * t
                };
                let a = d(z.lo);
                let b = d(z.hi);
                let hi = if z.contains(0.0) { 1.0 } else { a.max(b) };
                Interval::new(a.min(b), hi).outward().clamp(0.0, 1.0)
            }
            Activation::Softplus => z.map_monotone(sigmoid).clamp(0.0, 1.0),
            Activation::Identity => Interval::point(1.0),
        }
    }
}

/// Dense layer `a = σ(W x + b)` with a row-major `rows × cols` weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize, activation: Activation) -> Self {
        Layer { rows, cols, weight: vec![0.0; rows * cols], bias: vec![0.0; rows], activation }
    }

    pub fn from_rows(w: &[&[f64]], bias: &[f64], activation: Activation) -> Self {
        let rows = w.len();
        let cols = if rows == 0 { 0 } else { w[0].len() };
        let mut weight = Vec::with_capacity(rows * cols);
        for r in w {
            assert_eq!(r.len(), cols, "ragged weight rows");
            weight.extend_from_slice(r);
        }
        assert_eq!(bias.len(), rows);
        Layer { rows, cols, weight, bias: bias.to_vec(), activation }
    }

    #[inline]
    pub fn w(&self, r: usize, c: usize) -> f64 {
        self.weight[r * self.cols + c]
    }

    fn num_params(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    fn pre_activation(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            let mut s = self.bias[r];
            for (w, v) in row.iter().zip(x) {
                s += w * v;
            }
            out.push(s);
        }
    }
}

/// Affine input normalization `x -> (x - offset) * scale`, scale > 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputMap {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Componentwise output saturation, realized as `min(max(y, lo), hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputClamp {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    pub layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_map: Option<InputMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_clamp: Option<OutputClamp>,
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// `acts[0]` is the normalized input, `acts[l + 1]` the output of layer `l`.
    pub acts: Vec<Vec<f64>>,
    pub pres: Vec<Vec<f64>>,
    /// Output components held at a clamp bound.
    pub clamped: Vec<bool>,
    pub output: Vec<f64>,
}

impl FeedForwardNet {
    /// Randomly initialized network. Hidden layers use `hidden_act`; the
    /// last layer uses `output_act`. Glorot-uniform weights, zero biases.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        hidden_act: Activation,
        output_act: Activation,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (cols, rows) = (dims[k], dims[k + 1]);
            let act = if k + 2 == dims.len() { output_act } else { hidden_act };
            let gain = if act == Activation::Relu { 2f64.sqrt() } else { 1.0 };
            let limit = gain * (6.0 / (rows + cols) as f64).sqrt();
            let mut layer = Layer::zeros(rows, cols, act);
            for w in layer.weight.iter_mut() {
                *w = rng.gen_range(-limit..limit);
            }
            layers.push(layer);
        }
        FeedForwardNet { layers, input_map: None, output_clamp: None }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NetError> {
        let net = FeedForwardNet { layers, input_map: None, output_clamp: None };
        net.validate()?;
        Ok(net)
    }

    pub fn with_input_map(mut self, offset: Vec<f64>, scale: Vec<f64>) -> Self {
        assert_eq!(offset.len(), self.input_dim());
        assert_eq!(scale.len(), self.input_dim());
        assert!(scale.iter().all(|&s| s > 0.0), "input scale must be positive");
        self.input_map = Some(InputMap { offset, scale });
        self
    }

    pub fn with_output_clamp(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), self.output_dim());
        assert_eq!(upper.len(), self.output_dim());
        self.output_clamp = Some(OutputClamp { lower, upper });
        self
    }

    pub fn validate(&self) -> Result<(), NetError> {
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[1].cols != pair[0].rows {
                return Err(NetError::BrokenChain { layer: k + 1, expected: pair[1].cols, got: pair[0].rows });
            }
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.weight.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(NetError::BrokenChain { layer: k, expected: l.rows * l.cols, got: l.weight.len() });
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite(k));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.cols)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Parameters flattened layer by layer, weights (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        match &self.input_map {
            Some(m) => x.iter().zip(&m.offset).zip(&m.scale).map(|((v, o), s)| (v - o) * s).collect(),
            None => x.to_vec(),
        }
    }

    fn check_input(&self, len: usize) -> Result<(), NetError> {
        if len != self.input_dim() {
            return Err(NetError::DimensionMismatch { expected: self.input_dim(), got: len });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(x.len())?;
        Ok(self.eval(x))
    }

    /// Forward pass without the dimension check; panics on mismatch.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "network input dimension");
        let mut a = self.normalize(x);
        let mut z = Vec::new();
        for l in &self.layers {
            l.pre_activation(&a, &mut z);
            a.clear();
            a.extend(z.iter().map(|&v| l.activation.apply(v)));
        }
        if let Some(c) = &self.output_clamp {
            for (k, v) in a.iter_mut().enumerate() {
                *v = v.max(c.lower[k]).min(c.upper[k]);
            }
        }
        a
    }

    /// Scalar output convenience for single-output networks.
    pub fn eval_scalar(&self, x: &[f64]) -> f64 {
        self.eval(x)[0]
    }

    pub fn trace(&self, x: &[f64]) -> Trace {
        assert_eq!(x.len(), self.input_dim(), "network input dimension");
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pres = Vec::with_capacity(self.layers.len());
        acts.push(self.normalize(x));
        for l in &self.layers {
            let mut z = Vec::with_capacity(l.rows);
            l.pre_activation(acts.last().unwrap(), &mut z);
            let a: Vec<f64> = z.iter().map(|&v| l.activation.apply(v)).collect();
            pres.push(z);
            acts.push(a);
        }
        let mut output = acts.last().unwrap().clone();
        let mut clamped = vec![false; output.len()];
        if let Some(c) = &self.output_clamp {
            for (k, v) in output.iter_mut().enumerate() {
                if *v < c.lower[k] {
                    *v = c.lower[k];
                    clamped[k] = true;
                } else if *v > c.upper[k] {
                    *v = c.upper[k];
                    clamped[k] = true;
                }
            }
        }
        Trace { acts, pres, clamped, output }
    }

    /// Reverse pass. Accumulates parameter gradients into `grad` (laid out
    /// as [`FeedForwardNet::params`]) when given, and returns the cotangent
    /// with respect to the raw input.
    pub fn backward(&self, trace: &Trace, cotangent: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
        assert_eq!(cotangent.len(), self.output_dim());
        let mut delta: Vec<f64> =
            cotangent.iter().zip(&trace.clamped).map(|(&c, &cl)| if cl { 0.0 } else { c }).collect();
        let mut offset = self.num_params();
        for (k, l) in self.layers.iter().enumerate().rev() {
            offset -= l.num_params();
            for (d, &z) in delta.iter_mut().zip(&trace.pres[k]) {
                *d *= l.activation.derivative(z);
            }
            if let Some(g) = grad.as_deref_mut() {
                let a = &trace.acts[k];
                let gw = &mut g[offset..offset + l.rows * l.cols];
                for r in 0..l.rows {
                    let d = delta[r];
                    if d != 0.0 {
                        for (gw, &av) in gw[r * l.cols..(r + 1) * l.cols].iter_mut().zip(a) {
                            *gw += d * av;
                        }
                    }
                }
                let gb = &mut g[offset + l.rows * l.cols..offset + l.num_params()];
                for (gb, &d) in gb.iter_mut().zip(&delta) {
                    *gb += d;
                }
            }
            let mut next = vec![0.0; l.cols];
            for r in 0..l.rows {
                let d = delta[r];
                if d != 0.0 {
                    for (n, &w) in next.iter_mut().zip(&l.weight[r * l.cols..(r + 1) * l.cols]) {
                        *n += d * w;
                    }
                }
            }
            delta = next;
        }
        if let Some(m) = &self.input_map {
            for (d, s) in delta.iter_mut().zip(&m.scale) {
                *d *= s;
            }
        }
        delta
    }

    /// Gradient of `<cotangent, net(x)>` with respect to all parameters.
    pub fn param_gradient(&self, x: &[f64], cotangent: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(x.len())?;
        if cotangent.len() != self.output_dim() {
            return Err(NetError::DimensionMismatch { expected: self.output_dim(), got: cotangent.len() });
        }
        let t = self.trace(x);
        let mut g = vec![0.0; self.num_params()];
        self.backward(&t, cotangent, Some(&mut g));
        Ok(g)
    }

    /// Jacobian `dy/dx`, one row per output.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, NetError> {
        self.check_input(x.len())?;
        let t = self.trace(x);
        let mut rows = Vec::with_capacity(self.output_dim());
        let mut e = vec![0.0; self.output_dim()];
        for k in 0..self.output_dim() {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[k] = 1.0;
            rows.push(self.backward(&t, &e, None));
        }
        Ok(rows)
    }

    /// Gradient of a single-output network.
    pub fn gradient_scalar(&self, x: &[f64]) -> Vec<f64> {
        let t = self.trace(x);
        self.backward(&t, &[1.0], None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn affine(w: f64, b: f64, act: Activation) -> FeedForwardNet {
        FeedForwardNet::from_layers(vec![Layer::from_rows(&[&[w]], &[b], act)]).unwrap()
    }

    #[test]
    fn single_identity_layer() {
        assert_eq!(affine(2.0, 1.0, Activation::Identity).forward(&[0.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn relu_of_negative_is_zero() {
        assert_eq!(affine(1.0, 0.0, Activation::Relu).forward(&[-3.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let y = affine(1.0, 0.0, Activation::Softplus).forward(&[0.0]).unwrap()[0];
        assert!((y - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = affine(1.0, 0.0, Activation::Identity);
        assert_eq!(net.forward(&[1.0, 2.0]), Err(NetError::DimensionMismatch { expected: 1, got: 2 }));
    }

    #[test]
    fn broken_chain_rejected() {
        let l1 = Layer::zeros(3, 2, Activation::Tanh);
        let l2 = Layer::zeros(1, 4, Activation::Identity);
        assert!(matches!(FeedForwardNet::from_layers(vec![l1, l2]), Err(NetError::BrokenChain { .. })));
    }

    #[test]
    fn affine_gradient_is_constant() {
        let net = affine(2.0, 1.0, Activation::Identity);
        for x in [-3.0, 0.0, 5.5] {
            assert_eq!(net.input_gradient(&[x]).unwrap(), vec![vec![2.0]]);
        }
    }

    #[test]
    fn tanh_identity_stack_has_unit_slope_at_origin() {
        let l1 = Layer::from_rows(&[&[1.0]], &[0.0], Activation::Tanh);
        let l2 = Layer::from_rows(&[&[1.0]], &[0.0], Activation::Identity);
        let net = FeedForwardNet::from_layers(vec![l1, l2]).unwrap();
        assert!((net.input_gradient(&[0.0]).unwrap()[0][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_layer_param_gradient() {
        let net = affine(0.7, -0.2, Activation::Identity);
        assert_eq!(net.param_gradient(&[1.0], &[1.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(net.param_gradient(&[1.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn relu_kink_derivative_is_zero() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn clamp_zeroes_gradient_when_saturated() {
        let net = affine(1.0, 0.0, Activation::Identity).with_output_clamp(vec![-1.0], vec![1.0]);
        assert_eq!(net.eval(&[3.0]), vec![1.0]);
        assert_eq!(net.input_gradient(&[3.0]).unwrap(), vec![vec![0.0]]);
        assert_eq!(net.input_gradient(&[0.5]).unwrap(), vec![vec![1.0]]);
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = FeedForwardNet::random(3, &[4, 5], 2, Activation::Tanh, Activation::Identity, &mut rng);
        let p = net.params();
        assert_eq!(p.len(), net.num_params());
        let doubled: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        net.set_params(&doubled);
        assert_eq!(net.params(), doubled);
    }

    #[test]
    fn input_map_matches_manual_shift() {
        let net = affine(2.0, 0.0, Activation::Identity).with_input_map(vec![1.0], vec![0.5]);
        assert_eq!(net.eval(&[3.0]), vec![2.0]);
        assert_eq!(net.input_gradient(&[3.0]).unwrap(), vec![vec![1.0]]);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = FeedForwardNet::random(2, &[7], 3, Activation::Softplus, Activation::Identity, &mut rng)
            .with_output_clamp(vec![-1.0; 3], vec![1.0; 3]);
        let s = serde_json::to_string(&net).unwrap();
        let back: FeedForwardNet = serde_json::from_str(&s).unwrap();
        assert_eq!(net, back);
    }
}
