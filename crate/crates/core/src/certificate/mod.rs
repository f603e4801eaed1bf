//! The cooperative reach-while-avoid certificate: per-agent Lyapunov,
//! barrier and controller networks with the coupling matrices, plus
//! pointwise residuals of the certificate conditions.

pub mod matrix;

pub use matrix::{
    check_hurwitz, check_metzler, comparison_step, solve_positive_p, MatrixError, PositiveWeights,
};

use crate::dynamics::SurrogateModel;
use crate::network::{interval, Activation, FeedForwardNet, Interval, IntervalBox};
use crate::system::System;
use crate::topology::JointState;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BUNDLE_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error("unsupported bundle format {0}")]
    Format(u32),
    #[error("certificate does not match the system: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("coupling matrix Λ is not Metzler and Hurwitz")]
    LambdaInvalid,
    #[error("coupling matrix Υ is not Metzler")]
    UpsilonInvalid,
    #[error("invalid slack constants: {0}")]
    Slacks(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LyapunovForm {
    /// `V(x) = ‖N(x) - N(x*)‖² + δ‖x - x*‖²`, positive definite by construction.
    Quadratic { delta: f64 },
    /// `V(x) = N(x)`; positivity must be verified.
    Raw,
}

/// Slack and weight constants of the training loss and certificate margins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Slacks {
    /// Barrier margin on the initial set.
    pub eps0: f64,
    /// ε₁..ε₅.
    pub eps: [f64; 5],
    /// σ₁..σ₃ loss weights.
    pub sigma: [f64; 3],
}

impl Default for Slacks {
    fn default() -> Self {
        Slacks { eps0: 0.05, eps: [0.01; 5], sigma: [1.0; 3] }
    }
}

impl Slacks {
    pub fn validate(&self) -> Result<(), CertificateError> {
        if !(self.eps0 > 0.0) || self.eps.iter().any(|&e| !(e > 0.0)) {
            return Err(CertificateError::Slacks("ε₀ and all slacks must be positive".into()));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(CertificateError::Slacks("loss weights must be positive".into()));
        }
        Ok(())
    }
}

/// Hidden layer widths and activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub lyapunov_hidden: Vec<usize>,
    pub lyapunov_features: usize,
    pub lyapunov_activation: Activation,
    pub barrier_hidden: Vec<usize>,
    pub barrier_activation: Activation,
    pub controller_hidden: Vec<usize>,
    pub controller_activation: Activation,
    pub lyapunov_form: LyapunovForm,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            lyapunov_hidden: vec![32, 32],
            lyapunov_features: 8,
            lyapunov_activation: Activation::Softplus,
            barrier_hidden: vec![32, 32],
            barrier_activation: Activation::Tanh,
            controller_hidden: vec![32, 32],
            controller_activation: Activation::Relu,
            lyapunov_form: LyapunovForm::Quadratic { delta: 1e-3 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoRwaCertificate {
    pub format: u32,
    pub lyapunov: Vec<FeedForwardNet>,
    pub barrier: Vec<FeedForwardNet>,
    pub controller: Vec<FeedForwardNet>,
    /// Per-agent equilibrium `x_i*` at which `V_i` vanishes.
    pub equilibria: Vec<Vec<f64>>,
    /// Row `i` holds `λ_i`: `V̇_i ≤ Σ_j Λ[i][j] V_j` over the active mask.
    pub lambda: Vec<Vec<f64>>,
    /// Row `i` holds `μ_i`: `ḣ_i ≥ Σ_j Υ[i][j] h_j` over the active mask.
    pub upsilon: Vec<Vec<f64>>,
    pub lyapunov_form: LyapunovForm,
    pub slacks: Slacks,
}

/// Which dynamics a residual is evaluated against.
#[derive(Clone, Copy)]
pub enum Dynamics<'a> {
    True(&'a System),
    Surrogate(&'a System, &'a SurrogateModel),
}

impl<'a> Dynamics<'a> {
    pub fn system(&self) -> &'a System {
        match *self {
            Dynamics::True(s) | Dynamics::Surrogate(s, _) => s,
        }
    }

    /// Closed-loop derivative of agent `i` for a network input and control.
    pub fn derivative(&self, i: usize, xin: &[f64], valid: usize, u: &[f64]) -> Vec<f64> {
        match *self {
            Dynamics::True(s) => {
                let xd = s.xbar_dim(i);
                s.agents[i].dynamics.derivative(&xin[..xd], valid, &xin[xd..], u)
            }
            Dynamics::Surrogate(_, m) => m.derivative(i, xin, valid, u),
        }
    }
}

/// Residual flavor: exact Lie derivative or one-step Euler difference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Derivative {
    Continuous,
    Discrete,
}

fn inverse_scale(domain: &IntervalBox) -> Vec<f64> {
    domain.0.iter().map(|iv| 1.0 / iv.radius().max(1e-6)).collect()
}

impl CoRwaCertificate {
    /// Randomly initialized certificate with diagonal coupling matrices.
    pub fn initialize<R: Rng + ?Sized>(sys: &System, arch: &Architecture, slacks: Slacks, rng: &mut R) -> Self {
        let q = sys.q();
        let n = sys.n();
        let mut lyapunov = Vec::with_capacity(q);
        let mut barrier = Vec::with_capacity(q);
        let mut controller = Vec::with_capacity(q);
        for i in 0..q {
            let a = &sys.agents[i];
            let (vout, vact) = match arch.lyapunov_form {
                LyapunovForm::Quadratic { .. } => (arch.lyapunov_features, Activation::Identity),
                LyapunovForm::Raw => (1, Activation::Softplus),
            };
            lyapunov.push(
                FeedForwardNet::random(n, &arch.lyapunov_hidden, vout, arch.lyapunov_activation, vact, rng)
                    .with_input_map(a.equilibrium.clone(), inverse_scale(&a.domain)),
            );
            let (off, sc) = sys.input_normalization(i);
            barrier.push(
                FeedForwardNet::random(sys.input_dim(i), &arch.barrier_hidden, 1, arch.barrier_activation, Activation::Identity, rng)
                    .with_input_map(off.clone(), sc.clone()),
            );
            controller.push(
                FeedForwardNet::random(sys.input_dim(i), &arch.controller_hidden, sys.m(i), arch.controller_activation, Activation::Identity, rng)
                    .with_input_map(off, sc)
                    .with_output_clamp(a.control.lower(), a.control.upper()),
            );
        }
        let diag = |v: f64| (0..q).map(|r| (0..q).map(|c| if r == c { v } else { 0.0 }).collect()).collect();
        CoRwaCertificate {
            format: BUNDLE_FORMAT,
            lyapunov,
            barrier,
            controller,
            equilibria: sys.agents.iter().map(|a| a.equilibrium.clone()).collect(),
            lambda: diag(-0.5),
            upsilon: diag(-1.0),
            lyapunov_form: arch.lyapunov_form,
            slacks,
        }
    }

    pub fn q(&self) -> usize {
        self.lyapunov.len()
    }

    pub fn lambda_matrix(&self) -> DMatrix<f64> {
        matrix::from_rows(&self.lambda)
    }

    pub fn upsilon_matrix(&self) -> DMatrix<f64> {
        matrix::from_rows(&self.upsilon)
    }

    /// Checks the structural invariants: Λ Metzler and Hurwitz, Υ Metzler,
    /// positive slacks.
    pub fn validate(&self) -> Result<(), CertificateError> {
        if self.format != BUNDLE_FORMAT {
            return Err(CertificateError::Format(self.format));
        }
        let q = self.q();
        if self.barrier.len() != q || self.controller.len() != q || self.lambda.len() != q || self.upsilon.len() != q {
            return Err(CertificateError::Mismatch("per-agent lists differ in length".into()));
        }
        let lam = self.lambda_matrix();
        if !check_metzler(&lam)? || !check_hurwitz(&lam)? {
            return Err(CertificateError::LambdaInvalid);
        }
        if !check_metzler(&self.upsilon_matrix())? {
            return Err(CertificateError::UpsilonInvalid);
        }
        self.slacks.validate()
    }

    pub fn check_against(&self, sys: &System) -> Result<(), CertificateError> {
        if self.q() != sys.q() {
            return Err(CertificateError::Mismatch(format!("{} agents in certificate, {} in system", self.q(), sys.q())));
        }
        for i in 0..sys.q() {
            if self.lyapunov[i].input_dim() != sys.n()
                || self.barrier[i].input_dim() != sys.input_dim(i)
                || self.controller[i].input_dim() != sys.input_dim(i)
                || self.controller[i].output_dim() != sys.m(i)
            {
                return Err(CertificateError::Mismatch(format!("agent {i}: network dimensions")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, CertificateError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, CertificateError> {
        let c: CoRwaCertificate = serde_json::from_str(s)?;
        if c.format != BUNDLE_FORMAT {
            return Err(CertificateError::Format(c.format));
        }
        Ok(c)
    }

    // ---- Lyapunov functions ----

    pub fn lyapunov_value(&self, i: usize, x: &[f64]) -> f64 {
        let net = &self.lyapunov[i];
        match self.lyapunov_form {
            LyapunovForm::Raw => net.eval_scalar(x),
            LyapunovForm::Quadratic { delta } => {
                let xs = &self.equilibria[i];
                let a = net.eval(x);
                let b = net.eval(xs);
                let feat: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum();
                let quad: f64 = x.iter().zip(xs).map(|(p, q)| (p - q).powi(2)).sum();
                feat + delta * quad
            }
        }
    }

    /// Value and input gradient of `V_i`.
    pub fn lyapunov_gradient(&self, i: usize, x: &[f64]) -> (f64, Vec<f64>) {
        self.lyapunov_backward(i, x, 1.0, None)
    }

    /// Value of `V_i(x)`; accumulates `cot · ∂V/∂θ` into `grad` when given
    /// and returns `cot · ∂V/∂x`.
    pub fn lyapunov_backward(&self, i: usize, x: &[f64], cot: f64, grad: Option<&mut [f64]>) -> (f64, Vec<f64>) {
        let net = &self.lyapunov[i];
        match self.lyapunov_form {
            LyapunovForm::Raw => {
                let t = net.trace(x);
                let gx = net.backward(&t, &[cot], grad);
                (t.output[0], gx)
            }
            LyapunovForm::Quadratic { delta } => {
                let xs = &self.equilibria[i];
                let ta = net.trace(x);
                let tb = net.trace(xs);
                let d: Vec<f64> = ta.output.iter().zip(&tb.output).map(|(p, q)| p - q).collect();
                let value = d.iter().map(|v| v * v).sum::<f64>()
                    + delta * x.iter().zip(xs).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
                let c: Vec<f64> = d.iter().map(|v| 2.0 * cot * v).collect();
                let mut gx = match grad {
                    Some(g) => {
                        let gx = net.backward(&ta, &c, Some(g));
                        let neg: Vec<f64> = c.iter().map(|v| -v).collect();
                        net.backward(&tb, &neg, Some(g));
                        gx
                    }
                    None => net.backward(&ta, &c, None),
                };
                for ((g, p), q) in gx.iter_mut().zip(x).zip(xs) {
                    *g += 2.0 * cot * delta * (p - q);
                }
                (value, gx)
            }
        }
    }

    pub fn lyapunov_interval(&self, i: usize, bx: &[Interval]) -> Interval {
        let net = &self.lyapunov[i];
        match self.lyapunov_form {
            LyapunovForm::Raw => net.centered_bound(bx)[0],
            LyapunovForm::Quadratic { delta } => {
                let xs = &self.equilibria[i];
                let b = net.eval(xs);
                let a = net.centered_bound(bx);
                let feat = a.iter().zip(&b).fold(Interval::ZERO, |acc, (iv, &v)| acc + (*iv - v).square());
                let quad = bx.iter().zip(xs).fold(Interval::ZERO, |acc, (iv, &v)| acc + (*iv - v).square());
                let v = feat + quad.scale(delta);
                Interval::new(v.lo.max(0.0), v.hi)
            }
        }
    }

    /// Enclosures of `V_i` and `∇V_i` over a box.
    pub fn lyapunov_interval_gradient(&self, i: usize, bx: &[Interval]) -> (Interval, Vec<Interval>) {
        let net = &self.lyapunov[i];
        let (out, jac) = net.interval_jacobian(bx);
        match self.lyapunov_form {
            LyapunovForm::Raw => (out[0], jac[0].clone()),
            LyapunovForm::Quadratic { delta } => {
                let xs = &self.equilibria[i];
                let b = net.eval(xs);
                let d: Vec<Interval> = out.iter().zip(&b).map(|(iv, &v)| *iv - v).collect();
                let value = d.iter().fold(Interval::ZERO, |acc, iv| acc + iv.square())
                    + bx.iter().zip(xs).fold(Interval::ZERO, |acc, (iv, &v)| acc + (*iv - v).square()).scale(delta);
                let n = bx.len();
                let grad = (0..n)
                    .map(|c| {
                        let mut s = Interval::ZERO;
                        for (k, dk) in d.iter().enumerate() {
                            s = s + jac[k][c] * *dk;
                        }
                        s.scale(2.0) + (bx[c] - xs[c]).scale(2.0 * delta)
                    })
                    .collect();
                (Interval::new(value.lo.max(0.0), value.hi), grad)
            }
        }
    }

    // ---- barriers and controllers ----

    pub fn barrier_value(&self, i: usize, xin: &[f64]) -> f64 {
        self.barrier[i].eval_scalar(xin)
    }

    pub fn control(&self, i: usize, xin: &[f64]) -> Vec<f64> {
        self.controller[i].eval(xin)
    }

    /// `V(x)` stacked over agents.
    pub fn lyapunov_vector(&self, joint: &JointState) -> Vec<f64> {
        (0..self.q()).map(|i| self.lyapunov_value(i, &joint.x[i])).collect()
    }

    /// `h(x)` stacked over agents (each on its own extended state).
    pub fn barrier_vector(&self, sys: &System, joint: &JointState, exo: &[f64]) -> Vec<f64> {
        (0..self.q())
            .map(|i| {
                let (xin, _, _) = sys.network_input(joint, i, exo);
                self.barrier_value(i, &xin)
            })
            .collect()
    }

    /// `V_p = Σ p_i V_i(x_i)`.
    pub fn scalar_lyapunov(&self, p: &[f64], joint: &JointState) -> f64 {
        p.iter().zip(self.lyapunov_vector(joint)).map(|(a, b)| a * b).sum()
    }

    fn closed_loop(&self, dynamics: Dynamics, joint: &JointState, exo: &[f64], i: usize) -> (Vec<f64>, usize, Vec<usize>, Vec<f64>) {
        let sys = dynamics.system();
        let (xin, valid, ids) = sys.network_input(joint, i, exo);
        let u = self.control(i, &xin);
        let d = dynamics.derivative(i, &xin, valid, &u);
        (xin, valid, ids, d)
    }

    /// Lyapunov residual: `V̇_i - (λ_i ∘ A_i)ᵀ V`; nonpositive when the
    /// condition holds at this state.
    pub fn clf_residual(&self, dynamics: Dynamics, joint: &JointState, exo: &[f64], i: usize, mode: Derivative) -> f64 {
        let sys = dynamics.system();
        let (_, _, ids, d) = self.closed_loop(dynamics, joint, exo, i);
        let xi = &joint.x[i];
        let rate = match mode {
            Derivative::Continuous => {
                let (_, g) = self.lyapunov_gradient(i, xi);
                g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>()
            }
            Derivative::Discrete => {
                let t = sys.period;
                let next: Vec<f64> = xi.iter().zip(&d).map(|(x, dx)| x + t * dx).collect();
                (self.lyapunov_value(i, &next) - self.lyapunov_value(i, xi)) / t
            }
        };
        let mut coupling = self.lambda[i][i] * self.lyapunov_value(i, xi);
        for &j in &ids {
            coupling += self.lambda[i][j] * self.lyapunov_value(j, &joint.x[j]);
        }
        rate - coupling
    }

    /// Barrier residual: `ḣ_i - (μ_i ∘ A_i)ᵀ h`; nonnegative when the
    /// condition holds. Neighbor rows move with their own closed loops,
    /// padding rows are fixed and exogenous inputs move at `exo_rate`.
    pub fn cbf_residual(
        &self,
        dynamics: Dynamics,
        joint: &JointState,
        exo: &[f64],
        exo_rate: &[f64],
        i: usize,
        mode: Derivative,
    ) -> f64 {
        let sys = dynamics.system();
        let n = sys.n();
        let (xin, _, ids, di) = self.closed_loop(dynamics, joint, exo, i);
        let mut rate_vec = vec![0.0; xin.len()];
        rate_vec[..n].copy_from_slice(&di);
        for (slot, &j) in ids.iter().enumerate() {
            let (_, _, _, dj) = self.closed_loop(dynamics, joint, exo, j);
            rate_vec[(slot + 1) * n..(slot + 2) * n].copy_from_slice(&dj);
        }
        let xd = sys.xbar_dim(i);
        rate_vec[xd..].copy_from_slice(exo_rate);
        let rate = match mode {
            Derivative::Continuous => {
                let g = self.barrier[i].gradient_scalar(&xin);
                g.iter().zip(&rate_vec).map(|(a, b)| a * b).sum::<f64>()
            }
            Derivative::Discrete => {
                let t = sys.period;
                let next: Vec<f64> = xin.iter().zip(&rate_vec).map(|(x, dx)| x + t * dx).collect();
                (self.barrier_value(i, &next) - self.barrier_value(i, &xin)) / t
            }
        };
        let mut coupling = self.upsilon[i][i] * self.barrier_value(i, &xin);
        for &j in &ids {
            let (xj, _, _) = sys.network_input(joint, j, exo);
            coupling += self.upsilon[i][j] * self.barrier_value(j, &xj);
        }
        rate - coupling
    }
}

/// Enclosure of `‖v‖` for an interval vector.
pub fn interval_norm(v: &[Interval]) -> Interval {
    interval::norm(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DynamicsModel, LinearParams};
    use crate::network::Layer;
    use crate::testutil::{scalar_certificate, scalar_system};
    use rand::SeedableRng;

    #[test]
    fn clf_residual_scalar_examples() {
        let sys = scalar_system(0.01);
        let c = scalar_certificate(-2.0, -1.0);
        for x in [-0.9, -0.3, 0.0, 0.4, 1.0] {
            let j = JointState::new(vec![vec![x]]);
            let r = c.clf_residual(Dynamics::True(&sys), &j, &[], 0, Derivative::Continuous);
            assert!(r.abs() < 1e-14, "{r}");
        }
        let c = scalar_certificate(-1.0, -1.0);
        for x in [-0.9, 0.4, 1.0] {
            let j = JointState::new(vec![vec![x]]);
            let r = c.clf_residual(Dynamics::True(&sys), &j, &[], 0, Derivative::Continuous);
            assert!((r - (-0.5 * x * x)).abs() < 1e-14);
        }
        let j = JointState::new(vec![vec![0.0]]);
        assert_eq!(c.clf_residual(Dynamics::True(&sys), &j, &[], 0, Derivative::Continuous), 0.0);
        assert_eq!(c.clf_residual(Dynamics::True(&sys), &j, &[], 0, Derivative::Discrete), 0.0);
    }

    #[test]
    fn cbf_residual_scalar_examples() {
        let sys = scalar_system(0.01);
        let c = scalar_certificate(-1.0, -1.0);
        for x in [-0.7, 0.2, 0.9] {
            let j = JointState::new(vec![vec![x]]);
            let r = c.cbf_residual(Dynamics::True(&sys), &j, &[], &[], 0, Derivative::Continuous);
            assert!(r.abs() < 1e-14);
        }
        let c = scalar_certificate(-1.0, -2.0);
        for x in [0.0, 0.2, 0.9] {
            let j = JointState::new(vec![vec![x]]);
            let r = c.cbf_residual(Dynamics::True(&sys), &j, &[], &[], 0, Derivative::Continuous);
            assert!((r - x).abs() < 1e-14 && r >= 0.0);
        }
    }

    #[test]
    fn cbf_residual_constant_barrier_zero_dynamics() {
        let mut sys = scalar_system(0.01);
        sys.agents[0].dynamics = DynamicsModel::Linear(LinearParams { a: vec![vec![0.0]], b: vec![vec![0.0]], offset: vec![] });
        let mut c = scalar_certificate(-1.0, 0.0);
        c.barrier = vec![FeedForwardNet::from_layers(vec![Layer::from_rows(&[&[0.0]], &[1.0], Activation::Identity)]).unwrap()];
        let j = JointState::new(vec![vec![0.3]]);
        assert_eq!(c.cbf_residual(Dynamics::True(&sys), &j, &[], &[], 0, Derivative::Continuous), 0.0);
    }

    #[test]
    fn scalar_lyapunov_is_weighted_sum() {
        let c = scalar_certificate(-1.0, -1.0);
        let j = JointState::new(vec![vec![2.0]]);
        assert!((c.scalar_lyapunov(&[3.0], &j) - 6.0).abs() < 1e-12);
        assert_eq!(c.scalar_lyapunov(&[1.0], &JointState::new(vec![vec![0.0]])), 0.0);
    }

    #[test]
    fn quadratic_form_is_positive_definite() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let sys = scalar_system(0.01);
        let c = CoRwaCertificate::initialize(&sys, &Architecture::default(), Slacks::default(), &mut rng);
        assert_eq!(c.lyapunov_value(0, &[0.0]), 0.0);
        for x in [-1.0, -0.3, 1e-4, 0.7] {
            assert!(c.lyapunov_value(0, &[x]) > 0.0);
        }
    }

    #[test]
    fn lyapunov_gradient_and_interval_consistent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let sys = scalar_system(0.01);
        let c = CoRwaCertificate::initialize(&sys, &Architecture::default(), Slacks::default(), &mut rng);
        let bx = [Interval::new(0.2, 0.5)];
        let (vi, gi) = c.lyapunov_interval_gradient(0, &bx);
        let vb = c.lyapunov_interval(0, &bx);
        for k in 0..=20 {
            let x = 0.2 + 0.3 * k as f64 / 20.0;
            let (v, g) = c.lyapunov_gradient(0, &[x]);
            assert!(vi.contains(v) && vb.contains(v) && gi[0].contains(g[0]));
            let h = 1e-6;
            let fd = (c.lyapunov_value(0, &[x + h]) - c.lyapunov_value(0, &[x - h])) / (2.0 * h);
            assert!((fd - g[0]).abs() < 1e-6 * (1.0 + g[0].abs()));
        }
    }

    #[test]
    fn bundle_round_trip_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let sys = scalar_system(0.01);
        let c = CoRwaCertificate::initialize(&sys, &Architecture::default(), Slacks::default(), &mut rng);
        let s = c.to_json().unwrap();
        assert!(s.contains("\"format\": 1"));
        let back = CoRwaCertificate::from_json(&s).unwrap();
        assert_eq!(c, back);
        c.validate().unwrap();
        c.check_against(&sys).unwrap();
    }

    #[test]
    fn wrong_format_rejected() {
        let c = scalar_certificate(-1.0, -1.0);
        let s = c.to_json().unwrap().replace("\"format\": 1", "\"format\": 7");
        assert!(matches!(CoRwaCertificate::from_json(&s), Err(CertificateError::Format(7))));
    }
}
