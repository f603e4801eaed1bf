//! Benchmark control-affine dynamics `ẋ_i = f_i(x̄_i) + g_i(x̄_i) u_i`, the
//! forward Euler step, neural surrogates and Lipschitz budgets.

pub mod lipschitz;
mod surrogate;

pub use lipschitz::{aggregate_rate, compute_lipschitz_budget, LipschitzBudget};
pub use surrogate::{fit_surrogate, SurrogateConfig, SurrogateModel};

use crate::network::{Interval, IntervalBox};
use crate::topology::{JointState, SystemTopology, TopologyError};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("non-finite derivative for agent {agent}")]
    NonFinite { agent: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("surrogate training diverged with final loss {loss}")]
    Divergence { loss: f64 },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotParams {
    pub wheel_radius: f64,
    pub wheel_offset: f64,
    /// Gain of the pairwise interaction drift.
    pub drift_gain: f64,
    pub drift_eps: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams { wheel_radius: 0.02, wheel_offset: 0.2, drift_gain: 0.1, drift_eps: 0.1 }
    }
}

/// `ẋ = A x + d + B u` on the agent's own state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub offset: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DynamicsModel {
    /// Omnidirectional three-wheel robot, state (x, y, heading).
    Robot(RobotParams),
    /// Platoon follower, state (spacing, velocity); the predecessor is the
    /// first neighbor row, or the exogenous leader velocity when absent.
    Platoon,
    Linear(LinearParams),
}

/// Analytic bounds of the drift and input map over a box.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DynamicsBounds {
    pub lip_f: f64,
    pub lip_g: f64,
    pub sup_f: f64,
    pub sup_g: f64,
}

/// Wheel geometry matrix of the three-wheel base.
pub fn wheel_geometry(l: f64) -> Matrix3<f64> {
    let c = (std::f64::consts::PI / 6.0).cos();
    let s = (std::f64::consts::PI / 6.0).sin();
    Matrix3::new(0.0, c, -c, -1.0, s, s, l, l, l)
}

/// `(Jᵀ)⁻¹ R` with `R = r I`.
pub fn robot_body_map(r: f64, l: f64) -> Result<Matrix3<f64>, DynamicsError> {
    let jt = wheel_geometry(l).transpose();
    let inv = jt.try_inverse().ok_or_else(|| DynamicsError::Config("wheel geometry is singular".into()))?;
    Ok(inv * r)
}

/// `g_i = Rot(θ) (Jᵀ)⁻¹ R`, row-major 3×3.
pub fn robot_input_matrix(x: &[f64], r: f64, l: f64) -> Result<[[f64; 3]; 3], DynamicsError> {
    let body = robot_body_map(r, l)?;
    let (s, c) = x[2].sin_cos();
    let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    let g = rot * body;
    Ok([[g[(0, 0)], g[(0, 1)], g[(0, 2)]], [g[(1, 0)], g[(1, 1)], g[(1, 2)]], [g[(2, 0)], g[(2, 1)], g[(2, 2)]]])
}

/// Pairwise interaction drift of robot `i` over its current neighbors.
pub fn robot_drift(joint: &JointState, topo: &SystemTopology, i: usize, gain: f64, eps: f64) -> Result<[f64; 3], DynamicsError> {
    let ext = topo.extended_state(joint, i)?;
    let flat = ext.flatten();
    let d = robot_drift_rows(&flat, 3, ext.valid_rows, gain, eps);
    Ok([d[0], d[1], d[2]])
}

fn robot_drift_rows(xbar: &[f64], n: usize, valid: usize, k: f64, eps: f64) -> Vec<f64> {
    let mut f = vec![0.0; n];
    let (xi, yi) = (xbar[0], xbar[1]);
    for r in 1..valid {
        let (xj, yj) = (xbar[r * n], xbar[r * n + 1]);
        let d = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
        f[0] += k * (xi - xj) / (d + eps);
        f[1] += k * (yi - yj) / (d + eps);
    }
    f
}

/// Platoon follower derivative `(v_pred - v, u)`.
pub fn platoon_derivative(x: &[f64], v_pred: f64, u: f64) -> [f64; 2] {
    [v_pred - x[1], u]
}

fn spectral(m: &[Vec<f64>]) -> f64 {
    if m.is_empty() || m[0].is_empty() {
        return 0.0;
    }
    let flat: Vec<f64> = m.iter().flatten().copied().collect();
    crate::network::spectral_norm(&flat, m.len(), m[0].len())
}

impl DynamicsModel {
    pub fn tag(&self) -> &'static str {
        match self {
            DynamicsModel::Robot(_) => "robot",
            DynamicsModel::Platoon => "platoon",
            DynamicsModel::Linear(_) => "linear",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            DynamicsModel::Robot(_) => 3,
            DynamicsModel::Platoon => 2,
            DynamicsModel::Linear(p) => p.a.len(),
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            DynamicsModel::Robot(_) => 3,
            DynamicsModel::Platoon => 1,
            DynamicsModel::Linear(p) => p.b.first().map_or(0, |r| r.len()),
        }
    }

    /// Stable fingerprint of the parameters (serialized form).
    pub fn param_hash(&self) -> String {
        serde_json::to_string(self).expect("dynamics serialize")
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        match self {
            DynamicsModel::Robot(p) => {
                if !(p.wheel_radius > 0.0 && p.wheel_offset > 0.0 && p.drift_eps > 0.0 && p.drift_gain >= 0.0) {
                    return Err(DynamicsError::Config("robot parameters must be positive".into()));
                }
                robot_body_map(p.wheel_radius, p.wheel_offset).map(|_| ())
            }
            DynamicsModel::Platoon => Ok(()),
            DynamicsModel::Linear(p) => {
                let n = p.a.len();
                if n == 0 || p.a.iter().any(|r| r.len() != n) || p.b.len() != n {
                    return Err(DynamicsError::Config("linear model needs square A and B with matching rows".into()));
                }
                let m = p.b[0].len();
                if p.b.iter().any(|r| r.len() != m) || (!p.offset.is_empty() && p.offset.len() != n) {
                    return Err(DynamicsError::Config("ragged B or offset of wrong length".into()));
                }
                Ok(())
            }
        }
    }

    /// Drift over a flattened extended state with `valid` non-padding rows.
    pub fn drift(&self, xbar: &[f64], valid: usize, exo: &[f64]) -> Vec<f64> {
        match self {
            DynamicsModel::Robot(p) => robot_drift_rows(xbar, 3, valid, p.drift_gain, p.drift_eps),
            DynamicsModel::Platoon => {
                let v_pred = if valid >= 2 { xbar[3] } else { exo.first().copied().unwrap_or(0.0) };
                vec![v_pred - xbar[1], 0.0]
            }
            DynamicsModel::Linear(p) => {
                let n = p.a.len();
                (0..n)
                    .map(|r| {
                        let s: f64 = p.a[r].iter().zip(&xbar[..n]).map(|(a, x)| a * x).sum();
                        s + p.offset.get(r).copied().unwrap_or(0.0)
                    })
                    .collect()
            }
        }
    }

    /// Input matrix, row-major `n × m`.
    pub fn input_matrix(&self, xbar: &[f64], _valid: usize, _exo: &[f64]) -> Vec<f64> {
        match self {
            DynamicsModel::Robot(p) => {
                let g = robot_input_matrix(&xbar[..3], p.wheel_radius, p.wheel_offset).expect("validated geometry");
                g.iter().flatten().copied().collect()
            }
            DynamicsModel::Platoon => vec![0.0, 1.0],
            DynamicsModel::Linear(p) => p.b.iter().flatten().copied().collect(),
        }
    }

    /// `f + g u`.
    pub fn derivative(&self, xbar: &[f64], valid: usize, exo: &[f64], u: &[f64]) -> Vec<f64> {
        let mut f = self.drift(xbar, valid, exo);
        let g = self.input_matrix(xbar, valid, exo);
        let m = u.len();
        for (r, fr) in f.iter_mut().enumerate() {
            for (c, uc) in u.iter().enumerate() {
                *fr += g[r * m + c] * uc;
            }
        }
        f
    }

    /// Enclosures of the drift and the row-major input matrix over a box.
    pub fn interval_parts(&self, xbar: &[Interval], valid: usize, exo: &[Interval]) -> (Vec<Interval>, Vec<Interval>) {
        match self {
            DynamicsModel::Robot(p) => {
                let mut f = vec![Interval::ZERO; 3];
                for r in 1..valid {
                    let dx = xbar[0] - xbar[r * 3];
                    let dy = xbar[1] - xbar[r * 3 + 1];
                    let inv = ((dx.square() + dy.square()).sqrt() + p.drift_eps).recip();
                    f[0] = f[0] + (dx * inv).scale(p.drift_gain);
                    f[1] = f[1] + (dy * inv).scale(p.drift_gain);
                }
                let body = robot_body_map(p.wheel_radius, p.wheel_offset).expect("validated geometry");
                let (c, s) = (xbar[2].cos(), xbar[2].sin());
                let mut g = Vec::with_capacity(9);
                for col in 0..3 {
                    g.push(c.scale(body[(0, col)]) - s.scale(body[(1, col)]));
                }
                for col in 0..3 {
                    g.push(s.scale(body[(0, col)]) + c.scale(body[(1, col)]));
                }
                for col in 0..3 {
                    g.push(Interval::point(body[(2, col)]));
                }
                (f, g)
            }
            DynamicsModel::Platoon => {
                let v_pred = if valid >= 2 { xbar[3] } else { exo.first().copied().unwrap_or(Interval::ZERO) };
                (vec![v_pred - xbar[1], Interval::ZERO], vec![Interval::ZERO, Interval::point(1.0)])
            }
            DynamicsModel::Linear(lp) => {
                let n = lp.a.len();
                let f = (0..n)
                    .map(|r| {
                        lp.a[r].iter().enumerate().fold(Interval::point(lp.offset.get(r).copied().unwrap_or(0.0)), |acc, (c, &a)| acc + xbar[c].scale(a))
                    })
                    .collect();
                (f, lp.b.iter().flatten().map(|&v| Interval::point(v)).collect())
            }
        }
    }

    /// Lipschitz and magnitude bounds of `f` and `g` (Euclidean / operator
    /// norms) over an extended-state box with a fixed number of valid rows.
    pub fn bounds(&self, xbar: &IntervalBox, valid: usize, exo: &IntervalBox) -> DynamicsBounds {
        let n = self.state_dim();
        match self {
            DynamicsModel::Robot(p) => {
                let body = robot_body_map(p.wheel_radius, p.wheel_offset).expect("validated geometry");
                let g_norm = body.singular_values().max();
                let mut lips = Vec::new();
                let mut sup_f = 0.0;
                for r in 1..valid {
                    let dx = xbar[0] - xbar[r * n];
                    let dy = xbar[1] - xbar[r * n + 1];
                    let d = (dx.square() + dy.square()).sqrt();
                    // the per-pair Jacobian has norm k / (d + ε) at most
                    lips.push(p.drift_gain / (d.lo + p.drift_eps));
                    sup_f += p.drift_gain * d.hi / (d.hi + p.drift_eps);
                }
                let total: f64 = lips.iter().sum();
                let lip_f = (total * total + lips.iter().map(|l| l * l).sum::<f64>()).sqrt();
                DynamicsBounds { lip_f, lip_g: g_norm, sup_f, sup_g: g_norm }
            }
            DynamicsModel::Platoon => {
                let v_pred = if valid >= 2 { xbar[3] } else { exo.0.first().copied().unwrap_or(Interval::ZERO) };
                let sf = (v_pred - xbar[1]).mag();
                DynamicsBounds { lip_f: 2f64.sqrt(), lip_g: 0.0, sup_f: sf, sup_g: 1.0 }
            }
            DynamicsModel::Linear(lp) => {
                let f: Vec<Interval> = (0..n)
                    .map(|r| {
                        lp.a[r].iter().enumerate().fold(Interval::point(lp.offset.get(r).copied().unwrap_or(0.0)), |acc, (c, &a)| acc + xbar[c].scale(a))
                    })
                    .collect();
                let sup_f = f.iter().map(|iv| iv.mag().powi(2)).sum::<f64>().sqrt();
                DynamicsBounds { lip_f: spectral(&lp.a), lip_g: 0.0, sup_f, sup_g: spectral(&lp.b) }
            }
        }
    }
}

/// Control clipping record for one agent in one step.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipEvent {
    pub agent: usize,
    pub component: usize,
    pub requested: f64,
    pub applied: f64,
}

/// Forward Euler step of the true dynamics with masks frozen at the current
/// time. Controls outside the bounds are clipped and reported.
pub fn euler_step(
    models: &[DynamicsModel],
    topo: &SystemTopology,
    joint: &JointState,
    controls: &[Vec<f64>],
    control_bounds: &[IntervalBox],
    exo: &[f64],
    t: f64,
) -> Result<(JointState, Vec<ClipEvent>), DynamicsError> {
    if !(t > 0.0) {
        return Err(DynamicsError::Config("step size must be positive".into()));
    }
    if controls.len() != topo.q || models.len() != topo.q {
        return Err(DynamicsError::Dimension("one control and one model per agent required".into()));
    }
    let mut events = Vec::new();
    let mut next = Vec::with_capacity(topo.q);
    for i in 0..topo.q {
        let ext = topo.extended_state(joint, i)?;
        let mut u = controls[i].clone();
        for (c, uc) in u.iter_mut().enumerate() {
            let b = control_bounds[i][c];
            let clipped = uc.clamp(b.lo, b.hi);
            if clipped != *uc {
                events.push(ClipEvent { agent: i, component: c, requested: *uc, applied: clipped });
                *uc = clipped;
            }
        }
        let d = models[i].derivative(&ext.flatten(), ext.valid_rows, exo, &u);
        if d.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite { agent: i });
        }
        next.push(joint.x[i].iter().zip(&d).map(|(x, dx)| x + t * dx).collect());
    }
    Ok((JointState { x: next, time: joint.time + t }, events))
}
