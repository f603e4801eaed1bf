//! Nominal controllers providing imitation labels.

use crate::dynamics::{robot_body_map, RobotParams};
use crate::system::System;
use crate::topology::JointState;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotGains {
    pub k_target: f64,
    pub k_form: f64,
    pub k_obs: f64,
    pub k_agent: f64,
    pub d_obs: f64,
    pub d_agent: f64,
    pub k_cpl: f64,
    pub eps_cpl: f64,
    pub k_heading: f64,
    pub max_speed: f64,
    pub max_wheel: f64,
}

impl Default for RobotGains {
    fn default() -> Self {
        RobotGains {
            k_target: 0.8,
            k_form: 0.8,
            k_obs: 6.0,
            k_agent: 1.2,
            d_obs: 2.5,
            d_agent: 0.1,
            k_cpl: 0.1,
            eps_cpl: 0.1,
            k_heading: 0.8,
            max_speed: 1.0,
            max_wheel: 40.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlatoonGains {
    pub k_s: f64,
    pub k_v: f64,
    pub spacing: f64,
    pub u_max: f64,
}

impl Default for PlatoonGains {
    fn default() -> Self {
        PlatoonGains { k_s: 0.45, k_v: 0.5, spacing: 20.0, u_max: 5.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NominalController {
    #[default]
    None,
    Robot {
        #[serde(default)]
        gains: RobotGains,
        #[serde(default)]
        obstacles: Vec<Obstacle>,
    },
    Platoon {
        #[serde(default)]
        gains: PlatoonGains,
    },
    /// `u = -K (x - x*)` clipped to the control box.
    Linear { gain: Vec<Vec<f64>> },
}

/// Potential-field controller of robot `i`: attraction to its target and
/// formation offsets, repulsion from obstacles and close agents, and
/// compensation of the interaction drift, mapped to wheel speeds.
pub fn nominal_robot_controller(
    joint: &JointState,
    sys: &System,
    i: usize,
    params: &RobotParams,
    gains: &RobotGains,
    obstacles: &[Obstacle],
) -> [f64; 3] {
    let x = &joint.x[i];
    let target = &sys.agents[i].equilibrium;
    let (px, py) = (x[0], x[1]);
    let mut v = [gains.k_target * (target[0] - px), gains.k_target * (target[1] - py)];
    let ids = sys.topology.neighbor_set(joint, i).unwrap_or_default();
    for &j in &ids {
        let xj = &joint.x[j];
        let tj = &sys.agents[j].equilibrium;
        // formation error: actual offset minus desired offset
        v[0] += gains.k_form * ((xj[0] - px) - (tj[0] - target[0]));
        v[1] += gains.k_form * ((xj[1] - py) - (tj[1] - target[1]));
        let (dx, dy) = (px - xj[0], py - xj[1]);
        let d = (dx * dx + dy * dy).sqrt();
        v[0] -= gains.k_cpl * dx / (d + gains.eps_cpl);
        v[1] -= gains.k_cpl * dy / (d + gains.eps_cpl);
    }
    for (j, xj) in joint.x.iter().enumerate() {
        if j == i {
            continue;
        }
        let (dx, dy) = (px - xj[0], py - xj[1]);
        let d = (dx * dx + dy * dy).sqrt().max(1e-6);
        if d < gains.d_agent {
            let mag = gains.k_agent * (1.0 / d - 1.0 / gains.d_agent) / (d * d);
            v[0] += mag * dx / d;
            v[1] += mag * dy / d;
        }
    }
    for o in obstacles {
        let (dx, dy) = (px - o.center[0], py - o.center[1]);
        let dc = (dx * dx + dy * dy).sqrt().max(1e-6);
        let d = (dc - o.radius).max(1e-3);
        if d < gains.d_obs {
            let mag = gains.k_obs * (1.0 / d - 1.0 / gains.d_obs) / (d * d);
            v[0] += mag * dx / dc;
            v[1] += mag * dy / dc;
        }
    }
    let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if speed > gains.max_speed {
        v[0] *= gains.max_speed / speed;
        v[1] *= gains.max_speed / speed;
    }
    let omega = -gains.k_heading * (x[2] - target[2]);
    let Ok(body) = robot_body_map(params.wheel_radius, params.wheel_offset) else {
        return [0.0; 3];
    };
    let (s, c) = x[2].sin_cos();
    let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    let g = rot * body;
    let Some(ginv) = g.try_inverse() else { return [0.0; 3] };
    let u = ginv * Vector3::new(v[0], v[1], omega);
    let peak = u.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let k = if peak > gains.max_wheel { gains.max_wheel / peak } else { 1.0 };
    [u[0] * k, u[1] * k, u[2] * k]
}

/// `u = k_s (s - s*) + k_v (v_pred - v)`, clipped.
pub fn nominal_platoon_controller(x: &[f64], v_pred: f64, gains: &PlatoonGains) -> f64 {
    let u = gains.k_s * (x[0] - gains.spacing) + gains.k_v * (v_pred - x[1]);
    u.clamp(-gains.u_max, gains.u_max)
}

impl NominalController {
    /// Nominal control of every agent, or `None` when no controller is
    /// configured.
    pub fn controls(&self, sys: &System, joint: &JointState, exo: &[f64]) -> Option<Vec<Vec<f64>>> {
        match self {
            NominalController::None => None,
            NominalController::Robot { gains, obstacles } => Some(
                (0..sys.q())
                    .map(|i| match &sys.agents[i].dynamics {
                        crate::dynamics::DynamicsModel::Robot(p) => nominal_robot_controller(joint, sys, i, p, gains, obstacles).to_vec(),
                        _ => vec![0.0; sys.m(i)],
                    })
                    .collect(),
            ),
            NominalController::Platoon { gains } => Some(
                (0..sys.q())
                    .map(|i| {
                        let (xin, valid, _) = sys.network_input(joint, i, exo);
                        let v_pred = if valid >= 2 { xin[3] } else { exo.first().copied().unwrap_or(0.0) };
                        vec![nominal_platoon_controller(&joint.x[i], v_pred, gains)]
                    })
                    .collect(),
            ),
            NominalController::Linear { gain } => Some(
                (0..sys.q())
                    .map(|i| {
                        let a = &sys.agents[i];
                        gain.iter()
                            .enumerate()
                            .map(|(r, row)| {
                                let u: f64 = -row.iter().zip(&joint.x[i]).zip(&a.equilibrium).map(|((k, x), s)| k * (x - s)).sum::<f64>();
                                u.clamp(a.control[r].lo, a.control[r].hi)
                            })
                            .collect()
                    })
                    .collect(),
            ),
        }
    }
}
