use super::{ConditionTag, VerificationQuery, Verifier, Witness};
use crate::certificate::{Derivative, Dynamics};
use crate::system::System;
use crate::topology::JointState;

/// Concrete evaluation of a condition at one network input.
#[derive(Clone, Debug, PartialEq)]
pub enum ConcreteCheck {
    /// The point is outside the condition's region or does not realize
    /// the query's neighbor pattern.
    NotApplicable,
    Holds(f64),
    Violated(Witness),
}

/// A joint state realizing `xin` as agent `i`'s network input with the
/// given neighbor selection. Unlisted agents are placed at the point of
/// their domain farthest from agent `i`. Returns the joint state and the
/// exogenous input.
pub fn realize_joint(sys: &System, i: usize, pattern: &[usize], xin: &[f64]) -> Option<(JointState, Vec<f64>)> {
    if !sys.point_realizes(i, pattern, xin) {
        return None;
    }
    let n = sys.n();
    let own = &xin[..n];
    let pos = &sys.topology.position_slice;
    let mut x: Vec<Vec<f64>> = sys
        .agents
        .iter()
        .map(|a| {
            (0..n)
                .map(|k| {
                    let iv = a.domain[k];
                    if pos.contains(&k) {
                        if (iv.lo - own[k]).abs() > (iv.hi - own[k]).abs() {
                            iv.lo
                        } else {
                            iv.hi
                        }
                    } else {
                        iv.mid()
                    }
                })
                .collect()
        })
        .collect();
    x[i] = own.to_vec();
    for (slot, &j) in pattern.iter().enumerate() {
        x[j] = xin[(slot + 1) * n..(slot + 2) * n].to_vec();
    }
    let joint = JointState::new(x);
    let ids = sys.topology.neighbor_set(&joint, i).ok()?;
    (ids == pattern).then(|| (joint, xin[sys.xbar_dim(i)..].to_vec()))
}

/// Residual of the queried condition at a concrete input, using the same
/// surrogate dynamics and margins as the interval bounds.
pub fn concrete_residual(v: &Verifier, q: &VerificationQuery, xin: &[f64]) -> ConcreteCheck {
    let sys = v.sys;
    let cert = v.cert;
    let i = q.agent;
    if q.tag == ConditionTag::LyapPositive {
        let r = -cert.lyapunov_value(i, xin);
        return finish(q, r, xin, JointState::new(vec![]), vec![]);
    }
    let Some((joint, exo)) = realize_joint(sys, i, &q.pattern, xin) else {
        return ConcreteCheck::NotApplicable;
    };
    let valid = q.pattern.len() + 1;
    let geo = sys.geometry(i);
    let agent = &sys.agents[i];
    let dynamics = Dynamics::Surrogate(sys, v.surrogate);
    let r = match q.tag {
        ConditionTag::LyapPositive => unreachable!(),
        ConditionTag::BarrierSafePositive => {
            if !agent.initial.contains(xin, valid, &geo) {
                return ConcreteCheck::NotApplicable;
            }
            cert.slacks.eps0 - cert.barrier_value(i, xin)
        }
        ConditionTag::BarrierUnsafeNegative => {
            if !sys.in_unsafe(i, xin, valid) {
                return ConcreteCheck::NotApplicable;
            }
            cert.barrier_value(i, xin)
        }
        ConditionTag::LyapDecrement => {
            if agent.goal.contains(xin, valid, &geo) {
                return ConcreteCheck::NotApplicable;
            }
            cert.clf_residual(dynamics, &joint, &exo, i, Derivative::Discrete) + q.margins.e_v
        }
        ConditionTag::BarrierIncrement => {
            if cert.barrier_value(i, xin) < 0.0 {
                return ConcreteCheck::NotApplicable;
            }
            // the exogenous rate that pushes h down the most
            let xd = sys.xbar_dim(i);
            let grad = cert.barrier[i].gradient_scalar(xin);
            let rate: Vec<f64> = sys.exo.rate.0.iter().enumerate().map(|(k, iv)| if grad[xd + k] > 0.0 { iv.lo } else { iv.hi }).collect();
            -(cert.cbf_residual(dynamics, &joint, &exo, &rate, i, Derivative::Discrete) - q.margins.e_h)
        }
    };
    finish(q, r, xin, joint, exo)
}

fn finish(q: &VerificationQuery, r: f64, xin: &[f64], joint: JointState, exo: Vec<f64>) -> ConcreteCheck {
    if q.tag.holds(r) {
        ConcreteCheck::Holds(r)
    } else {
        ConcreteCheck::Violated(Witness { input: xin.to_vec(), joint: joint.x, exo, residual: r })
    }
}
