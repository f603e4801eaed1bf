//! Closed-loop rollouts and the metrics reported for them.

use crate::certificate::CoRwaCertificate;
use crate::dynamics::{euler_step, ClipEvent, DynamicsError, DynamicsModel};
use crate::network::IntervalBox;
use crate::scenario::LeaderProfile;
use crate::system::System;
use crate::topology::JointState;
use crate::training::{NominalController, Obstacle};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("certificate does not match the scenario: {0}")]
    Dimension(String),
    #[error("state became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Source of the applied controls.
#[derive(Clone, Copy)]
pub enum Policy<'a> {
    Certificate(&'a CoRwaCertificate),
    Nominal(&'a NominalController),
    Zero,
}

impl Policy<'_> {
    pub fn controls(&self, sys: &System, joint: &JointState, exo: &[f64]) -> Vec<Vec<f64>> {
        match self {
            Policy::Certificate(cert) => (0..sys.q())
                .map(|i| {
                    let (xin, _, _) = sys.network_input(joint, i, exo);
                    cert.control(i, &xin)
                })
                .collect(),
            Policy::Nominal(n) => n.controls(sys, joint, exo).unwrap_or_else(|| zero_controls(sys)),
            Policy::Zero => zero_controls(sys),
        }
    }
}

fn zero_controls(sys: &System) -> Vec<Vec<f64>> {
    (0..sys.q()).map(|i| vec![0.0; sys.m(i)]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Root mean square velocity tracking error.
    pub tracking_rmse: f64,
    /// Mean time to collision over closing pairs; `None` when no pair ever
    /// closes.
    pub average_ttc: Option<f64>,
    pub min_obstacle_distance: Option<f64>,
    /// Minimum surface distance to each obstacle, in configuration order.
    pub obstacle_distances: Vec<f64>,
    pub min_inter_agent_distance: Option<f64>,
    pub mean_speed: f64,
    /// Agent-steps spent inside an unsafe set.
    pub safety_violations: usize,
}

pub const METRICS_COLUMNS: [&str; 7] = [
    "tracking_rmse",
    "average_ttc",
    "min_obstacle_distance",
    "obstacle_distances",
    "min_inter_agent_distance",
    "mean_speed",
    "safety_violations",
];

#[derive(Clone, Debug)]
pub struct Rollout {
    /// Joint state at every step, including the initial one.
    pub states: Vec<JointState>,
    pub exo: Vec<Vec<f64>>,
    /// Applied (clipped) controls of every step.
    pub controls: Vec<Vec<Vec<f64>>>,
    pub clips: Vec<Vec<ClipEvent>>,
    pub metrics: MetricsReport,
}

/// Uniform sample of every agent's initial region (its bounding box within
/// the domain).
pub fn sample_initial<R: Rng + ?Sized>(sys: &System, rng: &mut R) -> JointState {
    let x = sys
        .agents
        .iter()
        .map(|a| a.initial.own_bounding_box(&a.domain).unwrap_or_else(|| a.domain.clone()).sample(rng))
        .collect();
    JointState::new(x)
}

/// `gap / closing` for an approaching pair.
pub fn ttc(gap: f64, closing: f64) -> Option<f64> {
    (closing > 0.0 && gap > 0.0).then(|| gap / closing)
}

fn exo_at(sys: &System, leader: &LeaderProfile, t: f64) -> Vec<f64> {
    if sys.exo_dim() == 0 {
        vec![]
    } else {
        vec![leader.speed(t); sys.exo_dim()]
    }
}

/// Euler rollout of `steps` steps of size `dt` from `start`.
pub fn simulate(
    sys: &System,
    policy: Policy,
    start: JointState,
    leader: &LeaderProfile,
    obstacles: &[Obstacle],
    dt: f64,
    steps: usize,
) -> Result<Rollout, SimError> {
    if let Policy::Certificate(cert) = policy {
        cert.check_against(sys).map_err(|e| SimError::Dimension(e.to_string()))?;
    }
    if start.x.len() != sys.q() || start.x.iter().any(|x| x.len() != sys.n()) {
        return Err(SimError::Dimension("initial state does not match the system".into()));
    }
    let models: Vec<DynamicsModel> = sys.agents.iter().map(|a| a.dynamics.clone()).collect();
    let bounds: Vec<IntervalBox> = sys.agents.iter().map(|a| a.control.clone()).collect();
    let mut states = vec![start];
    let mut exo = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut clips = Vec::with_capacity(steps);
    for k in 0..steps {
        let joint = &states[k];
        let e = exo_at(sys, leader, joint.time);
        let u = policy.controls(sys, joint, &e);
        let (next, ev) = euler_step(&models, &sys.topology, joint, &u, &bounds, &e, dt).map_err(|err| match err {
            DynamicsError::NonFinite { .. } => SimError::NonFinite { step: k },
            other => SimError::Dynamics(other),
        })?;
        if !next.is_finite() {
            return Err(SimError::NonFinite { step: k + 1 });
        }
        let mut applied = u;
        for c in &ev {
            applied[c.agent][c.component] = c.applied;
        }
        exo.push(e);
        controls.push(applied);
        clips.push(ev);
        states.push(next);
    }
    let last = states.last().map(|s| s.time).unwrap_or(0.0);
    exo.push(exo_at(sys, leader, last));
    let metrics = compute_metrics(sys, &states, &exo, obstacles, dt);
    Ok(Rollout { states, exo, controls, clips, metrics })
}

fn position(sys: &System, x: &[f64]) -> Vec<f64> {
    sys.topology.position_slice.iter().map(|&k| x[k]).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn is_platoon(sys: &System) -> bool {
    sys.agents.iter().all(|a| matches!(a.dynamics, DynamicsModel::Platoon))
}

/// Metrics of a trajectory sampled every `dt`.
pub fn compute_metrics(sys: &System, states: &[JointState], exo: &[Vec<f64>], obstacles: &[Obstacle], dt: f64) -> MetricsReport {
    let q = sys.q();
    let platoon = is_platoon(sys);
    let mut sq_err = 0.0;
    let mut n_err = 0usize;
    let mut ttc_sum = 0.0;
    let mut n_ttc = 0usize;
    let mut speed_sum = 0.0;
    let mut n_speed = 0usize;
    let mut min_pair: Option<f64> = None;
    let mut obs = vec![f64::INFINITY; obstacles.len()];
    let mut violations = 0;
    let keep_min = |m: &mut Option<f64>, v: f64| *m = Some(m.map_or(v, |c: f64| c.min(v)));
    for (k, joint) in states.iter().enumerate() {
        let e = &exo[k.min(exo.len().saturating_sub(1))];
        for i in 0..q {
            let (xin, valid, _) = sys.network_input(joint, i, e);
            if sys.in_unsafe(i, &xin[..sys.xbar_dim(i)], valid) {
                violations += 1;
            }
            if !platoon {
                let p = position(sys, &joint.x[i]);
                for (o, best) in obstacles.iter().zip(obs.iter_mut()) {
                    if p.len() >= 2 {
                        *best = best.min(dist(&p[..2], &o.center) - o.radius);
                    }
                }
            }
        }
        if platoon {
            for i in 0..q {
                let s = joint.x[i][0];
                keep_min(&mut min_pair, s);
                let v = joint.x[i][1];
                let v_pred = if i == 0 { e.first().copied().unwrap_or(0.0) } else { joint.x[i - 1][1] };
                if let Some(t) = ttc(s, v - v_pred) {
                    ttc_sum += t;
                    n_ttc += 1;
                }
                sq_err += (v - e.first().copied().unwrap_or(0.0)).powi(2);
                n_err += 1;
                speed_sum += v;
                n_speed += 1;
            }
            continue;
        }
        for i in 0..q {
            for j in i + 1..q {
                let d = dist(&position(sys, &joint.x[i]), &position(sys, &joint.x[j]));
                keep_min(&mut min_pair, d);
                if let Some(next) = states.get(k + 1) {
                    let dn = dist(&position(sys, &next.x[i]), &position(sys, &next.x[j]));
                    if let Some(t) = ttc(d, (d - dn) / dt) {
                        ttc_sum += t;
                        n_ttc += 1;
                    }
                }
            }
        }
        if let Some(next) = states.get(k + 1) {
            let vel: Vec<Vec<f64>> = (0..q)
                .map(|i| position(sys, &next.x[i]).iter().zip(position(sys, &joint.x[i])).map(|(a, b)| (a - b) / dt).collect())
                .collect();
            for i in 0..q {
                let norm = vel[i].iter().map(|v| v * v).sum::<f64>().sqrt();
                speed_sum += norm;
                n_speed += 1;
                // robot followers track the leader's velocity, other agents rest at their equilibria
                let reference = match sys.agents[i].dynamics {
                    DynamicsModel::Robot(_) if i > 0 => dist(&vel[i], &vel[0]),
                    DynamicsModel::Robot(_) => continue,
                    _ => norm,
                };
                sq_err += reference * reference;
                n_err += 1;
            }
        }
    }
    let min_obstacle_distance = obs.iter().copied().reduce(f64::min);
    MetricsReport {
        tracking_rmse: if n_err > 0 { (sq_err / n_err as f64).sqrt() } else { 0.0 },
        average_ttc: (n_ttc > 0).then(|| ttc_sum / n_ttc as f64),
        min_obstacle_distance,
        obstacle_distances: obs,
        min_inter_agent_distance: min_pair,
        mean_speed: if n_speed > 0 { speed_sum / n_speed as f64 } else { 0.0 },
        safety_violations: violations,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(rows: &[MetricsReport]) -> String {
    let mut s = METRICS_COLUMNS.join(",");
    s.push('\n');
    for m in rows {
        let obs: Vec<String> = m.obstacle_distances.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            m.tracking_rmse,
            opt(m.average_ttc),
            opt(m.min_obstacle_distance),
            obs.join(";"),
            opt(m.min_inter_agent_distance),
            m.mean_speed,
            m.safety_violations
        );
    }
    s
}

/// Trajectory table: one row per step and agent with the state, the applied
/// control and whether any component was clipped.
pub fn trajectory_csv(sys: &System, r: &Rollout) -> String {
    let n = sys.n();
    let m = (0..sys.q()).map(|i| sys.m(i)).max().unwrap_or(0);
    let mut s = String::from("t,agent");
    for k in 0..n {
        let _ = write!(s, ",x{k}");
    }
    for k in 0..m {
        let _ = write!(s, ",u{k}");
    }
    s.push_str(",clipped\n");
    for (k, joint) in r.states.iter().enumerate() {
        for i in 0..sys.q() {
            let _ = write!(s, "{},{}", joint.time, i);
            for v in &joint.x[i] {
                let _ = write!(s, ",{v}");
            }
            for c in 0..m {
                let u = r.controls.get(k).and_then(|u| u[i].get(c)).map(|v| v.to_string()).unwrap_or_default();
                let _ = write!(s, ",{u}");
            }
            let clipped = r.clips.get(k).is_some_and(|ev| ev.iter().any(|e| e.agent == i));
            let _ = writeln!(s, ",{}", clipped as u8);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearParams;
    use crate::scenario::{PlatoonScenario, RobotScenario};
    use crate::sets::Region;
    use crate::system::{AgentSpec, ExoSpec};
    use crate::topology::SystemTopology;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_system() -> System {
        let zero = DynamicsModel::Linear(LinearParams { a: vec![vec![0.0; 2]; 2], b: vec![vec![0.0], vec![0.0]], offset: vec![] });
        let agent = |c: f64| AgentSpec {
            dynamics: zero.clone(),
            domain: IntervalBox::new(&[-5.0, -5.0], &[5.0, 5.0]),
            control: IntervalBox::new(&[-1.0], &[1.0]),
            equilibrium: vec![c, 0.0],
            initial: Region::Box { lower: vec![c, 0.0], upper: vec![c, 0.0] },
            goal: Region::Box { lower: vec![c - 0.1, -0.1], upper: vec![c + 0.1, 0.1] },
            unsafe_set: vec![],
        };
        System {
            topology: SystemTopology::fully_connected(2, 2, 2, 1.0, vec![0]).unwrap(),
            agents: vec![agent(-1.0), agent(1.0)],
            exo: ExoSpec::default(),
            period: 0.01,
        }
    }

    #[test]
    fn zero_dynamics_stay_constant() {
        let sys = zero_system();
        let start = JointState::new(vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
        let r = simulate(&sys, Policy::Zero, start.clone(), &LeaderProfile::default(), &[], 0.1, 20).unwrap();
        assert!(r.states.iter().all(|s| s.x == start.x));
        assert_eq!(r.metrics.tracking_rmse, 0.0);
        assert_eq!(r.metrics.average_ttc, None);
        assert_eq!(r.metrics.min_inter_agent_distance, Some(2.0));
        assert_eq!(r.metrics.safety_violations, 0);
    }

    #[test]
    fn ttc_definition() {
        assert_eq!(ttc(20.0, 2.0), Some(10.0));
        assert_eq!(ttc(20.0, -2.0), None);
        assert_eq!(ttc(20.0, 0.0), None);
    }

    #[test]
    fn platoon_ttc_from_closing_follower() {
        let p = PlatoonScenario { followers: 1, ..PlatoonScenario::default() };
        let sys = p.system().unwrap();
        let states = vec![JointState::new(vec![vec![20.0, 12.0]])];
        let m = compute_metrics(&sys, &states, &[vec![10.0]], &[], 0.1);
        assert_eq!(m.average_ttc, Some(10.0));
        assert_eq!(m.min_inter_agent_distance, Some(20.0));
        assert!((m.tracking_rmse - 2.0).abs() < 1e-12);
    }

    #[test]
    fn robot_report_lists_every_obstacle() {
        let r = RobotScenario::default();
        let sys = r.system().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let start = sample_initial(&sys, &mut rng);
        let nominal = r.nominal();
        let out = simulate(&sys, Policy::Nominal(&nominal), start, &LeaderProfile::default(), &r.obstacles, 0.05, 50).unwrap();
        assert_eq!(out.metrics.obstacle_distances.len(), 3);
        assert!(out.metrics.obstacle_distances.iter().all(|d| d.is_finite()));
        assert!(out.metrics.min_inter_agent_distance.unwrap() >= 0.0);
        let csv = trajectory_csv(&sys, &out);
        assert_eq!(csv.lines().count(), 1 + 51 * 4);
        assert!(csv.starts_with("t,agent,x0,x1,x2,u0,u1,u2,clipped"));
    }

    #[test]
    fn metrics_are_deterministic() {
        let p = PlatoonScenario::default();
        let sys = p.system().unwrap();
        let nominal = p.nominal();
        let leader = LeaderProfile::Sinusoid { mean: 10.0, amplitude: 0.5, period: 20.0 };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = sample_initial(&sys, &mut rng);
            simulate(&sys, Policy::Nominal(&nominal), start, &leader, &[], 0.1, 200).unwrap().metrics
        };
        assert_eq!(run(4), run(4));
    }

    #[test]
    fn metrics_csv_header_matches_fields() {
        let m = MetricsReport {
            tracking_rmse: 1.0,
            average_ttc: None,
            min_obstacle_distance: Some(0.5),
            obstacle_distances: vec![0.5, 2.0],
            min_inter_agent_distance: Some(1.0),
            mean_speed: 0.3,
            safety_violations: 0,
        };
        let json = serde_json::to_value(&m).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        let mut cols = METRICS_COLUMNS.to_vec();
        cols.sort();
        let mut keys = keys;
        keys.sort();
        assert_eq!(keys, cols);
        let csv = metrics_csv(&[m]);
        assert_eq!(csv.lines().nth(1).unwrap(), "1,,0.5,0.5;2,1,0.3,0");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sys = zero_system();
        let start = JointState::new(vec![vec![0.0, 0.0]]);
        assert!(matches!(
            simulate(&sys, Policy::Zero, start, &LeaderProfile::default(), &[], 0.1, 2),
            Err(SimError::Dimension(_))
        ));
    }
}
