//! A multi-agent system: topology, per-agent dynamics, domains and regions,
//! plus the enumeration of fixed neighbor patterns used by verification.

use crate::dynamics::DynamicsModel;
use crate::network::{Interval, IntervalBox};
use crate::sets::{union_contains, Geometry, Region};
use crate::topology::{JointState, SystemTopology, PADDING};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("invalid system: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub dynamics: DynamicsModel,
    /// Operating domain of the agent's own state.
    pub domain: IntervalBox,
    pub control: IntervalBox,
    pub equilibrium: Vec<f64>,
    pub initial: Region,
    pub goal: Region,
    pub unsafe_set: Vec<Region>,
}

/// Exogenous input shared by all agents (e.g. a platoon leader's velocity):
/// its range and the range of its rate of change.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExoSpec {
    pub domain: IntervalBox,
    pub rate: IntervalBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct System {
    pub topology: SystemTopology,
    pub agents: Vec<AgentSpec>,
    pub exo: ExoSpec,
    /// Sampling period of the discrete certificate conditions.
    pub period: f64,
}

impl System {
    pub fn validate(&self) -> Result<(), SystemError> {
        let bad = |m: String| Err(SystemError::Invalid(m));
        self.topology.validate().map_err(|e| SystemError::Invalid(e.to_string()))?;
        if self.agents.len() != self.topology.q {
            return bad("one agent spec per topology agent required".into());
        }
        if !(self.period > 0.0) {
            return bad("sampling period must be positive".into());
        }
        if self.exo.domain.dim() != self.exo.rate.dim() {
            return bad("exogenous domain and rate must have equal dimension".into());
        }
        let n = self.topology.state_dim;
        for (i, a) in self.agents.iter().enumerate() {
            a.dynamics.validate().map_err(|e| SystemError::Invalid(format!("agent {i}: {e}")))?;
            if a.dynamics.state_dim() != n || a.domain.dim() != n || a.equilibrium.len() != n {
                return bad(format!("agent {i}: state dimension mismatch"));
            }
            if a.control.dim() != a.dynamics.control_dim() || !a.control.is_valid() {
                return bad(format!("agent {i}: control bounds must match control dimension and be nonempty"));
            }
            if !a.domain.is_valid() {
                return bad(format!("agent {i}: domain must be a bounded box"));
            }
        }
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.topology.q
    }

    pub fn n(&self) -> usize {
        self.topology.state_dim
    }

    pub fn exo_dim(&self) -> usize {
        self.exo.domain.dim()
    }

    pub fn m(&self, i: usize) -> usize {
        self.agents[i].dynamics.control_dim()
    }

    pub fn slots(&self, i: usize) -> usize {
        self.topology.max_neighborhood[i]
    }

    /// Width of the extended state of agent `i` without exogenous inputs.
    pub fn xbar_dim(&self, i: usize) -> usize {
        self.slots(i) * self.n()
    }

    /// Input width of barrier, controller and surrogate networks.
    pub fn input_dim(&self, i: usize) -> usize {
        self.xbar_dim(i) + self.exo_dim()
    }

    pub fn geometry(&self, i: usize) -> Geometry<'_> {
        Geometry { state_dim: self.n(), position: &self.topology.position_slice, domain: &self.agents[i].domain }
    }

    pub fn in_unsafe(&self, i: usize, xbar: &[f64], valid: usize) -> bool {
        union_contains(&self.agents[i].unsafe_set, xbar, valid, &self.geometry(i))
    }

    /// Extended network input (flattened rows then exogenous values), the
    /// valid row count and the selected neighbors.
    pub fn network_input(&self, joint: &JointState, i: usize, exo: &[f64]) -> (Vec<f64>, usize, Vec<usize>) {
        let ids = self.topology.neighbor_set(joint, i).expect("consistent joint state");
        let ext = self.topology.extend_with(joint, i, &ids);
        let mut v = ext.flatten();
        v.extend_from_slice(exo);
        (v, ext.valid_rows, ids)
    }

    /// Input normalization for networks on the extended input: row 0 by the
    /// agent's domain, neighbor rows by the hull of candidate neighbor
    /// domains (scaled so that padding stays within a few units), exogenous
    /// inputs by their range.
    pub fn input_normalization(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut offset = Vec::with_capacity(self.input_dim(i));
        let mut scale = Vec::with_capacity(self.input_dim(i));
        let own = &self.agents[i].domain;
        for k in 0..n {
            offset.push(own[k].mid());
            scale.push(1.0 / own[k].radius().max(1e-6));
        }
        let cands: Vec<usize> = self.topology.communicable[i].iter().copied().filter(|&j| j != i).collect();
        for _ in 1..self.slots(i) {
            for k in 0..n {
                let hull = cands.iter().map(|&j| self.agents[j].domain[k]).reduce(|a, b| a.hull(b));
                match hull {
                    Some(h) => {
                        offset.push(h.mid());
                        scale.push(1.0 / h.radius().max((h.mid() - PADDING).abs() / 3.0).max(1e-6));
                    }
                    None => {
                        offset.push(0.0);
                        scale.push(1.0);
                    }
                }
            }
        }
        for k in 0..self.exo_dim() {
            offset.push(self.exo.domain[k].mid());
            scale.push(1.0 / self.exo.domain[k].radius().max(1e-6));
        }
        (offset, scale)
    }

    /// Box of own positions enlarged by the sensing radius.
    fn reach_box(&self, i: usize, own: &IntervalBox) -> IntervalBox {
        let r = self.topology.radius[i];
        let mut b = IntervalBox(vec![Interval::new(f64::NEG_INFINITY, f64::INFINITY); self.n()]);
        for &k in &self.topology.position_slice {
            b[k] = own[k].pad(r);
        }
        b
    }

    fn pos_distance(&self, a: &IntervalBox, a_off: usize, b: &IntervalBox, b_off: usize) -> Interval {
        let mut s = Interval::ZERO;
        for &k in &self.topology.position_slice {
            s = s + (a[a_off + k] - b[b_off + k]).square();
        }
        s.sqrt()
    }

    /// All ordered neighbor selections of agent `i` whose consistent region
    /// within the domains is (conservatively) nonempty.
    pub fn patterns(&self, i: usize) -> Vec<Vec<usize>> {
        let cands: Vec<usize> = self.topology.communicable[i].iter().copied().filter(|&j| j != i).collect();
        let max_len = self.slots(i) - 1;
        let mut out = Vec::new();
        let mut cur = Vec::new();
        fn rec(sys: &System, i: usize, cands: &[usize], max_len: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if sys.pattern_box(i, cur).is_some() {
                out.push(cur.clone());
            }
            if cur.len() == max_len {
                return;
            }
            for &j in cands {
                if !cur.contains(&j) {
                    cur.push(j);
                    rec(sys, i, cands, max_len, cur, out);
                    cur.pop();
                }
            }
        }
        rec(self, i, &cands, max_len, &mut cur, &mut out);
        out
    }

    /// Query box over the extended input of agent `i` for a fixed neighbor
    /// pattern, or `None` when no state realizes the pattern.
    pub fn pattern_box(&self, i: usize, pattern: &[usize]) -> Option<IntervalBox> {
        let n = self.n();
        let own = self.agents[i].domain.clone();
        let reach = self.reach_box(i, &own);
        let mut rows = own.0.clone();
        for &j in pattern {
            let nb = self.agents[j].domain.intersect(&reach)?;
            rows.extend(nb.0);
        }
        for _ in pattern.len() + 1..self.slots(i) {
            rows.extend(std::iter::repeat(Interval::point(PADDING)).take(n));
        }
        rows.extend(self.exo.domain.0.iter().copied());
        let bx = IntervalBox(rows);
        self.box_may_realize(i, pattern, &bx).then_some(bx)
    }

    /// Conservative test that some point of `bx` realizes `pattern`.
    pub fn box_may_realize(&self, i: usize, pattern: &[usize], bx: &IntervalBox) -> bool {
        let n = self.n();
        let r = self.topology.radius[i];
        let mut dists = Vec::with_capacity(pattern.len());
        for (slot, _) in pattern.iter().enumerate() {
            let d = self.pos_distance(bx, 0, bx, (slot + 1) * n);
            if d.lo > r {
                return false;
            }
            dists.push(d);
        }
        for w in dists.windows(2) {
            if w[0].lo > w[1].hi {
                return false;
            }
        }
        let own = bx.slice(0, n);
        let full = pattern.len() == self.slots(i) - 1;
        for &k in &self.topology.communicable[i] {
            if k == i || pattern.contains(&k) {
                continue;
            }
            let dk = self.pos_distance(&own, 0, &self.agents[k].domain, 0);
            if full {
                // an unlisted agent must be able to sit no closer than the last listed one
                if dk.hi < dists.last().map_or(0.0, |d| d.lo) {
                    return false;
                }
            } else if dk.hi <= r {
                return false;
            }
        }
        true
    }

    /// Shrinks `bx` to a box still containing every point of it whose listed
    /// neighbors lie within the sensing radius. `None` when no such point
    /// exists.
    pub fn contract_to_pattern(&self, i: usize, pattern: &[usize], bx: &IntervalBox) -> Option<IntervalBox> {
        let n = self.n();
        let r = self.topology.radius[i];
        let pos = &self.topology.position_slice;
        let mut out = bx.clone();
        for _ in 0..2 {
            for slot in 1..=pattern.len() {
                let off = slot * n;
                for (a, &k) in pos.iter().enumerate() {
                    let others: f64 = pos
                        .iter()
                        .enumerate()
                        .filter(|&(b, _)| b != a)
                        .map(|(_, &j)| (out[off + j] - out[j]).mig().powi(2))
                        .sum();
                    let slack = r * r - others;
                    if slack < 0.0 {
                        return None;
                    }
                    let rho = slack.sqrt() * (1.0 + 1e-12) + 1e-12;
                    let near = Interval::new(-rho, rho);
                    out[k] = out[k].intersect(out[off + k] - near)?;
                    out[off + k] = out[off + k].intersect(out[k] + near)?;
                }
            }
        }
        Some(out)
    }

    /// Exact pattern consistency of a concrete extended state, given that
    /// unlisted agents may be anywhere in their domains.
    pub fn point_realizes(&self, i: usize, pattern: &[usize], xin: &[f64]) -> bool {
        let n = self.n();
        let r = self.topology.radius[i];
        let pos = &self.topology.position_slice;
        let dist = |off: usize| pos.iter().map(|&k| (xin[k] - xin[off + k]).powi(2)).sum::<f64>().sqrt();
        let mut last = 0.0;
        for (slot, &j) in pattern.iter().enumerate() {
            let d = dist((slot + 1) * n);
            if d > r || d < last {
                return false;
            }
            if !self.agents[j].domain.contains(&xin[(slot + 1) * n..(slot + 2) * n]) {
                return false;
            }
            last = d;
        }
        let full = pattern.len() == self.slots(i) - 1;
        let own = IntervalBox::point(&xin[..n]);
        for &k in &self.topology.communicable[i] {
            if k == i || pattern.contains(&k) {
                continue;
            }
            let dk = self.pos_distance(&own, 0, &self.agents[k].domain, 0).hi;
            if full {
                if dk < last {
                    return false;
                }
            } else if dk <= r {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearParams;

    fn line_system(centers: &[f64], half: f64, m: usize, r: f64) -> System {
        let q = centers.len();
        let topo = SystemTopology::fully_connected(q, 1, m, r, vec![0]).unwrap();
        let model = DynamicsModel::Linear(LinearParams { a: vec![vec![-1.0]], b: vec![vec![1.0]], offset: vec![] });
        let agents = centers
            .iter()
            .map(|&c| AgentSpec {
                dynamics: model.clone(),
                domain: IntervalBox::new(&[c - half], &[c + half]),
                control: IntervalBox::new(&[-1.0], &[1.0]),
                equilibrium: vec![c],
                initial: Region::Box { lower: vec![c - 0.1], upper: vec![c + 0.1] },
                goal: Region::Box { lower: vec![c - 0.05], upper: vec![c + 0.05] },
                unsafe_set: vec![],
            })
            .collect();
        System { topology: topo, agents, exo: ExoSpec::default(), period: 0.01 }
    }

    #[test]
    fn far_agents_only_admit_empty_pattern() {
        let sys = line_system(&[0.0, 10.0], 0.5, 2, 1.0);
        sys.validate().unwrap();
        assert_eq!(sys.patterns(0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn close_agents_force_neighbor_pattern() {
        // agent 1 always within range of agent 0
        let sys = line_system(&[0.0, 0.5], 0.1, 2, 2.0);
        assert_eq!(sys.patterns(0), vec![vec![1]]);
        let bx = sys.pattern_box(0, &[1]).unwrap();
        assert_eq!(bx.dim(), 2);
        assert_eq!(bx[1], Interval::new(0.4, 0.6));
    }

    #[test]
    fn borderline_agents_admit_both() {
        let sys = line_system(&[0.0, 1.0], 0.3, 2, 1.0);
        assert_eq!(sys.patterns(0), vec![vec![], vec![1]]);
        // padding row of the empty pattern is the zero point
        let bx = sys.pattern_box(0, &[]).unwrap();
        assert_eq!(bx[1], Interval::point(0.0));
    }

    #[test]
    fn ordered_patterns_for_three_slots() {
        let sys = line_system(&[0.0, 0.4, -0.4], 0.1, 3, 2.0);
        let pats = sys.patterns(0);
        assert!(pats.contains(&vec![1, 2]) && pats.contains(&vec![2, 1]));
        assert!(!pats.contains(&vec![1]));
    }

    #[test]
    fn point_realization_matches_topology() {
        let sys = line_system(&[0.0, 1.0], 0.3, 2, 1.0);
        let joint = JointState::new(vec![vec![0.2], vec![0.9]]);
        let (x, valid, ids) = sys.network_input(&joint, 0, &[]);
        assert_eq!((valid, ids.clone()), (2, vec![1]));
        assert!(sys.point_realizes(0, &ids, &x));
        assert!(!sys.point_realizes(0, &[], &[0.4, 0.0]));
        assert!(sys.point_realizes(0, &[], &[-0.25, 0.0]));
    }

    proptest::proptest! {
        #[test]
        fn contraction_keeps_every_point_in_range(
            lo in proptest::collection::vec(-2.0f64..2.0, 4),
            w in proptest::collection::vec(0.0f64..2.0, 4),
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let topo = SystemTopology::fully_connected(2, 2, 2, 1.0, vec![0, 1]).unwrap();
            let model = DynamicsModel::Linear(LinearParams { a: vec![vec![0.0; 2]; 2], b: vec![vec![1.0], vec![0.0]], offset: vec![] });
            let agent = AgentSpec {
                dynamics: model,
                domain: IntervalBox::new(&[-5.0, -5.0], &[5.0, 5.0]),
                control: IntervalBox::new(&[-1.0], &[1.0]),
                equilibrium: vec![0.0, 0.0],
                initial: Region::Box { lower: vec![0.0, 0.0], upper: vec![0.0, 0.0] },
                goal: Region::Box { lower: vec![0.0, 0.0], upper: vec![0.0, 0.0] },
                unsafe_set: vec![],
            };
            let sys = System { topology: topo, agents: vec![agent.clone(), agent], exo: ExoSpec::default(), period: 0.01 };
            let hi: Vec<f64> = lo.iter().zip(&w).map(|(a, b)| a + b).collect();
            let bx = IntervalBox::new(&lo, &hi);
            let contracted = sys.contract_to_pattern(0, &[1], &bx);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..500 {
                let x: Vec<f64> = (0..4).map(|k| rng.gen_range(lo[k]..=hi[k])).collect();
                let d = ((x[2] - x[0]).powi(2) + (x[3] - x[1]).powi(2)).sqrt();
                if d <= 1.0 {
                    let c = contracted.as_ref().expect("a point in range exists");
                    proptest::prop_assert!(c.contains(&x), "{x:?} dropped from {c:?}");
                }
            }
        }
    }
}
