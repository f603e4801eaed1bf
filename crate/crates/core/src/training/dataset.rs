use super::{NominalController, TrainingConfig, TrainingError};
use crate::dynamics::SurrogateModel;
use crate::network::IntervalBox;
use crate::sets::Region;
use crate::system::System;
use crate::topology::JointState;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionTag {
    Interior,
    Unsafe,
    Goal,
    Initial,
}

/// One agent's view of a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentInput {
    pub xin: Vec<f64>,
    pub valid: usize,
    pub ids: Vec<usize>,
    pub tag: RegionTag,
    pub in_goal: bool,
    pub in_initial: bool,
    pub in_unsafe: bool,
    /// Surrogate drift and input matrix at `xin`.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub joint: JointState,
    pub exo: Vec<f64>,
    pub agents: Vec<AgentInput>,
    pub nominal: Option<Vec<Vec<f64>>>,
    pub weight: f64,
    pub counterexample: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Halves the extra weight of counterexample samples.
    pub fn decay_weights(&mut self) {
        for s in self.train.iter_mut().filter(|s| s.counterexample) {
            s.weight = 1.0 + 0.5 * (s.weight - 1.0);
        }
    }

    pub fn tag_fraction(&self, tag: RegionTag) -> f64 {
        let all = self.train.iter().chain(&self.val).flat_map(|s| &s.agents);
        let (hit, total) = all.fold((0usize, 0usize), |(h, t), a| (h + (a.tag == tag) as usize, t + 1));
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

/// Builds a sample with region tags, surrogate evaluations and nominal
/// labels.
pub fn make_sample(sys: &System, surrogate: &SurrogateModel, nominal: &NominalController, joint: JointState, exo: Vec<f64>, weight: f64) -> Sample {
    let agents = (0..sys.q())
        .map(|i| {
            let (xin, valid, ids) = sys.network_input(&joint, i, &exo);
            let geo = sys.geometry(i);
            let a = &sys.agents[i];
            let in_unsafe = sys.in_unsafe(i, &xin, valid);
            let in_goal = a.goal.contains(&xin, valid, &geo);
            let in_initial = a.initial.contains(&xin, valid, &geo);
            let tag = if in_unsafe {
                RegionTag::Unsafe
            } else if in_initial {
                RegionTag::Initial
            } else if in_goal {
                RegionTag::Goal
            } else {
                RegionTag::Interior
            };
            let (f, g) = surrogate.parts(i, &xin, valid);
            AgentInput { xin, valid, ids, tag, in_goal, in_initial, in_unsafe, f, g }
        })
        .collect();
    let nominal = nominal.controls(sys, &joint, &exo);
    Sample { joint, exo, agents, nominal, weight, counterexample: false }
}

fn uniform(bx: &IntervalBox, rng: &mut ChaCha8Rng) -> Vec<f64> {
    bx.sample(rng)
}

fn uniform_joint(sys: &System, rng: &mut ChaCha8Rng) -> (JointState, Vec<f64>) {
    let x = sys.agents.iter().map(|a| uniform(&a.domain, rng)).collect();
    (JointState::new(x), uniform(&sys.exo.domain, rng))
}

/// Moves agent `i` (and, for proximity regions, one neighbor) into `region`.
/// Returns false when no attempt succeeded.
fn place_in_region(sys: &System, i: usize, region: &Region, joint: &mut JointState, exo: &[f64], rng: &mut ChaCha8Rng) -> bool {
    let domain = &sys.agents[i].domain;
    let n = sys.n();
    for _ in 0..64 {
        match region {
            Region::Boundary { width } => {
                let dims: Vec<usize> = (0..n).filter(|&k| width.get(k).is_some_and(|&w| w > 0.0)).collect();
                let Some(&k) = dims.choose(rng) else { return false };
                let w = width[k].min(domain[k].width());
                let mut x = uniform(domain, rng);
                x[k] = if rng.gen_bool(0.5) { domain[k].lo + rng.gen::<f64>() * w } else { domain[k].hi - rng.gen::<f64>() * w };
                joint.x[i] = x;
            }
            Region::Proximity { radius } => {
                let cands: Vec<usize> = sys.topology.communicable[i].iter().copied().filter(|&j| j != i).collect();
                let Some(&j) = cands.choose(rng) else { return false };
                let mut xj = joint.x[i].clone();
                for &k in &sys.topology.position_slice {
                    xj[k] += rng.gen_range(-radius..*radius) / (sys.topology.position_slice.len() as f64).sqrt();
                }
                if !sys.agents[j].domain.contains(&xj) {
                    joint.x[i] = uniform(domain, rng);
                    continue;
                }
                joint.x[j] = xj;
            }
            other => {
                let bx = other.own_bounding_box(domain).unwrap_or_else(|| domain.clone());
                joint.x[i] = uniform(&bx, rng);
            }
        }
        let (xin, valid, _) = sys.network_input(joint, i, exo);
        if region.contains(&xin, valid, &sys.geometry(i)) {
            return true;
        }
    }
    false
}

/// A state of agent `i` close to the boundary of `region`, found by
/// bisection between a point inside and a uniform point outside.
fn near_boundary(sys: &System, i: usize, region: &Region, rng: &mut ChaCha8Rng) -> Option<(JointState, Vec<f64>)> {
    let (mut joint, exo) = uniform_joint(sys, rng);
    if !place_in_region(sys, i, region, &mut joint, &exo, rng) {
        return None;
    }
    let inside = joint.x[i].clone();
    let outside = uniform(&sys.agents[i].domain, rng);
    let geo = sys.geometry(i);
    let contains = |joint: &mut JointState, x: &[f64]| {
        joint.x[i] = x.to_vec();
        let (xin, valid, _) = sys.network_input(joint, i, &exo);
        region.contains(&xin, valid, &geo)
    };
    if contains(&mut joint, &outside) {
        return None;
    }
    let (mut a, mut b) = (inside, outside);
    for _ in 0..20 {
        let m: Vec<f64> = a.iter().zip(&b).map(|(p, q)| 0.5 * (p + q)).collect();
        if contains(&mut joint, &m) {
            a = m;
        } else {
            b = m;
        }
    }
    let domain = &sys.agents[i].domain;
    let mut x = if rng.gen_bool(0.5) { a } else { b };
    for (k, v) in x.iter_mut().enumerate() {
        let noise = Normal::new(0.0, 0.005 * domain[k].width().max(1e-12)).expect("positive scale");
        *v = (*v + noise.sample(rng)).clamp(domain[k].lo, domain[k].hi);
    }
    joint.x[i] = x;
    Some((joint, exo))
}

/// Uniform samples over the joint domain, stratified so that at least the
/// configured fractions of agent tags are unsafe and of samples lie near
/// region boundaries. Deterministic given the seed.
pub fn sample_dataset(sys: &System, surrogate: &SurrogateModel, nominal: &NominalController, cfg: &TrainingConfig) -> Result<Dataset, TrainingError> {
    if sys.agents.iter().any(|a| !a.domain.is_valid() || a.domain.dim() == 0) {
        return Err(TrainingError::EmptyDomain);
    }
    let total = cfg.dataset_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let q = sys.q();
    let has_unsafe: Vec<usize> = (0..q).filter(|&i| !sys.agents[i].unsafe_set.is_empty()).collect();
    let need_unsafe = if has_unsafe.is_empty() { 0 } else { (cfg.unsafe_fraction * (total * q) as f64).ceil() as usize };
    let boundary_quota = (cfg.boundary_fraction * total as f64).ceil() as usize;
    let mut samples = Vec::with_capacity(total);
    let mut unsafe_tags = 0usize;
    let push = |samples: &mut Vec<Sample>, unsafe_tags: &mut usize, joint: JointState, exo: Vec<f64>| {
        let s = make_sample(sys, surrogate, nominal, joint, exo, 1.0);
        *unsafe_tags += s.agents.iter().filter(|a| a.tag == RegionTag::Unsafe).count();
        samples.push(s);
    };
    let mut attempts = 0usize;
    while samples.len() < boundary_quota.min(total) && attempts < 50 * total.max(1) {
        attempts += 1;
        let i = rng.gen_range(0..q);
        let a = &sys.agents[i];
        let mut regions = vec![&a.initial, &a.goal];
        regions.extend(a.unsafe_set.iter());
        let region = *regions.choose(&mut rng).expect("nonempty");
        if let Some((joint, exo)) = near_boundary(sys, i, region, &mut rng) {
            push(&mut samples, &mut unsafe_tags, joint, exo);
        }
    }
    while samples.len() < total {
        let remaining = total - samples.len();
        let deficit = need_unsafe.saturating_sub(unsafe_tags);
        let (mut joint, exo) = uniform_joint(sys, &mut rng);
        if deficit > 0 && (deficit >= remaining || rng.gen_bool(0.5)) {
            let i = *has_unsafe.choose(&mut rng).expect("agents with unsafe sets");
            let region = sys.agents[i].unsafe_set.choose(&mut rng).expect("nonempty").clone();
            if !place_in_region(sys, i, &region, &mut joint, &exo, &mut rng) {
                continue;
            }
        }
        push(&mut samples, &mut unsafe_tags, joint, exo);
    }
    samples.shuffle(&mut rng);
    let n_train = ((cfg.train_fraction * total as f64).round() as usize).clamp(1.min(total), total);
    let val = samples.split_off(n_train);
    Ok(Dataset { train: samples, val })
}
