//! Reuse of a certificate trained on a small system for a larger system
//! with the same local structure.

use crate::certificate::matrix::{check_hurwitz, check_metzler, MatrixError};
use crate::certificate::{CoRwaCertificate, Derivative, Dynamics};
use crate::system::System;
use crate::topology::JointState;
use crate::verifier::{join_status, Budget, ConditionTag, Status, VerificationOutcome, Verifier, VerifyError};
use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::hash::Hasher;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("no substructure embedding of the small system into the large one")]
    NoEmbedding,
    #[error("large-system agent {0} matches no template class")]
    Uncovered(usize),
    #[error("tiled coupling matrix is not Hurwitz: {0:?}")]
    TransferRejected(Vec<Vec<f64>>),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("training failed: {0}")]
    Training(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSignature {
    pub dynamics_tag: String,
    pub param_hash: String,
    pub max_neighborhood: usize,
    pub radius: f64,
}

impl AgentSignature {
    fn compatible(&self, other: &AgentSignature) -> bool {
        self.dynamics_tag == other.dynamics_tag
            && self.param_hash == other.param_hash
            && self.max_neighborhood == other.max_neighborhood
            && self.radius.to_bits() == other.radius.to_bits()
    }
}

/// Per-agent labels and the communicable-structure graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSignature {
    pub agents: Vec<AgentSignature>,
    /// Sorted communicable sets.
    pub communicable: Vec<Vec<usize>>,
}

impl SystemSignature {
    pub fn of(sys: &System) -> Self {
        let t = &sys.topology;
        SystemSignature {
            agents: (0..sys.q())
                .map(|i| AgentSignature {
                    dynamics_tag: sys.agents[i].dynamics.tag().to_string(),
                    param_hash: sys.agents[i].dynamics.param_hash(),
                    max_neighborhood: t.max_neighborhood[i],
                    radius: t.radius[i],
                })
                .collect(),
            communicable: t
                .communicable
                .iter()
                .map(|c| {
                    let mut c = c.clone();
                    c.sort_unstable();
                    c
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// FNV-1a fingerprint of the canonical serialized form.
    pub fn fingerprint(&self) -> String {
        let mut h = FnvHasher::default();
        h.write(serde_json::to_string(self).expect("signature serializes").as_bytes());
        format!("{:016x}", h.finish())
    }
}

/// Injective map from small-system agents to large-system agents.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embedding {
    pub map: Vec<usize>,
}

/// Whether `tau` (possibly partial, a prefix of the small agents) is
/// consistent: injective, label compatible, and every fully assigned agent
/// has exactly the image of its communicable set as its large-system set.
fn consistent(small: &SystemSignature, large: &SystemSignature, tau: &[usize]) -> bool {
    let k = tau.len();
    let j = k - 1;
    let t = tau[j];
    if tau[..j].contains(&t) || !small.agents[j].compatible(&large.agents[t]) {
        return false;
    }
    if small.communicable[j].len() != large.communicable[t].len() {
        return false;
    }
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let s_edge = small.communicable[a].contains(&b);
            let l_edge = large.communicable[tau[a]].contains(&tau[b]);
            if s_edge != l_edge {
                return false;
            }
        }
    }
    // neighbors of assigned agents that fall outside the image would make
    // the neighborhoods differ
    for a in 0..k {
        for &n in &small.communicable[a] {
            if n < k && !large.communicable[tau[a]].contains(&tau[n]) {
                return false;
            }
        }
    }
    true
}

fn complete(small: &SystemSignature, large: &SystemSignature, tau: &[usize]) -> bool {
    (0..small.len()).all(|a| {
        let mut img: Vec<usize> = small.communicable[a].iter().map(|&n| tau[n]).collect();
        img.sort_unstable();
        img == large.communicable[tau[a]]
    })
}

/// Lexicographically smallest embedding of `small` into `large`, found by
/// backtracking over agents in index order.
pub fn find_embedding(small: &SystemSignature, large: &SystemSignature) -> Option<Embedding> {
    fn go(small: &SystemSignature, large: &SystemSignature, tau: &mut Vec<usize>) -> bool {
        if tau.len() == small.len() {
            return complete(small, large, tau);
        }
        for t in 0..large.len() {
            tau.push(t);
            if consistent(small, large, tau) && go(small, large, tau) {
                return true;
            }
            tau.pop();
        }
        false
    }
    if small.is_empty() || small.len() > large.len() {
        return None;
    }
    let mut tau = Vec::with_capacity(small.len());
    go(small, large, &mut tau).then_some(Embedding { map: tau })
}

/// Exhaustive search over all injective maps; the reference for
/// [`find_embedding`] on small instances.
pub fn brute_force_embedding(small: &SystemSignature, large: &SystemSignature) -> Option<Embedding> {
    fn go(small: &SystemSignature, large: &SystemSignature, tau: &mut Vec<usize>) -> Option<Vec<usize>> {
        if tau.len() == small.len() {
            let j = small.len();
            let ok = (0..j).all(|a| {
                (0..a).all(|b| tau[a] != tau[b])
                    && small.agents[a].compatible(&large.agents[tau[a]])
                    && {
                        let mut img: Vec<usize> = small.communicable[a].iter().map(|&n| tau[n]).collect();
                        img.sort_unstable();
                        img == large.communicable[tau[a]]
                    }
            });
            return ok.then(|| tau.clone());
        }
        for t in 0..large.len() {
            tau.push(t);
            if let Some(found) = go(small, large, tau) {
                return Some(found);
            }
            tau.pop();
        }
        None
    }
    if small.is_empty() || small.len() > large.len() {
        return None;
    }
    go(small, large, &mut Vec::new()).map(|map| Embedding { map })
}

/// Template class (small-system agent) of every large-system agent. Agents
/// in the image of the embedding take their preimage; others take the
/// smallest small agent with the same label, the same number of
/// communicable agents and the same multiset of neighbor labels.
pub fn template_classes(small: &SystemSignature, large: &SystemSignature, tau: &Embedding) -> Result<Vec<usize>, TransferError> {
    let role = |s: &SystemSignature, i: usize| {
        let mut nl: Vec<String> = s.communicable[i].iter().map(|&n| s.agents[n].param_hash.clone()).collect();
        nl.sort();
        (s.communicable[i].len(), nl)
    };
    (0..large.len())
        .map(|j| {
            if let Some(k) = tau.map.iter().position(|&t| t == j) {
                return Ok(k);
            }
            (0..small.len())
                .find(|&k| small.agents[k].compatible(&large.agents[j]) && role(small, k) == role(large, j))
                .ok_or(TransferError::Uncovered(j))
        })
        .collect()
}

/// Builds the large-system certificate by template class. Coupling rows are
/// tiled: the entry for the `r`-th communicable agent of `j` copies the
/// entry for the `r`-th communicable agent of its class. The tiled Λ must
/// be Hurwitz; Υ is Metzler by construction and asserted.
pub fn transfer_certificate(
    cert: &CoRwaCertificate,
    small: &System,
    tau: &Embedding,
    large: &System,
) -> Result<CoRwaCertificate, TransferError> {
    let ss = SystemSignature::of(small);
    let ls = SystemSignature::of(large);
    let classes = template_classes(&ss, &ls, tau)?;
    let q = large.q();
    let mut lambda = vec![vec![0.0; q]; q];
    let mut upsilon = vec![vec![0.0; q]; q];
    for j in 0..q {
        let k = classes[j];
        lambda[j][j] = cert.lambda[k][k];
        upsilon[j][j] = cert.upsilon[k][k];
        for (&lj, &sk) in ls.communicable[j].iter().zip(&ss.communicable[k]) {
            lambda[j][lj] = cert.lambda[k][sk];
            upsilon[j][lj] = cert.upsilon[k][sk];
        }
    }
    let out = CoRwaCertificate {
        format: cert.format,
        lyapunov: classes.iter().map(|&k| cert.lyapunov[k].clone()).collect(),
        barrier: classes.iter().map(|&k| cert.barrier[k].clone()).collect(),
        controller: classes.iter().map(|&k| cert.controller[k].clone()).collect(),
        equilibria: (0..q).map(|j| large.agents[j].equilibrium.clone()).collect(),
        lambda,
        upsilon,
        lyapunov_form: cert.lyapunov_form,
        slacks: cert.slacks.clone(),
    };
    assert!(check_metzler(&out.upsilon_matrix())?, "tiling preserves the Metzler property of Υ");
    if !check_metzler(&out.lambda_matrix())? || !check_hurwitz(&out.lambda_matrix())? {
        return Err(TransferError::TransferRejected(out.lambda.clone()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RedVerConfig {
    /// Agents per size whose verification queries are spot-checked.
    pub spot_agents: usize,
    /// Sampled states per size for residual comparison.
    pub spot_states: usize,
    pub budget: Budget,
    pub lipschitz_splits: usize,
    pub seed: u64,
}

impl Default for RedVerConfig {
    fn default() -> Self {
        RedVerConfig { spot_agents: 1, spot_states: 200, budget: Budget::default(), lipschitz_splits: 4, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedVerRow {
    pub size: usize,
    pub trained: bool,
    pub train_time: f64,
    pub transfer_time: f64,
    pub spot_check_time: f64,
    pub spot_verdict: Status,
    /// Largest |large − small| residual over sampled mapped states.
    pub max_residual_gap: f64,
    pub residuals_compared: usize,
}

/// Residuals of agent `a` of the small system and of `tau(a)` in the large
/// system, at a large joint state built by placing the small state on the
/// image agents and keeping the other agents at `filler`.
fn mapped_residual_gap(
    small: &System,
    cert: &CoRwaCertificate,
    large: &System,
    lcert: &CoRwaCertificate,
    tau: &Embedding,
    joint: &JointState,
    exo: &[f64],
    filler: &JointState,
) -> Option<f64> {
    let mut lx = filler.clone();
    for (a, &t) in tau.map.iter().enumerate() {
        lx.x[t] = joint.x[a].clone();
    }
    let rate = vec![0.0; small.exo_dim()];
    let mut gap: f64 = 0.0;
    for (a, &t) in tau.map.iter().enumerate() {
        let (_, _, ids_s) = small.network_input(joint, a, exo);
        let (_, _, ids_l) = large.network_input(&lx, t, exo);
        let mapped: Vec<usize> = ids_s.iter().map(|&n| tau.map[n]).collect();
        if mapped != ids_l {
            return None;
        }
        for mode in [Derivative::Continuous, Derivative::Discrete] {
            let cs = cert.clf_residual(Dynamics::True(small), joint, exo, a, mode);
            let cl = lcert.clf_residual(Dynamics::True(large), &lx, exo, t, mode);
            let bs = cert.cbf_residual(Dynamics::True(small), joint, exo, &rate, a, mode);
            let bl = lcert.cbf_residual(Dynamics::True(large), &lx, exo, &rate, t, mode);
            gap = gap.max((cs - cl).abs()).max((bs - bl).abs());
        }
    }
    Some(gap)
}

fn sample_joint(sys: &System, rng: &mut ChaCha8Rng) -> (JointState, Vec<f64>) {
    let x = sys.agents.iter().map(|a| a.domain.sample(rng)).collect();
    (JointState::new(x), sys.exo.domain.sample(rng))
}

/// Trains once at the smallest size and transfers to every larger size,
/// spot-checking residual preservation and a sample of verification
/// queries. `build` constructs the system of a given size.
pub fn red_ver<E: std::fmt::Display>(
    sizes: &[usize],
    build: impl Fn(usize) -> System,
    train: impl FnOnce(&System) -> Result<CoRwaCertificate, E>,
    cfg: &RedVerConfig,
) -> Result<(CoRwaCertificate, Vec<RedVerRow>), TransferError> {
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let Some(&smallest) = sizes.first() else { return Err(TransferError::NoEmbedding) };
    let small = build(smallest);
    let t0 = Instant::now();
    let cert = train(&small).map_err(|e| TransferError::Training(e.to_string()))?;
    let train_time = t0.elapsed().as_secs_f64();
    let small_sig = SystemSignature::of(&small);
    let mut rows = Vec::new();
    for &n in &sizes {
        let large = build(n);
        let t1 = Instant::now();
        let large_sig = SystemSignature::of(&large);
        let tau = find_embedding(&small_sig, &large_sig).ok_or(TransferError::NoEmbedding)?;
        let lcert = transfer_certificate(&cert, &small, &tau, &large)?;
        let transfer_time = t1.elapsed().as_secs_f64();
        let t2 = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(n as u64));
        let mut gap: f64 = 0.0;
        let mut compared = 0;
        for _ in 0..cfg.spot_states {
            let (joint, exo) = sample_joint(&small, &mut rng);
            let (filler, _) = sample_joint(&large, &mut rng);
            if let Some(g) = mapped_residual_gap(&small, &cert, &large, &lcert, &tau, &joint, &exo, &filler) {
                gap = gap.max(g);
                compared += 1;
            }
        }
        let surrogate = crate::dynamics::SurrogateModel::exact(&large);
        let v = Verifier::with_computed_margins(&large, &lcert, &surrogate, cfg.lipschitz_splits)?;
        let mut agents: Vec<usize> = (0..n).collect();
        agents.shuffle(&mut rng);
        let mut outcomes: Vec<VerificationOutcome> = Vec::new();
        for &i in agents.iter().take(cfg.spot_agents) {
            for q in v.queries(i, cfg.budget).iter().filter(|q| q.tag == ConditionTag::LyapDecrement) {
                outcomes.push(v.verify_box(q)?);
            }
        }
        let spot_verdict = if outcomes.is_empty() { Status::Verified } else { join_status(&outcomes) };
        rows.push(RedVerRow {
            size: n,
            trained: n == smallest,
            train_time: if n == smallest { train_time } else { 0.0 },
            transfer_time,
            spot_check_time: t2.elapsed().as_secs_f64(),
            spot_verdict,
            max_residual_gap: gap,
            residuals_compared: compared,
        });
    }
    Ok((cert, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label() -> AgentSignature {
        AgentSignature { dynamics_tag: "platoon".into(), param_hash: "p".into(), max_neighborhood: 2, radius: 1e9 }
    }

    fn chain(n: usize) -> SystemSignature {
        SystemSignature { agents: vec![label(); n], communicable: (0..n).map(|i| if i == 0 { vec![] } else { vec![i - 1] }).collect() }
    }

    #[test]
    fn chain_embeds_as_identity() {
        assert_eq!(find_embedding(&chain(3), &chain(6)).unwrap().map, vec![0, 1, 2]);
        assert_eq!(find_embedding(&chain(4), &chain(4)).unwrap().map, vec![0, 1, 2, 3]);
        assert!(find_embedding(&chain(6), &chain(3)).is_none());
    }

    #[test]
    fn dynamics_mismatch_has_no_embedding() {
        let mut large = chain(6);
        for a in &mut large.agents {
            a.dynamics_tag = "robot".into();
        }
        assert!(find_embedding(&chain(3), &large).is_none());
    }

    #[test]
    fn fingerprint_survives_round_trip() {
        let s = chain(5);
        let back: SystemSignature = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back.fingerprint(), s.fingerprint());
        assert_ne!(chain(4).fingerprint(), s.fingerprint());
    }

    #[test]
    fn chain_classes() {
        let tau = find_embedding(&chain(3), &chain(6)).unwrap();
        assert_eq!(template_classes(&chain(3), &chain(6), &tau).unwrap(), vec![0, 1, 2, 1, 1, 1]);
    }

    fn graph(n: usize, edges: Vec<(usize, usize)>, labels: Vec<u8>) -> SystemSignature {
        let mut comm = vec![vec![]; n];
        for (a, b) in edges {
            if a != b && !comm[a].contains(&b) {
                comm[a].push(b);
            }
        }
        for c in &mut comm {
            c.sort_unstable();
        }
        SystemSignature {
            agents: labels.iter().map(|&l| AgentSignature { param_hash: format!("{}", l % 2), ..label() }).collect(),
            communicable: comm,
        }
    }

    fn arb_graph(max: usize) -> impl Strategy<Value = SystemSignature> {
        (1..=max).prop_flat_map(|n| {
            (prop::collection::vec((0..n, 0..n), 0..(2 * n)), prop::collection::vec(0u8..2, n)).prop_map(move |(e, l)| graph(n, e, l))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn backtracking_agrees_with_brute_force(small in arb_graph(4), large in arb_graph(6)) {
            let a = find_embedding(&small, &large);
            let b = brute_force_embedding(&small, &large);
            prop_assert_eq!(a, b);
        }
    }
}
