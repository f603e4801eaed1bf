//! Branch-and-bound verification of the discrete certificate conditions with
//! explicit discretization and surrogate error margins.

mod concrete;

pub use concrete::{concrete_residual, realize_joint, ConcreteCheck};

use crate::certificate::{CoRwaCertificate, LyapunovForm};
use crate::dynamics::{compute_lipschitz_budget, LipschitzBudget, SurrogateModel};
use crate::network::{interval, Interval, IntervalBox};
use crate::sets::{union_classify, Overlap};
use crate::system::System;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

const PROBES: usize = 8;

/// Environment variable overriding the number of verification threads.
pub const THREADS_ENV: &str = "CORWA_THREADS";

/// Worker threads for verification passes: `CORWA_THREADS` if set to a
/// positive integer, else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("negative or non-finite margin input: {0}")]
    NegativeInput(String),
    #[error("verification budget must allow at least one box")]
    Budget,
    #[error("neighbor pattern {pattern:?} is inconsistent with the query box of agent {agent}")]
    Pattern { agent: usize, pattern: Vec<usize> },
    #[error("query box has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Discretization and surrogate error margins of one agent, in
/// certificate-rate units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorMargins {
    pub e_v: f64,
    pub e_h: f64,
}

/// `e^V = ½T(L_V L_x + L_V̇)M̄_x + L_V ε̂` and
/// `e^h = ½T(L_h L̄_x + L_ḣ)M̄_x + L_h ε̂`, with `ε̂` a Euclidean bound on
/// the surrogate error of the relevant (extended) state derivative.
pub fn compute_margins(b: &LipschitzBudget, t: f64, eps_hat: f64) -> Result<ErrorMargins, VerifyError> {
    let entries = [b.l_x, b.m_x, b.m_bar, b.l_bar, b.l_v, b.l_vdot, b.l_h, b.l_hdot, t, eps_hat];
    if entries.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(VerifyError::NegativeInput(format!("{b:?}, T = {t}, ε̂ = {eps_hat}")));
    }
    Ok(ErrorMargins {
        e_v: 0.5 * t * (b.l_v * b.l_x + b.l_vdot) * b.m_bar + b.l_v * eps_hat,
        e_h: 0.5 * t * (b.l_h * b.l_bar + b.l_hdot) * b.m_bar + b.l_h * eps_hat,
    })
}

/// Margins of every agent. The surrogate error of an extended state is
/// aggregated over its `M_i` rows of `n` coordinates each.
pub fn system_margins(sys: &System, cert: &CoRwaCertificate, surrogate: &SurrogateModel, splits: usize) -> Result<Vec<ErrorMargins>, VerifyError> {
    let budgets = compute_lipschitz_budget(sys, cert, splits);
    let n = sys.n() as f64;
    (0..sys.q())
        .map(|i| {
            let mut worst = surrogate.eps_hat(i);
            for &j in &sys.topology.communicable[i] {
                worst = worst.max(surrogate.eps_hat(j));
            }
            let eps = (sys.slots(i) as f64 * n).sqrt() * worst;
            compute_margins(&budgets[i], sys.period, eps)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionTag {
    LyapDecrement,
    BarrierIncrement,
    LyapPositive,
    BarrierSafePositive,
    BarrierUnsafeNegative,
}

impl ConditionTag {
    pub const ALL: [ConditionTag; 5] = [
        ConditionTag::LyapPositive,
        ConditionTag::BarrierSafePositive,
        ConditionTag::BarrierUnsafeNegative,
        ConditionTag::LyapDecrement,
        ConditionTag::BarrierIncrement,
    ];

    /// Whether a residual value satisfies the condition.
    pub fn holds(self, r: f64) -> bool {
        match self {
            ConditionTag::BarrierUnsafeNegative => r < 0.0,
            _ => r <= 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budget {
    pub max_depth: usize,
    pub max_boxes: usize,
    pub time_limit_secs: Option<f64>,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { max_depth: 20, max_boxes: 100_000, time_limit_secs: None }
    }
}

impl Budget {
    pub fn doubled(self) -> Self {
        Budget {
            max_depth: self.max_depth + 2,
            max_boxes: self.max_boxes.saturating_mul(2),
            time_limit_secs: self.time_limit_secs.map(|t| 2.0 * t),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationQuery {
    pub agent: usize,
    pub tag: ConditionTag,
    pub pattern: Vec<usize>,
    /// Box over the agent's network input (own state only for
    /// `LyapPositive`).
    pub domain: IntervalBox,
    pub margins: ErrorMargins,
    pub budget: Budget,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Verified,
    Counterexample,
    Unknown,
}

/// A concrete joint state violating a condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub input: Vec<f64>,
    pub joint: Vec<Vec<f64>>,
    pub exo: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub agent: usize,
    pub tag: ConditionTag,
    pub pattern: Vec<usize>,
    pub status: Status,
    pub witness: Option<Witness>,
    /// Center of an unresolved box when the outcome is Unknown.
    pub hint: Option<Vec<f64>>,
    pub boxes: usize,
    pub depth: usize,
    pub wall_time: f64,
}

/// Frozen view of a system, certificate, surrogate and margins.
pub struct Verifier<'a> {
    pub sys: &'a System,
    pub cert: &'a CoRwaCertificate,
    pub surrogate: &'a SurrogateModel,
    pub margins: Vec<ErrorMargins>,
    patterns: Vec<Vec<(Vec<usize>, IntervalBox)>>,
}

impl<'a> Verifier<'a> {
    pub fn new(sys: &'a System, cert: &'a CoRwaCertificate, surrogate: &'a SurrogateModel, margins: Vec<ErrorMargins>) -> Self {
        let patterns = (0..sys.q())
            .map(|i| sys.patterns(i).into_iter().filter_map(|p| sys.pattern_box(i, &p).map(|b| (p, b))).collect())
            .collect();
        Verifier { sys, cert, surrogate, margins, patterns }
    }

    /// Verifier with margins computed from the Lipschitz budget.
    pub fn with_computed_margins(sys: &'a System, cert: &'a CoRwaCertificate, surrogate: &'a SurrogateModel, splits: usize) -> Result<Self, VerifyError> {
        let m = system_margins(sys, cert, surrogate, splits)?;
        Ok(Verifier::new(sys, cert, surrogate, m))
    }

    pub fn patterns(&self, i: usize) -> &[(Vec<usize>, IntervalBox)] {
        &self.patterns[i]
    }

    fn closed_loop_interval(&self, i: usize, xin: &[Interval], valid: usize) -> Vec<Interval> {
        let (f, g) = self.surrogate.interval_parts(i, xin, valid);
        let u = self.cert.controller[i].centered_bound(xin);
        let m = u.len();
        f.iter()
            .enumerate()
            .map(|(r, &fr)| (0..m).fold(fr, |acc, c| acc + g[r * m + c] * u[c]))
            .collect()
    }

    /// Enclosures of `F_j` and `h_j` for neighbor `j` whose own state lies
    /// in `row`, over every neighbor pattern `j` may have.
    fn neighbor_context(&self, j: usize, row: &[Interval], exo: &[Interval]) -> Option<(Vec<Interval>, Interval)> {
        let n = self.sys.n();
        let xd = self.sys.xbar_dim(j);
        let mut acc: Option<(Vec<Interval>, Interval)> = None;
        for (pat, pbox) in &self.patterns[j] {
            let mut b = pbox.clone();
            for k in 0..n {
                b[k] = row[k];
            }
            for (k, e) in exo.iter().enumerate() {
                b[xd + k] = *e;
            }
            if !self.sys.box_may_realize(j, pat, &b) {
                continue;
            }
            let f = self.closed_loop_interval(j, &b.0, pat.len() + 1);
            let h = self.cert.barrier[j].centered_bound(&b.0)[0];
            acc = Some(match acc {
                None => (f, h),
                Some((fa, ha)) => (fa.iter().zip(&f).map(|(a, b)| a.hull(*b)).collect(), ha.hull(h)),
            });
        }
        acc
    }

    /// Sound enclosure of the condition residual over `bx`, or `None` when
    /// the box lies outside the region where the condition applies.
    /// Residual sign convention: the condition holds where the residual is
    /// nonpositive (strictly negative for `BarrierUnsafeNegative`).
    pub fn residual_bound(&self, q: &VerificationQuery, bx: &IntervalBox) -> Option<Interval> {
        let sys = self.sys;
        let cert = self.cert;
        let i = q.agent;
        let n = sys.n();
        let valid = q.pattern.len() + 1;
        let geo = sys.geometry(i);
        let agent = &sys.agents[i];
        match q.tag {
            ConditionTag::LyapPositive => {
                let v = cert.lyapunov_interval(i, &bx.0);
                Some(-v)
            }
            ConditionTag::BarrierSafePositive => {
                if agent.initial.classify(bx, valid, &geo) == Overlap::Disjoint {
                    return None;
                }
                let h = cert.barrier[i].centered_bound(&bx.0)[0];
                Some(-h + cert.slacks.eps0)
            }
            ConditionTag::BarrierUnsafeNegative => {
                if union_classify(&agent.unsafe_set, bx, valid, &geo) == Overlap::Disjoint {
                    return None;
                }
                Some(cert.barrier[i].centered_bound(&bx.0)[0])
            }
            ConditionTag::LyapDecrement => {
                if agent.goal.classify(bx, valid, &geo) == Overlap::Inside {
                    return None;
                }
                let t = sys.period;
                let own = &bx.0[..n];
                let f = self.closed_loop_interval(i, &bx.0, valid);
                let hull: Vec<Interval> = own.iter().zip(&f).map(|(x, d)| x.hull(*x + d.scale(t))).collect();
                let (_, grad) = cert.lyapunov_interval_gradient(i, &hull);
                let rate = interval::dot(&grad, &f);
                let mut coupling = cert.lyapunov_interval(i, own).scale(cert.lambda[i][i]);
                for (slot, &j) in q.pattern.iter().enumerate() {
                    let row = &bx.0[(slot + 1) * n..(slot + 2) * n];
                    coupling = coupling + cert.lyapunov_interval(j, row).scale(cert.lambda[i][j]);
                }
                Some(rate - coupling + q.margins.e_v)
            }
            ConditionTag::BarrierIncrement => {
                let h = cert.barrier[i].centered_bound(&bx.0)[0];
                if h.hi < 0.0 {
                    return None;
                }
                let t = sys.period;
                let xd = sys.xbar_dim(i);
                let exo = &bx.0[xd..];
                let mut xdot = vec![Interval::ZERO; bx.dim()];
                xdot[..n].copy_from_slice(&self.closed_loop_interval(i, &bx.0, valid));
                let mut coupling = h.scale(cert.upsilon[i][i]);
                for (slot, &j) in q.pattern.iter().enumerate() {
                    let row = &bx.0[(slot + 1) * n..(slot + 2) * n];
                    let (fj, hj) = self.neighbor_context(j, row, exo)?;
                    xdot[(slot + 1) * n..(slot + 2) * n].copy_from_slice(&fj);
                    coupling = coupling + hj.scale(cert.upsilon[i][j]);
                }
                xdot[xd..].copy_from_slice(&sys.exo.rate.0);
                let hull: Vec<Interval> = bx.0.iter().zip(&xdot).map(|(x, d)| x.hull(*x + d.scale(t))).collect();
                let (_, jac) = cert.barrier[i].interval_jacobian(&hull);
                let rate = interval::dot(&jac[0], &xdot);
                Some(-(rate - coupling - q.margins.e_h))
            }
        }
    }

    /// Branch-and-bound over the query box: prove the condition, find a
    /// concrete violation at a box center, or split along the widest
    /// coordinate until the budget runs out.
    pub fn verify_box(&self, q: &VerificationQuery) -> Result<VerificationOutcome, VerifyError> {
        if q.budget.max_boxes == 0 {
            return Err(VerifyError::Budget);
        }
        let expected = if q.tag == ConditionTag::LyapPositive { self.sys.n() } else { self.sys.input_dim(q.agent) };
        if q.domain.dim() != expected {
            return Err(VerifyError::Dimension { expected, got: q.domain.dim() });
        }
        let start = Instant::now();
        let mut out = VerificationOutcome {
            agent: q.agent,
            tag: q.tag,
            pattern: q.pattern.clone(),
            status: Status::Verified,
            witness: None,
            hint: None,
            boxes: 0,
            depth: 0,
            wall_time: 0.0,
        };
        if q.tag == ConditionTag::LyapPositive && matches!(self.cert.lyapunov_form, LyapunovForm::Quadratic { .. }) {
            // positive definite by construction
            return Ok(out);
        }
        if q.tag != ConditionTag::LyapPositive && !self.sys.box_may_realize(q.agent, &q.pattern, &q.domain) {
            return Ok(out);
        }
        let mut stack = vec![(q.domain.clone(), 0usize)];
        let mut unresolved = false;
        while let Some((bx, depth)) = stack.pop() {
            if out.boxes >= q.budget.max_boxes || q.budget.time_limit_secs.is_some_and(|s| start.elapsed().as_secs_f64() > s) {
                unresolved = true;
                out.hint.get_or_insert_with(|| bx.center());
                break;
            }
            out.boxes += 1;
            out.depth = out.depth.max(depth);
            if q.tag != ConditionTag::LyapPositive && depth > 0 && !self.sys.box_may_realize(q.agent, &q.pattern, &bx) {
                continue;
            }
            let bx = if q.tag == ConditionTag::LyapPositive || q.pattern.is_empty() {
                bx
            } else {
                match self.sys.contract_to_pattern(q.agent, &q.pattern, &bx) {
                    Some(b) => b,
                    None => continue,
                }
            };
            let Some(bound) = self.residual_bound(q, &bx) else { continue };
            if q.tag.holds(bound.hi) {
                continue;
            }
            let c = bx.center();
            if let Some(w) = self.probe(q, &bx, &c, out.boxes as u64) {
                assert!(!q.tag.holds(w.residual), "witness must violate its condition");
                out.status = Status::Counterexample;
                out.witness = Some(w);
                out.hint = None;
                out.wall_time = start.elapsed().as_secs_f64();
                return Ok(out);
            }
            if depth >= q.budget.max_depth || bx.max_width() <= 0.0 {
                unresolved = true;
                if out.hint.is_none() {
                    out.hint = Some(self.applicable_point(q, &bx, c, out.boxes as u64));
                }
                continue;
            }
            let (a, b) = bx.bisect(bx.widest_dim());
            stack.push((b, depth + 1));
            stack.push((a, depth + 1));
        }
        if unresolved {
            out.status = Status::Unknown;
        }
        out.wall_time = start.elapsed().as_secs_f64();
        Ok(out)
    }

    /// A point of `bx` where the query applies, falling back to `c`.
    fn applicable_point(&self, q: &VerificationQuery, bx: &IntervalBox, c: Vec<f64>, salt: u64) -> Vec<f64> {
        if concrete_residual(self, q, &c) != ConcreteCheck::NotApplicable {
            return c;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(salt);
        (0..PROBES)
            .map(|_| bx.sample(&mut rng))
            .find(|x| concrete_residual(self, q, x) != ConcreteCheck::NotApplicable)
            .unwrap_or(c)
    }

    /// Concrete check at the box center; when the center does not realize
    /// the query's pattern, a few pseudo-random points of the box are tried.
    fn probe(&self, q: &VerificationQuery, bx: &IntervalBox, c: &[f64], salt: u64) -> Option<Witness> {
        match concrete_residual(self, q, c) {
            ConcreteCheck::Violated(w) => return Some(w),
            ConcreteCheck::Holds(_) => return None,
            ConcreteCheck::NotApplicable => {}
        }
        let mut rng = ChaCha8Rng::seed_from_u64(salt);
        for _ in 0..PROBES {
            let x = bx.sample(&mut rng);
            match concrete_residual(self, q, &x) {
                ConcreteCheck::Violated(w) => return Some(w),
                ConcreteCheck::Holds(_) => return None,
                ConcreteCheck::NotApplicable => {}
            }
        }
        None
    }

    /// Queries of one agent: every condition over every realizable neighbor
    /// pattern.
    pub fn queries(&self, i: usize, budget: Budget) -> Vec<VerificationQuery> {
        let sys = self.sys;
        let margins = self.margins[i];
        let mut out = Vec::new();
        for tag in ConditionTag::ALL {
            if tag == ConditionTag::LyapPositive {
                out.push(VerificationQuery { agent: i, tag, pattern: vec![], domain: sys.agents[i].domain.clone(), margins, budget });
                continue;
            }
            for (pat, pbox) in &self.patterns[i] {
                let mut domain = pbox.clone();
                if tag == ConditionTag::BarrierSafePositive {
                    let Some(init) = sys.agents[i].initial.own_bounding_box(&sys.agents[i].domain) else {
                        out.push(VerificationQuery { agent: i, tag, pattern: pat.clone(), domain, margins, budget });
                        continue;
                    };
                    let mut ok = true;
                    for k in 0..sys.n() {
                        match domain[k].intersect(init[k]) {
                            Some(iv) => domain[k] = iv,
                            None => ok = false,
                        }
                    }
                    if !ok || !sys.box_may_realize(i, pat, &domain) {
                        continue;
                    }
                }
                out.push(VerificationQuery { agent: i, tag, pattern: pat.clone(), domain, margins, budget });
            }
        }
        out
    }

    pub fn verify_agent(&self, i: usize, budget: Budget) -> Result<Vec<VerificationOutcome>, VerifyError> {
        self.queries(i, budget).iter().map(|q| self.verify_box(q)).collect()
    }

    /// Every query of every agent, spread over `worker_threads()` threads.
    pub fn verify_all(&self, budget: Budget) -> Result<VerificationReport, VerifyError> {
        self.verify_all_with(budget, worker_threads())
    }

    /// Every query of every agent on `threads` threads. Outcomes keep query
    /// order.
    pub fn verify_all_with(&self, budget: Budget, threads: usize) -> Result<VerificationReport, VerifyError> {
        let queries: Vec<VerificationQuery> = (0..self.sys.q()).flat_map(|i| self.queries(i, budget)).collect();
        let threads = threads.min(queries.len()).max(1);
        let outcomes: Vec<Result<VerificationOutcome, VerifyError>> = if threads == 1 {
            queries.iter().map(|q| self.verify_box(q)).collect()
        } else {
            let next = AtomicUsize::new(0);
            let mut slots: Vec<Option<Result<VerificationOutcome, VerifyError>>> = Vec::new();
            slots.resize_with(queries.len(), || None);
            let done = std::thread::scope(|scope| {
                let handles: Vec<_> = (0..threads)
                    .map(|_| {
                        scope.spawn(|| {
                            let mut mine = Vec::new();
                            loop {
                                let k = next.fetch_add(1, Ordering::Relaxed);
                                if k >= queries.len() {
                                    break mine;
                                }
                                mine.push((k, self.verify_box(&queries[k])));
                            }
                        })
                    })
                    .collect();
                handles.into_iter().flat_map(|h| h.join().expect("verification worker panicked")).collect::<Vec<_>>()
            });
            for (k, r) in done {
                slots[k] = Some(r);
            }
            slots.into_iter().map(|r| r.expect("every query is processed")).collect()
        };
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(VerificationReport::from_outcomes(self.sys.q(), outcomes, self.margins.clone()))
    }
}

/// Conservative join: any counterexample wins, then any unknown.
pub fn join_status(outcomes: &[VerificationOutcome]) -> Status {
    if outcomes.iter().any(|o| o.status == Status::Counterexample) {
        Status::Counterexample
    } else if outcomes.iter().any(|o| o.status == Status::Unknown) {
        Status::Unknown
    } else {
        Status::Verified
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub queries: Vec<VerificationOutcome>,
    pub agents: Vec<Status>,
    pub verdict: Status,
    pub margins: Vec<ErrorMargins>,
}

impl VerificationReport {
    pub fn from_outcomes(q: usize, queries: Vec<VerificationOutcome>, margins: Vec<ErrorMargins>) -> Self {
        let agents: Vec<Status> = (0..q)
            .map(|i| {
                let mine: Vec<VerificationOutcome> = queries.iter().filter(|o| o.agent == i).cloned().collect();
                join_status(&mine)
            })
            .collect();
        let verdict = join_status(&queries);
        VerificationReport { queries, agents, verdict, margins }
    }

    pub fn witnesses(&self) -> Vec<(ConditionTag, &Witness)> {
        self.queries.iter().filter_map(|o| o.witness.as_ref().map(|w| (o.tag, w))).collect()
    }

    pub fn count(&self, status: Status) -> usize {
        self.queries.iter().filter(|o| o.status == status).count()
    }
}

#[cfg(test)]
mod tests;
