use crate::certificate::{CoRwaCertificate, LyapunovForm};
use crate::network::{interval, Interval, IntervalBox};
use crate::system::System;

/// Per-agent Lipschitz and magnitude constants entering the discretization
/// margins.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LipschitzBudget {
    /// Lipschitz constant of the closed loop `x̄_i ↦ f_i + g_i π_i`.
    pub l_x: f64,
    /// Bound on `‖ẋ_i‖`.
    pub m_x: f64,
    /// `sqrt(Σ M_x²)` over the agent, its largest possible neighbors and
    /// the exogenous rate.
    pub m_bar: f64,
    /// Same aggregation of `L_x`.
    pub l_bar: f64,
    pub l_v: f64,
    pub l_vdot: f64,
    pub l_h: f64,
    pub l_hdot: f64,
}

/// `sqrt(Σ v²)`.
pub fn aggregate_rate(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn subdivide(bx: &IntervalBox, per_dim: usize) -> Vec<IntervalBox> {
    let mut out = vec![bx.clone()];
    for k in 0..bx.dim() {
        let mut next = Vec::with_capacity(out.len() * per_dim);
        for b in &out {
            let iv = b[k];
            for s in 0..per_dim {
                let lo = iv.lo + iv.width() * s as f64 / per_dim as f64;
                let hi = if s + 1 == per_dim { iv.hi } else { iv.lo + iv.width() * (s + 1) as f64 / per_dim as f64 };
                let mut c = b.clone();
                c[k] = Interval::new(lo, hi);
                next.push(c);
            }
        }
        out = next;
    }
    out
}

/// Bound on `‖∇V_i‖` over the domain and on the curvature of `V_i`.
fn lyapunov_constants(sys: &System, cert: &CoRwaCertificate, i: usize, splits: usize) -> (f64, f64) {
    let domain = &sys.agents[i].domain;
    let mut l_v: f64 = 0.0;
    let mut feat_dev: f64 = 0.0;
    let star = cert.lyapunov[i].eval(&cert.equilibria[i]);
    for b in subdivide(domain, splits) {
        let (_, g) = cert.lyapunov_interval_gradient(i, &b.0);
        l_v = l_v.max(interval::norm(&g).hi);
        let out = cert.lyapunov[i].ibp(&b.0);
        let d: Vec<Interval> = out.iter().zip(&star).map(|(iv, &s)| *iv - s).collect();
        feat_dev = feat_dev.max(interval::norm(&d).hi);
    }
    let sm = cert.lyapunov[i].smoothness_bound();
    let h_v = match cert.lyapunov_form {
        LyapunovForm::Raw => sm.curvature,
        LyapunovForm::Quadratic { delta } => 2.0 * (sm.lipschitz * sm.lipschitz + feat_dev * sm.curvature + delta),
    };
    (l_v, h_v)
}

/// Computes the budget of every agent. Dynamics and controller bounds are
/// taken over all neighbor pattern boxes; `splits` subdivides each domain
/// axis when bounding `‖∇V_i‖`.
pub fn compute_lipschitz_budget(sys: &System, cert: &CoRwaCertificate, splits: usize) -> Vec<LipschitzBudget> {
    let q = sys.q();
    let xd = |i: usize| sys.xbar_dim(i);
    let exo_box = sys.exo.domain.clone();
    let mut local = vec![(0.0f64, 0.0f64); q];
    for i in 0..q {
        let l_pi = cert.controller[i].lipschitz_upper();
        for pat in sys.patterns(i) {
            let Some(bx) = sys.pattern_box(i, &pat) else { continue };
            let valid = pat.len() + 1;
            let xbar = bx.slice(0, xd(i));
            let db = sys.agents[i].dynamics.bounds(&xbar, valid, &exo_box);
            let u = cert.controller[i].ibp(&bx.0);
            let sup_pi = u.iter().map(|iv| iv.mag().powi(2)).sum::<f64>().sqrt();
            let l_x = db.lip_f + db.lip_g * sup_pi + db.sup_g * l_pi;
            let m_x = db.sup_f + db.sup_g * sup_pi;
            local[i].0 = local[i].0.max(l_x);
            local[i].1 = local[i].1.max(m_x);
        }
    }
    let exo_rate = sys.exo.rate.0.iter().map(|iv| iv.mag()).collect::<Vec<_>>();
    let exo_rate_norm = aggregate_rate(&exo_rate);
    (0..q)
        .map(|i| {
            let mut cands: Vec<usize> = sys.topology.communicable[i].iter().copied().filter(|&j| j != i).collect();
            let k = sys.slots(i) - 1;
            let top = |key: &dyn Fn(usize) -> f64, cands: &mut Vec<usize>| -> Vec<f64> {
                cands.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
                cands.iter().take(k).map(|&j| key(j)).collect()
            };
            let mut ms = vec![local[i].1];
            ms.extend(top(&|j| local[j].1, &mut cands));
            ms.push(exo_rate_norm);
            let mut ls = vec![local[i].0];
            ls.extend(top(&|j| local[j].0, &mut cands));
            let m_bar = aggregate_rate(&ms);
            let l_bar = aggregate_rate(&ls);
            let (l_v, h_v) = lyapunov_constants(sys, cert, i, splits);
            let (l_x, m_x) = local[i];
            let hs = cert.barrier[i].smoothness_bound();
            LipschitzBudget {
                l_x,
                m_x,
                m_bar,
                l_bar,
                l_v,
                l_vdot: h_v * m_x + l_x * l_v,
                l_h: hs.lipschitz,
                l_hdot: hs.curvature * m_bar + l_bar * hs.lipschitz,
            }
        })
        .collect()
}
