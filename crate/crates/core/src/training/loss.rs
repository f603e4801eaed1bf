//! Training loss over discrete certificate residuals and its gradient with
//! respect to all network weights and the raw coupling parameters.

use super::dataset::Sample;
use crate::certificate::{CoRwaCertificate, LyapunovForm};
use crate::network::{sigmoid, softplus, FeedForwardNet, Trace};
use crate::system::System;
use crate::verifier::ErrorMargins;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Smallest magnitude of a diagonal entry of Λ.
pub const LAMBDA_DIAG_MIN: f64 = 1e-3;

/// Inverse of softplus for positive arguments.
pub fn inv_softplus(y: f64) -> f64 {
    let y = y.max(1e-12);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Offsets of every trainable quantity in the flat parameter vector.
///
/// Coupling entries are reparametrized: `λ_ii = -(softplus(a_i) + 1e-3)`,
/// `λ_ij = softplus(b_ij)`, `μ_ii = c_i`, `μ_ij = softplus(d_ij)` for
/// communicable pairs. Other entries stay zero.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub lyapunov: Vec<Range<usize>>,
    pub barrier: Vec<Range<usize>>,
    pub controller: Vec<Range<usize>>,
    pub lambda_diag: usize,
    pub upsilon_diag: usize,
    /// Communicable pairs `(i, j)`, `i ≠ j`.
    pub pairs: Vec<(usize, usize)>,
    pub lambda_off: usize,
    pub upsilon_off: usize,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(sys: &System, cert: &CoRwaCertificate) -> Self {
        let q = cert.q();
        let mut k = 0;
        let mut ranges = |nets: &[FeedForwardNet]| -> Vec<Range<usize>> {
            nets.iter()
                .map(|n| {
                    let r = k..k + n.num_params();
                    k = r.end;
                    r
                })
                .collect()
        };
        let lyapunov = ranges(&cert.lyapunov);
        let barrier = ranges(&cert.barrier);
        let controller = ranges(&cert.controller);
        let pairs: Vec<(usize, usize)> = (0..q)
            .flat_map(|i| sys.topology.communicable[i].iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
            .collect();
        let lambda_diag = k;
        let upsilon_diag = lambda_diag + q;
        let lambda_off = upsilon_diag + q;
        let upsilon_off = lambda_off + pairs.len();
        let total = upsilon_off + pairs.len();
        ParamLayout { lyapunov, barrier, controller, lambda_diag, upsilon_diag, pairs, lambda_off, upsilon_off, total }
    }

    pub fn pack(&self, cert: &CoRwaCertificate) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        for i in 0..cert.q() {
            p[self.lyapunov[i].clone()].copy_from_slice(&cert.lyapunov[i].params());
            p[self.barrier[i].clone()].copy_from_slice(&cert.barrier[i].params());
            p[self.controller[i].clone()].copy_from_slice(&cert.controller[i].params());
            p[self.lambda_diag + i] = inv_softplus(-cert.lambda[i][i] - LAMBDA_DIAG_MIN);
            p[self.upsilon_diag + i] = cert.upsilon[i][i];
        }
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            p[self.lambda_off + k] = inv_softplus(cert.lambda[i][j]);
            p[self.upsilon_off + k] = inv_softplus(cert.upsilon[i][j]);
        }
        p
    }

    /// Writes `p` into `cert`. Coupling entries whose raw value equals the
    /// one in `base` keep their current value exactly.
    pub fn unpack(&self, p: &[f64], base: &[f64], cert: &mut CoRwaCertificate) {
        for i in 0..cert.q() {
            cert.lyapunov[i].set_params(&p[self.lyapunov[i].clone()]);
            cert.barrier[i].set_params(&p[self.barrier[i].clone()]);
            cert.controller[i].set_params(&p[self.controller[i].clone()]);
            let a = self.lambda_diag + i;
            if p[a] != base[a] {
                cert.lambda[i][i] = -(softplus(p[a]) + LAMBDA_DIAG_MIN);
            }
            cert.upsilon[i][i] = p[self.upsilon_diag + i];
        }
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let b = self.lambda_off + k;
            if p[b] != base[b] {
                cert.lambda[i][j] = softplus(p[b]);
            }
            let d = self.upsilon_off + k;
            if p[d] != base[d] {
                cert.upsilon[i][j] = softplus(p[d]);
            }
        }
    }

    fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        self.pairs.iter().position(|&p| p == (i, j))
    }
}

/// Loss weights and slacks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ctrl: f64,
    pub clf: f64,
    pub cbf: f64,
    pub eps0: f64,
    pub eps: [f64; 5],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ctrl: f64,
    pub clf: f64,
    pub cbf: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown) {
        self.ctrl += o.ctrl;
        self.clf += o.clf;
        self.cbf += o.cbf;
        self.total += o.total;
    }

    fn scale(&mut self, k: f64) {
        self.ctrl *= k;
        self.clf *= k;
        self.cbf *= k;
        self.total *= k;
    }
}

/// `V_i` evaluation that shares the equilibrium pass across a batch.
struct LyapCtx<'a> {
    net: &'a FeedForwardNet,
    delta: Option<f64>,
    xs: &'a [f64],
    star_trace: Option<Trace>,
    star_cot: Vec<f64>,
    range: Range<usize>,
}

impl<'a> LyapCtx<'a> {
    fn new(cert: &'a CoRwaCertificate, i: usize, range: Range<usize>) -> Self {
        let net = &cert.lyapunov[i];
        let xs = &cert.equilibria[i][..];
        let (delta, star_trace) = match cert.lyapunov_form {
            LyapunovForm::Raw => (None, None),
            LyapunovForm::Quadratic { delta } => (Some(delta), Some(net.trace(xs))),
        };
        LyapCtx { net, delta, xs, star_trace, star_cot: vec![0.0; net.output_dim()], range }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let out = self.net.eval(x);
        match (&self.star_trace, self.delta) {
            (Some(st), Some(delta)) => {
                let feat: f64 = out.iter().zip(&st.output).map(|(a, b)| (a - b).powi(2)).sum();
                feat + delta * x.iter().zip(self.xs).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            }
            _ => out[0],
        }
    }

    /// Accumulates `cot · ∂V(x)/∂θ` and returns `cot · ∂V/∂x`.
    fn backward(&mut self, x: &[f64], cot: f64, grad: &mut [f64]) -> Vec<f64> {
        let grad = &mut grad[self.range.clone()];
        let t = self.net.trace(x);
        match (&self.star_trace, self.delta) {
            (Some(st), Some(delta)) => {
                let c: Vec<f64> = t.output.iter().zip(&st.output).map(|(a, b)| 2.0 * cot * (a - b)).collect();
                for (s, v) in self.star_cot.iter_mut().zip(&c) {
                    *s -= v;
                }
                let mut gx = self.net.backward(&t, &c, Some(grad));
                for ((g, a), b) in gx.iter_mut().zip(x).zip(self.xs) {
                    *g += 2.0 * cot * delta * (a - b);
                }
                gx
            }
            _ => self.net.backward(&t, &[cot], Some(grad)),
        }
    }

    fn finish(&self, grad: &mut [f64]) {
        if let Some(st) = &self.star_trace {
            if self.star_cot.iter().any(|&v| v != 0.0) {
                self.net.backward(st, &self.star_cot, Some(&mut grad[self.range.clone()]));
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `F = f + g u`, with `g` row-major `n × m`.
fn closed_loop(f: &[f64], g: &[f64], u: &[f64]) -> Vec<f64> {
    let m = u.len();
    f.iter().enumerate().map(|(r, fr)| fr + dot(&g[r * m..(r + 1) * m], u)).collect()
}

/// `gᵀ w` for row-major `g`.
fn gt_times(g: &[f64], w: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (r, wr) in w.iter().enumerate() {
        for c in 0..m {
            out[c] += g[r * m + c] * wr;
        }
    }
    out
}

/// Mean loss over `batch` (weighted by sample weights) and, when `grad` is
/// given, its gradient with respect to the flat parameters of `layout`.
pub fn loss_and_grad(
    sys: &System,
    cert: &CoRwaCertificate,
    layout: &ParamLayout,
    params: &[f64],
    batch: &[&Sample],
    weights: &LossWeights,
    margins: &[ErrorMargins],
    mut grad: Option<&mut [f64]>,
) -> LossBreakdown {
    let q = cert.q();
    let n = sys.n();
    let t = sys.period;
    let wsum: f64 = batch.iter().map(|s| s.weight).sum();
    let mut total = LossBreakdown::default();
    if batch.is_empty() || wsum <= 0.0 {
        return total;
    }
    let mut lyap: Vec<LyapCtx> = (0..q).map(|i| LyapCtx::new(cert, i, layout.lyapunov[i].clone())).collect();
    let mut scratch = vec![0.0; layout.total];
    let [e1, _, e3, e4, e5] = weights.eps;
    for s in batch {
        let w = s.weight / wsum;
        let mut part = LossBreakdown::default();
        let traces: Vec<Trace> = (0..q).map(|i| cert.controller[i].trace(&s.agents[i].xin)).collect();
        let us: Vec<&[f64]> = traces.iter().map(|t| &t.output[..]).collect();
        let fs: Vec<Vec<f64>> = (0..q).map(|i| closed_loop(&s.agents[i].f, &s.agents[i].g, us[i])).collect();
        let mut cot_u: Vec<Vec<f64>> = us.iter().map(|u| vec![0.0; u.len()]).collect();
        let hs: Vec<f64> = (0..q).map(|i| cert.barrier_value(i, &s.agents[i].xin)).collect();
        let want = grad.is_some();
        let g = &mut scratch;
        for i in 0..q {
            let a = &s.agents[i];
            let m = us[i].len();
            if let Some(nom) = &s.nominal {
                let diff: Vec<f64> = us[i].iter().zip(&nom[i]).map(|(u, v)| u - v).collect();
                part.ctrl += weights.ctrl * dot(&diff, &diff);
                for (c, d) in cot_u[i].iter_mut().zip(&diff) {
                    *c += w * weights.ctrl * 2.0 * d;
                }
            }
            if !a.in_goal {
                let x = &s.joint.x[i];
                let xn: Vec<f64> = x.iter().zip(&fs[i]).map(|(p, d)| p + t * d).collect();
                let vx = lyap[i].value(x);
                let vn = lyap[i].value(&xn);
                let vj: Vec<f64> = a.ids.iter().map(|&j| lyap[j].value(&s.joint.x[j])).collect();
                let lam = &cert.lambda[i];
                let r = (vn - vx) / t - lam[i] * vx - a.ids.iter().zip(&vj).map(|(&j, v)| lam[j] * v).sum::<f64>()
                    + margins[i].e_v
                    + e1;
                if r > 0.0 {
                    part.clf += weights.clf * r;
                    if want {
                        let c = w * weights.clf;
                        let gxn = lyap[i].backward(&xn, c / t, g);
                        lyap[i].backward(x, -c / t - c * lam[i], g);
                        for (&j, v) in a.ids.iter().zip(&vj) {
                            lyap[j].backward(&s.joint.x[j], -c * lam[j], g);
                            if let Some(k) = layout.pair_index(i, j) {
                                g[layout.lambda_off + k] += -c * v * sigmoid(params[layout.lambda_off + k]);
                            }
                        }
                        g[layout.lambda_diag + i] += c * vx * sigmoid(params[layout.lambda_diag + i]);
                        let du = gt_times(&a.g, &gxn, m);
                        for (cu, d) in cot_u[i].iter_mut().zip(&du) {
                            *cu += t * d;
                        }
                    }
                }
            }
            if hs[i] >= -e3 {
                let xd = sys.xbar_dim(i);
                let mut xn = a.xin.clone();
                for k in 0..n {
                    xn[k] += t * fs[i][k];
                }
                for (slot, &j) in a.ids.iter().enumerate() {
                    for k in 0..n {
                        xn[(slot + 1) * n + k] += t * fs[j][k];
                    }
                }
                debug_assert!(xd <= xn.len());
                let hn = cert.barrier_value(i, &xn);
                let mu = &cert.upsilon[i];
                let rb = (hn - hs[i]) / t - mu[i] * hs[i] - a.ids.iter().map(|&j| mu[j] * hs[j]).sum::<f64>();
                let l = -rb + margins[i].e_h + e3;
                if l > 0.0 {
                    part.cbf += weights.cbf * l;
                    if want {
                        let c = w * weights.cbf;
                        let bn = &cert.barrier[i];
                        let range = layout.barrier[i].clone();
                        let tn = bn.trace(&xn);
                        let gxn = bn.backward(&tn, &[-c / t], Some(&mut g[range.clone()]));
                        let t0 = bn.trace(&a.xin);
                        bn.backward(&t0, &[c / t + c * mu[i]], Some(&mut g[range]));
                        g[layout.upsilon_diag + i] += c * hs[i];
                        for &j in &a.ids {
                            let tj = cert.barrier[j].trace(&s.agents[j].xin);
                            let rj = layout.barrier[j].clone();
                            cert.barrier[j].backward(&tj, &[c * mu[j]], Some(&mut g[rj]));
                            if let Some(k) = layout.pair_index(i, j) {
                                g[layout.upsilon_off + k] += c * hs[j] * sigmoid(params[layout.upsilon_off + k]);
                            }
                        }
                        let du = gt_times(&a.g, &gxn[..n], m);
                        for (cu, d) in cot_u[i].iter_mut().zip(&du) {
                            *cu += t * d;
                        }
                        for (slot, &j) in a.ids.iter().enumerate() {
                            let mj = us[j].len();
                            let du = gt_times(&s.agents[j].g, &gxn[(slot + 1) * n..(slot + 2) * n], mj);
                            for (cu, d) in cot_u[j].iter_mut().zip(&du) {
                                *cu += t * d;
                            }
                        }
                    }
                }
            }
            if a.in_unsafe {
                let l = hs[i] + weights.eps0 + e4;
                if l > 0.0 {
                    part.cbf += weights.cbf * l;
                    if want {
                        let c = w * weights.cbf;
                        let t0 = cert.barrier[i].trace(&a.xin);
                        cert.barrier[i].backward(&t0, &[c], Some(&mut g[layout.barrier[i].clone()]));
                    }
                }
            }
            if a.in_initial && !a.in_unsafe {
                let l = -hs[i] + weights.eps0 + e5;
                if l > 0.0 {
                    part.cbf += weights.cbf * l;
                    if want {
                        let c = w * weights.cbf;
                        let t0 = cert.barrier[i].trace(&a.xin);
                        cert.barrier[i].backward(&t0, &[-c], Some(&mut g[layout.barrier[i].clone()]));
                    }
                }
            }
        }
        if want {
            for i in 0..q {
                if cot_u[i].iter().any(|&v| v != 0.0) {
                    let r = layout.controller[i].clone();
                    cert.controller[i].backward(&traces[i], &cot_u[i], Some(&mut g[r]));
                }
            }
        }
        part.total = part.ctrl + part.clf + part.cbf;
        part.scale(w);
        total.add(&part);
    }
    if let Some(out) = grad.as_deref_mut() {
        for ctx in &lyap {
            ctx.finish(&mut scratch);
        }
        for (o, s) in out.iter_mut().zip(&scratch) {
            *o += s;
        }
    }
    total
}
