use super::{DynamicsError, DynamicsModel};
use crate::network::{Activation, FeedForwardNet, Interval, IntervalBox};
use crate::optim::{Optimizer, OptimizerKind};
use crate::system::System;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    /// Use the analytic model instead of fitted networks (`ε̂ = 0`).
    pub exact: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Grid points per varying coordinate, reduced as needed to respect
    /// `max_points` per neighbor pattern.
    pub grid_per_dim: usize,
    pub max_points: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            exact: false,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            grid_per_dim: 7,
            max_points: 20_000,
            epochs: 200,
            batch_size: 64,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSurrogate {
    Exact { model: DynamicsModel },
    Neural { f: FeedForwardNet, g: FeedForwardNet, eps_hat: f64, grid_points: usize },
}

/// Per-agent surrogates `f̃_i`, `g̃_i` over the extended network input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub agents: Vec<AgentSurrogate>,
    pub state_dim: usize,
    pub xbar_dims: Vec<usize>,
}

impl SurrogateModel {
    /// Analytic surrogates for every agent.
    pub fn exact(sys: &System) -> Self {
        SurrogateModel {
            agents: sys.agents.iter().map(|a| AgentSurrogate::Exact { model: a.dynamics.clone() }).collect(),
            state_dim: sys.n(),
            xbar_dims: (0..sys.q()).map(|i| sys.xbar_dim(i)).collect(),
        }
    }

    /// Observed `‖f + g u - f̃ - g̃ u‖_∞` maximized over the control box.
    pub fn eps_hat(&self, i: usize) -> f64 {
        match &self.agents[i] {
            AgentSurrogate::Exact { .. } => 0.0,
            AgentSurrogate::Neural { eps_hat, .. } => *eps_hat,
        }
    }

    pub fn parts(&self, i: usize, xin: &[f64], valid: usize) -> (Vec<f64>, Vec<f64>) {
        let xd = self.xbar_dims[i];
        match &self.agents[i] {
            AgentSurrogate::Exact { model } => {
                (model.drift(&xin[..xd], valid, &xin[xd..]), model.input_matrix(&xin[..xd], valid, &xin[xd..]))
            }
            AgentSurrogate::Neural { f, g, .. } => (f.eval(xin), g.eval(xin)),
        }
    }

    pub fn derivative(&self, i: usize, xin: &[f64], valid: usize, u: &[f64]) -> Vec<f64> {
        let (mut f, g) = self.parts(i, xin, valid);
        let m = u.len();
        for (r, fr) in f.iter_mut().enumerate() {
            for (c, uc) in u.iter().enumerate() {
                *fr += g[r * m + c] * uc;
            }
        }
        f
    }

    /// Enclosures of `f̃_i` and `g̃_i` over a box of network inputs.
    pub fn interval_parts(&self, i: usize, xin: &[Interval], valid: usize) -> (Vec<Interval>, Vec<Interval>) {
        let xd = self.xbar_dims[i];
        match &self.agents[i] {
            AgentSurrogate::Exact { model } => model.interval_parts(&xin[..xd], valid, &xin[xd..]),
            AgentSurrogate::Neural { f, g, .. } => (f.ibp(xin), g.ibp(xin)),
        }
    }
}

/// Regular grid over a box; degenerate coordinates get a single point.
pub(crate) fn grid(bx: &IntervalBox, per_dim: usize, max_points: usize) -> Vec<Vec<f64>> {
    let varying = bx.0.iter().filter(|iv| iv.width() > 0.0).count();
    let mut k = per_dim.max(2);
    while k > 2 && (k as f64).powi(varying as i32) > max_points as f64 {
        k -= 1;
    }
    let axes: Vec<Vec<f64>> = bx
        .0
        .iter()
        .map(|iv| {
            if iv.width() > 0.0 {
                (0..k).map(|s| iv.lo + iv.width() * s as f64 / (k - 1) as f64).collect()
            } else {
                vec![iv.lo]
            }
        })
        .collect();
    let mut pts = vec![Vec::with_capacity(bx.dim())];
    for axis in &axes {
        let mut next = Vec::with_capacity(pts.len() * axis.len());
        for p in &pts {
            for &v in axis {
                let mut c = p.clone();
                c.push(v);
                next.push(c);
            }
        }
        pts = next;
    }
    pts
}

/// Exact maximum over `u ∈ U` of `‖Δf + Δg u‖_∞`.
pub(crate) fn max_error_over_controls(df: &[f64], dg: &[f64], control: &IntervalBox) -> f64 {
    let m = control.dim();
    df.iter()
        .enumerate()
        .map(|(r, &d)| {
            let mut centre = d;
            let mut spread = 0.0;
            for c in 0..m {
                centre += dg[r * m + c] * control[c].mid();
                spread += dg[r * m + c].abs() * control[c].radius();
            }
            centre.abs() + spread
        })
        .fold(0.0, f64::max)
}

struct Sample {
    x: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
}

fn fit_net(net: &mut FeedForwardNet, data: &[Sample], target: impl Fn(&Sample) -> &[f64], cfg: &SurrogateConfig, rng: &mut ChaCha8Rng) -> Result<f64, DynamicsError> {
    let dim = net.output_dim();
    let mut scale = vec![1e-9f64; dim];
    for s in data {
        for (k, v) in target(s).iter().enumerate() {
            scale[k] = scale[k].max(v.abs());
        }
    }
    let mut params = net.params();
    let mut opt = Optimizer::new(OptimizerKind::Adam, params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss = f64::INFINITY;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let lr = cfg.learning_rate * 0.5f64.powi((4 * epoch / cfg.epochs.max(1)) as i32);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut grad = vec![0.0; params.len()];
            for &k in batch {
                let t = net.trace(&data[k].x);
                let y = target(&data[k]);
                let cot: Vec<f64> = (0..dim).map(|c| (t.output[c] - y[c]) / (scale[c] * scale[c])).collect();
                total += (0..dim).map(|c| ((t.output[c] - y[c]) / scale[c]).powi(2)).sum::<f64>();
                net.backward(&t, &cot, Some(&mut grad));
            }
            let inv = 2.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            opt.step(&mut params, &grad, lr);
            net.set_params(&params);
        }
        loss = total / data.len() as f64;
        if !loss.is_finite() {
            return Err(DynamicsError::Divergence { loss });
        }
    }
    Ok(loss)
}

/// Fits `f̃_i` and `g̃_i` on regular grids over every neighbor pattern box of
/// each agent and records the observed error bound on the same grids.
pub fn fit_surrogate(sys: &System, cfg: &SurrogateConfig) -> Result<SurrogateModel, DynamicsError> {
    if cfg.exact {
        return Ok(SurrogateModel::exact(sys));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut agents = Vec::with_capacity(sys.q());
    for i in 0..sys.q() {
        let model = &sys.agents[i].dynamics;
        let xd = sys.xbar_dim(i);
        let mut data = Vec::new();
        for pat in sys.patterns(i) {
            let Some(bx) = sys.pattern_box(i, &pat) else { continue };
            for x in grid(&bx, cfg.grid_per_dim, cfg.max_points) {
                let valid = pat.len() + 1;
                let f = model.drift(&x[..xd], valid, &x[xd..]);
                let g = model.input_matrix(&x[..xd], valid, &x[xd..]);
                data.push(Sample { x, f, g });
            }
        }
        if data.is_empty() {
            return Err(DynamicsError::Config(format!("agent {i}: no realizable neighbor pattern")));
        }
        let (off, sc) = sys.input_normalization(i);
        let n = sys.n();
        let m = sys.m(i);
        let mk = |out: usize, rng: &mut ChaCha8Rng| {
            FeedForwardNet::random(sys.input_dim(i), &cfg.hidden, out, cfg.activation, Activation::Identity, rng)
                .with_input_map(off.clone(), sc.clone())
        };
        let mut fnet = mk(n, &mut rng);
        let mut gnet = mk(n * m, &mut rng);
        let lf = fit_net(&mut fnet, &data, |s| &s.f, cfg, &mut rng)?;
        let lg = fit_net(&mut gnet, &data, |s| &s.g, cfg, &mut rng)?;
        tracing::debug!(agent = i, loss_f = lf, loss_g = lg, points = data.len(), "surrogate fitted");
        let control = &sys.agents[i].control;
        let mut eps_hat: f64 = 0.0;
        for s in &data {
            let df: Vec<f64> = s.f.iter().zip(fnet.eval(&s.x)).map(|(a, b)| a - b).collect();
            let dg: Vec<f64> = s.g.iter().zip(gnet.eval(&s.x)).map(|(a, b)| a - b).collect();
            eps_hat = eps_hat.max(max_error_over_controls(&df, &dg, control));
        }
        agents.push(AgentSurrogate::Neural { f: fnet, g: gnet, eps_hat, grid_points: data.len() });
    }
    Ok(SurrogateModel { agents, state_dim: sys.n(), xbar_dims: (0..sys.q()).map(|i| sys.xbar_dim(i)).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn control_maximum_matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let control = IntervalBox::new(&[-1.0, 0.0], &[2.0, 3.0]);
        for _ in 0..200 {
            let df: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dg: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut best: f64 = 0.0;
            for u0 in [-1.0, 2.0] {
                for u1 in [0.0, 3.0] {
                    for r in 0..3 {
                        best = best.max((df[r] + dg[2 * r] * u0 + dg[2 * r + 1] * u1).abs());
                    }
                }
            }
            let got = max_error_over_controls(&df, &dg, &control);
            assert!((got - best).abs() < 1e-12, "{got} {best}");
        }
    }

    #[test]
    fn grid_respects_budget_and_degenerate_axes() {
        let bx = IntervalBox(vec![Interval::new(0.0, 1.0), Interval::point(5.0), Interval::new(-1.0, 1.0)]);
        let g = grid(&bx, 5, 100);
        assert_eq!(g.len(), 25);
        assert!(g.iter().all(|p| p[1] == 5.0 && bx.contains(p)));
        assert_eq!(grid(&bx, 50, 100).len(), 100);
    }
}
