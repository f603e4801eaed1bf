//! Interval bound propagation, interval Jacobians, and global smoothness
//! bounds (Lipschitz constant and second-derivative bound).

use super::interval::{Interval, IntervalBox};
use super::{Activation, FeedForwardNet, Layer, NetError};

/// Global bounds `‖Dy‖ ≤ lipschitz` and `‖D²y[v, v]‖ ≤ curvature · ‖v‖²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothnessBound {
    pub lipschitz: f64,
    pub curvature: f64,
}

/// Largest singular value of a row-major `rows × cols` matrix by power
/// iteration on `WᵀW`, run until the eigen-residual falls below 1e-9
/// (relative). The returned value is nudged upward by the residual.
pub fn spectral_norm(weight: &[f64], rows: usize, cols: usize) -> f64 {
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let frob = weight.iter().map(|w| w * w).sum::<f64>().sqrt();
    if frob == 0.0 {
        return 0.0;
    }
    if rows == 1 || cols == 1 {
        return frob;
    }
    // deterministic, generic start vector
    let mut v: Vec<f64> = (0..cols).map(|k| 1.0 + 0.1 * ((k * 7919) % 13) as f64).collect();
    normalize(&mut v);
    let mut wv = vec![0.0; rows];
    let mut wtwv = vec![0.0; cols];
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..20_000 {
        mat_vec(weight, rows, cols, &v, &mut wv);
        mat_t_vec(weight, rows, cols, &wv, &mut wtwv);
        lambda = dot(&v, &wtwv);
        residual = wtwv.iter().zip(&v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
        if residual <= 1e-9 * lambda.max(f64::MIN_POSITIVE) {
            break;
        }
        v.copy_from_slice(&wtwv);
        if normalize(&mut v) == 0.0 {
            break;
        }
    }
    ((lambda + residual) * (1.0 + 1e-12)).sqrt().min(frob)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat_vec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        out[r] = dot(&w[r * cols..(r + 1) * cols], x);
    }
}

fn mat_t_vec(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for r in 0..rows {
        for c in 0..cols {
            out[c] += w[r * cols + c] * y[r];
        }
    }
}

fn affine_interval(l: &Layer, x: &[Interval]) -> Vec<Interval> {
    let mut out = Vec::with_capacity(l.rows);
    for r in 0..l.rows {
        let row = &l.weight[r * l.cols..(r + 1) * l.cols];
        let mut lo = l.bias[r];
        let mut hi = l.bias[r];
        let mut mag = l.bias[r].abs();
        for (&w, iv) in row.iter().zip(x) {
            if w >= 0.0 {
                lo += w * iv.lo;
                hi += w * iv.hi;
            } else {
                lo += w * iv.hi;
                hi += w * iv.lo;
            }
            mag += w.abs() * iv.mag();
        }
        let pad = mag * (l.cols as f64 + 2.0) * f64::EPSILON;
        out.push(Interval::new(lo - pad, hi + pad));
    }
    out
}

impl FeedForwardNet {
    fn normalize_interval(&self, x: &[Interval]) -> Vec<Interval> {
        match &self.input_map {
            Some(m) => x.iter().zip(&m.offset).zip(&m.scale).map(|((iv, &o), &s)| (*iv - o).scale(s)).collect(),
            None => x.to_vec(),
        }
    }

    /// Sound output enclosure over an input box.
    pub fn interval_bounds(&self, input: &IntervalBox) -> Result<IntervalBox, NetError> {
        if input.dim() != self.input_dim() {
            return Err(NetError::DimensionMismatch { expected: self.input_dim(), got: input.dim() });
        }
        if !input.is_valid() {
            return Err(NetError::InvalidBox("bounds must be finite with lower <= upper".into()));
        }
        Ok(IntervalBox(self.ibp(&input.0)))
    }

    /// Unchecked interval propagation.
    pub fn ibp(&self, input: &[Interval]) -> Vec<Interval> {
        let mut a = self.normalize_interval(input);
        for l in &self.layers {
            let z = affine_interval(l, &a);
            a = z.into_iter().map(|iv| l.activation.interval(iv)).collect();
        }
        if let Some(c) = &self.output_clamp {
            for (k, iv) in a.iter_mut().enumerate() {
                *iv = iv.clamp(c.lower[k], c.upper[k]);
            }
        }
        a
    }

    /// Output enclosure together with an interval enclosure of the input
    /// Jacobian (rows = outputs) over the box, by forward-mode propagation.
    pub fn interval_jacobian(&self, input: &[Interval]) -> (Vec<Interval>, Vec<Vec<Interval>>) {
        let n = self.input_dim();
        let mut a = self.normalize_interval(input);
        let mut jac: Vec<Vec<Interval>> = (0..n)
            .map(|r| {
                let s = self.input_map.as_ref().map_or(1.0, |m| m.scale[r]);
                (0..n).map(|c| Interval::point(if r == c { s } else { 0.0 })).collect()
            })
            .collect();
        for l in &self.layers {
            let z = affine_interval(l, &a);
            let mut next = Vec::with_capacity(l.rows);
            for r in 0..l.rows {
                let row = &l.weight[r * l.cols..(r + 1) * l.cols];
                let mut acc = vec![Interval::ZERO; n];
                for (&w, jrow) in row.iter().zip(&jac) {
                    if w == 0.0 {
                        continue;
                    }
                    for (s, j) in acc.iter_mut().zip(jrow) {
                        *s = *s + j.scale(w);
                    }
                }
                let d = l.activation.derivative_interval(z[r]);
                next.push(acc.into_iter().map(|s| s * d).collect());
            }
            jac = next;
            a = z.into_iter().map(|iv| l.activation.interval(iv)).collect();
        }
        if let Some(c) = &self.output_clamp {
            for (k, iv) in a.iter_mut().enumerate() {
                let d = if iv.lo > c.lower[k] && iv.hi < c.upper[k] {
                    Interval::point(1.0)
                } else if iv.hi < c.lower[k] || iv.lo > c.upper[k] {
                    Interval::point(0.0)
                } else {
                    Interval::new(0.0, 1.0)
                };
                jac[k] = jac[k].iter().map(|&j| j * d).collect();
                *iv = iv.clamp(c.lower[k], c.upper[k]);
            }
        }
        (a, jac)
    }

    /// Interval propagation intersected with the mean-value form
    /// `N(c) + J(box)(box - c)`, which is much tighter on small boxes.
    pub fn centered_bound(&self, input: &[Interval]) -> Vec<Interval> {
        let (ibp, jac) = self.interval_jacobian(input);
        let c: Vec<f64> = input.iter().map(|iv| iv.mid()).collect();
        let fc = self.eval(&c);
        ibp.iter()
            .zip(&fc)
            .zip(&jac)
            .map(|((&b, &v), row)| {
                // covers the rounding error of the point evaluation
                let mut acc = Interval::point(v).pad(1e-10 * (1.0 + v.abs()));
                for ((j, x), cc) in row.iter().zip(input).zip(&c) {
                    acc = acc + *j * (*x - *cc);
                }
                acc.intersect(b).unwrap_or(b)
            })
            .collect()
    }

    /// Upper bound on the global Lipschitz constant (Euclidean norms):
    /// the product of per-layer spectral norms. All supported activations
    /// and the output clamp are 1-Lipschitz.
    pub fn lipschitz_upper(&self) -> f64 {
        let s0 = self.input_map.as_ref().map_or(1.0, |m| m.scale.iter().cloned().fold(0.0, f64::max));
        self.layers.iter().fold(s0, |acc, l| acc * spectral_norm(&l.weight, l.rows, l.cols))
    }

    /// Global first- and second-derivative bounds, composed layer by layer:
    /// after an affine map both scale by `‖W‖`; after an activation with
    /// `|σ''| ≤ β` the curvature becomes `β L² + H`.
    pub fn smoothness_bound(&self) -> SmoothnessBound {
        let mut lip = self.input_map.as_ref().map_or(1.0, |m| m.scale.iter().cloned().fold(0.0, f64::max));
        let mut curv = 0.0;
        for l in &self.layers {
            let w = spectral_norm(&l.weight, l.rows, l.cols);
            lip *= w;
            curv *= w;
            if l.activation != Activation::Identity {
                curv += l.activation.curvature() * lip * lip;
            }
        }
        if self.output_clamp.is_some() {
            curv = f64::INFINITY;
        }
        SmoothnessBound { lipschitz: lip, curvature: curv }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(w: f64, b: f64, act: Activation) -> FeedForwardNet {
        FeedForwardNet::from_layers(vec![Layer::from_rows(&[&[w]], &[b], act)]).unwrap()
    }

    #[test]
    fn affine_interval_exact() {
        let out = single(2.0, 1.0, Activation::Identity).interval_bounds(&IntervalBox::new(&[0.0], &[1.0])).unwrap();
        assert!((out[0].lo - 1.0).abs() < 1e-12 && (out[0].hi - 3.0).abs() < 1e-12);
        assert!(out[0].lo <= 1.0 && out[0].hi >= 3.0);
    }

    #[test]
    fn relu_interval() {
        let out = single(1.0, 0.0, Activation::Relu).interval_bounds(&IntervalBox::new(&[-1.0], &[1.0])).unwrap();
        assert_eq!(out[0].lo, 0.0);
        assert!((out[0].hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_box_rejected() {
        let net = single(1.0, 0.0, Activation::Relu);
        let bad = IntervalBox(vec![Interval { lo: 1.0, hi: 0.0 }]);
        assert!(matches!(net.interval_bounds(&bad), Err(NetError::InvalidBox(_))));
    }

    #[test]
    fn spectral_norm_of_scalar_and_product() {
        assert!((single(3.0, 0.0, Activation::Identity).lipschitz_upper() - 3.0).abs() < 1e-12);
        let l1 = Layer::from_rows(&[&[2.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0], Activation::Tanh);
        let l2 = Layer::from_rows(&[&[3.0, 0.0], &[0.0, -1.0]], &[0.0, 0.0], Activation::Identity);
        let net = FeedForwardNet::from_layers(vec![l1, l2]).unwrap();
        assert!((net.lipschitz_upper() - 6.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_layer_keeps_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = FeedForwardNet::random(2, &[6], 2, Activation::Tanh, Activation::Identity, &mut rng);
        let before = net.lipschitz_upper();
        let (c, s) = (0.6f64, 0.8f64);
        net.layers.push(Layer::from_rows(&[&[c, -s], &[s, c]], &[0.1, -0.2], Activation::Identity));
        assert!((net.lipschitz_upper() - before).abs() < 1e-6);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let rows = rng.gen_range(2..9);
            let cols = rng.gen_range(2..9);
            let w: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = nalgebra::DMatrix::from_row_slice(rows, cols, &w);
            let exact = m.singular_values().max();
            let est = spectral_norm(&w, rows, cols);
            assert!(est >= exact * (1.0 - 1e-9), "{est} < {exact}");
            assert!(est <= exact * (1.0 + 1e-6));
        }
    }

    #[test]
    fn interval_jacobian_contains_point_jacobians() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let net = FeedForwardNet::random(3, &[8, 8], 2, Activation::Softplus, Activation::Identity, &mut rng)
                .with_output_clamp(vec![-0.5, -0.5], vec![0.5, 0.5]);
            let lo: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..0.5)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.0..0.5)).collect();
            let bx = IntervalBox::new(&lo, &hi);
            let (_, jac) = net.interval_jacobian(&bx.0);
            for _ in 0..200 {
                let x = bx.sample(&mut rng);
                let j = net.input_gradient(&x).unwrap();
                for (jr, ir) in j.iter().zip(&jac) {
                    for (v, iv) in jr.iter().zip(ir) {
                        assert!(iv.contains(*v), "{v} not in {iv:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn curvature_bound_dominates_second_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let net = FeedForwardNet::random(2, &[8, 8], 1, Activation::Tanh, Activation::Identity, &mut rng);
            let sb = net.smoothness_bound();
            let h = 1e-3;
            for _ in 0..100 {
                let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let v: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
                let at = |t: f64| net.eval_scalar(&[x[0] + t * v[0] / nv, x[1] + t * v[1] / nv]);
                let second = (at(h) - 2.0 * at(0.0) + at(-h)) / (h * h);
                assert!(second.abs() <= sb.curvature * (1.0 + 1e-3) + 1e-5);
            }
        }
    }
}
