//! Initial, goal and unsafe regions over (extended) agent states, with
//! pointwise membership and conservative box classification.

use crate::network::{Interval, IntervalBox};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    /// Axis-aligned box on the agent's own state.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Open ball on the listed own-state coordinates.
    Ball { dims: Vec<usize>, center: Vec<f64>, radius: f64 },
    /// Some valid neighbor closer than `radius` on the position coordinates.
    Proximity { radius: f64 },
    /// Band of the given per-coordinate width along the inside of the
    /// agent's domain boundary (width 0 disables a coordinate).
    Boundary { width: Vec<f64> },
    /// Own coordinate strictly below `value`.
    Below { dim: usize, value: f64 },
    /// Own coordinate strictly above `value`.
    Above { dim: usize, value: f64 },
}

/// How a box relates to a region.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Overlap {
    Disjoint,
    Partial,
    Inside,
}

/// Geometric context needed to evaluate regions.
#[derive(Clone, Copy, Debug)]
pub struct Geometry<'a> {
    pub state_dim: usize,
    pub position: &'a [usize],
    pub domain: &'a IntervalBox,
}

impl Region {
    /// Membership of a flattened extended state with `valid` rows.
    pub fn contains(&self, xbar: &[f64], valid: usize, geo: &Geometry) -> bool {
        let n = geo.state_dim;
        match self {
            Region::Box { lower, upper } => (0..n).all(|k| lower[k] <= xbar[k] && xbar[k] <= upper[k]),
            Region::Ball { dims, center, radius } => {
                dims.iter().zip(center).map(|(&k, c)| (xbar[k] - c).powi(2)).sum::<f64>() < radius * radius
            }
            Region::Proximity { radius } => (1..valid).any(|r| {
                geo.position.iter().map(|&k| (xbar[k] - xbar[r * n + k]).powi(2)).sum::<f64>() < radius * radius
            }),
            Region::Boundary { width } => (0..n).any(|k| {
                let w = width.get(k).copied().unwrap_or(0.0);
                w > 0.0 && (xbar[k] < geo.domain[k].lo + w || xbar[k] > geo.domain[k].hi - w)
            }),
            Region::Below { dim, value } => xbar[*dim] < *value,
            Region::Above { dim, value } => xbar[*dim] > *value,
        }
    }

    /// Conservative classification of a box (flattened extended layout).
    pub fn classify(&self, bx: &IntervalBox, valid: usize, geo: &Geometry) -> Overlap {
        let n = geo.state_dim;
        match self {
            Region::Box { lower, upper } => {
                let inside = (0..n).all(|k| lower[k] <= bx[k].lo && bx[k].hi <= upper[k]);
                let apart = (0..n).any(|k| bx[k].hi < lower[k] || bx[k].lo > upper[k]);
                verdict(inside, apart)
            }
            Region::Ball { dims, center, radius } => {
                let mut dmin = 0.0;
                let mut dmax = 0.0;
                for (&k, &c) in dims.iter().zip(center) {
                    let iv = bx[k] - c;
                    dmin += iv.mig().powi(2);
                    dmax += iv.mag().powi(2);
                }
                verdict(dmax < radius * radius, dmin >= radius * radius)
            }
            Region::Proximity { radius } => {
                let r2 = radius * radius;
                let mut inside = false;
                let mut apart = true;
                for r in 1..valid {
                    let (mut dmin, mut dmax) = (0.0, 0.0);
                    for &k in geo.position {
                        let iv = bx[k] - bx[r * n + k];
                        dmin += iv.mig().powi(2);
                        dmax += iv.mag().powi(2);
                    }
                    inside |= dmax < r2;
                    apart &= dmin >= r2;
                }
                verdict(inside, apart)
            }
            Region::Boundary { width } => {
                let mut inside = false;
                let mut apart = true;
                for k in 0..n {
                    let w = width.get(k).copied().unwrap_or(0.0);
                    if w <= 0.0 {
                        continue;
                    }
                    let lo_edge = geo.domain[k].lo + w;
                    let hi_edge = geo.domain[k].hi - w;
                    inside |= bx[k].hi < lo_edge || bx[k].lo > hi_edge;
                    apart &= bx[k].lo >= lo_edge && bx[k].hi <= hi_edge;
                }
                verdict(inside, apart)
            }
            Region::Below { dim, value } => verdict(bx[*dim].hi < *value, bx[*dim].lo >= *value),
            Region::Above { dim, value } => verdict(bx[*dim].lo > *value, bx[*dim].hi <= *value),
        }
    }

    /// Own-state box enclosing the region within the domain, if the region
    /// is defined on the own state alone.
    pub fn own_bounding_box(&self, domain: &IntervalBox) -> Option<IntervalBox> {
        match self {
            Region::Box { lower, upper } => IntervalBox::new(lower, upper).intersect(domain),
            Region::Ball { dims, center, radius } => {
                let mut b = domain.clone();
                for (&k, &c) in dims.iter().zip(center) {
                    b[k] = b[k].intersect(Interval::new(c - radius, c + radius))?;
                }
                Some(b)
            }
            Region::Below { dim, value } => {
                let mut b = domain.clone();
                b[*dim] = b[*dim].intersect(Interval::new(f64::NEG_INFINITY, *value))?;
                Some(b)
            }
            Region::Above { dim, value } => {
                let mut b = domain.clone();
                b[*dim] = b[*dim].intersect(Interval::new(*value, f64::INFINITY))?;
                Some(b)
            }
            Region::Proximity { .. } | Region::Boundary { .. } => None,
        }
    }
}

fn verdict(inside: bool, apart: bool) -> Overlap {
    if inside {
        Overlap::Inside
    } else if apart {
        Overlap::Disjoint
    } else {
        Overlap::Partial
    }
}

/// Union semantics over a list of regions.
pub fn union_contains(regions: &[Region], xbar: &[f64], valid: usize, geo: &Geometry) -> bool {
    regions.iter().any(|r| r.contains(xbar, valid, geo))
}

pub fn union_classify(regions: &[Region], bx: &IntervalBox, valid: usize, geo: &Geometry) -> Overlap {
    let mut all_disjoint = true;
    for r in regions {
        match r.classify(bx, valid, geo) {
            Overlap::Inside => return Overlap::Inside,
            Overlap::Partial => all_disjoint = false,
            Overlap::Disjoint => {}
        }
    }
    if all_disjoint {
        Overlap::Disjoint
    } else {
        Overlap::Partial
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn geo(domain: &IntervalBox) -> Geometry<'_> {
        Geometry { state_dim: 2, position: &[0, 1], domain }
    }

    /// Box verdicts must agree with pointwise membership of samples.
    fn check_consistency(region: &Region, bx: &IntervalBox, valid: usize, g: &Geometry) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let verdict = region.classify(bx, valid, g);
        for _ in 0..500 {
            let x = bx.sample(&mut rng);
            let inside = region.contains(&x, valid, g);
            match verdict {
                Overlap::Inside => assert!(inside, "{region:?} {x:?}"),
                Overlap::Disjoint => assert!(!inside, "{region:?} {x:?}"),
                Overlap::Partial => {}
            }
        }
    }

    #[test]
    fn ball_classification() {
        let d = IntervalBox::new(&[-5.0, -5.0], &[5.0, 5.0]);
        let g = geo(&d);
        let ball = Region::Ball { dims: vec![0, 1], center: vec![0.0, 0.0], radius: 1.0 };
        assert_eq!(ball.classify(&IntervalBox::new(&[-0.1, -0.1], &[0.1, 0.1]), 1, &g), Overlap::Inside);
        assert_eq!(ball.classify(&IntervalBox::new(&[2.0, 2.0], &[3.0, 3.0]), 1, &g), Overlap::Disjoint);
        assert_eq!(ball.classify(&IntervalBox::new(&[0.5, 0.5], &[1.5, 1.5]), 1, &g), Overlap::Partial);
        for bx in [IntervalBox::new(&[0.5, -0.2], &[0.9, 0.1]), IntervalBox::new(&[0.7, 0.7], &[1.0, 1.0])] {
            check_consistency(&ball, &bx, 1, &g);
        }
    }

    #[test]
    fn boundary_band() {
        let d = IntervalBox::new(&[0.0, 0.0], &[1.0, 1.0]);
        let g = geo(&d);
        let band = Region::Boundary { width: vec![0.1, 0.0] };
        assert!(band.contains(&[0.05, 0.5], 1, &g));
        assert!(!band.contains(&[0.5, 0.01], 1, &g));
        assert_eq!(band.classify(&IntervalBox::new(&[0.0, 0.0], &[0.05, 1.0]), 1, &g), Overlap::Inside);
        assert_eq!(band.classify(&IntervalBox::new(&[0.2, 0.0], &[0.8, 1.0]), 1, &g), Overlap::Disjoint);
        check_consistency(&band, &IntervalBox::new(&[0.05, 0.0], &[0.3, 1.0]), 1, &g);
    }

    #[test]
    fn proximity_uses_valid_rows_only() {
        let d = IntervalBox::new(&[-5.0, -5.0], &[5.0, 5.0]);
        let g = geo(&d);
        let prox = Region::Proximity { radius: 0.5 };
        assert!(prox.contains(&[0.0, 0.0, 0.1, 0.0], 2, &g));
        assert!(!prox.contains(&[0.0, 0.0, 0.1, 0.0], 1, &g));
        let bx = IntervalBox::new(&[0.0, 0.0, 0.2, -0.1], &[0.1, 0.1, 0.3, 0.0]);
        assert_eq!(prox.classify(&bx, 2, &g), Overlap::Inside);
        assert_eq!(prox.classify(&bx, 1, &g), Overlap::Disjoint);
        check_consistency(&prox, &IntervalBox::new(&[0.0, 0.0, 0.2, -0.5], &[0.1, 0.1, 0.8, 0.5]), 2, &g);
    }

    #[test]
    fn halfspaces_and_union() {
        let d = IntervalBox::new(&[0.0, 0.0], &[10.0, 10.0]);
        let g = geo(&d);
        let regs = vec![Region::Below { dim: 0, value: 2.0 }, Region::Above { dim: 1, value: 9.0 }];
        assert!(union_contains(&regs, &[1.0, 5.0], 1, &g));
        assert!(!union_contains(&regs, &[3.0, 5.0], 1, &g));
        assert_eq!(union_classify(&regs, &IntervalBox::new(&[3.0, 3.0], &[4.0, 4.0]), 1, &g), Overlap::Disjoint);
        assert_eq!(union_classify(&regs, &IntervalBox::new(&[3.0, 9.5], &[4.0, 9.8]), 1, &g), Overlap::Inside);
        assert_eq!(union_classify(&regs, &IntervalBox::new(&[1.0, 3.0], &[4.0, 4.0]), 1, &g), Overlap::Partial);
    }
}
