//! State-dependent neighborhoods, interaction masks and padded extended
//! states.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("agent id {id} out of range for {q} agents")]
    InvalidAgent { id: usize, q: usize },
    #[error("joint state has {got} rows, topology has {expected} agents")]
    RowCount { expected: usize, got: usize },
    #[error("invalid topology: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemTopology {
    pub q: usize,
    pub state_dim: usize,
    /// Neighborhood budget per agent, self included.
    pub max_neighborhood: Vec<usize>,
    pub radius: Vec<f64>,
    pub communicable: Vec<Vec<usize>>,
    pub position_slice: Vec<usize>,
}

impl SystemTopology {
    pub fn new(
        state_dim: usize,
        max_neighborhood: Vec<usize>,
        radius: Vec<f64>,
        communicable: Vec<Vec<usize>>,
        position_slice: Vec<usize>,
    ) -> Result<Self, TopologyError> {
        let t = SystemTopology {
            q: max_neighborhood.len(),
            state_dim,
            max_neighborhood,
            radius,
            communicable,
            position_slice,
        };
        t.validate()?;
        Ok(t)
    }

    /// Every agent may communicate with every other agent.
    pub fn fully_connected(q: usize, state_dim: usize, m: usize, radius: f64, position_slice: Vec<usize>) -> Result<Self, TopologyError> {
        let comm = (0..q).map(|i| (0..q).filter(|&j| j != i).collect()).collect();
        Self::new(state_dim, vec![m; q], vec![radius; q], comm, position_slice)
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.q == 0 {
            return Err(TopologyError::Invalid("at least one agent required".into()));
        }
        if self.radius.len() != self.q || self.communicable.len() != self.q {
            return Err(TopologyError::Invalid("per-agent lists must have one entry per agent".into()));
        }
        if let Some(i) = self.max_neighborhood.iter().position(|&m| m == 0) {
            return Err(TopologyError::Invalid(format!("agent {i}: neighborhood size must be >= 1")));
        }
        if let Some(i) = self.radius.iter().position(|&r| !(r > 0.0)) {
            return Err(TopologyError::Invalid(format!("agent {i}: sensing radius must be positive")));
        }
        for (i, c) in self.communicable.iter().enumerate() {
            if let Some(&j) = c.iter().find(|&&j| j >= self.q) {
                return Err(TopologyError::Invalid(format!("agent {i}: communicable id {j} out of range")));
            }
        }
        if self.position_slice.is_empty() || self.position_slice.iter().any(|&k| k >= self.state_dim) {
            return Err(TopologyError::Invalid("position slice indices must be valid state coordinates".into()));
        }
        Ok(())
    }

    fn check(&self, joint: &JointState, i: usize) -> Result<(), TopologyError> {
        if i >= self.q {
            return Err(TopologyError::InvalidAgent { id: i, q: self.q });
        }
        if joint.x.len() != self.q {
            return Err(TopologyError::RowCount { expected: self.q, got: joint.x.len() });
        }
        Ok(())
    }

    /// Euclidean distance between two states on the position coordinates.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.position_slice.iter().map(|&k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
    }

    /// Up to `M_i - 1` communicable agents within the sensing radius, nearest
    /// first, ties broken by ascending id.
    pub fn neighbor_set(&self, joint: &JointState, i: usize) -> Result<Vec<usize>, TopologyError> {
        self.check(joint, i)?;
        let xi = &joint.x[i];
        let mut cands: Vec<(f64, usize)> = self.communicable[i]
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| (self.distance(xi, &joint.x[j]), j))
            .filter(|&(d, _)| d <= self.radius[i])
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cands.dedup_by_key(|c| c.1);
        cands.truncate(self.max_neighborhood[i] - 1);
        Ok(cands.into_iter().map(|(_, j)| j).collect())
    }

    pub fn interaction_mask(&self, joint: &JointState, i: usize) -> Result<InteractionMask, TopologyError> {
        let neighbor_ids = self.neighbor_set(joint, i)?;
        let mut a = vec![false; self.q];
        a[i] = true;
        for &j in &neighbor_ids {
            a[j] = true;
        }
        Ok(InteractionMask { a, neighbor_ids })
    }

    pub fn extended_state(&self, joint: &JointState, i: usize) -> Result<ExtendedState, TopologyError> {
        let neighbor_ids = self.neighbor_set(joint, i)?;
        Ok(self.extend_with(joint, i, &neighbor_ids))
    }

    /// Extended state for an already selected neighbor list.
    pub fn extend_with(&self, joint: &JointState, i: usize, neighbor_ids: &[usize]) -> ExtendedState {
        let n = self.state_dim;
        let m = self.max_neighborhood[i];
        let mut rows = Vec::with_capacity(m);
        rows.push(joint.x[i].clone());
        for &j in neighbor_ids {
            rows.push(joint.x[j].clone());
        }
        while rows.len() < m {
            rows.push(vec![PADDING; n]);
        }
        ExtendedState { rows, valid_rows: 1 + neighbor_ids.len() }
    }
}

/// Value used for padding rows of extended states.
pub const PADDING: f64 = 0.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    /// One row per agent.
    pub x: Vec<Vec<f64>>,
    pub time: f64,
}

impl JointState {
    pub fn new(x: Vec<Vec<f64>>) -> Self {
        JointState { x, time: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionMask {
    pub a: Vec<bool>,
    /// Selected neighbors, nearest first.
    pub neighbor_ids: Vec<usize>,
}

impl InteractionMask {
    /// Masked coefficient vector `w ∘ A`.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.a).map(|(&v, &on)| if on { v } else { 0.0 }).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedState {
    /// Self first, then neighbors nearest first, then padding.
    pub rows: Vec<Vec<f64>>,
    pub valid_rows: usize,
}

impl ExtendedState {
    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }
}
