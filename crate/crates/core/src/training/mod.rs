//! Dataset generation and gradient training of certificates.

pub mod dataset;
pub mod loss;
pub mod nominal;

pub use dataset::{make_sample, sample_dataset, AgentInput, Dataset, RegionTag, Sample};
pub use loss::{loss_and_grad, LossBreakdown, LossWeights, ParamLayout};
pub use nominal::{NominalController, Obstacle, PlatoonGains, RobotGains};

use crate::certificate::matrix::{check_hurwitz, spectral_abscissa};
use crate::certificate::{CertificateError, CoRwaCertificate};
use crate::optim::{LrSchedule, Optimizer, OptimizerKind};
use crate::system::System;
use crate::dynamics::SurrogateModel;
use crate::verifier::{system_margins, ErrorMargins};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("sampling domain is empty or invalid")]
    EmptyDomain,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Certificate(#[from] CertificateError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lr: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub dataset_size: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Initial weight of counterexample samples, halved every round.
    pub counterexample_weight: f64,
    pub unsafe_fraction: f64,
    pub boundary_fraction: f64,
    /// Add the verifier's error margins to the training residuals.
    pub include_margins: bool,
    pub train_coupling: bool,
    /// Gradient norm clip; zero disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: LrSchedule::default(),
            epochs: 50,
            batch_size: 32,
            dataset_size: 30_000,
            train_fraction: 0.8,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            counterexample_weight: 5.0,
            unsafe_fraction: 0.1,
            boundary_fraction: 0.1,
            include_margins: true,
            train_coupling: true,
            clip_norm: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_train(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train.total)
    }
}

pub fn loss_weights(cert: &CoRwaCertificate) -> LossWeights {
    let s = &cert.slacks;
    LossWeights { ctrl: s.sigma[0], clf: s.sigma[1], cbf: s.sigma[2], eps0: s.eps0, eps: s.eps }
}

/// Mean loss of `cert` over a sample set.
pub fn evaluate_loss(sys: &System, cert: &CoRwaCertificate, samples: &[Sample], margins: &[ErrorMargins]) -> LossBreakdown {
    let layout = ParamLayout::new(sys, cert);
    let params = layout.pack(cert);
    let batch: Vec<&Sample> = samples.iter().collect();
    loss_and_grad(sys, cert, &layout, &params, &batch, &loss_weights(cert), margins, None)
}

/// Shifts the diagonal of Λ until it is Hurwitz again. Returns whether
/// anything changed.
pub fn restore_hurwitz(cert: &mut CoRwaCertificate) -> Result<bool, CertificateError> {
    let lam = cert.lambda_matrix();
    if check_hurwitz(&lam)? {
        return Ok(false);
    }
    let shift = spectral_abscissa(&lam)? + 1e-3;
    let mut k = 1.0;
    loop {
        for i in 0..cert.q() {
            cert.lambda[i][i] -= k * shift;
        }
        if check_hurwitz(&cert.lambda_matrix())? {
            return Ok(true);
        }
        k *= 2.0;
    }
}

/// Where the discretization margins used in the loss come from.
#[derive(Clone, Copy)]
pub enum MarginPolicy<'a> {
    Fixed(&'a [ErrorMargins]),
    /// Recomputed from the current certificate at the start of every epoch.
    PerEpoch { surrogate: &'a SurrogateModel, splits: usize },
}

/// One training round of `cfg.epochs` epochs over `data.train`. On
/// divergence the certificate is restored to the last finite epoch.
pub fn train_round(
    sys: &System,
    cert: &mut CoRwaCertificate,
    data: &Dataset,
    cfg: &TrainingConfig,
    policy: MarginPolicy,
    seed: u64,
) -> Result<TrainReport, TrainingError> {
    if data.train.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let mut margins = vec![ErrorMargins::default(); sys.q()];
    let layout = ParamLayout::new(sys, cert);
    let weights = loss_weights(cert);
    let mut params = layout.pack(cert);
    let mut base = params.clone();
    let mut opt = Optimizer::new(cfg.optimizer, layout.total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut report = TrainReport::default();
    let mut grad = vec![0.0; layout.total];
    let mut last_good = cert.clone();
    let val: Vec<&Sample> = data.val.iter().collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.at(epoch);
        if cfg.include_margins {
            margins = match policy {
                MarginPolicy::Fixed(m) => m.to_vec(),
                MarginPolicy::PerEpoch { surrogate, splits } => match system_margins(sys, cert, surrogate, splits) {
                    Ok(m) => m,
                    Err(_) => {
                        *cert = last_good;
                        return Err(TrainingError::Diverged { epoch });
                    }
                },
            };
        }
        order.shuffle(&mut rng);
        let mut train = LossBreakdown::default();
        let mut wsum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&Sample> = chunk.iter().map(|&k| &data.train[k]).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let l = loss_and_grad(sys, cert, &layout, &params, &batch, &weights, &margins, Some(&mut grad));
            let bw: f64 = batch.iter().map(|s| s.weight).sum();
            train.ctrl += l.ctrl * bw;
            train.clf += l.clf * bw;
            train.cbf += l.cbf * bw;
            train.total += l.total * bw;
            wsum += bw;
            if !cfg.train_coupling {
                grad[layout.lambda_diag..].iter_mut().for_each(|g| *g = 0.0);
            }
            if cfg.clip_norm > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.clip_norm {
                    let k = cfg.clip_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= k);
                }
            }
            opt.step(&mut params, &grad, lr);
            if !l.total.is_finite() || params.iter().any(|p| !p.is_finite()) {
                *cert = last_good;
                return Err(TrainingError::Diverged { epoch });
            }
            layout.unpack(&params, &base, cert);
            base.copy_from_slice(&params);
        }
        match restore_hurwitz(cert) {
            Ok(true) => {
                params = layout.pack(cert);
                base.copy_from_slice(&params);
            }
            Ok(false) => {}
            Err(_) => {
                *cert = last_good;
                return Err(TrainingError::Diverged { epoch });
            }
        }
        if wsum > 0.0 {
            train.ctrl /= wsum;
            train.clf /= wsum;
            train.cbf /= wsum;
            train.total /= wsum;
        }
        let val = loss_and_grad(sys, cert, &layout, &params, &val, &weights, &margins, None);
        if !train.total.is_finite() || !val.total.is_finite() {
            *cert = last_good;
            return Err(TrainingError::Diverged { epoch });
        }
        tracing::debug!(epoch, lr, train = train.total, val = val.total, "epoch");
        report.epochs.push(EpochStats { epoch, lr, train, val });
        last_good = cert.clone();
    }
    Ok(report)
}
