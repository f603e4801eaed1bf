//! End-to-end steps shared by the command line and the acceptance suite:
//! surrogate fitting, imitation pretraining, synthesis and verification of
//! a configured scenario.

use crate::cegis::{run_cegis, CegisError, CegisReport, IntervalVerifier};
use crate::certificate::{CertificateError, CoRwaCertificate};
use crate::dynamics::{fit_surrogate, DynamicsError, SurrogateModel};
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::system::System;
use crate::training::{sample_dataset, train_round, Dataset, MarginPolicy, NominalController, TrainReport, TrainingError};
use crate::verifier::{Budget, VerificationReport, Verifier, VerifyError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Cegis(#[from] CegisError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
}

/// A scenario ready for training: system, fitted surrogate and nominal
/// controller.
pub struct Prepared {
    pub sys: System,
    pub surrogate: SurrogateModel,
    pub nominal: NominalController,
}

pub fn prepare(cfg: &ScenarioConfig) -> Result<Prepared, PipelineError> {
    let sys = cfg.system()?;
    let surrogate = fit_surrogate(&sys, &cfg.surrogate)?;
    Ok(Prepared { sys, surrogate, nominal: cfg.nominal() })
}

pub fn initial_certificate(cfg: &ScenarioConfig, sys: &System) -> CoRwaCertificate {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    CoRwaCertificate::initialize(sys, &cfg.architecture, cfg.slacks, &mut rng)
}

/// Samples the dataset and runs `pretrain_epochs` epochs of training.
pub fn pretrain(cfg: &ScenarioConfig, p: &Prepared, cert: &mut CoRwaCertificate) -> Result<(Dataset, TrainReport), PipelineError> {
    let data = sample_dataset(&p.sys, &p.surrogate, &p.nominal, &cfg.training)?;
    let report = if cfg.pretrain_epochs > 0 {
        let tc = crate::training::TrainingConfig { epochs: cfg.pretrain_epochs, ..cfg.training.clone() };
        let policy = MarginPolicy::PerEpoch { surrogate: &p.surrogate, splits: cfg.cegis.lipschitz_splits };
        train_round(&p.sys, cert, &data, &tc, policy, cfg.seed)?
    } else {
        TrainReport::default()
    };
    Ok((data, report))
}

pub struct Synthesis {
    pub certificate: CoRwaCertificate,
    pub pretrain: TrainReport,
    pub report: CegisReport,
}

/// Pretraining followed by the synthesis loop. `checkpoint` sees the
/// certificate after every training round.
pub fn synthesize(
    cfg: &ScenarioConfig,
    p: &Prepared,
    checkpoint: impl FnMut(usize, &CoRwaCertificate),
) -> Result<Synthesis, PipelineError> {
    let mut cert = initial_certificate(cfg, &p.sys);
    let (mut data, pre) = pretrain(cfg, p, &mut cert)?;
    let mut verifier = IntervalVerifier { lipschitz_splits: cfg.cegis.lipschitz_splits };
    let (certificate, report) =
        run_cegis(&p.sys, &p.surrogate, &p.nominal, cert, &mut data, &cfg.training, &cfg.cegis, &mut verifier, checkpoint)?;
    Ok(Synthesis { certificate, pretrain: pre, report })
}

/// One full verification pass with margins computed for `cert`.
pub fn verify(cfg: &ScenarioConfig, p: &Prepared, cert: &CoRwaCertificate, budget: Budget) -> Result<VerificationReport, PipelineError> {
    cert.check_against(&p.sys)?;
    let v = Verifier::with_computed_margins(&p.sys, cert, &p.surrogate, cfg.verifier.lipschitz_splits)?;
    Ok(v.verify_all(budget)?)
}
