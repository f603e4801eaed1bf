//! Counterexample-guided synthesis: alternate training rounds with full
//! verification passes, feeding violations back as weighted samples.

use crate::certificate::CoRwaCertificate;
use crate::dynamics::SurrogateModel;
use crate::system::System;
use crate::topology::JointState;
use crate::training::{make_sample, train_round, MarginPolicy, Dataset, LossBreakdown, NominalController, TrainingConfig, TrainingError};
use crate::verifier::{Budget, ConditionTag, Status, VerificationReport, Verifier, VerifyError, Witness};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CegisError {
    #[error("iteration {iteration}: {source}")]
    Training { iteration: usize, source: TrainingError },
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CegisConfig {
    pub max_iterations: usize,
    pub epochs_per_round: usize,
    pub variants: usize,
    /// Perturbation scale as a fraction of each dimension's domain width.
    pub noise_fraction: f64,
    pub budget: Budget,
    /// Per-dimension splits used when bounding Lipschitz constants.
    pub lipschitz_splits: usize,
    /// Retry Unknown outcomes once with a doubled budget.
    pub refine_unknown: bool,
    /// Also add the centers of Unknown boxes as samples.
    pub learn_from_unknown: bool,
    pub seed: u64,
}

impl Default for CegisConfig {
    fn default() -> Self {
        CegisConfig {
            max_iterations: 100,
            epochs_per_round: 50,
            variants: 20,
            noise_fraction: 0.01,
            budget: Budget::default(),
            lipschitz_splits: 4,
            refine_unknown: true,
            learn_from_unknown: true,
            seed: 0,
        }
    }
}

impl CegisConfig {
    pub fn validate(&self) -> Result<(), CegisError> {
        if self.max_iterations == 0 || self.epochs_per_round == 0 || self.lipschitz_splits == 0 {
            return Err(CegisError::Config("counts must be positive".into()));
        }
        if !(self.noise_fraction >= 0.0 && self.noise_fraction.is_finite()) {
            return Err(CegisError::Config("noise fraction must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CegisStatus {
    CertifiedConverged,
    IterationBudgetExhausted,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub verified: usize,
    pub counterexamples: usize,
    pub unknown: usize,
    pub boxes: usize,
    pub refined: bool,
    pub wall_time: f64,
}

impl VerificationSummary {
    fn of(report: &VerificationReport, refined: bool, wall_time: f64) -> Self {
        VerificationSummary {
            verified: report.count(Status::Verified),
            counterexamples: report.count(Status::Counterexample),
            unknown: report.count(Status::Unknown),
            boxes: report.queries.iter().map(|o| o.boxes).sum(),
            refined,
            wall_time,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub verification: VerificationSummary,
    pub new_samples: usize,
    pub dataset_size: usize,
    /// Final-epoch training loss of the round that followed, if any.
    pub loss: Option<LossBreakdown>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CegisReport {
    pub iterations: Vec<IterationRecord>,
    pub final_verification: VerificationSummary,
    pub status: CegisStatus,
    pub wall_time: f64,
}

impl CegisReport {
    /// Number of training rounds run.
    pub fn rounds(&self) -> usize {
        self.iterations.iter().filter(|r| r.loss.is_some()).count()
    }

    pub fn summary_table(&self) -> String {
        let mut s = String::from("iter  verified  cex  unknown  boxes  samples  loss\n");
        for r in &self.iterations {
            let v = &r.verification;
            let loss = r.loss.map_or("-".to_string(), |l| format!("{:.4e}", l.total));
            s.push_str(&format!(
                "{:>4}  {:>8}  {:>3}  {:>7}  {:>5}  {:>7}  {}\n",
                r.iteration, v.verified, v.counterexamples, v.unknown, v.boxes, r.dataset_size, loss
            ));
        }
        s.push_str(&format!("status: {:?}\n", self.status));
        s
    }
}

/// The verification oracle used by the loop.
pub trait CertificateVerifier {
    fn verify(&mut self, sys: &System, cert: &CoRwaCertificate, surrogate: &SurrogateModel, budget: Budget) -> Result<VerificationReport, VerifyError>;
}

/// Interval branch-and-bound verification with computed error margins.
#[derive(Clone, Copy, Debug)]
pub struct IntervalVerifier {
    pub lipschitz_splits: usize,
}

impl CertificateVerifier for IntervalVerifier {
    fn verify(&mut self, sys: &System, cert: &CoRwaCertificate, surrogate: &SurrogateModel, budget: Budget) -> Result<VerificationReport, VerifyError> {
        Verifier::with_computed_margins(sys, cert, surrogate, self.lipschitz_splits)?.verify_all(budget)
    }
}

/// A violation fed back into training.
#[derive(Clone, Debug, PartialEq)]
pub struct CounterexamplePoint {
    pub tag: ConditionTag,
    pub joint: Vec<Vec<f64>>,
    pub exo: Vec<f64>,
}

impl From<(ConditionTag, &Witness)> for CounterexamplePoint {
    fn from((tag, w): (ConditionTag, &Witness)) -> Self {
        CounterexamplePoint { tag, joint: w.joint.clone(), exo: w.exo.clone() }
    }
}

/// Adds each point and `cfg.variants` Gaussian perturbations of it (clipped
/// to the domain) to the training set, weighted as counterexamples. Returns
/// the number of samples added.
#[allow(clippy::too_many_arguments)]
pub fn augment_counterexamples(
    data: &mut Dataset,
    points: &[CounterexamplePoint],
    sys: &System,
    surrogate: &SurrogateModel,
    nominal: &NominalController,
    cfg: &CegisConfig,
    weight: f64,
    seed: u64,
) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let before = data.train.len();
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    for p in points {
        if p.joint.len() != sys.q() {
            continue;
        }
        for k in 0..=cfg.variants {
            let mut x = p.joint.clone();
            let mut exo = p.exo.clone();
            if k > 0 {
                for (xi, a) in x.iter_mut().zip(&sys.agents) {
                    for (v, iv) in xi.iter_mut().zip(&a.domain.0) {
                        *v = (*v + cfg.noise_fraction * iv.width() * std.sample(&mut rng)).clamp(iv.lo, iv.hi);
                    }
                }
                for (v, iv) in exo.iter_mut().zip(&sys.exo.domain.0) {
                    *v = (*v + cfg.noise_fraction * iv.width() * std.sample(&mut rng)).clamp(iv.lo, iv.hi);
                }
            }
            let mut s = make_sample(sys, surrogate, nominal, JointState::new(x), exo, weight);
            s.counterexample = true;
            data.train.push(s);
        }
    }
    data.train.len() - before
}

fn collect_points(report: &VerificationReport, sys: &System, learn_from_unknown: bool) -> Vec<CounterexamplePoint> {
    let mut pts: Vec<CounterexamplePoint> = report.witnesses().into_iter().map(CounterexamplePoint::from).collect();
    if learn_from_unknown {
        for o in report.queries.iter().filter(|o| o.status == Status::Unknown) {
            let Some(h) = &o.hint else { continue };
            if let Some((joint, exo)) = crate::verifier::realize_joint(sys, o.agent, &o.pattern, h) {
                pts.push(CounterexamplePoint { tag: o.tag, joint: joint.x, exo });
            }
        }
    }
    pts
}

fn verify_pass(
    verifier: &mut dyn CertificateVerifier,
    sys: &System,
    cert: &CoRwaCertificate,
    surrogate: &SurrogateModel,
    cfg: &CegisConfig,
) -> Result<(VerificationReport, VerificationSummary), CegisError> {
    let start = Instant::now();
    let mut report = verifier.verify(sys, cert, surrogate, cfg.budget)?;
    let mut refined = false;
    if cfg.refine_unknown && report.verdict == Status::Unknown {
        report = verifier.verify(sys, cert, surrogate, cfg.budget.doubled())?;
        refined = true;
    }
    let summary = VerificationSummary::of(&report, refined, start.elapsed().as_secs_f64());
    Ok((report, summary))
}

/// Runs the loop from a warm-started certificate and an initialized
/// dataset. `checkpoint` is called with every trained certificate.
#[allow(clippy::too_many_arguments)]
pub fn run_cegis(
    sys: &System,
    surrogate: &SurrogateModel,
    nominal: &NominalController,
    mut cert: CoRwaCertificate,
    data: &mut Dataset,
    train_cfg: &TrainingConfig,
    cfg: &CegisConfig,
    verifier: &mut dyn CertificateVerifier,
    mut checkpoint: impl FnMut(usize, &CoRwaCertificate),
) -> Result<(CoRwaCertificate, CegisReport), CegisError> {
    cfg.validate()?;
    let start = Instant::now();
    let round_cfg = TrainingConfig { epochs: cfg.epochs_per_round, ..train_cfg.clone() };
    let mut iterations = Vec::new();
    for it in 0..cfg.max_iterations {
        let (report, summary) = verify_pass(verifier, sys, &cert, surrogate, cfg)?;
        tracing::info!(iteration = it, verified = summary.verified, cex = summary.counterexamples, unknown = summary.unknown, "verification");
        if report.verdict == Status::Verified {
            iterations.push(IterationRecord { iteration: it, verification: summary.clone(), new_samples: 0, dataset_size: data.len(), loss: None });
            let report = CegisReport { iterations, final_verification: summary, status: CegisStatus::CertifiedConverged, wall_time: start.elapsed().as_secs_f64() };
            return Ok((cert, report));
        }
        data.decay_weights();
        let points = collect_points(&report, sys, cfg.learn_from_unknown);
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(it as u64);
        let added = augment_counterexamples(data, &points, sys, surrogate, nominal, cfg, train_cfg.counterexample_weight, seed);
        let tr = train_round(sys, &mut cert, data, &round_cfg, MarginPolicy::PerEpoch { surrogate, splits: cfg.lipschitz_splits }, seed)
            .map_err(|source| CegisError::Training { iteration: it, source })?;
        checkpoint(it, &cert);
        iterations.push(IterationRecord {
            iteration: it,
            verification: summary,
            new_samples: added,
            dataset_size: data.len(),
            loss: tr.epochs.last().map(|e| e.train),
        });
    }
    let (report, summary) = verify_pass(verifier, sys, &cert, surrogate, cfg)?;
    let status = if report.verdict == Status::Verified { CegisStatus::CertifiedConverged } else { CegisStatus::IterationBudgetExhausted };
    let report = CegisReport { iterations, final_verification: summary, status, wall_time: start.elapsed().as_secs_f64() };
    Ok((cert, report))
}
