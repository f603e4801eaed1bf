//! Fixtures shared by the benchmarks.

use corwa_core::certificate::Architecture;
use corwa_core::scenario::double_integrator_pair;
use corwa_core::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A `dim → hidden → hidden → 1` tanh network.
pub fn net(dim: usize, hidden: usize, seed: u64) -> FeedForwardNet {
    FeedForwardNet::random(dim, &[hidden, hidden], 1, Activation::Tanh, Activation::Identity, &mut rng(seed))
}

/// The coupled double-integrator pair with a randomly initialized
/// certificate of the shipped toy architecture.
pub fn pair() -> (System, CoRwaCertificate) {
    let sys = double_integrator_pair(1.5, 1e-5);
    let arch = Architecture { lyapunov_hidden: vec![16], lyapunov_features: 4, barrier_hidden: vec![16], controller_hidden: vec![16], ..Default::default() };
    let cert = CoRwaCertificate::initialize(&sys, &arch, Slacks::default(), &mut rng(0));
    (sys, cert)
}

/// Lower bidiagonal Metzler Hurwitz matrix of a platoon chain.
pub fn chain(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |r, c| {
        if r == c {
            -0.5
        } else if r == c + 1 {
            0.3
        } else {
            0.0
        }
    })
}
