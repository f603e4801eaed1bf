//! Hand-built systems and certificates shared by unit tests.

use crate::certificate::{CoRwaCertificate, LyapunovForm, Slacks, BUNDLE_FORMAT};
use crate::dynamics::{DynamicsModel, LinearParams};
use crate::network::{Activation, FeedForwardNet, IntervalBox, Layer};
use crate::sets::Region;
use crate::system::{AgentSpec, ExoSpec, System};
use crate::topology::SystemTopology;

/// Single agent `ẋ = -x` (zero input gain) with hand-set networks.
pub fn scalar_system(period: f64) -> System {
    let topo = SystemTopology::fully_connected(1, 1, 1, 1.0, vec![0]).unwrap();
    let agent = AgentSpec {
        dynamics: DynamicsModel::Linear(LinearParams { a: vec![vec![-1.0]], b: vec![vec![0.0]], offset: vec![] }),
        domain: IntervalBox::new(&[-1.0], &[1.0]),
        control: IntervalBox::new(&[-1.0], &[1.0]),
        equilibrium: vec![0.0],
        initial: Region::Box { lower: vec![-0.5], upper: vec![0.5] },
        goal: Region::Box { lower: vec![-0.05], upper: vec![0.05] },
        unsafe_set: vec![],
    };
    System { topology: topo, agents: vec![agent], exo: ExoSpec::default(), period }
}

fn linear_net(w: f64) -> FeedForwardNet {
    FeedForwardNet::from_layers(vec![Layer::from_rows(&[&[w]], &[0.0], Activation::Identity)]).unwrap()
}

/// `V = ½x²` (features `x/√2`, δ = 0), `h = x`, zero controller.
pub fn scalar_certificate(lambda: f64, mu: f64) -> CoRwaCertificate {
    CoRwaCertificate {
        format: BUNDLE_FORMAT,
        lyapunov: vec![linear_net(std::f64::consts::FRAC_1_SQRT_2)],
        barrier: vec![linear_net(1.0)],
        controller: vec![linear_net(0.0)],
        equilibria: vec![vec![0.0]],
        lambda: vec![vec![lambda]],
        upsilon: vec![vec![mu]],
        lyapunov_form: LyapunovForm::Quadratic { delta: 0.0 },
        slacks: Slacks::default(),
    }
}


/// Two double integrators on either side of the origin, each with a wall
/// at the outer end of its domain.
pub fn toy_system() -> System {
    let topo = SystemTopology::fully_connected(2, 2, 2, 10.0, vec![0]).unwrap();
    let model = DynamicsModel::Linear(LinearParams { a: vec![vec![0.0, 1.0], vec![0.0, 0.0]], b: vec![vec![0.0], vec![1.0]], offset: vec![] });
    let agent = |lo: f64, hi: f64, goal: f64, wall: Region| AgentSpec {
        dynamics: model.clone(),
        domain: IntervalBox::new(&[lo, -1.0], &[hi, 1.0]),
        control: IntervalBox::new(&[-2.0], &[2.0]),
        equilibrium: vec![goal, 0.0],
        initial: Region::Box { lower: vec![goal - 0.5, -0.2], upper: vec![goal + 0.5, 0.2] },
        goal: Region::Box { lower: vec![goal - 0.2, -0.2], upper: vec![goal + 0.2, 0.2] },
        unsafe_set: vec![wall],
    };
    System {
        topology: topo,
        agents: vec![
            agent(-2.5, 0.0, -1.0, Region::Below { dim: 0, value: -2.2 }),
            agent(0.0, 2.5, 1.0, Region::Above { dim: 0, value: 2.2 }),
        ],
        exo: ExoSpec::default(),
        period: 0.01,
    }
}
