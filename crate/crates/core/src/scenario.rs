//! Scenario configuration files and the robot, platoon and explicit system
//! families built from them.

use crate::cegis::CegisConfig;
use crate::certificate::{Architecture, Slacks};
use crate::dynamics::{DynamicsModel, RobotParams, SurrogateConfig};
use crate::network::{Interval, IntervalBox};
use crate::sets::Region;
use crate::system::{AgentSpec, ExoSpec, System};
use crate::topology::SystemTopology;
use crate::training::{NominalController, Obstacle, PlatoonGains, RobotGains, TrainingConfig};
use crate::transfer::RedVerConfig;
use crate::verifier::Budget;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialization error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unsupported schema version {found}, expected {SCHEMA_VERSION}")]
    Schema { found: u32 },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub slacks: Slacks,
    #[serde(default)]
    pub training: TrainingConfig,
    /// Epochs of imitation pretraining before the first verification pass.
    #[serde(default = "default_pretrain")]
    pub pretrain_epochs: usize,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub verifier: VerifierConfig,
    #[serde(default)]
    pub cegis: CegisConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub redver: RedVerConfig,
}

fn default_pretrain() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierConfig {
    pub budget: Budget,
    /// Subdivisions per coordinate when bounding Lipschitz constants.
    pub lipschitz_splits: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig { budget: Budget::default(), lipschitz_splits: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub dt: f64,
    pub steps: usize,
    /// Number of rollouts, each from its own sampled initial state.
    pub rollouts: usize,
    /// Leader velocity profile for scenarios with an exogenous leader.
    pub leader: LeaderProfile,
    /// Axes of the certificate contour plots: agent, two state coordinates
    /// and the grid resolution.
    pub contour_agent: usize,
    pub contour_axes: [usize; 2],
    pub contour_resolution: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            dt: 0.05,
            steps: 600,
            rollouts: 1,
            leader: LeaderProfile::default(),
            contour_agent: 0,
            contour_axes: [0, 1],
            contour_resolution: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeaderProfile {
    Constant { speed: f64 },
    /// Speed `speeds[k]` from time `times[k]` on.
    Piecewise { times: Vec<f64>, speeds: Vec<f64> },
    Sinusoid { mean: f64, amplitude: f64, period: f64 },
}

impl Default for LeaderProfile {
    fn default() -> Self {
        LeaderProfile::Constant { speed: 0.0 }
    }
}

impl LeaderProfile {
    pub fn speed(&self, t: f64) -> f64 {
        match self {
            LeaderProfile::Constant { speed } => *speed,
            LeaderProfile::Piecewise { times, speeds } => {
                let mut v = speeds.first().copied().unwrap_or(0.0);
                for (&tk, &vk) in times.iter().zip(speeds) {
                    if t >= tk {
                        v = vk;
                    }
                }
                v
            }
            LeaderProfile::Sinusoid { mean, amplitude, period } => mean + amplitude * (std::f64::consts::TAU * t / period).sin(),
        }
    }

    pub fn rate(&self, t: f64) -> f64 {
        match self {
            LeaderProfile::Sinusoid { amplitude, period, .. } => {
                let w = std::f64::consts::TAU / period;
                amplitude * w * (w * t).cos()
            }
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioKind {
    Robot(RobotScenario),
    Platoon(PlatoonScenario),
    /// A fully specified system, with an optional nominal controller.
    Explicit {
        system: System,
        #[serde(default)]
        nominal: NominalController,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotScenario {
    pub params: RobotParams,
    pub gains: RobotGains,
    pub max_wheel: f64,
    pub sensing_radius: f64,
    pub max_neighborhood: usize,
    pub leader_target: [f64; 2],
    /// Follower formation offsets relative to the leader.
    pub offsets: Vec<[f64; 2]>,
    pub leader_start: [f64; 2],
    pub obstacles: Vec<Obstacle>,
    /// Physical robot radius added to obstacle radii in the unsafe set.
    pub robot_radius: f64,
    /// Inter-agent distance below which a pair is unsafe.
    pub min_separation: f64,
    pub domain_x: [f64; 2],
    pub domain_y: [f64; 2],
    pub domain_heading: [f64; 2],
    /// Half-widths (x, y, heading) of the initial and goal boxes.
    pub initial_half_width: [f64; 3],
    pub goal_half_width: [f64; 3],
    /// Unsafe band along the domain boundary, per coordinate.
    pub boundary_band: [f64; 3],
    pub period: f64,
}

impl Default for RobotScenario {
    fn default() -> Self {
        RobotScenario {
            params: RobotParams::default(),
            gains: RobotGains::default(),
            max_wheel: 40.0,
            sensing_radius: 2.0,
            max_neighborhood: 2,
            leader_target: [20.0, 0.0],
            offsets: vec![[-1.0, 1.0], [-1.0, -1.0], [-2.0, 0.0]],
            leader_start: [0.0, 0.0],
            obstacles: vec![
                Obstacle { center: [6.0, 1.0], radius: 1.0 },
                Obstacle { center: [10.0, -1.5], radius: 1.2 },
                Obstacle { center: [14.0, 1.0], radius: 1.1 },
            ],
            robot_radius: 0.0,
            min_separation: 0.1,
            domain_x: [-3.0, 22.0],
            domain_y: [-4.0, 4.0],
            domain_heading: [-0.5, 0.5],
            initial_half_width: [0.2, 0.2, 0.1],
            goal_half_width: [0.3, 0.3, 0.2],
            boundary_band: [0.2, 0.2, 0.0],
            period: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlatoonScenario {
    /// Number of followers.
    pub followers: usize,
    pub gains: PlatoonGains,
    pub u_max: f64,
    /// Equilibrium spacing and leader cruise speed.
    pub spacing: f64,
    pub cruise_speed: f64,
    pub min_spacing: f64,
    pub domain_spacing: [f64; 2],
    pub domain_velocity: [f64; 2],
    /// Leader velocity range and rate bounds seen by the certificate.
    pub leader_velocity: [f64; 2],
    pub leader_rate: [f64; 2],
    pub initial_half_width: [f64; 2],
    pub goal_half_width: [f64; 2],
    pub sensing_radius: f64,
    pub period: f64,
}

impl Default for PlatoonScenario {
    fn default() -> Self {
        PlatoonScenario {
            followers: 3,
            gains: PlatoonGains::default(),
            u_max: 5.0,
            spacing: 20.0,
            cruise_speed: 10.0,
            min_spacing: 2.0,
            domain_spacing: [0.0, 40.0],
            domain_velocity: [0.0, 20.0],
            leader_velocity: [9.0, 11.0],
            leader_rate: [-0.5, 0.5],
            initial_half_width: [4.0, 1.0],
            goal_half_width: [1.0, 0.5],
            sensing_radius: 1e6,
            period: 1e-3,
        }
    }
}

fn span(r: [f64; 2]) -> Interval {
    Interval::new(r[0], r[1])
}

fn centered(c: &[f64], half: &[f64]) -> Region {
    Region::Box { lower: c.iter().zip(half).map(|(c, h)| c - h).collect(), upper: c.iter().zip(half).map(|(c, h)| c + h).collect() }
}

impl RobotScenario {
    pub fn targets(&self) -> Vec<[f64; 2]> {
        let [lx, ly] = self.leader_target;
        std::iter::once([lx, ly]).chain(self.offsets.iter().map(|o| [lx + o[0], ly + o[1]])).collect()
    }

    pub fn starts(&self) -> Vec<[f64; 2]> {
        let [sx, sy] = self.leader_start;
        std::iter::once([sx, sy]).chain(self.offsets.iter().map(|o| [sx + o[0], sy + o[1]])).collect()
    }

    pub fn system(&self) -> Result<System, ScenarioError> {
        let targets = self.targets();
        let q = targets.len();
        let topo = SystemTopology::fully_connected(q, 3, self.max_neighborhood.min(q), self.sensing_radius, vec![0, 1])
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let domain = IntervalBox(vec![span(self.domain_x), span(self.domain_y), span(self.domain_heading)]);
        let mut unsafe_set: Vec<Region> = self
            .obstacles
            .iter()
            .map(|o| Region::Ball { dims: vec![0, 1], center: o.center.to_vec(), radius: o.radius + self.robot_radius })
            .collect();
        unsafe_set.push(Region::Proximity { radius: self.min_separation });
        if self.boundary_band.iter().any(|&w| w > 0.0) {
            unsafe_set.push(Region::Boundary { width: self.boundary_band.to_vec() });
        }
        let agents = targets
            .iter()
            .zip(self.starts())
            .map(|(t, s)| AgentSpec {
                dynamics: DynamicsModel::Robot(self.params.clone()),
                domain: domain.clone(),
                control: IntervalBox::new(&[-self.max_wheel; 3], &[self.max_wheel; 3]),
                equilibrium: vec![t[0], t[1], 0.0],
                initial: centered(&[s[0], s[1], 0.0], &self.initial_half_width),
                goal: centered(&[t[0], t[1], 0.0], &self.goal_half_width),
                unsafe_set: unsafe_set.clone(),
            })
            .collect();
        Ok(System { topology: topo, agents, exo: ExoSpec::default(), period: self.period })
    }

    pub fn nominal(&self) -> NominalController {
        let gains = RobotGains { max_wheel: self.max_wheel, ..self.gains.clone() };
        NominalController::Robot { gains, obstacles: self.obstacles.clone() }
    }
}

impl PlatoonScenario {
    pub fn system(&self) -> Result<System, ScenarioError> {
        let q = self.followers;
        if q == 0 {
            return Err(ScenarioError::Invalid("platoon needs at least one follower".into()));
        }
        let comm = (0..q).map(|i| if i == 0 { vec![] } else { vec![i - 1] }).collect();
        let topo = SystemTopology::new(2, vec![2; q], vec![self.sensing_radius; q], comm, vec![0])
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let eq = [self.spacing, self.cruise_speed];
        let agents = (0..q)
            .map(|_| AgentSpec {
                dynamics: DynamicsModel::Platoon,
                domain: IntervalBox(vec![span(self.domain_spacing), span(self.domain_velocity)]),
                control: IntervalBox::new(&[-self.u_max], &[self.u_max]),
                equilibrium: eq.to_vec(),
                initial: centered(&eq, &self.initial_half_width),
                goal: centered(&eq, &self.goal_half_width),
                unsafe_set: vec![Region::Below { dim: 0, value: self.min_spacing }],
            })
            .collect();
        let exo = ExoSpec { domain: IntervalBox(vec![span(self.leader_velocity)]), rate: IntervalBox(vec![span(self.leader_rate)]) };
        Ok(System { topology: topo, agents, exo, period: self.period })
    }

    pub fn nominal(&self) -> NominalController {
        NominalController::Platoon { gains: PlatoonGains { spacing: self.spacing, u_max: self.u_max, ..self.gains.clone() } }
    }

    /// The same family with a different follower count.
    pub fn with_followers(&self, followers: usize) -> Self {
        PlatoonScenario { followers, ..self.clone() }
    }
}

/// Two double integrators on a line, each reaching its own goal at ±1.5
/// without crossing an outer wall at ±2.3. Within `radius` the agents see
/// each other; agent domains are `[-2.5, -0.5]` and `[0.5, 2.5]`, so a
/// radius below 1 decouples them.
pub fn double_integrator_pair(radius: f64, period: f64) -> System {
    let topo = SystemTopology::fully_connected(2, 2, 2, radius, vec![0]).expect("valid pair topology");
    let model = DynamicsModel::Linear(crate::dynamics::LinearParams {
        a: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        b: vec![vec![0.0], vec![1.0]],
        offset: vec![],
    });
    let agent = |side: f64| AgentSpec {
        dynamics: model.clone(),
        domain: if side < 0.0 { IntervalBox::new(&[-2.5, -1.0], &[-0.5, 1.0]) } else { IntervalBox::new(&[0.5, -1.0], &[2.5, 1.0]) },
        control: IntervalBox::new(&[-2.0], &[2.0]),
        equilibrium: vec![1.5 * side, 0.0],
        initial: centered(&[1.5 * side, 0.0], &[0.5, 0.2]),
        goal: centered(&[1.5 * side, 0.0], &[0.2, 0.2]),
        unsafe_set: vec![if side < 0.0 { Region::Below { dim: 0, value: -2.3 } } else { Region::Above { dim: 0, value: 2.3 } }],
    };
    System { topology: topo, agents: vec![agent(-1.0), agent(1.0)], exo: ExoSpec::default(), period }
}

/// State feedback used as the nominal controller of the pair.
pub fn double_integrator_nominal() -> NominalController {
    NominalController::Linear { gain: vec![vec![1.0, 1.5]] }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Schema { found: cfg.schema_version });
        }
        cfg.system()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn system(&self) -> Result<System, ScenarioError> {
        let sys = match &self.scenario {
            ScenarioKind::Robot(r) => r.system()?,
            ScenarioKind::Platoon(p) => p.system()?,
            ScenarioKind::Explicit { system, .. } => system.clone(),
        };
        sys.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(sys)
    }

    pub fn nominal(&self) -> NominalController {
        match &self.scenario {
            ScenarioKind::Robot(r) => r.nominal(),
            ScenarioKind::Platoon(p) => p.nominal(),
            ScenarioKind::Explicit { nominal, .. } => nominal.clone(),
        }
    }

    /// Obstacles reported by simulation metrics.
    pub fn obstacles(&self) -> &[Obstacle] {
        match &self.scenario {
            ScenarioKind::Robot(r) => &r.obstacles,
            _ => &[],
        }
    }

    /// Overrides the seed of every block.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.training.seed = seed;
        self.cegis.seed = seed;
        self.surrogate.seed = seed;
        self.redver.seed = seed;
        self
    }
}
