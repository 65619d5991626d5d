//! Locomotion tasks: flat walking, goal-switching walking and uneven-terrain
//! traversal, with their observation extras, rewards and episode protocol.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::Genome;
use crate::physics::{SimConfig, SoftBody, Terrain, TrajectoryRow};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    Walker,
    BidirectionalWalker,
    ObstacleTraverser,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [
        TaskKind::Walker,
        TaskKind::BidirectionalWalker,
        TaskKind::ObstacleTraverser,
    ];

    /// Short name used on the command line and in result files.
    pub fn cli_name(self) -> &'static str {
        match self {
            TaskKind::Walker => "walker",
            TaskKind::BidirectionalWalker => "biwalker",
            TaskKind::ObstacleTraverser => "obstacle",
        }
    }

    /// Number of task-specific observation values.
    pub fn extras_len(self) -> usize {
        match self {
            TaskKind::Walker => 0,
            TaskKind::BidirectionalWalker => 2,
            TaskKind::ObstacleTraverser => OBSTACLE_SAMPLES,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "walker" | "Walker" | "Walker-v0" => Ok(TaskKind::Walker),
            "biwalker" | "BidirectionalWalker" | "BidirectionalWalker-v0" => {
                Ok(TaskKind::BidirectionalWalker)
            }
            "obstacle" | "ObstacleTraverser" | "ObstacleTraverser-v1" => {
                Ok(TaskKind::ObstacleTraverser)
            }
            other => Err(Error::Config(format!(
                "unknown task `{other}` (expected walker|biwalker|obstacle)"
            ))),
        }
    }
}

const OBSTACLE_SAMPLES: usize = 5;
const OBSTACLE_SAMPLE_SPACING: f64 = 0.1;
const ARRIVAL_RADIUS: f64 = 0.1;

/// Terrain generation parameters for the obstacle task.
const FLAT_RUNUP: f64 = 0.5;
const SEGMENTS: usize = 40;
const SEGMENT_LENGTH: (f64, f64) = (0.3, 0.8);
const HEIGHT_CHANGE: f64 = 0.15;
/// Horizontal run of the rise in a "step" segment.
const STEP_RUN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Control steps per episode.
    pub episode_length: usize,
    pub terrain_seed: u64,
    /// Control steps between goal switches.
    pub switch_interval: usize,
    /// Goal distance range, m.
    pub goal_distance_range: (f64, f64),
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        TaskSpec {
            kind,
            episode_length: 500,
            terrain_seed: 0,
            switch_interval: 150,
            goal_distance_range: (0.5, 1.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episode_length == 0 {
            return Err(Error::Config("episode_length must be > 0".into()));
        }
        if self.switch_interval == 0 {
            return Err(Error::Config("switch_interval must be > 0".into()));
        }
        let (lo, hi) = self.goal_distance_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!(
                "goal_distance_range ({lo}, {hi}) must be a positive interval"
            )));
        }
        Ok(())
    }

    pub fn make_terrain<T: Scalar>(&self, friction: T) -> Terrain<T> {
        match self.kind {
            TaskKind::Walker | TaskKind::BidirectionalWalker => Terrain::flat(friction),
            TaskKind::ObstacleTraverser => obstacle_terrain(self.terrain_seed, friction),
        }
    }
}

/// Flat run-up, then seeded ramps and steps: each segment spans
/// U(0.3, 0.8) m and changes height by U(-0.15, 0.15) m (floored at 0).
/// A step rises over its first 0.1 m and stays level; a ramp rises linearly.
pub fn obstacle_terrain<T: Scalar>(seed: u64, friction: T) -> Terrain<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["terrain"]));
    let mut vertices = vec![(T::of(-1e3), T::zero()), (T::of(FLAT_RUNUP), T::zero())];
    let mut x = FLAT_RUNUP;
    let mut h = 0.0f64;
    for _ in 0..SEGMENTS {
        let len = rng.random_range(SEGMENT_LENGTH.0..=SEGMENT_LENGTH.1);
        let dh = rng.random_range(-HEIGHT_CHANGE..=HEIGHT_CHANGE);
        let is_step = rng.random_bool(0.5);
        let next = (h + dh).max(0.0);
        if is_step {
            vertices.push((T::of(x + STEP_RUN), T::of(next)));
        }
        x += len;
        h = next;
        vertices.push((T::of(x), T::of(h)));
    }
    Terrain::from_vertices(vertices, friction)
}

/// Goal positions for the bidirectional walker. The k-th goal's direction
/// alternates from a seeded first sign and its distance is the k-th seeded
/// U(lo, hi) draw, measured from the COM at the moment of switching.
#[derive(Debug, Clone)]
struct GoalSchedule {
    rng: ChaCha8Rng,
    direction: f64,
    range: (f64, f64),
    interval: usize,
    goal_x: f64,
    since_switch: usize,
}

impl GoalSchedule {
    fn new(seed: u64, spec: &TaskSpec, com_x: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["goals"]));
        let direction = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut s = GoalSchedule {
            rng,
            direction: -direction,
            range: spec.goal_distance_range,
            interval: spec.switch_interval,
            goal_x: 0.0,
            since_switch: 0,
        };
        s.advance(com_x);
        s
    }

    fn advance(&mut self, com_x: f64) {
        self.direction = -self.direction;
        let (lo, hi) = self.range;
        let dist = if hi > lo { self.rng.random_range(lo..hi) } else { lo };
        self.goal_x = com_x + self.direction * dist;
        self.since_switch = 0;
    }

    /// Call once per control step after the reward is computed.
    fn after_step(&mut self, com_x: f64) {
        self.since_switch += 1;
        let arrived = (com_x - self.goal_x).abs() < ARRIVAL_RADIUS;
        if self.since_switch >= self.interval || arrived {
            self.advance(com_x);
        }
    }
}

/// Anything that maps an observation to actuator commands.
pub trait Controller<T> {
    fn act(&self, observation: &[T]) -> Result<Vec<T>>;
}

/// Always outputs zero action (rest-length multiplier 1).
#[derive(Debug, Clone, Copy)]
pub struct ZeroController {
    pub actuators: usize,
}

impl<T: Scalar> Controller<T> for ZeroController {
    fn act(&self, _observation: &[T]) -> Result<Vec<T>> {
        Ok(vec![T::zero(); self.actuators])
    }
}

/// Reward and status of one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// Episode length reached.
    pub done: bool,
}

/// A running episode of one genome on one task.
#[derive(Debug, Clone)]
pub struct TaskEnv<T> {
    pub spec: TaskSpec,
    pub config: SimConfig<T>,
    pub terrain: Terrain<T>,
    pub body: SoftBody<T>,
    goals: Option<GoalSchedule>,
    steps: usize,
    last_com_x: f64,
}

impl<T: Scalar> TaskEnv<T> {
    pub fn new(g: &Genome, spec: &TaskSpec, config: &SimConfig<T>, seed: u64) -> Result<Self> {
        Self::with_spawn(g, spec, config, seed, T::zero())
    }

    pub fn with_spawn(
        g: &Genome,
        spec: &TaskSpec,
        config: &SimConfig<T>,
        seed: u64,
        spawn_x: T,
    ) -> Result<Self> {
        let report = g.validate();
        if !report.is_ok() {
            return Err(Error::InvalidGenome(format!("{:?}", report.violations)));
        }
        spec.validate()?;
        config.validate()?;
        let terrain = spec.make_terrain(config.friction);
        let body = SoftBody::build(g, config, &terrain, spawn_x);
        let com_x = body.center_of_mass()[0].to_f64_lossy();
        let goals = (spec.kind == TaskKind::BidirectionalWalker)
            .then(|| GoalSchedule::new(seed, spec, com_x));
        Ok(TaskEnv {
            spec: spec.clone(),
            config: config.clone(),
            terrain,
            body,
            goals,
            steps: 0,
            last_com_x: com_x,
        })
    }

    pub fn observation_len(&self) -> usize {
        SoftBody::<T>::observation_len(self.body.points.len(), self.spec.kind.extras_len())
    }

    pub fn actuator_count(&self) -> usize {
        self.body.actuator_count()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn goal_x(&self) -> Option<f64> {
        self.goals.as_ref().map(|g| g.goal_x)
    }

    pub fn extras(&self) -> Vec<T> {
        let com = self.body.center_of_mass();
        match self.spec.kind {
            TaskKind::Walker => Vec::new(),
            TaskKind::BidirectionalWalker => {
                let g = self.goals.as_ref().expect("goal schedule");
                vec![T::of(g.goal_x) - com[0], T::of(g.direction)]
            }
            TaskKind::ObstacleTraverser => (1..=OBSTACLE_SAMPLES)
                .map(|k| {
                    let x = com[0] + T::of(OBSTACLE_SAMPLE_SPACING * k as f64);
                    self.terrain.height(x) - com[1]
                })
                .collect(),
        }
    }

    pub fn observe(&self) -> Vec<T> {
        self.body.observe(&self.extras())
    }

    /// Advances one control step. On `NumericalBlowup` the environment is
    /// left in an unusable state and the error is returned.
    pub fn step(&mut self, actions: &[T]) -> Result<StepOutcome> {
        self.body.step(&self.terrain, actions, &self.config)?;
        self.steps += 1;
        let com_x = self.body.center_of_mass()[0].to_f64_lossy();
        let reward = match &mut self.goals {
            None => com_x - self.last_com_x,
            Some(goals) => {
                let r = (self.last_com_x - goals.goal_x).abs() - (com_x - goals.goal_x).abs();
                goals.after_step(com_x);
                r
            }
        };
        self.last_com_x = com_x;
        Ok(StepOutcome {
            reward,
            done: self.steps >= self.spec.episode_length,
        })
    }
}

/// Number of lattice points (merged voxel corners) of a genome's body.
pub fn lattice_points(g: &Genome) -> usize {
    let w = g.width() + 1;
    let mut used = vec![false; w * (g.height() + 1)];
    for (r, c, _) in g.voxels() {
        for (i, j) in [(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)] {
            used[i * w + j] = true;
        }
    }
    used.into_iter().filter(|&u| u).count()
}

/// Observation length for `(genome, task)`.
pub fn observation_len(g: &Genome, kind: TaskKind) -> usize {
    2 + 2 * lattice_points(g) + kind.extras_len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub fitness: f64,
    pub steps_run: usize,
    /// Set when the episode was cut short by a numerical blowup.
    pub truncated: bool,
    pub final_com: [f64; 2],
    pub rewards: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trajectory: Vec<TrajectoryRow>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EpisodeOptions {
    pub spawn_x: f64,
    pub record_trajectory: bool,
}

pub fn run_episode<T: Scalar, C: Controller<T> + ?Sized>(
    g: &Genome,
    controller: &C,
    spec: &TaskSpec,
    config: &SimConfig<T>,
    seed: u64,
) -> Result<EpisodeResult> {
    run_episode_with(g, controller, spec, config, seed, EpisodeOptions::default())
}

pub fn run_episode_with<T: Scalar, C: Controller<T> + ?Sized>(
    g: &Genome,
    controller: &C,
    spec: &TaskSpec,
    config: &SimConfig<T>,
    seed: u64,
    options: EpisodeOptions,
) -> Result<EpisodeResult> {
    let mut env = TaskEnv::with_spawn(g, spec, config, seed, T::of(options.spawn_x))?;
    let mut rewards = Vec::with_capacity(spec.episode_length);
    let mut trajectory = Vec::new();
    let mut truncated = false;
    if options.record_trajectory {
        trajectory.push(env.body.trajectory_row(0));
    }
    for _ in 0..spec.episode_length {
        let obs = env.observe();
        let actions = controller.act(&obs)?;
        if actions.len() != env.actuator_count() {
            return Err(Error::DimensionMismatch {
                what: "controller output",
                expected: env.actuator_count(),
                got: actions.len(),
            });
        }
        match env.step(&actions) {
            Ok(outcome) => rewards.push(outcome.reward),
            Err(Error::NumericalBlowup(_)) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if options.record_trajectory {
            trajectory.push(env.body.trajectory_row(env.steps()));
        }
    }
    let fitness = rewards.iter().sum();
    let final_com = if truncated {
        [f64::NAN, f64::NAN]
    } else {
        let c = env.body.center_of_mass();
        [c[0].to_f64_lossy(), c[1].to_f64_lossy()]
    };
    Ok(EpisodeResult {
        fitness,
        steps_run: rewards.len(),
        truncated,
        final_com,
        rewards,
        trajectory,
    })
}

/// Writes trajectory rows as `step,com_x,com_y,com_vx,com_vy,kinetic_energy`.
pub fn write_trajectory_csv<W: std::io::Write>(rows: &[TrajectoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SimConfig<f64> {
        SimConfig::default()
    }

    #[test]
    fn task_names_parse() {
        for k in TaskKind::ALL {
            assert_eq!(k.cli_name().parse::<TaskKind>().unwrap(), k);
        }
        assert!("swimmer".parse::<TaskKind>().is_err());
    }

    #[test]
    fn flat_tasks_have_flat_terrain() {
        let t: Terrain<f64> = TaskSpec::new(TaskKind::Walker).make_terrain(1.0);
        for x in [-5.0, 0.0, 0.3, 100.0] {
            assert_eq!(t.height(x), 0.0);
        }
    }

    #[test]
    fn obstacle_terrain_deterministic_and_bounded() {
        let mut spec = TaskSpec::new(TaskKind::ObstacleTraverser);
        spec.terrain_seed = 7;
        let a: Terrain<f64> = spec.make_terrain(1.0);
        let b: Terrain<f64> = spec.make_terrain(1.0);
        assert_eq!(a, b);
        spec.terrain_seed = 8;
        assert_ne!(a, spec.make_terrain::<f64>(1.0));

        // regenerate the segment draws independently and check the bounds
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(7, &["terrain"]));
        let mut h = 0.0f64;
        for _ in 0..SEGMENTS {
            let len: f64 = rng.random_range(0.3..=0.8);
            let dh: f64 = rng.random_range(-0.15..=0.15);
            let _step = rng.random_bool(0.5);
            assert!((0.3..=0.8).contains(&len));
            h = (h + dh).max(0.0);
        }
        let verts: Vec<(f64, f64)> = a.vertices().collect();
        assert_eq!(verts.last().unwrap().1, h);
        let cap = 0.15 * SEGMENTS as f64;
        assert!(verts.iter().all(|&(_, y)| (0.0..=cap).contains(&y)));
    }

    #[test]
    fn extras_layouts() {
        let g = Genome::from_codes(1, 1, &[3]);
        let walker = TaskEnv::new(&g, &TaskSpec::new(TaskKind::Walker), &cfg(), 0).unwrap();
        assert!(walker.extras().is_empty());
        assert_eq!(walker.observe().len(), 10);
        assert_eq!(walker.observation_len(), observation_len(&g, TaskKind::Walker));

        let obstacle =
            TaskEnv::new(&g, &TaskSpec::new(TaskKind::ObstacleTraverser), &cfg(), 0).unwrap();
        let y = obstacle.body.center_of_mass()[1];
        // spawned on the flat run-up: all samples see h = 0
        for v in obstacle.extras() {
            assert_eq!(v, -y);
        }
    }

    #[test]
    fn biwalker_extras_echo_goal() {
        let g = Genome::from_codes(1, 1, &[3]);
        let spec = TaskSpec::new(TaskKind::BidirectionalWalker);
        let mut env = TaskEnv::new(&g, &spec, &cfg(), 3).unwrap();
        let com_x = env.body.center_of_mass()[0];
        assert!(com_x.abs() < 1e-12);
        // place the goal 1 m to the right
        env.goals.as_mut().unwrap().goal_x = com_x + 1.0;
        env.goals.as_mut().unwrap().direction = 1.0;
        let e = env.extras();
        assert!((e[0] - 1.0).abs() < 1e-12);
        assert_eq!(e[1], 1.0);
    }

    #[test]
    fn goal_schedule_alternates_and_replays() {
        let spec = TaskSpec::new(TaskKind::BidirectionalWalker);
        let mut a = GoalSchedule::new(11, &spec, 0.0);
        let mut b = GoalSchedule::new(11, &spec, 0.0);
        let first_dir = a.direction;
        let d0 = (a.goal_x).abs();
        assert!((0.5..1.5).contains(&d0));
        for _ in 0..150 {
            a.after_step(0.0);
            b.after_step(0.0);
        }
        assert_eq!(a.direction, -first_dir);
        assert_eq!(a.goal_x, b.goal_x);
        // arrival triggers an early switch
        let goal = a.goal_x;
        a.after_step(goal);
        assert_eq!(a.direction, first_dir);
        assert_eq!(a.since_switch, 0);
    }

    #[test]
    fn biwalker_reward_is_progress_toward_goal() {
        let g = Genome::from_codes(2, 1, &[3, 3]);
        let spec = TaskSpec::new(TaskKind::BidirectionalWalker);
        let mut env = TaskEnv::new(&g, &spec, &cfg(), 5).unwrap();
        let goal = env.goal_x().unwrap();
        let before = (env.body.center_of_mass()[0] - goal).abs();
        let out = env.step(&[0.5, -0.5]).unwrap();
        let after = (env.body.center_of_mass()[0] - goal).abs();
        assert!((out.reward - (before - after)).abs() < 1e-15);
    }

    #[test]
    fn zero_policy_barely_drifts() {
        let spec = TaskSpec::new(TaskKind::Walker);
        for seed in 0..5 {
            let g = crate::genome::random_genome(5, 5, seed).unwrap();
            let zero = ZeroController {
                actuators: g.actuator_count(),
            };
            let r = run_episode::<f64, _>(&g, &zero, &spec, &cfg(), 0).unwrap();
            assert!(r.fitness.abs() < 0.05, "seed {seed}: {}", r.fitness);
            assert!(!r.truncated);
            assert_eq!(r.steps_run, 500);
            assert_eq!(r.fitness, r.rewards.iter().sum::<f64>());
        }
    }

    struct Sine;
    impl Controller<f64> for Sine {
        fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
            let phase = obs[2] * 40.0;
            Ok(vec![phase.sin(), phase.cos()])
        }
    }

    #[test]
    fn walker_invariant_to_spawn_translation() {
        let g = Genome::from_codes(2, 2, &[3, 1, 4, 2]);
        let spec = TaskSpec {
            episode_length: 60,
            ..TaskSpec::new(TaskKind::Walker)
        };
        let run = |x| {
            run_episode_with::<f64, _>(
                &g,
                &Sine,
                &spec,
                &cfg(),
                0,
                EpisodeOptions {
                    spawn_x: x,
                    record_trajectory: false,
                },
            )
            .unwrap()
        };
        let (a, b) = (run(0.0), run(2.0));
        for (x, y) in a.rewards.iter().zip(&b.rewards) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn episodes_are_deterministic_and_recordable() {
        let g = Genome::from_codes(2, 2, &[3, 1, 4, 2]);
        let spec = TaskSpec {
            episode_length: 40,
            ..TaskSpec::new(TaskKind::ObstacleTraverser)
        };
        let opts = EpisodeOptions {
            spawn_x: 0.0,
            record_trajectory: true,
        };
        let a = run_episode_with::<f64, _>(&g, &Sine, &spec, &cfg(), 1, opts).unwrap();
        let b = run_episode_with::<f64, _>(&g, &Sine, &spec, &cfg(), 1, opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trajectory.len(), 41);
        let mut buf = Vec::new();
        write_trajectory_csv(&a.trajectory, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,com_x,com_y,com_vx,com_vy,kinetic_energy\n"));
        assert_eq!(text.lines().count(), 42);
    }

    #[test]
    fn controller_dimension_mismatch() {
        let g = Genome::from_codes(2, 2, &[3, 1, 4, 2]);
        let zero = ZeroController { actuators: 3 };
        let err = run_episode::<f64, _>(&g, &zero, &TaskSpec::new(TaskKind::Walker), &cfg(), 0)
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn blowup_truncates_episode() {
        let g = Genome::from_codes(2, 2, &[3, 1, 4, 2]);
        let mut bad = cfg();
        bad.dt = 0.05;
        bad.rigid.stiffness = 1e6;
        bad.max_speed = f64::MAX;
        let r = run_episode::<f64, _>(&g, &Sine, &TaskSpec::new(TaskKind::Walker), &bad, 0).unwrap();
        assert!(r.truncated);
        assert!(r.steps_run < 500);
        assert_eq!(r.fitness, r.rewards.iter().sum::<f64>());
    }

    #[test]
    fn lattice_point_counts() {
        assert_eq!(lattice_points(&Genome::from_codes(1, 1, &[3])), 4);
        assert_eq!(lattice_points(&Genome::from_codes(2, 1, &[3, 1])), 6);
        assert_eq!(lattice_points(&Genome::from_codes(5, 5, &[3; 25])), 36);
        assert_eq!(observation_len(&Genome::from_codes(5, 5, &[3; 25]), TaskKind::Walker), 74);
    }
}
