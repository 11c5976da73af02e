//! Built-in deterministic continuous-control environments.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const ENV_NAMES: [&str; 3] = ["pendulum", "reacher2", "mountaincar_c"];

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f32>,
    pub reward: f64,
    /// True terminal state reached.
    pub done: bool,
    /// Time limit hit without a terminal.
    pub truncated: bool,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode from a seed-determined initial state.
    fn reset(&mut self, seed: u64) -> Vec<f32>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
    /// Actions that arrived outside the bounds and were clipped, since construction.
    fn clipped_actions(&self) -> u64;
}

/// `(−π, π]`
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    PI - (PI - theta).rem_euclid(2.0 * PI)
}

/// Shared bookkeeping: step counter, episode-over latch and the clip count.
#[derive(Clone, Debug)]
struct Clock {
    steps: usize,
    over: bool,
    clipped: u64,
}

impl Clock {
    fn new() -> Self {
        Clock {
            steps: 0,
            over: true,
            clipped: 0,
        }
    }

    fn restart(&mut self) {
        self.steps = 0;
        self.over = false;
    }

    /// Validates and clips an action against the spec.
    fn admit(&mut self, spec: &EnvSpec, action: &[f64]) -> Result<Vec<f64>> {
        if self.over {
            return Err(Error::Usage(format!("{}: step called before reset or after the episode ended", spec.name)));
        }
        if action.len() != spec.action_dim {
            return Err(Error::dim(format!("{} action", spec.name), spec.action_dim, action.len()));
        }
        if let Some(i) = action.iter().position(|a| !a.is_finite()) {
            return Err(Error::NonFinite { context: "action", index: i });
        }
        let mut out = action.to_vec();
        let mut any = false;
        for ((a, &lo), &hi) in out.iter_mut().zip(&spec.action_low).zip(&spec.action_high) {
            if *a < lo || *a > hi {
                *a = a.clamp(lo, hi);
                any = true;
            }
        }
        self.clipped += u64::from(any);
        Ok(out)
    }

    fn finish(&mut self, spec: &EnvSpec, obs: Vec<f32>, reward: f64, done: bool) -> StepResult {
        self.steps += 1;
        let truncated = !done && self.steps >= spec.max_steps;
        self.over = done || truncated;
        StepResult {
            obs,
            reward,
            done,
            truncated,
        }
    }
}

/// Inverted pendulum swing-up; `θ = 0` is upright.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    clock: Clock,
    pub theta: f64,
    pub theta_dot: f64,
}

impl Pendulum {
    pub const G: f64 = 10.0;
    pub const M: f64 = 1.0;
    pub const L: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;

    pub fn new() -> Self {
        Pendulum {
            spec: EnvSpec {
                name: "pendulum",
                obs_dim: 3,
                action_dim: 1,
                action_low: vec![-Self::MAX_TORQUE],
                action_high: vec![Self::MAX_TORQUE],
                max_steps: 200,
            },
            clock: Clock::new(),
            theta: 0.0,
            theta_dot: 0.0,
        }
    }

    /// Places the pendulum in an explicit state and starts a fresh episode.
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) -> Vec<f32> {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.clock.restart();
        self.obs()
    }

    fn obs(&self) -> Vec<f32> {
        vec![self.theta.cos() as f32, self.theta.sin() as f32, self.theta_dot as f32]
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = PI - rng.random_range(0.0..2.0 * PI);
        let theta_dot = rng.random_range(-1.0..=1.0);
        self.set_state(theta, theta_dot)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let u = self.clock.admit(&self.spec, action)?[0];
        let th = wrap_angle(self.theta);
        let reward = -(th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);
        let acc = 3.0 * Self::G / (2.0 * Self::L) * self.theta.sin() + 3.0 * u / (Self::M * Self::L * Self::L);
        self.theta_dot = (self.theta_dot + acc * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta = wrap_angle(self.theta + self.theta_dot * Self::DT);
        let obs = self.obs();
        Ok(self.clock.finish(&self.spec, obs, reward, false))
    }

    fn clipped_actions(&self) -> u64 {
        self.clock.clipped
    }
}

/// Planar two-link arm with unit links reaching for a random target.
#[derive(Clone, Debug)]
pub struct Reacher2 {
    spec: EnvSpec,
    clock: Clock,
    pub q: [f64; 2],
    pub q_dot: [f64; 2],
    pub target: [f64; 2],
}

impl Reacher2 {
    pub const DT: f64 = 0.02;
    pub const DAMPING: f64 = 0.1;

    pub fn new() -> Self {
        Reacher2 {
            spec: EnvSpec {
                name: "reacher2",
                obs_dim: 10,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                max_steps: 150,
            },
            clock: Clock::new(),
            q: [0.0; 2],
            q_dot: [0.0; 2],
            target: [1.0, 0.0],
        }
    }

    pub fn set_state(&mut self, q: [f64; 2], q_dot: [f64; 2], target: [f64; 2]) -> Vec<f32> {
        self.q = q;
        self.q_dot = q_dot;
        self.target = target;
        self.clock.restart();
        self.obs()
    }

    pub fn fingertip(&self) -> [f64; 2] {
        let [a, b] = self.q;
        [a.cos() + (a + b).cos(), a.sin() + (a + b).sin()]
    }

    pub fn distance(&self) -> f64 {
        let tip = self.fingertip();
        (tip[0] - self.target[0]).hypot(tip[1] - self.target[1])
    }

    fn obs(&self) -> Vec<f32> {
        let tip = self.fingertip();
        [
            self.q[0].cos(),
            self.q[0].sin(),
            self.q[1].cos(),
            self.q[1].sin(),
            self.q_dot[0],
            self.q_dot[1],
            self.target[0],
            self.target[1],
            tip[0] - self.target[0],
            tip[1] - self.target[1],
        ]
        .iter()
        .map(|&v| v as f32)
        .collect()
    }
}

impl Default for Reacher2 {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Reacher2 {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
        let radius = rng.random_range(0.2..1.9);
        let angle = rng.random_range(-PI..PI);
        self.set_state(q, [0.0; 2], [radius * angle.cos(), radius * angle.sin()])
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = self.clock.admit(&self.spec, action)?;
        for j in 0..2 {
            self.q_dot[j] += Self::DT * (a[j] - Self::DAMPING * self.q_dot[j]);
            self.q[j] = wrap_angle(self.q[j] + Self::DT * self.q_dot[j]);
        }
        let reward = -self.distance() - 0.01 * (a[0] * a[0] + a[1] * a[1]);
        let obs = self.obs();
        Ok(self.clock.finish(&self.spec, obs, reward, false))
    }

    fn clipped_actions(&self) -> u64 {
        self.clock.clipped
    }
}

/// Continuous mountain car.
#[derive(Clone, Debug)]
pub struct MountainCar {
    spec: EnvSpec,
    clock: Clock,
    pub position: f64,
    pub velocity: f64,
}

impl MountainCar {
    pub const MIN_POSITION: f64 = -1.2;
    pub const MAX_POSITION: f64 = 0.6;
    pub const MAX_SPEED: f64 = 0.07;
    pub const GOAL: f64 = 0.45;
    pub const POWER: f64 = 0.0015;

    pub fn new() -> Self {
        MountainCar {
            spec: EnvSpec {
                name: "mountaincar_c",
                obs_dim: 2,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                max_steps: 999,
            },
            clock: Clock::new(),
            position: -0.5,
            velocity: 0.0,
        }
    }

    pub fn set_state(&mut self, position: f64, velocity: f64) -> Vec<f32> {
        self.position = position;
        self.velocity = velocity;
        self.clock.restart();
        self.obs()
    }

    fn obs(&self) -> Vec<f32> {
        vec![self.position as f32, self.velocity as f32]
    }
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for MountainCar {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.set_state(rng.random_range(-0.6..-0.4), 0.0)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let force = self.clock.admit(&self.spec, action)?[0];
        self.velocity = (self.velocity + force * Self::POWER - 0.0025 * (3.0 * self.position).cos())
            .clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.position = (self.position + self.velocity).clamp(Self::MIN_POSITION, Self::MAX_POSITION);
        if self.position == Self::MIN_POSITION && self.velocity < 0.0 {
            self.velocity = 0.0;
        }
        let done = self.position >= Self::GOAL;
        let reward = -0.1 * force * force + if done { 100.0 } else { 0.0 };
        let obs = self.obs();
        Ok(self.clock.finish(&self.spec, obs, reward, done))
    }

    fn clipped_actions(&self) -> u64 {
        self.clock.clipped
    }
}

/// Constructs a fresh environment by name.
pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "reacher2" => Ok(Box::new(Reacher2::new())),
        "mountaincar_c" => Ok(Box::new(MountainCar::new())),
        other => Err(Error::Config(format!(
            "unknown environment '{other}'; valid names: {}",
            ENV_NAMES.join(", ")
        ))),
    }
}

pub fn env_spec(name: &str) -> Result<EnvSpec> {
    make_env(name).map(|e| e.spec().clone())
}
