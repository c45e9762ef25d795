//! Online mitigation: detector-gated switching between the vision-based
//! controller and a fallback law.
//!
//! When the failure detector clears an observation the vision controller
//! acts unchanged; when it flags one, either a noisy-GPS state-feedback law
//! takes the heading command, or the forward speed is decremented while
//! the vision controller keeps steering. Speed never re-accelerates within
//! a rollout (the conservative reading of resumption), so the speed
//! sequence is nonincreasing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fd::{fd_classify, FdParams};
use crate::plant::{Command, ControlInput, ControlLaw, PlantConfig, State};
use crate::sensor::{render, CameraConfig, EnvParams, Observation, RunwayProfile};
use crate::vbc::{estimate, p_controller, EstimatorParams, CTE_GAIN, HE_GAIN};

/// Fallback law selection and constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FallbackMode {
    /// Steer from a noisy direct state measurement (sigma in meters/radians
    /// per channel).
    Gps { sigma: f64 },
    /// Shave `dv` m/s off the forward speed per flagged control step, never
    /// below `v_floor`.
    Velocity { dv: f64, v_floor: f64 },
}

impl FallbackMode {
    pub fn gps() -> Self {
        FallbackMode::Gps { sigma: 1.0 }
    }

    pub fn velocity() -> Self {
        FallbackMode::Velocity { dv: 0.01, v_floor: 0.0 }
    }
}

/// Mutable per-rollout pipeline state: current speed, the GPS noise
/// stream, and switch counters.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub v: f64,
    pub rng: ChaCha8Rng,
    pub activations: u64,
    pub steps: u64,
}

impl PipelineState {
    pub fn new(v: f64, seed: u64) -> Self {
        PipelineState { v, rng: ChaCha8Rng::seed_from_u64(seed), activations: 0, steps: 0 }
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple.
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Heading command from a noisy direct state measurement.
pub fn gps_fallback<R: Rng>(x: &State, sigma: f64, rng: &mut R, u_max: f64) -> ControlInput {
    let px_gps = x.px + sigma * standard_normal(rng);
    let theta_gps = x.theta + sigma * standard_normal(rng);
    ControlInput::clamped((CTE_GAIN * px_gps + HE_GAIN * theta_gps).tan(), u_max)
}

/// Apply the per-step speed decrement when flagged; the speed never rises.
pub fn velocity_fallback(ps: &mut PipelineState, fd_flag: bool, dv: f64, v_floor: f64) -> f64 {
    if fd_flag {
        ps.v = (ps.v - dv).max(v_floor);
    }
    ps.v
}

/// The detector-gated controller.
pub struct SafetyPipeline<'a> {
    pub estimator: &'a EstimatorParams,
    pub fd: &'a FdParams,
    pub q_hat: f64,
    pub mode: FallbackMode,
    pub u_max: f64,
    pub state: PipelineState,
}

impl SafetyPipeline<'_> {
    /// One switching decision: returns (heading rate, speed for this step,
    /// detector flag).
    pub fn switch_controller(
        &mut self,
        obs: &Observation,
        x: &State,
    ) -> Result<(ControlInput, f64, bool)> {
        self.state.steps += 1;
        let flagged = fd_classify(self.fd, self.q_hat, obs)? == 1;
        if !flagged {
            let u = p_controller(&estimate(obs, self.estimator)?, self.u_max);
            return Ok((u, self.state.v, false));
        }
        self.state.activations += 1;
        match self.mode {
            FallbackMode::Gps { sigma } => {
                let u = gps_fallback(x, sigma, &mut self.state.rng, self.u_max);
                Ok((u, self.state.v, true))
            }
            FallbackMode::Velocity { dv, v_floor } => {
                // The heading command stays with the vision controller;
                // only the speed budget shrinks.
                let v = velocity_fallback(&mut self.state, true, dv, v_floor);
                let u = p_controller(&estimate(obs, self.estimator)?, self.u_max);
                Ok((u, v, true))
            }
        }
    }
}

/// A control law with an activation counter (fallback engagements).
pub trait MonitoredLaw: ControlLaw {
    fn activations(&self) -> u64 {
        0
    }
}

/// Bare vision-based controller at constant speed.
pub struct BareVbcLaw<'a> {
    pub estimator: &'a EstimatorParams,
    pub cam: &'a CameraConfig,
    pub profile: &'a RunwayProfile,
    pub env: EnvParams,
    pub u_max: f64,
    pub v: f64,
}

impl ControlLaw for BareVbcLaw<'_> {
    fn command(&mut self, x: &State, _t: f64) -> Result<Command> {
        let obs = render(x, &self.env, self.cam, self.profile);
        let u = p_controller(&estimate(&obs, self.estimator)?, self.u_max);
        Ok(Command { u, v: self.v })
    }
}

impl MonitoredLaw for BareVbcLaw<'_> {}

/// Detector-gated pipeline as a rollout law.
pub struct PipelineLaw<'a> {
    pub pipeline: SafetyPipeline<'a>,
    pub cam: &'a CameraConfig,
    pub profile: &'a RunwayProfile,
    pub env: EnvParams,
}

impl ControlLaw for PipelineLaw<'_> {
    fn command(&mut self, x: &State, _t: f64) -> Result<Command> {
        let obs = render(x, &self.env, self.cam, self.profile);
        let (u, v, _) = self.pipeline.switch_controller(&obs, x)?;
        Ok(Command { u, v })
    }
}

impl MonitoredLaw for PipelineLaw<'_> {
    fn activations(&self) -> u64 {
        self.pipeline.state.activations
    }
}

/// One rollout outcome for the empirical unsafe-set evaluation.
#[derive(Debug, Clone, Copy)]
pub struct RolloutOutcome {
    pub failed: bool,
    pub activations: u64,
}

/// Aggregate of an unsafe-fraction pass.
#[derive(Debug, Clone, Copy)]
pub struct UnsafeStats {
    pub n: usize,
    pub n_unsafe: usize,
    pub unsafe_fraction: f64,
    pub mean_activations: f64,
    pub total_steps: u64,
}

/// Roll out a controller from every initial state and report the fraction
/// of trajectories that enter the failure set. The factory receives the
/// state index so per-rollout noise streams can be derived from
/// (seed, index); callers compare controllers on identical initial sets
/// and seeds.
pub fn empirical_unsafe_fraction<'a, F>(
    factory: F,
    initial_states: &[State],
    horizon: f64,
    cfg: &PlantConfig,
) -> Result<UnsafeStats>
where
    F: Fn(usize) -> Box<dyn MonitoredLaw + 'a>,
{
    if initial_states.is_empty() {
        return Err(crate::error::Error::InvalidArgument("empty initial state set".into()));
    }
    let mut n_unsafe = 0;
    let mut activations = 0u64;
    let mut total_steps = 0u64;
    for (idx, x0) in initial_states.iter().enumerate() {
        let mut law = factory(idx);
        let traj = crate::plant::rollout(x0, law.as_mut(), horizon, cfg)?;
        if traj.enters_failure() {
            n_unsafe += 1;
        }
        activations += law.activations();
        total_steps += traj.samples.len() as u64 - 1;
    }
    Ok(UnsafeStats {
        n: initial_states.len(),
        n_unsafe,
        unsafe_fraction: n_unsafe as f64 / initial_states.len() as f64,
        mean_activations: activations as f64 / initial_states.len() as f64,
        total_steps,
    })
}
