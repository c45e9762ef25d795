//! Taxiing plant: kinematics, failure set, and trajectory rollout.
//!
//! The aircraft is a constant-speed unicycle on the runway plane. State is
//! (cross-track error `px`, downtrack position `py`, heading error `theta`),
//! the control is the heading rate, and the failure set is the off-runway
//! region `|px| >= B`. Heading is kept in radians internally and normalized
//! to (-pi, pi]; degrees appear only at file/CLI boundaries.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aircraft pose in the runway frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Cross-track error, meters (0 on the centerline, positive right).
    pub px: f64,
    /// Downtrack position, meters.
    pub py: f64,
    /// Heading error from the runway axis, radians, in (-pi, pi].
    pub theta: f64,
}

impl State {
    pub fn new(px: f64, py: f64, theta: f64) -> Self {
        State { px, py, theta: normalize_angle(theta) }
    }

    pub fn is_finite(&self) -> bool {
        self.px.is_finite() && self.py.is_finite() && self.theta.is_finite()
    }
}

/// Wrap an angle to (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Heading-rate command, rad/s, clamped into the compact control set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput(pub f64);

impl ControlInput {
    pub fn clamped(u: f64, u_max: f64) -> Self {
        ControlInput(u.clamp(-u_max, u_max))
    }
}

/// Plant constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlantConfig {
    /// Forward speed, m/s.
    pub v: f64,
    /// Runway half-width B, meters; failure set is |px| >= B.
    pub half_width: f64,
    /// Integration step, seconds.
    pub dt: f64,
    /// Heading-rate bound, rad/s. The control set is [-u_max, u_max].
    pub u_max: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            v: 5.0,
            half_width: 10.0,
            dt: 0.05,
            // tan() output bound matching a +-1.3 rad argument window.
            u_max: 1.3f64.tan(),
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v >= 0.0 && self.half_width > 0.0 && self.dt > 0.0 && self.u_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "plant config out of range: v={} B={} dt={} u_max={}",
                self.v, self.half_width, self.dt, self.u_max
            )));
        }
        Ok(())
    }
}

/// State derivative (per-second rates) of the taxiing kinematics:
/// (v sin theta, v cos theta, u).
pub fn flow(x: &State, u: ControlInput, cfg: &PlantConfig) -> (f64, f64, f64) {
    (cfg.v * x.theta.sin(), cfg.v * x.theta.cos(), u.0)
}

fn flow_at(px_unused: f64, theta: f64, v: f64, u: f64) -> (f64, f64, f64) {
    let _ = px_unused;
    (v * theta.sin(), v * theta.cos(), u)
}

/// One RK4 step of `flow` with held control and speed; heading re-normalized.
pub fn step_with_speed(x: &State, u: ControlInput, v: f64, dt: f64) -> State {
    let f = |s: &State| flow_at(s.px, s.theta, v, u.0);
    let k1 = f(x);
    let mid1 = State { px: x.px + 0.5 * dt * k1.0, py: x.py + 0.5 * dt * k1.1, theta: x.theta + 0.5 * dt * k1.2 };
    let k2 = f(&mid1);
    let mid2 = State { px: x.px + 0.5 * dt * k2.0, py: x.py + 0.5 * dt * k2.1, theta: x.theta + 0.5 * dt * k2.2 };
    let k3 = f(&mid2);
    let end = State { px: x.px + dt * k3.0, py: x.py + dt * k3.1, theta: x.theta + dt * k3.2 };
    let k4 = f(&end);
    State::new(
        x.px + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        x.py + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        x.theta + dt / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2),
    )
}

/// One RK4 step at the configured speed.
pub fn step(x: &State, u: ControlInput, cfg: &PlantConfig) -> State {
    step_with_speed(x, u, cfg.v, cfg.dt)
}

/// Signed distance to the failure set: B - |px|, negative inside it.
pub fn signed_distance(x: &State, cfg: &PlantConfig) -> f64 {
    cfg.half_width - x.px.abs()
}

/// Per-step command issued by a control law: heading rate plus the speed to
/// hold over the step (fallback laws vary the speed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub u: ControlInput,
    pub v: f64,
}

/// A closed-loop control law driven by the plant state. Implementations may
/// keep mutable internals (detector counters, noise streams, speed schedules).
pub trait ControlLaw {
    fn command(&mut self, x: &State, t: f64) -> Result<Command>;
}

impl<F> ControlLaw for F
where
    F: FnMut(&State, f64) -> Result<Command>,
{
    fn command(&mut self, x: &State, t: f64) -> Result<Command> {
        self(x, t)
    }
}

/// One trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: State,
    pub u: ControlInput,
    pub v: f64,
    pub in_failure: bool,
}

/// Rollout record: fixed-step samples and the first failure entry time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub first_failure_time: Option<f64>,
}

impl Trajectory {
    pub fn enters_failure(&self) -> bool {
        self.first_failure_time.is_some()
    }

    pub fn final_state(&self) -> &State {
        &self.samples.last().expect("trajectory has at least one sample").state
    }

    /// Columnar CSV export with the header `t,px,py,theta_deg,u,v,in_failure`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,px,py,theta_deg,u,v,in_failure")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                s.t,
                s.state.px,
                s.state.py,
                s.state.theta.to_degrees(),
                s.u.0,
                s.v,
                u8::from(s.in_failure)
            )?;
        }
        Ok(())
    }
}

/// Integrate the plant under `law` from `x0` for `horizon` seconds.
///
/// Samples are recorded every `cfg.dt` including both endpoints. The rollout
/// keeps going after the failure set is entered so that the full observation
/// trace over a failing run remains available; `first_failure_time` records
/// the earliest sample inside the failure set. Control-law errors abort the
/// rollout and carry the offending timestamp.
pub fn rollout(
    x0: &State,
    law: &mut dyn ControlLaw,
    horizon: f64,
    cfg: &PlantConfig,
) -> Result<Trajectory> {
    if horizon < 0.0 {
        return Err(Error::InvalidArgument(format!("negative horizon {horizon}")));
    }
    let n_steps = (horizon / cfg.dt).round() as usize;
    let mut samples = Vec::with_capacity(n_steps + 1);
    let mut first_failure_time = None;
    let mut x = State::new(x0.px, x0.py, x0.theta);
    let mut last_cmd = None;
    for k in 0..=n_steps {
        let t = k as f64 * cfg.dt;
        let cmd = if k < n_steps {
            let c = law
                .command(&x, t)
                .map_err(|e| Error::PolicyAt { t, source: Box::new(e) })?;
            last_cmd = Some(c);
            c
        } else {
            // Final sample: no further step is taken; repeat the last command.
            last_cmd.unwrap_or(Command { u: ControlInput(0.0), v: cfg.v })
        };
        let in_failure = signed_distance(&x, cfg) < 0.0;
        if in_failure && first_failure_time.is_none() {
            first_failure_time = Some(t);
        }
        samples.push(TrajectorySample { t, state: x, u: cmd.u, v: cmd.v, in_failure });
        if k < n_steps {
            x = step_with_speed(&x, cmd.u, cmd.v, cfg.dt);
        }
    }
    Ok(Trajectory { samples, first_failure_time })
}
