//! Failure mining: turning reachable tubes into labeled observation
//! datasets and annotated failure traces.
//!
//! Sampled states are rendered and labeled by tube membership - the label
//! says "starting here eventually leaves the runway", a closed-loop
//! property, not a perception-error property. The prediction-error labeling
//! baseline is included for comparison.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::ObsRecord;
use crate::levelset::GridSpec;
use crate::plant::{rollout, ControlLaw, PlantConfig, State, Trajectory};
use crate::sensor::{render, CameraConfig, EnvParams, Observation, RunwayProfile};
use crate::vbc::{estimate, EstimatorParams};

/// Class balance bookkeeping from a labeling pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct MiningStats {
    pub n_failure: usize,
    pub n_safe: usize,
    /// Samples whose tube query fell outside the queryable volume.
    pub n_skipped: usize,
}

impl MiningStats {
    pub fn failure_fraction(&self) -> f64 {
        let n = self.n_failure + self.n_safe;
        if n == 0 {
            0.0
        } else {
            self.n_failure as f64 / n as f64
        }
    }
}

/// Draw `n` states/environments uniformly, render each, and label it by
/// tube membership. Out-of-bounds tube queries are skipped and counted.
pub fn sample_and_label<F>(
    n: usize,
    bounds: &GridSpec,
    envs: &[EnvParams],
    tube: F,
    cam: &CameraConfig,
    catalog: &[RunwayProfile],
    seed: u64,
) -> Result<(Vec<ObsRecord>, MiningStats)>
where
    F: Fn(&State, &EnvParams) -> Result<bool>,
{
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    if envs.is_empty() {
        return Err(Error::InvalidArgument("no environments to sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut stats = MiningStats::default();
    let mut produced = 0;
    while produced < n {
        let x = bounds.sample_uniform(&mut rng);
        let d = envs[rng.random_range(0..envs.len())];
        let member = match tube(&x, &d) {
            Ok(m) => m,
            Err(Error::OutOfBounds { .. }) => {
                stats.n_skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let profile = catalog.get(d.runway_id as usize).ok_or_else(|| {
            Error::InvalidArgument(format!("runway {} not in catalog", d.runway_id))
        })?;
        let obs = render(&x, &d, cam, profile);
        records.push(ObsRecord::from_observation(&obs, Some(u8::from(member)))?);
        if member {
            stats.n_failure += 1;
        } else {
            stats.n_safe += 1;
        }
        produced += 1;
    }
    Ok((records, stats))
}

/// A failing rollout with the observation trace the controller saw.
#[derive(Debug, Clone)]
pub struct FailureTrace {
    pub seed_state: State,
    pub env: EnvParams,
    pub trajectory: Trajectory,
    pub frames: Vec<Observation>,
    /// Index of the first sample inside the failure set.
    pub first_failure_step: usize,
}

/// Tube-says-unsafe / rollout-stays-safe diagnostics from trace mining.
#[derive(Debug, Clone, Copy)]
pub struct TubeDisagreement {
    pub seed_state: State,
    pub env: EnvParams,
}

/// Roll out each in-tube seed and keep the traces that actually enter the
/// failure set, with their per-step observations. Seeds that never fail are
/// reported separately - that disagreement rate is itself a tube-quality
/// metric and is never silently dropped.
#[allow(clippy::too_many_arguments)]
pub fn mine_failure_traces<L, F>(
    seeds: &[State],
    mut law_factory: F,
    env: &EnvParams,
    horizon: f64,
    cfg: &PlantConfig,
    cam: &CameraConfig,
    profile: &RunwayProfile,
) -> Result<(Vec<FailureTrace>, Vec<TubeDisagreement>)>
where
    L: ControlLaw,
    F: FnMut() -> L,
{
    let mut traces = Vec::new();
    let mut disagreements = Vec::new();
    for &seed_state in seeds {
        let mut law = law_factory();
        let trajectory = rollout(&seed_state, &mut law, horizon, cfg)?;
        match trajectory.samples.iter().position(|s| s.in_failure) {
            Some(first_failure_step) => {
                let frames = trajectory
                    .samples
                    .iter()
                    .map(|s| render(&s.state, env, cam, profile))
                    .collect();
                traces.push(FailureTrace {
                    seed_state,
                    env: *env,
                    trajectory,
                    frames,
                    first_failure_step,
                });
            }
            None => disagreements.push(TubeDisagreement { seed_state, env: *env }),
        }
    }
    Ok((traces, disagreements))
}

/// Component-level baseline: label an observation as failure when the
/// estimator's weighted prediction error exceeds `threshold`.
///
/// The error norm combines meters and radians with unit weights:
/// sqrt((px_hat - px)^2 + (theta_hat - theta)^2).
pub fn prediction_error_labels(
    records: &[ObsRecord],
    width: usize,
    height: usize,
    estimator: &EstimatorParams,
    threshold: f64,
) -> Result<Vec<u8>> {
    let mut labels = Vec::with_capacity(records.len());
    for rec in records {
        let obs = rec.to_observation(width, height)?;
        let est = estimate(&obs, estimator)?;
        let err = ((est.px_hat - rec.px as f64).powi(2)
            + (est.theta_hat - rec.theta as f64).powi(2))
        .sqrt();
        labels.push(u8::from(err > threshold));
    }
    Ok(labels)
}

pub const DEFAULT_PREDICTION_ERROR_THRESHOLD: f64 = 0.45;

/// Duplicate failure records round-robin until they make up at least
/// `target_failure_fraction` of the dataset, then shuffle.
pub fn upsample(
    records: &[ObsRecord],
    target_failure_fraction: f64,
    seed: u64,
) -> Result<Vec<ObsRecord>> {
    if !(0.0..1.0).contains(&target_failure_fraction) {
        return Err(Error::InvalidArgument(format!(
            "target failure fraction must be in [0, 1), got {target_failure_fraction}"
        )));
    }
    let failures: Vec<&ObsRecord> = records.iter().filter(|r| r.label == Some(1)).collect();
    let n_safe = records.iter().filter(|r| r.label == Some(0)).count();
    if failures.is_empty() || n_safe == 0 {
        return Err(Error::InvalidArgument(
            "upsampling requires both classes present".into(),
        ));
    }
    if failures.len() + n_safe != records.len() {
        return Err(Error::InvalidArgument("upsampling requires labeled records".into()));
    }
    let mut out: Vec<ObsRecord> = records.to_vec();
    let mut n_failure = failures.len();
    let mut cursor = 0;
    while (n_failure as f64) / ((n_failure + n_safe) as f64) < target_failure_fraction {
        out.push(failures[cursor % failures.len()].clone());
        cursor += 1;
        n_failure += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.shuffle(&mut rng);
    Ok(out)
}
