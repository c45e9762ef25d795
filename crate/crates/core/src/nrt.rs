//! Learned reachable tube: a sinusoidal value network V(x, d, h) trained by
//! self-supervision on the variational-inequality residual.
//!
//! The network takes the state (affinely normalized to [-1, 1] per axis
//! from the grid bounds), a one-hot environment encoding (3 time-of-day +
//! 2 cloud categories), and normalized time-to-go h/T. Training minimizes
//!
//! ```text
//! mean |min( -dV/dh + <grad_x V, f(x, u(x,d))>, l(x) - V )|
//!   + lambda * mean |V(x, d, 0) - l(x)|
//! ```
//!
//! over uniformly sampled collocation points, with the time window grown
//! from {0} to [0, T] on a curriculum. Input gradients are exact (layer
//! chain rule, no finite differencing); closed-loop policy values come from
//! a cached lookup lattice at half the grid-oracle resolution, since
//! rendering dominates the cost of policy queries.
//!
//! The learned tube is the sub-zero level set of V(., ., T).

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::levelset::{precompute_policy, GridSpec, PolicyTable};
use crate::nn::{Activation, Adam, Arch, Mlp};
use crate::plant::{PlantConfig, State};
use crate::sensor::EnvParams;

/// Meters of value represented by one unit of raw network output.
pub const VALUE_SCALE: f64 = 10.0;
/// Version tag for the one-hot environment encoding laid out below.
pub const ENV_ENCODING_VERSION: u8 = 1;
const INPUT_DIM: usize = 9;

/// Value network plus the normalization volume it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNetParams {
    pub mlp: Mlp,
    /// State normalization bounds (also the valid query volume).
    pub bounds: GridSpec,
    /// Horizon T: tube membership is decided at time-to-go T.
    pub horizon: f64,
}

impl ValueNetParams {
    pub fn omega0(&self) -> f64 {
        self.mlp.arch.omega0
    }
}

/// Sinusoidal-network initialization over the given query volume.
pub fn init_network(
    bounds: &GridSpec,
    horizon: f64,
    hidden: &[usize],
    omega0: f64,
    seed: u64,
) -> Result<ValueNetParams> {
    bounds.validate()?;
    if horizon <= 0.0 {
        return Err(Error::InvalidArgument(format!("horizon must be > 0, got {horizon}")));
    }
    let arch = Arch::new(INPUT_DIM, hidden, 1, Activation::Sine).with_omega0(omega0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ValueNetParams {
        mlp: Mlp::init_siren(arch, &mut rng)?,
        bounds: bounds.clone(),
        horizon,
    })
}

/// One collocation point.
#[derive(Debug, Clone, Copy)]
pub struct NrtSample {
    pub state: State,
    pub env: EnvParams,
    /// Time-to-go, seconds, in [0, T].
    pub h: f64,
}

fn norm_axis(v: f64, min: f64, max: f64) -> f64 {
    2.0 * (v - min) / (max - min) - 1.0
}

fn encode(p: &ValueNetParams, s: &NrtSample) -> [f64; INPUT_DIM] {
    let b = &p.bounds;
    let mut input = [0.0; INPUT_DIM];
    input[0] = norm_axis(s.state.px, b.px.min, b.px.max);
    input[1] = norm_axis(s.state.py, b.py.min, b.py.max);
    input[2] = norm_axis(s.state.theta, b.theta.min, b.theta.max);
    input[3 + s.env.d1.code() as usize] = 1.0;
    input[6 + s.env.d2.code() as usize] = 1.0;
    input[8] = s.h / p.horizon;
    input
}

/// Chain-rule factors from normalized network inputs back to physical
/// (px, py, theta, h) units.
fn chain_factors(p: &ValueNetParams) -> [f64; 4] {
    let b = &p.bounds;
    [
        2.0 / (b.px.max - b.px.min),
        2.0 / (b.py.max - b.py.min),
        2.0 / (b.theta.max - b.theta.min),
        1.0 / p.horizon,
    ]
}

/// Value (meters) and its exact physical-unit input gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueAndGrads {
    pub v: f64,
    pub d_px: f64,
    pub d_py: f64,
    pub d_theta: f64,
    pub d_h: f64,
}

/// Forward pass plus exact input gradients in physical units.
pub fn eval_value_and_grads(p: &ValueNetParams, s: &NrtSample) -> Result<ValueAndGrads> {
    let input = encode(p, s);
    let (out, jac) = p.mlp.forward_with_input_jacobian(&input)?;
    let ch = chain_factors(p);
    Ok(ValueAndGrads {
        v: out[0] * VALUE_SCALE,
        d_px: jac[0] * ch[0] * VALUE_SCALE,
        d_py: jac[1] * ch[1] * VALUE_SCALE,
        d_theta: jac[2] * ch[2] * VALUE_SCALE,
        d_h: jac[8] * ch[3] * VALUE_SCALE,
    })
}

/// Plain value query (meters).
pub fn value(p: &ValueNetParams, x: &State, d: &EnvParams, h: f64) -> Result<f64> {
    let input = encode(p, &NrtSample { state: *x, env: *d, h });
    Ok(p.mlp.forward(&input)?[0] * VALUE_SCALE)
}

/// Tube membership: V(x, d, T) <= 0. Queries outside the trained volume are
/// rejected.
pub fn nrt_member(p: &ValueNetParams, x: &State, d: &EnvParams) -> Result<bool> {
    if !p.bounds.contains(x) {
        let (dim, value) = if x.px < p.bounds.px.min || x.px > p.bounds.px.max {
            (0, x.px)
        } else if x.py < p.bounds.py.min || x.py > p.bounds.py.max {
            (1, x.py)
        } else {
            (2, x.theta)
        };
        return Err(Error::OutOfBounds { dim, value });
    }
    Ok(value(p, x, d, p.horizon)? <= 0.0)
}

/// Policy lookup lattice: closed-loop commands cached on a coarse grid,
/// one table per environment, nearest-node quantization.
#[derive(Debug, Clone)]
pub struct PolicyLattice {
    tables: BTreeMap<(u8, u8, u8), PolicyTable>,
}

fn env_key(d: &EnvParams) -> (u8, u8, u8) {
    (d.runway_id, d.d1.code(), d.d2.code())
}

impl PolicyLattice {
    /// Evaluate the policy on a lattice at half the oracle resolution for
    /// each environment.
    pub fn build<F>(oracle_spec: &GridSpec, envs: &[EnvParams], policy: F) -> Result<Self>
    where
        F: Fn(&State, &EnvParams) -> Result<f64> + Sync,
    {
        let lattice_spec = oracle_spec.coarsened();
        let mut tables = BTreeMap::new();
        for env in envs {
            let table = precompute_policy(&lattice_spec, env, &policy)?;
            tables.insert(env_key(env), table);
        }
        Ok(PolicyLattice { tables })
    }

    pub fn from_tables(tables: Vec<PolicyTable>) -> Self {
        PolicyLattice {
            tables: tables.into_iter().map(|t| (env_key(&t.env), t)).collect(),
        }
    }

    pub fn envs(&self) -> Vec<EnvParams> {
        self.tables.values().map(|t| t.env).collect()
    }

    pub fn tables(&self) -> impl Iterator<Item = &PolicyTable> {
        self.tables.values()
    }

    /// Nearest-node cached policy value.
    pub fn lookup(&self, x: &State, d: &EnvParams) -> Result<f64> {
        let table = self.tables.get(&env_key(d)).ok_or_else(|| {
            Error::InvalidArgument(format!("no policy table for environment {}", d.label()))
        })?;
        let spec = &table.spec;
        let snap = |v: f64, min: f64, step: f64, count: usize| -> usize {
            let i = ((v - min) / step).round();
            (i.max(0.0) as usize).min(count - 1)
        };
        let i = snap(x.px, spec.px.min, spec.px.step(), spec.px.count);
        let j = snap(x.py, spec.py.min, spec.py.step(), spec.py.count);
        let k = snap(x.theta, spec.theta.min, spec.theta.step(), spec.theta.count);
        Ok(table.u[spec.index(i, j, k)] as f64)
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct NrtHyper {
    /// Initial-condition loss weight.
    pub lambda: f64,
    pub batch: usize,
    pub iters: usize,
    pub lr: f64,
    /// Fraction of iterations spent fitting the h=0 condition alone before
    /// the time window starts growing toward [0, T].
    pub pretrain_frac: f64,
    /// Horizon T, seconds.
    pub horizon: f64,
    /// Collocation pool size (distinct state/environment points).
    pub pool: usize,
    pub seed: u64,
}

impl Default for NrtHyper {
    fn default() -> Self {
        NrtHyper {
            lambda: 100.0,
            batch: 128,
            iters: 15_000,
            lr: 2e-4,
            pretrain_frac: 0.2,
            horizon: 10.0,
            pool: 50_000,
            seed: 0,
        }
    }
}

impl NrtHyper {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0
            || self.batch == 0
            || self.iters == 0
            || self.lr <= 0.0
            || !(0.0..1.0).contains(&self.pretrain_frac)
            || self.horizon <= 0.0
            || self.pool == 0
        {
            return Err(Error::InvalidArgument("bad value-net hyperparameters".to_string()));
        }
        Ok(())
    }
}

/// Loss terms at one iteration: (total, mean residual loss, mean
/// initial-condition loss).
pub type LossRecord = (f64, f64, f64);

/// Variational-inequality residual loss over a batch (no gradients).
pub fn deepreach_loss(
    batch: &[NrtSample],
    p: &ValueNetParams,
    policy: &PolicyLattice,
    cfg: &PlantConfig,
    lambda: f64,
) -> Result<LossRecord> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut ham_sum = 0.0;
    let mut init_sum = 0.0;
    for s in batch {
        let g = eval_value_and_grads(p, s)?;
        let u = policy.lookup(&s.state, &s.env)?;
        let (fx, fy, _) = crate::plant::flow(&s.state, crate::plant::ControlInput(u), cfg);
        let pde = -g.d_h + g.d_px * fx + g.d_py * fy + g.d_theta * u;
        let l = cfg.half_width - s.state.px.abs();
        let resid = pde.min(l - g.v);
        ham_sum += resid.abs();

        let v0 = value(p, &s.state, &s.env, 0.0)?;
        init_sum += (v0 - l).abs();
        if !(ham_sum + init_sum).is_finite() {
            return Err(Error::Divergence {
                context: "value-net loss".into(),
                detail: format!("non-finite loss at sample ({}, {})", s.state.px, s.state.py),
            });
        }
    }
    let n = batch.len() as f64;
    let (ham, init) = (ham_sum / n, init_sum / n);
    Ok((ham + lambda * init, ham, init))
}

/// One gradient accumulation over a batch. `ham_weight` gates the residual
/// term (0 during the pretrain phase). Returns the loss record.
fn loss_and_grad(
    batch: &[NrtSample],
    p: &ValueNetParams,
    policy: &PolicyLattice,
    cfg: &PlantConfig,
    lambda: f64,
    ham_weight: f64,
    grad: &mut [f64],
) -> Result<LossRecord> {
    let ch = chain_factors(p);
    let n = batch.len() as f64;
    let w = 1.0 / n;
    let mut ham_sum = 0.0;
    let mut init_sum = 0.0;
    for s in batch {
        if ham_weight > 0.0 {
            let input = encode(p, s);
            let ext = p.mlp.eval_extended(&input)?;
            let out = ext.output()[0];
            let jac = ext.output_jacobian();
            let v = out * VALUE_SCALE;
            let d_px = jac[0] * ch[0] * VALUE_SCALE;
            let d_py = jac[1] * ch[1] * VALUE_SCALE;
            let d_th = jac[2] * ch[2] * VALUE_SCALE;
            let d_h = jac[8] * ch[3] * VALUE_SCALE;

            let u = policy.lookup(&s.state, &s.env)?;
            let (fx, fy, _) = crate::plant::flow(&s.state, crate::plant::ControlInput(u), cfg);
            let pde = -d_h + d_px * fx + d_py * fy + d_th * u;
            let l = cfg.half_width - s.state.px.abs();
            let resid = pde.min(l - v);
            ham_sum += resid.abs();

            let sgn = if resid > 0.0 { 1.0 } else if resid < 0.0 { -1.0 } else { 0.0 };
            let coeff = ham_weight * w * sgn;
            if coeff != 0.0 {
                if pde <= l - v {
                    // Residual follows the PDE branch: seed the Jacobian
                    // adjoints (physical-unit chain factors included).
                    let mut d_jac = [0.0; INPUT_DIM];
                    d_jac[0] = coeff * fx * ch[0] * VALUE_SCALE;
                    d_jac[1] = coeff * fy * ch[1] * VALUE_SCALE;
                    d_jac[2] = coeff * u * ch[2] * VALUE_SCALE;
                    d_jac[8] = -coeff * ch[3] * VALUE_SCALE;
                    p.mlp.backprop_from_extended(&ext, &[0.0], &d_jac, grad);
                } else {
                    // Obstacle branch: d resid / d V = -1.
                    p.mlp.backprop_from_extended(
                        &ext,
                        &[-coeff * VALUE_SCALE],
                        &[0.0; INPUT_DIM],
                        grad,
                    );
                }
            }
        }

        // h = 0 companion: initial-condition term.
        let zero_sample = NrtSample { h: 0.0, ..*s };
        let input0 = encode(p, &zero_sample);
        let v0 = p.mlp.forward(&input0)?[0] * VALUE_SCALE;
        let l = cfg.half_width - s.state.px.abs();
        init_sum += (v0 - l).abs();
        let sgn0 = if v0 > l { 1.0 } else if v0 < l { -1.0 } else { 0.0 };
        if sgn0 != 0.0 {
            p.mlp.backprop_into(&input0, &[lambda * w * sgn0 * VALUE_SCALE], grad)?;
        }
    }
    let (ham, init) = (ham_sum / n, init_sum / n);
    let total = ham_weight * ham + lambda * init;
    if !total.is_finite() {
        return Err(Error::Divergence {
            context: "value-net training".into(),
            detail: "non-finite batch loss".into(),
        });
    }
    Ok((total, ham, init))
}

/// Self-supervised training over the bounds volume and environment set.
/// Returns the trained network and the per-iteration loss history.
pub fn train_nrt(
    init: ValueNetParams,
    lattice: &PolicyLattice,
    cfg: &PlantConfig,
    hyper: &NrtHyper,
) -> Result<(ValueNetParams, Vec<LossRecord>)> {
    hyper.validate()?;
    let envs = lattice.envs();
    if envs.is_empty() {
        return Err(Error::InvalidArgument("policy lattice has no environments".into()));
    }
    let mut p = init;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    // Fixed collocation pool of (state, environment) points; time-to-go is
    // resampled on every visit as the curriculum window grows.
    let pool: Vec<(State, EnvParams)> = (0..hyper.pool)
        .map(|_| {
            let x = p.bounds.sample_uniform(&mut rng);
            let d = envs[rng.random_range(0..envs.len())];
            (x, d)
        })
        .collect();

    let mut opt = Adam::new(hyper.lr, p.mlp.params.len());
    let mut grad = vec![0.0; p.mlp.params.len()];
    let mut history = Vec::with_capacity(hyper.iters);
    let pretrain_iters = (hyper.pretrain_frac * hyper.iters as f64).round() as usize;
    let mut batch = Vec::with_capacity(hyper.batch);
    for iter in 0..hyper.iters {
        let (window, ham_weight) = if iter < pretrain_iters {
            (0.0, 0.0)
        } else {
            let grow = (iter - pretrain_iters) as f64 / (hyper.iters - pretrain_iters) as f64;
            (hyper.horizon * grow.min(1.0), 1.0)
        };
        batch.clear();
        for _ in 0..hyper.batch {
            let (x, d) = pool[rng.random_range(0..pool.len())];
            let h = if window > 0.0 { rng.random_range(0.0..window) } else { 0.0 };
            batch.push(NrtSample { state: x, env: d, h });
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let rec = loss_and_grad(&batch, &p, lattice, cfg, hyper.lambda, ham_weight, &mut grad)?;
        if rec.0 > 1e4 {
            return Err(Error::Divergence {
                context: "value-net training".into(),
                detail: format!(
                    "loss {} exceeded bound at iteration {} (last losses: {:?})",
                    rec.0,
                    iter,
                    &history[history.len().saturating_sub(4)..]
                ),
            });
        }
        history.push(rec);
        opt.step(&mut p.mlp.params, &grad);
    }
    Ok((p, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::{analytic_brt_zero_control, zero_policy, AxisSpec};
    use crate::sensor::{Cloud, TimeOfDay};
    use approx::assert_abs_diff_eq;

    fn env0() -> EnvParams {
        EnvParams::new(TimeOfDay::Morning, Cloud::Clear, 0)
    }

    fn small_bounds() -> GridSpec {
        GridSpec {
            px: AxisSpec::new(-15.0, 15.0, 21),
            py: AxisSpec::new(100.0, 250.0, 9),
            theta: AxisSpec::new(-0.5, 0.5, 9),
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_network(&small_bounds(), 10.0, &[32, 32], 30.0, 5).unwrap();
        let b = init_network(&small_bounds(), 10.0, &[32, 32], 30.0, 5).unwrap();
        assert_eq!(a.mlp.params, b.mlp.params);
        assert!(init_network(&small_bounds(), 10.0, &[32], 0.0, 5).is_err());
    }

    #[test]
    fn init_output_magnitude_is_bounded() {
        let p = init_network(&small_bounds(), 10.0, &[64, 64], 30.0, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = NrtSample {
                state: p.bounds.sample_uniform(&mut rng),
                env: env0(),
                h: rng.random_range(0.0..10.0),
            };
            let v = value(&p, &s.state, &s.env, s.h).unwrap();
            assert!(v.abs() < 10.0, "initial value {v} too large");
        }
    }

    #[test]
    fn zero_network_value_and_grads_vanish() {
        let mut p = init_network(&small_bounds(), 10.0, &[16], 30.0, 1).unwrap();
        p.mlp.params.iter_mut().for_each(|w| *w = 0.0);
        let g = eval_value_and_grads(
            &p,
            &NrtSample { state: State::new(1.0, 120.0, 0.1), env: env0(), h: 3.0 },
        )
        .unwrap();
        assert_eq!(g.v, 0.0);
        assert_eq!((g.d_px, g.d_py, g.d_theta, g.d_h), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn physical_gradients_match_finite_differences() {
        let p = init_network(&small_bounds(), 10.0, &[24, 24], 12.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let s = NrtSample {
                state: State::new(
                    rng.random_range(-14.0..14.0),
                    rng.random_range(101.0..249.0),
                    rng.random_range(-0.45..0.45),
                ),
                env: env0(),
                h: rng.random_range(0.5..9.5),
            };
            let g = eval_value_and_grads(&p, &s).unwrap();
            let fd = |plus: NrtSample, minus: NrtSample, delta: f64| {
                let vp = value(&p, &plus.state, &plus.env, plus.h).unwrap();
                let vm = value(&p, &minus.state, &minus.env, minus.h).unwrap();
                (vp - vm) / (2.0 * delta)
            };
            let eps = 1e-4;
            let checks = [
                (
                    g.d_px,
                    fd(
                        NrtSample { state: State { px: s.state.px + eps, ..s.state }, ..s },
                        NrtSample { state: State { px: s.state.px - eps, ..s.state }, ..s },
                        eps,
                    ),
                ),
                (
                    g.d_theta,
                    fd(
                        NrtSample { state: State { theta: s.state.theta + eps, ..s.state }, ..s },
                        NrtSample { state: State { theta: s.state.theta - eps, ..s.state }, ..s },
                        eps,
                    ),
                ),
                (g.d_h, fd(NrtSample { h: s.h + eps, ..s }, NrtSample { h: s.h - eps, ..s }, eps)),
            ];
            for (exact, approx_v) in checks {
                let denom = exact.abs().max(1e-3);
                assert!(
                    ((exact - approx_v) / denom).abs() < 1e-3,
                    "gradient mismatch: exact={exact} fd={approx_v}"
                );
            }
        }
    }

    #[test]
    fn loss_examples_on_zero_network() {
        let bounds = small_bounds();
        let mut p = init_network(&bounds, 10.0, &[16], 30.0, 1).unwrap();
        p.mlp.params.iter_mut().for_each(|w| *w = 0.0);
        let cfg = PlantConfig::default();
        let lattice =
            PolicyLattice::from_tables(vec![zero_policy(&bounds.coarsened(), &env0())]);

        // l(x) = 0 on the failure boundary: both terms vanish.
        let on_boundary =
            [NrtSample { state: State::new(10.0, 120.0, 0.0), env: env0(), h: 2.0 }];
        let (total, ham, init) = deepreach_loss(&on_boundary, &p, &lattice, &cfg, 100.0).unwrap();
        assert_eq!((total, ham, init), (0.0, 0.0, 0.0));

        // l(x) = 2: the initial-condition loss is exactly 2.
        let inside = [NrtSample { state: State::new(8.0, 120.0, 0.0), env: env0(), h: 2.0 }];
        let (_, _, init) = deepreach_loss(&inside, &p, &lattice, &cfg, 100.0).unwrap();
        assert_abs_diff_eq!(init, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn member_rejects_out_of_bounds_and_is_deterministic() {
        let p = init_network(&small_bounds(), 10.0, &[16], 30.0, 2).unwrap();
        assert!(nrt_member(&p, &State::new(16.0, 120.0, 0.0), &env0()).is_err());
        let x = State::new(3.0, 130.0, 0.2);
        assert_eq!(nrt_member(&p, &x, &env0()).unwrap(), nrt_member(&p, &x, &env0()).unwrap());
    }

    #[test]
    fn lattice_lookup_quantizes_to_nearest_node() {
        let bounds = small_bounds();
        let spec = bounds.coarsened();
        let mut table = zero_policy(&spec, &env0());
        let idx = spec.index(3, 2, 2);
        table.u[idx] = 1.25;
        let lattice = PolicyLattice::from_tables(vec![table]);
        // A state just off the (3, 2, 4) node snaps to it.
        let x = State::new(
            spec.px.node(3) + 0.3 * spec.px.step(),
            spec.py.node(2) - 0.2 * spec.py.step(),
            spec.theta.node(2) + 0.4 * spec.theta.step(),
        );
        assert_eq!(lattice.lookup(&x, &env0()).unwrap(), 1.25);
        assert!(lattice.lookup(&x, &EnvParams::new(TimeOfDay::Night, Cloud::Clear, 2)).is_err());
    }

    /// Short training run against the zero-control analytic tube: losses
    /// must fall and the h=0 slice must approach l.
    #[test]
    fn smoke_training_fits_initial_condition_and_signs() {
        let bounds = GridSpec {
            px: AxisSpec::new(-15.0, 15.0, 21),
            py: AxisSpec::new(100.0, 150.0, 5),
            theta: AxisSpec::new(-0.5, 0.5, 9),
        };
        let cfg = PlantConfig::default();
        let lattice = PolicyLattice::from_tables(vec![zero_policy(&bounds.coarsened(), &env0())]);
        let init = init_network(&bounds, 1.0, &[24, 24], 8.0, 4).unwrap();
        let hyper = NrtHyper {
            lambda: 50.0,
            batch: 64,
            iters: 1500,
            lr: 1e-3,
            pretrain_frac: 0.2,
            horizon: 1.0,
            pool: 4000,
            seed: 11,
        };
        let (p, history) = train_nrt(init, &lattice, &cfg, &hyper).unwrap();
        assert!(history.iter().all(|(t, _, _)| t.is_finite()));
        assert!(history.last().unwrap().0 < history[0].0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut init_err = 0.0;
        let mut agree = 0;
        let mut checked = 0;
        for _ in 0..500 {
            let x = bounds.sample_uniform(&mut rng);
            let l = cfg.half_width - x.px.abs();
            init_err += (value(&p, &x, &env0(), 0.0).unwrap() - l).abs();
            let exact = analytic_brt_zero_control(&x, 1.0, &cfg);
            if exact.abs() > 1.0 {
                checked += 1;
                let member = nrt_member(&p, &x, &env0()).unwrap();
                if member == (exact <= 0.0) {
                    agree += 1;
                }
            }
        }
        let mae = init_err / 500.0;
        let agreement = agree as f64 / checked as f64;
        assert!(mae < 0.5, "initial-condition MAE {mae}");
        assert!(agreement > 0.85, "sign agreement {agreement} ({agree}/{checked})");
    }
}
