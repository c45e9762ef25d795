//! Pipeline stages: each one reads prerequisite artifacts from the run
//! directory, computes, writes its outputs, and appends a manifest record
//! with content digests and wall time.
//!
//! Stage outputs are deterministic functions of the configuration (seeds
//! derive from the global seed and the stage name), so a rerun with the
//! same config reproduces every artifact digest. The manifest is the one
//! file that is not reproducible (it records wall-clock times); the
//! fallback report also carries a measured steps-per-second column that is
//! documented as a benchmark reading, not a deterministic output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{stage_seed, PipelineConfig};
use crate::error::{Error, Result};
use crate::fallback::{
    empirical_unsafe_fraction, BareVbcLaw, MonitoredLaw, PipelineLaw, PipelineState,
    SafetyPipeline,
};
use crate::fd::{
    conformal_quantile, evaluate_scores, metrics_csv, nonconformity, roc_csv, roc_table,
    score_records, CalibrationResult, FdParams,
};
use crate::io::{
    self, file_digest, read_grid_table, read_model, write_grid_table, write_model, Dataset,
    ObsRecord, ValueNetMeta,
};
use crate::levelset::{
    brt_volume, consistency_slack, precompute_policy, solve_hjbvi, value_at, GridSpec, GridValue,
    PolicyTable,
};
use crate::mining::{mine_failure_traces, prediction_error_labels, sample_and_label, upsample};
use crate::nn::{Activation, Arch, Mlp};
use crate::nrt::{
    init_network, nrt_member, train_nrt, NrtHyper, PolicyLattice, ValueNetParams,
    ENV_ENCODING_VERSION,
};
use crate::plant::{PlantConfig, State};
use crate::report::{slice_raster, trajectory_overlay, value_slice, write_pgm};
use crate::sensor::{
    runway_catalog, CameraConfig, Cloud, EnvParams, RunwayProfile, TimeOfDay, TRAIN_RUNWAYS,
};
use crate::vbc::{
    estimator_mse, estimator_px_mae, incremental_retrain, train_estimator,
    EstimatorParams, TrainHyper, VbcPolicy,
};

// ---------------------------------------------------------------------------
// Artifact layout
// ---------------------------------------------------------------------------

pub fn corpus_path(dir: &Path) -> PathBuf {
    dir.join("corpus.vfmd")
}

pub fn estimator_path(dir: &Path) -> PathBuf {
    dir.join("estimator.vfmw")
}

pub fn vbc_metrics_path(dir: &Path) -> PathBuf {
    dir.join("vbc_metrics.csv")
}

pub fn policy_path(dir: &Path, env: &EnvParams) -> PathBuf {
    dir.join(format!("policy_{}.vfgv", env.label()))
}

pub fn brt_path(dir: &Path, env: &EnvParams) -> PathBuf {
    dir.join(format!("brt_{}.vfgv", env.label()))
}

pub fn lattice_path(dir: &Path, env: &EnvParams) -> PathBuf {
    dir.join(format!("lattice_{}.vfgv", env.label()))
}

pub fn nrt_path(dir: &Path, runway: u8) -> PathBuf {
    dir.join(format!("nrt_r{runway}.vfmw"))
}

pub fn nrt_loss_path(dir: &Path) -> PathBuf {
    dir.join("nrt_loss.csv")
}

pub fn mined_pool_path(dir: &Path) -> PathBuf {
    dir.join("mined_pool.vfmd")
}

pub fn mined_eval_path(dir: &Path, env: &EnvParams) -> PathBuf {
    dir.join(format!("mined_eval_{}.vfmd", env.label()))
}

pub fn traces_dir(dir: &Path) -> PathBuf {
    dir.join("traces")
}

pub fn trace_path(dir: &Path, k: usize) -> PathBuf {
    traces_dir(dir).join(format!("trace_{k:03}.vfmd"))
}

pub fn trace_manifest_path(dir: &Path) -> PathBuf {
    traces_dir(dir).join("manifest.csv")
}

pub fn pe_baseline_path(dir: &Path) -> PathBuf {
    dir.join("pe_baseline.csv")
}

pub fn fd_model_path(dir: &Path) -> PathBuf {
    dir.join("fd.vfmw")
}

pub fn fd_loss_path(dir: &Path) -> PathBuf {
    dir.join("fd_loss.csv")
}

pub fn calibration_path(dir: &Path) -> PathBuf {
    dir.join("calibration.txt")
}

pub fn fd_metrics_path(dir: &Path) -> PathBuf {
    dir.join("fd_metrics.csv")
}

pub fn fd_metrics_q50_path(dir: &Path) -> PathBuf {
    dir.join("fd_metrics_q50.csv")
}

pub fn fd_roc_path(dir: &Path) -> PathBuf {
    dir.join("fd_roc.csv")
}

pub fn fallback_report_path(dir: &Path) -> PathBuf {
    dir.join("fallback_report.csv")
}

pub fn fallback_summary_path(dir: &Path) -> PathBuf {
    dir.join("fallback_summary.csv")
}

pub fn retrained_path(dir: &Path) -> PathBuf {
    dir.join("retrained.vfmw")
}

pub fn retrain_metrics_path(dir: &Path) -> PathBuf {
    dir.join("retrain_metrics.csv")
}

pub fn report_dir(dir: &Path) -> PathBuf {
    dir.join("report")
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub wall_ms: u64,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn load_or_new(dir: &Path, config_digest: &str) -> Result<Manifest> {
        let path = manifest_path(dir);
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            let mut m: Manifest = serde_json::from_str(&text)
                .map_err(|e| Error::Format { path, detail: e.to_string() })?;
            if m.config_digest != config_digest {
                eprintln!(
                    "warning: run directory was produced with a different config \
                     ({} != {config_digest}); stale artifacts may mismatch",
                    m.config_digest
                );
                m.config_digest = config_digest.to_string();
            }
            Ok(m)
        } else {
            Ok(Manifest { config_digest: config_digest.to_string(), stages: Vec::new() })
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(manifest_path(dir), text)?;
        Ok(())
    }

    pub fn recorded_digest(&self, rel_path: &str) -> Option<&str> {
        self.stages
            .iter()
            .rev()
            .flat_map(|s| s.outputs.iter())
            .find(|f| f.path == rel_path)
            .map(|f| f.digest.as_str())
    }
}

fn rel(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir).unwrap_or(path).to_string_lossy().to_string()
}

/// Check a prerequisite artifact exists; name the stage that produces it.
fn require(dir: &Path, path: &Path, producer: &str, manifest: &Manifest) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingPrerequisite {
            path: path.to_path_buf(),
            producer: producer.to_string(),
        });
    }
    let rel_path = rel(dir, path);
    if let Some(recorded) = manifest.recorded_digest(&rel_path) {
        let current = file_digest(path)?;
        if current != recorded {
            eprintln!(
                "warning: digest mismatch for {rel_path}: manifest has {recorded}, file has {current}"
            );
        }
    }
    Ok(())
}

fn finish_stage(
    dir: &Path,
    manifest: &mut Manifest,
    stage: &str,
    started: Instant,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<()> {
    let digest_all = |paths: &[PathBuf]| -> Result<Vec<FileRecord>> {
        paths
            .iter()
            .map(|p| Ok(FileRecord { path: rel(dir, p), digest: file_digest(p)? }))
            .collect()
    };
    manifest.stages.retain(|s| s.stage != stage);
    manifest.stages.push(StageRecord {
        stage: stage.to_string(),
        wall_ms: started.elapsed().as_millis() as u64,
        inputs: digest_all(inputs)?,
        outputs: digest_all(outputs)?,
    });
    manifest.save(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Environment sets
// ---------------------------------------------------------------------------

/// Estimator / detector training conditions: morning and night on the
/// training runways, both cloud conditions. Evening and the held-out
/// runways are reserved for evaluation.
pub fn train_d1() -> [TimeOfDay; 2] {
    [TimeOfDay::Morning, TimeOfDay::Night]
}

/// Environment combos the detector pool is mined from (analysis runway).
pub fn mining_envs(cfg: &PipelineConfig) -> Vec<EnvParams> {
    let mut envs = Vec::new();
    for d1 in train_d1() {
        for d2 in Cloud::ALL {
            envs.push(EnvParams::new(d1, d2, cfg.nrt.runway));
        }
    }
    envs
}

/// All six lighting combos for one runway.
pub fn runway_envs(runway: u8) -> Vec<EnvParams> {
    let mut envs = Vec::new();
    for d1 in TimeOfDay::ALL {
        for d2 in Cloud::ALL {
            envs.push(EnvParams::new(d1, d2, runway));
        }
    }
    envs
}

/// Environments the grid oracle solves: every combo on the analysis
/// runway, plus the held-out evaluation conditions (the marked runway in
/// morning/night and the plain held-out runway in the morning).
pub fn grid_env_set(cfg: &PipelineConfig) -> Vec<EnvParams> {
    let mut envs = runway_envs(cfg.nrt.runway);
    envs.push(EnvParams::new(TimeOfDay::Morning, Cloud::Clear, 3));
    envs.push(EnvParams::new(TimeOfDay::Night, Cloud::Clear, 3));
    envs.push(EnvParams::new(TimeOfDay::Morning, Cloud::Clear, 4));
    envs.retain({
        let mut seen = std::collections::BTreeSet::new();
        move |e| seen.insert(*e)
    });
    envs
}

/// Shifted-condition evaluation environments for the detector.
pub fn eval_envs(cfg: &PipelineConfig) -> Vec<EnvParams> {
    vec![
        EnvParams::new(TimeOfDay::Evening, Cloud::Clear, cfg.nrt.runway),
        EnvParams::new(TimeOfDay::Evening, Cloud::Overcast, cfg.nrt.runway),
        EnvParams::new(TimeOfDay::Morning, Cloud::Clear, 3),
        EnvParams::new(TimeOfDay::Night, Cloud::Clear, 3),
        EnvParams::new(TimeOfDay::Morning, Cloud::Clear, 4),
    ]
}

// ---------------------------------------------------------------------------
// Model (de)serialization helpers
// ---------------------------------------------------------------------------

pub fn save_estimator(path: &Path, params: &EstimatorParams) -> Result<()> {
    let layers: Vec<(usize, usize)> = params.mlp.arch.layers.clone();
    write_model(path, &layers, &params.mlp.params, None)
}

pub fn load_estimator(path: &Path, cam: &CameraConfig) -> Result<EstimatorParams> {
    let (layers, params, _) = read_model(path)?;
    if layers[0].0 != cam.pixel_count() {
        return Err(Error::DimMismatch { expected: cam.pixel_count(), got: layers[0].0 });
    }
    let arch = Arch { layers, activation: Activation::Tanh, omega0: 30.0 };
    Ok(EstimatorParams {
        mlp: Mlp::from_params(arch, params)?,
        width: cam.width,
        height: cam.height_px,
    })
}

pub fn save_fd(path: &Path, params: &FdParams) -> Result<()> {
    write_model(path, &params.mlp.arch.layers, &params.mlp.params, None)
}

pub fn load_fd(path: &Path, cam: &CameraConfig) -> Result<FdParams> {
    let (layers, params, _) = read_model(path)?;
    if layers[0].0 != cam.pixel_count() {
        return Err(Error::DimMismatch { expected: cam.pixel_count(), got: layers[0].0 });
    }
    let arch = Arch { layers, activation: Activation::Tanh, omega0: 30.0 };
    Ok(FdParams { mlp: Mlp::from_params(arch, params)?, width: cam.width, height: cam.height_px })
}

pub fn save_nrt(path: &Path, params: &ValueNetParams) -> Result<()> {
    let meta = ValueNetMeta {
        bounds: [
            (params.bounds.px.min, params.bounds.px.max),
            (params.bounds.py.min, params.bounds.py.max),
            (params.bounds.theta.min, params.bounds.theta.max),
        ],
        horizon: params.horizon,
        omega0: params.mlp.arch.omega0,
        env_encoding_version: ENV_ENCODING_VERSION,
    };
    write_model(path, &params.mlp.arch.layers, &params.mlp.params, Some(&meta))
}

pub fn load_nrt(path: &Path, counts_hint: &GridSpec) -> Result<ValueNetParams> {
    let (layers, params, meta) = read_model(path)?;
    let meta = meta.ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        detail: "value-network checkpoint lacks its metadata block".into(),
    })?;
    if meta.env_encoding_version != ENV_ENCODING_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("unsupported env encoding v{}", meta.env_encoding_version),
        });
    }
    let mut bounds = counts_hint.clone();
    bounds.px.min = meta.bounds[0].0;
    bounds.px.max = meta.bounds[0].1;
    bounds.py.min = meta.bounds[1].0;
    bounds.py.max = meta.bounds[1].1;
    bounds.theta.min = meta.bounds[2].0;
    bounds.theta.max = meta.bounds[2].1;
    let arch = Arch { layers, activation: Activation::Sine, omega0: meta.omega0 };
    Ok(ValueNetParams { mlp: Mlp::from_params(arch, params)?, bounds, horizon: meta.horizon })
}

pub fn load_grid_value(path: &Path) -> Result<GridValue> {
    let (spec, env, horizon, values) = read_grid_table(path)?;
    Ok(GridValue { spec, env, horizon, values })
}

pub fn load_policy_table(path: &Path) -> Result<PolicyTable> {
    let (spec, env, _, u) = read_grid_table(path)?;
    Ok(PolicyTable { spec, env, u })
}

// ---------------------------------------------------------------------------
// Stage: render (nominal corpus)
// ---------------------------------------------------------------------------

/// Uniform nominal poses over the training runways and conditions, with
/// ground-truth state labels.
pub fn nominal_corpus(cfg: &PipelineConfig, seed: u64) -> Result<Dataset> {
    let cam = cfg.camera();
    let catalog = runway_catalog();
    let spec = cfg.grid_spec();
    let mut envs = Vec::new();
    for &runway in TRAIN_RUNWAYS.iter() {
        for d1 in train_d1() {
            for d2 in Cloud::ALL {
                envs.push(EnvParams::new(d1, d2, runway));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::new(cam.width, cam.height_px, false);
    let px_hi = cfg.estimator.corpus_px_abs_max;
    for _ in 0..cfg.estimator.corpus_size {
        let x = State::new(
            rng.random_range(-px_hi..px_hi),
            rng.random_range(spec.py.min..spec.py.max),
            rng.random_range(spec.theta.min..spec.theta.max),
        );
        let d = envs[rng.random_range(0..envs.len())];
        let obs = crate::sensor::render(&x, &d, &cam, &catalog[d.runway_id as usize]);
        ds.push(ObsRecord::from_observation(&obs, None)?)?;
    }
    Ok(ds)
}

pub fn cmd_render(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(dir, &cfg.digest())?;
    let ds = nominal_corpus(cfg, stage_seed(cfg.pipeline.seed, "render"))?;
    let out = corpus_path(dir);
    ds.write(&out)?;
    finish_stage(dir, &mut manifest, "render", started, &[], &[out])
}

// ---------------------------------------------------------------------------
// Stage: train-vbc
// ---------------------------------------------------------------------------

/// Deterministic corpus split: ~1/6 held out for evaluation.
pub fn corpus_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let holdout = n / 6;
    let eval = order[..holdout].to_vec();
    let train = order[holdout..].to_vec();
    (train, eval)
}

pub fn cmd_train_vbc(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(dir, &cfg.digest())?;
    let input = corpus_path(dir);
    require(dir, &input, "render", &manifest)?;
    let ds = Dataset::read(&input)?;
    let (train_idx, eval_idx) = corpus_split(ds.len(), stage_seed(cfg.pipeline.seed, "split-corpus"));
    let train: Vec<ObsRecord> = train_idx.iter().map(|&i| ds.records[i].clone()).collect();
    let eval: Vec<ObsRecord> = eval_idx.iter().map(|&i| ds.records[i].clone()).collect();

    let cam = cfg.camera();
    let init = EstimatorParams::init(
        &cam,
        &cfg.estimator.hidden,
        stage_seed(cfg.pipeline.seed, "train-vbc-init"),
    );
    let hyper = TrainHyper {
        lr: cfg.estimator.lr,
        epochs: cfg.estimator.epochs,
        batch: cfg.estimator.batch,
        seed: stage_seed(cfg.pipeline.seed, "train-vbc"),
        shuffle: true,
    };
    let (params, curve) = train_estimator(&train, init, &hyper)?;

    let model_out = estimator_path(dir);
    save_estimator(&model_out, &params)?;

    let mse = estimator_mse(&params, &eval)?;
    let mae = estimator_px_mae(&params, &eval)?;
    let mut csv = String::from("metric,value\n");
    let _ = writeln!(csv, "holdout_mse,{mse:.6}");
    let _ = writeln!(csv, "holdout_px_mae,{mae:.6}");
    let _ = writeln!(csv, "final_train_loss,{:.6}", curve.last().unwrap());
    let _ = writeln!(csv, "first_train_loss,{:.6}", curve.first().unwrap());
    let metrics_out = vbc_metrics_path(dir);
    write_text(&metrics_out, &csv)?;

    finish_stage(dir, &mut manifest, "train-vbc", started, &[input], &[model_out, metrics_out])
}

// ---------------------------------------------------------------------------
// Stage: solve-grid
// ---------------------------------------------------------------------------

/// Precompute the closed-loop policy and solve the tube for one
/// environment.
pub fn solve_env(
    spec: &GridSpec,
    plant: &PlantConfig,
    estimator: &EstimatorParams,
    cam: &CameraConfig,
    catalog: &[RunwayProfile],
    env: &EnvParams,
    horizon: f64,
) -> Result<(PolicyTable, GridValue)> {
    let policy = VbcPolicy { estimator, cam, catalog, u_max: plant.u_max };
    let table = precompute_policy(spec, env, |x, d| policy.control(x, d).map(|u| u.0))?;
    let gv = solve_hjbvi(spec, &table, plant, horizon)?;
    Ok((table, gv))
}

pub fn cmd_solve_grid(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(dir, &cfg.digest())?;
    let model = estimator_path(dir);
    require(dir, &model, "train-vbc", &manifest)?;
    let cam = cfg.camera();
    let estimator = load_estimator(&model, &cam)?;
    let catalog = runway_catalog();
    let spec = cfg.grid_spec();
    let plant = cfg.plant();

    let mut outputs = Vec::new();
    for env in grid_env_set(cfg) {
        let (table, gv) = solve_env(&spec, &plant, &estimator, &cam, &catalog, &env, cfg.grid.horizon)?;
        let p_out = policy_path(dir, &env);
        write_grid_table(&p_out, &spec, &env, 0.0, &table.u)?;
        let b_out = brt_path(dir, &env);
        write_grid_table(&b_out, &spec, &env, gv.horizon, &gv.values)?;
        eprintln!(
            "solve-grid {}: tube volume {:.4}",
            env.label(),
            brt_volume(&gv)
        );
        outputs.push(p_out);
        outputs.push(b_out);
    }
    finish_stage(dir, &mut manifest, "solve-grid", started, &[model], &outputs)
}

// ---------------------------------------------------------------------------
// Stage: train-nrt
// ---------------------------------------------------------------------------

pub fn cmd_train_nrt(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(dir, &cfg.digest())?;
    let model = estimator_path(dir);
    require(dir, &model, "train-vbc", &manifest)?;
    let cam = cfg.camera();
    let estimator = load_estimator(&model, &cam)?;
    let catalog = runway_catalog();
    let spec = cfg.grid_spec();
    let plant = cfg.plant();
    let envs = runway_envs(cfg.nrt.runway);

    let policy = VbcPolicy { estimator: &estimator, cam: &cam, catalog: &catalog, u_max: plant.u_max };
    let lattice = PolicyLattice::build(&spec, &envs, |x, d| policy.control(x, d).map(|u| u.0))?;

    let mut outputs = Vec::new();
    for table in lattice.tables() {
        let out = lattice_path(dir, &table.env);
        write_grid_table(&out, &table.spec, &table.env, 0.0, &table.u)?;
        outputs.push(out);
    }

    let init = init_network(
        &spec,
        cfg.grid.horizon,
        &cfg.nrt.hidden,
        cfg.nrt.omega0,
        stage_seed(cfg.pipeline.seed, "train-nrt-init"),
    )?;
    let hyper = NrtHyper {
        lambda: cfg.nrt.lambda,
        batch: cfg.nrt.batch,
        iters: cfg.nrt.iters,
        lr: cfg.nrt.lr,
        pretrain_frac: cfg.nrt.pretrain_frac,
        horizon: cfg.grid.horizon,
        pool: cfg.nrt.pool,
        seed: stage_seed(cfg.pipeline.seed, "train-nrt"),
    };
    let (params, history) = train_nrt(init, &lattice, &plant, &hyper)?;

    let model_out = nrt_path(dir, cfg.nrt.runway);
    save_nrt(&model_out, &params)?;
    outputs.push(model_out);

    let mut csv = String::from("iter,total,residual,initial\n");
    for (i, (t, h, c)) in history.iter().enumerate() {
        let _ = writeln!(csv, "{i},{t:.6},{h:.6},{c:.6}");
    }
    let loss_out = nrt_loss_path(dir);
    write_text(&loss_out, &csv)?;
    outputs.push(loss_out);

    finish_stage(dir, &mut manifest, "train-nrt", started, &[model], &outputs)
}

// ---------------------------------------------------------------------------
// Stage: mine
// ---------------------------------------------------------------------------

/// Tube membership query backed by either the learned tube or the grid
/// oracle, per the configuration.
pub enum TubeRef<'a> {
    Nrt(&'a ValueNetParams),
    Grid(&'a std::collections::BTreeMap<(u8, u8, u8), GridValue>),
}

impl TubeRef<'_> {
    pub fn member(&self, x: &State, d: &EnvParams) -> Result<bool> {
        match self {
            TubeRef::Nrt(p) => nrt_member(p, x, d),
            TubeRef::Grid(tables) => {
                let gv = tables.get(&(d.runway_id, d.d1.code(), d.d2.code())).ok_or_else(|| {
                    Error::InvalidArgument(format!("no grid table for {}", d.label()))
                })?;
                Ok(value_at(gv, x)? <= 0.0)
            }
        }
    }
}

fn grid_tables_for(
    dir: &Path,
    envs: &[EnvParams],
    manifest: &Manifest,
) -> Result<std::collections::BTreeMap<(u8, u8, u8), GridValue>> {
    let mut map = std::collections::BTreeMap::new();
    for env in envs {
        let path = brt_path(dir, env);
        require(dir, &path, "solve-grid", manifest)?;
        map.insert((env.runway_id, env.d1.code(), env.d2.code()), load_grid_value(&path)?);
    }
    Ok(map)
}

pub fn cmd_mine(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(dir, &cfg.digest())?;
    let cam = cfg.camera();
    let catalog = runway_catalog();
    let spec = cfg.grid_spec();
    let plant = cfg.plant();
    let model = estimator_path(dir);
    require(dir, &model, "train-vbc", &manifest)?;
    let estimator = load_estimator(&model, &cam)?;

    let mut inputs = vec![model.clone()];
    let mut outputs = Vec::new();

    // Labeled pool over the training conditions.
    let pool_envs = mining_envs(cfg);
    let nrt_model;
    let grid_map;
    let tube = match cfg.mining.tube.as_str() {
        "nrt" => {
            let path = nrt_path(dir, cfg.nrt.runway);
            require(dir, &path, "train-nrt", &manifest)?;
            inputs.push(path.clone());
            nrt_model = load_nrt(&path, &spec)?;
            TubeRef::Nrt(&nrt_model)
        }
        _ => {
            grid_map = grid_tables_for(dir, &pool_envs, &manifest)?;
            TubeRef::Grid(&grid_map)
        }
    };
    let (pool, stats) = sample_and_label(
        cfg.fd.pool_size,
        &spec,
        &pool_envs,
        |x, d| tube.member(x, d),
        &cam,
        &catalog,
        stage_seed(cfg.pipeline.seed, "mine-pool"),
    )?;
    eprintln!(
        "mine: pool failure fraction {:.3} ({} skipped)",
        stats.failure_fraction(),
        stats.n_skipped
    );
    let mut pool_ds = Dataset::new(cam.width, cam.height_px, true);
    for rec in pool {
        pool_ds.push(rec)?;
    }
    let pool_out = mined_pool_path(dir);
    pool_ds.write(&pool_out)?;
    outputs.push(pool_out);

    // Held-out evaluation sets labeled by the grid oracle.
    let shifted = eval_envs(cfg);
    let eval_grid = grid_tables_for(dir, &shifted, &manifest)?;
    for env in &shifted {
        let tube = TubeRef::Grid(&eval_grid);
        let (recs, _) = sample_and_label(
            cfg.fd.eval_per_env,
            &spec,
            std::slice::from_ref(env),
            |x, d| tube.member(x, d),
            &cam,
            &catalog,
            stage_seed(cfg.pipeline.seed, &format!("mine-eval-{}", env.label())),
        )?;
        let mut ds = Dataset::new(cam.width, cam.height_px, true);
        for rec in recs {
            ds.push(rec)?;
        }
        let out = mined_eval_path(dir, env);
        ds.write(&out)?;
        outputs.push(out);
    }

    // Failure traces from deep inside the oracle tube (morning, clear).
    let trace_env = EnvParams::new(TimeOfDay::Morning, Cloud::Clear, cfg.nrt.runway);
    let trace_brt_path = brt_path(dir, &trace_env);
    require(dir, &trace_brt_path, "solve-grid", &manifest)?;
    inputs.push(trace_brt_path.clone());
    let trace_brt = load_grid_value(&trace_brt_path)?;
    let slack = consistency_slack(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.pipeline.seed, "mine-traces"));
    let mut seeds = Vec::new();
    let mut attempts = 0;
    while seeds.len() < cfg.mining.trace_count && attempts < 200_000 {
        attempts += 1;
        let x = spec.sample_uniform(&mut rng);
        // Seeds start on the runway, deep inside the tube.
        if x.px.abs() < plant.half_width && value_at(&trace_brt, &x)? < -slack {
            seeds.push(x);
        }
    }
    let profile = &catalog[trace_env.runway_id as usize];
    let (traces, disagreements) = mine_failure_traces(
        &seeds,
        || BareVbcLaw {
            estimator: &estimator,
            cam: &cam,
            profile,
            env: trace_env,
            u_max: plant.u_max,
            v: plant.v,
        },
        &trace_env,
        cfg.mining.trace_horizon,
        &plant,
        &cam,
        profile,
    )?;
    let mut trace_csv = String::from("trace,px0,py0,theta0_deg,first_failure_t,steps\n");
    for (k, trace) in traces.iter().enumerate() {
        let ds_path = trace_path(dir, k);
        let mut ds = Dataset::new(cam.width, cam.height_px, true);
        for (frame, sample) in trace.frames.iter().zip(trace.trajectory.samples.iter()) {
            let mut rec = ObsRecord::from_observation(frame, Some(u8::from(sample.in_failure)))?;
            rec.px = sample.state.px as f32;
            rec.py = sample.state.py as f32;
            rec.theta = sample.state.theta as f32;
            ds.push(rec)?;
        }
        ds.write(&ds_path)?;
        outputs.push(ds_path);
        let _ = writeln!(
            trace_csv,
            "{k},{:.4},{:.4},{:.4},{:.4},{}",
            trace.seed_state.px,
            trace.seed_state.py,
            trace.seed_state.theta.to_degrees(),
            trace.trajectory.first_failure_time.unwrap_or(f64::NAN),
            trace.trajectory.samples.len()
        );
    }
    let _ = writeln!(
        trace_csv,
        "# disagreements (tube unsafe, rollout safe): {} of {}",
        disagreements.len(),
        seeds.len()
    );
    let tm_out = trace_manifest_path(dir);
    write_text(&tm_out, &trace_csv)?;
    outputs.push(tm_out);

    // Prediction-error baseline labels vs tube labels on the pool.
    let pool_ds = Dataset::read(&mined_pool_path(dir))?;
    let pe = prediction_error_labels(
        &pool_ds.records,
        cam.width,
        cam.height_px,
        &estimator,
        cfg.mining.pe_threshold,
    )?;
    let n_disagree = pe
        .iter()
        .zip(pool_ds.records.iter())
        .filter(|(l, r)| **l != r.label.unwrap())
        .count();
    let mut pe_csv = String::from("threshold,disagreement_fraction,n\n");
    let _ = writeln!(
        pe_csv,
        "{},{:.6},{}",
        cfg.mining.pe_threshold,
        n_disagree as f64 / pool_ds.len() as f64,
        pool_ds.len()
    );
    let pe_out = pe_baseline_path(dir);
    write_text(&pe_out, &pe_csv)?;
    outputs.push(pe_out);

    finish_stage(dir, &mut manifest, "mine", started, &inputs, &outputs)
}

// ---------------------------------------------------------------------------
// Stage: train-fd / calibrate / eval-fd
// ---------------------------------------------------------------------------

/// Deterministic three-way pool split: (train, calibration, test) indices.
pub fn pool_split(cfg: &PipelineConfig, n: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.pipeline.seed, "split-pool"));
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let n_cal = (cfg.fd.cal_fraction * n as f64).round() as usize;
    let n_test = (cfg.fd.test_fraction * n as f64).round() as usize;
    let cal = order[..n_cal].to_vec();
    let test = order[n_cal..n_cal + n_test].to_vec();
    let train = order[n_cal + n_test..].to_vec();
    (train, cal, test)
}

pub fn cmd_train_fd(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(dir, &cfg.digest())?;
    let pool_file = mined_pool_path(dir);
    require(dir, &pool_file, "mine", &manifest)?;
    let pool = Dataset::read(&pool_file)?;
    let (train_idx, _, _) = pool_split(cfg, pool.len());
    let train: Vec<ObsRecord> = train_idx.iter().map(|&i| pool.records[i].clone()).collect();

    let cam = cfg.camera();
    let init = FdParams::init(
        cam.width,
        cam.height_px,
        &cfg.fd.hidden,
        stage_seed(cfg.pipeline.seed, "train-fd-init"),
    );
    let hyper = TrainHyper {
        lr: cfg.fd.lr,
        epochs: cfg.fd.epochs,
        batch: cfg.fd.batch,
        seed: stage_seed(cfg.pipeline.seed, "train-fd"),
        shuffle: true,
    };
    let (params, curve) = crate::fd::train_fd(&train, init, &hyper)?;
    let model_out = fd_model_path(dir);
    save_fd(&model_out, &params)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l:.6}");
    }
    let loss_out = fd_loss_path(dir);
    write_text(&loss_out, &csv)?;
    finish_stage(dir, &mut manifest, "train-fd", started, &[pool_file], &[model_out, loss_out])
}

/// Calibration options beyond the config: an alpha override and an optional
/// privileged dataset whose positives join the calibration set.
#[derive(Debug, Clone, Default)]
pub struct CalibrateOpts {
    pub alpha: Option<f64>,
    pub privileged: Option<PathBuf>,
}

pub fn cmd_calibrate(cfg: &PipelineConfig, dir: &Path, opts: &CalibrateOpts) -> Result<CalibrationResult> {
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(dir, &cfg.digest())?;
    let pool_file = mined_pool_path(dir);
    let model_file = fd_model_path(dir);
    require(dir, &pool_file, "mine", &manifest)?;
    require(dir, &model_file, "train-fd", &manifest)?;
    let pool = Dataset::read(&pool_file)?;
    let cam = cfg.camera();
    let params = load_fd(&model_file, &cam)?;
    let (_, cal_idx, _) = pool_split(cfg, pool.len());
    let mut cal: Vec<ObsRecord> = cal_idx.iter().map(|&i| pool.records[i].clone()).collect();
    let mut inputs = vec![pool_file, model_file];
    if let Some(priv_path) = &opts.privileged {
        require(dir, priv_path, "mine", &manifest)?;
        let extra = Dataset::read(priv_path)?;
        cal.extend(extra.records.into_iter().filter(|r| r.label == Some(1)));
        inputs.push(priv_path.clone());
    }

    // Class-conditional: scores from positive calibration samples only.
    let scored = score_records(&params, &cal)?;
    let scores: Vec<f64> = scored
        .iter()
        .filter(|(_, y, _)| *y == 1)
        .map(|(y_hat, y, _)| nonconformity(*y_hat, *y))
        .collect();
    let alpha = opts.alpha.unwrap_or(cfg.fd.alpha);
    let result = conformal_quantile(&scores, alpha)?;
    if result.is_degenerate() {
        eprintln!(
            "warning: {} positive calibration samples cannot support alpha={alpha} \
             (needs rank {}); threshold degenerates to 1 (classify everything unsafe)",
            result.n, result.k
        );
    }

    let mut record = String::new();
    let _ = writeln!(record, "q_hat = {:.9}", result.q_hat);
    let _ = writeln!(record, "alpha = {}", result.alpha);
    let _ = writeln!(record, "n_calibration_positives = {}", result.n);
    let _ = writeln!(record, "quantile_rank = {}", result.k);
    let _ = writeln!(record, "degenerate = {}", result.is_degenerate());
    let _ = writeln!(record, "dataset_digest = {}", file_digest(&mined_pool_path(dir))?);
    let _ = writeln!(record, "config_digest = {}", cfg.digest());
    let out = calibration_path(dir);
    write_text(&out, &record)?;
    finish_stage(dir, &mut manifest, "calibrate", started, &inputs, &[out])?;
    Ok(result)
}

/// Parse the q_hat value back out of the calibration record.
pub fn read_calibration(dir: &Path) -> Result<(f64, f64)> {
    let path = calibration_path(dir);
    let text = std::fs::read_to_string(&path)
        .map_err(|_| Error::MissingPrerequisite { path: path.clone(), producer: "calibrate".into() })?;
    let mut q_hat = None;
    let mut alpha = None;
    for line in text.lines() {
        if let Some((key, value)) = line.split_once('=') {
            match key.trim() {
                "q_hat" => q_hat = value.trim().parse::<f64>().ok(),
                "alpha" => alpha = value.trim().parse::<f64>().ok(),
                _ => {}
            }
        }
    }
    match (q_hat, alpha) {
        (Some(q), Some(a)) => Ok((q, a)),
        _ => Err(Error::Format { path, detail: "missing q_hat/alpha".into() }),
    }
}

pub fn cmd_eval_fd(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(dir, &cfg.digest())?;
    let pool_file = mined_pool_path(dir);
    let model_file = fd_model_path(dir);
    require(dir, &pool_file, "mine", &manifest)?;
    require(dir, &model_file, "train-fd", &manifest)?;
    let (q_hat, _) = read_calibration(dir)?;
    let cam = cfg.camera();
    let params = load_fd(&model_file, &cam)?;
    let pool = Dataset::read(&pool_file)?;
    let (_, _, test_idx) = pool_split(cfg, pool.len());

    let mut scored: Vec<(f64, u8, String)> = Vec::new();
    let iid: Vec<ObsRecord> = test_idx.iter().map(|&i| pool.records[i].clone()).collect();
    for (y_hat, y, _) in score_records(&params, &iid)? {
        scored.push((y_hat, y, "pool-iid".to_string()));
    }
    let mut inputs = vec![pool_file, model_file, calibration_path(dir)];
    for env in eval_envs(cfg) {
        let path = mined_eval_path(dir, &env);
        require(dir, &path, "mine", &manifest)?;
        let ds = Dataset::read(&path)?;
        scored.extend(score_records(&params, &ds.records)?);
        inputs.push(path);
    }

    let rows = evaluate_scores(&scored, q_hat)?;
    let metrics_out = fd_metrics_path(dir);
    write_text(&metrics_out, &metrics_csv(&rows))?;
    let rows50 = evaluate_scores(&scored, 0.5)?;
    let metrics50_out = fd_metrics_q50_path(dir);
    write_text(&metrics50_out, &metrics_csv(&rows50))?;
    let roc_out = fd_roc_path(dir);
    write_text(&roc_out, &roc_csv(&roc_table(&scored, 100)))?;

    finish_stage(
        dir,
        &mut manifest,
        "eval-fd",
        started,
        &inputs,
        &[metrics_out, metrics50_out, roc_out],
    )
}

// ---------------------------------------------------------------------------
// Stage: fallback-eval
// ---------------------------------------------------------------------------

/// Matched initial-state grid for controller comparisons.
pub fn fallback_initial_states(cfg: &PipelineConfig) -> Vec<State> {
    let f = &cfg.fallback;
    let mut states = Vec::new();
    for i in 0..f.states_px_count {
        for k in 0..f.states_theta_count {
            let px = if f.states_px_count == 1 {
                0.0
            } else {
                -f.states_px_abs_max
                    + 2.0 * f.states_px_abs_max * i as f64 / (f.states_px_count - 1) as f64
            };
            let th_max = f.states_theta_abs_max_deg.to_radians();
            let theta = if f.states_theta_count == 1 {
                0.0
            } else {
                -th_max + 2.0 * th_max * k as f64 / (f.states_theta_count - 1) as f64
            };
            states.push(State::new(px, f.states_py, theta));
        }
    }
    states
}

pub struct FallbackRow {
    pub controller: String,
    pub env: String,
    pub unsafe_fraction: f64,
    pub n: usize,
    pub mean_activations: f64,
    pub steps_per_sec: f64,
}

pub fn cmd_fallback_eval(cfg: &PipelineConfig, dir: &Path, compare: bool) -> Result<()> {
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(dir, &cfg.digest())?;
    let model_file = estimator_path(dir);
    let fd_file = fd_model_path(dir);
    require(dir, &model_file, "train-vbc", &manifest)?;
    require(dir, &fd_file, "train-fd", &manifest)?;
    let (q_hat, _) = read_calibration(dir)?;
    let cam = cfg.camera();
    let estimator = load_estimator(&model_file, &cam)?;
    let fd = load_fd(&fd_file, &cam)?;
    let catalog = runway_catalog();
    let plant = cfg.plant();
    let mode = cfg.fallback_mode()?;
    let states = fallback_initial_states(cfg);
    let seed = stage_seed(cfg.pipeline.seed, "fallback-eval");

    let mut rows: Vec<FallbackRow> = Vec::new();
    let mut summary = String::from("env,bare_unsafe_fraction,pipeline_unsafe_fraction,relative_reduction\n");
    for env in runway_envs(cfg.nrt.runway) {
        let profile = &catalog[env.runway_id as usize];
        let mut bare_fraction = f64::NAN;
        if compare {
            let t0 = Instant::now();
            let stats = empirical_unsafe_fraction(
                |_idx| {
                    Box::new(BareVbcLaw {
                        estimator: &estimator,
                        cam: &cam,
                        profile,
                        env,
                        u_max: plant.u_max,
                        v: plant.v,
                    }) as Box<dyn MonitoredLaw>
                },
                &states,
                cfg.fallback.horizon,
                &plant,
            )?;
            bare_fraction = stats.unsafe_fraction;
            rows.push(FallbackRow {
                controller: "bare".into(),
                env: env.label(),
                unsafe_fraction: stats.unsafe_fraction,
                n: stats.n,
                mean_activations: 0.0,
                steps_per_sec: stats.total_steps as f64 / t0.elapsed().as_secs_f64().max(1e-9),
            });
        }
        let t0 = Instant::now();
        let stats = empirical_unsafe_fraction(
            |idx| {
                Box::new(PipelineLaw {
                    pipeline: SafetyPipeline {
                        estimator: &estimator,
                        fd: &fd,
                        q_hat,
                        mode,
                        u_max: plant.u_max,
                        state: PipelineState::new(plant.v, seed.wrapping_add(idx as u64)),
                    },
                    cam: &cam,
                    profile,
                    env,
                }) as Box<dyn MonitoredLaw>
            },
            &states,
            cfg.fallback.horizon,
            &plant,
        )?;
        rows.push(FallbackRow {
            controller: "pipeline".into(),
            env: env.label(),
            unsafe_fraction: stats.unsafe_fraction,
            n: stats.n,
            mean_activations: stats.mean_activations,
            steps_per_sec: stats.total_steps as f64 / t0.elapsed().as_secs_f64().max(1e-9),
        });
        if compare {
            let reduction = if bare_fraction > 0.0 {
                1.0 - stats.unsafe_fraction / bare_fraction
            } else {
                0.0
            };
            let _ = writeln!(
                summary,
                "{},{:.6},{:.6},{:.6}",
                env.label(),
                bare_fraction,
                stats.unsafe_fraction,
                reduction
            );
        }
    }

    let mut csv = String::from("controller,env,unsafe_fraction,n,mean_activations,steps_per_sec\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{:.6},{},{:.4},{:.1}",
            r.controller, r.env, r.unsafe_fraction, r.n, r.mean_activations, r.steps_per_sec
        );
    }
    let report_out = fallback_report_path(dir);
    write_text(&report_out, &csv)?;
    let mut outputs = vec![report_out];
    if compare {
        let summary_out = fallback_summary_path(dir);
        write_text(&summary_out, &summary)?;
        outputs.push(summary_out);
    }
    finish_stage(
        dir,
        &mut manifest,
        "fallback-eval",
        started,
        &[model_file, fd_file, calibration_path(dir)],
        &outputs,
    )
}

// ---------------------------------------------------------------------------
// Stage: retrain
// ---------------------------------------------------------------------------

pub fn cmd_retrain(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(dir, &cfg.digest())?;
    let cam = cfg.camera();
    let catalog = runway_catalog();
    let spec = cfg.grid_spec();
    let model_file = estimator_path(dir);
    let corpus_file = corpus_path(dir);
    require(dir, &model_file, "train-vbc", &manifest)?;
    require(dir, &corpus_file, "render", &manifest)?;
    let estimator = load_estimator(&model_file, &cam)?;
    let corpus = Dataset::read(&corpus_file)?;
    let mut inputs = vec![model_file, corpus_file];

    // Failure samples mined from the tube in clear conditions on the
    // analysis runway; ground-truth states are the retraining labels.
    let mine_envs = vec![
        EnvParams::new(TimeOfDay::Morning, Cloud::Clear, cfg.nrt.runway),
        EnvParams::new(TimeOfDay::Night, Cloud::Clear, cfg.nrt.runway),
    ];
    let nrt_model;
    let grid_map;
    let tube = match cfg.mining.tube.as_str() {
        "nrt" => {
            let path = nrt_path(dir, cfg.nrt.runway);
            require(dir, &path, "train-nrt", &manifest)?;
            inputs.push(path.clone());
            nrt_model = load_nrt(&path, &spec)?;
            TubeRef::Nrt(&nrt_model)
        }
        _ => {
            grid_map = grid_tables_for(dir, &mine_envs, &manifest)?;
            TubeRef::Grid(&grid_map)
        }
    };

    // Rejection-sample failure poses on the runway surface.
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.pipeline.seed, "retrain-mine"));
    let plant = cfg.plant();
    let mut mined: Vec<ObsRecord> = Vec::new();
    let mut attempts = 0usize;
    while mined.len() < cfg.retrain.mined_count && attempts < 2_000_000 {
        attempts += 1;
        let x = spec.sample_uniform(&mut rng);
        if x.px.abs() >= plant.half_width {
            continue;
        }
        let d = mine_envs[rng.random_range(0..mine_envs.len())];
        if !tube.member(&x, &d)? {
            continue;
        }
        let obs = crate::sensor::render(&x, &d, &cam, &catalog[d.runway_id as usize]);
        mined.push(ObsRecord::from_observation(&obs, Some(1))?);
    }
    if mined.len() < cfg.retrain.mined_count {
        eprintln!("warning: mined only {} of {} failure samples", mined.len(), cfg.retrain.mined_count);
    }

    // Hold out part of the mined failures for before/after evaluation.
    let holdout = ((mined.len() as f64) * cfg.retrain.failure_holdout_frac).round() as usize;
    let eval_failure: Vec<ObsRecord> = mined[..holdout].to_vec();
    let train_failure: Vec<ObsRecord> = mined[holdout..].to_vec();

    // Nominal evaluation set: the estimator's held-out corpus split.
    let (_, eval_idx) =
        corpus_split(corpus.len(), stage_seed(cfg.pipeline.seed, "split-corpus"));
    let eval_nominal: Vec<ObsRecord> = eval_idx.iter().map(|&i| corpus.records[i].clone()).collect();

    // Augmented corpus: nominal samples plus failures upsampled to the
    // target fraction; labels only steer the upsampling.
    let mut labeled: Vec<ObsRecord> = corpus
        .records
        .iter()
        .map(|r| ObsRecord { label: Some(0), ..r.clone() })
        .collect();
    labeled.extend(train_failure.iter().cloned());
    let augmented = upsample(
        &labeled,
        cfg.retrain.target_failure_fraction,
        stage_seed(cfg.pipeline.seed, "retrain-upsample"),
    )?;

    let hyper = TrainHyper {
        lr: cfg.retrain.lr,
        epochs: cfg.retrain.epochs,
        batch: cfg.retrain.batch,
        seed: stage_seed(cfg.pipeline.seed, "retrain"),
        shuffle: true,
    };
    let (retrained, report) =
        incremental_retrain(estimator, &augmented, &hyper, &eval_failure, &eval_nominal)?;

    let model_out = retrained_path(dir);
    save_estimator(&model_out, &retrained)?;
    let mut csv = String::from("metric,value\n");
    let _ = writeln!(csv, "failure_mse_before,{:.6}", report.failure_mse_before);
    let _ = writeln!(csv, "failure_mse_after,{:.6}", report.failure_mse_after);
    let _ = writeln!(csv, "nominal_mse_before,{:.6}", report.nominal_mse_before);
    let _ = writeln!(csv, "nominal_mse_after,{:.6}", report.nominal_mse_after);
    let _ = writeln!(
        csv,
        "failure_mse_rel_change,{:.6}",
        report.failure_mse_after / report.failure_mse_before - 1.0
    );
    let _ = writeln!(
        csv,
        "nominal_mse_rel_change,{:.6}",
        report.nominal_mse_after / report.nominal_mse_before - 1.0
    );
    let metrics_out = retrain_metrics_path(dir);
    write_text(&metrics_out, &csv)?;
    finish_stage(dir, &mut manifest, "retrain", started, &inputs, &[model_out, metrics_out])
}

// ---------------------------------------------------------------------------
// Stage: report
// ---------------------------------------------------------------------------

pub fn cmd_report(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let started = Instant::now();
    let mut manifest = Manifest::load_or_new(dir, &cfg.digest())?;
    let rdir = report_dir(dir);
    let slice_py = 110.0;
    let mut outputs = Vec::new();
    let mut inputs = Vec::new();

    // Value slices for every solved environment.
    let spec = cfg.grid_spec();
    let mut nrt_params = None;
    let nrt_file = nrt_path(dir, cfg.nrt.runway);
    if nrt_file.exists() {
        nrt_params = Some(load_nrt(&nrt_file, &spec)?);
        inputs.push(nrt_file);
    }
    let mut diff_csv = String::from("env,mean_abs_diff\n");
    for env in grid_env_set(cfg) {
        let path = brt_path(dir, &env);
        require(dir, &path, "solve-grid", &manifest)?;
        let gv = load_grid_value(&path)?;
        let (w, h, values) = value_slice(&gv, slice_py);
        let out = rdir.join(format!("brt_slice_{}.pgm", env.label()));
        write_pgm(&out, w, h, &slice_raster(w, h, &values))?;
        outputs.push(out);
        inputs.push(path);

        // Learned-tube slice and difference image for the analysis runway.
        if let Some(p) = &nrt_params {
            if env.runway_id == cfg.nrt.runway {
                let mut nrt_values = Vec::with_capacity(values.len());
                for k in 0..h {
                    for i in 0..w {
                        let x = State::new(
                            gv.spec.px.node(i),
                            slice_py,
                            gv.spec.theta.node(k),
                        );
                        nrt_values.push(crate::nrt::value(p, &x, &env, p.horizon)?);
                    }
                }
                let out = rdir.join(format!("nrt_slice_{}.pgm", env.label()));
                write_pgm(&out, w, h, &slice_raster(w, h, &nrt_values))?;
                outputs.push(out);
                let diff: Vec<f64> =
                    values.iter().zip(nrt_values.iter()).map(|(a, b)| (a - b).abs()).collect();
                let out = rdir.join(format!("nrt_vs_grid_{}.pgm", env.label()));
                write_pgm(&out, w, h, &slice_raster(w, h, &diff))?;
                outputs.push(out);
                let mean_diff = diff.iter().sum::<f64>() / diff.len() as f64;
                let _ = writeln!(diff_csv, "{},{:.6}", env.label(), mean_diff);
            }
        }
    }
    let diff_out = rdir.join("nrt_vs_grid.csv");
    write_text(&diff_out, &diff_csv)?;
    outputs.push(diff_out);

    // Trajectory overlay from the mined traces.
    let tdir = traces_dir(dir);
    if tdir.exists() {
        let mut trajectories = Vec::new();
        for k in 0..8 {
            let path = trace_path(dir, k);
            if !path.exists() {
                break;
            }
            let ds = Dataset::read(&path)?;
            let samples: Vec<crate::plant::TrajectorySample> = ds
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| crate::plant::TrajectorySample {
                    t: i as f64 * cfg.plant.dt,
                    state: r.state(),
                    u: crate::plant::ControlInput(0.0),
                    v: cfg.plant.v,
                    in_failure: r.label == Some(1),
                })
                .collect();
            trajectories.push(crate::plant::Trajectory {
                first_failure_time: samples.iter().find(|s| s.in_failure).map(|s| s.t),
                samples,
            });
        }
        if !trajectories.is_empty() {
            let refs: Vec<&crate::plant::Trajectory> = trajectories.iter().collect();
            let img = trajectory_overlay(
                spec.px.max,
                spec.py.min,
                spec.py.max,
                cfg.plant.half_width,
                128,
                256,
                &refs,
            );
            let out = rdir.join("trace_overlay.pgm");
            write_pgm(&out, 128, 256, &img)?;
            outputs.push(out);
        }
    }

    finish_stage(dir, &mut manifest, "report", started, &inputs, &outputs)
}

// ---------------------------------------------------------------------------
// Whole pipeline
// ---------------------------------------------------------------------------

/// Run every stage in dependency order.
pub fn run_all(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    cmd_render(cfg, dir)?;
    cmd_train_vbc(cfg, dir)?;
    cmd_solve_grid(cfg, dir)?;
    cmd_train_nrt(cfg, dir)?;
    cmd_mine(cfg, dir)?;
    cmd_train_fd(cfg, dir)?;
    cmd_calibrate(cfg, dir, &CalibrateOpts::default())?;
    cmd_eval_fd(cfg, dir)?;
    cmd_fallback_eval(cfg, dir, true)?;
    cmd_retrain(cfg, dir)?;
    cmd_report(cfg, dir)?;
    Ok(())
}

/// Digest every artifact in a run directory except the manifest and the
/// wall-clock-bearing fallback report (whose steps-per-second column is a
/// benchmark reading). Used by reproducibility checks.
pub fn artifact_digests(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let entry = entry?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let name = rel(dir, &path);
            if name == "manifest.json" {
                continue;
            }
            if name == "fallback_report.csv" {
                // Canonicalize: drop the measured steps_per_sec column.
                let text = std::fs::read_to_string(&path)?;
                let canon: String = text
                    .lines()
                    .map(|l| l.rsplit_once(',').map(|(head, _)| head).unwrap_or(l))
                    .collect::<Vec<_>>()
                    .join("\n");
                out.push((name, io::bytes_digest(canon.as_bytes())));
                continue;
            }
            out.push((name, file_digest(&path)?));
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_prerequisites_name_their_producer() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::default();
        let err = cmd_train_vbc(&cfg, dir.path()).unwrap_err();
        match err {
            Error::MissingPrerequisite { producer, .. } => assert_eq!(producer, "render"),
            other => panic!("expected missing prerequisite, got {other:?}"),
        }
        assert_eq!(
            cmd_train_fd(&cfg, dir.path()).unwrap_err().exit_code(),
            3
        );
    }

    #[test]
    fn split_fractions_partition_the_pool() {
        let cfg = PipelineConfig::default();
        let (train, cal, test) = pool_split(&cfg, 1200);
        assert_eq!(train.len() + cal.len() + test.len(), 1200);
        assert_eq!(cal.len(), 200);
        assert_eq!(test.len(), 200);
        let mut all: Vec<usize> = train.iter().chain(&cal).chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1200).collect::<Vec<_>>());
    }

    #[test]
    fn grid_env_set_covers_analysis_and_eval_conditions() {
        let cfg = PipelineConfig::default();
        let envs = grid_env_set(&cfg);
        assert_eq!(envs.len(), 9);
        assert!(eval_envs(&cfg).iter().all(|e| envs.contains(e)));
        assert!(mining_envs(&cfg).iter().all(|e| envs.contains(e)));
    }

    #[test]
    fn fallback_states_form_a_matched_grid() {
        let cfg = PipelineConfig::default();
        let states = fallback_initial_states(&cfg);
        assert_eq!(states.len(), 19 * 9);
        assert!(states.iter().all(|s| s.px.abs() <= 9.0 + 1e-12));
        // Deterministic: same config gives the same states.
        assert_eq!(states, fallback_initial_states(&cfg));
    }
}
