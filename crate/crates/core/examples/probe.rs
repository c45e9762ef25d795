//! Scratch probe for desk-scale calibration (not part of the test suite).

use std::time::Instant;

use reachguard_core::config::{stage_seed, PipelineConfig};
use reachguard_core::io::ObsRecord;
use reachguard_core::levelset::{brt_volume, brt_volume_split};
use reachguard_core::pipeline::*;
use reachguard_core::sensor::*;
use reachguard_core::vbc::*;

fn main() {
    let cfg = PipelineConfig::default();
    let cam = cfg.camera();
    let catalog = runway_catalog();
    let plant = cfg.plant();
    let spec = cfg.grid_spec();

    let t0 = Instant::now();
    let ds = nominal_corpus(&cfg, stage_seed(0, "render")).unwrap();
    eprintln!("corpus {} samples rendered in {:?}", ds.len(), t0.elapsed());

    let (train_idx, eval_idx) = corpus_split(ds.len(), stage_seed(0, "split-corpus"));
    let train: Vec<ObsRecord> = train_idx.iter().map(|&i| ds.records[i].clone()).collect();
    let eval: Vec<ObsRecord> = eval_idx.iter().map(|&i| ds.records[i].clone()).collect();

    let t0 = Instant::now();
    let init = EstimatorParams::init(&cam, &cfg.estimator.hidden, stage_seed(0, "train-vbc-init"));
    let hyper = TrainHyper {
        lr: cfg.estimator.lr,
        epochs: cfg.estimator.epochs,
        batch: cfg.estimator.batch,
        seed: stage_seed(0, "train-vbc"),
        shuffle: true,
    };
    let (params, curve) = train_estimator(&train, init, &hyper).unwrap();
    eprintln!(
        "estimator trained in {:?}; loss {:.4} -> {:.4}",
        t0.elapsed(),
        curve[0],
        curve.last().unwrap()
    );
    eprintln!(
        "holdout mse {:.4}, px mae {:.4}",
        estimator_mse(&params, &eval).unwrap(),
        estimator_px_mae(&params, &eval).unwrap()
    );
    // Per-environment MAE.
    for d1 in [TimeOfDay::Morning, TimeOfDay::Night] {
        let sub: Vec<ObsRecord> = eval
            .iter()
            .filter(|r| r.d1 == d1.code())
            .cloned()
            .collect();
        if !sub.is_empty() {
            eprintln!("  {} px mae {:.4} (n={})", d1.name(), estimator_px_mae(&params, &sub).unwrap(), sub.len());
        }
    }

    // Policy precompute + solve for morning/clear on runway 0.
    let env = EnvParams::new(TimeOfDay::Morning, Cloud::Clear, 0);
    let t0 = Instant::now();
    let (_table, gv) =
        solve_env(&spec, &plant, &params, &cam, &catalog, &env, cfg.grid.horizon).unwrap();
    eprintln!("solve_env (precompute+march T=10) in {:?}", t0.elapsed());
    let (vp, vn) = brt_volume_split(&gv);
    eprintln!(
        "volume {:.4}, split +: {:.4} / -: {:.4}, rel diff {:.4}",
        brt_volume(&gv),
        vp,
        vn,
        (vp - vn).abs() / ((vp + vn) / 2.0)
    );

    // Night/clear volume for comparison.
    let env_n = EnvParams::new(TimeOfDay::Night, Cloud::Clear, 0);
    let t0 = Instant::now();
    let (_t2, gvn) =
        solve_env(&spec, &plant, &params, &cam, &catalog, &env_n, cfg.grid.horizon).unwrap();
    eprintln!("night solve in {:?}, volume {:.4}", t0.elapsed(), brt_volume(&gvn));
}
