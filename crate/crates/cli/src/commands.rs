use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use vo_core::datasetio::{read_dataset, subsample, write_dataset, CorrespondenceRecord};
use vo_core::optim::LmConfig;
use vo_core::pipeline::{run_session, VoConfig};
use vo_core::relpose5::SolverWeights;
use vo_core::synthlab::experiments::{
    compare_estimators, evaluate_record, sweep_guess, sweep_weight, synthetic_records, CompareConfig, DepthMode,
    EstimatorTrial, PoseErrors, PriorSource, SweepTrial, TwoViewConfig,
};
use vo_core::synthlab::{derive_seed, generate_scene, trajectory_error_metrics, SceneConfig, SyntheticSequence};

use crate::convert::read_flat_csv;
use crate::table::{real, Table};
use crate::{
    Command, CompareArgs, Common, ConvertFrom, DatasetConvertArgs, DatasetEvalArgs, DepthModeArg, PriorArg, RunVoArgs,
    SweepGuessArgs, SweepWeightArgs,
};

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::CompareEstimators(a) => in_pool(&a.common, || compare(a, false)),
        Command::ErrorPerFrame(a) => in_pool(&a.common, || compare(a, true)),
        Command::SweepWeight(a) => in_pool(&a.common, || weight_sweep(a)),
        Command::SweepGuess(a) => in_pool(&a.common, || guess_sweep(a)),
        Command::RunVo(a) => in_pool(&a.common, || run_vo(a)),
        Command::DatasetEval(a) => in_pool(&a.common, || dataset_eval(a)),
        Command::DatasetConvert(a) => dataset_convert(a),
    }
}

/// Runs `f` on a pool of `--jobs` workers, then writes and summarises its
/// table.
fn in_pool(common: &Common, f: impl FnOnce() -> Result<Table> + Send) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs.unwrap_or(0) as usize)
        .build()
        .context("cannot start worker pool")?;
    let table = pool.install(f)?;
    table.write(&common.out)?;
    table.print_summary();
    log::info!("wrote {}", common.out.display());
    Ok(())
}

fn weights(w: f64) -> Result<SolverWeights> {
    SolverWeights::new(w).map_err(|e| anyhow::anyhow!("weight {w}: {e}"))
}

fn status(e: &PoseErrors) -> &'static str {
    if !e.rot_err_deg.is_finite() || !e.dir_err_deg.is_finite() {
        "failed"
    } else if !e.converged {
        "not_converged"
    } else {
        "ok"
    }
}

fn compare_config(a: &CompareArgs) -> Result<CompareConfig> {
    let scene = SceneConfig {
        n_frames: a.frames as usize,
        pixel_sigma: a.pixel_sigma,
        outlier_rate: a.outlier_rate,
        ..SceneConfig::default()
    };
    Ok(CompareConfig {
        scene,
        depth_mode: match a.depth_mode {
            DepthModeArg::Constant => DepthMode::Constant,
            DepthModeArg::Known => DepthMode::Known,
        },
        prior: match a.prior {
            PriorArg::Gyro => PriorSource::Gyro,
            PriorArg::Previous => PriorSource::PreviousEstimate,
        },
        weights: weights(a.weight)?,
        ..CompareConfig::default()
    })
}

const COMPARE_HEADER: &[&str] =
    &["experiment", "trial", "estimator", "depth_mode", "prior", "rot_err_pct", "trans_err_pct", "failed_frames", "status"];
const PER_FRAME_HEADER: &[&str] =
    &["experiment", "trial", "estimator", "depth_mode", "prior", "frame", "rot_err_pct", "trans_err_pct", "status"];

fn compare(a: &CompareArgs, per_frame: bool) -> Result<Table> {
    let cfg = compare_config(a)?;
    let trials = compare_estimators(&cfg, a.trials as usize, a.common.seed)?;
    let (mode, prior) = (cfg.depth_mode.name(), cfg.prior.name());
    let row_status = |t: &EstimatorTrial| if t.failed_frames == 0 { "ok" } else { "partial" };
    if !per_frame {
        let mut table = Table::new(COMPARE_HEADER);
        for t in &trials {
            let m = &t.metrics;
            table.push(vec![
                "compare-estimators".into(),
                t.trial.to_string(),
                t.estimator.name().into(),
                mode.into(),
                prior.into(),
                real(m.max_rot_err_pct),
                real(m.max_trans_err_pct),
                t.failed_frames.to_string(),
                row_status(t).into(),
            ]);
        }
        for t in &trials {
            table.sample(format!("estimator={}", t.estimator.name()), "rot_err_pct", t.metrics.max_rot_err_pct);
        }
        for t in &trials {
            table.sample(format!("estimator={}", t.estimator.name()), "trans_err_pct", t.metrics.max_trans_err_pct);
        }
        return Ok(table);
    }
    let mut table = Table::new(PER_FRAME_HEADER);
    for t in &trials {
        let m = &t.metrics;
        for k in 1..m.rot_err_pct.len() {
            table.push(vec![
                "error-per-frame".into(),
                t.trial.to_string(),
                t.estimator.name().into(),
                mode.into(),
                prior.into(),
                k.to_string(),
                real(m.rot_err_pct[k]),
                real(m.trans_err_pct[k]),
                row_status(t).into(),
            ]);
            let group = format!("estimator={};frame={k}", t.estimator.name());
            table.sample(group.clone(), "rot_err_pct", m.rot_err_pct[k]);
            table.sample(group, "trans_err_pct", m.trans_err_pct[k]);
        }
    }
    Ok(table)
}

const SWEEP_WEIGHT_HEADER: &[&str] = &["experiment", "trial", "weight", "rot_err_deg", "dir_err_deg", "converged", "status"];

fn weight_sweep(a: &SweepWeightArgs) -> Result<Table> {
    if a.weights.is_empty() {
        bail!("no weights given");
    }
    let cfg = TwoViewConfig { n_points: a.points as usize, pixel_sigma: a.pixel_sigma, ..TwoViewConfig::default() };
    let lm = LmConfig::default();
    let results: Vec<SweepTrial> = match a.gamma {
        None => sweep_weight(&cfg, &a.weights, a.trials as usize, &lm, a.common.seed)?,
        Some(gamma) => {
            let records = synthetic_records(&cfg, a.trials as usize, "synthetic", false, a.common.seed);
            let solvers = a.weights.iter().map(|&w| weights(w)).collect::<Result<Vec<_>>>()?;
            let per_record: Result<Vec<Vec<SweepTrial>>> = records
                .par_iter()
                .enumerate()
                .map(|(trial, rec)| {
                    a.weights
                        .iter()
                        .zip(&solvers)
                        .map(|(&value, &w)| Ok(SweepTrial { trial, value, errors: evaluate_record(rec, gamma, w, &lm)? }))
                        .collect()
                })
                .collect();
            per_record?.into_iter().flatten().collect()
        }
    };
    let mut table = Table::new(SWEEP_WEIGHT_HEADER);
    for t in &results {
        table.push(vec![
            "sweep-weight".into(),
            t.trial.to_string(),
            real(t.value),
            real(t.errors.rot_err_deg),
            real(t.errors.dir_err_deg),
            t.errors.converged.to_string(),
            status(&t.errors).into(),
        ]);
    }
    for &w in &a.weights {
        for t in results.iter().filter(|t| t.value == w) {
            table.sample(format!("weight={}", real(w)), "rot_err_deg", t.errors.rot_err_deg);
        }
        for t in results.iter().filter(|t| t.value == w) {
            table.sample(format!("weight={}", real(w)), "dir_err_deg", t.errors.dir_err_deg);
        }
    }
    Ok(table)
}

const SWEEP_GUESS_HEADER: &[&str] =
    &["experiment", "trial", "gamma", "pair_id", "sequence", "rot_err_deg", "dir_err_deg", "converged", "status"];

fn guess_sweep(a: &SweepGuessArgs) -> Result<Table> {
    if a.gammas.is_empty() {
        bail!("no gammas given");
    }
    let records = match &a.dataset {
        Some(path) => read_dataset(path)?,
        None => synthetic_records(&TwoViewConfig::low_parallax(), a.records as usize, "synthetic", false, a.common.seed),
    };
    if records.is_empty() {
        bail!("no records to evaluate");
    }
    let results = sweep_guess(&records, &a.gammas, weights(a.weight)?, &LmConfig::default())?;
    let mut table = Table::new(SWEEP_GUESS_HEADER);
    for t in &results {
        let rec = &records[t.trial];
        table.push(vec![
            "sweep-guess".into(),
            t.trial.to_string(),
            real(t.value),
            rec.pair_id.to_string(),
            rec.source_sequence.clone(),
            real(t.errors.rot_err_deg),
            real(t.errors.dir_err_deg),
            t.errors.converged.to_string(),
            status(&t.errors).into(),
        ]);
    }
    for &g in &a.gammas {
        for t in results.iter().filter(|t| t.value == g) {
            table.sample(format!("gamma={}", real(g)), "rot_err_deg", t.errors.rot_err_deg);
        }
        for t in results.iter().filter(|t| t.value == g) {
            table.sample(format!("gamma={}", real(g)), "dir_err_deg", t.errors.dir_err_deg);
        }
    }
    Ok(table)
}

const RUN_VO_HEADER: &[&str] = &[
    "experiment",
    "trial",
    "frame",
    "status",
    "keyframe",
    "keyframe_inserted",
    "keyframe_reason",
    "correspondences",
    "inliers",
    "magnitude_features",
    "mean_reproj_px",
    "depth_released",
    "rot_err_deg",
    "trans_err",
    "rot_err_pct",
    "trans_err_pct",
];

fn run_vo(a: &RunVoArgs) -> Result<Table> {
    let base = SceneConfig {
        n_frames: a.frames as usize,
        total_rotation_deg: a.rotation_deg,
        total_translation_m: a.translation_m,
        pixel_sigma: a.pixel_sigma,
        ..SceneConfig::default()
    };
    let sessions: Result<Vec<_>> = (0..a.trials as usize)
        .into_par_iter()
        .map(|trial| {
            let scene_seed = derive_seed(a.common.seed, 2 * trial as u64);
            let obs_seed = derive_seed(a.common.seed, 2 * trial as u64 + 1);
            let scene = generate_scene(&SceneConfig { seed: scene_seed, ..base })?;
            let mut provider = SyntheticSequence::new(scene.clone(), a.pixel_sigma, obs_seed, a.gyro_noise_deg);
            let config = VoConfig {
                seed: obs_seed,
                pixel_sigma: if a.pixel_sigma > 0.0 { a.pixel_sigma } else { VoConfig::default().pixel_sigma },
                camera: base.camera,
                ..VoConfig::default()
            };
            let (trajectory, diagnostics) = run_session(&mut provider, config)?;
            let metrics = trajectory_error_metrics(&trajectory, &scene.poses)?;
            Ok((trial, diagnostics, metrics))
        })
        .collect();
    let mut table = Table::new(RUN_VO_HEADER);
    let sessions = sessions?;
    for (trial, diagnostics, m) in &sessions {
        for d in diagnostics {
            let k = d.frame_index;
            table.push(vec![
                "run-vo".into(),
                trial.to_string(),
                k.to_string(),
                d.status.name().into(),
                d.keyframe_index.to_string(),
                d.keyframe_inserted.to_string(),
                d.keyframe_reason.map_or("none", |r| r.name()).into(),
                d.correspondences.to_string(),
                d.inliers.to_string(),
                d.magnitude_features.to_string(),
                real(d.mean_reproj_px),
                d.depth_released.to_string(),
                real(m.rot_err_deg[k]),
                real(m.trans_err[k]),
                real(m.rot_err_pct[k]),
                real(m.trans_err_pct[k]),
            ]);
            table.sample("all", "rot_err_deg", m.rot_err_deg[k]);
        }
    }
    for (_, diagnostics, m) in &sessions {
        for d in diagnostics {
            table.sample("all", "trans_err_pct", m.trans_err_pct[d.frame_index]);
        }
    }
    for (_, _, m) in &sessions {
        table.sample("trial_max", "rot_err_pct", m.max_rot_err_pct);
        table.sample("trial_max", "trans_err_pct", m.max_trans_err_pct);
    }
    Ok(table)
}

const DATASET_EVAL_HEADER: &[&str] =
    &["experiment", "trial", "pair_id", "sequence", "gamma", "rot_err_deg", "dir_err_deg", "converged", "status"];

fn dataset_eval(a: &DatasetEvalArgs) -> Result<Table> {
    let mut records = read_dataset(&a.dataset)?;
    if let Some(n) = a.subsample {
        records = subsample(&records, n as usize, a.common.seed);
    }
    if records.is_empty() {
        bail!("{} holds no records", a.dataset.display());
    }
    let w = weights(a.weight)?;
    let lm = LmConfig::default();
    let errors: Result<Vec<PoseErrors>> =
        records.par_iter().map(|rec| Ok(evaluate_record(rec, a.gamma, w, &lm)?)).collect();
    let errors = errors?;
    let mut table = Table::new(DATASET_EVAL_HEADER);
    for (trial, (rec, e)) in records.iter().zip(&errors).enumerate() {
        table.push(vec![
            "dataset-eval".into(),
            trial.to_string(),
            rec.pair_id.to_string(),
            rec.source_sequence.clone(),
            real(a.gamma),
            real(e.rot_err_deg),
            real(e.dir_err_deg),
            e.converged.to_string(),
            status(e).into(),
        ]);
        table.sample("all", "rot_err_deg", e.rot_err_deg);
        table.sample("all", "dir_err_deg", e.dir_err_deg);
    }
    for (rec, e) in records.iter().zip(&errors) {
        table.sample(format!("sequence={}", rec.source_sequence), "rot_err_deg", e.rot_err_deg);
    }
    Ok(table)
}

fn dataset_convert(a: &DatasetConvertArgs) -> Result<()> {
    let input = || a.input.as_deref().context("--input is required for this source");
    let mut records: Vec<CorrespondenceRecord> = match a.from {
        ConvertFrom::Native => read_dataset(input()?)?,
        ConvertFrom::FlatCsv => read_flat_csv(input()?)?,
        ConvertFrom::Synthetic => {
            let cfg = if a.low_parallax { TwoViewConfig::low_parallax() } else { TwoViewConfig::default() };
            synthetic_records(&cfg, a.records as usize, &a.sequence, a.noiseless, a.seed)
        }
    };
    if a.noiseless {
        records.iter_mut().for_each(|r| r.noiseless = true);
    }
    if let Some(n) = a.subsample {
        records = subsample(&records, n as usize, a.seed);
    }
    for r in &records {
        r.validate()?;
    }
    write_dataset(&records, &a.out)?;
    println!("wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

