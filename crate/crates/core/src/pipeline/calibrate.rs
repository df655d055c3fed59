use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::preprocess::Dataset;
use super::report::{evaluate_model, EvalConfig};
use crate::error::{Error, Result};
use crate::model::{
    train, EarlyStopping, NetworkSpec, ObjectiveSpec, OptimiserConfig, RegulariserKind,
};

/// Regulariser values at or below this cannot anchor a lambda scale.
pub const MIN_REGULARISER: f64 = 1e-12;

/// Order-of-magnitude anchor for the lambda grid: the baseline's
/// validation loss divided by its regulariser value.
pub fn suggest_lambda_scale(baseline_loss: f64, baseline_psi: f64) -> Result<f64> {
    if !(baseline_psi > MIN_REGULARISER) {
        return Err(Error::DegenerateRegulariser(baseline_psi));
    }
    Ok(baseline_loss / baseline_psi)
}

/// Relative JSD improvement below which the next grid step counts as
/// marginal.
pub const ELBOW_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub lambda: f64,
    pub seed: u64,
    pub diverged: bool,
    pub divergence: Option<String>,
    pub rps: Option<f64>,
    pub ccdcov: Option<f64>,
    pub jdcov: Option<f64>,
    pub jsd: Option<f64>,
    pub uf: Option<f64>,
    /// Validation subgroup mean predictions, keyed as in the report.
    pub subgroup_means: Vec<(String, f64)>,
}

/// Means over the non-diverged seeds at one lambda.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub lambda: f64,
    pub mean_rps: Option<f64>,
    pub mean_jsd: Option<f64>,
    pub mean_uf: Option<f64>,
    pub mean_ccdcov: Option<f64>,
    pub mean_jdcov: Option<f64>,
    pub n_seeds: usize,
    pub n_diverged: usize,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub regulariser: RegulariserKind,
    pub records: Vec<CalibrationRecord>,
    /// Advisory elbow of the JSD curve; selection stays with the user.
    pub elbow: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub regulariser: RegulariserKind,
    pub network: NetworkSpec,
    pub optimiser: OptimiserConfig,
    pub stopping: EarlyStopping,
    pub weights: Option<Vec<f64>>,
    pub eval: EvalConfig,
}

fn mean(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Smallest lambda whose next grid step lowers mean JSD by less than
/// [`ELBOW_THRESHOLD`] relative. Records must be sorted by lambda.
pub fn elbow(records: &[CalibrationRecord]) -> Option<f64> {
    for w in records.windows(2) {
        let (Some(a), Some(b)) = (w[0].mean_jsd, w[1].mean_jsd) else {
            continue;
        };
        if a <= 0.0 || (a - b) / a < ELBOW_THRESHOLD {
            return Some(w[0].lambda);
        }
    }
    None
}

fn run_one(
    subtrain: &Dataset,
    validation: &Dataset,
    cfg: &CalibrationConfig,
    lambda: f64,
    seed: u64,
) -> Result<RunRecord> {
    let mut objective = ObjectiveSpec::new(subtrain.task, cfg.regulariser, lambda);
    objective.weights = cfg.weights.clone();
    let fit = subtrain.to_batch()?;
    let held = validation.to_batch()?;
    let eval = EvalConfig {
        tests: false,
        ecdf: false,
        ..cfg.eval.clone()
    };
    match train(
        &fit,
        &held,
        &cfg.network,
        &objective,
        &cfg.optimiser,
        &cfg.stopping,
        seed,
    ) {
        Ok(out) => {
            let r = evaluate_model(&out.model, validation, &eval)?;
            Ok(RunRecord {
                lambda,
                seed,
                diverged: false,
                divergence: None,
                rps: Some(r.rps),
                ccdcov: Some(r.ccdcov),
                jdcov: Some(r.jdcov),
                jsd: Some(r.jsd),
                uf: r.uf,
                subgroup_means: r
                    .subgroups
                    .into_iter()
                    .map(|s| (s.key, s.mean_prediction))
                    .collect(),
            })
        }
        Err(Error::DivergenceDetected { reason, .. }) => Ok(RunRecord {
            lambda,
            seed,
            diverged: true,
            divergence: Some(reason),
            rps: None,
            ccdcov: None,
            jdcov: None,
            jsd: None,
            uf: None,
            subgroup_means: Vec::new(),
        }),
        Err(e) => Err(e),
    }
}

/// Trains one model per (lambda, seed) on `subtrain` and scores it on
/// `validation`. Runs are independent and may execute concurrently; the
/// records come back sorted by lambda then seed.
pub fn calibrate_lambda(
    subtrain: &Dataset,
    validation: &Dataset,
    cfg: &CalibrationConfig,
) -> Result<Calibration> {
    if !cfg.grid.contains(&0.0) {
        return Err(Error::Config(
            "the lambda grid must include the baseline 0".into(),
        ));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    if let Some(bad) = cfg.grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::Config(format!("invalid lambda {bad}")));
    }
    let mut grid = cfg.grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    let jobs: Vec<(f64, u64)> = grid
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(l, s)| run_one(subtrain, validation, cfg, l, s))
        .collect::<Result<_>>()?;
    let records: Vec<CalibrationRecord> = grid
        .iter()
        .map(|&l| {
            let rs: Vec<RunRecord> = runs.iter().filter(|r| r.lambda == l).cloned().collect();
            let ok = || rs.iter().filter(|r| !r.diverged);
            CalibrationRecord {
                lambda: l,
                mean_rps: mean(ok().map(|r| r.rps)),
                mean_jsd: mean(ok().map(|r| r.jsd)),
                mean_uf: mean(ok().map(|r| r.uf)),
                mean_ccdcov: mean(ok().map(|r| r.ccdcov)),
                mean_jdcov: mean(ok().map(|r| r.jdcov)),
                n_seeds: rs.len(),
                n_diverged: rs.iter().filter(|r| r.diverged).count(),
                runs: rs,
            }
        })
        .collect();
    Ok(Calibration {
        regulariser: cfg.regulariser,
        elbow: elbow(&records),
        records,
    })
}
