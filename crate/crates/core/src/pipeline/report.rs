use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::preprocess::Dataset;
use crate::dcov::{ccdcov_streaming, jdcov2_streaming};
use crate::error::{Error, Result};
use crate::fairness::{
    chi2_independence_test, js_divergence, permutation_test_joint, permutation_test_mutual,
    subgroup_means, uf_metric, BinningSpec, SubgroupKey, TestResult,
};
use crate::model::{RegulariserKind, Task, TrainedModel};
use crate::sample::SampleBlock;
use crate::scoring::{accuracy, poisson_deviance, rps_binary, rps_poisson, WilcoxonResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub binning: BinningSpec,
    /// Run the three independence tests.
    pub tests: bool,
    pub permutations: usize,
    pub test_seed: u64,
    /// Rows above this count are subsampled (seeded) for the tests.
    pub max_test_rows: usize,
    pub ecdf: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            binning: BinningSpec::default(),
            tests: true,
            permutations: 199,
            test_seed: 0,
            max_test_rows: 5000,
            ecdf: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceTests {
    pub chi2: TestResult,
    pub perm_joint: TestResult,
    pub perm_mutual: TestResult,
    pub rows_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub key: String,
    pub labels: Vec<u32>,
    pub count: usize,
    pub mean_prediction: f64,
}

/// Sorted predictions of one subgroup; the ECDF steps by `1/len` at each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupEcdf {
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub n: usize,
    pub task: Task,
    pub regulariser: RegulariserKind,
    pub lambda: f64,
    pub rps: f64,
    pub acc: Option<f64>,
    pub poisson_deviance: Option<f64>,
    pub ccdcov: f64,
    pub jdcov: f64,
    pub jsd: f64,
    /// Absent when the predictions have (near) zero variance.
    pub uf: Option<f64>,
    pub uf_degenerate: bool,
    pub tests: Option<IndependenceTests>,
    pub subgroups: Vec<SubgroupRow>,
    pub ecdf: Vec<SubgroupEcdf>,
    pub per_observation_rps: Vec<f64>,
    pub wilcoxon: Option<WilcoxonResult>,
}

impl FairnessReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Per-row RPS: binary forecasts from probabilities, count forecasts from
/// the Poisson law with mean `exposure * rate`.
pub fn observation_rps(
    task: Task,
    yhat: &[f64],
    y: &[f64],
    exposure: Option<&[f64]>,
) -> Result<Vec<f64>> {
    match task {
        Task::Binary => yhat
            .iter()
            .zip(y)
            .map(|(&p, &t)| rps_binary(p, t as u8))
            .collect(),
        Task::Poisson => {
            let e = exposure.ok_or_else(|| Error::ShapeMismatch("counts need exposures".into()))?;
            yhat.iter()
                .zip(y)
                .zip(e)
                .map(|((&r, &t), &x)| rps_poisson(r, x, t as u64, None))
                .collect()
        }
    }
}

/// Metrics of given predictions on a split.
pub fn evaluate_predictions(
    yhat: &[f64],
    data: &Dataset,
    regulariser: RegulariserKind,
    lambda: f64,
    cfg: &EvalConfig,
) -> Result<FairnessReport> {
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptyInput("empty evaluation split".into()));
    }
    let per_obs = observation_rps(data.task, yhat, &data.y, data.exposure.as_deref())?;
    let rps = per_obs.iter().sum::<f64>() / n as f64;
    let (acc, deviance) = match data.task {
        Task::Binary => {
            let labels: Vec<u8> = data.y.iter().map(|&v| v as u8).collect();
            (Some(accuracy(yhat, &labels, 0.5)?), None)
        }
        Task::Poisson => {
            let e = data.exposure.as_ref().expect("poisson data has exposure");
            let mu: Vec<f64> = yhat.iter().zip(e).map(|(r, x)| r * x).collect();
            (None, Some(poisson_deviance(&data.y, &mu)?))
        }
    };
    let yblock = SampleBlock::from_column(yhat)?;
    let attrs = data.attrs();
    let ccdcov = ccdcov_streaming(&yblock, &attrs)?;
    let mut blocks = vec![yblock.clone()];
    blocks.extend(attrs.iter().cloned());
    let jdcov = jdcov2_streaming(&blocks)?;
    let keys = data.subgroup_keys()?;
    let jsd = js_divergence(yhat, &keys, &cfg.binning)?;
    let (uf, uf_degenerate) = match uf_metric(yhat, &keys) {
        Ok(v) => (Some(v), false),
        Err(Error::DegenerateVariance(_)) => (None, true),
        Err(e) => return Err(e),
    };
    let tests = if cfg.tests {
        Some(run_tests(&yblock, &attrs, cfg)?)
    } else {
        None
    };
    let subgroups = subgroup_means(yhat, &keys)
        .into_iter()
        .map(|(k, count, mean)| SubgroupRow {
            key: k.to_string(),
            labels: k.0,
            count,
            mean_prediction: mean,
        })
        .collect();
    let ecdf = if cfg.ecdf {
        ecdfs(yhat, &keys)
    } else {
        Vec::new()
    };
    Ok(FairnessReport {
        n,
        task: data.task,
        regulariser,
        lambda,
        rps,
        acc,
        poisson_deviance: deviance,
        ccdcov,
        jdcov,
        jsd,
        uf,
        uf_degenerate,
        tests,
        subgroups,
        ecdf,
        per_observation_rps: per_obs,
        wilcoxon: None,
    })
}

/// Predicts on the split with the frozen model and reports all metrics.
pub fn evaluate_model(
    model: &TrainedModel,
    data: &Dataset,
    cfg: &EvalConfig,
) -> Result<FairnessReport> {
    if data.n() == 0 {
        return Err(Error::EmptyInput("empty evaluation split".into()));
    }
    let yhat = model.forward(&data.x, data.exposure.as_deref())?;
    evaluate_predictions(
        &yhat,
        data,
        model.objective.regulariser,
        model.objective.lambda,
        cfg,
    )
}

fn run_tests(
    yhat: &SampleBlock,
    attrs: &[SampleBlock],
    cfg: &EvalConfig,
) -> Result<IndependenceTests> {
    let n = yhat.n();
    let (y, a) = if n > cfg.max_test_rows {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.test_seed);
        let mut idx = sample(&mut rng, n, cfg.max_test_rows).into_vec();
        idx.sort_unstable();
        (
            yhat.select_rows(&idx),
            attrs
                .iter()
                .map(|b| b.select_rows(&idx))
                .collect::<Vec<_>>(),
        )
    } else {
        (yhat.clone(), attrs.to_vec())
    };
    Ok(IndependenceTests {
        chi2: chi2_independence_test(&y, &SampleBlock::concat(&a)?)?,
        perm_joint: permutation_test_joint(&y, &a, cfg.permutations, cfg.test_seed)?,
        perm_mutual: permutation_test_mutual(&y, &a, cfg.permutations, cfg.test_seed)?,
        rows_used: y.n(),
    })
}

fn ecdfs(yhat: &[f64], keys: &[SubgroupKey]) -> Vec<SubgroupEcdf> {
    let mut groups: std::collections::BTreeMap<&SubgroupKey, Vec<f64>> = Default::default();
    for (k, &v) in keys.iter().zip(yhat) {
        groups.entry(k).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|(k, mut values)| {
            values.sort_by(f64::total_cmp);
            SubgroupEcdf {
                key: k.to_string(),
                values,
            }
        })
        .collect()
}
