use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::network::{sigmoid, DropoutMasks, Head, Network};
use crate::dcov::{decompose_centred, u_centre_general, u_centred_of, UCentredMatrix};
use crate::error::{Error, Result};
use crate::sample::SampleBlock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Poisson,
}

impl Task {
    pub fn head(self) -> Head {
        match self {
            Task::Binary => Head::Sigmoid,
            Task::Poisson => Head::ExpOffset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegulariserKind {
    None,
    SeparateSum,
    Jdcov,
    Ccdcov,
}

impl std::str::FromStr for RegulariserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "separate" | "separate_sum" => Ok(Self::SeparateSum),
            "jdcov" => Ok(Self::Jdcov),
            "ccdcov" => Ok(Self::Ccdcov),
            other => Err(Error::Config(format!("unknown regulariser '{other}'"))),
        }
    }
}

impl std::fmt::Display for RegulariserKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::SeparateSum => "separate_sum",
            Self::Jdcov => "jdcov",
            Self::Ccdcov => "ccdcov",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub task: Task,
    pub regulariser: RegulariserKind,
    pub lambda: f64,
    /// Per-attribute weights for the separate-sum penalty; all ones when
    /// absent.
    pub weights: Option<Vec<f64>>,
}

impl ObjectiveSpec {
    pub fn new(task: Task, regulariser: RegulariserKind, lambda: f64) -> Self {
        Self {
            task,
            regulariser,
            lambda,
            weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if let Some(w) = &self.weights {
            if let Some(&bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidWeight(bad));
            }
        }
        Ok(())
    }

    fn penalised(&self) -> bool {
        self.lambda > 0.0 && self.regulariser != RegulariserKind::None
    }
}

/// Rows of a split: inputs, responses, optional exposures and protected
/// attribute blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub exposure: Option<Vec<f64>>,
    pub attrs: Vec<SampleBlock>,
}

impl Batch {
    pub fn new(
        x: Array2<f64>,
        y: Vec<f64>,
        exposure: Option<Vec<f64>>,
        attrs: Vec<SampleBlock>,
    ) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n
            || exposure.as_ref().is_some_and(|e| e.len() != n)
            || attrs.iter().any(|a| a.n() != n)
        {
            return Err(Error::ShapeMismatch(format!(
                "batch components disagree on the row count {n}"
            )));
        }
        Ok(Self {
            x,
            y,
            exposure,
            attrs,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select(ndarray::Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            exposure: self
                .exposure
                .as_ref()
                .map(|e| idx.iter().map(|&i| e[i]).collect()),
            attrs: self.attrs.iter().map(|a| a.select_rows(idx)).collect(),
        }
    }
}

/// Objective value split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub task_loss: f64,
    pub psi: f64,
    pub total: f64,
}

fn check(net: &Network, batch: &Batch, spec: &ObjectiveSpec) -> Result<()> {
    spec.validate()?;
    if net.spec.head != spec.task.head() {
        return Err(Error::Config(format!(
            "{:?} task needs a {:?} head",
            spec.task,
            spec.task.head()
        )));
    }
    if batch.n() == 0 {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    if spec.penalised() {
        if batch.n() < 4 {
            return Err(Error::BatchTooSmall(batch.n()));
        }
        if batch.attrs.is_empty() {
            return Err(Error::ArityError {
                required: 1,
                got: 0,
            });
        }
    }
    match (spec.task, &batch.exposure) {
        (Task::Poisson, None) => Err(Error::ShapeMismatch("Poisson task needs exposures".into())),
        (Task::Binary, Some(_)) => Err(Error::ShapeMismatch(
            "binary task does not take exposures".into(),
        )),
        _ => Ok(()),
    }
}

/// Mean task loss and its derivative with respect to every logit. The
/// binary loss is cross-entropy evaluated from the logit; the Poisson loss
/// is `mean(exposure * rate - y * log(rate))`.
fn task_loss(task: Task, logits: &Array1<f64>, batch: &Batch) -> (f64, Array1<f64>) {
    let n = batch.n() as f64;
    let mut total = 0.0;
    let mut d = Array1::zeros(logits.len());
    for (i, &o) in logits.iter().enumerate() {
        let y = batch.y[i];
        match task {
            Task::Binary => {
                let softplus = o.max(0.0) + (-o.abs()).exp().ln_1p();
                total += softplus - y * o;
                d[i] = (sigmoid(o) - y) / n;
            }
            Task::Poisson => {
                let e = batch.exposure.as_ref().expect("checked")[i];
                let rate = o.exp();
                total += e * rate - y * o;
                d[i] = (e * rate - y) / n;
            }
        }
    }
    (total / n, d)
}

/// The penalty as a linear functional of the prediction distance matrix:
/// `psi = <A_yhat, target>` up to terms free of the predictions, where
/// `target` is U-centred.
struct Penalty {
    value: f64,
    target: UCentredMatrix,
}

fn penalty(
    kind: RegulariserKind,
    yhat: &[f64],
    attrs: &[SampleBlock],
    weights: Option<&[f64]>,
) -> Result<Penalty> {
    let yblock = SampleBlock::from_column(yhat)?;
    let u0 = u_centred_of(&yblock)?;
    match kind {
        RegulariserKind::None => unreachable!("caller skips unpenalised objectives"),
        RegulariserKind::Ccdcov => {
            let target = u_centred_of(&SampleBlock::concat(attrs)?)?;
            Ok(Penalty {
                value: u0.inner(&target)?,
                target,
            })
        }
        RegulariserKind::SeparateSum => {
            let ones = vec![1.0; attrs.len()];
            let w = weights.unwrap_or(&ones);
            if w.len() != attrs.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} weights for {} attributes",
                    w.len(),
                    attrs.len()
                )));
            }
            let n = yhat.len();
            let mut acc = Array2::zeros((n, n));
            for (a, &wk) in attrs.iter().zip(w) {
                acc.scaled_add(wk, u_centred_of(a)?.entries());
            }
            let target = UCentredMatrix::from_raw(acc);
            Ok(Penalty {
                value: u0.inner(&target)?,
                target,
            })
        }
        RegulariserKind::Jdcov => {
            let mut us = Vec::with_capacity(attrs.len() + 1);
            us.push(u0);
            for a in attrs {
                us.push(u_centred_of(a)?);
            }
            let value = decompose_centred(&us)?.total;
            let n = yhat.len();
            // psi = <U_0, -prod_i (1 - U_i)> / (n(n-3)) plus terms free of U_0.
            let mut prod = Array2::from_elem((n, n), -1.0);
            for u in &us[1..] {
                prod.zip_mut_with(u.entries(), |p, &v| *p *= 1.0 - v);
            }
            Ok(Penalty {
                value,
                target: u_centre_general(&prod),
            })
        }
    }
}

/// `d psi / d yhat_k = (2 / (n(n-3))) sum_j sign(yhat_k - yhat_j) T(k, j)`,
/// with sign 0 at ties.
fn penalty_gradient(yhat: &[f64], target: &UCentredMatrix) -> Vec<f64> {
    let n = yhat.len();
    let scale = 2.0 / (n as f64 * (n as f64 - 3.0));
    let t = target.entries();
    (0..n)
        .map(|k| {
            let mut g = 0.0;
            for j in 0..n {
                let diff = yhat[k] - yhat[j];
                if diff > 0.0 {
                    g += t[[k, j]];
                } else if diff < 0.0 {
                    g -= t[[k, j]];
                }
            }
            scale * g
        })
        .collect()
}

/// Regulariser value `psi(yhat, s_1, ..., s_d)` for the given predictions.
pub fn regulariser_value(
    kind: RegulariserKind,
    yhat: &[f64],
    attrs: &[SampleBlock],
    weights: Option<&[f64]>,
) -> Result<f64> {
    if kind == RegulariserKind::None {
        return Ok(0.0);
    }
    Ok(penalty(kind, yhat, attrs, weights)?.value)
}

pub(crate) fn evaluate(
    net: &Network,
    batch: &Batch,
    spec: &ObjectiveSpec,
    masks: Option<&DropoutMasks>,
    with_gradient: bool,
) -> Result<(ObjectiveParts, Option<Vec<f64>>)> {
    check(net, batch, spec)?;
    let cache = net.forward_cached(&batch.x, masks)?;
    let (task, mut d_logits) = task_loss(spec.task, &cache.logits, batch);
    let mut psi = 0.0;
    if spec.penalised() {
        let yhat = net.head_output(&cache.logits);
        if yhat.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergenceDetected {
                reason: "non-finite predictions".into(),
                last_good: None,
            });
        }
        let p = penalty(
            spec.regulariser,
            &yhat,
            &batch.attrs,
            spec.weights.as_deref(),
        )?;
        psi = p.value;
        if with_gradient {
            let gy = penalty_gradient(&yhat, &p.target);
            for (i, g) in gy.iter().enumerate() {
                let dyhat_dlogit = match spec.task {
                    Task::Binary => yhat[i] * (1.0 - yhat[i]),
                    Task::Poisson => yhat[i],
                };
                d_logits[i] += spec.lambda * g * dyhat_dlogit;
            }
        }
    }
    let parts = ObjectiveParts {
        task_loss: task,
        psi,
        total: task + spec.lambda * psi,
    };
    let grad = with_gradient.then(|| net.backprop(&cache, &d_logits, masks));
    Ok((parts, grad))
}

/// Mean task loss plus `lambda * psi` on the batch, without dropout.
pub fn objective(net: &Network, batch: &Batch, spec: &ObjectiveSpec) -> Result<f64> {
    Ok(evaluate(net, batch, spec, None, false)?.0.total)
}

pub fn objective_parts(
    net: &Network,
    batch: &Batch,
    spec: &ObjectiveSpec,
) -> Result<ObjectiveParts> {
    Ok(evaluate(net, batch, spec, None, false)?.0)
}

/// Gradient of [`objective`] over the flat parameter vector. Absolute-value
/// and rectifier kinks take subgradient 0.
pub fn backward(net: &Network, batch: &Batch, spec: &ObjectiveSpec) -> Result<Vec<f64>> {
    backward_masked(net, batch, spec, None)
}

/// As [`backward`], with fixed dropout masks.
pub fn backward_masked(
    net: &Network,
    batch: &Batch,
    spec: &ObjectiveSpec,
    masks: Option<&DropoutMasks>,
) -> Result<Vec<f64>> {
    Ok(evaluate(net, batch, spec, masks, true)?
        .1
        .expect("gradient requested"))
}

/// Objective with fixed dropout masks.
pub fn objective_masked(
    net: &Network,
    batch: &Batch,
    spec: &ObjectiveSpec,
    masks: Option<&DropoutMasks>,
) -> Result<f64> {
    Ok(evaluate(net, batch, spec, masks, false)?.0.total)
}
