use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::preprocess::Dataset;
use super::split::stratified_folds;
use crate::error::{Error, Result};
use crate::model::{
    train, EarlyStopping, NetworkSpec, ObjectiveSpec, OptimiserConfig, RegulariserKind,
};

/// Ranges sampled by the search. Learning rates are log-uniform, dropout
/// uniform, everything else a uniform pick from the listed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub lr: (f64, f64),
    pub batch_sizes: Vec<usize>,
    pub hidden_layers: Vec<usize>,
    pub widths: Vec<usize>,
    pub dropout: (f64, f64),
    pub hessian_powers: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub max_epochs: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr: (1e-3, 1e-1),
            batch_sizes: vec![128, 256, 512],
            hidden_layers: vec![1, 2, 3],
            widths: vec![16, 32, 64],
            dropout: (0.0, 0.1),
            hessian_powers: vec![0.5, 0.75, 1.0],
            beta1: 0.95,
            beta2: 0.999,
            max_epochs: 100,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lr;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!(
                "bad learning-rate range {:?}",
                self.lr
            )));
        }
        let (dlo, dhi) = self.dropout;
        if !(0.0 <= dlo && dlo <= dhi && dhi < 1.0) {
            return Err(Error::Config(format!(
                "bad dropout range {:?}",
                self.dropout
            )));
        }
        if self.batch_sizes.is_empty()
            || self.hidden_layers.is_empty()
            || self.widths.is_empty()
            || self.hessian_powers.is_empty()
        {
            return Err(Error::Config(
                "every search list needs at least one value".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub hidden_layers: usize,
    pub width: usize,
    pub dropout: f64,
    pub optimiser: OptimiserConfig,
}

impl Candidate {
    pub fn network(&self, data: &Dataset) -> NetworkSpec {
        NetworkSpec::new(
            data.x.ncols(),
            self.hidden_layers,
            self.width,
            data.task.head(),
        )
        .with_dropout(self.dropout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub candidate: Candidate,
    pub fold_losses: Vec<f64>,
    pub mean_loss: f64,
}

/// Source of candidates. Receives the trials so far, so a surrogate-model
/// strategy can plug in here.
pub trait SearchStrategy {
    fn propose(&mut self, space: &SearchSpace, history: &[Trial]) -> Candidate;
}

pub struct RandomSearch {
    rng: ChaCha8Rng,
}

impl RandomSearch {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl SearchStrategy for RandomSearch {
    fn propose(&mut self, space: &SearchSpace, _history: &[Trial]) -> Candidate {
        let r = &mut self.rng;
        let pick = |r: &mut ChaCha8Rng, v: &[usize]| v[r.gen_range(0..v.len())];
        let (lo, hi) = space.lr;
        let lr = (lo.ln() + r.gen::<f64>() * (hi.ln() - lo.ln())).exp();
        let (dlo, dhi) = space.dropout;
        let dropout = dlo + r.gen::<f64>() * (dhi - dlo);
        let batch = pick(r, &space.batch_sizes);
        let layers = pick(r, &space.hidden_layers);
        let width = pick(r, &space.widths);
        let power = space.hessian_powers[r.gen_range(0..space.hessian_powers.len())];
        Candidate {
            hidden_layers: layers,
            width,
            dropout,
            optimiser: OptimiserConfig {
                lr,
                beta1: space.beta1,
                beta2: space.beta2,
                hessian_power: power,
                batch_size: Some(batch),
                max_epochs: space.max_epochs,
                ..OptimiserConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Candidate,
    pub trials: Vec<Trial>,
}

pub const CV_FOLDS: usize = 5;

/// Unregularised k-fold score of one candidate: each fold trains on the
/// other folds with early stopping on the held-out fold, whose best task
/// loss is recorded. Folds run concurrently with their own seeds.
pub fn cross_validate(
    data: &Dataset,
    rows: &[usize],
    candidate: &Candidate,
    stopping: &EarlyStopping,
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let strata = data.strata()?;
    let parts = stratified_folds(rows, &strata, folds, seed)?;
    let objective = ObjectiveSpec::new(data.task, RegulariserKind::None, 0.0);
    let net = candidate.network(data);
    (0..folds)
        .into_par_iter()
        .map(|f| {
            let fit_rows: Vec<usize> = parts
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, p)| p.iter().copied())
                .collect();
            let fit = data.select(&fit_rows).to_batch()?;
            let held = data.select(&parts[f]).to_batch()?;
            let out = train(
                &fit,
                &held,
                &net,
                &objective,
                &candidate.optimiser,
                stopping,
                seed.wrapping_add(f as u64),
            )?;
            Ok(out.history.best_val_objective)
        })
        .collect()
}

/// Random-search tuning with the default strategy.
pub fn tune_hyperparams(
    data: &Dataset,
    rows: &[usize],
    space: &SearchSpace,
    stopping: &EarlyStopping,
    budget: usize,
    n_rand: usize,
    seed: u64,
) -> Result<TuneResult> {
    let mut strategy = RandomSearch::new(seed);
    tune_with_strategy(
        data,
        rows,
        space,
        stopping,
        budget,
        n_rand,
        seed,
        &mut strategy,
    )
}

/// Evaluates `budget` candidates by cross-validation: the first `n_rand`
/// are drawn at random, the rest come from `strategy`. Returns the
/// candidate with the lowest mean fold loss (earliest on ties).
#[allow(clippy::too_many_arguments)]
pub fn tune_with_strategy(
    data: &Dataset,
    rows: &[usize],
    space: &SearchSpace,
    stopping: &EarlyStopping,
    budget: usize,
    n_rand: usize,
    seed: u64,
    strategy: &mut dyn SearchStrategy,
) -> Result<TuneResult> {
    if budget < 1 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    if n_rand > budget {
        return Err(Error::Config(format!(
            "{n_rand} random candidates exceed the budget of {budget}"
        )));
    }
    space.validate()?;
    let mut random = RandomSearch::new(seed ^ 0x5EED);
    let mut trials: Vec<Trial> = Vec::with_capacity(budget);
    for i in 0..budget {
        let candidate = if i < n_rand {
            random.propose(space, &trials)
        } else {
            strategy.propose(space, &trials)
        };
        let fold_losses = cross_validate(data, rows, &candidate, stopping, CV_FOLDS, seed)?;
        let mean_loss = fold_losses.iter().sum::<f64>() / fold_losses.len() as f64;
        trials.push(Trial {
            candidate,
            fold_losses,
            mean_loss,
        });
    }
    let best = trials
        .iter()
        .min_by(|a, b| a.mean_loss.total_cmp(&b.mean_loss))
        .expect("budget >= 1")
        .candidate
        .clone();
    Ok(TuneResult { best, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Task;
    use crate::pipeline::preprocess::ProtectedBlock;
    use crate::pipeline::schema::ProtectedKind;
    use crate::sample::SampleBlock;
    use ndarray::Array2;

    fn linear_data(n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_simple_fn((n, 2), || rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = x
            .rows()
            .into_iter()
            .map(|r| f64::from(u8::from(r[0] - r[1] > 0.0)))
            .collect();
        let labels: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        let block =
            SampleBlock::from_column(&labels.iter().map(|&l| f64::from(l)).collect::<Vec<_>>())
                .unwrap();
        Dataset {
            task: Task::Binary,
            x,
            feature_names: vec!["a".into(), "b".into()],
            y,
            exposure: None,
            protected: vec![ProtectedBlock {
                name: "s".into(),
                kind: ProtectedKind::Binary,
                block,
                labels,
            }],
        }
    }

    fn tiny_space() -> SearchSpace {
        SearchSpace {
            batch_sizes: vec![32],
            hidden_layers: vec![1],
            widths: vec![4],
            max_epochs: 8,
            ..SearchSpace::default()
        }
    }

    #[test]
    fn budget_one_returns_the_sample() {
        let d = linear_data(100);
        let rows: Vec<usize> = (0..100).collect();
        let r =
            tune_hyperparams(&d, &rows, &tiny_space(), &EarlyStopping::default(), 1, 1, 3).unwrap();
        assert_eq!(r.trials.len(), 1);
        assert_eq!(r.best, r.trials[0].candidate);
        assert_eq!(r.trials[0].fold_losses.len(), CV_FOLDS);
    }

    #[test]
    fn zero_budget_is_config_error() {
        let d = linear_data(20);
        let rows: Vec<usize> = (0..20).collect();
        let r = tune_hyperparams(&d, &rows, &tiny_space(), &EarlyStopping::default(), 0, 0, 3);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn identical_seeds_identical_trajectory() {
        let d = linear_data(80);
        let rows: Vec<usize> = (0..80).collect();
        let a =
            tune_hyperparams(&d, &rows, &tiny_space(), &EarlyStopping::default(), 2, 1, 9).unwrap();
        let b =
            tune_hyperparams(&d, &rows, &tiny_space(), &EarlyStopping::default(), 2, 1, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn heavier_dropout_never_wins() {
        let d = linear_data(300);
        let rows: Vec<usize> = (0..300).collect();
        let base = Candidate {
            hidden_layers: 1,
            width: 16,
            dropout: 0.0,
            optimiser: OptimiserConfig {
                lr: 0.05,
                batch_size: Some(64),
                max_epochs: 40,
                ..OptimiserConfig::default()
            },
        };
        let noisy = Candidate {
            dropout: 0.6,
            ..base.clone()
        };
        let stop = EarlyStopping {
            patience: 40,
            min_delta: 0.0,
        };
        let a = cross_validate(&d, &rows, &base, &stop, 5, 1).unwrap();
        let b = cross_validate(&d, &rows, &noisy, &stop, 5, 1).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&a) < mean(&b), "{a:?} vs {b:?}");
    }
}
