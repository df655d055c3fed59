use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::SubgroupKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub train_fraction: f64,
    /// Share of the training rows used for fitting; the rest validates.
    pub subtrain_fraction: f64,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            subtrain_fraction: 0.7,
            seed: 0,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        for f in [self.train_fraction, self.subtrain_fraction] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("split fraction {f} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Row indices of every split; each list is sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub subtrain: Vec<usize>,
    pub validation: Vec<usize>,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn group<'a>(rows: &[usize], strata: &'a [SubgroupKey]) -> BTreeMap<&'a SubgroupKey, Vec<usize>> {
    let mut g: BTreeMap<&SubgroupKey, Vec<usize>> = BTreeMap::new();
    for &i in rows {
        g.entry(&strata[i]).or_default().push(i);
    }
    g
}

/// Splits `rows` so that every stratum sends `round(keep_fraction * size)`
/// rows (within one) to the first part. Quotas start at the floor and the
/// remaining rows go to the strata with the largest remainders, which keeps
/// the overall count exact. Strata of one row always stay in the first
/// part.
fn allocate(
    rows: &[usize],
    strata: &[SubgroupKey],
    keep_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let groups = group(rows, strata);
    let held_target = ((1.0 - keep_fraction) * rows.len() as f64).round() as usize;
    let mut quotas: Vec<(usize, f64)> = groups
        .values()
        .map(|g| {
            if g.len() <= 1 {
                (0, -1.0)
            } else {
                let exact = (1.0 - keep_fraction) * g.len() as f64;
                (exact.floor() as usize, exact - exact.floor())
            }
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.0).sum();
    let mut order: Vec<usize> = (0..quotas.len()).filter(|&s| quotas[s].1 >= 0.0).collect();
    order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for &s in order.iter().take(held_target.saturating_sub(assigned)) {
        quotas[s].0 += 1;
    }
    let mut keep = Vec::new();
    let mut held = Vec::new();
    for (g, (q, _)) in groups.into_values().zip(quotas) {
        let mut g = g;
        g.shuffle(rng);
        held.extend_from_slice(&g[..q]);
        keep.extend_from_slice(&g[q..]);
    }
    keep.sort_unstable();
    held.sort_unstable();
    (keep, held)
}

/// Train/test split followed by a subtrain/validation split of the
/// training rows, both stratified on `strata`.
pub fn stratified_split(strata: &[SubgroupKey], plan: &SplitPlan) -> Result<Splits> {
    plan.validate()?;
    if strata.is_empty() {
        return Err(Error::EmptyInput("nothing to split".into()));
    }
    let all: Vec<usize> = (0..strata.len()).collect();
    let (train, test) = allocate(&all, strata, plan.train_fraction, &mut rng(plan.seed, 0));
    let (subtrain, validation) = allocate(
        &train,
        strata,
        plan.subtrain_fraction,
        &mut rng(plan.seed, 1),
    );
    Ok(Splits {
        train,
        test,
        subtrain,
        validation,
    })
}

/// Assigns `rows` to `k` folds, dealing every shuffled stratum round-robin
/// so each fold holds its share of every stratum within one row.
pub fn stratified_folds(
    rows: &[usize],
    strata: &[SubgroupKey],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config("need at least two folds".into()));
    }
    if rows.len() < k {
        return Err(Error::SampleTooSmall {
            required: k,
            got: rows.len(),
        });
    }
    let mut r = rng(seed, 2);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for g in group(rows, strata).into_values() {
        let mut g = g;
        g.shuffle(&mut r);
        for i in g {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}
