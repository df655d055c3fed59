use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fairness::SubgroupKey;

pub const DEFAULT_MIN_COUNT: usize = 30;

/// Tops every present subgroup of `rows` up to `min_count` rows by drawing
/// duplicates with replacement from its own members. Returns the original
/// rows followed by the duplicates; subgroups already at `min_count` are
/// untouched.
pub fn oversample_subgroups(
    rows: &[usize],
    keys: &[SubgroupKey],
    min_count: usize,
    seed: u64,
) -> Vec<usize> {
    let mut groups: BTreeMap<&SubgroupKey, Vec<usize>> = BTreeMap::new();
    for &i in rows {
        groups.entry(&keys[i]).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = rows.to_vec();
    for members in groups.values() {
        for _ in members.len()..min_count {
            out.push(members[rng.gen_range(0..members.len())]);
        }
    }
    out
}
