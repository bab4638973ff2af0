use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Disjoint per-UE index lists into a dataset, plus how often each UE has
/// trained (its age).
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub indices: Vec<Vec<usize>>,
    pub groups_per_ue: Vec<usize>,
    pub participation: Vec<u32>,
}

impl Partition {
    pub fn num_ues(&self) -> usize {
        self.indices.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.indices.iter().map(Vec::len).collect()
    }
}

/// Sorts by label, cuts each label's run into label-pure groups of
/// `group_size` (a trailing partial group per label is dropped) and hands
/// each UE a uniform number of groups in `[min_groups, max_groups]`.
///
/// When the UEs ask for more groups than exist, every request is scaled by
/// `supply / demand` (floored, at least one); any remaining excess is taken
/// from the largest requests.
pub fn partition_sorted_groups(
    dataset: &Dataset,
    num_ues: usize,
    group_size: usize,
    min_groups: usize,
    max_groups: usize,
    rng: &mut RngStream,
) -> Result<Partition> {
    assert!(group_size > 0 && min_groups > 0 && min_groups <= max_groups);

    let mut groups = label_pure_groups(dataset, group_size);
    let supply = groups.len();
    if supply < num_ues * min_groups {
        return Err(Error::InsufficientData(format!(
            "{supply} groups of {group_size} cannot give {num_ues} UEs at least {min_groups} each"
        )));
    }

    let mut counts: Vec<usize> = (0..num_ues)
        .map(|_| rng.random_range(min_groups..=max_groups))
        .collect();
    let demand: usize = counts.iter().sum();
    if demand > supply {
        for c in counts.iter_mut() {
            *c = ((*c * supply) / demand).max(1);
        }
        let mut excess = counts.iter().sum::<usize>().saturating_sub(supply);
        while excess > 0 {
            let (k, _) = counts
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("num_ues > 0");
            counts[k] -= 1;
            excess -= 1;
        }
    }

    groups.shuffle(rng);
    let mut next = groups.into_iter();
    let mut indices = Vec::with_capacity(num_ues);
    for &c in &counts {
        let mut mine: Vec<usize> = next.by_ref().take(c).flatten().collect();
        mine.sort_unstable();
        indices.push(mine);
    }
    Ok(Partition {
        indices,
        groups_per_ue: counts,
        participation: vec![0; num_ues],
    })
}

/// Sorted-by-label groups of exactly `group_size` samples, each holding a
/// single label.
pub fn label_pure_groups(dataset: &Dataset, group_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| dataset.labels()[i]);
    let mut groups = Vec::new();
    for run in order.chunk_by(|&a, &b| dataset.labels()[a] == dataset.labels()[b]) {
        groups.extend(run.chunks_exact(group_size).map(<[usize]>::to_vec));
    }
    groups
}

/// Label-flipping attack parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub source_label: u8,
    pub target_label: u8,
    pub flip_fraction: f64,
}

/// Returns a poisoned copy of a UE's labels: `floor(flip_fraction * n)` of
/// its `n` samples labelled `source_label`, picked from `rng`, become
/// `target_label`. The input labels are left untouched.
pub fn apply_label_flip(labels: &[u8], attack: &AttackSpec, rng: &mut RngStream) -> Vec<u8> {
    let mut out = labels.to_vec();
    let sources: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == attack.source_label)
        .map(|(i, _)| i)
        .collect();
    let n_flip = (attack.flip_fraction * sources.len() as f64).floor() as usize;
    if n_flip == 0 {
        return out;
    }
    for pick in index::sample(rng, sources.len(), n_flip) {
        out[sources[pick]] = attack.target_label;
    }
    out
}

/// Picks `count` distinct malicious UE ids, returned in ascending order.
pub fn choose_malicious(num_ues: usize, count: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut ids = index::sample(rng, num_ues, count.min(num_ues)).into_vec();
    ids.sort_unstable();
    ids
}
