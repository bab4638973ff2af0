//! Input builders shared by the benchmarks.

use feel_core::scheduler::{Candidate, SchedulingInstance};
use feel_core::{derive_stream, rng::NO_UE};
use rand::Rng;

/// A random instance with `k` UEs, roughly a fifth of them unable to meet the deadline.
pub fn random_instance(k: usize, seed: u64) -> SchedulingInstance {
    let mut rng = derive_stream(seed, "bench-instance", 0, NO_UE);
    let candidates = (0..k)
        .map(|id| Candidate {
            id,
            value: rng.random_range(0.0..1.0),
            min_alpha: (rng.random_range(0.0..1.0) > 0.2).then(|| rng.random_range(0.02..0.6)),
        })
        .collect();
    SchedulingInstance {
        candidates,
        min_selected: 5,
    }
}
