//! Joint UE selection and bandwidth allocation.
//!
//! Each UE that can meet the deadline needs at least `min_alpha` of the band.
//! With bandwidth pinned at that minimum during selection, choosing UEs to
//! maximize the summed quality value is a 0/1 knapsack with capacity 1.
//! [`greedy_schedule`] is the density heuristic with the classic best-single
//! fallback (a 1/2-approximation); [`exact_schedule`] enumerates subsets and
//! serves as its oracle on small instances.

use std::cmp::Ordering;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Largest instance the exhaustive solver accepts.
pub const EXACT_MAX_UES: usize = 20;

/// Slack allowed when testing `sum(alpha) <= 1`.
const CAPACITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub value: f64,
    /// `None` when the UE cannot meet the deadline at any bandwidth.
    pub min_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingInstance {
    pub candidates: Vec<Candidate>,
    /// Best-effort lower bound on the number of selected UEs.
    pub min_selected: usize,
}

impl SchedulingInstance {
    fn feasible(&self) -> Vec<(usize, f64, f64)> {
        self.candidates
            .iter()
            .filter_map(|c| match c.min_alpha {
                Some(a) if a > 0.0 && a <= 1.0 => Some((c.id, c.value, a)),
                _ => None,
            })
            .collect()
    }
}

/// Selected UEs (ascending id) with their bandwidth fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleDecision {
    pub selected: Vec<usize>,
    pub alpha: Vec<f64>,
    pub objective: f64,
}

impl ScheduleDecision {
    pub fn empty() -> Self {
        Self {
            selected: Vec::new(),
            alpha: Vec::new(),
            objective: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn alpha_of(&self, id: usize) -> Option<f64> {
        self.selected
            .iter()
            .position(|&s| s == id)
            .map(|i| self.alpha[i])
    }

    /// Builds a decision from `(id, value, min_alpha)` picks, handing any
    /// leftover band to the picks in proportion to their minimum.
    fn from_picks(mut picks: Vec<(usize, f64, f64)>) -> Self {
        picks.sort_by_key(|p| p.0);
        let used: f64 = picks.iter().map(|p| p.2).sum();
        let scale = if used > 0.0 && used < 1.0 { 1.0 / used } else { 1.0 };
        Self {
            selected: picks.iter().map(|p| p.0).collect(),
            alpha: picks.iter().map(|p| (p.2 * scale).min(1.0)).collect(),
            objective: picks.iter().fold(0.0, |acc, p| acc + p.1),
        }
    }
}

fn fits(used: f64, alpha: f64) -> bool {
    used + alpha <= 1.0 + CAPACITY_SLACK
}

/// Density-ordered greedy knapsack with the best-single fallback, then a
/// best-effort top-up to `min_selected` UEs in ascending `min_alpha`.
pub fn greedy_schedule(instance: &SchedulingInstance) -> ScheduleDecision {
    let mut order = instance.feasible();
    if order.is_empty() {
        return ScheduleDecision::empty();
    }
    order.sort_by(|a, b| {
        (b.1 / b.2)
            .total_cmp(&(a.1 / a.2))
            .then(b.1.total_cmp(&a.1))
            .then(a.0.cmp(&b.0))
    });

    let mut picks = Vec::new();
    let mut used = 0.0;
    for &item in &order {
        if !fits(used, item.2) {
            break;
        }
        used += item.2;
        picks.push(item);
    }

    let best_single = *order
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty");
    let greedy_value: f64 = picks.iter().map(|p| p.1).sum();
    if best_single.1 > greedy_value {
        picks = vec![best_single];
        used = best_single.2;
    }

    if picks.len() < instance.min_selected {
        let mut rest: Vec<_> = order
            .iter()
            .filter(|o| !picks.iter().any(|p| p.0 == o.0))
            .copied()
            .collect();
        rest.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
        for item in rest {
            if picks.len() >= instance.min_selected || !fits(used, item.2) {
                break;
            }
            used += item.2;
            picks.push(item);
        }
    }
    ScheduleDecision::from_picks(picks)
}

/// Exhaustive search over all subsets of feasible UEs.
///
/// Ties on the objective go to fewer UEs, then to the lexicographically
/// smaller id list.
pub fn exact_schedule(instance: &SchedulingInstance) -> Result<ScheduleDecision> {
    if instance.candidates.len() > EXACT_MAX_UES {
        return Err(Error::InstanceTooLarge {
            max: EXACT_MAX_UES,
            actual: instance.candidates.len(),
        });
    }
    let mut items = instance.feasible();
    items.sort_by_key(|i| i.0);
    let n = items.len();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1u32 << n) {
        let mut used = 0.0;
        let mut value = 0.0;
        let mut members = Vec::with_capacity(mask.count_ones() as usize);
        for (bit, item) in items.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                used += item.2;
                value += item.1;
                members.push(bit);
            }
        }
        if used > 1.0 + CAPACITY_SLACK {
            continue;
        }
        let better = match &best {
            None => true,
            Some((best_value, best_members)) => match value.total_cmp(best_value) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => {
                    (members.len(), &members) < (best_members.len(), best_members)
                }
            },
        };
        if better {
            best = Some((value, members));
        }
    }
    let members = best.map(|b| b.1).unwrap_or_default();
    Ok(ScheduleDecision::from_picks(
        members.into_iter().map(|b| items[b]).collect(),
    ))
}

/// The `k` highest-valued UEs regardless of channel state, sharing the band
/// equally. Ties go to the smaller id.
pub fn top_k_schedule(values: &[f64], k: usize) -> ScheduleDecision {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    let share = if order.is_empty() { 0.0 } else { 1.0 / order.len() as f64 };
    ScheduleDecision {
        alpha: vec![share; order.len()],
        objective: order.iter().fold(0.0, |acc, &i| acc + values[i]),
        selected: order,
    }
}

/// Up to `count` feasible UEs in uniformly random order, skipping any that
/// no longer fit in the band.
pub fn random_schedule(instance: &SchedulingInstance, count: usize, rng: &mut RngStream) -> ScheduleDecision {
    let mut items = instance.feasible();
    items.sort_by_key(|i| i.0);
    items.shuffle(rng);
    let mut picks = Vec::new();
    let mut used = 0.0;
    for item in items {
        if picks.len() >= count {
            break;
        }
        if fits(used, item.2) {
            used += item.2;
            picks.push(item);
        }
    }
    ScheduleDecision::from_picks(picks)
}

/// Parses a scheduling instance: one UE per line as `id, value, min_alpha`
/// (commas and/or whitespace). `min_alpha` may be `inf`, `none` or `-` for
/// a UE that cannot meet the deadline. Blank lines and `#` comments are
/// ignored.
pub fn parse_instance(text: &str, min_selected: usize) -> Result<SchedulingInstance> {
    let mut candidates = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| Error::InstanceParse { line: n + 1, reason };
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let [id, value, alpha] = fields[..] else {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        };
        let id: usize = id.parse().map_err(|_| err(format!("bad id `{id}`")))?;
        let value: f64 = value
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| err(format!("bad value `{value}`")))?;
        let min_alpha = match alpha.to_ascii_lowercase().as_str() {
            "inf" | "none" | "-" | "infeasible" => None,
            s => {
                let a: f64 = s.parse().map_err(|_| err(format!("bad min_alpha `{alpha}`")))?;
                if !(a > 0.0 && a <= 1.0) {
                    return Err(err(format!("min_alpha {a} outside (0, 1]")));
                }
                Some(a)
            }
        };
        if candidates.iter().any(|c: &Candidate| c.id == id) {
            return Err(err(format!("duplicate id {id}")));
        }
        candidates.push(Candidate { id, value, min_alpha });
    }
    Ok(SchedulingInstance {
        candidates,
        min_selected,
    })
}

/// Greedy and exact decisions on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub greedy: ScheduleDecision,
    pub exact: ScheduleDecision,
    /// `greedy / exact` objective; 1 when the exact optimum is 0.
    pub ratio: f64,
}

pub fn compare_solvers(instance: &SchedulingInstance) -> Result<BenchReport> {
    let greedy = greedy_schedule(instance);
    let exact = exact_schedule(instance)?;
    let ratio = if exact.objective == 0.0 {
        1.0
    } else {
        greedy.objective / exact.objective
    };
    Ok(BenchReport { greedy, exact, ratio })
}
