//! Greedy column selection for deterministic schemes.
//!
//! A set of output columns induces the deterministic scheme that sends
//! every input to its cheapest column in the set. Starting from the
//! cheapest feasible singleton `y0`, columns are added one at a time while
//! they strictly lower the induced cost. The negated cost is submodular in
//! the added set, which yields the usual `(1 - 1/k)^k` guarantee.

use rayon::prelude::*;

use crate::channel::{total_cost, Channel, ProtectionScheme};
use crate::error::{LeakError, Result};
use crate::metrics::exp_leak;
use crate::optimize::{Corner, CornerSolver};

/// Largest output alphabet `enumerate_optimal_subsets` accepts.
pub const ENUMERATION_LIMIT: usize = 20;

fn check_columns(channel: &Channel, set: &[usize]) -> Result<()> {
    if set.is_empty() {
        return Err(LeakError::Invalid("column set is empty".into()));
    }
    if let Some(&y) = set.iter().find(|&&y| y >= channel.n()) {
        return Err(LeakError::Dimension(format!("column {y} out of range for {} outputs", channel.n())));
    }
    Ok(())
}

/// Each input goes to its cheapest column in `set`, lowest index on ties.
/// Zero-probability rows with no finite column in `set` fall back to their
/// overall cheapest column.
pub fn induced_scheme(channel: &Channel, set: &[usize]) -> Result<ProtectionScheme> {
    check_columns(channel, set)?;
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let cost = channel.cost();
    let targets = (0..channel.m())
        .map(|x| {
            let mut best: Option<usize> = None;
            for &y in &sorted {
                if cost.is_finite(x, y) && best.is_none_or(|b| cost.get(x, y) < cost.get(x, b)) {
                    best = Some(y);
                }
            }
            match best {
                Some(y) => Ok(y),
                None if channel.px()[x] == 0.0 => Ok(channel.cheapest_column(x)),
                None => Err(LeakError::infeasible(format!("row {x} has no finite-cost column in {sorted:?}"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtectionScheme::deterministic(&targets, channel.n()))
}

/// Cost of sending every support row to column `y`, if all can reach it.
fn singleton_cost(channel: &Channel, y: usize) -> Option<f64> {
    let mut total = 0.0;
    for x in channel.support() {
        let c = channel.cost().get(x, y);
        if c.is_infinite() {
            return None;
        }
        total += channel.px()[x] * c;
    }
    Some(total)
}

/// Lowest-index column minimizing the cost of the single-column scheme.
pub fn find_y0(channel: &Channel) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for y in 0..channel.n() {
        if let Some(c) = singleton_cost(channel, y) {
            if best.is_none_or(|(_, b)| c < b) {
                best = Some((y, c));
            }
        }
    }
    best.map(|(y, _)| y).ok_or_else(|| LeakError::infeasible("no single column is reachable from every input"))
}

/// `f(A) = -cost(induced_scheme(A + {y0}))`.
pub fn set_objective(channel: &Channel, y0: usize, set: &[usize]) -> Result<f64> {
    let mut full = set.to_vec();
    full.push(y0);
    Ok(-total_cost(channel, &induced_scheme(channel, &full)?)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyStep {
    /// `None` for the starting singleton.
    pub added: Option<usize>,
    pub set_size: usize,
    pub objective: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyState {
    pub y0: usize,
    /// Added columns in the order they were chosen.
    pub selected: Vec<usize>,
    pub trace: Vec<GreedyStep>,
}

/// A point of the greedy curve. `leak` is the exp-leak the scheme actually
/// has, which can fall below `set_size` when a chosen column goes unused.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyPoint {
    pub leak: usize,
    pub set_size: usize,
    pub cost: f64,
    pub scheme: ProtectionScheme,
}

/// Runs the greedy selection until the set holds `l_max` columns or no
/// column strictly lowers the cost.
pub fn greedy_run(channel: &Channel, l_max: usize) -> Result<(GreedyState, Vec<GreedyPoint>)> {
    if l_max == 0 {
        return Err(LeakError::Invalid("l_max must be at least 1".into()));
    }
    let y0 = find_y0(channel)?;
    let support = channel.support();
    let px = channel.px();
    let cost = channel.cost();
    // current cheapest cost per support row
    let mut best: Vec<f64> = support.iter().map(|&x| cost.get(x, y0)).collect();
    let mut in_set = vec![false; channel.n()];
    in_set[y0] = true;
    let mut current: f64 = support.iter().zip(&best).map(|(&x, c)| px[x] * c).sum();

    let mut state = GreedyState { y0, selected: Vec::new(), trace: Vec::new() };
    let mut points = Vec::new();
    let mut record = |state: &mut GreedyState, added: Option<usize>, current: f64| -> Result<()> {
        let mut set = state.selected.clone();
        set.push(y0);
        let scheme = induced_scheme(channel, &set)?;
        let leak = exp_leak(px, &scheme)?.round() as usize;
        state.trace.push(GreedyStep { added, set_size: set.len(), objective: -current, cost: current });
        points.push(GreedyPoint { leak, set_size: set.len(), cost: current, scheme });
        Ok(())
    };
    record(&mut state, None, current)?;

    while state.selected.len() + 1 < l_max {
        let candidate = (0..channel.n())
            .into_par_iter()
            .filter(|&y| !in_set[y])
            .map(|y| {
                let total: f64 = support.iter().zip(&best).map(|(&x, &b)| px[x] * b.min(cost.get(x, y))).sum();
                (y, total)
            })
            .reduce_with(|a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a });
        let Some((y, total)) = candidate else { break };
        if total >= current - 1e-12 * current.abs().max(1.0) {
            break;
        }
        for (b, &x) in best.iter_mut().zip(&support) {
            *b = b.min(cost.get(x, y));
        }
        in_set[y] = true;
        state.selected.push(y);
        current = total;
        record(&mut state, Some(y), current)?;
    }
    Ok((state, points))
}

pub fn greedy_curve(channel: &Channel, l_max: usize) -> Result<Vec<GreedyPoint>> {
    greedy_run(channel, l_max).map(|(_, points)| points)
}

pub struct GreedyCorners;

impl CornerSolver for GreedyCorners {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn corners(&self, channel: &Channel, l_max: usize) -> Result<Vec<Corner>> {
        Ok(greedy_curve(channel, l_max)?
            .into_iter()
            .map(|p| Corner { leak: p.leak, cost: p.cost, scheme: p.scheme })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub leak: usize,
    pub greedy_cost: f64,
    pub optimal_cost: f64,
    pub singleton_cost: f64,
    /// `(greedy - optimal) / (singleton - optimal)`, zero when both vanish.
    pub ratio: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `((L - 2) / (L - 1))^(L - 1)`.
pub fn greedy_bound(leak: usize) -> f64 {
    let l = leak as f64;
    ((l - 2.0) / (l - 1.0)).powi(leak as i32 - 1)
}

/// Compares the greedy cost at `leak` columns with `optimal_cost`.
pub fn greedy_bound_check(channel: &Channel, leak: usize, optimal_cost: f64) -> Result<BoundReport> {
    if leak < 2 {
        return Err(LeakError::Invalid(format!("bound needs at least 2 columns, got {leak}")));
    }
    let points = greedy_curve(channel, leak)?;
    let greedy_cost = points.last().map(|p| p.cost).unwrap_or(f64::NAN);
    let singleton_cost = points[0].cost;
    let num = greedy_cost - optimal_cost;
    let den = singleton_cost - optimal_cost;
    let scale = 1e-9 * singleton_cost.abs().max(1.0);
    let ratio = if num <= scale {
        0.0
    } else if den <= scale {
        f64::INFINITY
    } else {
        num / den
    };
    let bound = greedy_bound(leak);
    let holds = ratio <= bound + 1e-9;
    Ok(BoundReport { leak, greedy_cost, optimal_cost, singleton_cost, ratio, bound, holds })
}

/// Exhaustive best set `A` (excluding `y0`) with `|A + {y0}| <= leak`.
/// Returns the induced cost and `A` in increasing column order.
pub fn enumerate_optimal_subsets(channel: &Channel, leak: usize) -> Result<(f64, Vec<usize>)> {
    if channel.n() > ENUMERATION_LIMIT {
        return Err(LeakError::Invalid(format!(
            "{} outputs exceed the enumeration limit of {ENUMERATION_LIMIT}; use the LP route",
            channel.n()
        )));
    }
    if leak == 0 {
        return Err(LeakError::Invalid("leak must be at least 1".into()));
    }
    let y0 = find_y0(channel)?;
    let others: Vec<usize> = (0..channel.n()).filter(|&y| y != y0).collect();
    let mut best = (-set_objective(channel, y0, &[])?, Vec::new());
    let k_max = (leak - 1).min(others.len());
    for mask in 1u32..(1u32 << others.len()) {
        if mask.count_ones() as usize > k_max {
            continue;
        }
        let set: Vec<usize> = (0..others.len()).filter(|&i| mask >> i & 1 == 1).map(|i| others[i]).collect();
        let cost = -set_objective(channel, y0, &set)?;
        if cost < best.0 || (cost == best.0 && (set.len(), &set) < (best.1.len(), &best.1)) {
            best = (cost, set);
        }
    }
    Ok(best)
}
