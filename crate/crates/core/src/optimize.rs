//! Cost-optimal protection under an exp-leak bound, its inverse, and the
//! full cost/leakage trade-off curve.
//!
//! Two LP formulations compute the same optimum. `cells` has one variable
//! per finite cell plus one per output column and one coupling row per
//! cell. `intervals` is only valid for staircase costs: there an optimal
//! column is a nondecreasing run ending at the last row that can reach it,
//! so each column is a sum of suffix-interval patterns and the coupling
//! rows disappear.

use log::{debug, warn};
use rayon::prelude::*;

use crate::channel::{total_cost, validate_scheme, Channel, Matrix, ProtectionScheme};
use crate::determinize::{decompose, determinize};
use crate::error::{LeakError, Result};
use crate::greedy::GreedyCorners;
use crate::metrics::{exp_leak, mutual_information};
use crate::simplex::{self, LinearProgram, LpStatus, Relation, SimplexOptions};

/// Slack allowed between a scheme's exp-leak and the bound it was solved for.
pub const LEAK_TOL: f64 = 1e-7;

/// Corner costs closer than this are treated as equal.
const CORNER_TIE: f64 = 1e-9;

/// Above this many finite support cells a staircase instance switches to
/// the `intervals` formulation.
const CELLS_LIMIT: usize = 600;

/// A point on the trade-off curve and a scheme achieving it.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffPoint {
    pub exp_leak_bound: f64,
    pub cost: f64,
    pub scheme: ProtectionScheme,
    /// Decrease in optimal cost per unit increase of the exp-leak bound.
    pub leak_price: f64,
}

/// Optimum of one of the two LPs before any post-processing.
#[derive(Debug, Clone)]
pub struct RelaxedSolution {
    pub scheme: ProtectionScheme,
    pub cost: f64,
    pub exp_leak: f64,
    /// Multiplier of the binding side constraint (leak bound or budget).
    pub dual: f64,
    pub pivots: usize,
}

/// An LP encoding of the leak-constrained cost minimization and of its
/// inverted form.
pub trait LpFormulation: Send + Sync {
    fn name(&self) -> &'static str;

    fn supports(&self, channel: &Channel) -> bool;

    /// Minimize total cost subject to exp-leak at most `bound`.
    fn min_cost(&self, channel: &Channel, bound: f64) -> Result<RelaxedSolution> {
        let mut out = self.min_cost_sweep(channel, &[bound])?;
        Ok(out.remove(0))
    }

    /// `min_cost` at each of `bounds` in order. Stops early after a solution
    /// that reaches the channel's minimum achievable cost.
    fn min_cost_sweep(&self, channel: &Channel, bounds: &[f64]) -> Result<Vec<RelaxedSolution>>;

    /// Minimize exp-leak subject to total cost at most `budget`
    /// (`budget` may be infinite).
    fn min_leak(&self, channel: &Channel, budget: f64) -> Result<RelaxedSolution>;
}

pub struct CellsFormulation;
pub struct IntervalsFormulation;

static FORMULATIONS: [&dyn LpFormulation; 2] = [&CellsFormulation, &IntervalsFormulation];

pub fn formulations() -> &'static [&'static dyn LpFormulation] {
    &FORMULATIONS
}

pub fn formulation(name: &str) -> Option<&'static dyn LpFormulation> {
    FORMULATIONS.iter().copied().find(|f| f.name() == name)
}

/// `cells` for small or non-staircase instances, `intervals` otherwise.
pub fn auto_formulation(channel: &Channel) -> &'static dyn LpFormulation {
    let cells: usize = channel
        .support()
        .iter()
        .map(|&x| channel.cost().row(x).iter().filter(|c| c.is_finite()).count())
        .sum();
    if cells > CELLS_LIMIT && IntervalsFormulation.supports(channel) {
        &IntervalsFormulation
    } else {
        &CellsFormulation
    }
}

fn check_bound(bound: f64) -> Result<()> {
    if bound.is_nan() || bound < 1.0 {
        return Err(LeakError::Invalid(format!("exp-leak bound {bound} is below 1")));
    }
    Ok(())
}

fn check_budget(channel: &Channel, budget: f64) -> Result<()> {
    if budget.is_nan() || budget < 0.0 {
        return Err(LeakError::Invalid(format!("budget {budget} is negative")));
    }
    let minimum = channel.min_achievable_cost();
    if budget < minimum - 1e-9 * minimum.max(1.0) {
        return Err(LeakError::Infeasible {
            reason: format!("budget {budget} is below the minimum achievable cost {minimum}"),
            minimum: Some(minimum),
        });
    }
    Ok(())
}

fn require_optimal(sol: &simplex::LpSolution, what: &str) -> Result<()> {
    match sol.status {
        LpStatus::Optimal => Ok(()),
        LpStatus::Infeasible => Err(LeakError::infeasible(format!("{what} LP has no feasible point"))),
        LpStatus::Unbounded => Err(LeakError::Unbounded),
    }
}

fn sweep_leak_bounds(
    channel: &Channel,
    lp: &LinearProgram,
    leak_row: usize,
    bounds: &[f64],
    rows: impl Fn(&[f64]) -> Matrix,
) -> Result<Vec<RelaxedSolution>> {
    let floor = channel.min_achievable_cost();
    let mut out = Vec::with_capacity(bounds.len());
    for sol in simplex::sweep_rhs(lp, leak_row, bounds, SimplexOptions::default()) {
        let sol = sol?;
        require_optimal(&sol, "leak-bounded")?;
        let relaxed = assemble(channel, rows(&sol.values), sol.duals[leak_row], sol.pivots)?;
        let done = relaxed.cost <= floor + CORNER_TIE * floor.max(1.0);
        out.push(relaxed);
        if done {
            break;
        }
    }
    Ok(out)
}

/// Turns raw LP row values into a scheme: drops round-off below zero,
/// renormalizes rows, and sends zero-probability rows to their cheapest
/// column.
fn assemble(channel: &Channel, mut rows: Matrix, dual: f64, pivots: usize) -> Result<RelaxedSolution> {
    for x in 0..channel.m() {
        if channel.px()[x] == 0.0 {
            let row = rows.row_mut(x);
            row.iter_mut().for_each(|v| *v = 0.0);
            row[channel.cheapest_column(x)] = 1.0;
            continue;
        }
        let row = rows.row_mut(x);
        row.iter_mut().for_each(|v| {
            if *v < 1e-12 {
                *v = 0.0
            }
        });
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(LeakError::Internal(format!("LP row {x} sums to {s}")));
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    let scheme = ProtectionScheme::from_matrix(rows);
    validate_scheme(channel, &scheme)?;
    let cost = total_cost(channel, &scheme)?;
    let exp_leak = exp_leak(channel.px(), &scheme)?;
    Ok(RelaxedSolution { scheme, cost, exp_leak, dual, pivots })
}

impl LpFormulation for CellsFormulation {
    fn name(&self) -> &'static str {
        "cells"
    }

    fn supports(&self, _channel: &Channel) -> bool {
        true
    }

    fn min_cost_sweep(&self, channel: &Channel, bounds: &[f64]) -> Result<Vec<RelaxedSolution>> {
        bounds.iter().try_for_each(|&b| check_bound(b))?;
        let layout = CellLayout::new(channel);
        let mut objective = vec![0.0; layout.vars];
        for &(x, y, v) in &layout.cells {
            objective[v] = channel.px()[x] * channel.cost().get(x, y);
        }
        let mut lp = LinearProgram::new(objective);
        layout.add_row_sums(&mut lp);
        let leak_row = lp.constraints.len();
        let q_terms: Vec<(usize, f64)> = (0..channel.n()).map(|y| (layout.q0 + y, 1.0)).collect();
        lp.add_sparse(&q_terms, Relation::Le, bounds.first().copied().unwrap_or(1.0));
        layout.add_coupling(&mut lp);
        sweep_leak_bounds(channel, &lp, leak_row, bounds, |v| layout.scheme_rows(channel, v))
    }

    fn min_leak(&self, channel: &Channel, budget: f64) -> Result<RelaxedSolution> {
        check_budget(channel, budget)?;
        let layout = CellLayout::new(channel);
        let mut objective = vec![0.0; layout.vars];
        objective[layout.q0..].iter_mut().for_each(|c| *c = 1.0);
        let mut lp = LinearProgram::new(objective);
        layout.add_row_sums(&mut lp);
        let budget_row = lp.constraints.len();
        if budget.is_finite() {
            let terms: Vec<(usize, f64)> = layout
                .cells
                .iter()
                .map(|&(x, y, v)| (v, channel.px()[x] * channel.cost().get(x, y)))
                .collect();
            lp.add_sparse(&terms, Relation::Le, budget);
        }
        layout.add_coupling(&mut lp);
        let sol = simplex::solve(&lp)?;
        require_optimal(&sol, "budget-bounded")?;
        let dual = if budget.is_finite() { sol.duals[budget_row] } else { 0.0 };
        assemble(channel, layout.scheme_rows(channel, &sol.values), dual, sol.pivots)
    }
}

struct CellLayout {
    /// (row, column, variable) for every finite cell of a support row
    cells: Vec<(usize, usize, usize)>,
    q0: usize,
    vars: usize,
}

impl CellLayout {
    fn new(channel: &Channel) -> Self {
        let mut cells = Vec::new();
        for x in channel.support() {
            for y in 0..channel.n() {
                if channel.cost().is_finite(x, y) {
                    cells.push((x, y, cells.len()));
                }
            }
        }
        let q0 = cells.len();
        CellLayout { cells, q0, vars: q0 + channel.n() }
    }

    fn add_row_sums(&self, lp: &mut LinearProgram) {
        let mut start = 0;
        while start < self.cells.len() {
            let x = self.cells[start].0;
            let end = start + self.cells[start..].iter().take_while(|c| c.0 == x).count();
            let terms: Vec<(usize, f64)> = self.cells[start..end].iter().map(|c| (c.2, 1.0)).collect();
            lp.add_sparse(&terms, Relation::Eq, 1.0);
            start = end;
        }
    }

    fn add_coupling(&self, lp: &mut LinearProgram) {
        for &(_, y, v) in &self.cells {
            lp.add_sparse(&[(v, 1.0), (self.q0 + y, -1.0)], Relation::Le, 0.0);
        }
    }

    fn scheme_rows(&self, channel: &Channel, values: &[f64]) -> Matrix {
        let mut rows = Matrix::zeros(channel.m(), channel.n());
        for &(x, y, v) in &self.cells {
            rows[(x, y)] = values[v];
        }
        rows
    }
}

impl LpFormulation for IntervalsFormulation {
    fn name(&self) -> &'static str {
        "intervals"
    }

    fn supports(&self, channel: &Channel) -> bool {
        channel.is_staircase()
    }

    fn min_cost_sweep(&self, channel: &Channel, bounds: &[f64]) -> Result<Vec<RelaxedSolution>> {
        bounds.iter().try_for_each(|&b| check_bound(b))?;
        let layout = IntervalLayout::new(channel)?;
        let mut lp = LinearProgram::new(layout.costs.clone());
        layout.add_row_sums(&mut lp);
        let leak_row = lp.constraints.len();
        lp.add(vec![1.0; layout.patterns.len()], Relation::Le, bounds.first().copied().unwrap_or(1.0));
        lp.set_start_basis(layout.single_column_basis());
        sweep_leak_bounds(channel, &lp, leak_row, bounds, |v| layout.scheme_rows(channel, v))
    }

    fn min_leak(&self, channel: &Channel, budget: f64) -> Result<RelaxedSolution> {
        check_budget(channel, budget)?;
        let layout = IntervalLayout::new(channel)?;
        let mut lp = LinearProgram::new(vec![1.0; layout.patterns.len()]);
        layout.add_row_sums(&mut lp);
        let budget_row = lp.constraints.len();
        if budget.is_finite() {
            lp.add(layout.costs.clone(), Relation::Le, budget);
        }
        lp.set_start_basis(layout.single_column_basis());
        let sol = simplex::solve(&lp)?;
        require_optimal(&sol, "budget-bounded")?;
        let dual = if budget.is_finite() { sol.duals[budget_row] } else { 0.0 };
        assemble(channel, layout.scheme_rows(channel, &sol.values), dual, sol.pivots)
    }
}

struct IntervalLayout {
    support: Vec<usize>,
    /// (column, first support position, last support position)
    patterns: Vec<(usize, usize, usize)>,
    costs: Vec<f64>,
}

impl IntervalLayout {
    fn new(channel: &Channel) -> Result<Self> {
        if !channel.is_staircase() {
            return Err(LeakError::NotStaircase);
        }
        let support = channel.support();
        let px = channel.px();
        let cost = channel.cost();
        let mut patterns = Vec::new();
        let mut costs = Vec::new();
        for y in 0..channel.n() {
            // support rows that reach y form a prefix
            let reach = support.iter().take_while(|&&x| cost.is_finite(x, y)).count();
            if reach == 0 {
                continue;
            }
            let last = reach - 1;
            let mut tail = 0.0;
            let mut tails = vec![0.0; reach];
            for i in (0..reach).rev() {
                let x = support[i];
                tail += px[x] * cost.get(x, y);
                tails[i] = tail;
            }
            for (a, t) in tails.into_iter().enumerate() {
                patterns.push((y, a, last));
                costs.push(t);
            }
        }
        Ok(IntervalLayout { support, patterns, costs })
    }

    fn add_row_sums(&self, lp: &mut LinearProgram) {
        let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.support.len()];
        for (v, &(_, a, last)) in self.patterns.iter().enumerate() {
            for terms in &mut by_row[a..=last] {
                terms.push((v, 1.0));
            }
        }
        for terms in by_row {
            lp.add_sparse(&terms, Relation::Eq, 1.0);
        }
    }

    /// Intervals of the cheapest column every support row can reach, longest
    /// last. Together they form a triangular basis whose solution sends all
    /// rows to that column.
    fn single_column_basis(&self) -> Vec<usize> {
        let full = self.support.len() - 1;
        let whole = self
            .patterns
            .iter()
            .enumerate()
            .filter(|(_, &(_, a, last))| a == 0 && last == full)
            .min_by(|(i, _), (j, _)| self.costs[*i].total_cmp(&self.costs[*j]));
        let Some((_, &(y, _, _))) = whole else {
            return Vec::new();
        };
        let mut basis: Vec<usize> =
            (0..self.patterns.len()).filter(|&v| self.patterns[v].0 == y).collect();
        basis.reverse();
        basis
    }

    fn scheme_rows(&self, channel: &Channel, values: &[f64]) -> Matrix {
        let mut rows = Matrix::zeros(channel.m(), channel.n());
        for (v, &(y, a, last)) in self.patterns.iter().enumerate() {
            if values[v] == 0.0 {
                continue;
            }
            for &x in &self.support[a..=last] {
                rows[(x, y)] += values[v];
            }
        }
        rows
    }
}

/// Cheapest scheme with exp-leak at most `bound`.
pub fn min_cost_for_leak(channel: &Channel, bound: f64) -> Result<TradeoffPoint> {
    min_cost_for_leak_with(channel, bound, auto_formulation(channel))
}

pub fn min_cost_for_leak_with(
    channel: &Channel,
    bound: f64,
    formulation: &dyn LpFormulation,
) -> Result<TradeoffPoint> {
    let sol = formulation.min_cost(channel, bound)?;
    if sol.exp_leak > bound + LEAK_TOL {
        return Err(LeakError::Internal(format!("LP scheme leaks {} over bound {bound}", sol.exp_leak)));
    }
    Ok(TradeoffPoint { exp_leak_bound: bound, cost: sol.cost, scheme: sol.scheme, leak_price: (-sol.dual).max(0.0) })
}

/// Least-leaking scheme whose total cost stays within `budget`.
pub fn min_leak_for_cost(channel: &Channel, budget: f64) -> Result<TradeoffPoint> {
    min_leak_for_cost_with(channel, budget, auto_formulation(channel))
}

pub fn min_leak_for_cost_with(
    channel: &Channel,
    budget: f64,
    formulation: &dyn LpFormulation,
) -> Result<TradeoffPoint> {
    let sol = formulation.min_leak(channel, budget)?;
    if budget.is_finite() && sol.cost > budget + LEAK_TOL * budget.max(1.0) {
        return Err(LeakError::Internal(format!("LP scheme costs {} over budget {budget}", sol.cost)));
    }
    // the budget dual is d(leak)/d(budget); its reciprocal prices leakage in cost
    let leak_price = if sol.dual < -1e-12 { -1.0 / sol.dual } else { f64::INFINITY };
    Ok(TradeoffPoint { exp_leak_bound: sol.exp_leak, cost: sol.cost, scheme: sol.scheme, leak_price })
}

/// A deterministic scheme at an integer exp-leak.
#[derive(Debug, Clone, PartialEq)]
pub struct Corner {
    pub leak: usize,
    pub cost: f64,
    pub scheme: ProtectionScheme,
}

/// Convex combination `lambda * p1 + (1 - lambda) * p2` of two deterministic schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub lambda: f64,
    pub p1: ProtectionScheme,
    pub p2: ProtectionScheme,
}

impl Mixture {
    pub fn blend(&self) -> Result<ProtectionScheme> {
        self.p1.blend(&self.p2, self.lambda)
    }

    pub fn is_pure(&self) -> bool {
        self.lambda == 1.0 || self.lambda == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    corners: Vec<Corner>,
    hull: Vec<TradeoffPoint>,
}

impl TradeoffCurve {
    /// Builds the curve from deterministic points. Points dominated by a
    /// smaller exp-leak are dropped; the hull is their lower convex envelope.
    pub fn from_corners(mut corners: Vec<Corner>) -> Result<Self> {
        if corners.is_empty() {
            return Err(LeakError::Invalid("no corners".into()));
        }
        corners.sort_by(|a, b| a.leak.cmp(&b.leak).then(a.cost.total_cmp(&b.cost)));
        let mut kept: Vec<Corner> = Vec::new();
        for c in corners {
            match kept.last() {
                Some(prev) if c.cost >= prev.cost - CORNER_TIE => {}
                _ => kept.push(c),
            }
        }

        let mut idx: Vec<usize> = Vec::new();
        for i in 0..kept.len() {
            while idx.len() >= 2 {
                let (o, a) = (&kept[idx[idx.len() - 2]], &kept[idx[idx.len() - 1]]);
                let b = &kept[i];
                let cross = (a.leak as f64 - o.leak as f64) * (b.cost - o.cost)
                    - (a.cost - o.cost) * (b.leak as f64 - o.leak as f64);
                if cross <= CORNER_TIE {
                    idx.pop();
                } else {
                    break;
                }
            }
            idx.push(i);
        }
        let slope = |i: usize, j: usize| (kept[i].cost - kept[j].cost) / (kept[j].leak as f64 - kept[i].leak as f64);
        let hull = (0..idx.len())
            .map(|k| {
                let left = if k > 0 { Some(slope(idx[k - 1], idx[k])) } else { None };
                let right = if k + 1 < idx.len() { slope(idx[k], idx[k + 1]) } else { 0.0 };
                let c = &kept[idx[k]];
                TradeoffPoint {
                    exp_leak_bound: c.leak as f64,
                    cost: c.cost,
                    scheme: c.scheme.clone(),
                    leak_price: left.map_or(right, |l| 0.5 * (l + right)),
                }
            })
            .collect();
        Ok(TradeoffCurve { corners: kept, hull })
    }

    pub fn corners(&self) -> &[Corner] {
        &self.corners
    }

    pub fn hull(&self) -> &[TradeoffPoint] {
        &self.hull
    }

    /// Hull segment containing `bound`: indices of its two ends, or one
    /// index twice when `bound` sits on a vertex or past the last one.
    fn segment(&self, bound: f64) -> Result<(usize, usize)> {
        if bound.is_nan() || bound < self.hull[0].exp_leak_bound {
            return Err(LeakError::Invalid(format!(
                "exp-leak {bound} is below the curve's start {}",
                self.hull[0].exp_leak_bound
            )));
        }
        for (k, p) in self.hull.iter().enumerate() {
            if bound == p.exp_leak_bound {
                return Ok((k, k));
            }
            if bound < p.exp_leak_bound {
                return Ok((k - 1, k));
            }
        }
        let last = self.hull.len() - 1;
        Ok((last, last))
    }

    pub fn cost_at(&self, bound: f64) -> Result<f64> {
        let (i, j) = self.segment(bound)?;
        let (a, b) = (&self.hull[i], &self.hull[j]);
        if i == j {
            return Ok(a.cost);
        }
        let t = (bound - a.exp_leak_bound) / (b.exp_leak_bound - a.exp_leak_bound);
        Ok(a.cost + t * (b.cost - a.cost))
    }

    /// The two adjacent hull schemes and the weight on the lower-leak one
    /// that together meet `bound` at the curve's cost.
    pub fn mixture_at(&self, bound: f64) -> Result<Mixture> {
        let (i, j) = self.segment(bound)?;
        let (a, b) = (&self.hull[i], &self.hull[j]);
        if i == j {
            return Ok(Mixture { lambda: 1.0, p1: a.scheme.clone(), p2: a.scheme.clone() });
        }
        let lambda = (b.exp_leak_bound - bound) / (b.exp_leak_bound - a.exp_leak_bound);
        Ok(Mixture { lambda, p1: a.scheme.clone(), p2: b.scheme.clone() })
    }
}

/// Produces the deterministic points a curve is assembled from.
pub trait CornerSolver: Send + Sync {
    fn name(&self) -> &'static str;

    fn corners(&self, channel: &Channel, l_max: usize) -> Result<Vec<Corner>>;
}

pub struct LpCorners;

impl CornerSolver for LpCorners {
    fn name(&self) -> &'static str {
        "lp"
    }

    fn corners(&self, channel: &Channel, l_max: usize) -> Result<Vec<Corner>> {
        deterministic_corners(channel, l_max)
    }
}

static CURVE_METHODS: [&dyn CornerSolver; 2] = [&LpCorners, &GreedyCorners];

pub fn curve_methods() -> &'static [&'static dyn CornerSolver] {
    &CURVE_METHODS
}

pub fn curve_method(name: &str) -> Option<&'static dyn CornerSolver> {
    CURVE_METHODS.iter().copied().find(|m| m.name() == name)
}

/// Optimal deterministic schemes at the integer exp-leaks `1..=l_max`,
/// dominated ones removed.
///
/// Every bound is solved as an LP first. The slopes between neighbouring
/// optima give each bound a leak price strictly inside its subgradient
/// range wherever the curve bends, which is what lets determinization
/// stay at that bound instead of sliding along an adjacent segment.
pub fn deterministic_corners(channel: &Channel, l_max: usize) -> Result<Vec<Corner>> {
    if l_max == 0 {
        return Err(LeakError::Invalid("l_max must be at least 1".into()));
    }
    if !channel.is_staircase() {
        warn!("cost matrix is not staircase nondecreasing; corners need determinization");
        return Err(LeakError::NotStaircase);
    }
    let formulation = auto_formulation(channel);
    let n = channel.n();
    let top = (l_max + 1).min(n);
    // each worker sweeps a contiguous run of bounds, warm-starting along it
    let bounds: Vec<f64> = (1..=top).map(|l| l as f64).collect();
    let chunk = top.div_ceil(rayon::current_num_threads().max(1));
    let runs: Vec<Vec<RelaxedSolution>> =
        bounds.par_chunks(chunk).map(|run| formulation.min_cost_sweep(channel, run)).collect::<Result<_>>()?;
    let mut solved: Vec<RelaxedSolution> = Vec::new();
    for (run, bounds) in runs.into_iter().zip(bounds.chunks(chunk)) {
        let stopped = run.len() < bounds.len();
        solved.extend(run);
        if stopped {
            break;
        }
    }
    debug!(
        "{} relaxed corner solves with {} ({} pivots)",
        solved.len(),
        formulation.name(),
        solved.iter().map(|s| s.pivots).sum::<usize>()
    );

    let values: Vec<f64> = solved.iter().map(|s| s.cost).collect();
    let last = l_max.min(values.len());
    let corners: Vec<Corner> = (0..last)
        .into_par_iter()
        .map(|k| {
            let right = if k + 1 < values.len() { values[k] - values[k + 1] } else { 0.0 };
            let left = if k > 0 { values[k - 1] - values[k] } else { right };
            let alpha = (0.5 * (left + right)).max(0.0);
            let scheme = determinize(channel, &solved[k].scheme, alpha)?;
            let leak = exp_leak(channel.px(), &scheme)?;
            let cost = total_cost(channel, &scheme)?;
            Ok(Corner { leak: leak.round() as usize, cost, scheme })
        })
        .collect::<Result<_>>()?;

    Ok(TradeoffCurve::from_corners(corners)?.corners)
}

/// Writes an optimal scheme as a blend of two deterministic schemes with
/// the same exp-leak and cost. The leak price comes from the LP at the
/// scheme's own exp-leak, so any optimum at that bound is accepted.
pub fn decompose_optimum(channel: &Channel, scheme: &ProtectionScheme) -> Result<Mixture> {
    let leak = exp_leak(channel.px(), scheme)?;
    let alpha = min_cost_for_leak(channel, leak.max(1.0))?.leak_price;
    decompose(channel, scheme, alpha)
}

/// The LP trade-off curve over every exp-leak from 1 to N.
pub fn build_curve(channel: &Channel) -> Result<TradeoffCurve> {
    build_curve_with(channel, &LpCorners)
}

pub fn build_curve_with(channel: &Channel, method: &dyn CornerSolver) -> Result<TradeoffCurve> {
    if !channel.is_staircase() {
        return Err(LeakError::NotStaircase);
    }
    TradeoffCurve::from_corners(method.corners(channel, channel.n())?)
}

#[derive(Debug, Clone)]
pub struct MiSolution {
    pub scheme: ProtectionScheme,
    pub mi_bits: f64,
    /// Final conditional-gradient duality gap, in bits.
    pub gap: f64,
    pub iterations: usize,
    /// False when `max_iters` ran out before the gap fell below `tol`.
    pub converged: bool,
}

/// Minimizes mutual information over schemes with total cost at most
/// `budget` by conditional gradient. Each step's direction comes from an
/// LP over the same polytope; step length from a golden-section search.
pub fn mi_optimal_scheme(channel: &Channel, budget: f64, tol: f64, max_iters: usize) -> Result<MiSolution> {
    check_budget(channel, budget)?;
    let (m, n) = (channel.m(), channel.n());
    let px = channel.px();
    let layout = CellLayout::new(channel);

    let mut p = Matrix::zeros(m, n);
    for x in 0..m {
        p[(x, channel.cheapest_column(x))] = 1.0;
    }
    let mut mi = mi_of(channel, &p);
    let mut gap = f64::INFINITY;
    let mut iterations = 0;

    while iterations < max_iters {
        let grad = mi_gradient(channel, &p);
        let mut lp = LinearProgram::new(layout.cells.iter().map(|&(x, y, _)| grad[(x, y)]).collect());
        layout.add_row_sums(&mut lp);
        if budget.is_finite() {
            let terms: Vec<(usize, f64)> =
                layout.cells.iter().map(|&(x, y, v)| (v, px[x] * channel.cost().get(x, y))).collect();
            lp.add_sparse(&terms, Relation::Le, budget);
        }
        let sol = simplex::solve(&lp)?;
        require_optimal(&sol, "direction")?;
        let mut dir = Matrix::zeros(m, n);
        for &(x, y, v) in &layout.cells {
            dir[(x, y)] = sol.values[v].max(0.0) - p[(x, y)];
        }
        for x in (0..m).filter(|&x| px[x] == 0.0) {
            dir.row_mut(x).iter_mut().for_each(|d| *d = 0.0);
        }
        gap = -dir.as_slice().iter().zip(grad.as_slice()).map(|(d, g)| d * g).sum::<f64>();
        iterations += 1;
        if gap <= tol {
            break;
        }
        let along = |t: f64| {
            let mut q = p.clone();
            q.as_mut_slice().iter_mut().zip(dir.as_slice()).for_each(|(a, d)| *a = (*a + t * d).max(0.0));
            q
        };
        let t = golden_section(|t| mi_of(channel, &along(t)), 0.0, 1.0, 60);
        let candidate = along(t);
        let value = mi_of(channel, &candidate);
        if value <= mi {
            p = candidate;
            mi = value;
        }
    }

    let converged = gap <= tol;
    if !converged {
        warn!("MI minimization stopped after {iterations} iterations with gap {gap}");
    }
    let scheme = ProtectionScheme::from_matrix(p);
    Ok(MiSolution { mi_bits: mutual_information(px, &scheme)?, scheme, gap, iterations, converged })
}

fn mi_of(channel: &Channel, p: &Matrix) -> f64 {
    let px = channel.px();
    let n = p.cols();
    let mut py = vec![0.0; n];
    for x in 0..p.rows() {
        for y in 0..n {
            py[y] += px[x] * p[(x, y)];
        }
    }
    let mut total = 0.0;
    for x in 0..p.rows() {
        if px[x] == 0.0 {
            continue;
        }
        for y in 0..n {
            let w = p[(x, y)];
            if w > 0.0 && py[y] > 0.0 {
                total += px[x] * w * (w / py[y]).log2();
            }
        }
    }
    total
}

/// `dI/dp_xy = p(x) log2(p_xy / p(y))`, with zero entries clipped.
fn mi_gradient(channel: &Channel, p: &Matrix) -> Matrix {
    let px = channel.px();
    let (m, n) = (p.rows(), p.cols());
    let mut py = vec![0.0; n];
    for x in 0..m {
        for y in 0..n {
            py[y] += px[x] * p[(x, y)];
        }
    }
    let mut g = Matrix::zeros(m, n);
    for x in 0..m {
        if px[x] == 0.0 {
            continue;
        }
        for y in 0..n {
            let ratio = if py[y] > 0.0 { p[(x, y)].max(1e-30) / py[y] } else { 1.0 / px[x] };
            g[(x, y)] = px[x] * ratio.log2();
        }
    }
    g
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    // the endpoints are not sampled by the bracket
    let mid = 0.5 * (a + b);
    [(0.0, f(0.0)), (1.0, f(1.0)), (mid, f(mid))]
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(t, _)| t)
        .unwrap_or(mid)
}
