//! Dense two-phase primal simplex.
//!
//! The tableau keeps one identity column per row (slack or artificial), so
//! the final basis inverse and hence the constraint duals can be read off
//! the reduced costs. Entering columns follow the largest-coefficient rule;
//! after a streak of degenerate pivots the engine switches to Bland's rule
//! until a pivot makes progress again.

use log::debug;

use crate::error::{LeakError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `minimize objective . v` subject to the constraints and per-variable
/// bounds `lo <= v <= hi` (default `[0, inf)`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<(f64, f64)>,
    /// Structural columns to pivot into the starting basis. Phase one is
    /// skipped when they form a feasible basis on their own.
    pub start_basis: Vec<usize>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        let bounds = vec![(0.0, f64::INFINITY); objective.len()];
        LinearProgram { objective, constraints: Vec::new(), bounds, start_basis: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint { coeffs, relation, rhs });
        self
    }

    /// Adds a constraint given as `(variable, coefficient)` pairs.
    pub fn add_sparse(&mut self, terms: &[(usize, f64)], relation: Relation, rhs: f64) -> &mut Self {
        let mut coeffs = vec![0.0; self.num_vars()];
        for &(j, a) in terms {
            coeffs[j] += a;
        }
        self.add(coeffs, relation, rhs)
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) -> &mut Self {
        self.bounds[var] = (lo, hi);
        self
    }

    pub fn set_start_basis(&mut self, columns: Vec<usize>) -> &mut Self {
        self.start_basis = columns;
        self
    }

    fn check_well_formed(&self) -> Result<()> {
        let v = self.num_vars();
        if self.bounds.len() != v {
            return Err(LeakError::Dimension(format!("{} bounds for {v} variables", self.bounds.len())));
        }
        if let Some(c) = self.objective.iter().find(|c| !c.is_finite()) {
            return Err(LeakError::Invalid(format!("objective coefficient {c}")));
        }
        for (k, con) in self.constraints.iter().enumerate() {
            if con.coeffs.len() != v {
                return Err(LeakError::Dimension(format!(
                    "constraint {k} has {} coefficients for {v} variables",
                    con.coeffs.len()
                )));
            }
            if !con.rhs.is_finite() || con.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(LeakError::Invalid(format!("constraint {k} has a non-finite entry")));
            }
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !lo.is_finite() || lo > hi || hi.is_nan() {
                return Err(LeakError::Invalid(format!("variable {j} has bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// The solution is a basic feasible solution (a polytope vertex).
    pub is_vertex: bool,
    /// One multiplier per constraint: the rate of change of the optimum
    /// with respect to that constraint's right-hand side.
    pub duals: Vec<f64>,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub pivot_tol: f64,
    pub feasibility_tol: f64,
    pub max_pivots: usize,
    pub degenerate_streak: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { pivot_tol: 1e-9, feasibility_tol: 1e-7, max_pivots: 200_000, degenerate_streak: 50 }
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    solve_with(lp, &SimplexOptions::default())
}

pub fn solve_with(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution> {
    Ok(solve_tableau(lp, opts)?.0)
}

/// Solves from scratch and hands back the final tableau when optimal.
fn solve_tableau(lp: &LinearProgram, opts: &SimplexOptions) -> Result<(LpSolution, Option<Tableau>)> {
    lp.check_well_formed()?;
    let mut tab = Tableau::build(lp);
    let mut pivots = 0;
    if !lp.start_basis.is_empty() && !tab.crash(&lp.start_basis, opts, &mut pivots) {
        tab = Tableau::build(lp);
    }

    if tab.has_basic_artificials() {
        tab.load_phase_one_costs();
        match tab.run(opts, &mut pivots)? {
            RunOutcome::Optimal => {}
            // phase one is bounded below by zero
            RunOutcome::Unbounded => return Err(LeakError::Internal("phase one reported unbounded".into())),
        }
        if tab.objective_value() > opts.feasibility_tol {
            return Ok((tab.terminal(lp, LpStatus::Infeasible, pivots), None));
        }
        tab.drive_out_artificials(opts, &mut pivots);
    }
    tab.bar_artificials();

    tab.load_costs(&tab.phase_two_costs.clone());
    match tab.run(opts, &mut pivots)? {
        RunOutcome::Optimal => Ok((tab.extract(lp, pivots), Some(tab))),
        RunOutcome::Unbounded => Ok((tab.terminal(lp, LpStatus::Unbounded, pivots), None)),
    }
}

/// Solves `lp` once for each right-hand side in `values` given to
/// constraint `row`. After the first optimum every solve restarts from the
/// previous optimal basis, which stays dual feasible when only a
/// right-hand side moves, and repairs primal feasibility with dual simplex
/// pivots. Falls back to a fresh solve whenever the warm start fails.
pub fn sweep_rhs<'a>(lp: &'a LinearProgram, row: usize, values: &'a [f64], opts: SimplexOptions) -> RhsSweep<'a> {
    RhsSweep { lp, row, values, opts, next: 0, warm: None }
}

pub struct RhsSweep<'a> {
    lp: &'a LinearProgram,
    row: usize,
    values: &'a [f64],
    opts: SimplexOptions,
    next: usize,
    /// optimal tableau and the rhs it was solved for
    warm: Option<(Tableau, f64)>,
}

impl RhsSweep<'_> {
    fn fresh(&mut self, value: f64) -> Result<LpSolution> {
        let mut lp = self.lp.clone();
        lp.constraints[self.row].rhs = value;
        let (sol, tab) = solve_tableau(&lp, &self.opts)?;
        self.warm = tab.map(|t| (t, value));
        Ok(sol)
    }

    fn resolve(&mut self, value: f64) -> Option<LpSolution> {
        let (mut tab, previous) = self.warm.take()?;
        let mut pivots = 0;
        tab.shift_rhs(self.row, value - previous);
        if !tab.dual_simplex(&self.opts, &mut pivots) {
            return None;
        }
        match tab.run(&self.opts, &mut pivots) {
            Ok(RunOutcome::Optimal) => {}
            _ => return None,
        }
        let sol = tab.extract(self.lp, pivots);
        self.warm = Some((tab, value));
        Some(sol)
    }
}

impl Iterator for RhsSweep<'_> {
    type Item = Result<LpSolution>;

    fn next(&mut self) -> Option<Self::Item> {
        let value = *self.values.get(self.next)?;
        self.next += 1;
        if self.row >= self.lp.constraints.len() {
            return Some(Err(LeakError::Dimension(format!("no constraint {}", self.row))));
        }
        match self.resolve(value) {
            Some(sol) => Some(Ok(sol)),
            None => {
                debug!("warm start failed at rhs {value}; solving from scratch");
                Some(self.fresh(value))
            }
        }
    }
}

/// Largest violation of any constraint or bound by `values`. Shares no code
/// with the pivoting engine.
pub fn max_violation(lp: &LinearProgram, values: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for con in &lp.constraints {
        let lhs: f64 = con.coeffs.iter().zip(values).map(|(a, v)| a * v).sum();
        let gap = match con.relation {
            Relation::Le => lhs - con.rhs,
            Relation::Ge => con.rhs - lhs,
            Relation::Eq => (lhs - con.rhs).abs(),
        };
        worst = worst.max(gap);
    }
    for (v, &(lo, hi)) in values.iter().zip(&lp.bounds) {
        worst = worst.max(lo - v).max(v - hi);
    }
    worst
}

enum RunOutcome {
    Optimal,
    Unbounded,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ColKind {
    Structural,
    Slack,
    Artificial,
}

struct Tableau {
    m: usize,
    /// number of columns excluding the rhs
    width: usize,
    /// row-major, `width + 1` entries per row, rhs last
    data: Vec<f64>,
    /// reduced costs, with `-objective` in the rhs slot
    reduced: Vec<f64>,
    basis: Vec<usize>,
    kinds: Vec<ColKind>,
    enterable: Vec<bool>,
    /// identity column of each row
    unit_col: Vec<usize>,
    /// tableau row and sign for each original constraint
    con_rows: Vec<(usize, f64)>,
    phase_two_costs: Vec<f64>,
    n_struct: usize,
}

/// Constraint terms, relation, right-hand side and original index.
type ShiftedRow = (Vec<(usize, f64)>, Relation, f64, usize);

impl Tableau {
    fn build(lp: &LinearProgram) -> Tableau {
        let n = lp.num_vars();
        let lo: Vec<f64> = lp.bounds.iter().map(|b| b.0).collect();

        // rows as (coeffs, relation, rhs) after shifting by lower bounds
        let mut rows: Vec<ShiftedRow> = Vec::new();
        for (k, con) in lp.constraints.iter().enumerate() {
            let shift: f64 = con.coeffs.iter().zip(&lo).map(|(a, l)| a * l).sum();
            let terms = con.coeffs.iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(j, a)| (j, *a)).collect();
            rows.push((terms, con.relation, con.rhs - shift, k));
        }
        for (j, &(l, h)) in lp.bounds.iter().enumerate() {
            if h.is_finite() {
                rows.push((vec![(j, 1.0)], Relation::Le, h - l, usize::MAX));
            }
        }

        let m = rows.len();
        let mut kinds = vec![ColKind::Structural; n];
        let mut sign = vec![1.0; m];
        for (i, row) in rows.iter_mut().enumerate() {
            if row.2 < 0.0 {
                sign[i] = -1.0;
                row.0.iter_mut().for_each(|t| t.1 = -t.1);
                row.2 = -row.2;
                row.1 = match row.1 {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
        }
        // column layout: structural, then per-row slack/surplus, then artificials
        let mut slack_col = vec![None; m];
        for (i, row) in rows.iter().enumerate() {
            if row.1 != Relation::Eq {
                slack_col[i] = Some(kinds.len());
                kinds.push(ColKind::Slack);
            }
        }
        let mut art_col = vec![None; m];
        for (i, row) in rows.iter().enumerate() {
            if row.1 != Relation::Le {
                art_col[i] = Some(kinds.len());
                kinds.push(ColKind::Artificial);
            }
        }
        let width = kinds.len();
        let stride = width + 1;
        let mut data = vec![0.0; m * stride];
        let mut basis = vec![0; m];
        let mut unit_col = vec![0; m];
        for (i, (terms, rel, rhs, _)) in rows.iter().enumerate() {
            let r = &mut data[i * stride..(i + 1) * stride];
            for &(j, a) in terms {
                r[j] += a;
            }
            r[width] = *rhs;
            match rel {
                Relation::Le => {
                    let s = slack_col[i].unwrap();
                    r[s] = 1.0;
                    basis[i] = s;
                    unit_col[i] = s;
                }
                Relation::Ge => {
                    r[slack_col[i].unwrap()] = -1.0;
                    let a = art_col[i].unwrap();
                    r[a] = 1.0;
                    basis[i] = a;
                    unit_col[i] = a;
                }
                Relation::Eq => {
                    let a = art_col[i].unwrap();
                    r[a] = 1.0;
                    basis[i] = a;
                    unit_col[i] = a;
                }
            }
        }
        let mut con_rows = vec![(0, 1.0); lp.constraints.len()];
        for (i, row) in rows.iter().enumerate() {
            if row.3 != usize::MAX {
                con_rows[row.3] = (i, sign[i]);
            }
        }
        let mut phase_two_costs = vec![0.0; width];
        phase_two_costs[..n].copy_from_slice(&lp.objective);

        Tableau {
            m,
            width,
            data,
            reduced: vec![0.0; stride],
            basis,
            enterable: vec![true; width],
            kinds,
            unit_col,
            con_rows,
            phase_two_costs,
            n_struct: n,
        }
    }

    fn stride(&self) -> usize {
        self.width + 1
    }

    fn row(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.data[i * s..(i + 1) * s]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.stride() + self.width]
    }

    fn objective_value(&self) -> f64 {
        -self.reduced[self.width]
    }

    fn load_phase_one_costs(&mut self) {
        let costs: Vec<f64> =
            self.kinds.iter().map(|k| if *k == ColKind::Artificial { 1.0 } else { 0.0 }).collect();
        self.load_costs(&costs);
    }

    /// Sets the reduced-cost row to `c - c_B B^-1 A` for the current basis.
    fn load_costs(&mut self, costs: &[f64]) {
        let stride = self.stride();
        let mut red = vec![0.0; stride];
        red[..self.width].copy_from_slice(costs);
        for i in 0..self.m {
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                let r = &self.data[i * stride..(i + 1) * stride];
                for (d, a) in red.iter_mut().zip(r) {
                    *d -= cb * a;
                }
            }
        }
        self.reduced = red;
    }

    fn bar_artificials(&mut self) {
        for (j, k) in self.kinds.iter().enumerate() {
            if *k == ColKind::Artificial {
                self.enterable[j] = false;
            }
        }
    }

    fn pivot(&mut self, r: usize, s: usize) {
        let stride = self.stride();
        let inv = 1.0 / self.data[r * stride + s];
        {
            let row = &mut self.data[r * stride..(r + 1) * stride];
            row.iter_mut().for_each(|v| *v *= inv);
            row[s] = 1.0;
        }
        let pivot_row: Vec<f64> = self.data[r * stride..(r + 1) * stride].to_vec();
        let nz: Vec<usize> = (0..stride).filter(|&j| pivot_row[j] != 0.0).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.data[i * stride + s];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.data[i * stride..(i + 1) * stride];
            for &j in &nz {
                row[j] -= f * pivot_row[j];
            }
            row[s] = 0.0;
        }
        let f = self.reduced[s];
        if f != 0.0 {
            for &j in &nz {
                self.reduced[j] -= f * pivot_row[j];
            }
            self.reduced[s] = 0.0;
        }
        self.basis[r] = s;
    }

    fn run(&mut self, opts: &SimplexOptions, pivots: &mut usize) -> Result<RunOutcome> {
        let tol = opts.pivot_tol;
        let stride = self.stride();
        let mut streak = 0usize;
        loop {
            let bland = streak >= opts.degenerate_streak;
            let mut enter = None;
            let mut best = -tol;
            for j in 0..self.width {
                if !self.enterable[j] {
                    continue;
                }
                let d = self.reduced[j];
                if d < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(s) = enter else {
                return Ok(RunOutcome::Optimal);
            };

            let mut leave: Option<(usize, f64, f64)> = None;
            for i in 0..self.m {
                let a = self.data[i * stride + s];
                if a <= tol {
                    continue;
                }
                let ratio = self.data[i * stride + self.width].max(0.0) / a;
                match leave {
                    None => leave = Some((i, ratio, a)),
                    Some((li, lr, la)) => {
                        let better = if ratio < lr - 1e-12 {
                            true
                        } else if ratio <= lr + 1e-12 {
                            if bland {
                                self.basis[i] < self.basis[li]
                            } else {
                                a > la
                            }
                        } else {
                            false
                        };
                        if better {
                            leave = Some((i, ratio, a));
                        }
                    }
                }
            }
            let Some((r, ratio, _)) = leave else {
                return Ok(RunOutcome::Unbounded);
            };
            if *pivots >= opts.max_pivots {
                return Err(LeakError::Stalled { pivots: *pivots });
            }
            self.pivot(r, s);
            *pivots += 1;
            if ratio <= 1e-12 {
                streak += 1;
            } else {
                streak = 0;
            }
        }
    }

    /// Pivots the given structural columns into rows held by artificials.
    /// Returns false if the resulting basic solution is infeasible.
    fn crash(&mut self, columns: &[usize], opts: &SimplexOptions, pivots: &mut usize) -> bool {
        let stride = self.stride();
        for &j in columns {
            if j >= self.n_struct || self.basis.contains(&j) {
                continue;
            }
            let mut row = None;
            let mut best = opts.pivot_tol;
            for i in 0..self.m {
                let a = self.data[i * stride + j].abs();
                if self.kinds[self.basis[i]] == ColKind::Artificial && a > best {
                    row = Some(i);
                    best = a;
                }
            }
            if let Some(i) = row {
                self.pivot(i, j);
                *pivots += 1;
            }
        }
        (0..self.m).all(|i| self.rhs(i) >= -opts.feasibility_tol)
    }

    /// Moves the right-hand side of original constraint `k` by `delta`,
    /// keeping the current basis.
    fn shift_rhs(&mut self, k: usize, delta: f64) {
        let (i, sign) = self.con_rows[k];
        let u = self.unit_col[i];
        let stride = self.stride();
        let step = sign * delta;
        for r in 0..self.m {
            let a = self.data[r * stride + u];
            if a != 0.0 {
                self.data[r * stride + self.width] += step * a;
            }
        }
        self.reduced[self.width] += step * self.reduced[u];
    }

    /// Dual simplex pivots from a dual feasible basis until every basic
    /// value is nonnegative. Returns false if the program turned infeasible,
    /// an artificial would have to carry value, or the pivot cap is hit.
    fn dual_simplex(&mut self, opts: &SimplexOptions, pivots: &mut usize) -> bool {
        let stride = self.stride();
        loop {
            let mut leave = None;
            let mut worst = -opts.feasibility_tol;
            for i in 0..self.m {
                let b = self.rhs(i);
                if b < worst {
                    leave = Some(i);
                    worst = b;
                }
            }
            let Some(r) = leave else {
                break;
            };
            if self.kinds[self.basis[r]] == ColKind::Artificial {
                return false;
            }
            let row = &self.data[r * stride..(r + 1) * stride];
            let mut enter: Option<(usize, f64, f64)> = None;
            for (j, &a) in row.iter().enumerate().take(self.width) {
                if !self.enterable[j] || a >= -opts.pivot_tol {
                    continue;
                }
                let ratio = self.reduced[j].max(0.0) / -a;
                let better = match enter {
                    None => true,
                    Some((_, br, ba)) => ratio < br - 1e-12 || (ratio <= br + 1e-12 && -a > ba),
                };
                if better {
                    enter = Some((j, ratio, -a));
                }
            }
            let Some((s, _, _)) = enter else {
                return false;
            };
            // a warm start that needs this many pivots is not worth keeping
            if *pivots >= opts.max_pivots.min(20 * self.m + 100) {
                return false;
            }
            self.pivot(r, s);
            *pivots += 1;
        }
        (0..self.m).all(|i| self.kinds[self.basis[i]] != ColKind::Artificial || self.rhs(i).abs() <= opts.feasibility_tol)
    }

    fn has_basic_artificials(&self) -> bool {
        self.basis.iter().any(|&j| self.kinds[j] == ColKind::Artificial)
    }

    /// After phase one, swaps zero-valued artificials out of the basis where
    /// a structural or slack column can replace them.
    fn drive_out_artificials(&mut self, opts: &SimplexOptions, pivots: &mut usize) {
        for i in 0..self.m {
            if self.kinds[self.basis[i]] != ColKind::Artificial {
                continue;
            }
            let row = self.row(i);
            let candidate = (0..self.width)
                .filter(|&j| self.kinds[j] != ColKind::Artificial)
                .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()));
            if let Some(j) = candidate {
                if row[j].abs() > opts.pivot_tol {
                    self.pivot(i, j);
                    *pivots += 1;
                }
            }
        }
    }

    fn primal_values(&self, lp: &LinearProgram) -> Vec<f64> {
        let mut values: Vec<f64> = lp.bounds.iter().map(|b| b.0).collect();
        for i in 0..self.m {
            let j = self.basis[i];
            if j < self.n_struct {
                values[j] += self.rhs(i).max(0.0);
            }
        }
        values
    }

    fn extract(&self, lp: &LinearProgram, pivots: usize) -> LpSolution {
        let values = self.primal_values(lp);
        let objective_value = lp.objective.iter().zip(&values).map(|(c, v)| c * v).sum();
        let duals = self
            .con_rows
            .iter()
            .map(|&(i, sign)| -self.reduced[self.unit_col[i]] * sign)
            .collect();
        LpSolution { status: LpStatus::Optimal, values, objective_value, is_vertex: true, duals, pivots }
    }

    fn terminal(&self, lp: &LinearProgram, status: LpStatus, pivots: usize) -> LpSolution {
        let objective_value = match status {
            LpStatus::Unbounded => f64::NEG_INFINITY,
            _ => f64::INFINITY,
        };
        LpSolution {
            status,
            values: self.primal_values(lp),
            objective_value,
            is_vertex: false,
            duals: vec![0.0; lp.constraints.len()],
            pivots,
        }
    }
}
