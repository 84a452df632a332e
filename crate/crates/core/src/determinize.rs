//! Conversion of an optimizing stochastic scheme into a deterministic one
//! with the same value of cost + alpha * exp-leak.
//!
//! The loop water-fills the scheme, builds a +-1 direction `Q` that keeps
//! it water-filled, and steps along `Q` until some entry or column becomes
//! integral or some hanging entry drops out. Each step removes at least
//! one unit of randomness (fractional columns plus hanging entries).
//!
//! Rows with zero input probability are inert throughout: they take no
//! part in column maxima and are parked on their cheapest column.

use log::trace;

use crate::channel::{total_cost, validate_scheme, Channel, Matrix, ProtectionScheme, ENTRY_TOL};
use crate::error::{LeakError, Result};
use crate::metrics::{column_maxima, exp_leak};
use crate::optimize::Mixture;

/// Allowed relative change in cost + alpha * exp-leak across the loop.
pub const OBJECTIVE_TOL: f64 = 1e-7;

/// Largest leftover row mass water-filling may fold into the row's last entry.
const FILL_SLACK: f64 = 1e-7;

const SNAP: f64 = 1e-12;

/// `Q`: entries in {-1, 0, +1}, every row summing to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMatrix {
    entries: Vec<i8>,
    rows: usize,
    cols: usize,
}

impl DirectionMatrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        DirectionMatrix { entries: vec![0; rows * cols], rows, cols }
    }

    pub fn get(&self, x: usize, y: usize) -> i8 {
        self.entries[x * self.cols + y]
    }

    fn set(&mut self, x: usize, y: usize, v: i8) {
        self.entries[x * self.cols + y] = v;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_sum(&self, x: usize) -> i32 {
        self.entries[x * self.cols..(x + 1) * self.cols].iter().map(|&v| v as i32).sum()
    }

    pub fn nonzeros(&self) -> usize {
        self.entries.iter().filter(|&&v| v != 0).count()
    }

    pub fn to_rows(&self) -> Vec<Vec<i8>> {
        self.entries.chunks(self.cols).map(|r| r.to_vec()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryClassification {
    pub fractional: Vec<Vec<bool>>,
    pub maxed_out: Vec<Vec<bool>>,
    pub hanging: Vec<Vec<bool>>,
    pub fractional_columns: Vec<usize>,
    pub column_max: Vec<f64>,
}

impl EntryClassification {
    pub fn hanging_count(&self) -> usize {
        self.hanging.iter().flatten().filter(|&&h| h).count()
    }

    pub fn randomness(&self) -> usize {
        self.fractional_columns.len() + self.hanging_count()
    }

    fn row_hanging(&self, x: usize) -> Option<usize> {
        self.hanging[x].iter().position(|&h| h)
    }
}

fn is_fractional(v: f64) -> bool {
    v > ENTRY_TOL && v < 1.0 - ENTRY_TOL
}

/// Classifies every entry, treating all rows as support.
pub fn classify(scheme: &ProtectionScheme) -> EntryClassification {
    classify_rows(scheme, &(0..scheme.rows()).collect::<Vec<_>>())
}

/// Classifies the entries of `rows`; column maxima range over `rows` only
/// and other rows are left unmarked. Zero entries are neither maxed out
/// nor hanging.
pub fn classify_rows(scheme: &ProtectionScheme, rows: &[usize]) -> EntryClassification {
    let (m, n) = (scheme.rows(), scheme.cols());
    let column_max = column_maxima(scheme, rows);
    let mut fractional = vec![vec![false; n]; m];
    let mut maxed_out = vec![vec![false; n]; m];
    let mut hanging = vec![vec![false; n]; m];
    for &x in rows {
        for y in 0..n {
            let v = scheme.get(x, y);
            fractional[x][y] = is_fractional(v);
            if v > ENTRY_TOL {
                if (v - column_max[y]).abs() <= ENTRY_TOL {
                    maxed_out[x][y] = true;
                } else {
                    hanging[x][y] = true;
                }
            }
        }
    }
    let fractional_columns = (0..n).filter(|&y| is_fractional(column_max[y])).collect();
    EntryClassification { fractional, maxed_out, hanging, fractional_columns, column_max }
}

/// Number of fractional columns plus number of hanging entries.
pub fn randomness(scheme: &ProtectionScheme) -> usize {
    classify(scheme).randomness()
}

fn require_staircase(channel: &Channel) -> Result<()> {
    if channel.is_staircase() {
        Ok(())
    } else {
        Err(LeakError::NotStaircase)
    }
}

/// Rebuilds every support row left to right under the input's column
/// maxima. Zero-probability rows are copied unchanged.
pub fn water_fill(channel: &Channel, scheme: &ProtectionScheme) -> Result<ProtectionScheme> {
    require_staircase(channel)?;
    validate_scheme(channel, scheme)?;
    let support = channel.support();
    let caps: Vec<f64> = column_maxima(scheme, &support)
        .into_iter()
        .map(|c| {
            if c < ENTRY_TOL {
                0.0
            } else if c > 1.0 - ENTRY_TOL {
                1.0
            } else {
                c
            }
        })
        .collect();
    let mut out = scheme.matrix().clone();
    for &x in &support {
        let row = out.row_mut(x);
        row.iter_mut().for_each(|v| *v = 0.0);
        let mut remaining = 1.0;
        let mut last = None;
        for (y, cap) in caps.iter().enumerate() {
            if remaining <= ENTRY_TOL {
                break;
            }
            if !channel.cost().is_finite(x, y) || *cap == 0.0 {
                continue;
            }
            let v = cap.min(remaining);
            row[y] = v;
            remaining -= v;
            last = Some(y);
        }
        match last {
            Some(y) if remaining <= FILL_SLACK => row[y] += remaining,
            _ => {
                return Err(LeakError::Internal(format!(
                    "row {x} cannot absorb its mass under the column maxima ({remaining} left)"
                )))
            }
        }
    }
    Ok(ProtectionScheme::from_matrix(out))
}

fn is_water_filled(channel: &Channel, scheme: &ProtectionScheme) -> Result<bool> {
    let filled = water_fill(channel, scheme)?;
    Ok(filled.matrix().as_slice().iter().zip(scheme.matrix().as_slice()).all(|(a, b)| (a - b).abs() <= ENTRY_TOL))
}

/// Builds the perturbation direction for a water-filled scheme with at
/// least one fractional entry.
pub fn generate_q(channel: &Channel, scheme: &ProtectionScheme) -> Result<DirectionMatrix> {
    if !is_water_filled(channel, scheme)? {
        return Err(LeakError::Invalid("scheme is not water-filled".into()));
    }
    let support = channel.support();
    let cls = classify_rows(scheme, &support);
    build_q(&cls, &support, scheme.rows(), scheme.cols())
}

fn build_q(cls: &EntryClassification, support: &[usize], m: usize, n: usize) -> Result<DirectionMatrix> {
    let Some(&first) = cls.fractional_columns.first() else {
        return Err(LeakError::Invalid("scheme has no fractional column".into()));
    };
    let mut q = DirectionMatrix::zeros(m, n);
    let mut count = vec![0usize; m];
    let has_hanging: Vec<bool> = (0..m).map(|x| cls.row_hanging(x).is_some()).collect();
    let mut y = first;
    let mut sign: i8 = 1;

    for _ in 0..n {
        let maxed: Vec<usize> = support.iter().copied().filter(|&x| cls.maxed_out[x][y]).collect();
        for &x in &maxed {
            q.set(x, y, sign);
            count[x] += 1;
        }
        sign = -sign;

        let critical = maxed.iter().copied().find(|&x| !has_hanging[x] && count[x] == 1);
        let Some(x) = critical else {
            // every maxed-out row has hanging mass or two stamps
            for &x in support {
                if let Some(h) = cls.row_hanging(x) {
                    let s = q.row_sum(x);
                    if s % 2 != 0 {
                        if s.abs() != 1 {
                            return Err(LeakError::Internal(format!("row {x} of Q sums to {s}")));
                        }
                        q.set(x, h, -s as i8);
                    }
                }
            }
            if let Some(x) = (0..m).find(|&x| q.row_sum(x) != 0) {
                return Err(LeakError::Internal(format!("row {x} of Q does not sum to zero")));
            }
            return Ok(q);
        };

        let next = (0..n)
            .rev()
            .find(|&c| cls.maxed_out[x][c])
            .ok_or_else(|| LeakError::Internal(format!("row {x} has no maxed-out entry")))?;
        if next <= y || !cls.fractional_columns.contains(&next) {
            return Err(LeakError::Internal(format!(
                "Q walk from column {y} through row {x} reached column {next}, which is not a fractional column to its right"
            )));
        }
        y = next;
    }
    Err(LeakError::Internal("Q walk did not terminate".into()))
}

/// Largest step lengths in each direction along `q` that keep the maxed-out
/// and fractional entry sets of `scheme` unchanged.
pub fn delta_bounds(channel: &Channel, scheme: &ProtectionScheme, q: &DirectionMatrix) -> Result<(f64, f64)> {
    let support = channel.support();
    let cls = classify_rows(scheme, &support);
    Ok(bounds(scheme, q, &cls, &support))
}

fn bounds(scheme: &ProtectionScheme, q: &DirectionMatrix, cls: &EntryClassification, support: &[usize]) -> (f64, f64) {
    let n = scheme.cols();
    // direction of each column's maximum
    let mut col_rate = vec![0i8; n];
    for &x in support {
        for (y, rate) in col_rate.iter_mut().enumerate() {
            if cls.maxed_out[x][y] && q.get(x, y) != 0 {
                *rate = q.get(x, y);
            }
        }
    }
    let reach = |dir: f64| {
        let mut best = f64::INFINITY;
        for &x in support {
            for (y, &rate) in col_rate.iter().enumerate() {
                let r = dir * q.get(x, y) as f64;
                let v = scheme.get(x, y);
                if r > 0.0 {
                    best = best.min((1.0 - v) / r);
                } else if r < 0.0 {
                    best = best.min(v / -r);
                }
                if cls.hanging[x][y] {
                    let closing = r - dir * rate as f64;
                    if closing > 0.0 {
                        best = best.min((cls.column_max[y] - v) / closing);
                    }
                }
            }
        }
        best
    };
    (-reach(-1.0), reach(1.0))
}

fn lagrangian(channel: &Channel, scheme: &ProtectionScheme, alpha: f64) -> Result<(f64, f64)> {
    let cost = total_cost(channel, scheme)?;
    let leak = exp_leak(channel.px(), scheme)?;
    Ok((cost + alpha * leak, leak))
}

fn step(scheme: &ProtectionScheme, q: &DirectionMatrix, delta: f64) -> ProtectionScheme {
    let mut out: Matrix = scheme.matrix().clone();
    for x in 0..q.rows() {
        for y in 0..q.cols() {
            let d = q.get(x, y);
            if d != 0 {
                let mut v = out[(x, y)] + delta * d as f64;
                if v.abs() <= SNAP {
                    v = 0.0;
                } else if (1.0 - v).abs() <= SNAP {
                    v = 1.0;
                }
                out[(x, y)] = v;
            }
        }
    }
    ProtectionScheme::from_matrix(out)
}

/// Per-iteration record of a determinization run.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterminizeStep {
    pub randomness: usize,
    pub delta: f64,
    pub objective: f64,
    pub exp_leak: f64,
    /// Perturbation direction the step moved along.
    pub direction: DirectionMatrix,
}

/// Which way a step may move exp-leak when the objective is flat along `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slide {
    /// Never raise exp-leak.
    Down,
    /// Never lower exp-leak.
    Up,
}

/// Deterministic scheme with the same cost + `alpha` * exp-leak as the
/// optimizing input `scheme`, and no larger exp-leak.
pub fn determinize(channel: &Channel, scheme: &ProtectionScheme, alpha: f64) -> Result<ProtectionScheme> {
    determinize_traced(channel, scheme, alpha, Slide::Down).map(|(s, _)| s)
}

/// Splits an optimizing scheme into two deterministic schemes on its
/// supporting line, one leaking no more and one no less, weighted so the
/// blend has the input's exp-leak and cost.
pub fn decompose(channel: &Channel, scheme: &ProtectionScheme, alpha: f64) -> Result<Mixture> {
    let leak = exp_leak(channel.px(), scheme)?;
    let low = determinize_traced(channel, scheme, alpha, Slide::Down)?.0;
    let high = determinize_traced(channel, scheme, alpha, Slide::Up)?.0;
    let l_low = exp_leak(channel.px(), &low)?;
    let l_high = exp_leak(channel.px(), &high)?;
    if l_high - l_low < 0.5 {
        return Ok(Mixture { lambda: 1.0, p1: low.clone(), p2: low });
    }
    let lambda = ((l_high - leak) / (l_high - l_low)).clamp(0.0, 1.0);
    Ok(Mixture { lambda, p1: low, p2: high })
}

pub fn determinize_traced(
    channel: &Channel,
    scheme: &ProtectionScheme,
    alpha: f64,
    slide: Slide,
) -> Result<(ProtectionScheme, Vec<DeterminizeStep>)> {
    require_staircase(channel)?;
    validate_scheme(channel, scheme)?;
    if alpha.is_nan() || alpha < 0.0 {
        return Err(LeakError::Invalid(format!("leak price {alpha} is negative")));
    }
    let support = channel.support();
    let mut current = scheme.matrix().clone();
    for x in (0..channel.m()).filter(|&x| channel.px()[x] == 0.0) {
        let row = current.row_mut(x);
        row.iter_mut().for_each(|v| *v = 0.0);
        row[channel.cheapest_column(x)] = 1.0;
    }
    let mut current = ProtectionScheme::from_matrix(current);
    let (start_value, _) = lagrangian(channel, &current, alpha)?;
    let tol = OBJECTIVE_TOL * start_value.abs().max(1.0);
    let check = |value: f64, at: &str| {
        if (value - start_value).abs() > tol {
            Err(LeakError::Internal(format!(
                "cost + alpha * exp-leak moved from {start_value} to {value} at {at}; input is not optimizing for alpha = {alpha}"
            )))
        } else {
            Ok(())
        }
    };

    current = water_fill(channel, &current)?;
    let (value, mut leak) = lagrangian(channel, &current, alpha)?;
    check(value, "water-filling")?;
    let mut cls = classify_rows(&current, &support);
    let budget = cls.randomness();
    let mut trace = Vec::new();
    let mut iterations = 0;

    while cls.randomness() > 0 {
        if iterations >= budget {
            return Err(LeakError::Internal(format!(
                "determinization exceeded its {budget} iteration budget"
            )));
        }
        iterations += 1;
        let r = cls.randomness();
        let q = build_q(&cls, &support, current.rows(), current.cols())?;
        let (lo, hi) = bounds(&current, &q, &cls, &support);
        if !(lo < 0.0 && hi > 0.0 && lo.is_finite() && hi.is_finite()) {
            return Err(LeakError::Internal(format!("degenerate step range [{lo}, {hi}]")));
        }

        let mut options = Vec::with_capacity(2);
        for delta in [hi, lo] {
            let moved = water_fill(channel, &step(&current, &q, delta))?;
            let (value, new_leak) = lagrangian(channel, &moved, alpha)?;
            options.push((delta, moved, value, new_leak));
        }
        // respect the slide direction; otherwise take the lower objective,
        // the positive step on ties
        let keeps_bound = |o: &(f64, ProtectionScheme, f64, f64)| match slide {
            Slide::Down => o.3 <= leak + ENTRY_TOL,
            Slide::Up => o.3 >= leak - ENTRY_TOL,
        };
        let pick = match (keeps_bound(&options[0]), keeps_bound(&options[1])) {
            (true, false) => 0,
            (false, true) => 1,
            _ if options[1].2 < options[0].2 - ENTRY_TOL * start_value.abs().max(1.0) => 1,
            _ => 0,
        };
        let (delta, moved, value, new_leak) = options.swap_remove(pick);
        check(value, &format!("iteration {iterations}"))?;
        let next_cls = classify_rows(&moved, &support);
        if next_cls.randomness() >= r {
            return Err(LeakError::Internal(format!(
                "randomness did not decrease ({r} -> {})",
                next_cls.randomness()
            )));
        }
        trace!("determinize: R {r} -> {}, delta {delta}", next_cls.randomness());
        trace.push(DeterminizeStep { randomness: r, delta, objective: value, exp_leak: new_leak, direction: q });
        current = moved;
        cls = next_cls;
        leak = new_leak;
    }

    // snap to exact zeros and ones
    let targets: Vec<usize> = (0..current.rows())
        .map(|x| {
            let row = current.row(x);
            (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0)
        })
        .collect();
    let out = ProtectionScheme::deterministic(&targets, current.cols());
    validate_scheme(channel, &out)?;
    let (value, _) = lagrangian(channel, &out, alpha)?;
    check(value, "the deterministic result")?;
    Ok((out, trace))
}
