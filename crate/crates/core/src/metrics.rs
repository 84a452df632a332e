//! Leakage of a protection scheme under four metrics: maximal leakage (via
//! its exponentiated form), mult-leakage for an explicit secret, mutual
//! information and channel capacity. All values are in bits except
//! `exp_leak`, which is the unitless sum of column maxima.

use serde::{Deserialize, Serialize};

use crate::channel::{Matrix, Pmf, ProtectionScheme, ROW_SUM_TOL};
use crate::error::{LeakError, Result};

pub const DEFAULT_CAPACITY_TOL: f64 = 1e-9;
pub const DEFAULT_CAPACITY_ITERS: usize = 100_000;

/// Joint distribution of a secret `U` and the intermediate `X`, given as
/// `p(u)` and the row-stochastic `p(x|u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecretJoint {
    pu: Pmf,
    x_given_u: Matrix,
}

impl SecretJoint {
    pub fn new(pu: Pmf, x_given_u: Matrix) -> Result<Self> {
        if pu.len() != x_given_u.rows() {
            return Err(LeakError::Dimension(format!(
                "{} secret probabilities but {} rows in p(x|u)",
                pu.len(),
                x_given_u.rows()
            )));
        }
        ProtectionScheme::from_matrix(x_given_u.clone()).check_stochastic()?;
        Ok(SecretJoint { pu, x_given_u })
    }

    pub fn pu(&self) -> &Pmf {
        &self.pu
    }

    pub fn x_given_u(&self) -> &Matrix {
        &self.x_given_u
    }

    /// Induced distribution of `X`.
    pub fn marginal(&self) -> Result<Pmf> {
        let m = self.x_given_u.cols();
        let mut px = vec![0.0; m];
        for (u, row) in self.x_given_u.iter_rows().enumerate() {
            for (x, v) in row.iter().enumerate() {
                px[x] += self.pu[u] * v;
            }
        }
        // clean up summation noise so the result passes the strict pmf check
        let total: f64 = px.iter().sum();
        if (total - 1.0).abs() <= ROW_SUM_TOL {
            px.iter_mut().for_each(|p| *p /= total);
        }
        Pmf::new(px)
    }
}

/// All four metrics for one scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub exp_leak: f64,
    pub ml_bits: f64,
    pub mi_bits: f64,
    pub cc_bits: f64,
}

fn check_rows(px: &Pmf, scheme: &ProtectionScheme) -> Result<()> {
    if px.len() != scheme.rows() {
        return Err(LeakError::Dimension(format!(
            "{} input probabilities but scheme has {} rows",
            px.len(),
            scheme.rows()
        )));
    }
    Ok(())
}

/// Sum over outputs of the largest transition probability among inputs
/// with nonzero probability. Rows with `p(x) = 0` exactly are skipped.
pub fn exp_leak(px: &Pmf, scheme: &ProtectionScheme) -> Result<f64> {
    check_rows(px, scheme)?;
    let support = px.support();
    if support.is_empty() {
        return Err(LeakError::EmptySupport);
    }
    Ok(column_maxima(scheme, &support).iter().sum())
}

/// Maximal leakage in bits, `log2(exp_leak)`.
pub fn maximal_leakage(px: &Pmf, scheme: &ProtectionScheme) -> Result<f64> {
    Ok(exp_leak(px, scheme)?.log2())
}

/// Column maxima of `scheme` restricted to `rows`.
pub fn column_maxima(scheme: &ProtectionScheme, rows: &[usize]) -> Vec<f64> {
    (0..scheme.cols())
        .map(|y| rows.iter().map(|&x| scheme.get(x, y)).fold(0.0, f64::max))
        .collect()
}

/// Log-ratio of the best informed guess of `U` after seeing `Y` to the best
/// blind guess.
pub fn mult_leakage(joint: &SecretJoint, scheme: &ProtectionScheme) -> Result<f64> {
    let xu = joint.x_given_u();
    if xu.cols() != scheme.rows() {
        return Err(LeakError::Dimension(format!(
            "joint has {} intermediate values but scheme has {} rows",
            xu.cols(),
            scheme.rows()
        )));
    }
    let pu = joint.pu();
    let blind = pu.probs().iter().copied().fold(0.0, f64::max);
    let mut informed = 0.0;
    for y in 0..scheme.cols() {
        let mut best = 0.0f64;
        for u in 0..pu.len() {
            if pu[u] == 0.0 {
                continue;
            }
            let p_y_given_u: f64 = xu.row(u).iter().enumerate().map(|(x, v)| v * scheme.get(x, y)).sum();
            best = best.max(pu[u] * p_y_given_u);
        }
        informed += best;
    }
    Ok((informed / blind).log2())
}

/// Uniform secret over `denominator` values, each mapped to a single `x`,
/// with `px[x] * denominator` secrets landing on `x`.
pub fn shattering_joint(px: &Pmf, denominator: usize) -> Result<SecretJoint> {
    if denominator == 0 {
        return Err(LeakError::Invalid("denominator must be positive".into()));
    }
    let d = denominator as f64;
    let mut worst: Option<(usize, f64)> = None;
    let mut counts = Vec::with_capacity(px.len());
    for (x, p) in px.probs().iter().enumerate() {
        let scaled = p * d;
        let rounded = scaled.round();
        let off = (scaled - rounded).abs();
        if off > 1e-9 && worst.is_none_or(|(_, w)| off > w) {
            worst = Some((x, off));
        }
        counts.push(rounded as usize);
    }
    if let Some((x, off)) = worst {
        return Err(LeakError::Invalid(format!(
            "p[{x}] * {denominator} = {} is {off:.3e} away from an integer",
            px[x] * d
        )));
    }
    let total: usize = counts.iter().sum();
    if total != denominator {
        return Err(LeakError::Invalid(format!("rounded counts sum to {total}, not {denominator}")));
    }
    let mut map = Matrix::zeros(denominator, px.len());
    let mut u = 0;
    for (x, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            map[(u, x)] = 1.0;
            u += 1;
        }
    }
    SecretJoint::new(Pmf::uniform(denominator)?, map)
}

/// Mutual information between `X ~ px` and the scheme's output, in bits.
pub fn mutual_information(px: &Pmf, scheme: &ProtectionScheme) -> Result<f64> {
    check_rows(px, scheme)?;
    let py = output_distribution(px.probs(), scheme);
    let mut mi = 0.0;
    for x in 0..scheme.rows() {
        if px[x] == 0.0 {
            continue;
        }
        for (y, &p) in scheme.row(x).iter().enumerate() {
            if p > 0.0 {
                mi += px[x] * p * (p / py[y]).log2();
            }
        }
    }
    Ok(mi.max(0.0))
}

fn output_distribution(weights: &[f64], scheme: &ProtectionScheme) -> Vec<f64> {
    let mut py = vec![0.0; scheme.cols()];
    for (x, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        for (y, p) in scheme.row(x).iter().enumerate() {
            py[y] += w * p;
        }
    }
    py
}

const POLISH_EVERY: usize = 100;
const POLISH_ITERS: usize = 200;
const PRUNE_RATIO: f64 = 0.1;

/// Mutual information of the input weights `r` over the masked rows, the
/// per-row divergences from the induced output, and their maximum.
fn divergences(scheme: &ProtectionScheme, mask: &[usize], r: &[f64], d: &mut [f64]) -> (f64, f64) {
    let mut q = vec![0.0; scheme.cols()];
    for (i, &x) in mask.iter().enumerate() {
        for (y, p) in scheme.row(x).iter().enumerate() {
            q[y] += r[i] * p;
        }
    }
    for (i, &x) in mask.iter().enumerate() {
        d[i] = scheme
            .row(x)
            .iter()
            .zip(&q)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, qy)| p * (p / qy).log2())
            .sum();
    }
    let info = r.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
    let upper = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (info, upper)
}

fn reweight(r: &mut [f64], d: &[f64]) {
    let top = r.iter().zip(d).filter(|(a, _)| **a > 0.0).map(|(_, b)| *b).fold(f64::NEG_INFINITY, f64::max);
    let mut norm = 0.0;
    for (ri, di) in r.iter_mut().zip(d) {
        *ri *= (di - top).exp2();
        norm += *ri;
    }
    r.iter_mut().for_each(|ri| *ri /= norm);
}

/// Capacity of the channel restricted to the rows in `support_mask`, by
/// alternating maximization over input distributions.
///
/// Stops once the smallest `max_x D(P_x || q)` seen minus the largest
/// `I(r)` seen is at most `tol`; the returned value is that mutual
/// information, within `tol` below the capacity. Every so often the small
/// weights are dropped and the iteration is rerun on the rest, which
/// recovers optima whose unused rows only decay polynomially.
pub fn channel_capacity(
    scheme: &ProtectionScheme,
    support_mask: &[usize],
    tol: f64,
    max_iters: usize,
) -> Result<f64> {
    if support_mask.is_empty() {
        return Err(LeakError::Invalid("capacity mask selects no rows".into()));
    }
    if let Some(&x) = support_mask.iter().find(|&&x| x >= scheme.rows()) {
        return Err(LeakError::Dimension(format!("mask row {x} out of range")));
    }
    let k = support_mask.len();
    let mut r = vec![1.0 / k as f64; k];
    let mut d = vec![0.0; k];
    let (mut best, mut lowest_upper) = (f64::NEG_INFINITY, f64::INFINITY);
    for it in 0..max_iters {
        let (info, upper) = divergences(scheme, support_mask, &r, &mut d);
        best = best.max(info);
        lowest_upper = lowest_upper.min(upper);
        if lowest_upper - best <= tol {
            return Ok(best.max(0.0));
        }
        if it > 0 && it % POLISH_EVERY == 0 {
            let top = r.iter().copied().fold(0.0, f64::max);
            let mut pruned: Vec<f64> = r.iter().map(|&v| if v < PRUNE_RATIO * top { 0.0 } else { v }).collect();
            let norm: f64 = pruned.iter().sum();
            pruned.iter_mut().for_each(|v| *v /= norm);
            let mut dp = vec![0.0; k];
            for _ in 0..POLISH_ITERS {
                let (info, upper) = divergences(scheme, support_mask, &pruned, &mut dp);
                best = best.max(info);
                lowest_upper = lowest_upper.min(upper);
                if lowest_upper - best <= tol {
                    return Ok(best.max(0.0));
                }
                reweight(&mut pruned, &dp);
            }
        }
        reweight(&mut r, &d);
    }
    Err(LeakError::NotConverged { iterations: max_iters, best: best.max(0.0) })
}

/// Bundles the metrics; capacity is taken over the support of `px`.
pub fn leakage_report(px: &Pmf, scheme: &ProtectionScheme) -> Result<LeakageReport> {
    let exp_leak = exp_leak(px, scheme)?;
    let mi_bits = mutual_information(px, scheme)?;
    let cc_bits = channel_capacity(scheme, &px.support(), DEFAULT_CAPACITY_TOL, DEFAULT_CAPACITY_ITERS)?;
    Ok(LeakageReport { exp_leak, ml_bits: exp_leak.log2(), mi_bits, cc_bits })
}
