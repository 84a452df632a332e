//! Problem data for a memoryless side channel: the input distribution over
//! the intermediate alphabet, the cost of mapping each input to each output,
//! and the row-stochastic protection schemes that are optimized over.
//!
//! Alphabets are index ordered. Labels (cycle counts, packet sizes) ride
//! along as metadata and never influence the math.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{LeakError, Result};

/// Tolerance on the row sums of a protection scheme.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Tolerance on the total mass of an input distribution.
pub const PMF_SUM_TOL: f64 = 1e-12;
/// Entries within this distance of 0 or 1 count as integral.
pub const ENTRY_TOL: f64 = 1e-9;

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from nested rows. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(LeakError::Dimension(format!(
                "row {i} has {} entries, expected {cols}",
                r.len()
            )));
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * s + other * (1 - s)`, entrywise.
    pub fn blend(&self, other: &Matrix, s: f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LeakError::Dimension(format!(
                "cannot blend {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| s * a + (1.0 - s) * b)
            .collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// Returns a copy with columns reordered so that column `j` of the output
    /// is column `perm[j]` of the input.
    pub fn permute_cols(&self, perm: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, perm.len());
        for i in 0..self.rows {
            for (j, &src) in perm.iter().enumerate() {
                out[(i, j)] = self[(i, src)];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.iter_rows()).finish()
    }
}

/// Probability mass function over an ordered finite alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    probs: Vec<f64>,
    labels: Option<Vec<f64>>,
}

impl Pmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(LeakError::Invalid("distribution has no entries".into()));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(LeakError::Invalid(format!("probability {i} is {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PMF_SUM_TOL {
            return Err(LeakError::Invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Pmf { probs, labels: None })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Pmf::new(vec![1.0 / n as f64; n])
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.probs.len() {
            return Err(LeakError::Dimension(format!(
                "{} labels for {} probabilities",
                labels.len(),
                self.probs.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    /// Indices with strictly positive probability.
    pub fn support(&self) -> Vec<usize> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

impl Index<usize> for Pmf {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

/// Nonnegative cost of mapping input `x` to output `y`; `f64::INFINITY`
/// marks an illegal mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Matrix,
}

impl CostMatrix {
    pub fn new(entries: Matrix) -> Result<Self> {
        if entries.cols() == 0 {
            return Err(LeakError::Dimension("cost matrix has no columns".into()));
        }
        for x in 0..entries.rows() {
            let row = entries.row(x);
            if let Some((y, c)) = row.iter().enumerate().find(|(_, c)| c.is_nan() || **c < 0.0) {
                return Err(LeakError::Invalid(format!("cost ({x},{y}) is {c}")));
            }
            if row.iter().all(|c| c.is_infinite()) {
                return Err(LeakError::Invalid(format!("row {x} has no finite cost")));
            }
        }
        Ok(CostMatrix { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        CostMatrix::new(Matrix::from_rows(rows)?)
    }

    /// `per_unit * (y - x)` when `y >= x`, infinite otherwise.
    pub fn padding(x_labels: &[f64], y_labels: &[f64], per_unit: f64) -> Result<Self> {
        if !(per_unit.is_finite() && per_unit > 0.0) {
            return Err(LeakError::Invalid(format!("per-unit cost must be positive, got {per_unit}")));
        }
        let mut m = Matrix::zeros(x_labels.len(), y_labels.len());
        for (i, x) in x_labels.iter().enumerate() {
            for (j, y) in y_labels.iter().enumerate() {
                m[(i, j)] = if y >= x { per_unit * (y - x) } else { f64::INFINITY };
            }
        }
        CostMatrix::new(m)
    }

    pub fn rows(&self) -> usize {
        self.entries.rows()
    }

    pub fn cols(&self) -> usize {
        self.entries.cols()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.entries[(x, y)]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        self.entries.row(x)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.entries
    }

    pub fn is_finite(&self, x: usize, y: usize) -> bool {
        self.entries[(x, y)].is_finite()
    }

    /// Multiplies every finite cost by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let mut m = self.entries.clone();
        for x in 0..m.rows() {
            for c in m.row_mut(x) {
                if c.is_finite() {
                    *c *= s;
                }
            }
        }
        CostMatrix::new(m)
    }

    /// Staircase nondecreasing: infinities propagate down their column and
    /// the finite part of every row is nondecreasing left to right.
    pub fn is_staircase_nondecreasing(&self) -> bool {
        let (m, n) = (self.rows(), self.cols());
        for y in 0..n {
            let mut seen_inf = false;
            for x in 0..m {
                let inf = self.get(x, y).is_infinite();
                if seen_inf && !inf {
                    return false;
                }
                seen_inf |= inf;
            }
        }
        for x in 0..m {
            let mut last: Option<f64> = None;
            for &c in self.row(x) {
                match (last, c.is_finite()) {
                    (Some(_), false) => return false,
                    (Some(prev), true) if c < prev => return false,
                    (_, true) => last = Some(c),
                    (None, false) => {}
                }
            }
        }
        true
    }

    /// Index of the first finite column of row `x`.
    pub fn first_finite(&self, x: usize) -> Option<usize> {
        self.row(x).iter().position(|c| c.is_finite())
    }
}

/// Row-stochastic transition matrix from inputs to outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectionScheme {
    rows: Matrix,
}

impl ProtectionScheme {
    /// Wraps a matrix without checking stochasticity; see [`validate_scheme`].
    pub fn from_matrix(rows: Matrix) -> Self {
        ProtectionScheme { rows }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(ProtectionScheme { rows: Matrix::from_rows(rows)? })
    }

    pub fn identity(n: usize) -> Self {
        ProtectionScheme { rows: Matrix::identity(n) }
    }

    /// Deterministic scheme sending row `x` to column `targets[x]`.
    pub fn deterministic(targets: &[usize], cols: usize) -> Self {
        let mut m = Matrix::zeros(targets.len(), cols);
        for (x, &y) in targets.iter().enumerate() {
            m[(x, y)] = 1.0;
        }
        ProtectionScheme { rows: m }
    }

    pub fn rows(&self) -> usize {
        self.rows.rows()
    }

    pub fn cols(&self) -> usize {
        self.rows.cols()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.rows[(x, y)]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        self.rows.row(x)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }

    pub fn into_matrix(self) -> Matrix {
        self.rows
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows.to_rows()
    }

    /// `s * self + (1 - s) * other`.
    pub fn blend(&self, other: &ProtectionScheme, s: f64) -> Result<ProtectionScheme> {
        Ok(ProtectionScheme { rows: self.rows.blend(&other.rows, s)? })
    }

    /// Checks the stochastic invariants that do not involve a cost matrix.
    pub fn check_stochastic(&self) -> Result<()> {
        for x in 0..self.rows() {
            let row = self.row(x);
            if let Some((y, v)) = row
                .iter()
                .enumerate()
                .find(|(_, v)| !v.is_finite() || **v < -ENTRY_TOL || **v > 1.0 + ENTRY_TOL)
            {
                return Err(LeakError::Violation(format!("entry ({x},{y}) is {v}, outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(LeakError::Violation(format!("row {x} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// True iff every entry is 0 or 1 within [`ENTRY_TOL`].
    pub fn is_deterministic(&self) -> bool {
        self.rows
            .as_slice()
            .iter()
            .all(|v| v.abs() <= ENTRY_TOL || (v - 1.0).abs() <= ENTRY_TOL)
    }

    /// For a deterministic scheme, the output column of each row.
    pub fn targets(&self) -> Option<Vec<usize>> {
        if !self.is_deterministic() {
            return None;
        }
        (0..self.rows())
            .map(|x| self.row(x).iter().position(|v| (v - 1.0).abs() <= ENTRY_TOL))
            .collect()
    }
}

/// Fixed problem data: input distribution and cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    px: Pmf,
    cost: CostMatrix,
    y_labels: Option<Vec<f64>>,
}

impl Channel {
    pub fn new(px: Pmf, cost: CostMatrix) -> Result<Self> {
        if px.len() != cost.rows() {
            return Err(LeakError::Dimension(format!(
                "{} input probabilities but {} cost rows",
                px.len(),
                cost.rows()
            )));
        }
        Ok(Channel { px, cost, y_labels: None })
    }

    pub fn with_y_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.cost.cols() {
            return Err(LeakError::Dimension(format!(
                "{} output labels for {} cost columns",
                labels.len(),
                self.cost.cols()
            )));
        }
        self.y_labels = Some(labels);
        Ok(self)
    }

    pub fn px(&self) -> &Pmf {
        &self.px
    }

    pub fn cost(&self) -> &CostMatrix {
        &self.cost
    }

    pub fn y_labels(&self) -> Option<&[f64]> {
        self.y_labels.as_deref()
    }

    /// Size of the input alphabet.
    pub fn m(&self) -> usize {
        self.px.len()
    }

    /// Size of the output alphabet.
    pub fn n(&self) -> usize {
        self.cost.cols()
    }

    pub fn support(&self) -> Vec<usize> {
        self.px.support()
    }

    pub fn is_staircase(&self) -> bool {
        self.cost.is_staircase_nondecreasing()
    }

    /// `sum_x p(x) min_y c(x,y)`: the cost when every row takes its cheapest column.
    pub fn min_achievable_cost(&self) -> f64 {
        (0..self.m())
            .filter(|&x| self.px[x] > 0.0)
            .map(|x| {
                let cheapest = self.cost.row(x).iter().copied().fold(f64::INFINITY, f64::min);
                self.px[x] * cheapest
            })
            .sum()
    }

    /// Cheapest finite column of row `x`, lowest index on ties.
    pub fn cheapest_column(&self, x: usize) -> usize {
        let row = self.cost.row(x);
        let mut best = 0;
        for (y, &c) in row.iter().enumerate() {
            if c < row[best] {
                best = y;
            }
        }
        best
    }

    /// `sum_x p(x) * label(x)`, the expected unprotected value used as the
    /// denominator of percent-overhead figures.
    pub fn baseline(&self) -> Option<f64> {
        let labels = self.px.labels()?;
        Some(self.px.probs().iter().zip(labels).map(|(p, l)| p * l).sum())
    }
}

/// Checks every protection-scheme invariant of `scheme` against `channel`.
///
/// Dimension mismatches yield [`LeakError::Dimension`]; broken invariants
/// yield [`LeakError::Violation`] naming the first offending row or cell.
pub fn validate_scheme(channel: &Channel, scheme: &ProtectionScheme) -> Result<()> {
    if scheme.rows() != channel.m() || scheme.cols() != channel.n() {
        return Err(LeakError::Dimension(format!(
            "scheme is {}x{}, channel is {}x{}",
            scheme.rows(),
            scheme.cols(),
            channel.m(),
            channel.n()
        )));
    }
    scheme.check_stochastic()?;
    for x in 0..scheme.rows() {
        for y in 0..scheme.cols() {
            if scheme.get(x, y) > 0.0 && !channel.cost.is_finite(x, y) {
                return Err(LeakError::Violation(format!("mass on infinite-cost cell ({x},{y})")));
            }
        }
    }
    Ok(())
}

/// Expected cost `sum p(x) c(x,y) p_xy`. Cells with zero mass contribute
/// nothing even when their cost is infinite.
pub fn total_cost(channel: &Channel, scheme: &ProtectionScheme) -> Result<f64> {
    if scheme.rows() != channel.m() || scheme.cols() != channel.n() {
        return Err(LeakError::Dimension(format!(
            "scheme is {}x{}, channel is {}x{}",
            scheme.rows(),
            scheme.cols(),
            channel.m(),
            channel.n()
        )));
    }
    let mut total = 0.0;
    for x in 0..scheme.rows() {
        let px = channel.px[x];
        for y in 0..scheme.cols() {
            let mass = scheme.get(x, y);
            if mass == 0.0 {
                continue;
            }
            let c = channel.cost.get(x, y);
            if c.is_infinite() {
                return Err(LeakError::InfiniteCost { row: x, col: y, mass });
            }
            total += px * c * mass;
        }
    }
    Ok(total)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn section_54_channel() -> Channel {
        let inf = f64::INFINITY;
        let cost = CostMatrix::from_rows(&[
            vec![1.0, 2.0, 3.0, 4.0],
            vec![inf, 1.0, 2.0, 3.0],
            vec![inf, inf, 1.0, 2.0],
            vec![inf, inf, inf, 1.0],
        ])
        .unwrap();
        Channel::new(Pmf::new(vec![0.4, 0.2, 0.2, 0.2]).unwrap(), cost).unwrap()
    }

    fn p_ml() -> ProtectionScheme {
        ProtectionScheme::from_rows(&[
            vec![0.25, 0.75, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ])
        .unwrap()
    }

    #[test]
    fn identity_validates() {
        let ch = Channel::new(Pmf::uniform(3).unwrap(), CostMatrix::new(Matrix::filled(3, 3, 1.0)).unwrap())
            .unwrap();
        assert!(validate_scheme(&ch, &ProtectionScheme::identity(3)).is_ok());
    }

    #[test]
    fn bad_row_sum_is_reported() {
        let ch = Channel::new(Pmf::uniform(1).unwrap(), CostMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap())
            .unwrap();
        let s = ProtectionScheme::from_rows(&[vec![0.5, 0.6]]).unwrap();
        let err = validate_scheme(&ch, &s).unwrap_err();
        assert!(matches!(&err, LeakError::Violation(m) if m.starts_with("row 0 sums to 1.1")), "{err}");
    }

    #[test]
    fn mass_on_infinite_cell_is_reported() {
        let inf = f64::INFINITY;
        let cost = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![inf, 1.0]]).unwrap();
        let ch = Channel::new(Pmf::uniform(2).unwrap(), cost).unwrap();
        let s = ProtectionScheme::from_rows(&[vec![1.0, 0.0], vec![0.3, 0.7]]).unwrap();
        let err = validate_scheme(&ch, &s).unwrap_err();
        assert_eq!(err, LeakError::Violation("mass on infinite-cost cell (1,0)".into()));
        assert!(matches!(total_cost(&ch, &s), Err(LeakError::InfiniteCost { row: 1, col: 0, .. })));
    }

    #[test]
    fn dimension_mismatch_is_distinct() {
        let ch = section_54_channel();
        let err = validate_scheme(&ch, &ProtectionScheme::identity(3)).unwrap_err();
        assert!(matches!(err, LeakError::Dimension(_)));
    }

    #[test]
    fn total_cost_of_printed_ml_scheme() {
        // brute-force expansion of the printed matrix
        let ch = section_54_channel();
        let s = p_ml();
        let mut expect = 0.0;
        for x in 0..4 {
            for y in 0..4 {
                if s.get(x, y) > 0.0 {
                    expect += ch.px()[x] * ch.cost().get(x, y) * s.get(x, y);
                }
            }
        }
        assert!((expect - 1.5).abs() < 1e-12);
        assert!((total_cost(&ch, &s).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn trivial_costs() {
        let px = Pmf::new(vec![0.2, 0.3, 0.5]).unwrap();
        let mut diag = Matrix::filled(3, 3, 7.0);
        for i in 0..3 {
            diag[(i, i)] = 1.0;
        }
        let ch = Channel::new(px.clone(), CostMatrix::new(diag).unwrap()).unwrap();
        assert!((total_cost(&ch, &ProtectionScheme::identity(3)).unwrap() - 1.0).abs() < 1e-15);
        let zero = Channel::new(px, CostMatrix::new(Matrix::zeros(3, 3)).unwrap()).unwrap();
        let s = ProtectionScheme::from_rows(&vec![vec![0.2, 0.3, 0.5]; 3]).unwrap();
        assert_eq!(total_cost(&zero, &s).unwrap(), 0.0);
    }

    #[test]
    fn staircase_examples() {
        let labels = [1.0, 2.0, 3.0, 5.0];
        assert!(CostMatrix::padding(&labels, &labels, 1.0).unwrap().is_staircase_nondecreasing());
        assert!(section_54_channel().cost().is_staircase_nondecreasing());
        let c = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        assert!(!c.is_staircase_nondecreasing());
        // infinity that does not propagate downward
        let inf = f64::INFINITY;
        let c = CostMatrix::from_rows(&[vec![inf, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(!c.is_staircase_nondecreasing());
        // finite then infinite within a row
        let c = CostMatrix::from_rows(&[vec![1.0, inf]]).unwrap();
        assert!(!c.is_staircase_nondecreasing());
    }

    #[test]
    fn determinism_checks() {
        assert!(ProtectionScheme::identity(4).is_deterministic());
        assert!(!p_ml().is_deterministic());
        let all_first = ProtectionScheme::deterministic(&[0, 0, 0], 3);
        assert!(all_first.is_deterministic());
        assert_eq!(all_first.targets(), Some(vec![0, 0, 0]));
    }

    #[test]
    fn cost_matrix_rejects_all_infinite_row() {
        let inf = f64::INFINITY;
        assert!(CostMatrix::from_rows(&[vec![inf, inf]]).is_err());
        assert!(CostMatrix::from_rows(&[vec![-1.0, 0.0]]).is_err());
    }

    #[test]
    fn pmf_validation() {
        assert!(Pmf::new(vec![0.5, 0.6]).is_err());
        assert!(Pmf::new(vec![-0.1, 1.1]).is_err());
        assert!(Pmf::new(vec![]).is_err());
        assert_eq!(Pmf::new(vec![0.0, 1.0, 0.0]).unwrap().support(), vec![1]);
    }
}
