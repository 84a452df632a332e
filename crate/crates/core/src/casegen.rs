//! Channel constructors: binary symmetric channels, the square-and-multiply
//! timing channel with binomial delay, width extension of a measured
//! alphabet, and seeded random staircase instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{Channel, CostMatrix, Matrix, Pmf, ProtectionScheme};
use crate::error::{LeakError, Result};

/// Binomial pmf over `0..=n`, built by repeated convolution with a single
/// trial. Every intermediate is a probability, so nothing overflows at
/// large `n`, and for `p = 1/2` the values are exact dyadic rationals.
pub fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut pmf = vec![1.0];
    for _ in 0..n {
        let mut next = vec![0.0; pmf.len() + 1];
        for (k, v) in pmf.iter().enumerate() {
            next[k] += (1.0 - p) * v;
            next[k + 1] += p * v;
        }
        pmf = next;
    }
    pmf
}

/// Uniform bit with flip probability `p`.
pub fn bsc(p: f64) -> Result<(Pmf, ProtectionScheme)> {
    if !(0.0..=0.5).contains(&p) {
        return Err(LeakError::Invalid(format!("flip probability {p} is outside [0, 0.5]")));
    }
    let scheme = ProtectionScheme::from_rows(&[vec![1.0 - p, p], vec![p, 1.0 - p]])?;
    Ok((Pmf::uniform(2)?, scheme))
}

/// Delay added as a binomial number of dummy operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialNoiseSpec {
    pub size: usize,
    pub success_prob: f64,
    /// Cost of one unit of delay.
    pub per_unit_cost: f64,
}

impl BinomialNoiseSpec {
    pub fn new(size: usize, per_unit_cost: f64) -> Self {
        BinomialNoiseSpec { size, success_prob: 0.5, per_unit_cost }
    }

    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.success_prob) {
            return Err(LeakError::Invalid(format!("success probability {} is outside [0, 1]", self.success_prob)));
        }
        if !(self.per_unit_cost > 0.0 && self.per_unit_cost.is_finite()) {
            return Err(LeakError::Invalid(format!("per-unit cost {} must be positive", self.per_unit_cost)));
        }
        Ok(())
    }
}

/// Key weight of an `n`-bit uniform key observed through
/// `Y = X + Binomial(m, p)` multiplications.
pub fn square_multiply_channel(key_bits: usize, noise: &BinomialNoiseSpec) -> Result<(Channel, ProtectionScheme)> {
    if key_bits == 0 {
        return Err(LeakError::Invalid("key must have at least one bit".into()));
    }
    noise.check()?;
    let m = noise.size;
    let x_labels: Vec<f64> = (0..=key_bits).map(|k| k as f64).collect();
    let y_labels: Vec<f64> = (0..=key_bits + m).map(|k| k as f64).collect();
    let px = Pmf::new(binomial_pmf(key_bits, 0.5))?.with_labels(x_labels.clone())?;
    let cost = CostMatrix::padding(&x_labels, &y_labels, noise.per_unit_cost)?;
    let z = binomial_pmf(m, noise.success_prob);
    let mut rows = Matrix::zeros(x_labels.len(), y_labels.len());
    for x in 0..x_labels.len() {
        rows.row_mut(x)[x..=x + m].copy_from_slice(&z);
    }
    let channel = Channel::new(px, cost)?.with_y_labels(y_labels)?;
    Ok((channel, ProtectionScheme::from_matrix(rows)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtensionSpec {
    pub width: usize,
}

/// Most frequent gap between consecutive labels, smallest on ties.
fn common_difference(labels: &[f64]) -> f64 {
    let mut gaps: Vec<f64> = labels.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let mut best = (gaps[0], 0usize);
    let mut i = 0;
    while i < gaps.len() {
        let run = gaps[i..].iter().take_while(|&&g| g == gaps[i]).count();
        if run > best.1 {
            best = (gaps[i], run);
        }
        i += run;
    }
    best.0
}

/// Extends the ordered labels by `width` outputs at the most common
/// spacing and sends each input `z` positions up with probability
/// `Binomial(width, 1/2)(z)`.
pub fn extension_scheme(x_labels: &[f64], spec: ExtensionSpec) -> Result<(Vec<f64>, ProtectionScheme)> {
    if x_labels.is_empty() {
        return Err(LeakError::Invalid("no input labels".into()));
    }
    if x_labels.iter().any(|l| !l.is_finite()) || x_labels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LeakError::Invalid("input labels must be finite and strictly increasing".into()));
    }
    let w = spec.width;
    let mut y_labels = x_labels.to_vec();
    if w > 0 {
        if x_labels.len() < 2 {
            return Err(LeakError::Invalid("extension needs at least two input labels".into()));
        }
        let d = common_difference(x_labels);
        let last = x_labels[x_labels.len() - 1];
        y_labels.extend((1..=w).map(|k| last + k as f64 * d));
    }
    let z = binomial_pmf(w, 0.5);
    let mut rows = Matrix::zeros(x_labels.len(), y_labels.len());
    for x in 0..x_labels.len() {
        rows.row_mut(x)[x..=x + w].copy_from_slice(&z);
    }
    Ok((y_labels, ProtectionScheme::from_matrix(rows)))
}

/// The extension scheme together with its padding-cost channel.
pub fn extension_channel(px: &Pmf, spec: ExtensionSpec) -> Result<(Channel, ProtectionScheme)> {
    let labels = px.labels().ok_or_else(|| LeakError::Invalid("input pmf has no labels".into()))?;
    let (y_labels, scheme) = extension_scheme(labels, spec)?;
    let cost = CostMatrix::padding(labels, &y_labels, 1.0)?;
    Ok((Channel::new(px.clone(), cost)?.with_y_labels(y_labels)?, scheme))
}

/// Seeded random channel with full support and a staircase nondecreasing
/// cost. The last column is finite in every row.
pub fn random_instance(m: usize, n: usize, seed: u64) -> Result<Channel> {
    if m == 0 || n == 0 {
        return Err(LeakError::Invalid(format!("alphabet sizes must be positive, got {m}x{n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let px = Pmf::new(weights.iter().map(|w| w / total).collect())?;

    let mut frontier: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();
    frontier.sort_unstable();
    let rows: Vec<Vec<f64>> = frontier
        .iter()
        .map(|&f| {
            let mut row = vec![f64::INFINITY; n];
            let mut c = rng.gen_range(0.0..2.0);
            for v in &mut row[f..] {
                *v = c;
                // occasional flat steps exercise tie handling
                if rng.gen_bool(0.8) {
                    c += rng.gen_range(0.0..1.0);
                }
            }
            row
        })
        .collect();
    Channel::new(px, CostMatrix::from_rows(&rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::total_cost;
    use crate::metrics::exp_leak;
    use approx::assert_abs_diff_eq;

    #[test]
    fn binomial_rows() {
        assert_eq!(binomial_pmf(0, 0.5), vec![1.0]);
        assert_eq!(binomial_pmf(2, 0.5), vec![0.25, 0.5, 0.25]);
        let big = binomial_pmf(1024, 0.5);
        assert_abs_diff_eq!(big.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(big.iter().all(|v| v.is_finite() && *v >= 0.0));
        let b = binomial_pmf(3, 0.2);
        assert_abs_diff_eq!(b[1], 3.0 * 0.2 * 0.64, epsilon = 1e-15);
    }

    #[test]
    fn bsc_cases() {
        let (_, s) = bsc(0.0).unwrap();
        assert_eq!(s, ProtectionScheme::identity(2));
        let (_, s) = bsc(0.5).unwrap();
        assert_eq!(s.to_rows(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let (px, s) = bsc(0.25).unwrap();
        assert_eq!(exp_leak(&px, &s).unwrap(), 1.5);
        assert!(bsc(0.6).is_err());
        assert!(bsc(-0.1).is_err());
    }

    #[test]
    fn square_multiply_cases() {
        let (ch, s) = square_multiply_channel(16, &BinomialNoiseSpec::new(0, 1.0)).unwrap();
        assert_eq!(exp_leak(ch.px(), &s).unwrap(), 17.0);
        let (ch, s) = square_multiply_channel(16, &BinomialNoiseSpec::new(2, 1.0)).unwrap();
        assert_abs_diff_eq!(exp_leak(ch.px(), &s).unwrap(), 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(total_cost(&ch, &s).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(ch.n(), 19);
        assert!(ch.is_staircase());
        let (ch, s) = square_multiply_channel(8, &BinomialNoiseSpec::new(3, 2.5)).unwrap();
        assert_abs_diff_eq!(total_cost(&ch, &s).unwrap(), 2.5 * 1.5, epsilon = 1e-12);
    }

    #[test]
    fn extension_cases() {
        let (y, s) = extension_scheme(&[1.0, 5.0, 7.0, 9.0, 11.0, 13.0], ExtensionSpec { width: 4 }).unwrap();
        assert_eq!(y, vec![1.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0, 17.0, 19.0, 21.0]);
        assert_eq!(s.rows(), 6);
        assert_eq!(s.row(0)[..5], [0.0625, 0.25, 0.375, 0.25, 0.0625]);

        let (y, s) = extension_scheme(&[3.0, 4.0], ExtensionSpec { width: 0 }).unwrap();
        assert_eq!(y, vec![3.0, 4.0]);
        assert_eq!(s, ProtectionScheme::identity(2));

        let (y, s) = extension_scheme(&[0.0, 2.0], ExtensionSpec { width: 1 }).unwrap();
        assert_eq!(y, vec![0.0, 2.0, 4.0]);
        assert_eq!(s.to_rows(), vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5]]);

        // gaps 1 and 3 each occur twice; the smaller wins
        let (y, _) = extension_scheme(&[0.0, 1.0, 4.0, 5.0, 8.0], ExtensionSpec { width: 1 }).unwrap();
        assert_eq!(y.last(), Some(&9.0));

        assert!(extension_scheme(&[1.0], ExtensionSpec { width: 2 }).is_err());
        assert!(extension_scheme(&[2.0, 1.0], ExtensionSpec { width: 1 }).is_err());
    }

    #[test]
    fn extension_channel_is_valid() {
        let px = Pmf::uniform(3).unwrap().with_labels(vec![10.0, 12.0, 14.0]).unwrap();
        let (ch, s) = extension_channel(&px, ExtensionSpec { width: 2 }).unwrap();
        crate::channel::validate_scheme(&ch, &s).unwrap();
        assert_abs_diff_eq!(total_cost(&ch, &s).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn random_instances() {
        assert_eq!(random_instance(4, 5, 7).unwrap(), random_instance(4, 5, 7).unwrap());
        assert_ne!(random_instance(4, 5, 7).unwrap(), random_instance(4, 5, 8).unwrap());
        for seed in 0..100 {
            let ch = random_instance(4, 4, seed).unwrap();
            assert!(ch.is_staircase());
            assert!((0..4).all(|x| ch.cost().is_finite(x, 3)));
            assert_eq!(ch.support().len(), 4);
        }
    }
}
