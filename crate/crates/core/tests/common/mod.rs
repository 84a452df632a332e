//! Brute-force oracles shared by the integration tests. Nothing here calls
//! the library's metric or optimization code.
#![allow(dead_code)]

use leakbound::Channel;

/// Exp-leak and cost of the deterministic scheme sending row `x` to `targets[x]`.
pub fn deterministic_point(channel: &Channel, targets: &[usize]) -> Option<(usize, f64)> {
    let px = channel.px().probs();
    let mut used = vec![false; channel.n()];
    let mut cost = 0.0;
    for (x, &y) in targets.iter().enumerate() {
        if px[x] == 0.0 {
            continue;
        }
        let c = channel.cost().get(x, y);
        if c.is_infinite() {
            return None;
        }
        used[y] = true;
        cost += px[x] * c;
    }
    Some((used.iter().filter(|&&u| u).count(), cost))
}

/// Calls `visit` with every assignment of `m` rows to `n` columns.
pub fn for_each_assignment(m: usize, n: usize, mut visit: impl FnMut(&[usize])) {
    let mut t = vec![0usize; m];
    loop {
        visit(&t);
        let mut i = 0;
        while i < m {
            t[i] += 1;
            if t[i] < n {
                break;
            }
            t[i] = 0;
            i += 1;
        }
        if i == m {
            return;
        }
    }
}

/// Cheapest deterministic cost at each exact exp-leak `1..=n` (infinite
/// when no deterministic scheme has that exp-leak).
pub fn best_by_leak(channel: &Channel) -> Vec<f64> {
    let n = channel.n();
    let mut best = vec![f64::INFINITY; n + 1];
    for_each_assignment(channel.m(), n, |t| {
        if let Some((l, c)) = deterministic_point(channel, t) {
            if c < best[l] {
                best[l] = c;
            }
        }
    });
    best
}

/// Cheapest deterministic cost with exp-leak at most `l`, for `l` in `1..=n`.
pub fn deterministic_curve(channel: &Channel) -> Vec<f64> {
    let best = best_by_leak(channel);
    let mut out = vec![f64::INFINITY; best.len()];
    for l in 1..best.len() {
        out[l] = out[l - 1].min(best[l]);
    }
    out
}

/// Lower convex envelope of the deterministic curve, evaluated at `bound`.
pub fn hull_cost(channel: &Channel, bound: f64) -> f64 {
    let d = deterministic_curve(channel);
    let n = d.len() - 1;
    let mut best = f64::INFINITY;
    for i in 1..=n {
        if d[i].is_infinite() || i as f64 > bound {
            continue;
        }
        best = best.min(d[i]);
        for j in i + 1..=n {
            if d[j].is_infinite() || (j as f64) < bound {
                continue;
            }
            let t = (bound - i as f64) / (j - i) as f64;
            best = best.min(d[i] + t * (d[j] - d[i]));
        }
    }
    best
}

/// Mutual information in bits computed straight from its definition.
pub fn mi_bits(px: &[f64], rows: &[Vec<f64>]) -> f64 {
    let n = rows[0].len();
    let py: Vec<f64> = (0..n).map(|y| px.iter().zip(rows).map(|(p, r)| p * r[y]).sum()).collect();
    let mut total = 0.0;
    for (p, r) in px.iter().zip(rows) {
        for y in 0..n {
            if *p > 0.0 && r[y] > 0.0 {
                total += p * r[y] * (r[y] / py[y]).log2();
            }
        }
    }
    total
}

/// Binary entropy in bits.
pub fn h2(p: f64) -> f64 {
    if p == 0.0 || p == 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

/// Sum over columns of the largest entry among rows with positive probability.
pub fn exp_leak(px: &[f64], rows: &[Vec<f64>]) -> f64 {
    let n = rows[0].len();
    (0..n)
        .map(|y| px.iter().zip(rows).filter(|(p, _)| **p > 0.0).map(|(_, r)| r[y]).fold(0.0, f64::max))
        .sum()
}

/// Expected cost `sum p(x) c(x,y) p_xy`, skipping zero-mass cells.
pub fn cost(channel: &Channel, rows: &[Vec<f64>]) -> f64 {
    let px = channel.px().probs();
    let mut total = 0.0;
    for (x, r) in rows.iter().enumerate() {
        for (y, v) in r.iter().enumerate() {
            if px[x] > 0.0 && *v > 0.0 {
                total += px[x] * v * channel.cost().get(x, y);
            }
        }
    }
    total
}

/// Fractional columns plus hanging entries, over rows with positive probability.
pub fn randomness(px: &[f64], rows: &[Vec<f64>]) -> usize {
    let tol = 1e-9;
    let n = rows[0].len();
    let mut r = 0;
    for y in 0..n {
        let col: Vec<f64> = px.iter().zip(rows).filter(|(p, _)| **p > 0.0).map(|(_, row)| row[y]).collect();
        let max = col.iter().copied().fold(0.0, f64::max);
        if max > tol && max < 1.0 - tol {
            r += 1;
        }
        r += col.iter().filter(|&&v| v > tol && v < max - tol).count();
    }
    r
}

/// Cheapest cost of serving every row from a column set that contains
/// `y0` and has at most `size` columns.
pub fn best_subset_cost(channel: &Channel, y0: usize, size: usize) -> f64 {
    let n = channel.n();
    let px = channel.px().probs();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask >> y0 & 1 == 0 || mask.count_ones() as usize > size {
            continue;
        }
        let mut total = 0.0;
        for (x, p) in px.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            let c = (0..n).filter(|y| mask >> y & 1 == 1).map(|y| channel.cost().get(x, y)).fold(f64::INFINITY, f64::min);
            total += p * c;
        }
        best = best.min(total);
    }
    best
}

/// Cost of serving every row from column set `set`.
pub fn set_cost(channel: &Channel, set: &[usize]) -> f64 {
    let px = channel.px().probs();
    px.iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(x, p)| p * set.iter().map(|&y| channel.cost().get(x, y)).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Lowest-index column with the cheapest single-column cost.
pub fn cheapest_singleton(channel: &Channel) -> usize {
    let mut best = (0, f64::INFINITY);
    for y in 0..channel.n() {
        let c = set_cost(channel, &[y]);
        if c < best.1 {
            best = (y, c);
        }
    }
    best.0
}
