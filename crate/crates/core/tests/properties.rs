mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use leakbound::casegen::{extension_scheme, random_instance, ExtensionSpec};
use leakbound::determinize::{classify, delta_bounds, generate_q, randomness, water_fill};
use leakbound::greedy::{greedy_bound_check, greedy_run, induced_scheme, set_objective};
use leakbound::metrics::{channel_capacity, maximal_leakage, mult_leakage, mutual_information, SecretJoint};
use leakbound::simplex::{max_violation, solve, LinearProgram, LpStatus, Relation};
use leakbound::{
    build_curve, exp_leak, min_cost_for_leak, total_cost, validate_scheme, Channel, CostMatrix, Matrix, Pmf,
    ProtectionScheme,
};

const CASES: u32 = 128;

/// Random scheme that only puts mass on finite-cost cells.
fn random_scheme(channel: &Channel, rng: &mut ChaCha8Rng, sparsity: f64) -> ProtectionScheme {
    let rows: Vec<Vec<f64>> = (0..channel.m())
        .map(|x| {
            let finite: Vec<usize> = (0..channel.n()).filter(|&y| channel.cost().is_finite(x, y)).collect();
            let mut row = vec![0.0; channel.n()];
            for &y in &finite {
                if !rng.gen_bool(sparsity) {
                    row[y] = rng.gen::<f64>();
                }
            }
            if row.iter().all(|v| *v == 0.0) {
                row[finite[rng.gen_range(0..finite.len())]] = 1.0;
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect();
    ProtectionScheme::from_rows(&rows).unwrap()
}

fn random_pmf(rng: &mut ChaCha8Rng, m: usize) -> Pmf {
    let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = w.iter().sum();
    Pmf::new(w.iter().map(|v| v / s).collect()).unwrap()
}

fn unconstrained(rng: &mut ChaCha8Rng, m: usize, n: usize) -> (Pmf, ProtectionScheme) {
    let ch = Channel::new(random_pmf(rng, m), CostMatrix::from_rows(&vec![vec![0.0; n]; m]).unwrap()).unwrap();
    let scheme = random_scheme(&ch, rng, 0.3);
    (ch.px().clone(), scheme)
}

fn permuted(scheme: &ProtectionScheme, perm: &[usize]) -> ProtectionScheme {
    ProtectionScheme::from_matrix(scheme.matrix().permute_cols(perm))
}

fn shift(scheme: &ProtectionScheme, q: &leakbound::determinize::DirectionMatrix, delta: f64) -> ProtectionScheme {
    let rows: Vec<Vec<f64>> = scheme
        .to_rows()
        .iter()
        .enumerate()
        .map(|(x, r)| r.iter().enumerate().map(|(y, v)| v + delta * q.get(x, y) as f64).collect())
        .collect();
    ProtectionScheme::from_matrix(Matrix::from_rows(&rows).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..=6, 1usize..=6, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn cost_is_linear_and_mixing_keeps_validity((m, n, seed) in dims(), lambda in 0.0f64..=1.0) {
        let ch = random_instance(m, n, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p1 = random_scheme(&ch, &mut rng, 0.4);
        let p2 = random_scheme(&ch, &mut rng, 0.4);
        let mix = p1.blend(&p2, lambda).unwrap();
        prop_assert!(validate_scheme(&ch, &mix).is_ok());
        let want = lambda * common::cost(&ch, &p1.to_rows()) + (1.0 - lambda) * common::cost(&ch, &p2.to_rows());
        prop_assert!((total_cost(&ch, &mix).unwrap() - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn staircase_is_scale_invariant((m, n, seed) in dims(), s in 0.001f64..1000.0, scramble in any::<bool>()) {
        let ch = random_instance(m, n, seed).unwrap();
        let mut rows = ch.cost().matrix().to_rows();
        if scramble {
            rows.iter_mut().for_each(|r| r.reverse());
        }
        let cost = CostMatrix::from_rows(&rows).unwrap();
        prop_assert_eq!(cost.is_staircase_nondecreasing(), cost.scaled(s).unwrap().is_staircase_nondecreasing());
    }

    #[test]
    fn metrics_are_ordered_and_label_free((m, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (px, scheme) = unconstrained(&mut rng, m, n);
        let l = exp_leak(&px, &scheme).unwrap();
        let ml = l.log2();
        let mi = mutual_information(&px, &scheme).unwrap();
        let cc = channel_capacity(&scheme, &px.support(), 1e-9, 100_000).unwrap();
        prop_assert!(mi <= cc + 1e-6 && cc <= ml + 1e-6, "mi {} cc {} ml {}", mi, cc, ml);
        prop_assert!((1.0 - 1e-12..=n as f64 + 1e-12).contains(&l));
        prop_assert!((mi - common::mi_bits(px.probs(), &scheme.to_rows())).abs() <= 1e-9);

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let moved = permuted(&scheme, &perm);
        prop_assert!((maximal_leakage(&px, &moved).unwrap() - ml).abs() <= 1e-12);
        prop_assert!((mutual_information(&px, &moved).unwrap() - mi).abs() <= 1e-12);
        prop_assert!((channel_capacity(&moved, &px.support(), 1e-9, 100_000).unwrap() - cc).abs() <= 2e-9);
        let joint = SecretJoint::new(Pmf::uniform(1).unwrap(), Matrix::from_rows(&[px.probs().to_vec()]).unwrap()).unwrap();
        prop_assert!((mult_leakage(&joint, &moved).unwrap() - mult_leakage(&joint, &scheme).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn exp_leak_is_one_exactly_for_identical_rows((m, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (px, scheme) = unconstrained(&mut rng, m, n);
        let same = ProtectionScheme::from_rows(&vec![scheme.row(0).to_vec(); m]).unwrap();
        prop_assert!((exp_leak(&px, &same).unwrap() - 1.0).abs() <= 1e-12);
        let identical = (1..m).all(|x| scheme.row(x) == scheme.row(0));
        prop_assert_eq!(identical, (exp_leak(&px, &scheme).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn mult_leakage_never_exceeds_maximal((k, m, n, seed) in (1usize..=5, 1usize..=5, 1usize..=5, any::<u64>())) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pu = random_pmf(&mut rng, k);
        let rows: Vec<Vec<f64>> = (0..k).map(|_| random_pmf(&mut rng, m).probs().to_vec()).collect();
        let joint = SecretJoint::new(pu, Matrix::from_rows(&rows).unwrap()).unwrap();
        let (_, scheme) = unconstrained(&mut rng, m, n);
        let px = joint.marginal().unwrap();
        prop_assert!(mult_leakage(&joint, &scheme).unwrap() <= maximal_leakage(&px, &scheme).unwrap() + 1e-9);
    }

    #[test]
    fn simplex_returns_feasible_vertices_below_known_points(
        (vars, rows, seed) in (1usize..=6, 1usize..=6, any::<u64>())
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0: Vec<f64> = (0..vars).map(|_| rng.gen_range(0.0..3.0)).collect();
        let mut lp = LinearProgram::new((0..vars).map(|_| rng.gen_range(0.0..2.0)).collect());
        for _ in 0..rows {
            let a: Vec<f64> = (0..vars).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let ax: f64 = a.iter().zip(&x0).map(|(p, q)| p * q).sum();
            match rng.gen_range(0..3) {
                0 => lp.add(a, Relation::Le, ax + rng.gen_range(0.0..1.0)),
                1 => lp.add(a, Relation::Ge, ax - rng.gen_range(0.0..1.0)),
                _ => lp.add(a, Relation::Eq, ax),
            };
        }
        let sol = solve(&lp).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        prop_assert!(max_violation(&lp, &sol.values) <= 1e-7);
        // independent check of the constraints
        for c in &lp.constraints {
            let lhs: f64 = c.coeffs.iter().zip(&sol.values).map(|(p, q)| p * q).sum();
            let ok = match c.relation {
                Relation::Le => lhs <= c.rhs + 1e-7,
                Relation::Ge => lhs >= c.rhs - 1e-7,
                Relation::Eq => (lhs - c.rhs).abs() <= 1e-7,
            };
            prop_assert!(ok);
        }
        prop_assert!(sol.values.iter().all(|v| *v >= -1e-7));
        let at_x0: f64 = lp.objective.iter().zip(&x0).map(|(p, q)| p * q).sum();
        prop_assert!(sol.objective_value <= at_x0 + 1e-7);
        prop_assert_eq!(solve(&lp).unwrap(), sol);
    }

    #[test]
    fn tradeoff_is_monotone_convex_and_valid((m, n, seed) in dims(), a in 1.0f64..6.0, b in 1.0f64..6.0) {
        let ch = random_instance(m, n, seed).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let p_lo = min_cost_for_leak(&ch, lo).unwrap();
        let p_hi = min_cost_for_leak(&ch, hi).unwrap();
        let p_mid = min_cost_for_leak(&ch, (lo + hi) / 2.0).unwrap();
        prop_assert!(p_hi.cost <= p_lo.cost + 1e-7);
        prop_assert!(p_mid.cost <= (p_lo.cost + p_hi.cost) / 2.0 + 1e-7);
        for (p, bound) in [(&p_lo, lo), (&p_mid, (lo + hi) / 2.0), (&p_hi, hi)] {
            prop_assert!(validate_scheme(&ch, &p.scheme).is_ok());
            prop_assert!(common::exp_leak(ch.px().probs(), &p.scheme.to_rows()) <= bound + 1e-7);
            prop_assert!((common::cost(&ch, &p.scheme.to_rows()) - p.cost).abs() <= 1e-7);
        }
        let curve = build_curve(&ch).unwrap();
        let mix = curve.mixture_at(lo).unwrap();
        let blend = mix.blend().unwrap();
        prop_assert!(common::exp_leak(ch.px().probs(), &blend.to_rows()) <= lo + 1e-7);
        prop_assert!((common::cost(&ch, &blend.to_rows()) - p_lo.cost).abs() <= 1e-7);
    }

    #[test]
    fn water_fill_never_raises_cost_or_leak((m, n, seed) in dims()) {
        let ch = random_instance(m, n, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let scheme = random_scheme(&ch, &mut rng, 0.3);
        let filled = water_fill(&ch, &scheme).unwrap();
        prop_assert!(validate_scheme(&ch, &filled).is_ok());
        let px = ch.px().probs();
        prop_assert!(common::cost(&ch, &filled.to_rows()) <= common::cost(&ch, &scheme.to_rows()) + 1e-9);
        prop_assert!(common::exp_leak(px, &filled.to_rows()) <= common::exp_leak(px, &scheme.to_rows()) + 1e-9);
        // one hanging entry per row at most, and nothing to its right
        let cls = classify(&filled);
        for x in 0..m {
            let hanging: Vec<usize> = (0..n).filter(|&y| cls.hanging[x][y]).collect();
            prop_assert!(hanging.len() <= 1);
            if let Some(&h) = hanging.first() {
                prop_assert!(filled.row(x)[h + 1..].iter().all(|v| *v <= 1e-9));
            }
        }
    }

    #[test]
    fn perturbation_directions_balance_and_keep_the_objective_affine((m, n, seed) in (2usize..=6, 2usize..=6, any::<u64>()), frac in 0.05f64..0.95) {
        let ch = random_instance(m, n, seed).unwrap();
        let bound = 1.0 + frac * (n as f64 - 1.0);
        let pt = min_cost_for_leak(&ch, bound).unwrap();
        let filled = water_fill(&ch, &pt.scheme).unwrap();
        prop_assume!(randomness(&filled) > 0);
        let q = generate_q(&ch, &filled).unwrap();
        for x in 0..q.rows() {
            prop_assert_eq!(q.row_sum(x), 0);
            prop_assert!((0..q.cols()).all(|y| (-1..=1).contains(&q.get(x, y))));
        }
        prop_assert!(q.nonzeros() > 0);
        let (lo, hi) = delta_bounds(&ch, &filled, &q).unwrap();
        prop_assert!(lo < 0.0 && hi > 0.0);
        let alpha = pt.leak_price;
        let f = |d: f64| {
            let rows = shift(&filled, &q, d).to_rows();
            common::cost(&ch, &rows) + alpha * common::exp_leak(ch.px().probs(), &rows)
        };
        for end in [lo, hi] {
            let (a, b, c) = (f(0.0), f(end / 2.0), f(end));
            prop_assert!((b - (a + c) / 2.0).abs() <= 1e-9, "{} {} {}", a, b, c);
        }
    }

    #[test]
    fn greedy_traces_are_sound((m, n, seed) in (1usize..=7, 2usize..=8, any::<u64>())) {
        let ch = random_instance(m, n, seed).unwrap();
        let (state, points) = greedy_run(&ch, n).unwrap();
        prop_assert!(points.windows(2).all(|w| w[1].cost < w[0].cost));
        for p in &points {
            prop_assert!(p.scheme.is_deterministic());
            prop_assert!(validate_scheme(&ch, &p.scheme).is_ok());
            prop_assert!(p.leak <= p.set_size);
        }
        let mut set = vec![state.y0];
        for &y in &state.selected {
            set.push(y);
            let induced = induced_scheme(&ch, &set).unwrap();
            prop_assert!(induced.is_deterministic() && validate_scheme(&ch, &induced).is_ok());
            prop_assert!((set_objective(&ch, state.y0, &set[1..]).unwrap() + common::set_cost(&ch, &set)).abs() <= 1e-12);
        }
        for l in 2..=n {
            let opt = common::best_subset_cost(&ch, state.y0, l);
            prop_assert!(greedy_bound_check(&ch, l, opt).unwrap().holds);
        }
    }

    #[test]
    fn submodular_objective((m, n, seed) in (1usize..=6, 3usize..=8, any::<u64>())) {
        let ch = random_instance(m, n, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y0 = common::cheapest_singleton(&ch);
        let others: Vec<usize> = (0..n).filter(|&y| y != y0).collect();
        let b = others[rng.gen_range(0..others.len())];
        let c = others[(others.iter().position(|&y| y == b).unwrap() + 1) % others.len()];
        let a: Vec<usize> = others.iter().copied().filter(|&y| y != b && y != c && rng.gen_bool(0.5)).collect();
        let f = |extra: &[usize]| {
            let mut s = a.clone();
            s.extend_from_slice(extra);
            set_objective(&ch, y0, &s).unwrap()
        };
        prop_assert!(f(&[b]) + f(&[c]) >= f(&[b, c]) + f(&[]) - 1e-9);
    }

    #[test]
    fn extension_rows_move_up_only(len in 2usize..=8, start in -5.0f64..5.0, step in 0.5f64..3.0, width in 0usize..=6) {
        let labels: Vec<f64> = (0..len).map(|i| start + step * i as f64).collect();
        let (ys, scheme) = extension_scheme(&labels, ExtensionSpec { width }).unwrap();
        prop_assert_eq!(ys.len(), len + width);
        for (x, &lx) in labels.iter().enumerate() {
            let row = scheme.row(x);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().zip(&ys).all(|(p, y)| *p == 0.0 || *y >= lx));
        }
    }
}
