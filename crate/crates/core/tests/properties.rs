//! Property tests for spectra, rank selection, recommendation invariance
//! and the completion reduction.

use colrec::learner::{
    choose_rank, choose_rank_from_sigma, kappa_k, recommend, tie_tolerance, truncate, tvr, TieBreak,
};
use colrec::matrix::{
    numeric_rank, reorder_to_blocks, singular_value_gap, singular_values_of, spectral,
    BlockSpectra, GroupPartition, RatingsMatrix,
};
use colrec::mc::{rank, reduce_solution, PartialMatrix};
use colrec::popgap::ratings_gap;
use colrec::scenarios;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ratings(max_m: usize, max_n: usize) -> impl Strategy<Value = RatingsMatrix> {
    (1..=max_m, 1..=max_n).prop_flat_map(|(m, n)| {
        prop::collection::vec(0.0..5.0f64, m * n)
            .prop_map(move |d| RatingsMatrix::new(m, n, d).unwrap())
    })
}

/// Sparse variant: roughly half of the entries are exact zeros, which
/// produces rank deficiency and ties.
fn sparse_ratings(max_m: usize, max_n: usize) -> impl Strategy<Value = RatingsMatrix> {
    (1..=max_m, 1..=max_n).prop_flat_map(|(m, n)| {
        prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0..3.0f64], m * n)
            .prop_map(move |d| RatingsMatrix::new(m, n, d).unwrap())
    })
}

fn close_lists(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Singular values padded with zeros to `len`.
fn padded(mut v: Vec<f64>, len: usize) -> Vec<f64> {
    v.resize(len, 0.0);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn block_spectrum_is_union_of_blocks(a in ratings(5, 4), b in ratings(4, 3)) {
        let (m, n) = (a.rows() + b.rows(), a.cols() + b.cols());
        let mut full = DMatrix::zeros(m, n);
        full.view_mut((0, 0), a.shape()).copy_from(a.as_dmatrix());
        full.view_mut(a.shape(), b.shape()).copy_from(b.as_dmatrix());
        let got = singular_values_of(&full).unwrap();
        let mut union: Vec<f64> = singular_values_of(a.as_dmatrix()).unwrap();
        union.extend(singular_values_of(b.as_dmatrix()).unwrap());
        union.sort_by(|x, y| y.total_cmp(x));
        let len = got.len().max(union.len());
        let scale = 1e-9 * got[0].max(1.0);
        prop_assert!(close_lists(&padded(got, len), &padded(union, len), scale));
    }

    #[test]
    fn spectrum_matches_gram_eigenvalues(r in ratings(7, 5)) {
        let svd = singular_values_of(r.as_dmatrix()).unwrap();
        let gram = r.as_dmatrix().transpose() * r.as_dmatrix();
        let mut eig: Vec<f64> = gram
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|l| l.max(0.0).sqrt())
            .collect();
        eig.sort_by(|x, y| y.total_cmp(x));
        let len = svd.len().max(eig.len());
        // Square roots of Gram eigenvalues lose half the digits near zero,
        // so small values are compared on the squared scale.
        let (svd, eig) = (padded(svd, len), padded(eig, len));
        let s1 = svd[0].max(1.0);
        for (x, y) in svd.iter().zip(&eig) {
            prop_assert!((x * x - y * y).abs() <= 1e-9 * s1 * s1, "{x} vs {y}");
        }
    }

    #[test]
    fn spectrum_is_permutation_invariant(r in ratings(6, 6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<usize> = (0..r.rows()).collect();
        let mut cols: Vec<usize> = (0..r.cols()).collect();
        rows.shuffle(&mut rng);
        cols.shuffle(&mut rng);
        let p = r.permuted(&rows, &cols).unwrap();
        let a = spectral(&r).unwrap();
        let b = spectral(&p).unwrap();
        prop_assert_eq!(a.numeric_rank, b.numeric_rank);
        prop_assert!(close_lists(&a.singular_values, &b.singular_values, 1e-9 * a.sigma(1).max(1.0)));
    }

    #[test]
    fn appending_a_column_interlaces(r in ratings(6, 4), col in prop::collection::vec(0.0..5.0f64, 6)) {
        let m = r.rows();
        let base = r.as_dmatrix().clone();
        let extended = base.clone().insert_column(r.cols(), 0.0);
        let mut extended = extended;
        for u in 0..m {
            extended[(u, r.cols())] = col[u];
        }
        let before = singular_values_of(&base).unwrap();
        let after = singular_values_of(&extended).unwrap();
        let tol = 1e-9 * after[0].max(1.0);
        for (j, s) in before.iter().enumerate() {
            prop_assert!(after[j] >= s - tol, "σ_{} dropped from {} to {}", j + 1, s, after[j]);
        }
        // Removing the column again never increases any singular value.
        for (j, s) in before.iter().enumerate() {
            prop_assert!(*s <= after[j] + tol);
        }
        // Upper interlacing: σ_{j+1}(extended) ≤ σ_j(base).
        for j in 0..before.len() {
            if j + 1 < after.len() {
                prop_assert!(after[j + 1] <= before[j] + tol);
            }
        }
    }

    #[test]
    fn tvr_increases_to_one(r in ratings(6, 6)) {
        let k = spectral(&r).unwrap().numeric_rank;
        prop_assume!(k >= 1);
        let mut prev = 0.0;
        for j in 1..=k {
            let t = tvr(&r, j).unwrap();
            prop_assert!(t > prev);
            prev = t;
        }
        prop_assert!((prev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_rule_matches_tvr_increment_rule(r in sparse_ratings(6, 6), frac in 0.0..1.2f64) {
        let s = spectral(&r).unwrap();
        let rk = s.numeric_rank;
        prop_assume!(rk >= 1);
        let alpha = frac * s.sigma(1);
        let k = choose_rank(&r, alpha).unwrap();
        // TVR(k + 1) − TVR(k) = σ_{k+1} / Σσ; the increment rule picks the
        // first k whose next increment is at most α / Σσ.
        let total: f64 = s.singular_values[..rk].iter().sum();
        let by_tvr = (1..=rk)
            .find(|&j| {
                let next = if j < rk { tvr(&r, j + 1).unwrap() } else { 1.0 };
                (next - tvr(&r, j).unwrap()) * total <= alpha + tie_tolerance(s.sigma(1))
            })
            .unwrap_or(rk);
        prop_assert_eq!(k, by_tvr);
        prop_assert!((1..=rk).contains(&k));
        prop_assert!(s.sigma(k + 1) <= alpha + 1e-9 * s.sigma(1).max(1.0));
        if k > 1 {
            prop_assert!(s.sigma(k) > alpha);
        }
    }

    #[test]
    fn eckart_young_residual(r in ratings(7, 6), pick in 0.0..1.0f64) {
        let s = spectral(&r).unwrap();
        prop_assume!(s.numeric_rank >= 1);
        let k = 1 + ((s.numeric_rank - 1) as f64 * pick) as usize;
        let hat = truncate(&r, k).unwrap();
        let resid = (r.as_dmatrix() - hat.as_dmatrix()).norm_squared();
        let tail: f64 = s.singular_values[k..].iter().map(|x| x * x).sum();
        prop_assert!((resid - tail).abs() <= 1e-9 * s.sigma(1).powi(2).max(1.0));
        let hat_rank = numeric_rank(&singular_values_of(hat.as_dmatrix()).unwrap());
        prop_assert_eq!(hat_rank, k);
    }

    #[test]
    fn kappa_is_nonincreasing(r in ratings(6, 6)) {
        let p = GroupPartition::leading(r.rows(), r.cols(), r.rows(), r.cols()).unwrap();
        let ks: Vec<f64> = (1..=r.cols()).map(|k| kappa_k(&r, &p, k).unwrap()).collect();
        prop_assert!(ks.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn tie_sets_survive_permutation(r in sparse_ratings(6, 5), seed in any::<u64>(), k in 1usize..=3) {
        prop_assume!(k <= r.cols());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<usize> = (0..r.rows()).collect();
        let mut cols: Vec<usize> = (0..r.cols()).collect();
        rows.shuffle(&mut rng);
        cols.shuffle(&mut rng);
        let p = r.permuted(&rows, &cols).unwrap();
        let a = recommend(&r, k, TieBreak::Smallest).unwrap();
        let b = recommend(&p, k, TieBreak::Smallest).unwrap();
        // Row `u` of the permuted matrix is row `rows[u]` of the original
        // and column `i` is column `cols[i]`.
        let map = |v: &[usize]| {
            let mut out: Vec<usize> = v.iter().map(|&i| cols[i]).collect();
            out.sort_unstable();
            out
        };
        for (u, &src) in rows.iter().enumerate() {
            let orig = &a.users[src];
            prop_assert_eq!(map(&b.users[u].tie_set()), orig.tie_set());
            prop_assert_eq!(map(&b.users[u].pop_tie_set()), orig.pop_tie_set());
        }
    }

    #[test]
    fn reduction_never_raises_rank(seed in any::<u64>(), density in 0.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sc = scenarios::random_block(&mut rng);
        let (m, n) = sc.matrix.shape();
        // Observe only majority-block and zero entries, so the zero-block
        // hypothesis holds.
        let rows: Vec<Vec<Option<f64>>> = (0..m)
            .map(|u| {
                (0..n)
                    .map(|i| {
                        let v = sc.matrix.get(u, i);
                        let allowed = v == 0.0 || sc.partition.is_majority_user(u);
                        (allowed && rng.gen_bool(density)).then_some(v)
                    })
                    .collect()
            })
            .collect();
        let partial = PartialMatrix::from_rows(&rows).unwrap();
        prop_assert!(partial.satisfies_prop22(&sc.partition));
        let x = RatingsMatrix::new(
            m,
            n,
            (0..m * n)
                .map(|k| partial.get(k / n, k % n).unwrap_or_else(|| rng.gen_range(0.0..2.0)))
                .collect(),
        )
        .unwrap();
        let reduced = reduce_solution(&x, &sc.partition).unwrap();
        prop_assert!(partial.is_feasible(&reduced));
        prop_assert!(rank(&reduced).unwrap() <= rank(&x).unwrap());
    }

    #[test]
    fn ratings_gap_falls_as_sigma_grows(kappa in 0.0..10.0f64, n in 2usize..50, s in 0.1..20.0f64, ds in 0.0..5.0f64) {
        let a = ratings_gap(kappa, n, s).unwrap();
        let b = ratings_gap(kappa, n, s + ds).unwrap();
        prop_assert!(b <= a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rank_inside_gap_is_majority_rank(seed in any::<u64>(), t in 0.001..0.999f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sc = scenarios::random_block(&mut rng);
        let gap = singular_value_gap(&sc.matrix, &sc.partition).unwrap().unwrap();
        let k_maj = BlockSpectra::compute(&sc.matrix, &sc.partition).unwrap().k_maj();
        let alpha = gap.lo + t * (gap.hi - gap.lo);
        prop_assert_eq!(choose_rank(&sc.matrix, alpha).unwrap(), k_maj);
        let s = spectral(&sc.matrix).unwrap();
        prop_assert_eq!(choose_rank_from_sigma(&s.singular_values, alpha), k_maj);
    }

    #[test]
    fn reordering_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sc = scenarios::random_block(&mut rng);
        let ord = reorder_to_blocks(&sc.matrix, &sc.partition).unwrap();
        prop_assert_eq!(ord.restore().unwrap(), sc.matrix.clone());
        let (mb, nb) = (sc.partition.m_bar(), sc.partition.n_bar());
        let lead = GroupPartition::leading(sc.matrix.rows(), sc.matrix.cols(), mb, nb).unwrap();
        prop_assert!(lead.validate_for(&ord.matrix).is_ok());
        let a = spectral(&sc.matrix).unwrap().singular_values;
        let b = spectral(&ord.matrix).unwrap().singular_values;
        prop_assert!(close_lists(&a, &b, 1e-9 * a[0].max(1.0)));
    }
}
