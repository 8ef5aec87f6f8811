//! Popularity-gap checks against brute-force and SVD oracles.

use colrec::matrix::{singular_values_of, RatingsMatrix};
use colrec::popgap::{
    apply_general, class_membership, classify_users, gap_interval_for, no_larger_nbar_check,
    popular_prefs, projection_gap, sigma_hat, singular_bounds_check, switch_users,
    PopularitySplit,
};
use colrec::scenarios::popularity_gap_instance;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit_ratings(max_m: usize, max_n: usize) -> impl Strategy<Value = (RatingsMatrix, usize)> {
    (1..=max_m, 2..=max_n).prop_flat_map(|(m, n)| {
        (
            prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64], m * n),
            1..n,
        )
            .prop_map(move |(d, nb)| (RatingsMatrix::new(m, n, d).unwrap(), nb))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn classes_match_argmax_scan((r, nb) in unit_ratings(8, 6)) {
        let split = PopularitySplit::new(&r, nb).unwrap();
        for (u, c) in classify_users(&split).iter().enumerate() {
            let row = r.row(u);
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let argmax: Vec<usize> = (0..row.len()).filter(|&i| row[i] == best).collect();
            prop_assert_eq!(c.majority, argmax.iter().any(|&i| i < nb));
            prop_assert_eq!(c.minority, argmax.iter().any(|&i| i >= nb));
        }
    }

    #[test]
    fn retained_block_keeps_its_spectrum((r, nb) in unit_ratings(8, 6)) {
        let split = PopularitySplit::new(&r, nb).unwrap();
        let full = singular_values_of(popular_prefs(&split).as_dmatrix()).unwrap();
        let block = singular_values_of(&split.popular_block()).unwrap();
        let tol = 1e-9 * full[0].max(1.0);
        for (k, s) in full.iter().enumerate() {
            prop_assert!((s - block.get(k).copied().unwrap_or(0.0)).abs() <= tol);
        }
    }

    /// The upper bound needs no class membership.
    #[test]
    fn upper_singular_bound_holds_everywhere((r, nb) in unit_ratings(8, 6)) {
        let split = PopularitySplit::new(&r, nb).unwrap();
        let b = singular_bounds_check(&split).unwrap();
        prop_assert!(b.sigma_nbar_next <= b.upper_bound * (1.0 + 1e-12) + 1e-12, "{:?}", b);
    }

    #[test]
    fn projection_gap_ignores_user_order(
        d in prop::collection::vec(0.05..=1.0f64, 8 * 4),
        nb in 1usize..4,
        seed in any::<u64>(),
    ) {
        let r = RatingsMatrix::new(8, 4, d).unwrap();
        let s = singular_values_of(r.as_dmatrix()).unwrap();
        // The top-n̄ subspace is only defined up to a gap after σ_n̄.
        prop_assume!(s[nb - 1] - s[nb] > 1e-3 * s[0]);
        let mut rows: Vec<usize> = (0..8).collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let p = r.permuted(&rows, &[0, 1, 2, 3]).unwrap();
        let a = projection_gap(&PopularitySplit::new(&r, nb).unwrap()).unwrap();
        let b = projection_gap(&PopularitySplit::new(&p, nb).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
}

#[test]
fn gap_interval_nonempty_across_sizes() {
    for n in 2..=100 {
        for nb in 1..n {
            let g = gap_interval_for(1.0, n, nb).unwrap_or_else(|| panic!("n = {n}, n̄ = {nb}"));
            assert!(g.lo < g.hi);
        }
    }
    let g = gap_interval_for(1.0, 6, 4).unwrap();
    assert!((g.lo - 2f64.sqrt()).abs() < 1e-12);
    assert!((g.hi - 2f64.powf(1.25) * 6f64.powf(0.75)).abs() < 1e-12);
    assert!((g.hi - 9.12).abs() < 5e-3);
}

#[test]
fn constructed_switch_users() {
    // Two popular items with three users each; users 6, 7, 8 top item 2,
    // user 9 tops item 3.
    let mut rows = vec![vec![0.0; 4]; 10];
    for u in 0..6 {
        rows[u][u / 3] = 1.0;
    }
    for u in 6..9 {
        rows[u][2] = 0.9;
        rows[u][0] = 0.3;
    }
    rows[9][3] = 0.8;
    rows[9][1] = 0.2;
    let r = RatingsMatrix::from_rows(&rows).unwrap();
    let split = PopularitySplit::new(&r, 2).unwrap();
    assert_eq!(switch_users(&split), vec![6, 7, 8]);
    let classes = classify_users(&split);
    assert!(switch_users(&split).iter().all(|&u| classes[u].minority));
}

#[test]
fn generated_instances_against_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut premise_checked = 0;
    for t in 0..12 {
        let inst = popularity_gap_instance(&mut rng).unwrap();
        let split = PopularitySplit::new(&inst.matrix, inst.n_bar).unwrap();

        // σ̂ never exceeds the (n̄+1)-th singular value of the manipulated
        // popular prefix.
        let s_hat = sigma_hat(&split, &inst.r_tilde).unwrap();
        let manipulated = apply_general(&split, &inst.r_tilde).unwrap();
        let wider = PopularitySplit::new(&manipulated, inst.n_bar + 1).unwrap();
        let s = singular_values_of(popular_prefs(&wider).as_dmatrix()).unwrap();
        assert!(s_hat <= s[inst.n_bar] + 1e-9, "instance {t}: {s_hat} > {}", s[inst.n_bar]);

        // Exhaustive sweep over larger prefixes whenever the premise holds.
        if let Some(verdict) = no_larger_nbar_check(&split).unwrap() {
            premise_checked += 1;
            let n = inst.matrix.cols();
            let brute = (inst.n_bar + 1..n).all(|nb| {
                !class_membership(&PopularitySplit::new(&inst.matrix, nb).unwrap())
                    .unwrap()
                    .in_class
            });
            assert_eq!(verdict, brute, "instance {t}");
            assert!(verdict, "instance {t}: a larger prefix is also in the class");
        }
    }
    assert!(premise_checked > 0, "no instance satisfied the premise");
}
