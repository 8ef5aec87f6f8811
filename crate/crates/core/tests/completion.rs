//! Exploration and zero-padded completion against Monte Carlo and rank
//! oracles.

use std::fs::File;
use std::path::PathBuf;

use colrec::io::read_ratings_csv;
use colrec::matrix::{GroupPartition, RatingsMatrix};
use colrec::mc::{
    explore, omega_satisfies_prop22, rank, reduce_solution, sparsest_majority_completion,
    ObservedSet, PartialMatrix,
};
use colrec::scenarios;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn exploration_covers_pairs_uniformly() {
    let r = scenarios::d2(3, 1).matrix;
    let (m, n) = r.shape();
    let (rounds, per_round) = (3, 4);
    let mut hits = vec![0usize; m * n];
    let seeds = 1000;
    for seed in 0..seeds {
        for (u, i) in explore(&r, rounds, per_round, seed).unwrap().iter() {
            hits[u * n + i] += 1;
        }
    }
    let sampled = (rounds * per_round) as f64 / (m * n) as f64;
    let coverage = hits.iter().sum::<usize>() as f64 / (seeds as usize * m * n) as f64;
    assert!((coverage - sampled).abs() <= 0.02, "coverage {coverage} vs {sampled}");
    // Every pair individually stays within five binomial standard errors.
    let se = (sampled * (1.0 - sampled) / seeds as f64).sqrt();
    for (k, &h) in hits.iter().enumerate() {
        let f = h as f64 / seeds as f64;
        assert!((f - sampled).abs() <= 5.0 * se, "pair {k}: {f}");
    }
}

#[test]
fn omega_avoiding_positive_minority_entries_satisfies_hypothesis() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/c13_true.csv");
    let r = read_ratings_csv(File::open(path).unwrap()).unwrap().to_matrix().unwrap();
    let p = GroupPartition::leading(10, 10, 8, 8).unwrap();
    let positive_minority: Vec<(usize, usize)> = p
        .minority_users()
        .iter()
        .flat_map(|&u| p.minority_items().iter().map(move |&i| (u, i)))
        .filter(|&(u, i)| r.get(u, i) > 0.0)
        .collect();
    assert_eq!(positive_minority.len(), 2);
    let avoiding = ObservedSet::new(
        10,
        10,
        (0..100)
            .map(|k| (k / 10, k % 10))
            .filter(|pair| !positive_minority.contains(pair)),
    )
    .unwrap();
    assert!(omega_satisfies_prop22(&avoiding, &r, &p));
    let touching = ObservedSet::new(10, 10, [positive_minority[0]]).unwrap();
    assert!(!omega_satisfies_prop22(&touching, &r, &p));
}

#[test]
fn zero_padded_completion_never_beats_reduction_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut checked = 0;
    for seed in 0..400u64 {
        let sc = scenarios::random_block(&mut rng);
        let (m, n) = sc.matrix.shape();
        let omega = explore(&sc.matrix, 1, rng.gen_range(0..=m * n / 2), seed).unwrap();
        if !omega_satisfies_prop22(&omega, &sc.matrix, &sc.partition) {
            continue;
        }
        let partial = PartialMatrix::from_observed(&sc.matrix, &omega).unwrap();
        // Unobserved entries are arbitrary; observed ones come from the truth.
        let x = RatingsMatrix::new(
            m,
            n,
            (0..m * n)
                .map(|k| partial.get(k / n, k % n).unwrap_or_else(|| rng.gen_range(0.0..1.0)))
                .collect(),
        )
        .unwrap();
        assert!(partial.is_feasible(&x));
        let completion = sparsest_majority_completion(&partial, &sc.partition, Some(&x))
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        let reduced = reduce_solution(&x, &sc.partition).unwrap();
        assert_eq!(completion.matrix, reduced);
        assert!(completion.rank <= rank(&x).unwrap(), "seed {seed}");
        assert_eq!(completion.rank, rank(&reduced).unwrap());
        assert_eq!(completion.rank, completion.majority_rank);
        checked += 1;
    }
    assert!(checked >= 100, "only {checked} feasible instances");
}
