//! Randomized invariants that cut across module boundaries.

use proptest::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use grale::experiment::{kendall_tau, t_schedule};
use grale::graph::random_spanning_tree;
use grale::inference::{map_decode, max_marginals, EdgePotentials};
use grale::kernel::Alphabet;
use grale::learner::{feasibility_report, BlockLayout, MarginalDuals};

fn random_potentials(k: usize, seed: u64) -> EdgePotentials {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_spanning_tree(k, &mut rng).unwrap();
    let al = Alphabet::binary(k);
    let tables = g
        .edges()
        .iter()
        .map(|&(a, b)| {
            (0..al.pair_count(a, b))
                .map(|_| rng.random_range(-4.0..4.0))
                .collect()
        })
        .collect();
    EdgePotentials::new(&g, &al, tables).unwrap()
}

proptest! {
    #[test]
    fn decode_beats_random_labelings(k in 2usize..=8, seed in any::<u64>()) {
        let pot = random_potentials(k, seed);
        let (y, s) = map_decode(&pot);
        prop_assert!((pot.score_of(&y) - s).abs() <= 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        for _ in 0..20 {
            let cand: Vec<usize> = (0..k).map(|_| rng.random_range(0..2usize)).collect();
            prop_assert!(pot.score_of(&cand) <= s + 1e-9);
        }
    }

    #[test]
    fn every_node_max_marginal_peaks_at_the_map_score(k in 2usize..=8, seed in any::<u64>()) {
        let pot = random_potentials(k, seed);
        let (_, s) = map_decode(&pot);
        let mm = max_marginals(&pot);
        prop_assert!(mm.exact);
        for j in 0..k {
            let best = (0..mm.sizes[j])
                .map(|u| mm.values[(j, u)])
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((best - s).abs() <= 1e-9);
        }
    }

    #[test]
    fn labeling_mass_mixtures_are_always_feasible(
        k in 2usize..=6,
        m in 1usize..=5,
        seed in any::<u64>(),
        c in 0.1f64..10.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_spanning_tree(k, &mut rng).unwrap();
        let al = Alphabet::binary(k);
        let layout = BlockLayout::new(&g, &al);
        let mut duals = MarginalDuals::new(m, layout.clone());
        let edges = g.edges().to_vec();
        for i in 0..m {
            let combos = rng.random_range(0..=3);
            let mut weights: Vec<f64> = (0..combos).map(|_| rng.random::<f64>()).collect();
            let total: f64 = weights.iter().sum::<f64>() + 1e-9;
            let budget = c * rng.random::<f64>();
            for w in weights.iter_mut() {
                *w *= budget / total;
            }
            for &w in &weights {
                let y: Vec<usize> = (0..k).map(|_| rng.random_range(0..2usize)).collect();
                let block = duals.block_mut(i);
                for (e, &(a, b)) in edges.iter().enumerate() {
                    block[layout.offset(e) + al.pair_index(b, y[a], y[b])] += w;
                }
            }
        }
        let report = feasibility_report(&duals, c, &g, &al);
        prop_assert!(report.within(1e-9), "infeasible mixture: {:?}", report);
    }

    #[test]
    fn ensemble_size_schedule_is_increasing_and_capped(t in 1usize..=64) {
        let s = t_schedule(t);
        prop_assert_eq!(*s.first().unwrap(), 1);
        prop_assert_eq!(*s.last().unwrap(), t);
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn kendall_tau_stays_in_range(n in 2usize..=12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        prop_assert!(kendall_tau(&xs, &ys).abs() <= 1.0 + 1e-12);
        prop_assert!((kendall_tau(&xs, &xs) - 1.0).abs() <= 1e-12);
        prop_assert!((kendall_tau(&xs, &ys) + kendall_tau(&xs, &ys.iter().map(|v| -v).collect::<Vec<_>>())).abs() <= 1e-12);
    }

    #[test]
    fn random_trees_span_every_node(k in 1usize..=12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_spanning_tree(k, &mut rng).unwrap();
        prop_assert!(g.is_tree());
        prop_assert_eq!(g.n_edges(), k - 1);
        prop_assert!(g.diameter() <= k.saturating_sub(1));
    }
}
