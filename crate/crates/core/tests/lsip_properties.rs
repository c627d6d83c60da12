mod common;

use arbdetect_core::lsip::{separation_oracle, solve_superhedge, LsipStatus, SolverConfig};
use arbdetect_core::market::Strategy;
use common::{grid_lp_value, grid_min_payoff, payoff_lipschitz, random_small_market, Grid};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_minimum_matches_grid_scan(seed in 0u64..10_000) {
        let m = random_small_market(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = m.n_options();
        let h = m.bounds().position_max;
        let s = Strategy {
            cash: rng.gen_range(-1.0..1.0),
            long: (0..n).map(|_| rng.gen_range(0.0..h)).collect(),
            short: (0..n).map(|_| rng.gen_range(0.0..h)).collect(),
        };
        let (scenario, value) = separation_oracle(&m, &s);
        let step = 0.01;
        let (grid_min, _) = grid_min_payoff(&m, &s.to_vec(), &Grid::new(&m, step));
        // exact minimum: never above any grid value, never far below
        prop_assert!(value <= grid_min + 1e-12);
        prop_assert!(value >= grid_min - payoff_lipschitz(&m) * step - 1e-12);
        prop_assert!((m.strategy_payoff(&s, &scenario).unwrap() - value).abs() < 1e-12);
    }

    #[test]
    fn solver_is_sandwiched_and_feasible(seed in 0u64..10_000) {
        let m = random_small_market(seed);
        let r = solve_superhedge(&m, &SolverConfig::default());
        prop_assert!(r.status == LsipStatus::Converged);
        prop_assert!(r.lower_bound <= r.value + 1e-9);
        prop_assert!(r.value <= 1e-12);
        prop_assert!(r.certified_min_payoff >= 0.0);
        prop_assert!((m.strategy_price(&r.strategy).unwrap() - r.value).abs() < 1e-12);
        prop_assert!(r.strategy.within_bounds(m.bounds()));
        prop_assert!(r.bound_history.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solver_matches_brute_force_grid(seed in 0u64..10_000) {
        let m = random_small_market(seed);
        let step = 0.01;
        let (grid_value, _) = grid_lp_value(&m, step);
        let r = solve_superhedge(&m, &SolverConfig::default());
        // the grid relaxes the box constraints, so it can only be cheaper
        prop_assert!(grid_value <= r.value + 1e-7);
        prop_assert!(r.value - grid_value <= 1e-6 + payoff_lipschitz(&m) * step);
    }
}
