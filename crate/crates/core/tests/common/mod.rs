//! Test-side oracles that share no code with the cutting-plane solver
//! beyond the LP core.

#![allow(dead_code)]

use arbdetect_core::lp::{solve_lp, LpProblem, LpStatus};
use arbdetect_core::market::{MarketBounds, MarketInstance, Strategy};
use arbdetect_core::train::generator::sample_market;
use arbdetect_core::train::GeneratorConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Call payoffs evaluated directly from strikes, without the market model.
pub fn raw_payoffs(m: &MarketInstance, s: &[f64]) -> Vec<f64> {
    m.payoffs()
        .iter()
        .zip(m.strikes())
        .map(|(p, &k)| (s[p.asset] - k).max(0.0))
        .collect()
}

pub fn raw_payoff(m: &MarketInstance, x: &[f64], s: &[f64]) -> f64 {
    let n = m.n_options();
    x[0] + raw_payoffs(m, s)
        .iter()
        .enumerate()
        .map(|(j, p)| (x[1 + j] - x[1 + n + j]) * p)
        .sum::<f64>()
}

/// Every point of the uniform grid with spacing `step` on the box.
pub struct Grid {
    axes: Vec<Vec<f64>>,
}

impl Grid {
    pub fn new(m: &MarketInstance, step: f64) -> Self {
        let axes = m
            .box_upper()
            .iter()
            .map(|&u| {
                let k = (u / step).round() as usize;
                (0..=k).map(|i| (i as f64 * step).min(u)).collect()
            })
            .collect();
        Grid { axes }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn point(&self, mut index: usize) -> Vec<f64> {
        self.axes
            .iter()
            .map(|a| {
                let v = a[index % a.len()];
                index /= a.len();
                v
            })
            .collect()
    }
}

/// Smallest payoff of a stacked strategy over every grid point.
pub fn grid_min_payoff(m: &MarketInstance, x: &[f64], grid: &Grid) -> (f64, Vec<f64>) {
    let mut best = (f64::INFINITY, Vec::new());
    for i in 0..grid.len() {
        let s = grid.point(i);
        let v = raw_payoff(m, x, &s);
        if v < best.0 {
            best = (v, s);
        }
    }
    best
}

/// Optimal value of the LP with one constraint per grid point, found by
/// adding the most violated grid point until all of them hold.
pub fn grid_lp_value(m: &MarketInstance, step: f64) -> (f64, Strategy) {
    let n = m.n_options();
    let b = m.bounds();
    let mut objective = vec![1.0];
    objective.extend_from_slice(m.ask());
    objective.extend(m.bid().iter().map(|p| -p));
    let cash_max = 2.0 * n as f64 * b.position_max * m.box_upper().iter().copied().fold(0.0, f64::max) + 1.0;
    let mut lower = vec![b.cash_min];
    let mut upper = vec![cash_max];
    lower.extend(vec![0.0; 2 * n]);
    upper.extend(vec![b.position_max; 2 * n]);
    let mut lp = LpProblem::new(objective, lower, upper);
    let grid = Grid::new(m, step);
    let add = |lp: &mut LpProblem, s: &[f64]| {
        let p = raw_payoffs(m, s);
        let mut row = vec![1.0];
        row.extend_from_slice(&p);
        row.extend(p.iter().map(|v| -v));
        lp.push_row(row, 0.0);
    };
    add(&mut lp, &grid.point(0));
    add(&mut lp, &grid.point(grid.len() - 1));
    for _ in 0..2000 {
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal, "grid LP failed");
        let (worst, s) = grid_min_payoff(m, &sol.x, &grid);
        if worst >= -1e-10 {
            return (sol.value, Strategy::from_slice(&sol.x));
        }
        add(&mut lp, &s);
    }
    panic!("grid LP did not converge");
}

/// Lipschitz bound of any admissible strategy payoff in the sup norm.
pub fn payoff_lipschitz(m: &MarketInstance) -> f64 {
    m.n_options() as f64 * m.bounds().position_max
}

/// Small random markets: `d ∈ {1, 2}`, at most six options, random
/// quotes that may or may not admit arbitrage.
pub fn random_small_market(seed: u64) -> MarketInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assets = rng.gen_range(1..=2usize);
    let per_asset = if assets == 1 { rng.gen_range(1..=6usize) } else { rng.gen_range(1..=3usize) };
    let gen = GeneratorConfig {
        assets,
        strikes_per_asset: per_asset - 1,
        include_underlying: true,
        arbitrage_prob: 0.5,
        max_half_spread: rng.gen_range(0.0..0.02),
        bounds: MarketBounds {
            position_max: rng.gen_range(0.5..2.0),
            ..MarketBounds::default()
        },
        ..GeneratorConfig::default()
    };
    sample_market(&gen, &mut rng).unwrap()
}
