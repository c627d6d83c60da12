//! Superhedging value of the zero payoff by cutting planes.
//!
//! `V(K, π) = inf { f(π, a, h) : I_S(K, a, h) ≥ 0 for all S in the box }` is
//! a linear program with one constraint per scenario. The solver keeps a
//! finite scenario set, solves the LP over it, and asks the separation
//! oracle for the most violated scenario until none remains.
//!
//! The oracle is exact: every payoff is a call on a single asset, so the
//! payoff of a strategy is a sum of one piecewise-linear function per asset
//! and its minimum over the box is the sum of per-axis minima, each attained
//! at a kink (`0`, a strike, or the box edge).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lp::{solve_lp, LpProblem, LpStatus};
use crate::market::{MarketInstance, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Stop once the oracle's worst payoff is at least `-tol_cut`.
    pub tol_cut: f64,
    /// Prices below `-tol_label` are labelled as arbitrage.
    pub tol_label: f64,
    pub max_cuts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_cut: 1e-7,
            tol_label: 1e-9,
            max_cuts: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LsipStatus {
    Converged,
    CutLimit,
    LpFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsipResult {
    /// Price of the returned (exactly feasible) strategy.
    pub value: f64,
    /// Optimal value of the last LP relaxation; `lower_bound ≤ V ≤ value`.
    pub lower_bound: f64,
    pub strategy: Strategy,
    /// Scenarios whose constraints make up the final relaxation.
    pub scenarios: Vec<Vec<f64>>,
    pub iterations: usize,
    pub status: LsipStatus,
    /// Oracle minimum of the returned strategy's payoff; never negative.
    pub certified_min_payoff: f64,
    /// LP value after every cutting-plane round.
    pub bound_history: Vec<f64>,
}

/// Worst-case scenario of a strategy over the prediction box and its payoff.
pub fn separation_oracle(market: &MarketInstance, strategy: &Strategy) -> (Vec<f64>, f64) {
    let weights = strategy.net_positions();
    let mut scenario = Vec::with_capacity(market.assets());
    let mut total = strategy.cash;
    for (k, options) in market.options_by_asset().iter().enumerate() {
        let upper = market.box_upper()[k];
        let mut kinks: Vec<f64> = std::iter::once(0.0)
            .chain(options.iter().map(|&j| market.strikes()[j].min(upper)))
            .chain(std::iter::once(upper))
            .collect();
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();

        let eval = |s: f64| -> f64 {
            options
                .iter()
                .map(|&j| weights[j] * market.payoffs()[j].eval(market.strikes()[j], s))
                .sum()
        };
        let mut best = (kinks[0], eval(kinks[0]));
        for &s in &kinks[1..] {
            let v = eval(s);
            if v < best.1 {
                best = (s, v);
            }
        }
        scenario.push(best.0);
        total += best.1;
    }
    (scenario, total)
}

/// Oracle-certified worst payoff, as a callback for
/// [`MarketInstance::classify_strategy`].
pub fn worst_payoff(market: &MarketInstance, strategy: &Strategy) -> f64 {
    separation_oracle(market, strategy).1
}

/// Raises the cash position until the oracle certifies a nonnegative payoff.
/// Payoff and price both move one-for-one with the cash, so this costs
/// exactly the violation.
pub fn repair_feasibility(market: &MarketInstance, strategy: &mut Strategy) -> f64 {
    let mut worst = worst_payoff(market, strategy);
    while worst < 0.0 {
        let bump = (-worst).max(f64::EPSILON * strategy.cash.abs().max(1.0));
        strategy.cash += bump;
        worst = worst_payoff(market, strategy);
    }
    worst
}

fn constraint_row(market: &MarketInstance, scenario: &[f64]) -> Vec<f64> {
    let n = market.n_options();
    let psi = market.option_payoffs(scenario);
    let mut row = Vec::with_capacity(1 + 2 * n);
    row.push(1.0);
    row.extend_from_slice(&psi);
    row.extend(psi.iter().map(|p| -p));
    row
}

fn base_problem(market: &MarketInstance) -> LpProblem {
    let n = market.n_options();
    let b = market.bounds();
    let mut objective = Vec::with_capacity(1 + 2 * n);
    objective.push(1.0);
    objective.extend_from_slice(market.ask());
    objective.extend(market.bid().iter().map(|p| -p));
    let mut lower = vec![0.0; 1 + 2 * n];
    lower[0] = b.cash_min;
    let mut upper = vec![b.position_max; 1 + 2 * n];
    upper[0] = market.cash_max();
    LpProblem::new(objective, lower, upper)
}

fn clamp_to_bounds(market: &MarketInstance, x: &[f64]) -> Strategy {
    let mut s = Strategy::from_slice(x);
    let hmax = market.bounds().position_max;
    for h in s.long.iter_mut().chain(s.short.iter_mut()) {
        *h = h.clamp(0.0, hmax);
    }
    s.cash = s.cash.max(market.bounds().cash_min);
    s
}

/// Computes `V(K, π)` together with an exactly feasible strategy whose price
/// exceeds the LP lower bound by at most `tol_cut` (plus round-off).
pub fn solve_superhedge(market: &MarketInstance, cfg: &SolverConfig) -> LsipResult {
    let n = market.n_options();
    let mut problem = base_problem(market);
    let mut scenarios = vec![vec![0.0; market.assets()], market.box_upper().to_vec()];
    for s in &scenarios {
        problem.push_row(constraint_row(market, s), 0.0);
    }

    let mut bound_history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let sol = match solve_lp(&problem) {
            Ok(sol) if sol.status == LpStatus::Optimal => sol,
            other => {
                log::warn!("LP relaxation failed after {} cuts: {:?}", scenarios.len(), other.map(|s| s.status));
                let mut strategy = Strategy::zero(n);
                strategy.cash = 0.0f64.max(market.bounds().cash_min);
                let certified = repair_feasibility(market, &mut strategy);
                return LsipResult {
                    value: market.strategy_price(&strategy).expect("dimensions match"),
                    lower_bound: f64::NEG_INFINITY,
                    strategy,
                    scenarios,
                    iterations,
                    status: LsipStatus::LpFailure,
                    certified_min_payoff: certified,
                    bound_history,
                };
            }
        };
        if let Some(&prev) = bound_history.last() {
            debug_assert!(
                sol.value >= prev - 1e-9 * (1.0 + prev.abs()),
                "cutting-plane bound decreased: {prev} -> {}",
                sol.value
            );
        }
        bound_history.push(sol.value);

        let mut strategy = clamp_to_bounds(market, &sol.x);
        let (scenario, worst) = separation_oracle(market, &strategy);
        let done = worst >= -cfg.tol_cut;
        if done || scenarios.len() >= cfg.max_cuts {
            let certified = repair_feasibility(market, &mut strategy);
            return LsipResult {
                value: market.strategy_price(&strategy).expect("dimensions match"),
                lower_bound: sol.value,
                strategy,
                scenarios,
                iterations,
                status: if done {
                    LsipStatus::Converged
                } else {
                    LsipStatus::CutLimit
                },
                certified_min_payoff: certified,
                bound_history,
            };
        }
        problem.push_row(constraint_row(market, &scenario), 0.0);
        scenarios.push(scenario);
    }
}

/// One training sample: flattened `(K, π⁺, π⁻)` with its price label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    /// Superhedging value `Y ≈ V(K, π)`.
    pub price: f64,
    /// `-1` if the market admits arbitrage (`Y < -tol_label`), else `0`.
    pub sign: i8,
}

impl LabeledSample {
    pub fn is_arbitrage(&self) -> bool {
        self.sign < 0
    }
}

pub fn sign_label(price: f64, tol_label: f64) -> i8 {
    if price < -tol_label {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("superhedging solve did not converge ({status:?}, {iterations} rounds)")]
pub struct LabelError {
    pub status: LsipStatus,
    pub iterations: usize,
}

/// Labels a market by its superhedging value. Unconverged solves are
/// reported instead of producing a possibly wrong label.
pub fn label_sample(market: &MarketInstance, cfg: &SolverConfig) -> Result<LabeledSample, LabelError> {
    let res = solve_superhedge(market, cfg);
    if res.status != LsipStatus::Converged {
        return Err(LabelError {
            status: res.status,
            iterations: res.iterations,
        });
    }
    Ok(LabeledSample {
        features: market.features(),
        price: res.value,
        sign: sign_label(res.value, cfg.tol_label),
    })
}

/// Labels markets in parallel; results keep the input order.
pub fn label_batch(
    markets: &[MarketInstance],
    cfg: &SolverConfig,
) -> Vec<Result<LabeledSample, LabelError>> {
    markets.par_iter().map(|m| label_sample(m, cfg)).collect()
}
