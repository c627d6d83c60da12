//! Training of the arbitrage-detecting network.
//!
//! Every sample contributes
//!
//! ```text
//! f(π, NN(x)) + γ·mean_j((-I_{S_j}(K, NN(x)))⁺)² + γ·(-(Ỹ + 0.5)·f(π, NN(x)))⁺
//! ```
//!
//! where the first penalty punishes negative payoffs on sampled scenarios
//! and the second vanishes exactly when the sign of the network's price
//! agrees with the precomputed label `Ỹ`. The penalty weight `γ` ramps
//! linearly from 1 to `γ_max` over the run.

pub mod generator;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::Example;
use crate::eval::predicted_sign;
use crate::lsip::SolverConfig;
use crate::market::{MarketInstance, Strategy};
use crate::nn::{Adam, Gradients, HeadBounds, Mlp, NnError};

pub use generator::{sample_market, GeneratorConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("sample {index} does not match the network layout")]
    Layout { index: usize },
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("loss became non-finite at iteration {iteration}")]
    Divergence {
        iteration: usize,
        history: TrainHistory,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Regularization {
    #[default]
    None,
    L1,
    L2,
}

/// Where the payoff-penalty scenarios come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioMode {
    /// Fresh uniform draws for every sample in every iteration.
    #[default]
    Resample,
    /// One set of draws per sample, fixed before training.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n_iter: usize,
    pub batch_size: usize,
    pub scenario_batch: usize,
    pub gamma_max: f64,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub regularization: Regularization,
    pub reg_strength: f64,
    pub scenario_mode: ScenarioMode,
    /// Record history every `log_every` iterations (and at the last one).
    pub log_every: usize,
    /// Head box; derived from the first training market when absent.
    pub head: Option<HeadBounds>,
    /// Threshold below which a network price counts as predicted arbitrage.
    pub tol_label: f64,
    /// Initial strategy `(cash, position / H̄)` the output biases are set
    /// to; plain zero biases when absent.
    pub init_strategy: Option<(f64, f64)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_iter: 20_000,
            batch_size: 512,
            scenario_batch: 32,
            gamma_max: 10_000.0,
            lr: 1e-4,
            hidden: vec![1024; 5],
            seed: 0,
            regularization: Regularization::None,
            reg_strength: 0.0,
            scenario_mode: ScenarioMode::Resample,
            log_every: 100,
            head: None,
            tol_label: SolverConfig::default().tol_label,
            init_strategy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 || self.scenario_batch == 0 {
            return bad("batch sizes must be at least 1");
        }
        if !(self.gamma_max.is_finite() && self.gamma_max > 0.0) {
            return bad("gamma_max must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be positive");
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1");
        }
        if !(self.reg_strength.is_finite() && self.reg_strength >= 0.0) {
            return bad("reg_strength must be nonnegative");
        }
        Ok(())
    }
}

/// Head box matching a market's bounds: `[a̲, ā] × [0, H̄]`.
pub fn head_for_market(market: &MarketInstance) -> HeadBounds {
    HeadBounds {
        cash_min: market.bounds().cash_min,
        cash_max: market.cash_max(),
        position_max: market.bounds().position_max,
    }
}

/// Linear ramp from 1 at `iter = 0` to `gamma_max` at `iter = n_iter`.
pub fn gamma_schedule(iter: usize, n_iter: usize, gamma_max: f64) -> f64 {
    if n_iter == 0 {
        return gamma_max;
    }
    let t = iter.min(n_iter) as f64 / n_iter as f64;
    1.0 + (gamma_max - 1.0) * t
}

/// I.i.d. uniform points in `[0, upper_1] × … × [0, upper_d]`.
pub fn sample_scenarios<R: Rng + ?Sized>(box_upper: &[f64], count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| box_upper.iter().map(|&u| rng.gen_range(0.0..=u)).collect())
        .collect()
}

/// The three loss terms of one sample (penalties without the `γ` factor).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub price: f64,
    /// `mean_j((-I_{S_j})⁺)²`.
    pub infeasibility: f64,
    /// `(-(Ỹ + 0.5)·f)⁺`.
    pub sign_penalty: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.price += o.price;
        self.infeasibility += o.infeasibility;
        self.sign_penalty += o.sign_penalty;
    }

    fn scaled(mut self, f: f64) -> Self {
        self.total *= f;
        self.price *= f;
        self.infeasibility *= f;
        self.sign_penalty *= f;
        self
    }
}

/// Loss of a fixed strategy and its gradient with respect to the stacked
/// strategy vector `(a, h⁺, h⁻)`.
pub fn strategy_loss(
    market: &MarketInstance,
    sign: i8,
    strategy: &Strategy,
    scenarios: &[Vec<f64>],
    gamma: f64,
) -> (LossParts, Vec<f64>) {
    let n = market.n_options();
    let mut grad = vec![0.0; 1 + 2 * n];

    let price = strategy.cash + market.position_price(strategy);
    // df/da = 1, df/dh⁺ = π⁺, df/dh⁻ = -π⁻
    let mut price_grad = vec![0.0; 1 + 2 * n];
    price_grad[0] = 1.0;
    price_grad[1..1 + n].copy_from_slice(market.ask());
    for (g, b) in price_grad[1 + n..].iter_mut().zip(market.bid()) {
        *g = -b;
    }

    let mut infeasibility = 0.0;
    let inv = 1.0 / scenarios.len().max(1) as f64;
    for s in scenarios {
        let payoffs = market.option_payoffs(s);
        let value = strategy.cash
            + payoffs
                .iter()
                .zip(strategy.long.iter().zip(&strategy.short))
                .map(|(p, (l, sh))| (l - sh) * p)
                .sum::<f64>();
        if value < 0.0 {
            infeasibility += value * value * inv;
            // d/dx (-I)² = 2 I dI/dx
            let c = gamma * 2.0 * value * inv;
            grad[0] += c;
            for j in 0..n {
                grad[1 + j] += c * payoffs[j];
                grad[1 + n + j] -= c * payoffs[j];
            }
        }
    }

    let weight = -(sign as f64 + 0.5);
    let hinge = weight * price;
    let sign_penalty = hinge.max(0.0);
    let price_factor = 1.0 + if hinge > 0.0 { gamma * weight } else { 0.0 };
    for (g, pg) in grad.iter_mut().zip(&price_grad) {
        *g += price_factor * pg;
    }

    let parts = LossParts {
        total: price + gamma * infeasibility + gamma * sign_penalty,
        price,
        infeasibility,
        sign_penalty,
    };
    (parts, grad)
}

/// Loss of the network on one labelled market, accumulating parameter
/// gradients into `grads`.
pub fn loss_into(
    model: &Mlp,
    example: &Example,
    scenarios: &[Vec<f64>],
    gamma: f64,
    grads: &mut Gradients,
) -> Result<LossParts, NnError> {
    let trace = model.forward_trace(&example.label.features)?;
    let (parts, upstream) = strategy_loss(&example.market, example.label.sign, &trace.strategy, scenarios, gamma);
    model.backward_into(&trace, &upstream, grads);
    Ok(parts)
}

/// Loss of the network on one sample together with its parameter gradients.
pub fn loss(
    model: &Mlp,
    example: &Example,
    scenarios: &[Vec<f64>],
    gamma: f64,
) -> Result<(LossParts, Gradients), NnError> {
    let mut g = Gradients::zeros_like(model);
    let parts = loss_into(model, example, scenarios, gamma, &mut g)?;
    Ok((parts, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub gamma: f64,
    pub loss: f64,
    pub price: f64,
    pub infeasibility: f64,
    pub sign_penalty: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub entries: Vec<HistoryEntry>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&HistoryEntry> {
        self.entries.last()
    }

    /// CSV with header
    /// `iteration,gamma,loss,price,infeasibility,sign_penalty,train_accuracy,test_accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,gamma,loss,price,infeasibility,sign_penalty,train_accuracy,test_accuracy\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.iteration,
                e.gamma,
                e.loss,
                e.price,
                e.infeasibility,
                e.sign_penalty,
                e.train_accuracy,
                e.test_accuracy.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        out
    }
}

/// Fraction of samples whose network price has the sign of the label.
pub fn sign_accuracy(model: &Mlp, examples: &[Example], tol_label: f64) -> f64 {
    if examples.is_empty() {
        return f64::NAN;
    }
    let correct = examples
        .iter()
        .filter(|e| predicted_sign(model, &e.market, tol_label).ok() == Some(e.label.sign))
        .count();
    correct as f64 / examples.len() as f64
}

fn check_layout(model: &Mlp, examples: &[Example]) -> Result<(), TrainError> {
    for (index, e) in examples.iter().enumerate() {
        let n = e.market.n_options();
        if e.label.features.len() != model.input_dim() || 1 + 2 * n != model.output_dim() {
            return Err(TrainError::Layout { index });
        }
    }
    Ok(())
}

fn add_regularization(model: &Mlp, grads: &mut Gradients, kind: Regularization, strength: f64) {
    if strength == 0.0 || kind == Regularization::None {
        return;
    }
    for (g, l) in grads.layers.iter_mut().zip(model.layers()) {
        for (gw, w) in g.weights.iter_mut().zip(&l.weights) {
            *gw += match kind {
                Regularization::L1 => strength * w.signum(),
                Regularization::L2 => 2.0 * strength * w,
                Regularization::None => 0.0,
            };
        }
    }
}

fn regularization_value(model: &Mlp, kind: Regularization, strength: f64) -> f64 {
    let weights = model.layers().iter().flat_map(|l| l.weights.iter());
    match kind {
        Regularization::None => 0.0,
        Regularization::L1 => strength * weights.map(|w| w.abs()).sum::<f64>(),
        Regularization::L2 => strength * weights.map(|w| w * w).sum::<f64>(),
    }
}

/// Trains a fresh network on `train_set` and reports progress on the
/// optional held-out `test_set`. Deterministic in `cfg.seed`.
pub fn train(
    train_set: &[Example],
    test_set: Option<&[Example]>,
    cfg: &TrainConfig,
) -> Result<(Mlp, TrainHistory), TrainError> {
    cfg.validate()?;
    let first = train_set.first().ok_or(TrainError::EmptyDataset)?;
    let head = cfg.head.unwrap_or_else(|| head_for_market(&first.market));
    let n = first.market.n_options();
    let mut model = Mlp::for_market(n, &cfg.hidden, head, cfg.seed)?;
    if let Some((cash, position)) = cfg.init_strategy {
        model.bias_head_towards(cash, position)?;
    }
    train_model(model, train_set, test_set, cfg)
}

/// Continues training `model`. `cfg.hidden`, `cfg.head` and
/// `cfg.init_strategy` are ignored.
pub fn train_model(
    mut model: Mlp,
    train_set: &[Example],
    test_set: Option<&[Example]>,
    cfg: &TrainConfig,
) -> Result<(Mlp, TrainHistory), TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_layout(&model, train_set)?;
    if let Some(t) = test_set {
        check_layout(&model, t)?;
    }

    // separate streams keep batching and scenario draws independent
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    batch_rng.set_stream(1);
    let mut scenario_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    scenario_rng.set_stream(2);

    let fixed: Option<Vec<Vec<Vec<f64>>>> = match cfg.scenario_mode {
        ScenarioMode::Fixed => Some(
            train_set
                .iter()
                .map(|e| sample_scenarios(e.market.box_upper(), cfg.scenario_batch, &mut scenario_rng))
                .collect(),
        ),
        ScenarioMode::Resample => None,
    };

    let mut adam = Adam::new(&model);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut batch_rng);
    let mut cursor = 0;
    let mut grads = Gradients::zeros_like(&model);

    for iter in 0..cfg.n_iter {
        let gamma = gamma_schedule(iter, cfg.n_iter, cfg.gamma_max);
        grads.scale(0.0);
        let mut sums = LossParts::default();
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut batch_rng);
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            let example = &train_set[idx];
            let fresh;
            let scenarios: &[Vec<f64>] = match &fixed {
                Some(f) => &f[idx],
                None => {
                    fresh = sample_scenarios(example.market.box_upper(), cfg.scenario_batch, &mut scenario_rng);
                    &fresh
                }
            };
            let parts = loss_into(&model, example, scenarios, gamma, &mut grads)?;
            sums.add(&parts);
        }
        let inv = 1.0 / cfg.batch_size as f64;
        grads.scale(inv);
        add_regularization(&model, &mut grads, cfg.regularization, cfg.reg_strength);
        let mut mean = sums.scaled(inv);
        mean.total += regularization_value(&model, cfg.regularization, cfg.reg_strength);

        let last = iter + 1 == cfg.n_iter;
        let diverged = !mean.total.is_finite() || grads.flat().iter().any(|g| !g.is_finite());
        if diverged || iter % cfg.log_every == 0 || last {
            history.entries.push(HistoryEntry {
                iteration: iter,
                gamma,
                loss: mean.total,
                price: mean.price,
                infeasibility: mean.infeasibility,
                sign_penalty: mean.sign_penalty,
                train_accuracy: sign_accuracy(&model, train_set, cfg.tol_label),
                test_accuracy: test_set.map(|t| sign_accuracy(&model, t, cfg.tol_label)),
            });
            if let Some(e) = history.last() {
                log::debug!(
                    "iter {} gamma {:.1} loss {:.6} train acc {:.4} test acc {:?}",
                    e.iteration,
                    e.gamma,
                    e.loss,
                    e.train_accuracy,
                    e.test_accuracy
                );
            }
        }
        if diverged {
            return Err(TrainError::Divergence {
                iteration: iter,
                history,
            });
        }
        adam.step(&mut model, &grads, cfg.lr)?;
    }
    Ok((model, history))
}
