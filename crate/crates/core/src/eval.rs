//! Scoring of trained detectors.
//!
//! Arbitrage (sign `-1`) is the positive class. A market is predicted to
//! admit arbitrage when the price of the network's strategy is below
//! `-tol_label`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{chains_to_raw, DataError, Example, UnderlyingChain};
use crate::market::{normalize_market, unscale_net_profit, DomainError, MarketBounds, MarketInstance};
use crate::nn::{Mlp, NnError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} predictions vs {1} labels")]
    Length(usize, usize),
    #[error("sample {index}: model expects {expected} options, sample has {got}")]
    Dimension { index: usize, expected: usize, got: usize },
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Sign the detector assigns to a market: `-1` for arbitrage, else `0`.
pub fn predicted_sign(model: &Mlp, market: &MarketInstance, tol_label: f64) -> Result<i8, NnError> {
    let strategy = model.forward(&market.features())?;
    let price = strategy.cash + market.position_price(&strategy);
    Ok(if price < -tol_label { -1 } else { 0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub correct_fraction: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub const CSV_HEADER: &'static str = "correct_fraction,precision,recall,f1";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.correct_fraction, self.precision, self.recall, self.f1)
    }
}

/// Confusion-matrix metrics. Precision (recall) is 0 when nothing is
/// predicted (labelled) positive; F1 is 0 when both are 0.
pub fn classification_metrics(predicted: &[i8], labels: &[i8]) -> Result<Metrics, EvalError> {
    if predicted.len() != labels.len() {
        return Err(EvalError::Length(predicted.len(), labels.len()));
    }
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut tp, mut fp, mut tn, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in predicted.iter().zip(labels) {
        match (p < 0, l < 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fne += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fne);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Metrics {
        correct_fraction: ratio(tp + tn, predicted.len()),
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfitStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

/// Quantile of sorted data by linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary statistics with the sample (`n-1`) standard deviation, which is
/// 0 for a single value.
pub fn profit_stats(values: &[f64]) -> Result<ProfitStats, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // rounding can push the mean of a constant vector off its value
    let mean = (values.iter().sum::<f64>() / n as f64).clamp(sorted[0], sorted[n - 1]);
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(ProfitStats {
        count: n,
        mean,
        std: var.sqrt(),
        min: sorted[0],
        q25: quantile(&sorted, 0.25),
        q50: quantile(&sorted, 0.5),
        q75: quantile(&sorted, 0.75),
        max: sorted[n - 1],
    })
}

/// Describe-style table: one row per statistic, one column per series.
pub fn stats_table_csv(columns: &[(&str, Option<&ProfitStats>)]) -> String {
    let mut out = String::from("statistic");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let rows: [(&str, fn(&ProfitStats) -> f64); 8] = [
        ("count", |s| s.count as f64),
        ("mean", |s| s.mean),
        ("std", |s| s.std),
        ("min", |s| s.min),
        ("25%", |s| s.q25),
        ("50%", |s| s.q50),
        ("75%", |s| s.q75),
        ("max", |s| s.max),
    ];
    for (label, get) in rows {
        out.push_str(label);
        for (_, s) in columns {
            out.push(',');
            if let Some(s) = s {
                out.push_str(&get(s).to_string());
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width histogram over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lower: lo + i as f64 * width,
            upper: lo + (i + 1) as f64 * width,
            count,
        })
        .collect()
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("lower,upper,count\n");
    for b in bins {
        out.push_str(&format!("{},{},{}\n", b.lower, b.upper, b.count));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub profits: ProfitStats,
    /// Statistics restricted to misclassified samples, if any.
    pub misclassified_profits: Option<ProfitStats>,
    pub predicted: Vec<i8>,
    /// Net profits, sample-major, `scenarios_per_sample` per sample.
    pub net_profits: Vec<f64>,
}

fn check_dims(model: &Mlp, examples: &[Example]) -> Result<(), EvalError> {
    let expected = (model.output_dim() - 1) / 2;
    for (index, e) in examples.iter().enumerate() {
        let got = e.market.n_options();
        if got != expected || 3 * got != model.input_dim() {
            return Err(EvalError::Dimension { index, expected, got });
        }
    }
    Ok(())
}

/// Scores `model` against labelled markets and collects the net profit of
/// its strategy on `scenarios_per_sample` uniform scenarios per market.
/// Sample `i` draws its scenarios from stream `i` of a ChaCha generator
/// seeded with `seed`, so the result does not depend on thread count.
pub fn evaluate_model(
    model: &Mlp,
    examples: &[Example],
    scenarios_per_sample: usize,
    seed: u64,
    tol_label: f64,
) -> Result<EvalReport, EvalError> {
    if examples.is_empty() || scenarios_per_sample == 0 {
        return Err(EvalError::Empty);
    }
    check_dims(model, examples)?;
    let per_sample: Vec<(i8, Vec<f64>)> = examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let m = &e.market;
            let strategy = model.forward(&m.features())?;
            let price = strategy.cash + m.position_price(&strategy);
            let sign = if price < -tol_label { -1 } else { 0 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let profits = (0..scenarios_per_sample)
                .map(|_| {
                    let s: Vec<f64> = m.box_upper().iter().map(|&u| rng.gen_range(0.0..=u)).collect();
                    m.position_payoff(&strategy, &s) - m.position_price(&strategy)
                })
                .collect();
            Ok((sign, profits))
        })
        .collect::<Result<_, NnError>>()?;

    let predicted: Vec<i8> = per_sample.iter().map(|p| p.0).collect();
    let labels: Vec<i8> = examples.iter().map(|e| e.label.sign).collect();
    let metrics = classification_metrics(&predicted, &labels)?;
    let wrong: Vec<f64> = per_sample
        .iter()
        .zip(&labels)
        .filter(|((p, _), l)| p != *l)
        .flat_map(|((_, v), _)| v.iter().copied())
        .collect();
    let net_profits: Vec<f64> = per_sample.into_iter().flat_map(|p| p.1).collect();
    Ok(EvalReport {
        metrics,
        profits: profit_stats(&net_profits)?,
        misclassified_profits: profit_stats(&wrong).ok(),
        predicted,
        net_profits,
    })
}

/// One trading day: a chain per asset (in model order) and the realized
/// unnormalized terminal prices.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestDay {
    pub date: String,
    pub chains: Vec<UnderlyingChain>,
    pub terminal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayProfit {
    pub date: String,
    pub scaled: f64,
    pub unscaled: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub days: Vec<DayProfit>,
    /// `(date, reason)` for every day that could not be evaluated.
    pub skipped: Vec<(String, String)>,
}

impl BacktestReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,scaled,unscaled\n");
        for d in &self.days {
            out.push_str(&format!("{},{},{}\n", d.date, d.scaled, d.unscaled));
        }
        out
    }
}

fn backtest_day(
    model: &Mlp,
    day: &BacktestDay,
    strikes_per_asset: usize,
    box_upper: f64,
    bounds: MarketBounds,
) -> Result<DayProfit, String> {
    if day.terminal.len() != day.chains.len() {
        return Err(format!("{} terminal prices for {} assets", day.terminal.len(), day.chains.len()));
    }
    let chains: Vec<&UnderlyingChain> = day.chains.iter().collect();
    let raw = chains_to_raw(&chains, strikes_per_asset, &bounds).map_err(|e: DataError| e.to_string())?;
    let (market, spots) = normalize_market(&raw, box_upper, bounds).map_err(|e| e.to_string())?;
    let strategy = model.forward(&market.features()).map_err(|e| e.to_string())?;
    let terminal: Vec<f64> = day.terminal.iter().zip(&spots).map(|(t, s)| t / s).collect();
    let pnl = market
        .net_profit_by_asset(&strategy, &terminal)
        .map_err(|e| e.to_string())?;
    Ok(DayProfit {
        date: day.date.clone(),
        scaled: pnl.iter().sum(),
        unscaled: unscale_net_profit(&pnl, &spots).map_err(|e| e.to_string())?,
    })
}

/// Net profit of the detector's strategy on each day, held to expiry.
/// Days whose chains cannot produce the model's layout are skipped and
/// reported.
pub fn backtest(
    model: &Mlp,
    days: &[BacktestDay],
    strikes_per_asset: usize,
    box_upper: f64,
    bounds: MarketBounds,
) -> BacktestReport {
    let mut report = BacktestReport::default();
    for day in days {
        match backtest_day(model, day, strikes_per_asset, box_upper, bounds) {
            Ok(p) => report.days.push(p),
            Err(reason) => {
                log::warn!("skipping {}: {}", day.date, reason);
                report.skipped.push((day.date.clone(), reason));
            }
        }
    }
    report
}
