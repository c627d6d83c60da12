//! Market data types and the payoff / price semantics of static option
//! portfolios.
//!
//! A market consists of `d` underlyings observed on a prediction box
//! `[0, S̄_1] × … × [0, S̄_d]` and `N` options quoted with ask (`π⁺`) and
//! bid (`π⁻`) prices. A static strategy holds cash `a` plus long and short
//! positions `h⁺`, `h⁻` in every option.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feasibility tolerance used when classifying a strategy as an arbitrage.
pub const TOL_FEAS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("strike {strike} outside [0, {max}]")]
    StrikeOutOfRange { strike: f64, max: f64 },
    #[error("price {value} outside [0, {max}] for option {index}")]
    PriceOutOfRange { index: usize, value: f64, max: f64 },
    #[error("asset index {index} out of range for {assets} assets")]
    AssetOutOfRange { index: usize, assets: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("nonpositive spot {spot} for asset {asset}")]
    NonPositiveSpot { asset: usize, spot: f64 },
    #[error("invalid market: {0}")]
    Invalid(String),
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), DomainError> {
    if expected == got {
        Ok(())
    } else {
        Err(DomainError::Dimension {
            what,
            expected,
            got,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayoffKind {
    /// `max(S_k - K, 0)`; strike 0 is the underlying itself.
    Call,
}

/// A single-asset continuous piecewise-affine payoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoffSpec {
    pub asset: usize,
    pub kind: PayoffKind,
}

impl PayoffSpec {
    pub fn call(asset: usize) -> Self {
        PayoffSpec {
            asset,
            kind: PayoffKind::Call,
        }
    }

    /// Checked payoff `Ψ(S, K)`.
    pub fn payoff(&self, strike: f64, scenario: &[f64]) -> Result<f64, DomainError> {
        if !(strike.is_finite() && strike >= 0.0) {
            return Err(DomainError::StrikeOutOfRange {
                strike,
                max: f64::INFINITY,
            });
        }
        if self.asset >= scenario.len() {
            return Err(DomainError::AssetOutOfRange {
                index: self.asset,
                assets: scenario.len(),
            });
        }
        Ok(self.eval(strike, scenario[self.asset]))
    }

    /// Payoff as a function of the owning asset's terminal value.
    #[inline]
    pub fn eval(&self, strike: f64, asset_value: f64) -> f64 {
        match self.kind {
            PayoffKind::Call => (asset_value - strike).max(0.0),
        }
    }
}

/// All strikes quoted for one payoff type on one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionFamily {
    pub payoff: PayoffSpec,
    pub strikes: Vec<f64>,
}

/// Global bound constants `K̄`, `π̄`, `H̄`, `a̲`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketBounds {
    pub strike_max: f64,
    pub price_max: f64,
    pub position_max: f64,
    pub cash_min: f64,
}

impl Default for MarketBounds {
    fn default() -> Self {
        MarketBounds {
            strike_max: 2.0,
            price_max: 2.0,
            position_max: 1.0,
            cash_min: -1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketRepr {
    assets: usize,
    families: Vec<OptionFamily>,
    ask: Vec<f64>,
    bid: Vec<f64>,
    box_upper: Vec<f64>,
    bounds: MarketBounds,
}

/// One option market `(K, π⁺, π⁻)` with its prediction box and bounds.
///
/// Crossed quotes (bid above ask) are legal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarketRepr", into = "MarketRepr")]
pub struct MarketInstance {
    assets: usize,
    families: Vec<OptionFamily>,
    ask: Vec<f64>,
    bid: Vec<f64>,
    box_upper: Vec<f64>,
    bounds: MarketBounds,
    // flattened per-option view of `families`
    payoffs: Vec<PayoffSpec>,
    strikes: Vec<f64>,
}

impl TryFrom<MarketRepr> for MarketInstance {
    type Error = DomainError;

    fn try_from(r: MarketRepr) -> Result<Self, Self::Error> {
        MarketInstance::new(r.assets, r.families, r.ask, r.bid, r.box_upper, r.bounds)
    }
}

impl From<MarketInstance> for MarketRepr {
    fn from(m: MarketInstance) -> Self {
        MarketRepr {
            assets: m.assets,
            families: m.families,
            ask: m.ask,
            bid: m.bid,
            box_upper: m.box_upper,
            bounds: m.bounds,
        }
    }
}

impl MarketInstance {
    pub fn new(
        assets: usize,
        families: Vec<OptionFamily>,
        ask: Vec<f64>,
        bid: Vec<f64>,
        box_upper: Vec<f64>,
        bounds: MarketBounds,
    ) -> Result<Self, DomainError> {
        if assets == 0 {
            return Err(DomainError::Invalid("market needs at least one asset".into()));
        }
        check_len("prediction box", assets, box_upper.len())?;
        if let Some((k, &s)) = box_upper
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s > 0.0))
        {
            return Err(DomainError::Invalid(format!(
                "box upper bound {s} for asset {k} must be positive"
            )));
        }
        let b = bounds;
        if !(b.strike_max.is_finite() && b.strike_max >= 0.0) {
            return Err(DomainError::Invalid("strike bound must be finite and >= 0".into()));
        }
        if !(b.price_max.is_finite() && b.price_max > 0.0) {
            return Err(DomainError::Invalid("price bound must be finite and > 0".into()));
        }
        if !(b.position_max.is_finite() && b.position_max >= 0.0) {
            return Err(DomainError::Invalid("position bound must be finite and >= 0".into()));
        }
        if !(b.cash_min.is_finite() && b.cash_min <= 0.0) {
            return Err(DomainError::Invalid("minimal cash must be finite and <= 0".into()));
        }

        let mut payoffs = Vec::new();
        let mut strikes = Vec::new();
        for fam in &families {
            if fam.payoff.asset >= assets {
                return Err(DomainError::AssetOutOfRange {
                    index: fam.payoff.asset,
                    assets,
                });
            }
            for &k in &fam.strikes {
                if !(k.is_finite() && (0.0..=b.strike_max).contains(&k)) {
                    return Err(DomainError::StrikeOutOfRange {
                        strike: k,
                        max: b.strike_max,
                    });
                }
                payoffs.push(fam.payoff);
                strikes.push(k);
            }
        }
        let n = strikes.len();
        if n == 0 {
            return Err(DomainError::Invalid("market has no options".into()));
        }
        check_len("ask prices", n, ask.len())?;
        check_len("bid prices", n, bid.len())?;
        for (i, &p) in ask.iter().chain(bid.iter()).enumerate() {
            if !(p.is_finite() && (0.0..=b.price_max).contains(&p)) {
                return Err(DomainError::PriceOutOfRange {
                    index: i % n,
                    value: p,
                    max: b.price_max,
                });
            }
        }
        Ok(MarketInstance {
            assets,
            families,
            ask,
            bid,
            box_upper,
            bounds,
            payoffs,
            strikes,
        })
    }

    /// Rebuilds a market with the same layout from a `(K, π⁺, π⁻)` feature
    /// vector.
    pub fn with_features(&self, features: &[f64]) -> Result<Self, DomainError> {
        let n = self.n_options();
        check_len("feature vector", 3 * n, features.len())?;
        let mut families = self.families.clone();
        let mut it = features[..n].iter();
        for fam in &mut families {
            for k in &mut fam.strikes {
                *k = *it.next().expect("length checked");
            }
        }
        MarketInstance::new(
            self.assets,
            families,
            features[n..2 * n].to_vec(),
            features[2 * n..].to_vec(),
            self.box_upper.clone(),
            self.bounds,
        )
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    pub fn n_options(&self) -> usize {
        self.strikes.len()
    }

    pub fn families(&self) -> &[OptionFamily] {
        &self.families
    }

    pub fn ask(&self) -> &[f64] {
        &self.ask
    }

    pub fn bid(&self) -> &[f64] {
        &self.bid
    }

    pub fn box_upper(&self) -> &[f64] {
        &self.box_upper
    }

    pub fn bounds(&self) -> &MarketBounds {
        &self.bounds
    }

    pub fn strikes(&self) -> &[f64] {
        &self.strikes
    }

    pub fn payoffs(&self) -> &[PayoffSpec] {
        &self.payoffs
    }

    /// Upper bound `C_Ψ` on every payoff over the box.
    pub fn payoff_bound(&self) -> f64 {
        self.box_upper.iter().cloned().fold(0.0, f64::max)
    }

    /// Cash upper bound `ā = 2·N·H̄·C_Ψ + 1`: with this much cash any
    /// position vector is feasible.
    pub fn cash_max(&self) -> f64 {
        2.0 * self.n_options() as f64 * self.bounds.position_max * self.payoff_bound() + 1.0
    }

    /// Flattened `(K, π⁺, π⁻)`, length `3N`.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.n_options());
        out.extend_from_slice(&self.strikes);
        out.extend_from_slice(&self.ask);
        out.extend_from_slice(&self.bid);
        out
    }

    /// Option payoffs `Ψ_j(S, K_j)` at one scenario.
    pub fn option_payoffs(&self, scenario: &[f64]) -> Vec<f64> {
        self.payoffs
            .iter()
            .zip(&self.strikes)
            .map(|(p, &k)| p.eval(k, scenario[p.asset]))
            .collect()
    }

    /// Option indices grouped by the asset they are written on.
    pub fn options_by_asset(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.assets];
        for (j, p) in self.payoffs.iter().enumerate() {
            groups[p.asset].push(j);
        }
        groups
    }

    fn check_strategy(&self, strategy: &Strategy) -> Result<(), DomainError> {
        check_len("long positions", self.n_options(), strategy.long.len())?;
        check_len("short positions", self.n_options(), strategy.short.len())
    }

    fn check_scenario(&self, scenario: &[f64]) -> Result<(), DomainError> {
        check_len("scenario", self.assets, scenario.len())
    }

    /// `I_S(K, a, h) = a + Σ (h⁺ - h⁻)·Ψ(S, K)`.
    pub fn strategy_payoff(&self, strategy: &Strategy, scenario: &[f64]) -> Result<f64, DomainError> {
        self.check_strategy(strategy)?;
        self.check_scenario(scenario)?;
        Ok(strategy.cash + self.position_payoff(strategy, scenario))
    }

    /// Option part of the payoff (no cash).
    pub(crate) fn position_payoff(&self, strategy: &Strategy, scenario: &[f64]) -> f64 {
        let mut total = 0.0;
        for j in 0..self.n_options() {
            let p = self.payoffs[j];
            total += (strategy.long[j] - strategy.short[j]) * p.eval(self.strikes[j], scenario[p.asset]);
        }
        total
    }

    /// `f(π, a, h) = a + Σ (h⁺·π⁺ - h⁻·π⁻)`.
    pub fn strategy_price(&self, strategy: &Strategy) -> Result<f64, DomainError> {
        self.check_strategy(strategy)?;
        Ok(strategy.cash + self.position_price(strategy))
    }

    pub(crate) fn position_price(&self, strategy: &Strategy) -> f64 {
        let mut total = 0.0;
        for j in 0..self.n_options() {
            total += strategy.long[j] * self.ask[j] - strategy.short[j] * self.bid[j];
        }
        total
    }

    /// Payoff minus price; the cash position cancels.
    pub fn net_profit(&self, strategy: &Strategy, scenario: &[f64]) -> Result<f64, DomainError> {
        self.check_strategy(strategy)?;
        self.check_scenario(scenario)?;
        Ok(self.position_payoff(strategy, scenario) - self.position_price(strategy))
    }

    /// Net profit split by underlying: entry `k` collects the options on
    /// asset `k`. Sums to [`MarketInstance::net_profit`].
    pub fn net_profit_by_asset(
        &self,
        strategy: &Strategy,
        scenario: &[f64],
    ) -> Result<Vec<f64>, DomainError> {
        self.check_strategy(strategy)?;
        self.check_scenario(scenario)?;
        let mut out = vec![0.0; self.assets];
        for j in 0..self.n_options() {
            let p = self.payoffs[j];
            let w = strategy.long[j] - strategy.short[j];
            out[p.asset] += w * p.eval(self.strikes[j], scenario[p.asset])
                - (strategy.long[j] * self.ask[j] - strategy.short[j] * self.bid[j]);
        }
        Ok(out)
    }

    /// Classifies a strategy given its worst-case payoff over the box.
    pub fn classify_strategy<F>(
        &self,
        strategy: &Strategy,
        min_payoff: F,
    ) -> Result<ArbitrageVerdict, DomainError>
    where
        F: FnOnce(&MarketInstance, &Strategy) -> f64,
    {
        let price = self.strategy_price(strategy)?;
        let worst = min_payoff(self, strategy);
        Ok(ArbitrageVerdict::from_price_and_worst_payoff(price, worst))
    }
}

/// Cash plus long / short option holdings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub cash: f64,
    pub long: Vec<f64>,
    pub short: Vec<f64>,
}

impl Strategy {
    pub fn zero(n_options: usize) -> Self {
        Strategy {
            cash: 0.0,
            long: vec![0.0; n_options],
            short: vec![0.0; n_options],
        }
    }

    pub fn n_options(&self) -> usize {
        self.long.len()
    }

    /// Net holdings `h⁺ - h⁻`.
    pub fn net_positions(&self) -> Vec<f64> {
        self.long.iter().zip(&self.short).map(|(l, s)| l - s).collect()
    }

    /// Whether the holdings respect `a ≥ a̲` and `h ∈ [0, H̄]`.
    pub fn within_bounds(&self, bounds: &MarketBounds) -> bool {
        self.cash >= bounds.cash_min
            && self
                .long
                .iter()
                .chain(&self.short)
                .all(|h| (0.0..=bounds.position_max).contains(h))
    }

    /// Stacks `(a, h⁺, h⁻)` into one vector.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + 2 * self.long.len());
        v.push(self.cash);
        v.extend_from_slice(&self.long);
        v.extend_from_slice(&self.short);
        v
    }

    /// Inverse of [`Strategy::to_vec`].
    pub fn from_slice(v: &[f64]) -> Self {
        assert!(v.len() % 2 == 1, "stacked strategy has odd length");
        let n = (v.len() - 1) / 2;
        Strategy {
            cash: v[0],
            long: v[1..1 + n].to_vec(),
            short: v[1 + n..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageVerdict {
    pub is_arbitrage: bool,
    /// `-f` when the strategy is an arbitrage, 0 otherwise.
    pub magnitude: f64,
}

impl ArbitrageVerdict {
    pub fn from_price_and_worst_payoff(price: f64, worst_payoff: f64) -> Self {
        if worst_payoff >= -TOL_FEAS && price < 0.0 {
            ArbitrageVerdict {
                is_arbitrage: true,
                magnitude: -price,
            }
        } else {
            ArbitrageVerdict {
                is_arbitrage: false,
                magnitude: 0.0,
            }
        }
    }
}

/// A market quoted in currency units together with the spot of each asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMarket {
    pub families: Vec<OptionFamily>,
    pub ask: Vec<f64>,
    pub bid: Vec<f64>,
    pub spots: Vec<f64>,
}

/// Default prediction box `[0, 2]^d` in spot-normalised units.
pub const DEFAULT_BOX_UPPER: f64 = 2.0;

/// Divides strikes and quotes by the owning asset's spot.
///
/// `bounds` are the constants of the normalised market.
pub fn normalize_market(
    raw: &RawMarket,
    box_upper: f64,
    bounds: MarketBounds,
) -> Result<(MarketInstance, Vec<f64>), DomainError> {
    let d = raw.spots.len();
    for (k, &s) in raw.spots.iter().enumerate() {
        if !(s.is_finite() && s > 0.0) {
            return Err(DomainError::NonPositiveSpot { asset: k, spot: s });
        }
    }
    let mut families = raw.families.clone();
    let mut owner = Vec::new();
    for fam in &mut families {
        if fam.payoff.asset >= d {
            return Err(DomainError::AssetOutOfRange {
                index: fam.payoff.asset,
                assets: d,
            });
        }
        let spot = raw.spots[fam.payoff.asset];
        for k in &mut fam.strikes {
            *k /= spot;
            owner.push(spot);
        }
    }
    check_len("ask prices", owner.len(), raw.ask.len())?;
    check_len("bid prices", owner.len(), raw.bid.len())?;
    let ask = raw.ask.iter().zip(&owner).map(|(p, s)| p / s).collect();
    let bid = raw.bid.iter().zip(&owner).map(|(p, s)| p / s).collect();
    let market = MarketInstance::new(d, families, ask, bid, vec![box_upper; d], bounds)?;
    Ok((market, raw.spots.clone()))
}

/// Converts per-asset normalised P&L back to currency: `Σ_k spot_k·pnl_k`.
pub fn unscale_net_profit(per_asset_pnl: &[f64], spots: &[f64]) -> Result<f64, DomainError> {
    check_len("spots", per_asset_pnl.len(), spots.len())?;
    Ok(per_asset_pnl.iter().zip(spots).map(|(p, s)| p * s).sum())
}
