//! Synthetic normalized option markets.
//!
//! Each asset gets a discrete risk-neutral law: mirrored atom pairs
//! `c ± δ` with equal weight inside a pair, so the law lives in the box and
//! has mean `c` (1 for the usual `[0, 2]` box). Calls are priced by
//! expectation, widened by a random half-spread, and with probability
//! `arbitrage_prob` one quote is shifted to make it too cheap (ask) or too
//! rich (bid).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::market::{DomainError, MarketBounds, MarketInstance, OptionFamily, PayoffSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub assets: usize,
    pub strikes_per_asset: usize,
    /// Prepend strike 0 (the underlying itself) to every asset.
    pub include_underlying: bool,
    pub strike_range: (f64, f64),
    /// Number of mirrored atom pairs per asset.
    pub atom_pairs: usize,
    /// Range of the lognormal-like dispersion of the atoms.
    pub vol_range: (f64, f64),
    pub max_half_spread: f64,
    pub arbitrage_prob: f64,
    pub shift_range: (f64, f64),
    pub box_upper: f64,
    pub bounds: MarketBounds,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            assets: 2,
            strikes_per_asset: 4,
            include_underlying: true,
            strike_range: (0.7, 1.3),
            atom_pairs: 4,
            vol_range: (0.1, 0.4),
            max_half_spread: 0.001,
            arbitrage_prob: 0.6,
            shift_range: (0.02, 0.08),
            box_upper: 2.0,
            bounds: MarketBounds::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn n_options(&self) -> usize {
        self.assets * (self.strikes_per_asset + usize::from(self.include_underlying))
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |m: &str| Err(DomainError::Invalid(m.to_string()));
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi;
        if self.assets == 0 || self.n_options() == 0 {
            return bad("generator needs at least one asset and one option");
        }
        if self.atom_pairs == 0 {
            return bad("atom_pairs must be at least 1");
        }
        if !ordered(self.strike_range) || self.strike_range.1 > self.bounds.strike_max {
            return bad("strike_range must lie in [0, strike_max]");
        }
        if !ordered(self.vol_range) || !ordered(self.shift_range) {
            return bad("vol_range and shift_range must be ordered and nonnegative");
        }
        if !(self.max_half_spread.is_finite() && self.max_half_spread >= 0.0) {
            return bad("max_half_spread must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.arbitrage_prob) {
            return bad("arbitrage_prob must be in [0, 1]");
        }
        if !(self.box_upper.is_finite() && self.box_upper > 0.0) {
            return bad("box_upper must be positive");
        }
        Ok(())
    }
}

/// Atoms and weights of a mirrored discrete law on `[0, box_upper]`.
fn sample_law<R: Rng + ?Sized>(gen: &GeneratorConfig, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let center = (gen.box_upper / 2.0).min(1.0);
    let vol = rng.gen_range(gen.vol_range.0..=gen.vol_range.1);
    let mut atoms = Vec::with_capacity(2 * gen.atom_pairs);
    let mut weights = Vec::with_capacity(2 * gen.atom_pairs);
    let mut total = 0.0;
    for _ in 0..gen.atom_pairs {
        let z: f64 = StandardNormal.sample(rng);
        let delta = (center * (vol * z.abs()).exp_m1()).min(center);
        let w: f64 = rng.gen_range(0.05..1.0);
        atoms.extend([center - delta, center + delta]);
        weights.extend([w, w]);
        total += 2.0 * w;
    }
    weights.iter_mut().for_each(|w| *w /= total);
    (atoms, weights)
}

/// Draws one synthetic market. Deterministic in the state of `rng`.
pub fn sample_market<R: Rng + ?Sized>(gen: &GeneratorConfig, rng: &mut R) -> Result<MarketInstance, DomainError> {
    gen.validate()?;
    let mut families = Vec::with_capacity(gen.assets);
    let mut ask = Vec::with_capacity(gen.n_options());
    let mut bid = Vec::with_capacity(gen.n_options());
    let price_max = gen.bounds.price_max;

    for asset in 0..gen.assets {
        let (atoms, weights) = sample_law(gen, rng);
        let mut strikes: Vec<f64> = (0..gen.strikes_per_asset)
            .map(|_| rng.gen_range(gen.strike_range.0..=gen.strike_range.1))
            .collect();
        strikes.sort_by(f64::total_cmp);
        if gen.include_underlying {
            strikes.insert(0, 0.0);
        }
        for &k in &strikes {
            let fair: f64 = atoms.iter().zip(&weights).map(|(x, w)| w * (x - k).max(0.0)).sum();
            let half = if gen.max_half_spread > 0.0 {
                rng.gen_range(0.0..=gen.max_half_spread)
            } else {
                0.0
            };
            ask.push((fair + half).min(price_max));
            bid.push((fair - half).clamp(0.0, price_max));
        }
        families.push(OptionFamily {
            payoff: PayoffSpec::call(asset),
            strikes,
        });
    }

    if rng.gen_bool(gen.arbitrage_prob) {
        let i = rng.gen_range(0..ask.len());
        let shift = rng.gen_range(gen.shift_range.0..=gen.shift_range.1);
        if rng.gen_bool(0.5) {
            ask[i] = (ask[i] - shift).max(0.0);
        } else {
            bid[i] = (bid[i] + shift).min(price_max);
        }
    }

    MarketInstance::new(gen.assets, families, ask, bid, vec![gen.box_upper; gen.assets], gen.bounds)
}

/// `count` markets from a single seeded stream.
pub fn sample_markets(gen: &GeneratorConfig, count: usize, seed: u64) -> Result<Vec<MarketInstance>, DomainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_market(gen, &mut rng)).collect()
}
