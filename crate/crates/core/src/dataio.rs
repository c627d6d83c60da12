//! Option-chain ingestion, sample assembly and artifact persistence.
//!
//! Chain files are CSV with the header
//! `date,underlying_id,spot,kind,strike,bid,ask,volume`.
//!
//! Datasets and weights share one container: a single JSON header line
//! followed by a little-endian `f64` payload whose length and SHA-256 are
//! recorded in the header.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lsip::LabeledSample;
use crate::market::{
    normalize_market, DomainError, MarketBounds, MarketInstance, OptionFamily, PayoffKind, PayoffSpec, RawMarket,
};
use crate::nn::{Dense, HeadBounds, Mlp, NnError};

pub const FORMAT_VERSION: u32 = 1;
const DATASET_FORMAT: &str = "arbdetect-dataset";
const MODEL_FORMAT: &str = "arbdetect-model";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: String,
        message: String,
    },
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("malformed artifact: {0}")]
    Format(String),
    #[error("unsupported {format} version {found} (expected {expected})")]
    Version {
        format: String,
        expected: u32,
        found: u32,
    },
    #[error("payload checksum mismatch (truncated or corrupted file)")]
    Checksum,
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Network(#[from] NnError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------- chains

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionChainRow {
    pub date: String,
    pub underlying_id: String,
    pub spot: f64,
    pub kind: PayoffKind,
    pub strike: f64,
    pub bid: f64,
    pub ask: f64,
    pub volume: u64,
}

const CHAIN_HEADER: [&str; 8] = ["date", "underlying_id", "spot", "kind", "strike", "bid", "ask", "volume"];

fn check_row(row: &OptionChainRow, line: u64) -> Result<(), DataError> {
    let fail = |column: &str, message: String| {
        Err(DataError::Parse {
            line,
            column: column.to_string(),
            message,
        })
    };
    if !(row.spot.is_finite() && row.spot > 0.0) {
        return fail("spot", format!("spot must be positive, got {}", row.spot));
    }
    if !(row.strike.is_finite() && row.strike >= 0.0) {
        return fail("strike", format!("strike must be nonnegative, got {}", row.strike));
    }
    for (name, v) in [("bid", row.bid), ("ask", row.ask)] {
        if !(v.is_finite() && v >= 0.0) {
            return fail(name, format!("{name} must be nonnegative, got {v}"));
        }
    }
    Ok(())
}

/// Parses chain CSV from any reader. The first malformed row aborts the
/// load with its line number and offending column.
pub fn parse_chain<R: Read>(reader: R) -> Result<Vec<OptionChainRow>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            return Err(DataError::Parse {
                line: 1,
                column: String::new(),
                message: e.to_string(),
            })
        }
    };
    if headers.is_empty() {
        log::warn!("option chain is empty");
        return Ok(Vec::new());
    }
    if headers.iter().ne(CHAIN_HEADER) {
        let missing = CHAIN_HEADER
            .iter()
            .zip(headers.iter().chain(std::iter::repeat("")))
            .find(|(want, got)| *want != got)
            .map(|(want, _)| want.to_string())
            .unwrap_or_default();
        return Err(DataError::Parse {
            line: 1,
            column: missing,
            message: format!("header must be `{}`", CHAIN_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for result in rdr.deserialize::<OptionChainRow>() {
        let row = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            let column = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err
                    .field()
                    .and_then(|i| CHAIN_HEADER.get(i as usize))
                    .map(|s| s.to_string())
                    .unwrap_or_default(),
                _ => String::new(),
            };
            DataError::Parse {
                line,
                column,
                message: e.to_string(),
            }
        })?;
        check_row(&row, rows.len() as u64 + 2)?;
        rows.push(row);
    }
    if rows.is_empty() {
        log::warn!("option chain has no rows");
    }
    Ok(rows)
}

pub fn load_chain(path: &Path) -> Result<Vec<OptionChainRow>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_chain(file)
}

/// All quotes of one underlying on one date.
#[derive(Debug, Clone, PartialEq)]
pub struct UnderlyingChain {
    pub date: String,
    pub underlying_id: String,
    pub spot: f64,
    pub rows: Vec<OptionChainRow>,
}

/// Groups rows by `(date, underlying_id)` in sorted key order.
pub fn group_chains(rows: &[OptionChainRow]) -> Vec<UnderlyingChain> {
    let mut groups: BTreeMap<(String, String), Vec<OptionChainRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.date.clone(), r.underlying_id.clone()))
            .or_default()
            .push(r.clone());
    }
    groups
        .into_iter()
        .map(|((date, underlying_id), rows)| UnderlyingChain {
            spot: rows[0].spot,
            date,
            underlying_id,
            rows,
        })
        .collect()
}

impl UnderlyingChain {
    /// Quotes that stay inside the normalized strike and price bounds,
    /// excluding the underlying itself.
    fn usable_options(&self, bounds: &MarketBounds) -> Vec<&OptionChainRow> {
        self.rows
            .iter()
            .filter(|r| {
                r.strike > 0.0
                    && r.strike / self.spot <= bounds.strike_max
                    && r.ask / self.spot <= bounds.price_max
                    && r.bid / self.spot <= bounds.price_max
            })
            .collect()
    }

    pub fn has_strikes(&self, strikes: usize, bounds: &MarketBounds) -> bool {
        self.usable_options(bounds).len() >= strikes
    }

    /// The underlying quote followed by the `strikes` highest-volume calls
    /// (ties to the lower strike), in increasing strike order. Without an
    /// explicit strike-0 row the underlying trades at its spot.
    pub fn select(&self, strikes: usize, bounds: &MarketBounds) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), DataError> {
        let mut opts = self.usable_options(bounds);
        if opts.len() < strikes {
            return Err(DataError::Insufficient(format!(
                "{} on {} has {} usable strikes, need {}",
                self.underlying_id,
                self.date,
                opts.len(),
                strikes
            )));
        }
        opts.sort_by(|a, b| b.volume.cmp(&a.volume).then(a.strike.total_cmp(&b.strike)));
        opts.truncate(strikes);
        opts.sort_by(|a, b| a.strike.total_cmp(&b.strike));

        let (ask0, bid0) = self
            .rows
            .iter()
            .find(|r| r.strike == 0.0)
            .map_or((self.spot, self.spot), |r| (r.ask, r.bid));
        let mut k = vec![0.0];
        let mut ask = vec![ask0];
        let mut bid = vec![bid0];
        for r in opts {
            k.push(r.strike);
            ask.push(r.ask);
            bid.push(r.bid);
        }
        Ok((k, ask, bid))
    }
}

/// Raw (unnormalized) market from one chain per asset.
pub fn chains_to_raw(chains: &[&UnderlyingChain], strikes: usize, bounds: &MarketBounds) -> Result<RawMarket, DataError> {
    let mut raw = RawMarket {
        families: Vec::with_capacity(chains.len()),
        ask: Vec::new(),
        bid: Vec::new(),
        spots: Vec::with_capacity(chains.len()),
    };
    for (asset, chain) in chains.iter().enumerate() {
        let (k, ask, bid) = chain.select(strikes, bounds)?;
        raw.families.push(OptionFamily {
            payoff: PayoffSpec::call(asset),
            strikes: k,
        });
        raw.ask.extend(ask);
        raw.bid.extend(bid);
        raw.spots.push(chain.spot);
    }
    Ok(raw)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub n_samples: usize,
    pub assets_per_sample: usize,
    pub strikes_per_asset: usize,
    pub box_upper: f64,
    pub bounds: MarketBounds,
}

/// Normalized markets combining `assets_per_sample` distinct underlyings
/// drawn uniformly from the chains that quote enough strikes.
/// `N = assets_per_sample · (strikes_per_asset + 1)`.
pub fn build_samples<R: Rng + ?Sized>(
    chains: &[UnderlyingChain],
    spec: &SampleSpec,
    rng: &mut R,
) -> Result<Vec<MarketInstance>, DataError> {
    if spec.assets_per_sample == 0 {
        return Err(DataError::Insufficient("assets_per_sample must be at least 1".into()));
    }
    let eligible: Vec<&UnderlyingChain> = chains
        .iter()
        .filter(|c| c.has_strikes(spec.strikes_per_asset, &spec.bounds))
        .collect();
    if eligible.len() < spec.assets_per_sample {
        return Err(DataError::Insufficient(format!(
            "{} underlyings quote at least {} strikes, need {}",
            eligible.len(),
            spec.strikes_per_asset,
            spec.assets_per_sample
        )));
    }
    (0..spec.n_samples)
        .map(|_| {
            let picked: Vec<&UnderlyingChain> = sample_indices(rng, eligible.len(), spec.assets_per_sample)
                .into_iter()
                .map(|i| eligible[i])
                .collect();
            let raw = chains_to_raw(&picked, spec.strikes_per_asset, &spec.bounds)?;
            Ok(normalize_market(&raw, spec.box_upper, spec.bounds)?.0)
        })
        .collect()
}

// --------------------------------------------------------------- container

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A market together with its superhedging label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub market: MarketInstance,
    pub label: LabeledSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub seed: u64,
    pub markets: Vec<MarketInstance>,
    pub labels: Option<Vec<LabeledSample>>,
}

impl Dataset {
    pub fn unlabeled(split: Split, seed: u64, markets: Vec<MarketInstance>) -> Self {
        Dataset {
            split,
            seed,
            markets,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.markets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markets.is_empty()
    }

    pub fn n_options(&self) -> Option<usize> {
        self.markets.first().map(MarketInstance::n_options)
    }

    /// Markets paired with labels, if the dataset is labelled.
    pub fn examples(&self) -> Option<Vec<Example>> {
        let labels = self.labels.as_ref()?;
        Some(
            self.markets
                .iter()
                .zip(labels)
                .map(|(m, l)| Example {
                    market: m.clone(),
                    label: l.clone(),
                })
                .collect(),
        )
    }

    /// First `n_test` samples become the test split, the rest the train split.
    pub fn split_off(mut self, n_test: usize) -> (Dataset, Dataset) {
        let n_test = n_test.min(self.markets.len());
        let train_markets = self.markets.split_off(n_test);
        let (test_labels, train_labels) = match self.labels {
            Some(mut l) => {
                let rest = l.split_off(n_test);
                (Some(l), Some(rest))
            }
            None => (None, None),
        };
        (
            Dataset {
                split: Split::Train,
                seed: self.seed,
                markets: train_markets,
                labels: train_labels,
            },
            Dataset {
                split: Split::Test,
                seed: self.seed,
                markets: self.markets,
                labels: test_labels,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header<T> {
    format: String,
    version: u32,
    payload_len: usize,
    sha256: String,
    #[serde(flatten)]
    meta: T,
}

/// Layout of every record in a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetMeta {
    split: Split,
    seed: u64,
    assets: usize,
    /// Asset of every option family, in order.
    family_assets: Vec<usize>,
    family_sizes: Vec<usize>,
    box_upper: Vec<f64>,
    bounds: MarketBounds,
    labeled: bool,
    records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    dims: Vec<usize>,
    head: HeadBounds,
}

fn encode(format: &str, meta: impl Serialize, payload: &[f64]) -> Vec<u8> {
    let bytes: Vec<u8> = payload.iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = Header {
        format: format.to_string(),
        version: FORMAT_VERSION,
        payload_len: payload.len(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        meta,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend(bytes);
    out
}

fn decode<T: for<'de> Deserialize<'de>>(format: &str, bytes: &[u8]) -> Result<(T, Vec<f64>), DataError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| DataError::Format("missing header line".into()))?;
    let probe: serde_json::Value =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| DataError::Format(format!("header: {e}")))?;
    let found_format = probe.get("format").and_then(|v| v.as_str()).unwrap_or_default();
    if found_format != format {
        return Err(DataError::Format(format!("expected a {format} file, found `{found_format}`")));
    }
    let version = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(DataError::Version {
            format: format.to_string(),
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let header: Header<T> =
        serde_json::from_value(probe).map_err(|e| DataError::Format(format!("header: {e}")))?;
    let body = &bytes[newline + 1..];
    if body.len() != header.payload_len * 8 || hex::encode(Sha256::digest(body)) != header.sha256 {
        return Err(DataError::Checksum);
    }
    let payload = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header.meta, payload))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(io_err(path))
}

/// Record layout: `K[N], ask[N], bid[N], Y, Y_sign`; unlabelled records
/// store `NaN` for `Y` and `0` for `Y_sign`.
pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>, DataError> {
    let first = ds
        .markets
        .first()
        .ok_or_else(|| DataError::Insufficient("cannot store an empty dataset".into()))?;
    let family_assets: Vec<usize> = first.families().iter().map(|f| f.payoff.asset).collect();
    let family_sizes: Vec<usize> = first.families().iter().map(|f| f.strikes.len()).collect();
    if let Some(l) = &ds.labels {
        if l.len() != ds.markets.len() {
            return Err(DataError::Format(format!("{} labels for {} markets", l.len(), ds.markets.len())));
        }
    }
    let n = first.n_options();
    let mut payload = Vec::with_capacity(ds.markets.len() * (3 * n + 2));
    for (i, m) in ds.markets.iter().enumerate() {
        let same_layout = m.families().len() == family_assets.len()
            && m
                .families()
                .iter()
                .zip(family_assets.iter().zip(&family_sizes))
                .all(|(f, (&a, &s))| f.payoff.asset == a && f.strikes.len() == s)
            && m.box_upper() == first.box_upper()
            && m.bounds() == first.bounds();
        if !same_layout {
            return Err(DataError::Format(format!("market {i} has a different layout than market 0")));
        }
        payload.extend(m.features());
        match &ds.labels {
            Some(l) => payload.extend([l[i].price, l[i].sign as f64]),
            None => payload.extend([f64::NAN, 0.0]),
        }
    }
    let meta = DatasetMeta {
        split: ds.split,
        seed: ds.seed,
        assets: first.assets(),
        family_assets,
        family_sizes,
        box_upper: first.box_upper().to_vec(),
        bounds: *first.bounds(),
        labeled: ds.labels.is_some(),
        records: ds.markets.len(),
    };
    Ok(encode(DATASET_FORMAT, meta, &payload))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, DataError> {
    let (meta, payload): (DatasetMeta, _) = decode(DATASET_FORMAT, bytes)?;
    if meta.family_assets.len() != meta.family_sizes.len() {
        return Err(DataError::Format("family layout lengths differ".into()));
    }
    let n: usize = meta.family_sizes.iter().sum();
    let width = 3 * n + 2;
    if payload.len() != meta.records * width {
        return Err(DataError::Format(format!(
            "{} values do not form {} records of width {width}",
            payload.len(),
            meta.records
        )));
    }
    let mut markets = Vec::with_capacity(meta.records);
    let mut labels = Vec::with_capacity(meta.records);
    for rec in payload.chunks_exact(width) {
        let (features, tail) = rec.split_at(3 * n);
        let mut offset = 0;
        let families = meta
            .family_assets
            .iter()
            .zip(&meta.family_sizes)
            .map(|(&asset, &size)| {
                let strikes = features[offset..offset + size].to_vec();
                offset += size;
                OptionFamily {
                    payoff: PayoffSpec::call(asset),
                    strikes,
                }
            })
            .collect();
        let market = MarketInstance::new(
            meta.assets,
            families,
            features[n..2 * n].to_vec(),
            features[2 * n..].to_vec(),
            meta.box_upper.clone(),
            meta.bounds,
        )?;
        if meta.labeled {
            let sign = tail[1];
            if sign != 0.0 && sign != -1.0 {
                return Err(DataError::Format(format!("invalid sign label {sign}")));
            }
            labels.push(LabeledSample {
                features: features.to_vec(),
                price: tail[0],
                sign: sign as i8,
            });
        }
        markets.push(market);
    }
    Ok(Dataset {
        split: meta.split,
        seed: meta.seed,
        markets,
        labels: meta.labeled.then_some(labels),
    })
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<(), DataError> {
    write_file(path, &encode_dataset(ds)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    decode_dataset(&read_file(path)?)
}

/// Weights of every layer in order: `W` row-major, then `b`.
pub fn encode_model(model: &Mlp) -> Vec<u8> {
    let payload: Vec<f64> = model
        .layers()
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
        .collect();
    let meta = ModelMeta {
        dims: model.dims(),
        head: *model.head(),
    };
    encode(MODEL_FORMAT, meta, &payload)
}

pub fn decode_model(bytes: &[u8]) -> Result<Mlp, DataError> {
    let (meta, payload): (ModelMeta, _) = decode(MODEL_FORMAT, bytes)?;
    let expected: usize = meta.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if meta.dims.len() < 2 || payload.len() != expected {
        return Err(DataError::Format(format!(
            "{} weights do not fit dims {:?}",
            payload.len(),
            meta.dims
        )));
    }
    let mut rest = payload.as_slice();
    let mut layers = Vec::with_capacity(meta.dims.len() - 1);
    for w in meta.dims.windows(2) {
        let (weights, tail) = rest.split_at(w[0] * w[1]);
        let (bias, tail) = tail.split_at(w[1]);
        rest = tail;
        layers.push(Dense {
            inputs: w[0],
            outputs: w[1],
            weights: weights.to_vec(),
            bias: bias.to_vec(),
        });
    }
    Ok(Mlp::from_layers(layers, meta.head)?)
}

pub fn save_model(path: &Path, model: &Mlp) -> Result<(), DataError> {
    write_file(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<Mlp, DataError> {
    decode_model(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const UNIT_HEAD: HeadBounds = HeadBounds {
        cash_min: -1.0,
        cash_max: 1.0,
        position_max: 1.0,
    };

    const CHAIN: &str = "date,underlying_id,spot,kind,strike,bid,ask,volume
2024-01-02,AAA,100,call,95,6.0,6.2,300
2024-01-02,AAA,100,call,100,2.9,3.1,500
2024-01-02,AAA,100,call,105,1.0,1.1,200
";

    fn synthetic_chain(ids: usize, strikes: usize) -> Vec<OptionChainRow> {
        let mut rows = Vec::new();
        for u in 0..ids {
            let spot = 50.0 + 10.0 * u as f64;
            for s in 0..strikes {
                let k = spot * (0.8 + 0.4 * s as f64 / strikes.max(1) as f64);
                let p = (spot - k).max(0.0) + 0.05 * spot;
                rows.push(OptionChainRow {
                    date: "2024-01-02".into(),
                    underlying_id: format!("U{u}"),
                    spot,
                    kind: PayoffKind::Call,
                    strike: k,
                    bid: p * 0.99,
                    ask: p,
                    volume: (1000 - 7 * s) as u64,
                });
            }
        }
        rows
    }

    fn spec(n: usize, assets: usize, strikes: usize) -> SampleSpec {
        SampleSpec {
            n_samples: n,
            assets_per_sample: assets,
            strikes_per_asset: strikes,
            box_upper: 2.0,
            bounds: MarketBounds::default(),
        }
    }

    #[test]
    fn parses_well_formed_chain() {
        let rows = parse_chain(CHAIN.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].strike, 100.0);
        assert_eq!(rows[1].volume, 500);
    }

    #[test]
    fn rejects_bad_rows_with_line_numbers() {
        let bad = CHAIN.replace("2024-01-02,AAA,100,call,100", "2024-01-02,AAA,-100,call,100");
        match parse_chain(bad.as_bytes()) {
            Err(DataError::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "spot");
            }
            other => panic!("{other:?}"),
        }
        let bad = CHAIN.replace("1.0,1.1,200", "1.0,abc,200");
        match parse_chain(bad.as_bytes()) {
            Err(DataError::Parse { line, column, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(column, "ask");
            }
            other => panic!("{other:?}"),
        }
        let bad = CHAIN.replace("date,underlying_id", "day,underlying_id");
        assert!(matches!(parse_chain(bad.as_bytes()), Err(DataError::Parse { line: 1, .. })));
        let short = "date,underlying_id,spot,kind,strike,bid,ask\n";
        assert!(matches!(parse_chain(short.as_bytes()), Err(DataError::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_gives_empty_list() {
        assert!(parse_chain("".as_bytes()).unwrap().is_empty());
        assert!(parse_chain(CHAIN.lines().next().unwrap().as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn selection_by_volume_with_ties_to_lower_strike() {
        let mut rows = parse_chain(CHAIN.as_bytes()).unwrap();
        rows[2].volume = 300;
        let chains = group_chains(&rows);
        let (k, ask, bid) = chains[0].select(2, &MarketBounds::default()).unwrap();
        assert_eq!(k, vec![0.0, 95.0, 100.0]);
        assert_eq!(ask, vec![100.0, 6.2, 3.1]);
        assert_eq!(bid, vec![100.0, 6.0, 2.9]);
        assert!(matches!(
            chains[0].select(4, &MarketBounds::default()),
            Err(DataError::Insufficient(_))
        ));
    }

    #[test]
    fn five_asset_ten_strike_samples() {
        let rows = synthetic_chain(8, 12);
        let chains = group_chains(&rows);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let samples = build_samples(&chains, &spec(10, 5, 10), &mut rng).unwrap();
        assert_eq!(samples.len(), 10);
        assert!(samples.iter().all(|m| m.n_options() == 55 && m.assets() == 5));

        let only = build_samples(&chains, &spec(3, 1, 0), &mut rng).unwrap();
        assert!(only.iter().all(|m| m.n_options() == 1 && m.strikes() == [0.0]));
        // the underlying normalizes to a unit price
        assert!(only.iter().all(|m| m.ask() == [1.0] && m.bid() == [1.0]));
    }

    #[test]
    fn sample_composition_is_seeded() {
        let chains = group_chains(&synthetic_chain(8, 6));
        let draw = |seed| build_samples(&chains, &spec(5, 3, 4), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn insufficient_data_is_an_error() {
        let chains = group_chains(&synthetic_chain(2, 6));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            build_samples(&chains, &spec(1, 3, 4), &mut rng),
            Err(DataError::Insufficient(_))
        ));
        assert!(matches!(
            build_samples(&chains, &spec(1, 1, 7), &mut rng),
            Err(DataError::Insufficient(_))
        ));
    }

    #[test]
    fn normalizing_a_normalized_chain_is_identity() {
        let chains = group_chains(&synthetic_chain(3, 5));
        let picked: Vec<&UnderlyingChain> = chains.iter().collect();
        let raw = chains_to_raw(&picked, 4, &MarketBounds::default()).unwrap();
        let (m, _) = normalize_market(&raw, 2.0, MarketBounds::default()).unwrap();
        let again = RawMarket {
            families: m.families().to_vec(),
            ask: m.ask().to_vec(),
            bid: m.bid().to_vec(),
            spots: vec![1.0; 3],
        };
        assert_eq!(normalize_market(&again, 2.0, MarketBounds::default()).unwrap().0, m);
    }

    fn small_dataset(labeled: bool) -> Dataset {
        let gen = crate::train::GeneratorConfig::default();
        let markets = crate::train::generator::sample_markets(&gen, 7, 1).unwrap();
        let labels = labeled.then(|| {
            markets
                .iter()
                .enumerate()
                .map(|(i, m)| LabeledSample {
                    features: m.features(),
                    price: -(i as f64) * 0.013,
                    sign: if i > 0 { -1 } else { 0 },
                })
                .collect()
        });
        Dataset {
            split: Split::Train,
            seed: 1,
            markets,
            labels,
        }
    }

    #[test]
    fn dataset_round_trip() {
        for labeled in [true, false] {
            let ds = small_dataset(labeled);
            let back = decode_dataset(&encode_dataset(&ds).unwrap()).unwrap();
            assert_eq!(back, ds);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let ds = small_dataset(true);
        save_dataset(&path, &ds).unwrap();
        assert_eq!(load_dataset(&path).unwrap().labels, ds.labels);
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let head = HeadBounds {
            cash_min: -1.0,
            cash_max: 41.0,
            position_max: 1.0,
        };
        let model = Mlp::for_market(10, &[16, 8], head, 42).unwrap();
        let back = decode_model(&encode_model(&model)).unwrap();
        assert_eq!(back, model);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..2.0)).collect();
            assert_eq!(back.forward(&x).unwrap(), model.forward(&x).unwrap());
        }
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let model = Mlp::new(&[3, 4, 3], UNIT_HEAD, 1).unwrap();
        let bytes = encode_model(&model);
        assert!(matches!(decode_model(&bytes[..bytes.len() - 5]), Err(DataError::Checksum)));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(matches!(decode_model(&flipped), Err(DataError::Checksum)));

        let ds = encode_dataset(&small_dataset(true)).unwrap();
        assert!(matches!(decode_dataset(&ds[..ds.len() - 8]), Err(DataError::Checksum)));
        assert!(matches!(decode_model(&ds), Err(DataError::Format(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let model = Mlp::new(&[3, 4, 3], UNIT_HEAD, 1).unwrap();
        let bytes = encode_model(&model);
        let text = String::from_utf8_lossy(&bytes);
        let patched = text.replacen("\"version\":1", "\"version\":9", 1);
        let mut out = patched.as_bytes()[..patched.find('\n').unwrap() + 1].to_vec();
        out.extend(&bytes[bytes.iter().position(|&b| b == b'\n').unwrap() + 1..]);
        assert!(matches!(decode_model(&out), Err(DataError::Version { found: 9, .. })));
    }
}
