//! Subcommand implementations. Each returns the paths it wrote.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use arbdetect_core::dataio::{
    build_samples, group_chains, load_chain, load_dataset, load_model, save_dataset, save_model, Dataset, Example,
    SampleSpec, Split, UnderlyingChain,
};
use arbdetect_core::eval::{
    backtest, evaluate_model, histogram, histogram_csv, profit_stats, stats_table_csv, BacktestDay, EvalReport, Metrics,
    ProfitStats,
};
use arbdetect_core::lsip::{label_batch, sign_label, solve_superhedge, LsipStatus};
use arbdetect_core::market::MarketInstance;
use arbdetect_core::train::generator::sample_markets;
use arbdetect_core::train::{train, TrainConfig, TrainError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SweepRun};
use crate::failure::Failure;

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    if dir.as_os_str().is_empty() {
        return Ok(());
    }
    std::fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf, Failure> {
    ensure_dir(path.parent().unwrap_or(Path::new("")))?;
    std::fs::write(path, contents).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

fn labelled_examples(path: &Path) -> Result<Vec<Example>, Failure> {
    let ds = load_dataset(path)?;
    ds.examples()
        .ok_or_else(|| Failure::Input(format!("{}: dataset is not labelled, run `label` first", path.display())))
}

/// Synthetic markets, or samples assembled from option chains when `chains`
/// is given. Writes `train.bin` and, if `data.n_test > 0`, `test.bin`.
pub fn gen_data(cfg: &RunConfig, chains: Option<&Path>, out_dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let markets = match chains {
        None => sample_markets(&cfg.generator, cfg.data.n_samples, cfg.seed)
            .map_err(|e| Failure::Input(e.to_string()))?,
        Some(path) => {
            let grouped = group_chains(&load_chain(path)?);
            let spec = SampleSpec {
                n_samples: cfg.data.n_samples,
                assets_per_sample: cfg.data.assets_per_sample,
                strikes_per_asset: cfg.data.strikes_per_asset,
                box_upper: cfg.data.box_upper,
                bounds: cfg.data.bounds,
            };
            build_samples(&grouped, &spec, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?
        }
    };
    let (train_ds, test_ds) = Dataset::unlabeled(Split::Train, cfg.seed, markets).split_off(cfg.data.n_test);
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    let train_path = out_dir.join("train.bin");
    save_dataset(&train_path, &train_ds)?;
    written.push(train_path);
    if !test_ds.is_empty() {
        let test_path = out_dir.join("test.bin");
        save_dataset(&test_path, &test_ds)?;
        written.push(test_path);
    }
    log::info!("wrote {} train and {} test markets", train_ds.len(), test_ds.len());
    Ok(written)
}

/// Attaches superhedging labels to every market of a dataset.
pub fn label(cfg: &RunConfig, input: &Path, output: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut ds = load_dataset(input)?;
    let labels = label_batch(&ds.markets, &cfg.solver)
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Failure::Solver(format!("sample {i}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let arbitrage = labels.iter().filter(|l| l.is_arbitrage()).count();
    log::info!("labelled {} markets, {arbitrage} with arbitrage", labels.len());
    ds.labels = Some(labels);
    ensure_dir(output.parent().unwrap_or(Path::new("")))?;
    save_dataset(output, &ds)?;
    Ok(vec![output.to_path_buf()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub value: f64,
    pub lower_bound: f64,
    pub status: LsipStatus,
    pub iterations: usize,
    pub certified_min_payoff: f64,
    pub arbitrage: bool,
    /// Guaranteed profit per unit of the returned strategy, `max(-value, 0)`.
    pub magnitude: f64,
    pub strategy: arbdetect_core::market::Strategy,
}

/// Solves one market given as JSON and returns the report as pretty JSON.
pub fn solve(cfg: &RunConfig, market_path: &Path) -> Result<String, Failure> {
    let text = std::fs::read_to_string(market_path)
        .map_err(|e| Failure::Input(format!("{}: {e}", market_path.display())))?;
    let market: MarketInstance = serde_json::from_str(&text)
        .map_err(|e| Failure::Input(format!("{}: {e}", market_path.display())))?;
    let r = solve_superhedge(&market, &cfg.solver);
    if r.status != LsipStatus::Converged {
        return Err(Failure::Solver(format!(
            "solver stopped with status {:?} after {} iterations",
            r.status, r.iterations
        )));
    }
    let report = SolveReport {
        value: r.value,
        lower_bound: r.lower_bound,
        status: r.status,
        iterations: r.iterations,
        certified_min_payoff: r.certified_min_payoff,
        arbitrage: sign_label(r.value, cfg.solver.tol_label) < 0,
        magnitude: (-r.value).max(0.0),
        strategy: r.strategy,
    };
    Ok(serde_json::to_string_pretty(&report).expect("report serializes"))
}

/// Trains on a labelled dataset. On divergence the partial history is
/// still written before the failure is returned.
pub fn train_cmd(cfg: &RunConfig, train_path: &Path, test_path: Option<&Path>, out_dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let train_set = labelled_examples(train_path)?;
    let test_set = test_path.map(labelled_examples).transpose()?;
    let history_path = out_dir.join("history.csv");
    match train(&train_set, test_set.as_deref(), &cfg.train) {
        Ok((model, history)) => {
            let model_path = out_dir.join("model.bin");
            ensure_dir(out_dir)?;
            write_file(&history_path, history.to_csv())?;
            save_model(&model_path, &model)?;
            if let Some(last) = history.last() {
                log::info!(
                    "finished at iteration {}: loss {:.6}, train accuracy {:.4}, test accuracy {}",
                    last.iteration,
                    last.loss,
                    last.train_accuracy,
                    last.test_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into())
                );
            }
            Ok(vec![model_path, history_path])
        }
        Err(TrainError::Divergence { iteration, history }) => {
            write_file(&history_path, history.to_csv())?;
            Err(Failure::Divergence(format!(
                "loss became non-finite at iteration {iteration}; partial history in {}",
                history_path.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn metrics_csv(m: &Metrics) -> String {
    format!("{}\n{}\n", Metrics::CSV_HEADER, m.csv_row())
}

fn misclassified_profits(report: &EvalReport, examples: &[Example], per_sample: usize) -> Vec<f64> {
    examples
        .iter()
        .enumerate()
        .filter(|(i, e)| report.predicted[*i] != e.label.sign)
        .flat_map(|(i, _)| report.net_profits[i * per_sample..(i + 1) * per_sample].iter().copied())
        .collect()
}

/// Scores a model on a labelled dataset and writes metric, statistics and
/// histogram tables. Returns the written paths and the metrics.
pub fn eval_cmd(cfg: &RunConfig, model_path: &Path, data_path: &Path, out_dir: &Path) -> Result<(Vec<PathBuf>, Metrics), Failure> {
    let model = load_model(model_path)?;
    let examples = labelled_examples(data_path)?;
    let per_sample = cfg.eval.scenarios_per_sample;
    let report = evaluate_model(&model, &examples, per_sample, cfg.seed, cfg.solver.tol_label)?;
    let wrong = misclassified_profits(&report, &examples, per_sample);
    let bins = cfg.eval.histogram_bins;
    let mut written = vec![
        write_file(&out_dir.join("metrics.csv"), metrics_csv(&report.metrics))?,
        write_file(
            &out_dir.join("profit_stats.csv"),
            stats_table_csv(&[
                ("net_profit", Some(&report.profits)),
                ("misclassified", report.misclassified_profits.as_ref()),
            ]),
        )?,
        write_file(&out_dir.join("histogram.csv"), histogram_csv(&histogram(&report.net_profits, bins)))?,
    ];
    if !wrong.is_empty() {
        written.push(write_file(
            &out_dir.join("histogram_misclassified.csv"),
            histogram_csv(&histogram(&wrong, bins)),
        )?);
    }
    Ok((written, report.metrics))
}

#[derive(Debug, Deserialize)]
struct TerminalRow {
    #[serde(default)]
    date: Option<String>,
    underlying_id: String,
    price: f64,
}

/// Terminal prices keyed by `(date, id)`; an empty date applies to every day.
fn load_terminal(path: &Path) -> Result<BTreeMap<(String, String), f64>, Failure> {
    let fail = |e: csv::Error| Failure::Input(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(fail)?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<TerminalRow>() {
        let row = row.map_err(fail)?;
        if !(row.price.is_finite() && row.price >= 0.0) {
            return Err(Failure::Input(format!(
                "{}: terminal price of {} must be nonnegative",
                path.display(),
                row.underlying_id
            )));
        }
        out.insert((row.date.unwrap_or_default(), row.underlying_id), row.price);
    }
    Ok(out)
}

/// Applies the model to each quoted day and holds the strategy to expiry.
pub fn backtest_cmd(
    cfg: &RunConfig,
    model_path: &Path,
    chains_path: &Path,
    terminal_path: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, Failure> {
    let model = load_model(model_path)?;
    let chains = group_chains(&load_chain(chains_path)?);
    let terminal = load_terminal(terminal_path)?;
    let ids: Vec<String> = if cfg.backtest.underlyings.is_empty() {
        chains.iter().map(|c| c.underlying_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        cfg.backtest.underlyings.clone()
    };
    let by_key: BTreeMap<(&str, &str), &UnderlyingChain> = chains
        .iter()
        .map(|c| ((c.date.as_str(), c.underlying_id.as_str()), c))
        .collect();
    let dates: BTreeSet<&str> = chains.iter().map(|c| c.date.as_str()).collect();

    let mut days = Vec::new();
    let mut missing = Vec::new();
    for date in dates {
        let mut day = BacktestDay {
            date: date.to_string(),
            chains: Vec::new(),
            terminal: Vec::new(),
        };
        let mut problem = None;
        for id in &ids {
            let price = terminal
                .get(&(date.to_string(), id.clone()))
                .or_else(|| terminal.get(&(String::new(), id.clone())));
            match (by_key.get(&(date, id.as_str())), price) {
                (Some(c), Some(&p)) => {
                    day.chains.push((*c).clone());
                    day.terminal.push(p);
                }
                (None, _) => problem = Some(format!("no quotes for {id}")),
                (_, None) => problem = Some(format!("no terminal price for {id}")),
            }
        }
        match problem {
            Some(reason) => {
                log::warn!("skipping {date}: {reason}");
                missing.push((date.to_string(), reason));
            }
            None => days.push(day),
        }
    }

    let mut report = backtest(&model, &days, cfg.backtest.strikes_per_asset, cfg.backtest.box_upper, cfg.backtest.bounds);
    report.skipped.extend(missing);
    report.skipped.sort();
    let mut skipped = String::from("date,reason\n");
    for (date, reason) in &report.skipped {
        skipped.push_str(&format!("{date},\"{}\"\n", reason.replace('"', "\"\"")));
    }
    let mut written = vec![
        write_file(&out_dir.join("daily_profit.csv"), report.to_csv())?,
        write_file(&out_dir.join("skipped.csv"), skipped)?,
    ];
    if !report.days.is_empty() {
        let unscaled: Vec<f64> = report.days.iter().map(|d| d.unscaled).collect();
        let scaled: Vec<f64> = report.days.iter().map(|d| d.scaled).collect();
        let (u, s) = (profit_stats(&unscaled)?, profit_stats(&scaled)?);
        written.push(write_file(
            &out_dir.join("profit_stats.csv"),
            stats_table_csv(&[("unscaled", Some(&u)), ("scaled", Some(&s))]),
        )?);
    }
    log::info!("backtested {} days, skipped {}", report.days.len(), report.skipped.len());
    Ok(written)
}

/// Row label of a sweep run: `lr,depth,regularization`.
fn run_label(run: &SweepRun) -> String {
    let reg = serde_json::to_value(run.regularization).expect("enum serializes");
    format!("{},{},{}", run.lr, run.depth, reg.as_str().unwrap_or_default())
}

fn profit_row(s: &ProfitStats) -> String {
    format!("{},{},{},{},{},{},{},{}", s.count, s.mean, s.std, s.min, s.q25, s.q50, s.q75, s.max)
}

/// Trains and evaluates one network per sweep run. Diverged runs are kept
/// as rows with status `diverged` and empty values.
pub fn sweep(cfg: &RunConfig, train_path: &Path, test_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let train_set = labelled_examples(train_path)?;
    let test_set = labelled_examples(test_path)?;
    let mut metrics = format!("parameters,{},status\n", Metrics::CSV_HEADER);
    let mut profits = String::from("parameters,count,mean,std,min,q25,q50,q75,max,status\n");
    for run in &cfg.sweep.runs {
        let label = run_label(run);
        let train_cfg = TrainConfig {
            lr: run.lr,
            hidden: vec![cfg.sweep.width; run.depth],
            regularization: run.regularization,
            reg_strength: cfg.sweep.reg_strength,
            ..cfg.train.clone()
        };
        log::info!("sweep run {label}");
        match train(&train_set, None, &train_cfg) {
            Ok((model, _)) => {
                let report = evaluate_model(
                    &model,
                    &test_set,
                    cfg.eval.scenarios_per_sample,
                    cfg.seed,
                    cfg.solver.tol_label,
                )?;
                metrics.push_str(&format!("\"{label}\",{},ok\n", report.metrics.csv_row()));
                profits.push_str(&format!("\"{label}\",{},ok\n", profit_row(&report.profits)));
            }
            Err(TrainError::Divergence { iteration, .. }) => {
                log::warn!("sweep run {label} diverged at iteration {iteration}");
                metrics.push_str(&format!("\"{label}\",,,,,diverged\n"));
                profits.push_str(&format!("\"{label}\",,,,,,,,,diverged\n"));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(vec![
        write_file(&out_dir.join("sweep_metrics.csv"), metrics)?,
        write_file(&out_dir.join("sweep_profit_stats.csv"), profits)?,
    ])
}
