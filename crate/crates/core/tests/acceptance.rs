//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process exits nonzero if any check fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use arbdetect_core::dataio::{encode_dataset, encode_model, Dataset, Example, Split};
use arbdetect_core::eval::evaluate_model;
use arbdetect_core::lsip::{label_batch, solve_superhedge, LabeledSample, LsipStatus, SolverConfig};
use arbdetect_core::market::{MarketBounds, MarketInstance, OptionFamily, PayoffSpec, Strategy};
use arbdetect_core::nn::{HeadBounds, Mlp};
use arbdetect_core::train::generator::sample_markets;
use arbdetect_core::train::{loss, strategy_loss, train, GeneratorConfig, TrainConfig};
use common::{grid_lp_value, grid_min_payoff, payoff_lipschitz, random_small_market, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn spread_market() -> MarketInstance {
    MarketInstance::new(
        1,
        vec![OptionFamily {
            payoff: PayoffSpec::call(0),
            strikes: vec![0.9, 1.1],
        }],
        vec![0.05, 0.12],
        vec![0.04, 0.10],
        vec![2.0],
        MarketBounds::default(),
    )
    .unwrap()
}

fn labelled(markets: Vec<MarketInstance>, cfg: &SolverConfig) -> Vec<Example> {
    let labels = label_batch(&markets, cfg);
    markets
        .into_iter()
        .zip(labels)
        .map(|(market, l)| Example {
            market,
            label: l.expect("labelling converged"),
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let step = 0.005;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..50 {
        let m = random_small_market(1000 + seed);
        let r = solve_superhedge(&m, &SolverConfig::default());
        let (grid, _) = grid_lp_value(&m, step);
        let tol = 1e-6 + payoff_lipschitz(&m) * step;
        let gap = (r.value - grid).abs();
        worst = worst.max(gap / tol);
        if r.status != LsipStatus::Converged || gap > tol {
            failures.push(seed);
        }
    }
    let elapsed = start.elapsed();
    check(
        failures.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "50 markets, worst gap {worst:.3} of tolerance, {:.1}s, failing seeds {failures:?}",
            elapsed.as_secs_f64()
        ),
    )
}

fn spread_instance() -> Outcome {
    let m = spread_market();
    let r = solve_superhedge(&m, &SolverConfig::default());
    let verdict = m
        .classify_strategy(&r.strategy, |m, s| arbdetect_core::lsip::worst_payoff(m, s))
        .unwrap();
    let (grid, _) = grid_lp_value(&m, 0.005);
    check(
        (r.value + 0.05).abs() <= 1e-6 && verdict.is_arbitrage && verdict.magnitude >= 0.05 - 1e-6,
        format!(
            "V = {:.9} (expected -0.05 ± 1e-6; grid LP gives {:.9}), arbitrage = {}, magnitude = {:.9}",
            r.value, grid, verdict.is_arbitrage, verdict.magnitude
        ),
    )
}

fn feasibility_guarantee() -> Outcome {
    let mut problems = Vec::new();
    let mut count = 0;
    for seed in 0..200 {
        let m = random_small_market(5000 + seed);
        let r = solve_superhedge(&m, &SolverConfig::default());
        if r.status != LsipStatus::Converged {
            continue;
        }
        count += 1;
        let (grid_min, _) = grid_min_payoff(&m, &r.strategy.to_vec(), &Grid::new(&m, 0.01));
        if r.certified_min_payoff < 0.0 || grid_min < -1e-12 || r.value > 0.0 {
            problems.push(format!("seed {seed}"));
        }
    }
    let gen = GeneratorConfig {
        arbitrage_prob: 0.0,
        max_half_spread: 0.0,
        ..GeneratorConfig::default()
    };
    let fair = sample_markets(&gen, 100, 77).unwrap();
    let mut worst_fair: f64 = 0.0;
    for m in &fair {
        let r = solve_superhedge(m, &SolverConfig::default());
        worst_fair = worst_fair.max(r.value.abs());
    }
    check(
        problems.is_empty() && count == 200 && worst_fair <= 1e-7,
        format!("{count} converged solves, violations {problems:?}, max |V| on 100 fair markets {worst_fair:.2e}"),
    )
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gen = GeneratorConfig {
        assets: 1,
        strikes_per_asset: 2,
        ..GeneratorConfig::default()
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..20u64 {
        let market = sample_markets(&gen, 1, seed).unwrap().remove(0);
        let n = market.n_options();
        let head = HeadBounds {
            cash_min: -1.0,
            cash_max: 3.0,
            position_max: 1.0,
        };
        let model = Mlp::for_market(n, &[6, 5], head, seed).unwrap();
        let example = Example {
            label: LabeledSample {
                features: market.features(),
                price: 0.0,
                sign: if seed % 2 == 0 { 0 } else { -1 },
            },
            market,
        };
        let scenarios: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.gen_range(0.0..2.0)]).collect();
        let gamma = 5.0;
        let (_, grads) = loss(&model, &example, &scenarios, gamma).unwrap();
        let analytic = grads.flat();
        let kinks = |m: &Mlp| {
            let t = m.forward_trace(&example.label.features).unwrap();
            let s = &t.strategy;
            let f = example.market.strategy_price(s).unwrap();
            let signs: Vec<bool> = scenarios
                .iter()
                .map(|sc| example.market.strategy_payoff(s, sc).unwrap() < 0.0)
                .collect();
            (t.relu_pattern(), signs, f > 0.0)
        };
        let base = kinks(&model);
        let value = |m: &Mlp| loss(m, &example, &scenarios, gamma).unwrap().0.total;
        let step = 1e-6;
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for i in 0..model.n_params() {
            let mut plus = model.clone();
            *plus.param_mut(i) += step;
            let mut minus = model.clone();
            *minus.param_mut(i) -= step;
            if kinks(&plus) != base || kinks(&minus) != base {
                continue;
            }
            let fd = (value(&plus) - value(&minus)) / (2.0 * step);
            diff += (fd - analytic[i]).powi(2);
            norm += analytic[i].powi(2).max(fd * fd);
        }
        let rel = diff.sqrt() / norm.sqrt().max(1e-12);
        worst = worst.max(rel);
        checked += 1;
    }
    check(worst < 1e-5, format!("{checked} models, worst relative error {worst:.2e}"))
}

fn output_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let head = HeadBounds {
        cash_min: -1.0,
        cash_max: 41.0,
        position_max: 1.0,
    };
    let mut violations = 0;
    let mut model = Mlp::for_market(10, &[16, 16], head, 0).unwrap();
    for trial in 0..10_000 {
        if trial % 100 == 0 {
            let scale = 10f64.powf(rng.gen_range(-2.0..3.0));
            for i in 0..model.n_params() {
                *model.param_mut(i) = scale * rng.gen_range(-1.0..1.0);
            }
        }
        let x: Vec<f64> = (0..30).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let s = model.forward(&x).unwrap();
        let ok = (head.cash_min..=head.cash_max).contains(&s.cash)
            && s.long.iter().chain(&s.short).all(|h| (0.0..=head.position_max).contains(h));
        if !ok {
            violations += 1;
        }
    }
    check(violations == 0, format!("10000 pairs, {violations} violations"))
}

/// Configuration of the desk-scale experiment.
fn desk_train_config() -> TrainConfig {
    TrainConfig {
        n_iter: 5000,
        batch_size: 512,
        scenario_batch: 64,
        gamma_max: 1000.0,
        lr: 3e-4,
        hidden: vec![128; 3],
        seed: 0,
        log_every: 500,
        init_strategy: Some((0.0, 0.0474)),
        ..TrainConfig::default()
    }
}

fn desk_scale_training() -> Outcome {
    let start = Instant::now();
    let cfg = SolverConfig::default();
    let examples = labelled(sample_markets(&GeneratorConfig::default(), 2000, 2024).unwrap(), &cfg);
    let arb_rate = examples.iter().filter(|e| e.label.is_arbitrage()).count() as f64 / 2000.0;
    let (test, train_set) = examples.split_at(400);
    let (model, _) = train(train_set, Some(test), &desk_train_config()).map_err(|e| e.to_string())?;
    let report = evaluate_model(&model, test, 200, 1, cfg.tol_label).map_err(|e| e.to_string())?;
    let negative =
        report.net_profits.iter().filter(|&&p| p < 0.0).count() as f64 / report.net_profits.len() as f64;
    let elapsed = start.elapsed();
    check(
        (0.4..=0.6).contains(&arb_rate)
            && report.metrics.correct_fraction >= 0.80
            && report.profits.mean > 0.0
            && negative < 0.25
            && elapsed < Duration::from_secs(900),
        format!(
            "arbitrage rate {arb_rate:.3}, test accuracy {:.4}, mean net profit {:.5}, negative fraction {negative:.4}, {:.0}s",
            report.metrics.correct_fraction,
            report.profits.mean,
            elapsed.as_secs_f64()
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = SolverConfig::default();
    let markets = sample_markets(&GeneratorConfig::default(), 300, 5).unwrap();
    let label_once = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let labels = pool.install(|| label_batch(&markets, &cfg));
        let ds = Dataset {
            split: Split::Train,
            seed: 5,
            markets: markets.clone(),
            labels: Some(labels.into_iter().map(Result::unwrap).collect()),
        };
        encode_dataset(&ds).unwrap()
    };
    let labels_same = label_once(1) == label_once(4) && label_once(4) == label_once(4);

    let examples = labelled(markets.clone(), &cfg);
    let tc = TrainConfig {
        n_iter: 300,
        batch_size: 32,
        scenario_batch: 16,
        hidden: vec![32, 32],
        gamma_max: 100.0,
        lr: 1e-3,
        log_every: 25,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let (m, h) = train(&examples[..250], Some(&examples[250..]), &tc).unwrap();
        (encode_model(&m), h.to_csv())
    };
    let (a, b) = (run(), run());
    check(
        labels_same && a == b,
        format!("label artifacts identical: {labels_same}, train artifacts identical: {}", a == b),
    )
}

fn penalty_semantics() -> Outcome {
    let m = spread_market();
    let scen = [vec![0.0], vec![0.95], vec![2.0]];
    let mut failures = Vec::new();
    // payoff penalty: zero iff every sampled payoff is nonnegative
    let cases = [
        (Strategy { cash: 0.0, long: vec![0.0, 0.0], short: vec![0.0, 0.0] }, true),
        (Strategy { cash: 0.0, long: vec![1.0, 0.0], short: vec![0.0, 1.0] }, true),
        (Strategy { cash: 0.0, long: vec![1.0, 0.0], short: vec![0.0, 0.0] }, true),
        (Strategy { cash: 0.0, long: vec![0.0, 0.0], short: vec![1.0, 0.0] }, false),
        (Strategy { cash: -0.01, long: vec![0.0, 0.0], short: vec![0.0, 0.0] }, false),
    ];
    for (i, (s, feasible)) in cases.iter().enumerate() {
        let all_nonneg = scen.iter().all(|x| m.strategy_payoff(s, x).unwrap() >= 0.0);
        let p = strategy_loss(&m, 0, s, &scen, 3.0).0.infeasibility;
        if all_nonneg != *feasible || (p == 0.0) != all_nonneg || p < 0.0 {
            failures.push(format!("payoff case {i}"));
        }
    }
    // sign penalty, including the boundary f = 0
    for (sign, cash, zero) in [(0i8, 0.0, true), (0, 0.2, true), (0, -0.2, false), (-1, 0.0, true), (-1, -0.2, true), (-1, 0.2, false)] {
        let s = Strategy { cash, long: vec![0.0, 0.0], short: vec![0.0, 0.0] };
        let p = strategy_loss(&m, sign, &s, &scen, 3.0).0.sign_penalty;
        if (p == 0.0) != zero {
            failures.push(format!("sign case ({sign}, {cash})"));
        }
    }
    check(failures.is_empty(), format!("failures {failures:?}"))
}

fn monotone_bound() -> Outcome {
    let mut bad = Vec::new();
    let mut solved = 0;
    let mut largest_drop: f64 = 0.0;
    let gen = GeneratorConfig::default();
    let mut markets: Vec<MarketInstance> = (0..100).map(|s| random_small_market(9000 + s)).collect();
    markets.extend(sample_markets(&gen, 200, 31).unwrap());
    markets.push(spread_market());
    for (i, m) in markets.iter().enumerate() {
        let r = solve_superhedge(m, &SolverConfig::default());
        solved += 1;
        for w in r.bound_history.windows(2) {
            largest_drop = largest_drop.max(w[0] - w[1]);
        }
        // an added cut cannot lower the LP optimum; allow simplex round-off only
        if r.bound_history.windows(2).any(|w| w[1] < w[0] - 1e-9 * (1.0 + w[0].abs())) {
            bad.push(i);
        }
    }
    check(
        bad.is_empty() && cfg!(debug_assertions),
        format!(
            "{solved} instances, non-monotone {bad:?}, largest round-off drop {largest_drop:.1e}, in-solver assertion active: {}",
            cfg!(debug_assertions)
        ),
    )
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("oracle equivalence with brute-force grid LP", oracle_equivalence),
        ("spread arbitrage instance", spread_instance),
        ("feasibility guarantee", feasibility_guarantee),
        ("loss gradient correctness", gradient_correctness),
        ("output-bound structural check", output_bounds),
        ("desk-scale training", desk_scale_training),
        ("determinism of label and train artifacts", determinism),
        ("penalty semantics", penalty_semantics),
        ("monotone cutting-plane bound", monotone_bound),
    ];
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("[{}] PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[{}] FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
