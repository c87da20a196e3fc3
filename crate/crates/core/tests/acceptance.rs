//! Acceptance report: one PASS/FAIL line per criterion, with the measured
//! numbers. Runs without the libtest harness so the lines always print.
//! A FAIL line is a finding, not a crash: the process still exits 0 as long
//! as every check ran, and the hard properties behind each criterion are
//! asserted by the dedicated suites.

mod support;

use std::sync::Arc;
use std::time::{Duration, Instant};

use neurdb_core::cc::{drift_experiment, BenchSpec};
use neurdb_core::config::Config;
use neurdb_core::datagen::{load_diabetes, load_review};
use neurdb_core::engine::AiEngine;
use neurdb_core::exec::{Database, QueryResult};
use neurdb_core::experiments::{drift_adaptation, streaming_vs_materialize, DriftConfig, LoaderConfig};
use neurdb_core::models::{payload, ModelStore};
use neurdb_core::nn::{Layer, Loss, Matrix, Network};
use neurdb_core::qo::{
    config_queries, enumerate_plans, evaluate, execute, mean_regret, pretrain, within_factor, workload,
    workload_params, DualModel, Mode, PretrainConfig, QueryStats, SkewMode, TrueCards,
};

const LISTING1: &str =
    "PREDICT VALUE OF score FROM review WHERE brand_name = 'Special Goods' TRAIN ON * WITH brand_name <> 'Special Goods'";
const LISTING2: &str = "PREDICT CLASS OF outcome FROM diabetes \
     TRAIN ON pregnancies, glucose, blood_pressure, skin_thickness, insulin, bmi, diabetes_pedigree, age \
     VALUES (6, 148, 72, 35, 0, 33.6, 0.627, 50), (1, 85, 66, 29, 0, 26.6, 0.351, 31)";

/// Hot join-key skew on one edge, near-uniform elsewhere.
const SKEW_DRIFT: SkewMode = SkewMode::HotEdge { hot: (1.5, 2.0), rest: (0.0, 0.5) };

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn ac1_predict() -> Verdict {
    let start = Instant::now();
    let cfg = Config { batch_size: 64, epochs: 8, lr: 0.05, ..Config::default() };
    let db = Database::open(cfg).unwrap();
    load_review(db.catalog(), "review", 3000, 7).unwrap();
    load_diabetes(db.catalog(), "diabetes", 3000, 8).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, sql) in [("regression", LISTING1), ("classification", LISTING2)] {
        match db.execute_one(sql) {
            Ok(QueryResult::Predict { rows, report }) => {
                let h = report.holdout.expect("holdout recorded");
                let gain = 1.0 - h.metric / h.baseline_metric;
                pass &= !rows.rows.is_empty() && gain >= 0.2;
                parts.push(format!(
                    "{name} {:.4} vs naive {:.4} ({:.0}% better)",
                    h.metric,
                    h.baseline_metric,
                    100.0 * gain
                ));
            }
            other => {
                pass = false;
                parts.push(format!("{name} failed: {other:?}"));
            }
        }
    }
    let t = start.elapsed();
    pass &= t < Duration::from_secs(60);
    verdict(pass, format!("{}; {:.1} s", parts.join(", "), t.as_secs_f64()))
}

fn ac2_drift() -> Verdict {
    let engine = AiEngine::in_process();
    let mut counts = Vec::new();
    for seed in [1, 2, 3] {
        let mut cfg = DriftConfig::default();
        cfg.data.seed = seed;
        let r = drift_adaptation(&engine, &cfg).unwrap();
        counts.push((r.improved_switches(), r.switches.len()));
    }
    let pass = counts.iter().all(|(k, n)| *n == 4 && *k >= 3);
    let shown: Vec<String> = counts.iter().map(|(k, n)| format!("{k}/{n}")).collect();
    verdict(pass, format!("switches with lower post-switch loss per seed: {}", shown.join(", ")))
}

fn ac3_streaming() -> Verdict {
    let r = streaming_vs_materialize(&AiEngine::in_process(), &LoaderConfig::default()).unwrap();
    let pass = r.speedup() >= 1.3 && r.streamed.peak_resident < r.materialized.peak_resident;
    verdict(
        pass,
        format!(
            "500k rows: {:.0} vs {:.0} rows/s ({:.2}x, need 1.3x); peak resident batches {} vs {}; {} CPU(s)",
            r.streamed.rows_per_sec,
            r.materialized.rows_per_sec,
            r.speedup(),
            r.streamed.peak_resident,
            r.materialized.peak_resident,
            std::thread::available_parallelism().map_or(1, |n| n.get()),
        ),
    )
}

fn ac4_versioning() -> Verdict {
    let mut net = Network::new(vec![Layer::linear(4, 3), Layer::linear(3, 2), Layer::linear(2, 1)], Loss::Mse).unwrap();
    net.init(1);
    let store = ModelStore::in_memory();
    let v1 = store.store_initial(1, &net, 1).unwrap();
    let before = store.storage_bytes(1);
    let mut tuned = net.layers()[2].clone();
    tuned.weights_mut()[0] += 0.5;
    store.incremental_update(1, 1, &[tuned.clone()], 2).unwrap();
    let v2 = store.resolve(1, 2).unwrap();
    let growth = store.storage_bytes(1) - before;
    let layer_bytes = payload::encode_layer(1, 3, 2, &tuned).len();
    let (r1, r2) = (store.view_records(&v1).unwrap(), store.view_records(&v2).unwrap());
    let shared = r1.iter().zip(&r2).take(2).all(|(a, b)| Arc::ptr_eq(a, b));
    let pass = v2.version_vector() == [1, 1, 2] && growth == layer_bytes && shared && !Arc::ptr_eq(&r1[2], &r2[2]);
    verdict(
        pass,
        format!(
            "resolve(2) versions {:?}; growth {growth} B vs one layer {layer_bytes} B; prefix shared: {shared}",
            v2.version_vector()
        ),
    )
}

fn ac5_serializability() -> Verdict {
    let r = support::histories::check_histories(10_000, 2024, false);
    verdict(
        r.histories == 10_000 && r.violations.is_empty(),
        format!(
            "{} histories, {} committed, {} aborted, {} violations",
            r.histories,
            r.committed,
            r.aborted,
            r.violations.len()
        ),
    )
}

fn ac6_cc_adaptation() -> Verdict {
    let mut gains = Vec::new();
    let mut vs_best = Vec::new();
    let mut rows = Vec::new();
    for seed in 1..=5 {
        let mut spec = BenchSpec::default();
        spec.workload.seed = seed;
        let o = drift_experiment(&spec, 3000);
        gains.push(o.gain_over_frozen());
        vs_best.push(o.adapted / o.best_baseline());
        rows.push(format!("{:.0}/{:.0}/{:.0}/{:.0}", o.adapted, o.frozen, o.two_pl, o.occ));
    }
    let (g, b) = (median(gains), median(vs_best));
    verdict(
        g >= 1.15 && b >= 1.0,
        format!(
            "median gain over frozen {g:.2}x (need 1.15x), median adapted/best baseline {b:.3}; adapted/frozen/2pl/occ per seed: {}",
            rows.join(" ")
        ),
    )
}

fn ac7_qo() -> Verdict {
    let mut model = DualModel::new(1);
    pretrain(&mut model, &PretrainConfig::default()).unwrap();
    let held = workload(3, 20, 5, 777, SkewMode::Space).unwrap();
    let out = evaluate(Some(&model), Mode::Learned, &held).unwrap();
    let within = within_factor(&out, 1.3);

    let drifted = workload(3, 20, 5, 888, SKEW_DRIFT).unwrap();
    let learned = mean_regret(&evaluate(Some(&model), Mode::Learned, &drifted).unwrap());
    let builtin = mean_regret(&evaluate(None, Mode::Builtin, &drifted).unwrap());

    // Every candidate of every held-out query, executed on a row-capped
    // instance of its schema.
    let (mut queries, mut mismatches) = (0, 0);
    for (p, qseed) in workload_params(3, 20, 777, SkewMode::Space) {
        let small = p.scaled_down(300.0);
        let db = small.generate().unwrap();
        for q in config_queries(&small, 5, qseed) {
            let stats = QueryStats::build(&q, &db).unwrap();
            let cards = TrueCards::compute(&q, &db).unwrap();
            let plans = enumerate_plans(&q, &stats).unwrap().plans;
            let first = execute(&q, &db, &plans[0]).unwrap();
            for plan in &plans {
                let e = execute(&q, &db, plan).unwrap();
                if e.rows != first.rows || e.tuples_touched as f64 != cards.cost(plan) {
                    mismatches += 1;
                }
            }
            queries += 1;
        }
    }
    let pass = out.len() == 100 && within >= 0.8 && learned < builtin && queries == 100 && mismatches == 0;
    verdict(
        pass,
        format!(
            "{} held-out queries within 1.3x: {:.0}% (need 80%); skew-drift mean regret learned {learned:.3} vs builtin {builtin:.3} (need lower); {mismatches} multiset mismatches over {queries} queries",
            out.len(),
            100.0 * within
        ),
    )
}

fn ac8_protocol() -> Verdict {
    let r = support::fuzz::fuzz_frames(100_000, 8);
    verdict(
        r.ok(),
        format!(
            "{} frames, {} round trips, {} truncations and {} oversized rejected, {} garbage inputs handled, {} failures",
            r.frames,
            r.round_trips,
            r.truncated_rejected,
            r.oversized_rejected,
            r.garbage_handled,
            r.failures.len()
        ),
    )
}

fn ac9_numerics() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        for (net, x, y) in support::gradcheck::gradcheck_cases(seed) {
            worst = worst.max(support::gradcheck::max_param_rel_error(&net, &x, &y));
            if net.loss() == Loss::Mse {
                worst = worst.max(support::gradcheck::input_rel_error(&net, &x, &y));
            }
        }
    }
    let mut ce: f64 = 0.0;
    for classes in [2usize, 3, 10] {
        let net = Network::new(vec![Layer::linear(3, classes), Layer::softmax()], Loss::CrossEntropy).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, -1.0]]).unwrap();
        let loss = net.evaluate(&x, &[0.0, (classes - 1) as f32]).unwrap() as f64;
        ce = ce.max((loss - (classes as f64).ln()).abs());
    }
    verdict(
        worst < 1e-4 && ce <= 1e-6,
        format!("worst gradient relative error {worst:.2e} (need < 1e-4); uniform cross-entropy off ln(C) by {ce:.1e}"),
    )
}

fn main() {
    let checks: [(&str, &str, fn() -> Verdict); 9] = [
        ("AC1", "PREDICT end to end", ac1_predict),
        ("AC2", "drift adaptation", ac2_drift),
        ("AC3", "streaming benefit", ac3_streaming),
        ("AC4", "model versioning", ac4_versioning),
        ("AC5", "serializability", ac5_serializability),
        ("AC6", "CC adaptation", ac6_cc_adaptation),
        ("AC7", "QO quality", ac7_qo),
        ("AC8", "protocol robustness", ac8_protocol),
        ("AC9", "numerical core", ac9_numerics),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let mut failed = Vec::new();
    for (id, name, check) in checks {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let t = Instant::now();
        let v = check();
        println!(
            "{id} {} {name}: {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        if !v.pass {
            failed.push(id);
        }
    }
    println!(
        "acceptance: {} failing: {}",
        if failed.is_empty() { "all passed" } else { "some criteria" },
        failed.join(" ")
    );
}
