use std::sync::OnceLock;

use neurdb_core::qo::*;
use neurdb_core::sql::{parse_statement, Statement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DRIFT: SkewMode = SkewMode::HotEdge { hot: (1.5, 2.0), rest: (0.0, 0.5) };

fn labeled(seed: u64) -> Labeled {
    let p = GenParams::from_unit(3, &vec![0.4; GenParams::dims(3)], seed);
    label_config(&p, 1, seed).unwrap().remove(0)
}

/// Pretrained once with the default budget of 30 and shared by the tests
/// that need a trained model.
fn trained() -> &'static (DualModel, DualModel) {
    static MODEL: OnceLock<(DualModel, DualModel)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let init = DualModel::new(1);
        let mut m = init.clone();
        pretrain(&mut m, &PretrainConfig::default()).unwrap();
        (init, m)
    })
}

fn samples(set: &[Labeled]) -> Vec<Sample> {
    set.iter().flat_map(|l| l.samples()).collect()
}

#[test]
fn zero_model_scores_ties_and_picks_first() {
    let l = labeled(3);
    let m = DualModel::zeroed();
    let scores: Vec<f64> = l.plans.iter().map(|p| m.score(p, &l.cond)).collect();
    assert!(scores.windows(2).all(|w| w[0] == w[1]), "{scores:?}");
    assert_eq!(m.choose(&l.plans, &l.cond).unwrap(), 0);
}

#[test]
fn untrained_model_still_returns_a_plan() {
    let l = labeled(4);
    let m = DualModel::new(9);
    assert!(m.choose(&l.plans, &l.cond).unwrap() < l.plans.len());
    assert_eq!(m.choose(&l.plans[..1], &l.cond).unwrap(), 0);
    assert!(m.choose(&[], &l.cond).is_err());
}

#[test]
fn scoring_is_pure() {
    let l = labeled(5);
    let m = DualModel::new(2);
    let copy = m.clone();
    for p in &l.plans {
        assert_eq!(m.score(p, &l.cond).to_bits(), m.score(p, &l.cond).to_bits());
        assert_eq!(m.score(p, &l.cond).to_bits(), copy.score(p, &l.cond).to_bits());
    }
}

#[test]
fn condition_order_follows_query_table_order() {
    let p = GenParams::from_unit(3, &vec![0.4; GenParams::dims(3)], 6);
    let db = p.generate().unwrap();
    let q = p.random_query(&mut ChaCha8Rng::seed_from_u64(6));
    let mut rev = q.clone();
    rev.tables.reverse();
    let a = SystemCondition::build(&QueryStats::build(&q, &db).unwrap());
    let b = SystemCondition::build(&QueryStats::build(&rev, &db).unwrap());
    // Buffer tokens come first, one per table, in query order.
    for i in 0..3 {
        assert_eq!(a.tokens()[i], b.tokens()[2 - i]);
    }
    assert_ne!(a.tokens(), b.tokens());
    let stats = QueryStats::build(&q, &db).unwrap();
    let plan = &enumerate_plans(&q, &stats).unwrap().plans[0];
    let m = DualModel::new(3);
    assert_ne!(m.score(plan, &a), m.score(plan, &b));
}

#[test]
fn hit_ratio_change_touches_one_token() {
    let l = labeled(7);
    let c = l.cond.with_hit_ratio(1, 0.123);
    let diff: Vec<usize> = (0..COND_TOKENS).filter(|i| c.tokens()[*i] != l.cond.tokens()[*i]).collect();
    assert_eq!(diff, vec![1]);
    assert_eq!(c.tokens().len(), COND_TOKENS);
}

#[test]
fn single_scan_plan_has_one_node_token() {
    let p = GenParams::from_unit(1, &vec![0.5; GenParams::dims(1)], 1);
    let l = label_config(&p, 1, 1).unwrap().remove(0);
    assert_eq!(l.plans.len(), 1);
    assert_eq!(l.plans[0].features().len(), 1);
}

#[test]
fn finetune_requires_labels() {
    let mut m = DualModel::new(1);
    assert_eq!(finetune_on_labels(&mut m, &[], 5, 0.05), Err(QoError::NoLabels));
}

#[test]
fn finetune_reduces_drift_error_and_freezes_encoder() {
    let drift = workload(3, 4, 4, 21, DRIFT).unwrap();
    let data = samples(&drift);
    let mut m = DualModel::new(4);
    let before = m.mse(&data);
    let encoder = m.params.clone();
    let losses = finetune_on_labels(&mut m, &data, 40, 0.05).unwrap();
    assert_eq!(losses.len(), 40);
    assert!(m.mse(&data) < before, "{} !< {before}", m.mse(&data));
    for (a, b) in encoder.iter().zip(&m.params) {
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn pretrain_budget_zero_is_identity() {
    let mut m = DualModel::new(5);
    let before = m.clone();
    let rounds = pretrain(&mut m, &PretrainConfig { budget: 0, ..Default::default() }).unwrap();
    assert!(rounds.is_empty());
    assert_eq!(m, before);
}

#[test]
fn pretraining_lowers_validation_error() {
    let (init, m) = trained();
    let val = samples(&workload(3, 10, 3, 4242, SkewMode::Space).unwrap());
    assert!(m.mse(&val) < init.mse(&val), "{} !< {}", m.mse(&val), init.mse(&val));
}

#[test]
fn trained_regret_beats_random_choice() {
    let (_, m) = trained();
    let held = workload(3, 20, 5, 777, SkewMode::Space).unwrap();
    let out = evaluate(Some(m), Mode::Learned, &held).unwrap();
    assert_eq!(out.len(), 100);
    let learned: Vec<f64> = out.iter().map(Outcome::regret).collect();
    let random: Vec<f64> = held
        .iter()
        .map(|l| l.costs.iter().map(|c| c / l.oracle_cost() - 1.0).sum::<f64>() / l.costs.len() as f64)
        .collect();
    // One-sided sign test on paired per-query regrets.
    let wins = learned.iter().zip(&random).filter(|(a, b)| a < b).count();
    let losses = learned.iter().zip(&random).filter(|(a, b)| a > b).count();
    let n = wins + losses;
    let z = (wins as f64 - n as f64 / 2.0) / (n as f64 / 4.0).sqrt();
    assert!(z > 2.33, "wins {wins} losses {losses}");
    assert!(mean_regret(&out) < random_choice_regret(&held));
}

#[test]
fn training_ranks_a_tenfold_cheaper_plan_first() {
    let l = (0..50)
        .map(labeled)
        .find(|l| {
            let max = l.costs.iter().copied().fold(0.0, f64::max);
            max >= 10.0 * l.oracle_cost()
        })
        .expect("a query with a tenfold cost spread");
    let (a, _) = l.costs.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).unwrap();
    let (b, _) = l.costs.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap();
    let mut m = DualModel::new(11);
    let mut opt = Adam::new(3e-3);
    let data: Vec<Sample> = l.samples().collect();
    for _ in 0..300 {
        m.adam_step(&data, &mut opt);
    }
    assert!(m.score(&l.plans[a], &l.cond) < m.score(&l.plans[b], &l.cond));
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    let l = labeled(8);
    let batch: Vec<Sample> = l.samples().take(3).collect();
    let m = DualModel::new(12);
    let g = m.encoder_gradient(&batch);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eps = 1e-3;
    let mut checked = 0;
    for (slot, grad) in g.iter().enumerate() {
        for _ in 0..4 {
            let i = rng.gen_range(0..grad.data.len());
            let analytic = grad.data[i];
            let mut plus = m.clone();
            plus.params[slot].data[i] += eps;
            let mut minus = m.clone();
            minus.params[slot].data[i] -= eps;
            let numeric = (plus.mse(&batch) - minus.mse(&batch)) / (2.0 * eps);
            // The analyzer head runs in f32: a loss near 1 carries about 1e-7
            // rounding, which the central difference magnifies to ~1e-4.
            let scale = analytic.abs().max(numeric.abs());
            if scale < 1e-3 {
                continue;
            }
            let err = (analytic - numeric).abs();
            assert!(err < 2e-2 * scale + 1e-4, "slot {slot}[{i}]: analytic {analytic} numeric {numeric}");
            checked += 1;
        }
    }
    assert!(checked >= 10, "only {checked} entries checked");
}

#[test]
fn query_from_select() {
    let p = GenParams::from_unit(3, &vec![0.4; GenParams::dims(3)], 2);
    let db = p.generate().unwrap();
    let sql = "SELECT * FROM t0 JOIN t1 ON t0.k0_1 = t1.k0_1 JOIN t2 ON t1.k1_2 = t2.k1_2 \
               WHERE t0.f >= 10 AND t0.f < 100 AND 500 > t2.f";
    let Statement::Select(s) = parse_statement(sql).unwrap() else { panic!("not a select") };
    let q = Query::from_select(&s, &db).unwrap();
    assert_eq!(q.tables, vec!["t0", "t1", "t2"]);
    assert_eq!(q.joins.len(), 2);
    assert!(q.is_connected());
    let f0 = q.filters.iter().find(|f| f.col.table == 0).unwrap();
    assert_eq!((f0.lo, f0.hi), (10, 99));
    let f2 = q.filters.iter().find(|f| f.col.table == 2).unwrap();
    assert_eq!((f2.lo, f2.hi), (i64::MIN, 499));

    let bad = |sql: &str| {
        let Statement::Select(s) = parse_statement(sql).unwrap() else { panic!("not a select") };
        Query::from_select(&s, &db)
    };
    assert!(matches!(bad("SELECT * FROM t0 WHERE t0.nope = 1"), Err(QoError::UnknownColumn(_))));
    assert!(matches!(bad("SELECT * FROM nope"), Err(QoError::UnknownTable(_))));
    assert!(matches!(bad("SELECT * FROM t0 JOIN t1 ON t0.f = t1.f WHERE t0.f <> 3"), Err(QoError::Unsupported(_))));
}

#[test]
fn candidates_return_identical_multisets() {
    for seed in 0..4 {
        let u: Vec<f64> = (0..GenParams::dims(3)).map(|i| ((seed * 7 + i as u64) % 10) as f64 / 10.0).collect();
        let p = GenParams::from_unit(3, &u, seed).scaled_down(300.0);
        let db = p.generate().unwrap();
        let q = p.random_query(&mut ChaCha8Rng::seed_from_u64(seed));
        let stats = QueryStats::build(&q, &db).unwrap();
        let cards = TrueCards::compute(&q, &db).unwrap();
        let plans = enumerate_plans(&q, &stats).unwrap().plans;
        let first = execute(&q, &db, &plans[0]).unwrap();
        for plan in &plans {
            let e = execute(&q, &db, plan).unwrap();
            assert_eq!(e.rows, first.rows, "{plan}");
            assert_eq!(e.tuples_touched as f64, cards.cost(plan));
        }
    }
}
