//! Criterion benchmarks for the hot paths: the training step, the wire
//! codec, the concurrency-control simulator, plan scoring and PREDICT.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use neurdb_core::cc::{CcPolicy, PolicyChooser, SimOptions, Simulator, Stop, WorkloadSpec};
use neurdb_core::datagen::load_review;
use neurdb_core::engine::{Frame, FrameType};
use neurdb_core::models::ModelStore;
use neurdb_core::nn::Loss;
use neurdb_core::qo::{enumerate_plans, label_config, DualModel, GenParams, QueryStats};
use neurdb_core::{Config, Database, Matrix, Network};

fn batch(rows: usize, cols: usize, seed: u64) -> (Matrix, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let y = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (x, y)
}

pub fn nn(c: &mut Criterion) {
    let mut g = c.benchmark_group("nn");
    for rows in [64usize, 1024] {
        let (x, y) = batch(rows, 16, 1);
        let mut net = Network::mlp(16, &[64, 32], 1, Loss::Mse, 1).unwrap();
        g.throughput(Throughput::Elements(rows as u64));
        g.bench_with_input(BenchmarkId::new("train_step", rows), &rows, |b, _| {
            b.iter(|| net.train_step(black_box(&x), &y, 0.01).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("forward", rows), &rows, |b, _| {
            b.iter(|| net.forward(black_box(&x)).unwrap())
        });
    }
    g.finish();
}

pub fn frames(c: &mut Criterion) {
    let mut g = c.benchmark_group("frame");
    let payload: Vec<u8> = (0..64 * 1024).map(|i| i as u8).collect();
    let frame = Frame::new(FrameType::DataBatch, payload);
    let bytes = frame.encode();
    g.throughput(Throughput::Bytes(bytes.len() as u64));
    g.bench_function("encode_64k", |b| b.iter(|| black_box(&frame).encode()));
    g.bench_function("decode_64k", |b| b.iter(|| Frame::decode_exact(black_box(&bytes)).unwrap()));
    g.finish();
}

pub fn cc(c: &mut Criterion) {
    let mut g = c.benchmark_group("cc");
    g.sample_size(20);
    for (name, policy) in [("occ", CcPolicy::occ()), ("2pl", CcPolicy::two_pl())] {
        g.bench_function(BenchmarkId::new("sim_2000_ticks", name), |b| {
            b.iter(|| {
                let w = WorkloadSpec { n_keys: 500, ..Default::default() };
                let mut sim = Simulator::new(w, SimOptions::default()).unwrap();
                sim.run(&mut PolicyChooser::new(policy.clone()), Stop::Ticks(2000))
            })
        });
    }
    g.finish();
}

pub fn qo(c: &mut Criterion) {
    let mut g = c.benchmark_group("qo");
    let params = GenParams::from_unit(3, &vec![0.4; GenParams::dims(3)], 1);
    let labeled = label_config(&params, 1, 1).unwrap().remove(0);
    let model = DualModel::new(1);
    g.bench_function("score_all_candidates_3_tables", |b| {
        b.iter(|| model.choose(black_box(&labeled.plans), &labeled.cond).unwrap())
    });
    let p5 = GenParams::from_unit(5, &vec![0.2; GenParams::dims(5)], 2);
    let db = p5.generate().unwrap();
    let q = p5.random_query(&mut ChaCha8Rng::seed_from_u64(2));
    let stats = QueryStats::build(&q, &db).unwrap();
    g.bench_function("enumerate_5_tables", |b| b.iter(|| enumerate_plans(black_box(&q), &stats).unwrap()));
    g.finish();
}

pub fn models(c: &mut Criterion) {
    let mut g = c.benchmark_group("models");
    let net = Network::mlp(16, &[64, 32], 1, Loss::Mse, 3).unwrap();
    g.bench_function("incremental_update_suffix_1", |b| {
        b.iter(|| {
            let store = ModelStore::in_memory();
            let mid = store.allocate_mid();
            store.store_initial(mid, &net, 1).unwrap();
            let last = net.layers().last().cloned().into_iter().collect::<Vec<_>>();
            store.incremental_update(mid, 1, &last, 2).unwrap()
        })
    });
    g.finish();
}

pub fn predict(c: &mut Criterion) {
    let mut g = c.benchmark_group("predict");
    g.sample_size(10);
    let db = Database::open(Config { epochs: 2, batch_size: 64, ..Config::default() }).unwrap();
    load_review(db.catalog(), "review", 1000, 7).unwrap();
    let sql = "PREDICT VALUE OF score FROM review WHERE brand_name = 'Special Goods' \
               TRAIN ON * WITH brand_name <> 'Special Goods'";
    // The first run trains; later runs reuse the registered model.
    db.execute_one(sql).unwrap();
    g.bench_function("listing_one_1000_rows_trained_model", |b| b.iter(|| db.execute_one(black_box(sql)).unwrap()));
    g.finish();
}
