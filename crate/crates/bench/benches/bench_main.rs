use criterion::{criterion_group, criterion_main};

criterion_group!(
    benches,
    neurdb_bench::nn,
    neurdb_bench::frames,
    neurdb_bench::cc,
    neurdb_bench::qo,
    neurdb_bench::models,
    neurdb_bench::predict
);
criterion_main!(benches);
