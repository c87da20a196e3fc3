//! Random small CC histories checked for conflict serializability.

use neurdb_core::cc::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Default)]
pub struct HistoryReport {
    pub histories: usize,
    pub committed: u64,
    pub aborted: u64,
    pub violations: Vec<(usize, Violation)>,
}

fn random_policy(rng: &mut ChaCha8Rng) -> CcPolicy {
    let v: Vec<f64> = (0..POLICY_PARAMS).map(|_| rng.gen_range(-2.0..2.0)).collect();
    CcPolicy::from_slice(&v)
}

/// One random history of at most 12 transactions over at most 8 keys.
pub fn random_history(seed: u64, skip_validation: bool) -> Simulator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_keys = rng.gen_range(1..=8u32);
    let reads = rng.gen_range(0..=(n_keys as usize).min(4));
    let lo = usize::from(reads == 0);
    let writes = rng.gen_range(lo..=(n_keys as usize - reads).min(4));
    let spec = WorkloadSpec {
        n_keys,
        zipf_theta: rng.gen_range(0.0..1.5),
        hot_offset: rng.gen_range(0..n_keys),
        reads_per_txn: reads,
        writes_per_txn: writes,
        short_txn_fraction: rng.gen_range(0.0..1.0),
        n_workers: rng.gen_range(1..=6),
        seed: rng.gen(),
    };
    let opts = SimOptions {
        lock_cost: rng.gen_range(0..=2),
        high_priority_len: rng.gen_range(1..=8),
        max_backoff: rng.gen_range(1..=8),
        record_history: true,
        total_txns: Some(rng.gen_range(1..=12)),
        max_retries: Some(rng.gen_range(0..=6)),
        skip_validation,
        ..Default::default()
    };
    let mut sim = Simulator::new(spec, opts).expect("valid spec");
    let mut chooser: Box<dyn Chooser> = match rng.gen_range(0..4) {
        0 => Box::new(RandomChooser(ChaCha8Rng::seed_from_u64(rng.gen()))),
        1 => Box::new(FixedChooser(CcAction::ALL[rng.gen_range(0..3)])),
        _ => Box::new(PolicyChooser::new(random_policy(&mut rng))),
    };
    sim.run(chooser.as_mut(), Stop::Ticks(1_000_000));
    assert!(sim.is_done(), "history {seed} did not drain");
    sim
}

pub fn check_histories(n: usize, seed: u64, skip_validation: bool) -> HistoryReport {
    let mut rep = HistoryReport { histories: n, ..Default::default() };
    for i in 0..n {
        let sim = random_history(seed.wrapping_add(i as u64), skip_validation);
        for e in sim.history() {
            match e.kind {
                EventKind::Commit => rep.committed += 1,
                EventKind::Abort(_) => rep.aborted += 1,
                _ => {}
            }
        }
        if let Err(v) = check_serializable(sim.history()) {
            rep.violations.push((i, v));
        }
    }
    rep
}
