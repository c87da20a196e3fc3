mod support;

use neurdb_core::cc::*;
use proptest::prelude::*;
use support::histories::{check_histories, random_history};

#[test]
fn random_histories_are_serializable() {
    let rep = check_histories(2_000, 1, false);
    assert!(rep.violations.is_empty(), "{:?}", &rep.violations[..rep.violations.len().min(3)]);
    assert!(rep.committed > 2_000 && rep.aborted > 0, "{rep:?}");
}

#[test]
fn checker_catches_unvalidated_commits() {
    let rep = check_histories(2_000, 1, true);
    assert!(!rep.violations.is_empty(), "disabling validation should surface anomalies");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn any_seed_gives_a_serializable_history(seed in any::<u64>()) {
        let sim = random_history(seed, false);
        prop_assert!(check_serializable(sim.history()).is_ok());
    }
}

fn history_of(chooser: &mut dyn Chooser, spec: &WorkloadSpec) -> Vec<Event> {
    let opts = SimOptions { record_history: true, total_txns: Some(300), ..Default::default() };
    let mut sim = Simulator::new(spec.clone(), opts).unwrap();
    sim.run(chooser, Stop::Ticks(1_000_000));
    sim.history().to_vec()
}

#[test]
fn canonical_policies_match_fixed_protocols() {
    let spec =
        WorkloadSpec { n_keys: 50, zipf_theta: 1.0, n_workers: 8, short_txn_fraction: 0.3, ..Default::default() };
    let two_pl = history_of(&mut PolicyChooser::new(CcPolicy::two_pl()), &spec);
    assert_eq!(two_pl, history_of(&mut FixedChooser(CcAction::Pessimistic), &spec));
    let occ = history_of(&mut PolicyChooser::new(CcPolicy::occ()), &spec);
    assert_eq!(occ, history_of(&mut FixedChooser(CcAction::Optimistic), &spec));
    assert_ne!(two_pl, occ);
}

#[test]
fn abort_now_on_writes_gives_up_early() {
    let spec = WorkloadSpec { n_keys: 20, zipf_theta: 1.2, n_workers: 4, ..Default::default() };
    let opts = SimOptions { total_txns: Some(50), max_retries: Some(0), ..Default::default() };
    let mut sim = Simulator::new(spec, opts).unwrap();
    let r = sim.run(&mut FixedChooser(CcAction::AbortNow), Stop::Ticks(100_000));
    // Every transaction has a write, so nothing commits and every abort is voluntary.
    assert_eq!(r.commits, 0);
    assert_eq!(r.aborts, 50);
    assert_eq!(r.aborts_by_reason[AbortReason::PolicyAbort as usize], 50);
}
