//! Learned concurrency control: a linear policy picks an action per
//! operation from a compact contention encoding. Commit-time validation plus
//! strict two-phase locking keep every action mix conflict-serializable, so
//! the policy only affects performance.

mod adapt;
mod bench;
mod checker;
mod sim;

pub use adapt::{
    adapt_filter_phase, adapt_refine_phase, evaluate_policy, expected_improvement, two_phase_adapt, AdaptOutcome,
    FilterConfig, FilterResult, Gp, RefineConfig, Reinforce,
};
pub use bench::{drift_experiment, pretrained_policy, run_bench, BenchSpec, DriftOutcome, WindowRow};
pub use checker::{check_serializable, Violation};
pub use sim::{
    AbortReason, Chooser, Event, EventKind, FixedChooser, PolicyChooser, RandomChooser, SimOptions, SimResult,
    Simulator, Stop, WindowStat, WorkloadSpec,
};

use serde::{Deserialize, Serialize};

pub const FEATURE_DIM: usize = 10;
pub const N_ACTIONS: usize = 3;
/// Contention buckets keys hash into.
pub const BUCKETS: usize = 1024;
/// EWMA weight of the newest observation.
pub const EWMA_ALPHA: f64 = 0.1;
/// Declared length at or above which a transaction is HIGH priority.
pub const HIGH_PRIORITY_LEN: usize = 8;
/// Counts at or above this saturate their feature at 1.
const COUNT_SCALE: f64 = 8.0;
/// Ticks after which the elapsed feature saturates.
const ELAPSED_SCALE: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Operation {
    pub kind: OpKind,
    pub key: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Priority {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub tid: u64,
    pub ops: Vec<Operation>,
    pub priority: Priority,
    pub start_tick: u64,
}

impl Transaction {
    pub fn new(tid: u64, ops: Vec<Operation>, start_tick: u64, high_len: usize) -> Self {
        let priority = if ops.len() >= high_len { Priority::High } else { Priority::Low };
        Self { tid, ops, priority, start_tick }
    }

    pub fn declared_len(&self) -> usize {
        self.ops.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CcAction {
    /// No lock; record the access and validate at commit.
    Optimistic = 0,
    /// Shared or exclusive lock held until commit.
    Pessimistic = 1,
    /// Abort the transaction immediately. Writes only.
    AbortNow = 2,
}

impl CcAction {
    pub const ALL: [CcAction; N_ACTIONS] = [CcAction::Optimistic, CcAction::Pessimistic, CcAction::AbortNow];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Number of actions allowed for an operation kind; reads never self-abort.
    pub fn allowed(kind: OpKind) -> usize {
        match kind {
            OpKind::Read => 2,
            OpKind::Write => 3,
        }
    }
}

/// Feature vector `x`. Index constants name each slot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContentionState(pub [f64; FEATURE_DIM]);

impl ContentionState {
    pub const OP_KIND: usize = 0;
    pub const BUCKET_CONFLICT: usize = 1;
    pub const READERS: usize = 2;
    pub const WRITERS: usize = 3;
    pub const EXECUTED: usize = 4;
    pub const REMAINING: usize = 5;
    pub const ELAPSED: usize = 6;
    pub const ABORT_RATE: usize = 7;
    pub const WAITERS: usize = 8;
    pub const PRIORITY: usize = 9;

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }
}

/// `delta = argmax(W x + b)`; 33 parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcPolicy {
    pub w: [[f64; FEATURE_DIM]; N_ACTIONS],
    pub b: [f64; N_ACTIONS],
}

pub const POLICY_PARAMS: usize = N_ACTIONS * (FEATURE_DIM + 1);

impl Default for CcPolicy {
    fn default() -> Self {
        Self::occ()
    }
}

impl CcPolicy {
    /// All zero: every tie resolves to OPTIMISTIC.
    pub fn occ() -> Self {
        Self { w: [[0.0; FEATURE_DIM]; N_ACTIONS], b: [0.0; N_ACTIONS] }
    }

    /// Bias dominance makes every operation PESSIMISTIC.
    pub fn two_pl() -> Self {
        Self { w: [[0.0; FEATURE_DIM]; N_ACTIONS], b: [0.0, 1.0, 0.0] }
    }

    /// `W x + b`: the single matrix-vector product of inference.
    pub fn scores(&self, x: &ContentionState) -> [f64; N_ACTIONS] {
        let mut s = self.b;
        for (a, row) in self.w.iter().enumerate() {
            s[a] += row.iter().zip(&x.0).map(|(w, v)| w * v).sum::<f64>();
        }
        s
    }

    /// Argmax over the actions allowed for `kind`; ties go to the lowest index.
    pub fn choose(&self, x: &ContentionState, kind: OpKind) -> CcAction {
        let s = self.scores(x);
        let mut best = 0;
        for a in 1..CcAction::allowed(kind) {
            if s[a] > s[best] {
                best = a;
            }
        }
        CcAction::ALL[best]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(POLICY_PARAMS);
        for a in 0..N_ACTIONS {
            v.extend_from_slice(&self.w[a]);
            v.push(self.b[a]);
        }
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), POLICY_PARAMS, "policy parameter count");
        let mut p = Self::occ();
        for a in 0..N_ACTIONS {
            let row = &v[a * (FEATURE_DIM + 1)..(a + 1) * (FEATURE_DIM + 1)];
            p.w[a].copy_from_slice(&row[..FEATURE_DIM]);
            p.b[a] = row[FEATURE_DIM];
        }
        p
    }
}

/// O(1) contention bookkeeping. No method scans more than one key's state.
#[derive(Debug, Clone)]
pub struct ContentionTracker {
    buckets: Vec<f64>,
    abort_rate: f64,
}

impl Default for ContentionTracker {
    fn default() -> Self {
        Self { buckets: vec![0.0; BUCKETS], abort_rate: 0.0 }
    }
}

pub fn bucket_of(key: u32) -> usize {
    // Fibonacci hashing spreads consecutive hot keys across buckets.
    ((key as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 54) as usize % BUCKETS
}

impl ContentionTracker {
    pub fn record(&mut self, key: u32, conflict: bool) {
        let e = &mut self.buckets[bucket_of(key)];
        *e = (1.0 - EWMA_ALPHA) * *e + EWMA_ALPHA * conflict as u8 as f64;
    }

    pub fn bucket_conflict(&self, key: u32) -> f64 {
        self.buckets[bucket_of(key)]
    }

    pub fn record_finish(&mut self, aborted: bool) {
        self.abort_rate = (1.0 - EWMA_ALPHA) * self.abort_rate + EWMA_ALPHA * aborted as u8 as f64;
    }

    pub fn abort_rate(&self) -> f64 {
        self.abort_rate
    }
}

/// Per-key live counts supplied by the transaction manager.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KeyLoad {
    pub readers: usize,
    pub writers: usize,
    pub waiters: usize,
}

fn saturate(count: usize) -> f64 {
    (count as f64 / COUNT_SCALE).min(1.0)
}

/// Encodes operation `op_index` of `txn` at tick `now`.
pub fn encode_state(
    txn: &Transaction,
    op_index: usize,
    now: u64,
    load: KeyLoad,
    tracker: &ContentionTracker,
) -> ContentionState {
    let op = txn.ops[op_index];
    let len = txn.declared_len().max(1) as f64;
    let mut x = [0.0; FEATURE_DIM];
    x[ContentionState::OP_KIND] = (op.kind == OpKind::Write) as u8 as f64;
    x[ContentionState::BUCKET_CONFLICT] = tracker.bucket_conflict(op.key);
    x[ContentionState::READERS] = saturate(load.readers);
    x[ContentionState::WRITERS] = saturate(load.writers);
    x[ContentionState::EXECUTED] = op_index as f64 / len;
    x[ContentionState::REMAINING] = (len - op_index as f64) / len;
    x[ContentionState::ELAPSED] = (now.saturating_sub(txn.start_tick) as f64 / ELAPSED_SCALE).min(1.0);
    x[ContentionState::ABORT_RATE] = tracker.abort_rate();
    x[ContentionState::WAITERS] = saturate(load.waiters);
    x[ContentionState::PRIORITY] = (txn.priority == Priority::High) as u8 as f64;
    ContentionState(x)
}
