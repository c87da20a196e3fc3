//! Deterministic discrete-tick transaction simulator and the transaction
//! manager it drives.
//!
//! Every tick each runnable worker takes one step in a seeded random order.
//! A WRITE is an update: it reads the key when it executes and installs the
//! new value at commit. A committed transaction's
//! reads were all still current at its commit point, so commit order is a
//! valid serial order for every mix of actions.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    encode_state, CcAction, CcPolicy, ContentionState, ContentionTracker, KeyLoad, OpKind, Operation, Priority,
    Transaction,
};

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub n_keys: u32,
    pub zipf_theta: f64,
    /// Rank 1 of the Zipf distribution maps to this key; moving it shifts
    /// the hot set.
    pub hot_offset: u32,
    pub reads_per_txn: usize,
    pub writes_per_txn: usize,
    /// Fraction of transactions with half the reads and writes.
    pub short_txn_fraction: f64,
    pub n_workers: usize,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            n_keys: 10_000,
            zipf_theta: 0.5,
            hot_offset: 0,
            reads_per_txn: 5,
            writes_per_txn: 5,
            short_txn_fraction: 0.0,
            n_workers: 16,
            seed: 42,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        let ops = self.reads_per_txn + self.writes_per_txn;
        if ops == 0 {
            return Err("transactions need at least one operation".into());
        }
        if (self.n_keys as usize) < ops {
            return Err(format!("{} keys cannot hold {ops} distinct keys per transaction", self.n_keys));
        }
        if self.n_workers == 0 || self.n_workers > 4096 {
            return Err("n_workers must be in [1, 4096]".into());
        }
        if !(self.zipf_theta.is_finite() && self.zipf_theta >= 0.0) {
            return Err("zipf_theta must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.short_txn_fraction) {
            return Err("short_txn_fraction must be in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Extra ticks a worker spends on each pessimistic operation.
    pub lock_cost: u64,
    pub high_priority_len: usize,
    /// Cap on the random restart delay after an abort, in ticks.
    pub max_backoff: u64,
    pub record_history: bool,
    /// Stop generating transactions after this many.
    pub total_txns: Option<u64>,
    /// Drop a transaction after this many aborts.
    pub max_retries: Option<u32>,
    pub window_ticks: u64,
    /// Disables commit-time validation. Exists to show the checker catches
    /// the resulting anomalies; never set it otherwise.
    #[doc(hidden)]
    pub skip_validation: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            lock_cost: 1,
            high_priority_len: super::HIGH_PRIORITY_LEN,
            max_backoff: 16,
            record_history: false,
            total_txns: None,
            max_retries: None,
            window_ticks: 1000,
            skip_validation: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AbortReason {
    Validation,
    Deadlock,
    PolicyAbort,
    Wounded,
}

impl AbortReason {
    pub const ALL: [AbortReason; 4] =
        [AbortReason::Validation, AbortReason::Deadlock, AbortReason::PolicyAbort, AbortReason::Wounded];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Begin,
    /// Read of the committed value current at this point.
    Read {
        key: u32,
    },
    /// Write installed at commit; emitted just before `Commit`.
    Write {
        key: u32,
    },
    Commit,
    Abort(AbortReason),
}

/// `attempt` identifies one execution of a transaction; retries get a new one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub tick: u64,
    pub attempt: u64,
    pub kind: EventKind,
}

/// Picks the action for each operation and observes transaction outcomes.
pub trait Chooser {
    fn choose(&mut self, worker: usize, x: &ContentionState, kind: OpKind) -> CcAction;

    fn finished(&mut self, _worker: usize, _committed: bool) {}

    fn version(&self) -> u64 {
        0
    }
}

/// The same action for every operation; ABORT_NOW degrades to OPTIMISTIC on reads.
pub struct FixedChooser(pub CcAction);

impl Chooser for FixedChooser {
    fn choose(&mut self, _: usize, _: &ContentionState, kind: OpKind) -> CcAction {
        if self.0 == CcAction::AbortNow && kind == OpKind::Read {
            CcAction::Optimistic
        } else {
            self.0
        }
    }
}

pub struct PolicyChooser {
    pub policy: CcPolicy,
    pub version: u64,
}

impl PolicyChooser {
    pub fn new(policy: CcPolicy) -> Self {
        Self { policy, version: 0 }
    }
}

impl Chooser for PolicyChooser {
    fn choose(&mut self, _: usize, x: &ContentionState, kind: OpKind) -> CcAction {
        self.policy.choose(x, kind)
    }

    fn version(&self) -> u64 {
        self.version
    }
}

/// Uniform over the allowed actions; an adversarial policy for testing.
pub struct RandomChooser(pub ChaCha8Rng);

impl Chooser for RandomChooser {
    fn choose(&mut self, _: usize, _: &ContentionState, kind: OpKind) -> CcAction {
        CcAction::ALL[self.0.gen_range(0..CcAction::allowed(kind))]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Stop {
    Ticks(u64),
    /// Until this many transaction attempts have committed or aborted.
    Finished(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowStat {
    pub index: u64,
    pub commits: u64,
    pub aborts: u64,
    pub throughput: f64,
    pub abort_rate: f64,
    pub policy_version: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimResult {
    pub ticks: u64,
    pub commits: u64,
    pub aborts: u64,
    pub aborts_by_reason: [u64; 4],
    pub windows: Vec<WindowStat>,
}

impl SimResult {
    /// Commits per 1000 ticks.
    pub fn throughput(&self) -> f64 {
        if self.ticks == 0 {
            0.0
        } else {
            self.commits as f64 * 1000.0 / self.ticks as f64
        }
    }

    pub fn abort_rate(&self) -> f64 {
        let n = self.commits + self.aborts;
        if n == 0 {
            0.0
        } else {
            self.aborts as f64 / n as f64
        }
    }

    pub fn aborts_for(&self, r: AbortReason) -> u64 {
        self.aborts_by_reason[r as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LockMode {
    Shared,
    Exclusive,
}

fn compatible(a: LockMode, b: LockMode) -> bool {
    a == LockMode::Shared && b == LockMode::Shared
}

#[derive(Debug, Default)]
struct LockEntry {
    holders: Vec<(usize, LockMode)>,
    /// FIFO; a request waits while anything incompatible is ahead of it.
    queue: Vec<(usize, LockMode)>,
}

impl LockEntry {
    fn blockers(&self, w: usize, mode: LockMode, queue_pos: usize) -> impl Iterator<Item = usize> + '_ {
        let holders = self.holders.iter().filter(move |(h, m)| *h != w && !compatible(*m, mode)).map(|(h, _)| *h);
        let ahead =
            self.queue[..queue_pos].iter().filter(move |(q, m)| *q != w && !compatible(*m, mode)).map(|(q, _)| *q);
        holders.chain(ahead)
    }
}

#[derive(Debug)]
struct Attempt {
    id: u64,
    txn: Transaction,
    next_op: usize,
    /// Key and commit sequence number current when it was read, for reads
    /// and updates alike.
    reads: Vec<(u32, u64)>,
    writes: Vec<u32>,
    locked: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Idle,
    Running,
    Busy { until: u64 },
    Backoff { until: u64 },
    Blocked { key: u32, mode: LockMode },
}

#[derive(Debug)]
struct Worker {
    state: State,
    attempt: Option<Attempt>,
    retries: u32,
}

#[derive(Debug, Default, Clone, Copy)]
struct Access {
    readers: usize,
    writers: usize,
}

pub struct Simulator {
    spec: WorkloadSpec,
    opts: SimOptions,
    rng: ChaCha8Rng,
    cdf: Vec<f64>,
    workers: Vec<Worker>,
    locks: HashMap<u32, LockEntry>,
    access: HashMap<u32, Access>,
    tracker: ContentionTracker,
    commit_seq: u64,
    last_write: HashMap<u32, u64>,
    now: u64,
    next_attempt: u64,
    next_tid: u64,
    generated: u64,
    history: Vec<Event>,
    result: SimResult,
    window: (u64, u64),
    order: Vec<usize>,
}

fn zipf_cdf(n: u32, theta: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = (1..=n as u64)
        .map(|r| {
            acc += 1.0 / (r as f64).powf(theta);
            acc
        })
        .collect();
    for c in &mut cdf {
        *c /= acc;
    }
    cdf
}

impl Simulator {
    pub fn new(spec: WorkloadSpec, opts: SimOptions) -> Result<Self, String> {
        spec.validate()?;
        let workers = (0..spec.n_workers).map(|_| Worker { state: State::Idle, attempt: None, retries: 0 }).collect();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            cdf: zipf_cdf(spec.n_keys, spec.zipf_theta),
            order: (0..spec.n_workers).collect(),
            workers,
            spec,
            opts,
            locks: HashMap::new(),
            access: HashMap::new(),
            tracker: ContentionTracker::default(),
            commit_seq: 0,
            last_write: HashMap::new(),
            now: 0,
            next_attempt: 0,
            next_tid: 0,
            generated: 0,
            history: Vec::new(),
            result: SimResult::default(),
            window: (0, 0),
        })
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Switches skew and hot set for transactions generated from now on.
    pub fn set_skew(&mut self, zipf_theta: f64, hot_offset: u32) {
        self.spec.zipf_theta = zipf_theta;
        self.spec.hot_offset = hot_offset;
        self.cdf = zipf_cdf(self.spec.n_keys, zipf_theta);
    }

    pub fn history(&self) -> &[Event] {
        &self.history
    }

    pub fn tracker(&self) -> &ContentionTracker {
        &self.tracker
    }

    fn sample_key(&mut self) -> u32 {
        let u: f64 = self.rng.gen();
        let rank = self.cdf.partition_point(|c| *c < u).min(self.cdf.len() - 1) as u32;
        ((rank as u64 + self.spec.hot_offset as u64) % self.spec.n_keys as u64) as u32
    }

    fn generate(&mut self) -> Transaction {
        let short = self.rng.gen_bool(self.spec.short_txn_fraction);
        let (r, w) = if short {
            (self.spec.reads_per_txn.div_ceil(2), self.spec.writes_per_txn / 2)
        } else {
            (self.spec.reads_per_txn, self.spec.writes_per_txn)
        };
        let mut kinds: Vec<OpKind> =
            std::iter::repeat_n(OpKind::Read, r).chain(std::iter::repeat_n(OpKind::Write, w)).collect();
        kinds.shuffle(&mut self.rng);
        let mut keys: Vec<u32> = Vec::with_capacity(kinds.len());
        while keys.len() < kinds.len() {
            let k = self.sample_key();
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let ops = kinds.into_iter().zip(keys).map(|(kind, key)| Operation { kind, key }).collect();
        self.next_tid += 1;
        Transaction::new(self.next_tid, ops, self.now, self.opts.high_priority_len)
    }

    fn emit(&mut self, attempt: u64, kind: EventKind) {
        if self.opts.record_history {
            self.history.push(Event { tick: self.now, attempt, kind });
        }
    }

    fn begin(&mut self, w: usize, txn: Transaction) {
        self.next_attempt += 1;
        let id = self.next_attempt;
        self.workers[w].attempt =
            Some(Attempt { id, txn, next_op: 0, reads: Vec::new(), writes: Vec::new(), locked: Vec::new() });
        self.workers[w].state = State::Running;
        self.emit(id, EventKind::Begin);
    }

    fn exhausted(&self) -> bool {
        self.opts.total_txns.is_some_and(|t| self.generated >= t)
    }

    /// Nothing left to run.
    pub fn is_done(&self) -> bool {
        self.exhausted() && self.workers.iter().all(|w| w.attempt.is_none())
    }

    pub fn run(&mut self, chooser: &mut dyn Chooser, stop: Stop) -> SimResult {
        let before = self.result.clone();
        let start = self.now;
        loop {
            let done = match stop {
                Stop::Ticks(n) => self.now - start >= n,
                Stop::Finished(n) => (self.result.commits + self.result.aborts) - (before.commits + before.aborts) >= n,
            };
            if done || self.is_done() {
                break;
            }
            self.tick(chooser);
        }
        let mut out = SimResult {
            ticks: self.now - start,
            commits: self.result.commits - before.commits,
            aborts: self.result.aborts - before.aborts,
            aborts_by_reason: [0; 4],
            windows: self.result.windows[before.windows.len()..].to_vec(),
        };
        for i in 0..4 {
            out.aborts_by_reason[i] = self.result.aborts_by_reason[i] - before.aborts_by_reason[i];
        }
        out
    }

    fn tick(&mut self, chooser: &mut dyn Chooser) {
        let mut order = std::mem::take(&mut self.order);
        order.shuffle(&mut self.rng);
        for &w in &order {
            self.step(w, chooser);
        }
        self.order = order;
        while let Some(cycle) = self.find_deadlock() {
            let victim = *cycle
                .iter()
                .min_by_key(|&&w| {
                    let t = &self.workers[w].attempt.as_ref().expect("blocked worker has an attempt").txn;
                    (t.priority, std::cmp::Reverse(t.start_tick), std::cmp::Reverse(t.tid))
                })
                .expect("non-empty cycle");
            self.abort(victim, AbortReason::Deadlock, chooser);
        }
        self.now += 1;
        if self.now % self.opts.window_ticks == 0 {
            let (c, a) = self.window;
            let n = c + a;
            self.result.windows.push(WindowStat {
                index: self.now / self.opts.window_ticks - 1,
                commits: c,
                aborts: a,
                throughput: c as f64 * 1000.0 / self.opts.window_ticks as f64,
                abort_rate: if n == 0 { 0.0 } else { a as f64 / n as f64 },
                policy_version: chooser.version(),
            });
            self.window = (0, 0);
        }
    }

    fn step(&mut self, w: usize, chooser: &mut dyn Chooser) {
        match self.workers[w].state {
            State::Idle => {
                if self.exhausted() {
                    return;
                }
                self.generated += 1;
                self.workers[w].retries = 0;
                let t = self.generate();
                self.begin(w, t);
            }
            State::Backoff { until } if self.now >= until => {
                let mut t = self.workers[w].attempt.take().expect("backoff keeps the transaction").txn;
                t.start_tick = t.start_tick.min(self.now);
                self.begin(w, t);
            }
            State::Busy { until } if self.now >= until => {
                self.workers[w].state = State::Running;
                self.act(w, chooser);
            }
            State::Running => self.act(w, chooser),
            _ => {}
        }
    }

    fn act(&mut self, w: usize, chooser: &mut dyn Chooser) {
        let a = self.workers[w].attempt.as_ref().expect("running worker has an attempt");
        if a.next_op == a.txn.ops.len() {
            self.commit(w, chooser);
            return;
        }
        let op = a.txn.ops[a.next_op];
        let acc = self.access.get(&op.key).copied().unwrap_or_default();
        let waiters = self.locks.get(&op.key).map_or(0, |l| l.queue.len());
        let load = KeyLoad { readers: acc.readers, writers: acc.writers, waiters };
        let x = encode_state(&a.txn, a.next_op, self.now, load, &self.tracker);
        let mut action = chooser.choose(w, &x, op.kind);
        if action == CcAction::AbortNow && op.kind == OpKind::Read {
            action = CcAction::Optimistic;
        }
        match action {
            CcAction::AbortNow => self.abort(w, AbortReason::PolicyAbort, chooser),
            CcAction::Optimistic => {
                let conflict = acc.writers > 0 || (op.kind == OpKind::Write && acc.readers > 0);
                self.tracker.record(op.key, conflict);
                self.perform(w, op, false);
            }
            CcAction::Pessimistic => {
                let mode = if op.kind == OpKind::Read { LockMode::Shared } else { LockMode::Exclusive };
                self.request_lock(w, op, mode, chooser);
            }
        }
    }

    /// Executes the current operation; the lock, if any, is already held.
    fn perform(&mut self, w: usize, op: Operation, locked: bool) {
        let seq = self.commit_seq;
        let a = self.workers[w].attempt.as_mut().expect("attempt");
        let id = a.id;
        let acc = self.access.entry(op.key).or_default();
        a.reads.push((op.key, seq));
        match op.kind {
            OpKind::Read => acc.readers += 1,
            OpKind::Write => {
                a.writes.push(op.key);
                acc.writers += 1;
            }
        }
        a.next_op += 1;
        if locked {
            a.locked.push(op.key);
        }
        self.emit(id, EventKind::Read { key: op.key });
        self.workers[w].state = if locked && self.opts.lock_cost > 0 {
            State::Busy { until: self.now + self.opts.lock_cost }
        } else {
            State::Running
        };
    }

    fn request_lock(&mut self, w: usize, op: Operation, mode: LockMode, chooser: &mut dyn Chooser) {
        let prio = self.workers[w].attempt.as_ref().expect("attempt").txn.priority;
        let entry = self.locks.entry(op.key).or_default();
        let blocked = entry.blockers(w, mode, entry.queue.len()).next().is_some();
        self.tracker.record(op.key, blocked);
        if blocked && prio == Priority::High {
            // Wound-wait: a HIGH requester aborts LOW holders in its way.
            let victims: Vec<usize> = entry
                .holders
                .iter()
                .filter(|(h, m)| *h != w && !compatible(*m, mode))
                .map(|(h, _)| *h)
                .filter(|h| self.workers[*h].attempt.as_ref().is_some_and(|a| a.txn.priority == Priority::Low))
                .collect();
            for v in victims {
                self.abort(v, AbortReason::Wounded, chooser);
            }
        }
        let entry = self.locks.entry(op.key).or_default();
        if entry.blockers(w, mode, entry.queue.len()).next().is_none() {
            entry.holders.push((w, mode));
            self.perform(w, op, true);
        } else {
            entry.queue.push((w, mode));
            self.workers[w].state = State::Blocked { key: op.key, mode };
        }
    }

    fn release(&mut self, w: usize, keys: &[u32]) {
        for &k in keys {
            if let Some(e) = self.locks.get_mut(&k) {
                e.holders.retain(|(h, _)| *h != w);
                e.queue.retain(|(q, _)| *q != w);
            }
            self.grant_waiters(k);
        }
    }

    fn grant_waiters(&mut self, k: u32) {
        loop {
            let Some(e) = self.locks.get_mut(&k) else {
                return;
            };
            let Some(&(q, mode)) = e.queue.first() else {
                if e.holders.is_empty() {
                    self.locks.remove(&k);
                }
                return;
            };
            if e.blockers(q, mode, 0).next().is_some() {
                return;
            }
            e.queue.remove(0);
            e.holders.push((q, mode));
            let a = self.workers[q].attempt.as_ref().expect("waiter has an attempt");
            let op = a.txn.ops[a.next_op];
            self.perform(q, op, true);
        }
    }

    fn unaccess(&mut self, a: &Attempt) {
        // Keys are distinct within a transaction, so a written key was an update.
        for (k, _) in a.reads.iter().filter(|(k, _)| !a.writes.contains(k)) {
            if let Some(acc) = self.access.get_mut(k) {
                acc.readers -= 1;
            }
        }
        for k in &a.writes {
            if let Some(acc) = self.access.get_mut(k) {
                acc.writers -= 1;
            }
        }
        for k in a.reads.iter().map(|(k, _)| k).chain(&a.writes) {
            if self.access.get(k).is_some_and(|acc| acc.readers == 0 && acc.writers == 0) {
                self.access.remove(k);
            }
        }
    }

    fn finish(&mut self, w: usize, a: &Attempt) {
        self.unaccess(a);
        let mut keys = a.locked.clone();
        if let State::Blocked { key, .. } = self.workers[w].state {
            keys.push(key);
        }
        // Release before granting so no waiter is handed a lock of a finished attempt.
        self.workers[w].state = State::Idle;
        self.release(w, &keys);
    }

    fn abort(&mut self, w: usize, reason: AbortReason, chooser: &mut dyn Chooser) {
        let a = self.workers[w].attempt.take().expect("abort of a live attempt");
        self.finish(w, &a);
        self.emit(a.id, EventKind::Abort(reason));
        self.tracker.record_finish(true);
        self.result.aborts += 1;
        self.result.aborts_by_reason[reason as usize] += 1;
        self.window.1 += 1;
        chooser.finished(w, false);
        let wk = &mut self.workers[w];
        wk.retries += 1;
        if self.opts.max_retries.is_some_and(|m| wk.retries > m) {
            wk.state = State::Idle;
            return;
        }
        let cap = self.opts.max_backoff.max(1).min(1 << wk.retries.min(16));
        let until = self.now + 1 + self.rng.gen_range(0..cap);
        let wk = &mut self.workers[w];
        wk.state = State::Backoff { until };
        wk.attempt =
            Some(Attempt { id: 0, txn: a.txn, next_op: 0, reads: Vec::new(), writes: Vec::new(), locked: Vec::new() });
    }

    fn commit(&mut self, w: usize, chooser: &mut dyn Chooser) {
        if !self.opts.skip_validation {
            let a = self.workers[w].attempt.as_ref().expect("attempt");
            // An optimistic write may not overwrite a key someone holds a lock on.
            let locked_elsewhere = a.writes.iter().find(|k| {
                !a.locked.contains(k) && self.locks.get(k).is_some_and(|e| e.holders.iter().any(|(h, _)| *h != w))
            });
            let stale = a.reads.iter().find(|(k, seq)| self.last_write.get(k).is_some_and(|s| s > seq));
            if let Some(&k) = locked_elsewhere.or(stale.map(|(k, _)| k)) {
                self.tracker.record(k, true);
                self.abort(w, AbortReason::Validation, chooser);
                return;
            }
        }
        let a = self.workers[w].attempt.take().expect("attempt");
        self.commit_seq += 1;
        for &k in &a.writes {
            self.last_write.insert(k, self.commit_seq);
            self.emit(a.id, EventKind::Write { key: k });
        }
        self.emit(a.id, EventKind::Commit);
        self.finish(w, &a);
        self.tracker.record_finish(false);
        self.result.commits += 1;
        self.window.0 += 1;
        chooser.finished(w, true);
    }

    /// A cycle in the waits-for graph, if any.
    fn find_deadlock(&self) -> Option<Vec<usize>> {
        let n = self.workers.len();
        let edges = |w: usize| -> Vec<usize> {
            match self.workers[w].state {
                State::Blocked { key, mode } => {
                    let e = &self.locks[&key];
                    let pos = e.queue.iter().position(|(q, _)| *q == w).expect("blocked worker is queued");
                    e.blockers(w, mode, pos).collect()
                }
                _ => Vec::new(),
            }
        };
        // 0 = unvisited, 1 = on stack, 2 = done.
        let mut color = vec![0u8; n];
        let mut stack: Vec<(usize, Vec<usize>)> = Vec::new();
        for s in 0..n {
            if color[s] != 0 || !matches!(self.workers[s].state, State::Blocked { .. }) {
                continue;
            }
            color[s] = 1;
            stack.push((s, edges(s)));
            while let Some((v, next)) = stack.last_mut() {
                let v = *v;
                match next.pop() {
                    Some(u) if color[u] == 1 => {
                        let start = stack.iter().position(|(x, _)| *x == u).expect("on stack");
                        return Some(stack[start..].iter().map(|(x, _)| *x).collect());
                    }
                    Some(u) if color[u] == 0 => {
                        color[u] = 1;
                        let e = edges(u);
                        stack.push((u, e));
                    }
                    Some(_) => {}
                    None => {
                        color[v] = 2;
                        stack.pop();
                    }
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(workers: usize) -> WorkloadSpec {
        WorkloadSpec { n_keys: 100, n_workers: workers, seed: 3, ..Default::default() }
    }

    #[test]
    fn single_worker_never_aborts() {
        for c in [CcAction::Pessimistic, CcAction::Optimistic] {
            let mut s = Simulator::new(spec(1), SimOptions::default()).unwrap();
            let r = s.run(&mut FixedChooser(c), Stop::Finished(200));
            assert_eq!((r.commits, r.aborts), (200, 0));
        }
    }

    #[test]
    fn disjoint_optimistic_transactions_commit() {
        let mut s = Simulator::new(spec(2), SimOptions::default()).unwrap();
        let t1 = Transaction::new(1, vec![Operation { kind: OpKind::Write, key: 1 }], 0, 8);
        let t2 = Transaction::new(2, vec![Operation { kind: OpKind::Write, key: 2 }], 0, 8);
        s.begin(0, t1);
        s.begin(1, t2);
        s.opts.total_txns = Some(0);
        let r = s.run(&mut FixedChooser(CcAction::Optimistic), Stop::Ticks(10));
        assert_eq!((r.commits, r.aborts), (2, 0));
    }

    #[test]
    fn stale_optimistic_read_fails_validation() {
        let opts = SimOptions { total_txns: Some(0), record_history: true, max_retries: Some(0), ..Default::default() };
        let mut s = Simulator::new(spec(2), opts).unwrap();
        let read = |k| Operation { kind: OpKind::Read, key: k };
        // T1 reads k=7 then needs two more steps; T2 writes k=7 and commits first.
        s.begin(0, Transaction::new(1, vec![read(7), read(8), read(9)], 0, 8));
        s.begin(1, Transaction::new(2, vec![Operation { kind: OpKind::Write, key: 7 }], 0, 8));
        let mut ch = FixedChooser(CcAction::Optimistic);
        s.act(0, &mut ch);
        s.act(1, &mut ch);
        s.act(1, &mut ch);
        assert_eq!(s.result.commits, 1);
        for _ in 0..3 {
            s.act(0, &mut ch);
        }
        assert_eq!(s.result.aborts_by_reason[AbortReason::Validation as usize], 1);
    }

    #[test]
    fn deadlock_victim_is_youngest_low_priority() {
        let opts = SimOptions { total_txns: Some(0), max_retries: Some(0), lock_cost: 0, ..Default::default() };
        let mut s = Simulator::new(spec(2), opts).unwrap();
        let w = |k| Operation { kind: OpKind::Write, key: k };
        s.begin(0, Transaction::new(1, vec![w(1), w(2)], 0, 8));
        s.now = 5;
        s.begin(1, Transaction::new(2, vec![w(2), w(1)], 5, 8));
        let mut ch = FixedChooser(CcAction::Pessimistic);
        s.act(0, &mut ch);
        s.act(1, &mut ch);
        s.act(0, &mut ch);
        s.act(1, &mut ch);
        let cycle = s.find_deadlock().unwrap();
        assert_eq!(cycle.len(), 2);
        s.tick(&mut ch);
        assert_eq!(s.result.aborts_for(AbortReason::Deadlock), 1);
        assert!(s.workers[1].attempt.is_none(), "younger transaction was the victim");
    }

    #[test]
    fn high_priority_wounds_low_holder() {
        let opts = SimOptions {
            total_txns: Some(0),
            max_retries: Some(0),
            lock_cost: 0,
            high_priority_len: 2,
            ..Default::default()
        };
        let mut s = Simulator::new(spec(2), opts).unwrap();
        let w = |k| Operation { kind: OpKind::Write, key: k };
        s.begin(0, Transaction::new(1, vec![w(1)], 0, 2));
        s.begin(1, Transaction::new(2, vec![w(1), w(3)], 0, 2));
        let mut ch = FixedChooser(CcAction::Pessimistic);
        s.act(0, &mut ch);
        s.act(1, &mut ch);
        assert_eq!(s.result.aborts_for(AbortReason::Wounded), 1);
        assert_eq!(s.workers[1].state, State::Running);
    }

    #[test]
    fn runs_are_deterministic() {
        let run = || {
            let mut s = Simulator::new(spec(8), SimOptions { record_history: true, ..Default::default() }).unwrap();
            let r = s.run(&mut RandomChooser(ChaCha8Rng::seed_from_u64(1)), Stop::Ticks(3000));
            (r, s.history().to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn skew_concentrates_keys() {
        let mut s =
            Simulator::new(WorkloadSpec { zipf_theta: 1.2, hot_offset: 40, ..spec(1) }, SimOptions::default()).unwrap();
        let hits = (0..10_000).filter(|_| s.sample_key() == 40).count();
        assert!(hits > 2000, "rank 1 maps to the hot offset: {hits}");
    }
}
