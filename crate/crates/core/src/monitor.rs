//! Sliding-window drift detection over model loss, plan latency error and
//! transaction throughput.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonitorError {
    #[error("non-finite observation {value} for {metric}")]
    NonFiniteValue { metric: MetricId, value: f64 },
    #[error("invalid monitor config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DriftKind {
    /// Model loss; higher is worse.
    ModelAccuracy,
    /// Plan latency error; higher is worse.
    PlanRegression,
    /// Transaction throughput; lower is worse.
    CcThroughput,
}

impl DriftKind {
    pub fn name(self) -> &'static str {
        match self {
            DriftKind::ModelAccuracy => "model_accuracy",
            DriftKind::PlanRegression => "plan_regression",
            DriftKind::CcThroughput => "cc_throughput",
        }
    }

    fn higher_is_worse(self) -> bool {
        !matches!(self, DriftKind::CcThroughput)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetricId {
    pub kind: DriftKind,
    pub subject: u64,
}

impl MetricId {
    pub fn new(kind: DriftKind, subject: u64) -> Self {
        Self { kind, subject }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind.name(), self.subject)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorConfig {
    pub tau: f64,
    pub alpha: f64,
    pub capacity: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self { tau: 1.5, alpha: 0.05, capacity: 80 }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<(), MonitorError> {
        if !(self.tau > 1.0 && self.tau.is_finite()) {
            return Err(MonitorError::InvalidConfig(format!("tau must be > 1, got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(MonitorError::InvalidConfig(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if self.capacity == 0 {
            return Err(MonitorError::InvalidConfig("capacity must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftEvent {
    pub metric: MetricId,
    /// `window_mean / baseline` at emission. Above `tau` for loss-like
    /// metrics, below `1 / tau` for throughput.
    pub ratio: f64,
    pub at: u64,
}

/// One sample of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSample {
    pub ts: u64,
    pub value: f64,
    /// `None` until the first window has filled.
    pub baseline: Option<f64>,
}

/// Ring of the latest observations plus a baseline that lags the ring: it
/// is the mean of the first full window, then an EWMA over values as they
/// leave the ring, so a shift shows up in the window before the baseline.
#[derive(Debug, Clone)]
pub struct MetricWindow {
    capacity: usize,
    alpha: f64,
    ring: VecDeque<f64>,
    sum: f64,
    baseline: Option<f64>,
    /// Observations since the last event (or since creation).
    since_event: u64,
    observed: u64,
}

impl MetricWindow {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        Self {
            capacity,
            alpha,
            ring: VecDeque::with_capacity(capacity),
            sum: 0.0,
            baseline: None,
            since_event: 0,
            observed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.ring.is_empty()).then(|| self.ring.iter().sum::<f64>() / self.ring.len() as f64)
    }

    pub fn observed(&self) -> u64 {
        self.observed
    }

    fn push(&mut self, v: f64) {
        self.observed += 1;
        self.since_event += 1;
        if self.ring.len() == self.capacity {
            let old = self.ring.pop_front().expect("full ring");
            self.sum -= old;
            let b = self.baseline.expect("baseline set once the ring is full");
            self.baseline = Some(self.alpha * old + (1.0 - self.alpha) * b);
        }
        self.ring.push_back(v);
        self.sum += v;
        if self.baseline.is_none() && self.ring.len() == self.capacity {
            self.baseline = self.mean();
        }
    }

    /// Ratio of the window mean to the baseline when it crosses `tau`.
    fn check(&mut self, kind: DriftKind, tau: f64) -> Option<f64> {
        let b = self.baseline?;
        // The first full window only establishes the baseline.
        if self.observed <= self.capacity as u64 || self.since_event < self.capacity as u64 || b <= f64::EPSILON {
            return None;
        }
        let ratio = self.mean()? / b;
        let fire = if kind.higher_is_worse() { ratio > tau } else { ratio < 1.0 / tau };
        if fire {
            self.since_event = 0;
            Some(ratio)
        } else {
            None
        }
    }
}

/// What the engine should do in response to an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftAction {
    FineTuneModel(u64),
    RetrainOptimizer,
    AdaptConcurrencyControl,
    Dropped,
}

const LOG_CAP: usize = 4096;

#[derive(Debug)]
struct Tracked {
    window: MetricWindow,
    log: VecDeque<MetricSample>,
}

/// Thread-safe registry of metric windows. Each metric is locked on its own.
#[derive(Debug)]
pub struct Monitor {
    config: MonitorConfig,
    clock: AtomicU64,
    metrics: RwLock<HashMap<MetricId, Arc<Mutex<Tracked>>>>,
    subjects: RwLock<HashSet<MetricId>>,
    flagged: Mutex<HashSet<u64>>,
    events: Mutex<Vec<DriftEvent>>,
}

impl Default for Monitor {
    fn default() -> Self {
        Self::new(MonitorConfig::default()).expect("default config is valid")
    }
}

impl Monitor {
    pub fn new(config: MonitorConfig) -> Result<Self, MonitorError> {
        config.validate()?;
        Ok(Self {
            config,
            clock: AtomicU64::new(0),
            metrics: RwLock::new(HashMap::new()),
            subjects: RwLock::new(HashSet::new()),
            flagged: Mutex::new(HashSet::new()),
            events: Mutex::new(Vec::new()),
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    /// Declares a subject that [`Monitor::route`] may act on.
    pub fn register(&self, metric: MetricId) {
        self.subjects.write().insert(metric);
    }

    fn tracked(&self, metric: MetricId) -> Arc<Mutex<Tracked>> {
        if let Some(t) = self.metrics.read().get(&metric) {
            return t.clone();
        }
        self.metrics
            .write()
            .entry(metric)
            .or_insert_with(|| {
                Arc::new(Mutex::new(Tracked {
                    window: MetricWindow::new(self.config.capacity, self.config.alpha),
                    log: VecDeque::new(),
                }))
            })
            .clone()
    }

    pub fn observe(&self, metric: MetricId, value: f64) -> Result<Option<DriftEvent>, MonitorError> {
        if !value.is_finite() {
            return Err(MonitorError::NonFiniteValue { metric, value });
        }
        let tracked = self.tracked(metric);
        let mut t = tracked.lock();
        let ts = self.clock.fetch_add(1, Ordering::Relaxed) + 1;
        t.window.push(value);
        let sample = MetricSample { ts, value, baseline: t.window.baseline() };
        if t.log.len() == LOG_CAP {
            t.log.pop_front();
        }
        t.log.push_back(sample);
        let event = t.window.check(metric.kind, self.config.tau).map(|ratio| DriftEvent { metric, ratio, at: ts });
        drop(t);
        if let Some(e) = event {
            log::info!("drift on {} (ratio {:.3})", e.metric, e.ratio);
            self.events.lock().push(e);
        }
        Ok(event)
    }

    /// Turns an event into an action; model events also flag the subject so
    /// the next plan fine-tunes.
    pub fn route(&self, event: &DriftEvent) -> DriftAction {
        if !self.subjects.read().contains(&event.metric) {
            log::warn!("dropping drift event for unknown subject {}", event.metric);
            return DriftAction::Dropped;
        }
        match event.metric.kind {
            DriftKind::ModelAccuracy => {
                self.flagged.lock().insert(event.metric.subject);
                DriftAction::FineTuneModel(event.metric.subject)
            }
            DriftKind::PlanRegression => DriftAction::RetrainOptimizer,
            DriftKind::CcThroughput => DriftAction::AdaptConcurrencyControl,
        }
    }

    /// `observe` followed by `route` of any event.
    pub fn observe_and_route(&self, metric: MetricId, value: f64) -> Result<Option<DriftAction>, MonitorError> {
        Ok(self.observe(metric, value)?.map(|e| self.route(&e)))
    }

    /// Flags a model by hand, as a routed accuracy event would.
    pub fn flag_model(&self, subject: u64) {
        self.flagged.lock().insert(subject);
    }

    pub fn is_flagged(&self, subject: u64) -> bool {
        self.flagged.lock().contains(&subject)
    }

    /// Clears a flag once the fine-tune it asked for has run.
    pub fn clear_flag(&self, subject: u64) -> bool {
        self.flagged.lock().remove(&subject)
    }

    pub fn events(&self) -> Vec<DriftEvent> {
        self.events.lock().clone()
    }

    pub fn window(&self, metric: MetricId) -> Option<MetricWindow> {
        self.metrics.read().get(&metric).map(|t| t.lock().window.clone())
    }

    /// Recent samples of every metric, ordered by metric then time.
    pub fn samples(&self) -> Vec<(MetricId, MetricSample)> {
        let metrics = self.metrics.read();
        let mut ids: Vec<_> = metrics.keys().copied().collect();
        ids.sort();
        let mut out = Vec::new();
        for id in ids {
            out.extend(metrics[&id].lock().log.iter().map(|s| (id, *s)));
        }
        out
    }

    /// CSV dump with header `metric_id,ts,value,baseline`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric_id,ts,value,baseline\n");
        for (id, m) in self.samples() {
            let b = m.baseline.map(|b| b.to_string()).unwrap_or_default();
            s.push_str(&format!("{id},{},{},{b}\n", m.ts, m.value));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOSS: MetricId = MetricId { kind: DriftKind::ModelAccuracy, subject: 7 };

    #[test]
    fn constant_stream_never_fires() {
        let m = Monitor::default();
        for _ in 0..1000 {
            assert_eq!(m.observe(LOSS, 0.3).unwrap(), None);
        }
    }

    #[test]
    fn jump_fires_with_exact_ratio() {
        let m = Monitor::default();
        for _ in 0..80 {
            m.observe(LOSS, 0.30).unwrap();
        }
        let mut fired = None;
        for i in 0..80 {
            if let Some(e) = m.observe(LOSS, 0.50).unwrap() {
                fired = Some((i, e));
                break;
            }
        }
        let (i, e) = fired.expect("jump detected");
        // Baseline stays 0.30 while 0.30s leave the ring; the mean crosses
        // 0.45 once more than 60 of 80 values are 0.50.
        assert_eq!(i, 60);
        let w = m.window(LOSS).unwrap();
        assert_eq!(e.ratio, w.mean().unwrap() / w.baseline().unwrap());
        assert!(e.ratio > 1.5);
    }

    #[test]
    fn full_jump_ratio_is_five_thirds() {
        let mut w = MetricWindow::new(80, 0.05);
        for _ in 0..80 {
            w.push(0.30);
        }
        for _ in 0..80 {
            w.push(0.50);
        }
        // Baseline absorbed the 80 departing 0.30s, so it is still 0.30.
        assert!((w.baseline().unwrap() - 0.30).abs() < 1e-12);
        assert!((w.mean().unwrap() / w.baseline().unwrap() - 0.5 / 0.3).abs() < 1e-12);
    }

    #[test]
    fn cooldown_suppresses_second_jump() {
        let m = Monitor::default();
        let mut at = Vec::new();
        for _ in 0..80 {
            m.observe(LOSS, 0.3).unwrap();
        }
        for v in std::iter::repeat_n(0.5, 100).chain(std::iter::repeat_n(5.0, 40)) {
            if let Some(e) = m.observe(LOSS, v).unwrap() {
                at.push(e.at);
            }
        }
        assert!(!at.is_empty());
        for w in at.windows(2) {
            assert!(w[1] - w[0] >= 80);
        }
    }

    #[test]
    fn throughput_fires_on_drop() {
        let m = Monitor::default();
        let tput = MetricId::new(DriftKind::CcThroughput, 0);
        for _ in 0..80 {
            m.observe(tput, 100.0).unwrap();
        }
        let e = (0..80).find_map(|_| m.observe(tput, 40.0).unwrap()).unwrap();
        assert!(e.ratio < 1.0 / 1.5);
    }

    #[test]
    fn routing_and_flags() {
        let m = Monitor::default();
        let e = DriftEvent { metric: LOSS, ratio: 2.0, at: 1 };
        assert_eq!(m.route(&e), DriftAction::Dropped);
        m.register(LOSS);
        assert_eq!(m.route(&e), DriftAction::FineTuneModel(7));
        assert!(m.is_flagged(7));
        assert!(m.clear_flag(7));
        assert!(!m.is_flagged(7));
        let cc = MetricId::new(DriftKind::CcThroughput, 0);
        m.register(cc);
        assert_eq!(m.route(&DriftEvent { metric: cc, ratio: 0.1, at: 2 }), DriftAction::AdaptConcurrencyControl);
    }

    #[test]
    fn rejects_non_finite() {
        let m = Monitor::default();
        assert!(matches!(m.observe(LOSS, f64::NAN), Err(MonitorError::NonFiniteValue { .. })));
        assert!(Monitor::new(MonitorConfig { tau: 1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn csv_dump() {
        let m = Monitor::default();
        m.observe(LOSS, 1.0).unwrap();
        let csv = m.to_csv();
        assert_eq!(csv, "metric_id,ts,value,baseline\nmodel_accuracy/7,1,1,\n");
    }
}
