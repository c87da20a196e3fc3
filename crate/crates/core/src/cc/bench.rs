//! Windowed benchmark driver and the skew-drift adaptation experiment.

use std::fmt;

use super::adapt::{evaluate_policy, two_phase_adapt, FilterConfig, RefineConfig};
use super::sim::{PolicyChooser, SimOptions, Simulator, Stop, WorkloadSpec};
use super::CcPolicy;

/// Workload with an optional mid-run skew and hot-set switch.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub workload: WorkloadSpec,
    pub windows: u64,
    pub window_ticks: u64,
    /// Window index at which the drift starts; `None` disables it.
    pub drift_at: Option<u64>,
    pub drift_theta: f64,
    pub drift_hot_offset: u32,
    pub filter: FilterConfig,
    pub refine: RefineConfig,
}

impl Default for BenchSpec {
    fn default() -> Self {
        // A short/long mix gives the policies something to tell apart.
        let workload = WorkloadSpec { short_txn_fraction: 0.3, ..Default::default() };
        Self {
            drift_hot_offset: workload.n_keys / 2,
            workload,
            windows: 20,
            window_ticks: 1000,
            drift_at: Some(10),
            drift_theta: 1.2,
            filter: FilterConfig { candidates: 16, eval_budget: 3000, ..Default::default() },
            refine: RefineConfig::default(),
        }
    }
}

fn invalid(key: &str, value: &str) -> String {
    format!("invalid value {value:?} for {key}")
}

impl BenchSpec {
    /// Parses flat `key = value` lines over the defaults.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut s = Self::default();
        let mut hot_set = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| invalid(k, v));
            let int = |v: &str| v.parse::<u64>().map_err(|_| invalid(k, v));
            let w = &mut s.workload;
            match k {
                "n_keys" => w.n_keys = int(v)? as u32,
                "zipf_theta" => w.zipf_theta = num(v)?,
                "hot_offset" => w.hot_offset = int(v)? as u32,
                "reads_per_txn" => w.reads_per_txn = int(v)? as usize,
                "writes_per_txn" => w.writes_per_txn = int(v)? as usize,
                "short_txn_fraction" => w.short_txn_fraction = num(v)?,
                "n_workers" => w.n_workers = int(v)? as usize,
                "seed" => w.seed = int(v)?,
                "windows" => s.windows = int(v)?,
                "window_ticks" => s.window_ticks = int(v)?.max(1),
                "drift_at" => s.drift_at = if v == "none" { None } else { Some(int(v)?) },
                "drift_theta" => s.drift_theta = num(v)?,
                "drift_hot_offset" => {
                    s.drift_hot_offset = int(v)? as u32;
                    hot_set = true;
                }
                "candidates" => s.filter.candidates = int(v)? as usize,
                "eval_budget" => s.filter.eval_budget = int(v)?,
                "refine_steps" => s.refine.steps = int(v)?,
                _ => return Err(format!("line {}: unknown key {k}", i + 1)),
            }
        }
        if !hot_set {
            s.drift_hot_offset = s.workload.n_keys / 2;
        }
        s.workload.validate()?;
        Ok(s)
    }

    fn drifted(&self, seed: u64) -> WorkloadSpec {
        WorkloadSpec { zipf_theta: self.drift_theta, hot_offset: self.drift_hot_offset, seed, ..self.workload.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub window: u64,
    pub throughput: f64,
    pub abort_rate: f64,
    pub policy_version: u64,
}

impl WindowRow {
    pub const CSV_HEADER: &'static str = "window,throughput,abort_rate,policy_version";
}

impl fmt::Display for WindowRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{:.3},{:.4},{}", self.window, self.throughput, self.abort_rate, self.policy_version)
    }
}

/// Runs `spec.windows` windows under `policy`. With `adapt`, the policy is
/// re-adapted once, right after the drift starts, on a side simulation of
/// the drifted workload; the running system switches to it one window later.
pub fn run_bench(spec: &BenchSpec, policy: CcPolicy, adapt: bool) -> Result<Vec<WindowRow>, String> {
    let opts = SimOptions { window_ticks: spec.window_ticks, ..Default::default() };
    let mut sim = Simulator::new(spec.workload.clone(), opts.clone())?;
    let mut chooser = PolicyChooser::new(policy);
    let mut rows = Vec::new();
    for w in 0..spec.windows {
        if spec.drift_at == Some(w) {
            sim.set_skew(spec.drift_theta, spec.drift_hot_offset);
        }
        if adapt && spec.drift_at.is_some_and(|d| w == d + 1) {
            let eval = spec.drifted(spec.workload.seed.wrapping_add(1000));
            let out = two_phase_adapt(&chooser.policy, &eval, &opts, &spec.filter, &spec.refine);
            chooser.policy = out.chosen;
            chooser.version += 1;
        }
        let r = sim.run(&mut chooser, Stop::Ticks(spec.window_ticks));
        rows.push(WindowRow {
            window: w,
            throughput: r.throughput(),
            abort_rate: r.abort_rate(),
            policy_version: chooser.version,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftOutcome {
    pub pre_policy: CcPolicy,
    pub adapted_policy: CcPolicy,
    /// Post-drift throughput on a held-out seed.
    pub adapted: f64,
    pub frozen: f64,
    pub two_pl: f64,
    pub occ: f64,
}

impl DriftOutcome {
    pub fn gain_over_frozen(&self) -> f64 {
        self.adapted / self.frozen
    }

    pub fn best_baseline(&self) -> f64 {
        self.two_pl.max(self.occ)
    }
}

/// Policy adapted from the all-zero policy on a side simulation of the
/// pre-drift workload.
pub fn pretrained_policy(spec: &BenchSpec) -> CcPolicy {
    let opts = SimOptions { window_ticks: spec.window_ticks, ..Default::default() };
    let pre = WorkloadSpec { seed: spec.workload.seed.wrapping_add(500), ..spec.workload.clone() };
    two_phase_adapt(&CcPolicy::occ(), &pre, &opts, &spec.filter, &spec.refine).chosen
}

/// Adapts from the all-zero policy on the pre-drift workload, then again
/// after the switch, and measures every policy on an unseen post-drift seed.
pub fn drift_experiment(spec: &BenchSpec, holdout_budget: u64) -> DriftOutcome {
    let opts = SimOptions { window_ticks: spec.window_ticks, ..Default::default() };
    let seed = spec.workload.seed;
    let pre_policy = pretrained_policy(spec);
    let post_eval = spec.drifted(seed.wrapping_add(1000));
    let adapted_policy = two_phase_adapt(&pre_policy, &post_eval, &opts, &spec.filter, &spec.refine).chosen;
    let held_out = spec.drifted(seed.wrapping_add(2000));
    let measure = |p: &CcPolicy| evaluate_policy(p, &held_out, &opts, holdout_budget);
    DriftOutcome {
        adapted: measure(&adapted_policy),
        frozen: measure(&pre_policy),
        two_pl: measure(&CcPolicy::two_pl()),
        occ: measure(&CcPolicy::occ()),
        pre_policy,
        adapted_policy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        let s = BenchSpec::parse("n_keys = 500\nzipf_theta=0.8 # skew\ndrift_at = none\n").unwrap();
        assert_eq!((s.workload.n_keys, s.workload.zipf_theta, s.drift_at, s.drift_hot_offset), (500, 0.8, None, 250));
        assert!(BenchSpec::parse("bogus = 1").is_err());
        assert!(BenchSpec::parse("n_keys = 2").is_err());
    }

    #[test]
    fn bench_rows_are_reproducible() {
        let spec = BenchSpec {
            workload: WorkloadSpec { n_keys: 300, n_workers: 8, ..Default::default() },
            windows: 4,
            drift_at: Some(2),
            ..Default::default()
        };
        let a = run_bench(&spec, CcPolicy::occ(), false).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, run_bench(&spec, CcPolicy::occ(), false).unwrap());
        assert!(a.iter().all(|r| r.policy_version == 0));
    }
}
