//! Two-phase policy adaptation: a surrogate-guided filter over perturbed
//! candidates, then reward-driven refinement of the survivor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use crate::bo::{expected_improvement, Gp};

use super::sim::{Chooser, PolicyChooser, SimOptions, Simulator, Stop, WorkloadSpec};
use super::{CcAction, CcPolicy, ContentionState, OpKind, FEATURE_DIM, N_ACTIONS, POLICY_PARAMS};

/// Throughput (commits per 1000 ticks) of `policy` until `budget`
/// transaction attempts finish on `spec`.
pub fn evaluate_policy(policy: &CcPolicy, spec: &WorkloadSpec, opts: &SimOptions, budget: u64) -> f64 {
    let mut sim = Simulator::new(spec.clone(), opts.clone()).expect("validated workload");
    sim.run(&mut PolicyChooser::new(policy.clone()), Stop::Finished(budget)).throughput()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Candidates evaluated besides the incumbent.
    pub candidates: usize,
    /// Transaction attempts per evaluation.
    pub eval_budget: u64,
    /// Perturbations scored by the acquisition function per round.
    pub pool: usize,
    /// Local perturbation scale for even pool slots.
    pub sigma: f64,
    /// Exploratory scale for odd pool slots, wide enough to flip an action.
    pub wide_sigma: f64,
    pub projection_dim: usize,
    pub length_scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            candidates: 8,
            eval_budget: 1500,
            pool: 64,
            sigma: 0.1,
            wide_sigma: 1.0,
            projection_dim: 10,
            length_scale: 1.0,
            noise: 1e-3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub best: CcPolicy,
    pub best_throughput: f64,
    pub incumbent_throughput: f64,
    /// Every evaluated policy with its measured throughput, incumbent first.
    pub evaluated: Vec<(CcPolicy, f64)>,
}

/// Gaussian projection matrix with `N(0, 1/dim)` entries, which preserves
/// distances in expectation.
fn projection(dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_9a55);
    let s = 1.0 / (dim as f64).sqrt();
    (0..dim).map(|_| (0..POLICY_PARAMS).map(|_| s * r.sample::<f64, _>(StandardNormal)).collect()).collect()
}

fn project(p: &[Vec<f64>], theta: &[f64]) -> Vec<f64> {
    p.iter().map(|row| row.iter().zip(theta).map(|(a, b)| a * b).sum()).collect()
}

/// Filter phase. Candidate 0 is the incumbent and replacing it needs a
/// strictly higher measurement, so the result never regresses on the
/// evaluation workload and seed.
pub fn adapt_filter_phase(
    current: &CcPolicy,
    spec: &WorkloadSpec,
    opts: &SimOptions,
    cfg: &FilterConfig,
) -> FilterResult {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let proj = projection(cfg.projection_dim, cfg.seed);
    let incumbent = evaluate_policy(current, spec, opts, cfg.eval_budget);
    let mut evaluated = vec![(current.clone(), incumbent)];
    let mut zs = vec![project(&proj, &current.to_vec())];
    for _ in 0..cfg.candidates {
        let ys: Vec<f64> = evaluated.iter().map(|(_, y)| *y).collect();
        let gp = Gp::fit(&zs, &ys, cfg.length_scale, cfg.noise);
        let (best_idx, best_y) = argmax(&ys);
        let center = evaluated[best_idx].0.to_vec();
        let best_n = gp.normalize(best_y);
        let mut pick: Option<(f64, Vec<f64>)> = None;
        for slot in 0..cfg.pool.max(1) {
            let sigma = if slot % 2 == 0 { cfg.sigma } else { cfg.wide_sigma };
            let theta: Vec<f64> = center.iter().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
            let (m, s) = gp.predict_normalized(&project(&proj, &theta));
            let ei = expected_improvement(m, s, best_n, 0.01);
            if pick.as_ref().is_none_or(|(e, _)| ei > *e) {
                pick = Some((ei, theta));
            }
        }
        let theta = pick.expect("pool is non-empty").1;
        let policy = CcPolicy::from_slice(&theta);
        let y = evaluate_policy(&policy, spec, opts, cfg.eval_budget);
        zs.push(project(&proj, &theta));
        evaluated.push((policy, y));
    }
    let ys: Vec<f64> = evaluated.iter().map(|(_, y)| *y).collect();
    let (i, y) = argmax(&ys);
    FilterResult { best: evaluated[i].0.clone(), best_throughput: y, incumbent_throughput: incumbent, evaluated }
}

/// First index of the maximum.
fn argmax(ys: &[f64]) -> (usize, f64) {
    let mut best = (0, ys[0]);
    for (i, y) in ys.iter().enumerate().skip(1) {
        if *y > best.1 {
            best = (i, *y);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    /// Transaction attempts to learn from.
    pub steps: u64,
    pub lr: f64,
    pub commit_reward: f64,
    pub abort_reward: f64,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { steps: 3000, lr: 0.01, commit_reward: 1.0, abort_reward: -0.2, seed: 11 }
    }
}

/// Softmax policy trained with REINFORCE. Each finished attempt credits its
/// reward minus a running-mean baseline to every action it took.
pub struct Reinforce {
    pub policy: CcPolicy,
    cfg: RefineConfig,
    rng: ChaCha8Rng,
    trajectories: Vec<Vec<(ContentionState, usize, usize)>>,
    reward_sum: f64,
    finished: u64,
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

impl Reinforce {
    pub fn new(policy: CcPolicy, workers: usize, cfg: RefineConfig) -> Self {
        Self {
            policy,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            trajectories: vec![Vec::new(); workers],
            reward_sum: 0.0,
            finished: 0,
        }
    }

    /// Running mean reward including the latest outcome.
    pub fn baseline(&self) -> f64 {
        if self.finished == 0 {
            0.0
        } else {
            self.reward_sum / self.finished as f64
        }
    }
}

impl Chooser for Reinforce {
    fn choose(&mut self, worker: usize, x: &ContentionState, kind: OpKind) -> CcAction {
        let allowed = CcAction::allowed(kind);
        let p = softmax(&self.policy.scores(x)[..allowed]);
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        let mut a = allowed - 1;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                a = i;
                break;
            }
        }
        self.trajectories[worker].push((*x, a, allowed));
        CcAction::ALL[a]
    }

    fn finished(&mut self, worker: usize, committed: bool) {
        let r = if committed { self.cfg.commit_reward } else { self.cfg.abort_reward };
        self.reward_sum += r;
        self.finished += 1;
        let adv = r - self.baseline();
        let traj = std::mem::take(&mut self.trajectories[worker]);
        if adv == 0.0 {
            return;
        }
        for (x, a, allowed) in traj {
            let p = softmax(&self.policy.scores(&x)[..allowed]);
            for j in 0..allowed {
                let g = self.cfg.lr * adv * ((j == a) as u8 as f64 - p[j]);
                for f in 0..FEATURE_DIM {
                    self.policy.w[j][f] += g * x.0[f];
                }
                self.policy.b[j] += g;
            }
        }
    }
}

/// Refinement phase; returns the argmax form of the updated policy.
pub fn adapt_refine_phase(policy: &CcPolicy, spec: &WorkloadSpec, opts: &SimOptions, cfg: &RefineConfig) -> CcPolicy {
    if cfg.steps == 0 {
        return policy.clone();
    }
    let mut learner = Reinforce::new(policy.clone(), spec.n_workers, cfg.clone());
    let mut sim = Simulator::new(spec.clone(), opts.clone()).expect("validated workload");
    sim.run(&mut learner, Stop::Finished(cfg.steps));
    debug_assert_eq!(learner.policy.w.len(), N_ACTIONS);
    learner.policy
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptOutcome {
    pub filter: FilterResult,
    pub refined: CcPolicy,
    pub refined_throughput: f64,
    /// The refined policy if it measured at least as well as the filter's
    /// pick on the evaluation workload, else the filter's pick.
    pub chosen: CcPolicy,
}

pub fn two_phase_adapt(
    current: &CcPolicy,
    spec: &WorkloadSpec,
    opts: &SimOptions,
    filter: &FilterConfig,
    refine: &RefineConfig,
) -> AdaptOutcome {
    let f = adapt_filter_phase(current, spec, opts, filter);
    let refined = adapt_refine_phase(&f.best, spec, opts, refine);
    let refined_throughput = evaluate_policy(&refined, spec, opts, filter.eval_budget);
    let chosen = if refined_throughput >= f.best_throughput { refined.clone() } else { f.best.clone() };
    AdaptOutcome { filter: f, refined, refined_throughput, chosen }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gp_interpolates_observations() {
        let xs = vec![vec![0.0], vec![1.0], vec![2.0]];
        let ys = [1.0, 3.0, 2.0];
        let gp = Gp::fit(&xs, &ys, 1.0, 1e-6);
        for (x, y) in xs.iter().zip(ys) {
            let (m, s) = gp.predict(x);
            assert!((m - y).abs() < 1e-3, "{m} vs {y}");
            assert!(s < 1e-2);
        }
        let (_, far) = gp.predict(&[10.0]);
        assert!(far > 0.5, "uncertainty grows away from data");
    }

    #[test]
    fn ei_matches_closed_form() {
        // At mean == best and xi = 0, EI = std * phi(0).
        let v = expected_improvement(0.0, 2.0, 0.0, 0.0);
        assert!((v - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert_eq!(expected_improvement(1.0, 0.0, 0.5, 0.0), 0.5);
    }

    fn small() -> (WorkloadSpec, SimOptions) {
        (
            WorkloadSpec { n_keys: 200, n_workers: 8, zipf_theta: 0.9, seed: 5, ..Default::default() },
            SimOptions::default(),
        )
    }

    #[test]
    fn filter_never_regresses_and_keeps_identical_incumbent() {
        let (spec, opts) = small();
        let cfg = FilterConfig { candidates: 3, eval_budget: 300, pool: 8, ..Default::default() };
        let r = adapt_filter_phase(&CcPolicy::occ(), &spec, &opts, &cfg);
        assert!(r.best_throughput >= r.incumbent_throughput);
        assert_eq!(r.evaluated.len(), 4);
        let same =
            adapt_filter_phase(&CcPolicy::two_pl(), &spec, &opts, &FilterConfig { sigma: 0.0, wide_sigma: 0.0, ..cfg });
        assert_eq!(same.best, CcPolicy::two_pl());
    }

    #[test]
    fn refine_zero_steps_is_identity() {
        let (spec, opts) = small();
        let p = CcPolicy::two_pl();
        assert_eq!(adapt_refine_phase(&p, &spec, &opts, &RefineConfig { steps: 0, ..Default::default() }), p);
    }

    #[test]
    fn conflict_free_refinement_does_not_move() {
        // A lone read-only worker always commits, so every reward equals the baseline.
        let spec = WorkloadSpec { n_workers: 1, writes_per_txn: 0, ..small().0 };
        let p = CcPolicy::two_pl();
        let r =
            adapt_refine_phase(&p, &spec, &SimOptions::default(), &RefineConfig { steps: 200, ..Default::default() });
        assert_eq!(r, p);
    }
}
