//! Labeled workloads, pretraining over the generator space, fine-tuning on
//! observed costs, and plan-quality evaluation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{GenParams, QoDb, Query, QueryStats, SystemCondition};
use super::model::{Adam, DualModel, Sample};
use super::plan::{enumerate_plans, heuristic_choice, PlanTree, TrueCards};
use super::QoError;
use crate::bo::{expected_improvement, Gp};

/// A query with every candidate plan and its measured cost.
#[derive(Debug, Clone)]
pub struct Labeled {
    pub query: Query,
    pub plans: Vec<PlanTree>,
    pub cond: SystemCondition,
    pub costs: Vec<f64>,
}

impl Labeled {
    pub fn build(query: Query, db: &QoDb) -> Result<Self, QoError> {
        let stats = QueryStats::build(&query, db)?;
        let plans = enumerate_plans(&query, &stats)?.plans;
        let cards = TrueCards::compute(&query, db)?;
        let costs = plans.iter().map(|p| cards.cost(p)).collect();
        Ok(Self { cond: SystemCondition::build(&stats), query, plans, costs })
    }

    pub fn oracle_cost(&self) -> f64 {
        self.costs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        self.plans.iter().zip(&self.costs).map(|(p, c)| Sample {
            plan: p.clone(),
            cond: self.cond.clone(),
            log_cost: c.ln(),
        })
    }
}

/// Materializes `params` and labels `n_queries` random queries over it.
pub fn label_config(params: &GenParams, n_queries: usize, seed: u64) -> Result<Vec<Labeled>, QoError> {
    let db = params.generate()?;
    config_queries(params, n_queries, seed).into_iter().map(|q| Labeled::build(q, &db)).collect()
}

/// How skew exponents of a held-out workload are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SkewMode {
    /// As in the generator space.
    Space,
    /// Every column from `[lo, hi]`.
    All(f64, f64),
    /// Both key columns of one random join edge from `hot`, every other
    /// column from `rest`.
    HotEdge { hot: (f64, f64), rest: (f64, f64) },
}

/// Configurations of [`workload`] with the seed its queries are drawn from.
pub fn workload_params(n_tables: usize, n_configs: usize, seed: u64, skew: SkewMode) -> Vec<(GenParams, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for c in 0..n_configs {
        let u: Vec<f64> = (0..GenParams::dims(n_tables)).map(|_| rng.gen()).collect();
        let mut p = GenParams::from_unit(n_tables, &u, rng.gen());
        match skew {
            SkewMode::Space => {}
            SkewMode::All(lo, hi) => p.skew.iter_mut().flatten().for_each(|s| *s = rng.gen_range(lo..=hi)),
            SkewMode::HotEdge { hot, rest } => {
                let edge = rng.gen_range(0..n_tables.saturating_sub(1).max(1));
                let key = format!("k{}_{}", edge, edge + 1);
                for (i, t) in p.skew.iter_mut().enumerate() {
                    for (name, s) in GenParams::columns(n_tables, i).iter().zip(t.iter_mut()) {
                        let (lo, hi) = if *name == key { hot } else { rest };
                        *s = rng.gen_range(lo..=hi);
                    }
                }
            }
        }
        out.push((p, seed.wrapping_add(c as u64)));
    }
    out
}

/// The queries [`label_config`] draws for `params` under `seed`.
pub fn config_queries(params: &GenParams, n_queries: usize, seed: u64) -> Vec<Query> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_queries).map(|_| params.random_query(&mut rng)).collect()
}

/// Random configurations drawn uniformly from the unit cube, with skew
/// exponents redrawn per `skew`.
pub fn workload(
    n_tables: usize,
    n_configs: usize,
    queries_per_config: usize,
    seed: u64,
    skew: SkewMode,
) -> Result<Vec<Labeled>, QoError> {
    let mut out = Vec::new();
    for (p, qseed) in workload_params(n_tables, n_configs, seed, skew) {
        out.extend(label_config(&p, queries_per_config, qseed)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub n_tables: usize,
    /// Generator configurations proposed, materialized and trained on.
    pub budget: usize,
    pub queries_per_config: usize,
    /// Passes over everything collected so far, after each round.
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Random unit-cube points scored by expected improvement per round.
    pub pool: usize,
    pub length_scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            n_tables: 3,
            budget: 30,
            queries_per_config: 6,
            epochs: 3,
            batch: 16,
            lr: 2e-3,
            pool: 256,
            length_scale: 0.5,
            noise: 1e-2,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainRound {
    pub params: GenParams,
    /// Model error on the new configuration before training on it.
    pub acquisition_mse: f64,
    /// Error over all collected samples after the round's training.
    pub train_mse: f64,
}

/// Proposes generator configurations where the model is worst (expected
/// improvement over its observed error), labels them by executing every
/// candidate, and trains on everything collected so far.
pub fn pretrain(model: &mut DualModel, cfg: &PretrainConfig) -> Result<Vec<PretrainRound>, QoError> {
    let dims = GenParams::dims(cfg.n_tables);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut data: Vec<Sample> = Vec::new();
    let mut rounds = Vec::new();
    for r in 0..cfg.budget {
        let u = if xs.is_empty() {
            (0..dims).map(|_| rng.gen()).collect()
        } else {
            let gp = Gp::fit(&xs, &ys, cfg.length_scale, cfg.noise);
            let best = gp.normalize(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            let mut pick: Option<(f64, Vec<f64>)> = None;
            for _ in 0..cfg.pool.max(1) {
                let cand: Vec<f64> = (0..dims).map(|_| rng.gen()).collect();
                let (m, s) = gp.predict_normalized(&cand);
                let ei = expected_improvement(m, s, best, 0.01);
                if pick.as_ref().is_none_or(|(e, _)| ei > *e) {
                    pick = Some((ei, cand));
                }
            }
            pick.expect("non-empty pool").1
        };
        let params = GenParams::from_unit(cfg.n_tables, &u, cfg.seed.wrapping_mul(1000).wrapping_add(r as u64));
        let labeled = label_config(&params, cfg.queries_per_config, rng.gen())?;
        let fresh: Vec<Sample> = labeled.iter().flat_map(|l| l.samples()).collect();
        let acquisition_mse = model.mse(&fresh);
        xs.push(u);
        ys.push(acquisition_mse);
        data.extend(fresh);
        for _ in 0..cfg.epochs {
            data.shuffle(&mut rng);
            for batch in data.chunks(cfg.batch.max(1)) {
                model.adam_step(batch, &mut opt);
            }
        }
        let train_mse = model.mse(&data);
        if !model.is_finite() {
            return Err(QoError::Diverged);
        }
        rounds.push(PretrainRound { params, acquisition_mse, train_mse });
    }
    Ok(rounds)
}

/// SGD on the analyzer MLP over observed `(plan, condition, cost)` samples,
/// leaving the encoder bit-identical. Returns the loss before each epoch.
pub fn finetune_on_labels(
    model: &mut DualModel,
    samples: &[Sample],
    epochs: usize,
    lr: f32,
) -> Result<Vec<f64>, QoError> {
    if samples.is_empty() {
        return Err(QoError::NoLabels);
    }
    let losses = (0..epochs).map(|_| model.head_sgd_step(samples, lr)).collect();
    if !model.is_finite() {
        return Err(QoError::Diverged);
    }
    Ok(losses)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Learned,
    /// Smallest estimated intermediate results.
    Builtin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub query_id: usize,
    pub chosen_plan: String,
    pub true_cost: f64,
    pub oracle_cost: f64,
}

impl Outcome {
    pub const CSV_HEADER: &'static str = "query_id,chosen_plan,true_cost,oracle_cost,regret";

    /// Relative excess cost over the best candidate.
    pub fn regret(&self) -> f64 {
        self.true_cost / self.oracle_cost - 1.0
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{:.6}", self.query_id, self.chosen_plan, self.true_cost, self.oracle_cost, self.regret())
    }
}

/// Chosen plan per query. `model` is required for [`Mode::Learned`].
pub fn evaluate(model: Option<&DualModel>, mode: Mode, labeled: &[Labeled]) -> Result<Vec<Outcome>, QoError> {
    labeled
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let pick = match (mode, model) {
                (Mode::Learned, Some(m)) => m.choose(&l.plans, &l.cond)?,
                (Mode::Learned, None) => return Err(QoError::Unsupported("learned mode needs a model".into())),
                (Mode::Builtin, _) => heuristic_choice(&l.plans),
            };
            Ok(Outcome {
                query_id: i,
                chosen_plan: l.plans[pick].label(&l.query),
                true_cost: l.costs[pick],
                oracle_cost: l.oracle_cost(),
            })
        })
        .collect()
}

/// Mean relative regret of picking a candidate uniformly at random.
pub fn random_choice_regret(labeled: &[Labeled]) -> f64 {
    let per: Vec<f64> = labeled
        .iter()
        .map(|l| {
            let o = l.oracle_cost();
            l.costs.iter().map(|c| c / o - 1.0).sum::<f64>() / l.costs.len() as f64
        })
        .collect();
    per.iter().sum::<f64>() / per.len().max(1) as f64
}

pub fn mean_regret(outcomes: &[Outcome]) -> f64 {
    outcomes.iter().map(Outcome::regret).sum::<f64>() / outcomes.len().max(1) as f64
}

/// Fraction of queries whose chosen plan costs at most `factor` times the best.
pub fn within_factor(outcomes: &[Outcome], factor: f64) -> f64 {
    outcomes.iter().filter(|o| o.true_cost <= factor * o.oracle_cost).count() as f64 / outcomes.len().max(1) as f64
}
