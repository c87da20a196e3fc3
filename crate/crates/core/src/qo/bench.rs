//! Plan-choice benchmark over one generated schema: every query's candidates
//! are executed to find the oracle, then the chosen plan is scored against it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{GenParams, Query, MAX_GEN_TABLES};
use super::model::DualModel;
use super::train::{evaluate, pretrain, Labeled, Mode, Outcome, PretrainConfig};
use super::QoError;
use crate::sql::{parse_statement, split_statements, Statement};

/// Flat `key = value` description of a chain schema. Lists are comma
/// separated; a single value applies to every entry.
///
/// ```text
/// tables = 3
/// rows = 2000, 500, 8000
/// join_sel = 0.01
/// skew = 0.0, 1.8, 0.0, 0.0, 0.2, 0.0, 0.0   # table-major, relation column order
/// corr = 0.3
/// seed = 7
/// ```
pub fn parse_tables_spec(text: &str) -> Result<GenParams, QoError> {
    let mut n = None;
    let (mut rows, mut join_sel, mut skew) = (vec![1000.0], vec![0.01], vec![0.0]);
    let (mut corr, mut seed) = (0.0, 0);
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| QoError::InvalidSpec(format!("line {}: {m}", i + 1));
        let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key = value".into()))?;
        let (k, v) = (k.trim(), v.trim());
        let list = || -> Result<Vec<f64>, QoError> {
            v.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad(format!("invalid number in {k}: {x:?}"))))
                .collect()
        };
        match k {
            "tables" => n = Some(v.parse::<usize>().map_err(|_| bad(format!("invalid table count {v:?}")))?),
            "rows" => rows = list()?,
            "join_sel" => join_sel = list()?,
            "skew" => skew = list()?,
            "corr" => corr = v.parse().map_err(|_| bad(format!("invalid corr {v:?}")))?,
            "seed" => seed = v.parse().map_err(|_| bad(format!("invalid seed {v:?}")))?,
            _ => return Err(bad(format!("unknown key {k}"))),
        }
    }
    let n = n.ok_or_else(|| QoError::InvalidSpec("missing key tables".into()))?;
    if n == 0 || n > MAX_GEN_TABLES {
        return Err(QoError::InvalidSpec(format!("tables must be in [1, {MAX_GEN_TABLES}]")));
    }
    let spread = |what: &str, v: Vec<f64>, len: usize| match v.len() {
        1 => Ok(vec![v[0]; len]),
        l if l == len => Ok(v),
        l => Err(QoError::InvalidSpec(format!("{what} has {l} values, expected 1 or {len}"))),
    };
    let widths: Vec<usize> = (0..n).map(|i| GenParams::columns(n, i).len()).collect();
    let flat = spread("skew", skew, widths.iter().sum())?;
    let mut it = flat.into_iter();
    Ok(GenParams {
        rows: spread("rows", rows, n)?,
        join_sel: spread("join_sel", join_sel, n - 1)?,
        skew: widths.iter().map(|w| it.by_ref().take(*w).collect()).collect(),
        corr,
        seed,
    })
}

/// Parses a file of `SELECT` statements against the generated schema.
pub fn parse_queries(sql: &str, db: &super::data::QoDb) -> Result<Vec<Query>, QoError> {
    let mut out = Vec::new();
    for (_, text) in split_statements(sql).map_err(|e| QoError::Unsupported(e.to_string()))? {
        match parse_statement(&text).map_err(|e| QoError::Unsupported(e.to_string()))? {
            Statement::Select(s) => out.push(Query::from_select(&s, db)?),
            _ => return Err(QoError::Unsupported(format!("not a SELECT: {text}"))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QoBench {
    pub params: GenParams,
    /// Random chain queries are drawn when `None`.
    pub queries: Option<String>,
    pub n_queries: usize,
    pub mode: Mode,
    pub pretrain_budget: usize,
    pub seed: u64,
}

/// Runs the benchmark; the output is a pure function of the inputs.
pub fn run_qo_bench(b: &QoBench) -> Result<Vec<Outcome>, QoError> {
    let db = b.params.generate()?;
    let queries = match &b.queries {
        Some(sql) => parse_queries(sql, &db)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(b.seed);
            (0..b.n_queries).map(|_| b.params.random_query(&mut rng)).collect()
        }
    };
    let labeled: Vec<Labeled> = queries.into_iter().map(|q| Labeled::build(q, &db)).collect::<Result<_, _>>()?;
    let model = match b.mode {
        Mode::Learned => {
            let mut m = DualModel::new(b.seed);
            let n_tables = b.params.n_tables().clamp(1, super::plan::MAX_TABLES);
            pretrain(
                &mut m,
                &PretrainConfig { n_tables, budget: b.pretrain_budget, seed: b.seed, ..Default::default() },
            )?;
            Some(m)
        }
        Mode::Builtin => None,
    };
    evaluate(model.as_ref(), b.mode, &labeled)
}
