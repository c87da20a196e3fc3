//! Relations, select-project-join queries, column statistics, the system
//! condition, and the synthetic schema generator.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::QoError;
use crate::sql::{BinOp, Expr, Select};
use crate::storage::{Histogram, Table, Value};

pub const HIST_BINS: usize = 8;
pub const COND_TOKENS: usize = 16;
pub const COND_DIM: usize = 4;
/// Upper bound (exclusive) of generated filter columns.
pub const FILTER_DOMAIN: i64 = 1000;

/// In-memory integer relation, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub name: String,
    pub columns: Vec<String>,
    pub data: Vec<Vec<i64>>,
    /// Buffer hit ratio observed for the backing table.
    pub hit_ratio: f64,
}

impl Relation {
    pub fn rows(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Copies the integer columns of a stored table. NULLs and other types
    /// are skipped column-wise, so only all-integer columns come through.
    pub fn from_table(table: &Arc<Table>) -> Result<Self, QoError> {
        let schema = table.schema();
        let rows = table.collect()?;
        let mut columns = Vec::new();
        let mut data = Vec::new();
        for (i, c) in schema.columns.iter().enumerate() {
            let col: Option<Vec<i64>> = rows
                .iter()
                .map(|r| match &r[i] {
                    Value::Int(v) => Some(*v),
                    _ => None,
                })
                .collect();
            if let Some(col) = col {
                columns.push(c.name.clone());
                data.push(col);
            }
        }
        Ok(Self { name: table.name().to_string(), columns, data, hit_ratio: table.buffer_stats().hit_ratio() })
    }
}

/// A set of relations addressed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QoDb {
    pub relations: Vec<Relation>,
}

impl QoDb {
    pub fn relation(&self, name: &str) -> Result<&Relation, QoError> {
        self.relations.iter().find(|r| r.name == name).ok_or_else(|| QoError::UnknownTable(name.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColRef {
    /// Position in [`Query::tables`].
    pub table: usize,
    /// Column index in the relation.
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinPred {
    pub left: ColRef,
    pub right: ColRef,
}

impl JoinPred {
    pub fn touches(&self, t: usize) -> bool {
        self.left.table == t || self.right.table == t
    }
}

/// `lo <= col <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeFilter {
    pub col: ColRef,
    pub lo: i64,
    pub hi: i64,
}

/// Select-project-join query with equi-join predicates and range filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub tables: Vec<String>,
    pub joins: Vec<JoinPred>,
    pub filters: Vec<RangeFilter>,
}

impl Query {
    /// Columns the query references, in table order then column order.
    pub fn referenced_columns(&self) -> Vec<ColRef> {
        let mut cols: Vec<ColRef> = self
            .joins
            .iter()
            .flat_map(|j| [j.left, j.right])
            .chain(self.filters.iter().map(|f| f.col))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        cols.sort();
        cols
    }

    /// Whether the join graph over all tables is connected.
    pub fn is_connected(&self) -> bool {
        let n = self.tables.len();
        if n <= 1 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(t) = stack.pop() {
            for j in &self.joins {
                for (a, b) in [(j.left.table, j.right.table), (j.right.table, j.left.table)] {
                    if a == t && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Converts a parsed `SELECT` whose WHERE and ON clauses are conjunctions
    /// of column equalities and integer comparisons.
    pub fn from_select(s: &Select, db: &QoDb) -> Result<Self, QoError> {
        let refs: Vec<_> = s.from.iter().chain(s.joins.iter().map(|(t, _)| t)).collect();
        let mut q =
            Query { tables: refs.iter().map(|t| t.name.clone()).collect(), joins: Vec::new(), filters: Vec::new() };
        let rels: Vec<&Relation> = q.tables.iter().map(|t| db.relation(t)).collect::<Result<_, _>>()?;
        let resolve = |c: &crate::sql::ColumnRef| -> Result<ColRef, QoError> {
            let mut hits = refs.iter().enumerate().filter_map(|(i, t)| {
                let named = c.table.as_deref().is_none_or(|n| n == t.binding());
                rels[i].column_index(&c.name).filter(|_| named).map(|column| ColRef { table: i, column })
            });
            let first = hits.next().ok_or_else(|| QoError::UnknownColumn(c.to_string()))?;
            if hits.next().is_some() {
                return Err(QoError::Unsupported(format!("ambiguous column {c}")));
            }
            Ok(first)
        };
        let mut conj: Vec<&Expr> = s.filter.iter().flat_map(|f| f.conjuncts()).collect();
        for (_, on) in &s.joins {
            conj.extend(on.conjuncts());
        }
        for c in conj {
            let Expr::Binary { op, left, right } = c else {
                return Err(QoError::Unsupported(format!("predicate {c}")));
            };
            match (left.as_ref(), right.as_ref()) {
                (Expr::Column(a), Expr::Column(b)) if *op == BinOp::Eq => {
                    let (l, r) = (resolve(a)?, resolve(b)?);
                    if l.table == r.table {
                        return Err(QoError::Unsupported(format!("single-table column equality {c}")));
                    }
                    q.joins.push(JoinPred { left: l, right: r });
                }
                (Expr::Column(a), Expr::Literal(Value::Int(v))) => q.add_bound(resolve(a)?, *op, *v, c)?,
                (Expr::Literal(Value::Int(v)), Expr::Column(a)) => q.add_bound(resolve(a)?, flip(*op), *v, c)?,
                _ => return Err(QoError::Unsupported(format!("predicate {c}"))),
            }
        }
        Ok(q)
    }

    fn add_bound(&mut self, col: ColRef, op: BinOp, v: i64, e: &Expr) -> Result<(), QoError> {
        let (lo, hi) = match op {
            BinOp::Eq => (v, v),
            BinOp::Lt => (i64::MIN, v - 1),
            BinOp::LtEq => (i64::MIN, v),
            BinOp::Gt => (v + 1, i64::MAX),
            BinOp::GtEq => (v, i64::MAX),
            _ => return Err(QoError::Unsupported(format!("predicate {e}"))),
        };
        match self.filters.iter_mut().find(|f| f.col == col) {
            Some(f) => {
                f.lo = f.lo.max(lo);
                f.hi = f.hi.min(hi);
            }
            None => self.filters.push(RangeFilter { col, lo, hi }),
        }
        Ok(())
    }
}

fn flip(op: BinOp) -> BinOp {
    match op {
        BinOp::Lt => BinOp::Gt,
        BinOp::LtEq => BinOp::GtEq,
        BinOp::Gt => BinOp::Lt,
        BinOp::GtEq => BinOp::LtEq,
        o => o,
    }
}

/// Summary of one integer column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub hist: Histogram,
    pub distinct: usize,
    /// Mean, variance and median, all read off the histogram.
    pub mean: f64,
    pub var: f64,
    pub median: f64,
}

impl ColumnStats {
    pub fn build(values: &[i64]) -> Self {
        let f: Vec<f64> = values.iter().map(|v| *v as f64).collect();
        let hist = Histogram::build(&f, HIST_BINS);
        let distinct = values.iter().collect::<HashSet<_>>().len();
        let total = hist.total() as f64;
        if total == 0.0 {
            return Self { hist, distinct, mean: 0.0, var: 0.0, median: 0.0 };
        }
        let w = hist.width();
        let mid = |b: usize| hist.min + (b as f64 + 0.5) * w;
        let mean = hist.counts.iter().enumerate().map(|(b, c)| mid(b) * *c as f64).sum::<f64>() / total;
        let var = hist.counts.iter().enumerate().map(|(b, c)| (mid(b) - mean).powi(2) * *c as f64).sum::<f64>() / total;
        let mut median = hist.min;
        let mut cum = 0.0;
        for (b, c) in hist.counts.iter().enumerate() {
            let c = *c as f64;
            if c > 0.0 && cum + c >= total / 2.0 {
                median = hist.min + (b as f64 + (total / 2.0 - cum) / c) * w;
                break;
            }
            cum += c;
        }
        Self { hist, distinct, mean, var, median }
    }

    /// Histogram estimate of the fraction of values in `[lo, hi]`.
    pub fn range_fraction(&self, lo: i64, hi: i64) -> f64 {
        if hi < lo || self.hist.bins() == 0 {
            return 0.0;
        }
        if self.hist.max <= self.hist.min {
            let v = self.hist.min;
            return if lo as f64 <= v && v <= hi as f64 { 1.0 } else { 0.0 };
        }
        // Integer values occupy unit cells centred on themselves.
        let (a, b) = (lo as f64 - 0.5, hi as f64 + 0.5);
        let (min, max) = (self.hist.min - 0.5, self.hist.max + 0.5);
        let span = max - min;
        let bins = self.hist.bins();
        let total = self.hist.total() as f64;
        let mut frac = 0.0;
        for (i, c) in self.hist.counts.iter().enumerate() {
            let (bl, br) = (min + span * i as f64 / bins as f64, min + span * (i + 1) as f64 / bins as f64);
            let overlap = (b.min(br) - a.max(bl)).max(0.0);
            frac += *c as f64 / total * overlap / (br - bl);
        }
        frac.clamp(0.0, 1.0)
    }

    /// Half-open value cells `[lo, hi)` covered by each bin, where integer
    /// `v` occupies `[v - 0.5, v + 0.5)`.
    fn cells(&self) -> Vec<(f64, f64, f64)> {
        let bins = self.hist.bins();
        let (min, max) = (self.hist.min - 0.5, self.hist.max + 0.5);
        if bins == 0 {
            return Vec::new();
        }
        if self.hist.max <= self.hist.min {
            return vec![(min, max, self.hist.total() as f64)];
        }
        let span = max - min;
        self.hist
            .counts
            .iter()
            .enumerate()
            .map(|(i, c)| (min + span * i as f64 / bins as f64, min + span * (i + 1) as f64 / bins as f64, *c as f64))
            .collect()
    }

    /// Histogram estimate of the equi-join selectivity with `other`: rows
    /// are spread evenly over the integer values of their bin, and matching
    /// values are multiplied out bin overlap by bin overlap.
    pub fn join_selectivity(&self, other: &ColumnStats) -> f64 {
        let (na, nb) = (self.hist.total() as f64, other.hist.total() as f64);
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let mut matches = 0.0;
        for (al, ah, ac) in self.cells() {
            for (bl, bh, bc) in other.cells() {
                let overlap = (ah.min(bh) - al.max(bl)).max(0.0);
                if overlap > 0.0 {
                    matches += overlap * (ac / (ah - al)) * (bc / (bh - bl));
                }
            }
        }
        (matches / (na * nb)).clamp(0.0, 1.0)
    }

    /// `[mean, variance, skew proxy, distinct ratio]` on a scale-free footing.
    pub fn token(&self, rows: usize) -> [f64; COND_DIM] {
        let range = self.hist.max - self.hist.min;
        if rows == 0 || range <= 0.0 {
            return [0.0, 0.0, 0.0, if rows == 0 { 0.0 } else { 1.0 / rows as f64 }];
        }
        let std = self.var.sqrt();
        let skew = if std > 0.0 { (self.mean - self.median).abs() / std } else { 0.0 };
        [
            (self.mean - self.hist.min) / range,
            12.0 * self.var / (range * range),
            skew,
            self.distinct as f64 / rows as f64,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableStats {
    pub rows: usize,
    pub columns: Vec<ColumnStats>,
    pub hit_ratio: f64,
}

impl TableStats {
    pub fn build(r: &Relation) -> Self {
        Self { rows: r.rows(), columns: r.data.iter().map(|c| ColumnStats::build(c)).collect(), hit_ratio: r.hit_ratio }
    }
}

/// Statistics for the tables of one query, in query table order.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryStats {
    pub tables: Vec<TableStats>,
}

impl QueryStats {
    pub fn build(q: &Query, db: &QoDb) -> Result<Self, QoError> {
        Ok(Self { tables: q.tables.iter().map(|t| db.relation(t).map(TableStats::build)).collect::<Result<_, _>>()? })
    }

    pub fn column(&self, c: ColRef) -> &ColumnStats {
        &self.tables[c.table].columns[c.column]
    }
}

/// Fixed-size condition matrix: one buffer token per referenced table, then
/// one statistics token per column of those tables, zero-padded or
/// truncated to [`COND_TOKENS`] rows. Every column gets a token, not only
/// those the predicates name, so a slot means the same column across
/// queries over the same tables.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemCondition {
    tokens: Vec<[f64; COND_DIM]>,
}

impl SystemCondition {
    pub fn build(stats: &QueryStats) -> Self {
        let mut tokens: Vec<[f64; COND_DIM]> = stats.tables.iter().map(|t| [t.hit_ratio, 0.0, 0.0, 1.0]).collect();
        for t in &stats.tables {
            tokens.extend(t.columns.iter().map(|c| c.token(t.rows)));
        }
        tokens.resize(COND_TOKENS, [0.0; COND_DIM]);
        for t in &mut tokens {
            t.iter_mut().for_each(|x| {
                if !x.is_finite() {
                    *x = 0.0;
                }
            });
        }
        Self { tokens }
    }

    pub fn tokens(&self) -> &[[f64; COND_DIM]] {
        &self.tokens
    }

    /// Replaces the buffer hit ratio of query table `t`.
    pub fn with_hit_ratio(&self, t: usize, ratio: f64) -> Self {
        let mut c = self.clone();
        c.tokens[t][0] = if ratio.is_finite() { ratio } else { 0.0 };
        c
    }
}

/// Declared bounds of the synthetic generator space.
pub const SKEW_RANGE: (f64, f64) = (0.0, 2.0);
pub const ROWS_RANGE: (f64, f64) = (100.0, 20_000.0);
pub const JOIN_SEL_RANGE: (f64, f64) = (1e-4, 0.5);
pub const CORR_RANGE: (f64, f64) = (0.0, 0.9);
/// Largest schema the generator builds; queries over it may still exceed
/// what the optimizer enumerates.
pub const MAX_GEN_TABLES: usize = 16;

/// Parameters of a chain schema `t0 - t1 - ... - t{n-1}`. Table `i` has
/// join keys shared with its neighbours and a filter column `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub rows: Vec<f64>,
    /// One per edge; an edge key takes `round(1 / sel)` distinct values.
    pub join_sel: Vec<f64>,
    /// Zipf exponent per table per column, in relation column order.
    pub skew: Vec<Vec<f64>>,
    /// Fraction of a table's filter column explained by its first key.
    pub corr: f64,
    pub seed: u64,
}

fn clamp_logged(what: &str, v: f64, (lo, hi): (f64, f64), notes: &mut Vec<String>) -> f64 {
    let c = if v.is_nan() { lo } else { v.clamp(lo, hi) };
    if c != v {
        notes.push(format!("{what} = {v} clamped to {c}"));
    }
    c
}

impl GenParams {
    pub fn n_tables(&self) -> usize {
        self.rows.len()
    }

    pub fn columns(n_tables: usize, i: usize) -> Vec<String> {
        let mut c = Vec::new();
        if i > 0 {
            c.push(format!("k{}_{}", i - 1, i));
        }
        if i + 1 < n_tables {
            c.push(format!("k{}_{}", i, i + 1));
        }
        c.push("f".into());
        c
    }

    /// Number of generator dimensions for `n` tables.
    pub fn dims(n: usize) -> usize {
        n + (n - 1) + (0..n).map(|i| Self::columns(n, i).len()).sum::<usize>() + 1
    }

    /// Maps a point of the unit cube onto the space; rows and selectivity are
    /// log-uniform.
    pub fn from_unit(n: usize, u: &[f64], seed: u64) -> Self {
        assert_eq!(u.len(), Self::dims(n), "unit point dimension");
        let lerp = |(a, b): (f64, f64), t: f64| a + (b - a) * t.clamp(0.0, 1.0);
        let loglerp = |(a, b): (f64, f64), t: f64| (a.ln() + (b.ln() - a.ln()) * t.clamp(0.0, 1.0)).exp();
        let mut it = u.iter().copied();
        let mut next = || it.next().expect("dims checked");
        let rows = (0..n).map(|_| loglerp(ROWS_RANGE, next()).round()).collect();
        let join_sel = (0..n - 1).map(|_| loglerp(JOIN_SEL_RANGE, next())).collect();
        let skew = (0..n).map(|i| Self::columns(n, i).iter().map(|_| lerp(SKEW_RANGE, next())).collect()).collect();
        let corr = lerp(CORR_RANGE, next());
        Self { rows, join_sel, skew, corr, seed }
    }

    /// Clamps every parameter into the declared space; returns one note per
    /// adjusted value, each also logged as a warning.
    pub fn clamped(&self) -> (Self, Vec<String>) {
        let mut notes = Vec::new();
        let mut p = self.clone();
        for (i, r) in p.rows.iter_mut().enumerate() {
            *r = clamp_logged(&format!("rows[{i}]"), *r, ROWS_RANGE, &mut notes).round();
        }
        for (i, s) in p.join_sel.iter_mut().enumerate() {
            *s = clamp_logged(&format!("join_sel[{i}]"), *s, JOIN_SEL_RANGE, &mut notes);
        }
        for (i, t) in p.skew.iter_mut().enumerate() {
            for (j, s) in t.iter_mut().enumerate() {
                *s = clamp_logged(&format!("skew[{i}][{j}]"), *s, SKEW_RANGE, &mut notes);
            }
        }
        p.corr = clamp_logged("corr", p.corr, CORR_RANGE, &mut notes);
        for n in &notes {
            log::warn!("generator parameter {n}");
        }
        (p, notes)
    }

    fn validate(&self) -> Result<(), QoError> {
        let n = self.n_tables();
        if n == 0 || self.join_sel.len() + 1 != n || self.skew.len() != n {
            return Err(QoError::InvalidSpec(format!("{n} tables need {} join selectivities", n.saturating_sub(1))));
        }
        for (i, s) in self.skew.iter().enumerate() {
            if s.len() != Self::columns(n, i).len() {
                return Err(QoError::InvalidSpec(format!(
                    "table t{i} needs {} skew values",
                    Self::columns(n, i).len()
                )));
            }
        }
        Ok(())
    }

    /// Materializes the schema, after clamping into the declared space.
    pub fn generate(&self) -> Result<QoDb, QoError> {
        self.validate()?;
        let (p, _) = self.clamped();
        let n = p.n_tables();
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let domains: Vec<usize> = p.join_sel.iter().map(|s| (1.0 / s).round().max(1.0) as usize).collect();
        let mut relations = Vec::new();
        for i in 0..n {
            let cols = Self::columns(n, i);
            let rows = p.rows[i] as usize;
            let mut data = Vec::new();
            for (j, name) in cols.iter().enumerate() {
                let theta = p.skew[i][j];
                if name == "f" {
                    let key = data.first().cloned();
                    let dom = if i > 0 { domains[i - 1] } else { domains.first().copied().unwrap_or(1) };
                    let col = (0..rows)
                        .map(|r| {
                            let noise = zipf_rank(&mut rng, FILTER_DOMAIN as usize, theta) as f64;
                            let signal = key
                                .as_ref()
                                .map_or(noise, |k: &Vec<i64>| k[r] as f64 * FILTER_DOMAIN as f64 / dom.max(1) as f64);
                            ((p.corr * signal + (1.0 - p.corr) * noise) as i64).clamp(0, FILTER_DOMAIN - 1)
                        })
                        .collect();
                    data.push(col);
                } else {
                    let edge = if name == &format!("k{}_{}", i, i + 1) { i } else { i - 1 };
                    let cdf = zipf_cdf(domains[edge], theta);
                    data.push((0..rows).map(|_| sample_cdf(&cdf, &mut rng) as i64).collect());
                }
            }
            relations.push(Relation { name: format!("t{i}"), columns: cols, data, hit_ratio: rng.gen_range(0.5..1.0) });
        }
        Ok(QoDb { relations })
    }

    /// The chain query over every table, with a random range filter on each
    /// table's `f` column with probability one half.
    pub fn random_query(&self, rng: &mut ChaCha8Rng) -> Query {
        let n = self.n_tables();
        let tables: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let joins = (0..n.saturating_sub(1))
            .map(|i| JoinPred {
                left: ColRef { table: i, column: if i == 0 { 0 } else { 1 } },
                right: ColRef { table: i + 1, column: 0 },
            })
            .collect();
        let mut filters = Vec::new();
        for i in 0..n {
            if rng.gen_bool(0.5) {
                let width = (rng.gen_range(0.05..1.0) * FILTER_DOMAIN as f64) as i64;
                let lo = rng.gen_range(0..=FILTER_DOMAIN - width);
                let column = Self::columns(n, i).len() - 1;
                filters.push(RangeFilter { col: ColRef { table: i, column }, lo, hi: lo + width - 1 });
            }
        }
        Query { tables, joins, filters }
    }

    /// Same space point with every table capped at `max_rows` rows.
    pub fn scaled_down(&self, max_rows: f64) -> Self {
        Self { rows: self.rows.iter().map(|r| r.min(max_rows)).collect(), ..self.clone() }
    }
}

fn zipf_cdf(n: usize, theta: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = (1..=n.max(1))
        .map(|k| {
            acc += (k as f64).powf(-theta);
            acc
        })
        .collect();
    cdf.iter_mut().for_each(|c| *c /= acc);
    cdf
}

fn sample_cdf(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    cdf.partition_point(|c| *c < u).min(cdf.len() - 1)
}

fn zipf_rank(rng: &mut ChaCha8Rng, n: usize, theta: f64) -> usize {
    if theta == 0.0 {
        return rng.gen_range(0..n);
    }
    // Rejection-free inverse of the continuous approximation keeps this cheap
    // for a fixed 1000-value domain.
    let u: f64 = rng.gen();
    let x = if (theta - 1.0).abs() < 1e-9 {
        (u * ((n as f64) + 1.0).ln()).exp()
    } else {
        let a = 1.0 - theta;
        (1.0 + u * (((n as f64) + 1.0).powf(a) - 1.0)).powf(1.0 / a)
    };
    ((x - 1.0) as usize).min(n - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64) -> GenParams {
        GenParams::from_unit(3, &vec![0.5; GenParams::dims(3)], seed)
    }

    #[test]
    fn chain_schema_shape() {
        assert_eq!(GenParams::dims(3), 3 + 2 + 7 + 1);
        let db = params(1).generate().unwrap();
        assert_eq!(db.relations.len(), 3);
        assert_eq!(db.relations[1].columns, vec!["k0_1", "k1_2", "f"]);
        let p = params(1);
        for (r, n) in db.relations.iter().zip(&p.rows) {
            assert_eq!(r.rows(), *n as usize);
            assert!(r.data.iter().flatten().all(|v| *v >= 0));
        }
        assert_eq!(db, params(1).generate().unwrap());
    }

    #[test]
    fn out_of_range_parameters_are_clamped() {
        let mut p = params(1);
        p.rows[0] = 5.0;
        p.corr = 3.0;
        p.skew[2][0] = -1.0;
        let (c, notes) = p.clamped();
        assert_eq!(notes.len(), 3, "{notes:?}");
        assert_eq!((c.rows[0], c.corr, c.skew[2][0]), (100.0, 0.9, 0.0));
        assert_eq!(p.generate().unwrap().relations[0].rows(), 100);
    }

    #[test]
    fn filter_estimate_on_uniform_column() {
        let vals: Vec<i64> = (0..1000).collect();
        let s = ColumnStats::build(&vals);
        let est = 1000.0 * s.range_fraction(0, 99);
        assert!((est - 100.0).abs() <= 1.0, "{est}");
        assert_eq!(s.range_fraction(5, 4), 0.0);
        // Uniform keys over 1000 values on both sides: selectivity 1/1000.
        assert!((s.join_selectivity(&s) - 1e-3).abs() < 1e-9, "{}", s.join_selectivity(&s));
        let disjoint = ColumnStats::build(&(5000..6000).collect::<Vec<_>>());
        assert_eq!(s.join_selectivity(&disjoint), 0.0);
        assert!((s.range_fraction(i64::MIN, i64::MAX) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn skew_shows_in_tokens() {
        let flat = ColumnStats::build(&(0..1000).collect::<Vec<_>>()).token(1000);
        let cdf = zipf_cdf(1000, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let skewed: Vec<i64> = (0..1000).map(|_| sample_cdf(&cdf, &mut rng) as i64).collect();
        let sk = ColumnStats::build(&skewed).token(1000);
        assert!(flat[2] < 0.05, "{flat:?}");
        assert!(sk[2] > flat[2] && sk[3] < flat[3], "{sk:?}");
    }

    #[test]
    fn condition_layout() {
        let p = params(2);
        let db = p.generate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = p.random_query(&mut rng);
        let stats = QueryStats::build(&q, &db).unwrap();
        let c = SystemCondition::build(&stats);
        assert_eq!(c.tokens().len(), COND_TOKENS);
        let n_real = 3 + 7;
        assert!(c.tokens()[n_real..].iter().all(|t| *t == [0.0; COND_DIM]));
        let d = c.with_hit_ratio(1, 0.123);
        let diff: Vec<usize> = (0..COND_TOKENS).filter(|i| c.tokens()[*i] != d.tokens()[*i]).collect();
        assert_eq!(diff, vec![1]);
    }
}
