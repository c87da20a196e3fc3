//! Left-deep plan enumeration, cardinality estimates, node features, and
//! exact execution cost.

use std::collections::HashMap;
use std::fmt;

use super::data::{ColRef, QoDb, Query, QueryStats, Relation};
use super::QoError;

pub const MAX_TABLES: usize = 6;
pub const MAX_CANDIDATES: usize = 64;
pub const NODE_DIM: usize = 8;
/// `ln(1 + rows)` is divided by this before entering node features.
const LOG_ROWS_SCALE: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// Query table index; the table's range filters are pushed into it.
    Scan { table: usize, filters: usize },
    /// Indices into [`Query::joins`] evaluated at this join; empty for a
    /// cross product.
    HashJoin { preds: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanNode {
    pub kind: NodeKind,
    /// Child node indices for joins; left is the probe side.
    pub children: Option<(usize, usize)>,
    /// Histogram-based estimate.
    pub est_rows: f64,
    pub est_selectivity: f64,
    /// Estimate under the textbook `1 / max(ndv)` join rule.
    pub textbook_rows: f64,
    pub depth: usize,
    pub is_left: bool,
}

/// Left-deep tree stored in postorder; the root is last.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanTree {
    pub order: Vec<usize>,
    pub nodes: Vec<PlanNode>,
}

impl PlanTree {
    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Sum of rows produced by every join under the textbook estimator,
    /// the classic intermediate-result cost.
    pub fn estimated_cost(&self) -> f64 {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::HashJoin { .. })).map(|n| n.textbook_rows).sum()
    }

    /// Join order label such as `t1>t0>t2`.
    pub fn label(&self, q: &Query) -> String {
        self.order.iter().map(|t| q.tables[*t].as_str()).collect::<Vec<_>>().join(">")
    }

    /// One row of [`NODE_DIM`] features per node, in postorder. The last
    /// slot identifies the scanned table so scans can be matched with the
    /// condition tokens of that table; joins leave it zero.
    pub fn features(&self) -> Vec<[f64; NODE_DIM]> {
        let max_depth = self.nodes.iter().map(|n| n.depth).max().unwrap_or(0).max(1) as f64;
        self.nodes
            .iter()
            .map(|n| {
                let (scan, join, fan_in, code) = match &n.kind {
                    NodeKind::Scan { table, filters } => (1.0, 0.0, *filters as f64, table_code(*table)),
                    NodeKind::HashJoin { preds } => (0.0, 1.0, preds.len() as f64, 0.0),
                };
                [
                    scan,
                    join,
                    (1.0 + n.est_rows).ln() / LOG_ROWS_SCALE,
                    n.est_selectivity,
                    n.depth as f64 / max_depth,
                    n.is_left as u8 as f64,
                    fan_in / 4.0,
                    code,
                ]
            })
            .collect()
    }
}

/// Query table position mapped into `(0, 1]`.
fn table_code(t: usize) -> f64 {
    (t + 1) as f64 / MAX_TABLES as f64
}

impl fmt::Display for PlanTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(t: &PlanTree, i: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match (&t.nodes[i].kind, t.nodes[i].children) {
                (NodeKind::Scan { table, .. }, _) => write!(f, "t{table}"),
                (_, Some((l, r))) => {
                    write!(f, "(")?;
                    go(t, l, f)?;
                    write!(f, " JOIN ")?;
                    go(t, r, f)?;
                    write!(f, ")")
                }
                _ => unreachable!("joins have children"),
            }
        }
        go(self, self.root(), f)
    }
}

/// Candidate plans of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub plans: Vec<PlanTree>,
    /// The join graph is disconnected, so every plan has a cross product.
    pub cross_product_required: bool,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Estimated rows of a table after its pushed filters, assuming
/// independent attributes.
pub fn scan_estimate(q: &Query, stats: &QueryStats, t: usize) -> (f64, f64) {
    let sel: f64 =
        q.filters.iter().filter(|f| f.col.table == t).map(|f| stats.column(f.col).range_fraction(f.lo, f.hi)).product();
    (stats.tables[t].rows as f64 * sel, sel)
}

/// Textbook equi-join selectivity `1 / max(ndv)`.
fn textbook_selectivity(stats: &QueryStats, a: ColRef, b: ColRef) -> f64 {
    1.0 / stats.column(a).distinct.max(stats.column(b).distinct).max(1) as f64
}

/// Builds the annotated left-deep tree for one join order.
pub fn build_plan(q: &Query, stats: &QueryStats, order: &[usize]) -> PlanTree {
    let n = order.len();
    let mut nodes = Vec::with_capacity(2 * n - 1);
    let filters = |t: usize| q.filters.iter().filter(|f| f.col.table == t).count();
    let scan = |t: usize, depth: usize, is_left: bool| {
        let (rows, sel) = scan_estimate(q, stats, t);
        PlanNode {
            kind: NodeKind::Scan { table: t, filters: filters(t) },
            children: None,
            est_rows: rows,
            est_selectivity: sel,
            textbook_rows: rows,
            depth,
            is_left,
        }
    };
    // The first scan sits at depth n - 1 (or 0 when alone); join i, built
    // after adding order[i], sits at depth n - 1 - i.
    nodes.push(scan(order[0], n - 1, n > 1));
    let mut left = 0;
    let mut joined = vec![order[0]];
    for (i, &t) in order.iter().enumerate().skip(1) {
        let depth = n - 1 - i;
        nodes.push(scan(t, depth + 1, false));
        let right = nodes.len() - 1;
        let preds: Vec<usize> = q
            .joins
            .iter()
            .enumerate()
            .filter(|(_, j)| {
                (joined.contains(&j.left.table) && j.right.table == t)
                    || (joined.contains(&j.right.table) && j.left.table == t)
            })
            .map(|(k, _)| k)
            .collect();
        let pairs = || preds.iter().map(|k| (q.joins[*k].left, q.joins[*k].right));
        let sel: f64 = pairs().map(|(a, b)| stats.column(a).join_selectivity(stats.column(b))).product();
        let textbook: f64 = pairs().map(|(a, b)| textbook_selectivity(stats, a, b)).product();
        let (l, r) = (&nodes[left], &nodes[right]);
        let (rows, textbook_rows) = (l.est_rows * r.est_rows * sel, l.textbook_rows * r.textbook_rows * textbook);
        nodes.push(PlanNode {
            kind: NodeKind::HashJoin { preds },
            children: Some((left, right)),
            est_rows: rows,
            est_selectivity: sel,
            textbook_rows,
            depth,
            is_left: depth > 0,
        });
        left = nodes.len() - 1;
        joined.push(t);
    }
    PlanTree { order: order.to_vec(), nodes }
}

/// All left-deep join orders in lexicographic order of table positions.
/// Beyond [`MAX_CANDIDATES`] orders, the ones with the smallest estimated
/// intermediate results are kept, still in lexicographic order.
pub fn enumerate_plans(q: &Query, stats: &QueryStats) -> Result<Enumeration, QoError> {
    let n = q.tables.len();
    if n == 0 {
        return Err(QoError::Unsupported("query references no tables".into()));
    }
    if n > MAX_TABLES {
        return Err(QoError::TooManyTables(n));
    }
    let mut plans: Vec<PlanTree> = permutations(n).iter().map(|o| build_plan(q, stats, o)).collect();
    if plans.len() > MAX_CANDIDATES {
        let mut idx: Vec<usize> = (0..plans.len()).collect();
        idx.sort_by(|a, b| plans[*a].estimated_cost().total_cmp(&plans[*b].estimated_cost()));
        let mut keep = idx[..MAX_CANDIDATES].to_vec();
        keep.sort_unstable();
        let mut all: Vec<Option<PlanTree>> = plans.into_iter().map(Some).collect();
        plans = keep.into_iter().map(|i| all[i].take().expect("kept once")).collect();
    }
    Ok(Enumeration { plans, cross_product_required: !q.is_connected() })
}

/// Index of the plan with the smallest estimated cost; ties go to the first.
pub fn heuristic_choice(plans: &[PlanTree]) -> usize {
    let mut best = 0;
    for (i, p) in plans.iter().enumerate() {
        if p.estimated_cost() < plans[best].estimated_cost() {
            best = i;
        }
    }
    best
}

fn passes(q: &Query, rel: &Relation, t: usize, row: usize) -> bool {
    q.filters.iter().filter(|f| f.col.table == t).all(|f| {
        let v = rel.data[f.col.column][row];
        f.lo <= v && v <= f.hi
    })
}

/// Exact result cardinality of every subset of the query's tables joined
/// with all predicates among them. Lets plan costs be computed without
/// materializing intermediate results.
#[derive(Debug, Clone)]
pub struct TrueCards {
    base_rows: Vec<f64>,
    cards: HashMap<u64, f64>,
}

impl TrueCards {
    pub fn compute(q: &Query, db: &QoDb) -> Result<Self, QoError> {
        let n = q.tables.len();
        if n > MAX_TABLES {
            return Err(QoError::TooManyTables(n));
        }
        let rels: Vec<&Relation> = q.tables.iter().map(|t| db.relation(t)).collect::<Result<_, _>>()?;
        let rows: Vec<Vec<usize>> =
            (0..n).map(|t| (0..rels[t].rows()).filter(|r| passes(q, rels[t], t, *r)).collect()).collect();
        let mut cards = HashMap::new();
        for mask in 1u64..(1 << n) {
            let tables: Vec<usize> = (0..n).filter(|t| mask >> t & 1 == 1).collect();
            let mut total = 1.0;
            for comp in components(q, &tables) {
                total *= component_card(q, &rels, &rows, &comp)?;
            }
            cards.insert(mask, total);
        }
        Ok(Self { base_rows: rels.iter().map(|r| r.rows() as f64).collect(), cards })
    }

    pub fn card(&self, tables: &[usize]) -> f64 {
        self.cards[&tables.iter().fold(0u64, |m, t| m | 1 << t)]
    }

    /// Tuples touched: every scanned row, plus probe input, build input and
    /// output of every hash join.
    pub fn cost(&self, plan: &PlanTree) -> f64 {
        let mut cost: f64 = plan.order.iter().map(|t| self.base_rows[*t]).sum();
        for i in 1..plan.order.len() {
            let (prefix, t) = (&plan.order[..i], plan.order[i]);
            let out = &plan.order[..=i];
            cost += self.card(prefix) + self.card(&[t]) + self.card(out);
        }
        cost
    }
}

/// Connected components of the join graph restricted to `tables`.
fn components(q: &Query, tables: &[usize]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = tables.to_vec();
    let mut out = Vec::new();
    while let Some(s) = left.pop() {
        let mut comp = vec![s];
        let mut i = 0;
        while i < comp.len() {
            let t = comp[i];
            for j in &q.joins {
                for (a, b) in [(j.left.table, j.right.table), (j.right.table, j.left.table)] {
                    if a == t {
                        if let Some(p) = left.iter().position(|x| *x == b) {
                            comp.push(left.swap_remove(p));
                        }
                    }
                }
            }
            i += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Exact cardinality of a connected component. Tree-shaped components are
/// counted by passing per-key weight sums toward a root; cyclic ones are
/// materialized.
fn component_card(q: &Query, rels: &[&Relation], rows: &[Vec<usize>], comp: &[usize]) -> Result<f64, QoError> {
    if comp.len() == 1 {
        return Ok(rows[comp[0]].len() as f64);
    }
    // Group predicates by table pair; a pair with several predicates joins
    // on a composite key.
    let mut edges: Vec<((usize, usize), Vec<(ColRef, ColRef)>)> = Vec::new();
    for j in &q.joins {
        let (a, b) = (j.left.table, j.right.table);
        if !comp.contains(&a) || !comp.contains(&b) {
            continue;
        }
        let (key, pair) = if a < b { ((a, b), (j.left, j.right)) } else { ((b, a), (j.right, j.left)) };
        match edges.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(pair),
            None => edges.push((key, vec![pair])),
        }
    }
    if edges.len() != comp.len() - 1 {
        return materialized_card(q, rels, rows, comp);
    }
    let root = comp[0];
    Ok(subtree_weights(rels, rows, &edges, root, None).iter().sum())
}

fn key_of(rel: &Relation, row: usize, cols: &[usize]) -> Vec<i64> {
    cols.iter().map(|c| rel.data[*c][row]).collect()
}

/// Per-row count of matching combinations in the subtree rooted at `t`.
fn subtree_weights(
    rels: &[&Relation],
    rows: &[Vec<usize>],
    edges: &[((usize, usize), Vec<(ColRef, ColRef)>)],
    t: usize,
    parent: Option<usize>,
) -> Vec<f64> {
    let mut w = vec![1.0; rows[t].len()];
    for ((a, b), preds) in edges {
        let child = if *a == t {
            *b
        } else if *b == t {
            *a
        } else {
            continue;
        };
        if Some(child) == parent {
            continue;
        }
        let cw = subtree_weights(rels, rows, edges, child, Some(t));
        let (mine, theirs): (Vec<usize>, Vec<usize>) =
            preds.iter().map(|(x, y)| if x.table == t { (x.column, y.column) } else { (y.column, x.column) }).unzip();
        let mut sums: HashMap<Vec<i64>, f64> = HashMap::new();
        for (i, r) in rows[child].iter().enumerate() {
            *sums.entry(key_of(rels[child], *r, &theirs)).or_default() += cw[i];
        }
        for (i, r) in rows[t].iter().enumerate() {
            w[i] *= sums.get(&key_of(rels[t], *r, &mine)).copied().unwrap_or(0.0);
        }
    }
    w
}

fn materialized_card(q: &Query, rels: &[&Relation], rows: &[Vec<usize>], comp: &[usize]) -> Result<f64, QoError> {
    let mut sub = q.clone();
    sub.joins.retain(|j| comp.contains(&j.left.table) && comp.contains(&j.right.table));
    let mut acc: Vec<Vec<(usize, usize)>> = rows[comp[0]].iter().map(|r| vec![(comp[0], *r)]).collect();
    for &t in &comp[1..] {
        let mut next = Vec::new();
        for tuple in &acc {
            for &r in &rows[t] {
                let ok = sub.joins.iter().all(|j| {
                    let side = |c: ColRef| {
                        if c.table == t {
                            Some(rels[t].data[c.column][r])
                        } else {
                            tuple.iter().find(|(x, _)| *x == c.table).map(|(x, rr)| rels[*x].data[c.column][*rr])
                        }
                    };
                    match (side(j.left), side(j.right)) {
                        (Some(a), Some(b)) => a == b,
                        _ => true,
                    }
                });
                if ok {
                    let mut n = tuple.clone();
                    n.push((t, r));
                    next.push(n);
                }
            }
        }
        if next.len() > 50_000_000 {
            return Err(QoError::Unsupported("cyclic join result too large to count".into()));
        }
        acc = next;
    }
    Ok(acc.len() as f64)
}

/// Result of running a plan with real hash joins.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    /// Output rows with columns in query table order, sorted, so equal
    /// multisets compare equal.
    pub rows: Vec<Vec<i64>>,
    pub tuples_touched: u64,
}

/// Executes `plan`. Intermediate rows are materialized, so this is meant
/// for small instances.
pub fn execute(q: &Query, db: &QoDb, plan: &PlanTree) -> Result<Execution, QoError> {
    let rels: Vec<&Relation> = q.tables.iter().map(|t| db.relation(t)).collect::<Result<_, _>>()?;
    let scan = |t: usize| -> Vec<usize> { (0..rels[t].rows()).filter(|r| passes(q, rels[t], t, *r)).collect() };
    // An intermediate row holds one row id per joined table, in join order.
    let first = plan.order[0];
    let mut touched: u64 = plan.order.iter().map(|t| rels[*t].rows() as u64).sum();
    let mut acc: Vec<Vec<usize>> = scan(first).into_iter().map(|r| vec![r]).collect();
    let mut joined = vec![first];
    for &t in &plan.order[1..] {
        let build = scan(t);
        let preds: Vec<(usize, usize, usize)> = q
            .joins
            .iter()
            .filter_map(|j| {
                let other = |a: ColRef, b: ColRef| {
                    (b.table == t)
                        .then(|| joined.iter().position(|x| *x == a.table).map(|p| (p, a.column, b.column)))?
                };
                other(j.left, j.right).or_else(|| other(j.right, j.left))
            })
            .collect();
        let mut table: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for &r in &build {
            table.entry(preds.iter().map(|(_, _, c)| rels[t].data[*c][r]).collect()).or_default().push(r);
        }
        let mut next = Vec::new();
        for row in &acc {
            let key: Vec<i64> = preds.iter().map(|(p, c, _)| rels[joined[*p]].data[*c][row[*p]]).collect();
            if let Some(ms) = table.get(&key) {
                for &m in ms {
                    let mut n = row.clone();
                    n.push(m);
                    next.push(n);
                }
            }
        }
        touched += (acc.len() + build.len() + next.len()) as u64;
        acc = next;
        joined.push(t);
    }
    let mut rows: Vec<Vec<i64>> = acc
        .iter()
        .map(|ids| {
            let mut out = Vec::new();
            for t in 0..q.tables.len() {
                let p = joined.iter().position(|x| *x == t).expect("every table joined");
                out.extend(rels[t].data.iter().map(|c| c[ids[p]]));
            }
            out
        })
        .collect();
    rows.sort_unstable();
    Ok(Execution { rows, tuples_touched: touched })
}
