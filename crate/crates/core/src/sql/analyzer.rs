use std::collections::HashSet;
use std::sync::Arc;

use super::ast::{BinOp, ColumnRef, Expr, FeatureList, PredictStatement, TaskKind};
use super::SqlError;
use crate::storage::{Catalog, DataType, Schema, Table, Tuple, Value, ValueKey};

/// Upper bound on distinct target values for a classification task.
pub const MAX_CLASSES: usize = 64;

/// TEXT columns whose distinct/non-null ratio exceeds this are not features.
pub const TEXT_DISTINCT_RATIO: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct ScopeEntry {
    pub binding: String,
    pub schema: Schema,
    /// Position of this table's first column in the concatenated row.
    pub offset: usize,
}

/// Tables visible to an expression; rows are the concatenation of their
/// tuples in scope order.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    entries: Vec<ScopeEntry>,
}

impl Scope {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(schema: &Schema) -> Self {
        let mut s = Self::new();
        s.push(&schema.table_name, schema.clone());
        s
    }

    pub fn push(&mut self, binding: &str, schema: Schema) {
        let offset = self.width();
        self.entries.push(ScopeEntry { binding: binding.to_string(), schema, offset });
    }

    pub fn entries(&self) -> &[ScopeEntry] {
        &self.entries
    }

    pub fn width(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.schema.arity())
    }

    /// Absolute row position and type of a column reference.
    pub fn resolve(&self, c: &ColumnRef) -> Result<(usize, DataType), SqlError> {
        let mut found = None;
        for e in &self.entries {
            if c.table.as_ref().is_some_and(|t| *t != e.binding) {
                continue;
            }
            if let Some(i) = e.schema.column_index(&c.name) {
                if found.is_some() {
                    return Err(SqlError::AmbiguousColumn(c.to_string()));
                }
                found = Some((e.offset + i, e.schema.columns[i].ty));
            }
        }
        if found.is_none() {
            if let Some(t) = &c.table {
                if !self.entries.iter().any(|e| e.binding == *t) {
                    return Err(SqlError::UnknownTable(t.clone()));
                }
            }
        }
        found.ok_or_else(|| SqlError::UnknownColumn(c.to_string()))
    }
}

/// An expression with column references replaced by row positions.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundExpr {
    Literal(Value),
    Column(usize),
    Binary { op: BinOp, left: Box<BoundExpr>, right: Box<BoundExpr> },
    Not(Box<BoundExpr>),
    Neg(Box<BoundExpr>),
    IsNull { expr: Box<BoundExpr>, negated: bool },
}

/// Binds `expr` against `scope` and type-checks it. The returned type is
/// `None` for an untyped NULL.
pub fn bind(expr: &Expr, scope: &Scope) -> Result<(BoundExpr, Option<DataType>), SqlError> {
    Ok(match expr {
        Expr::Literal(v) => (BoundExpr::Literal(v.clone()), v.data_type()),
        Expr::Column(c) => {
            let (i, ty) = scope.resolve(c)?;
            (BoundExpr::Column(i), Some(ty))
        }
        Expr::Binary { op, left, right } => {
            let (l, lt) = bind(left, scope)?;
            let (r, rt) = bind(right, scope)?;
            let ty = binary_type(*op, lt, rt).ok_or_else(|| {
                SqlError::TypeMismatch(format!("{} {} {}", type_name(lt), op.symbol(), type_name(rt)))
            })?;
            (BoundExpr::Binary { op: *op, left: Box::new(l), right: Box::new(r) }, ty)
        }
        Expr::Not(e) => {
            let (b, t) = bind(e, scope)?;
            if !matches!(t, None | Some(DataType::Bool)) {
                return Err(SqlError::TypeMismatch(format!("NOT {}", type_name(t))));
            }
            (BoundExpr::Not(Box::new(b)), Some(DataType::Bool))
        }
        Expr::Neg(e) => {
            let (b, t) = bind(e, scope)?;
            if !t.is_none_or(|t| t.is_numeric()) {
                return Err(SqlError::TypeMismatch(format!("- {}", type_name(t))));
            }
            (BoundExpr::Neg(Box::new(b)), t)
        }
        Expr::IsNull { expr, negated } => {
            let (b, _) = bind(expr, scope)?;
            (BoundExpr::IsNull { expr: Box::new(b), negated: *negated }, Some(DataType::Bool))
        }
    })
}

/// Binds a predicate; it must be boolean-typed.
pub fn bind_predicate(expr: &Expr, scope: &Scope) -> Result<BoundExpr, SqlError> {
    let (b, t) = bind(expr, scope)?;
    if !matches!(t, None | Some(DataType::Bool)) {
        return Err(SqlError::TypeMismatch(format!("predicate {expr} is {}", type_name(t))));
    }
    Ok(b)
}

fn type_name(t: Option<DataType>) -> &'static str {
    t.map_or("NULL", |t| t.sql_name())
}

/// Result type of a binary operator, or `None` if the operands don't fit.
/// The inner `None` is the untyped NULL.
fn binary_type(op: BinOp, l: Option<DataType>, r: Option<DataType>) -> Option<Option<DataType>> {
    use DataType::*;
    match op {
        BinOp::And | BinOp::Or => {
            (matches!(l, None | Some(Bool)) && matches!(r, None | Some(Bool))).then_some(Some(Bool))
        }
        _ if op.is_comparison() => {
            let ok = match (l, r) {
                (None, _) | (_, None) => true,
                (Some(a), Some(b)) => a == b || (a.is_numeric() && b.is_numeric()),
            };
            ok.then_some(Some(Bool))
        }
        _ => match (l, r) {
            (None, None) => Some(None),
            (None, Some(t)) | (Some(t), None) => t.is_numeric().then_some(Some(t)),
            (Some(Int64), Some(Int64)) => Some(Some(Int64)),
            (Some(a), Some(b)) => (a.is_numeric() && b.is_numeric()).then_some(Some(Float64)),
        },
    }
}

impl BoundExpr {
    /// Evaluates with SQL three-valued logic; NULL propagates through
    /// arithmetic and comparisons.
    pub fn eval(&self, row: &[Value]) -> Value {
        match self {
            BoundExpr::Literal(v) => v.clone(),
            BoundExpr::Column(i) => row[*i].clone(),
            BoundExpr::Not(e) => match e.eval(row) {
                Value::Bool(b) => Value::Bool(!b),
                _ => Value::Null,
            },
            BoundExpr::Neg(e) => match e.eval(row) {
                Value::Int(v) => v.checked_neg().map_or(Value::Float(-(v as f64)), Value::Int),
                Value::Float(v) => Value::Float(-v),
                _ => Value::Null,
            },
            BoundExpr::IsNull { expr, negated } => Value::Bool(expr.eval(row).is_null() != *negated),
            BoundExpr::Binary { op: BinOp::And, left, right } => {
                match (left.eval(row).as_bool(), right.eval(row).as_bool()) {
                    (Some(false), _) | (_, Some(false)) => Value::Bool(false),
                    (Some(true), Some(true)) => Value::Bool(true),
                    _ => Value::Null,
                }
            }
            BoundExpr::Binary { op: BinOp::Or, left, right } => {
                match (left.eval(row).as_bool(), right.eval(row).as_bool()) {
                    (Some(true), _) | (_, Some(true)) => Value::Bool(true),
                    (Some(false), Some(false)) => Value::Bool(false),
                    _ => Value::Null,
                }
            }
            BoundExpr::Binary { op, left, right } => {
                let (l, r) = (left.eval(row), right.eval(row));
                if op.is_comparison() {
                    use std::cmp::Ordering::*;
                    return match l.sql_cmp(&r) {
                        None => Value::Null,
                        Some(o) => Value::Bool(match op {
                            BinOp::Eq => o == Equal,
                            BinOp::NotEq => o != Equal,
                            BinOp::Lt => o == Less,
                            BinOp::LtEq => o != Greater,
                            BinOp::Gt => o == Greater,
                            _ => o != Less,
                        }),
                    };
                }
                arith(*op, &l, &r)
            }
        }
    }

    /// True only when the predicate evaluates to TRUE.
    pub fn matches(&self, row: &[Value]) -> bool {
        self.eval(row) == Value::Bool(true)
    }

    /// Row positions referenced, in first-use order.
    pub fn columns(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.walk(&mut out);
        out
    }

    fn walk(&self, out: &mut Vec<usize>) {
        match self {
            BoundExpr::Literal(_) => {}
            BoundExpr::Column(i) => {
                if !out.contains(i) {
                    out.push(*i)
                }
            }
            BoundExpr::Binary { left, right, .. } => {
                left.walk(out);
                right.walk(out);
            }
            BoundExpr::Not(e) | BoundExpr::Neg(e) | BoundExpr::IsNull { expr: e, .. } => e.walk(out),
        }
    }

    /// Rewrites column positions through `map`.
    pub fn remap(&self, map: &dyn Fn(usize) -> usize) -> BoundExpr {
        match self {
            BoundExpr::Literal(v) => BoundExpr::Literal(v.clone()),
            BoundExpr::Column(i) => BoundExpr::Column(map(*i)),
            BoundExpr::Binary { op, left, right } => {
                BoundExpr::Binary { op: *op, left: Box::new(left.remap(map)), right: Box::new(right.remap(map)) }
            }
            BoundExpr::Not(e) => BoundExpr::Not(Box::new(e.remap(map))),
            BoundExpr::Neg(e) => BoundExpr::Neg(Box::new(e.remap(map))),
            BoundExpr::IsNull { expr, negated } => {
                BoundExpr::IsNull { expr: Box::new(expr.remap(map)), negated: *negated }
            }
        }
    }
}

fn arith(op: BinOp, l: &Value, r: &Value) -> Value {
    if let (Value::Int(a), Value::Int(b)) = (l, r) {
        let exact = match op {
            BinOp::Add => a.checked_add(*b),
            BinOp::Sub => a.checked_sub(*b),
            BinOp::Mul => a.checked_mul(*b),
            _ => {
                if *b == 0 {
                    return Value::Null;
                }
                a.checked_div(*b)
            }
        };
        if let Some(v) = exact {
            return Value::Int(v);
        }
    }
    let (Some(a), Some(b)) = (l.as_f64(), r.as_f64()) else {
        return Value::Null;
    };
    if matches!(l, Value::Bool(_)) || matches!(r, Value::Bool(_)) {
        return Value::Null;
    }
    match op {
        BinOp::Add => Value::Float(a + b),
        BinOp::Sub => Value::Float(a - b),
        BinOp::Mul => Value::Float(a * b),
        _ if b == 0.0 => Value::Null,
        _ => Value::Float(a / b),
    }
}

/// A PREDICT statement bound to the catalog.
#[derive(Debug, Clone)]
pub struct ResolvedPredict {
    pub task: TaskKind,
    pub table: Arc<Table>,
    pub target: String,
    pub target_index: usize,
    pub target_type: DataType,
    /// Expanded features in catalog order (or as listed).
    pub features: Vec<String>,
    pub feature_indices: Vec<usize>,
    pub feature_types: Vec<DataType>,
    pub infer_filter: Option<BoundExpr>,
    pub train_filter: Option<BoundExpr>,
    /// Inference rows in feature order, coerced to the feature types.
    pub inline_rows: Option<Vec<Tuple>>,
}

struct ColumnProfile {
    non_null: usize,
    distinct: HashSet<ValueKey>,
}

/// Non-null and distinct counts of the requested columns over committed rows.
fn profile(table: &Arc<Table>, cols: &[usize]) -> Result<Vec<ColumnProfile>, SqlError> {
    let mut out: Vec<ColumnProfile> =
        cols.iter().map(|_| ColumnProfile { non_null: 0, distinct: HashSet::new() }).collect();
    if cols.is_empty() {
        return Ok(out);
    }
    for r in table.scan() {
        let (_, t) = r?;
        for (p, &c) in out.iter_mut().zip(cols) {
            if let Some(k) = t[c].key() {
                p.non_null += 1;
                p.distinct.insert(k);
            }
        }
    }
    Ok(out)
}

fn high_cardinality(p: &ColumnProfile) -> bool {
    p.non_null > 0 && p.distinct.len() as f64 / p.non_null as f64 > TEXT_DISTINCT_RATIO
}

/// Expands a feature list against `table`. `*` drops the target, unique
/// columns and high-cardinality TEXT; explicit lists keep their order.
pub fn expand_features(table: &Arc<Table>, target: usize, list: &FeatureList) -> Result<Vec<usize>, SqlError> {
    let schema = table.schema();
    let text_cols: Vec<usize> = (0..schema.arity()).filter(|&i| schema.columns[i].ty == DataType::Text).collect();
    let candidates: Vec<usize> = match list {
        FeatureList::All => (0..schema.arity()).filter(|&i| i != target && !schema.columns[i].unique).collect(),
        FeatureList::Columns(names) => {
            let mut v = Vec::with_capacity(names.len());
            for n in names {
                let i = schema
                    .column_index(n)
                    .ok_or_else(|| SqlError::UnknownColumn(format!("{}.{n}", schema.table_name)))?;
                if i == target {
                    return Err(SqlError::TargetInFeatures(n.clone()));
                }
                if v.contains(&i) {
                    return Err(SqlError::TypeMismatch(format!("feature {n} listed twice")));
                }
                v.push(i);
            }
            v
        }
    };
    let wanted: Vec<usize> = text_cols.into_iter().filter(|c| candidates.contains(c)).collect();
    let profiles = profile(table, &wanted)?;
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        let high = wanted.iter().position(|&w| w == c).is_some_and(|p| high_cardinality(&profiles[p]));
        match (high, list) {
            (false, _) => out.push(c),
            (true, FeatureList::All) => {}
            (true, FeatureList::Columns(_)) => {
                return Err(SqlError::HighCardinalityText(schema.columns[c].name.clone()));
            }
        }
    }
    if out.is_empty() {
        return Err(SqlError::EmptyFeatureSet(schema.table_name.clone()));
    }
    Ok(out)
}

pub fn analyze_predict(stmt: &PredictStatement, catalog: &Catalog) -> Result<ResolvedPredict, SqlError> {
    let table = catalog.table(&stmt.source_table).map_err(|_| SqlError::UnknownTable(stmt.source_table.clone()))?;
    let schema = table.schema();
    let target_index = schema
        .column_index(&stmt.target)
        .ok_or_else(|| SqlError::UnknownColumn(format!("{}.{}", schema.table_name, stmt.target)))?;
    let target_type = schema.columns[target_index].ty;

    match (&stmt.infer_predicate, &stmt.inline_rows) {
        (None, None) => return Err(SqlError::NoInferenceSet),
        (Some(_), Some(_)) => return Err(SqlError::AmbiguousInferenceSet),
        _ => {}
    }

    match stmt.task {
        TaskKind::Value if !target_type.is_numeric() => {
            return Err(SqlError::TypeMismatch(format!("regression target {} is {target_type}", stmt.target)));
        }
        TaskKind::Class => {
            let p = profile(&table, &[target_index])?;
            let distinct = p[0].distinct.len();
            if distinct > MAX_CLASSES {
                return Err(SqlError::TooManyClasses { column: stmt.target.clone(), distinct, max: MAX_CLASSES });
            }
        }
        _ => {}
    }

    let feature_indices = expand_features(&table, target_index, &stmt.train_features)?;
    let features = feature_indices.iter().map(|&i| schema.columns[i].name.clone()).collect();
    let feature_types: Vec<DataType> = feature_indices.iter().map(|&i| schema.columns[i].ty).collect();

    let scope = Scope::single(schema);
    let infer_filter = stmt.infer_predicate.as_ref().map(|e| bind_predicate(e, &scope)).transpose()?;
    let train_filter = stmt.train_predicate.as_ref().map(|e| bind_predicate(e, &scope)).transpose()?;

    let inline_rows = match &stmt.inline_rows {
        None => None,
        Some(rows) => {
            let mut out = Vec::with_capacity(rows.len());
            for (ri, row) in rows.iter().enumerate() {
                if row.len() != feature_types.len() {
                    return Err(SqlError::ArityMismatch { row: ri, expected: feature_types.len(), actual: row.len() });
                }
                let mut t = Vec::with_capacity(row.len());
                for (v, &ty) in row.iter().zip(&feature_types) {
                    let shown = v.to_string();
                    t.push(v.clone().coerce(ty).ok_or_else(|| {
                        SqlError::TypeMismatch(format!("VALUES row {ri}: {shown} does not fit {ty}"))
                    })?);
                }
                out.push(t);
            }
            Some(out)
        }
    };

    Ok(ResolvedPredict {
        task: stmt.task,
        target: schema.columns[target_index].name.clone(),
        table: table.clone(),
        target_index,
        target_type,
        features,
        feature_indices,
        feature_types,
        infer_filter,
        train_filter,
        inline_rows,
    })
}
