//! Relational statements: SELECT planning and execution, DML and DDL.

use std::collections::HashMap;

use super::plan::PhysicalPlan;
use super::{ExecError, ResultSet};
use crate::sql::{bind, bind_predicate, BinOp, BoundExpr, ColumnDef, Expr, Scope, Select, SelectItem, SqlError};
use crate::storage::{Catalog, Column, DataType, Schema, Tuple, Value, ValueKey};

/// Splits `on` into one equality between a left column and a right column
/// plus whatever remains.
fn equi_key(on: &Expr, left: &Scope, right: &Scope) -> Option<(usize, usize, Vec<Expr>)> {
    let conj = on.conjuncts();
    for (i, c) in conj.iter().enumerate() {
        let Expr::Binary { op: BinOp::Eq, left: a, right: b } = c else {
            continue;
        };
        let (Expr::Column(ca), Expr::Column(cb)) = (a.as_ref(), b.as_ref()) else {
            continue;
        };
        let pair = match (left.resolve(ca), right.resolve(cb), left.resolve(cb), right.resolve(ca)) {
            (Ok((l, lt)), Ok((r, rt)), _, _) if comparable(lt, rt) => Some((l, r)),
            (_, _, Ok((l, lt)), Ok((r, rt))) if comparable(lt, rt) => Some((l, r)),
            _ => None,
        };
        if let Some((l, r)) = pair {
            let rest = conj.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, e)| (*e).clone()).collect();
            return Some((l, r, rest));
        }
    }
    None
}

fn comparable(a: DataType, b: DataType) -> bool {
    a == b || (a.is_numeric() && b.is_numeric())
}

fn and_all(mut es: Vec<Expr>) -> Option<Expr> {
    let first = es.pop()?;
    Some(es.into_iter().rev().fold(first, |acc, e| Expr::binary(BinOp::And, e, acc)))
}

/// Join key in a form that matches across Int and Float.
fn join_key(v: &Value) -> Option<ValueKey> {
    match v {
        Value::Int(i) => Value::Float(*i as f64).key(),
        v => v.key(),
    }
}

/// Builds the operator tree and output column names for a SELECT.
pub fn plan_select(s: &Select, catalog: &Catalog) -> Result<(PhysicalPlan, Vec<String>), ExecError> {
    let mut scope = Scope::new();
    let mut plan: Option<PhysicalPlan> = None;
    let mut seen = Vec::new();
    let mut add_binding = |b: &str| -> Result<(), ExecError> {
        if seen.iter().any(|s: &String| s == b) {
            return Err(SqlError::AmbiguousColumn(format!("table binding {b} used twice")).into());
        }
        seen.push(b.to_string());
        Ok(())
    };
    let single = s.from.len() == 1 && s.joins.is_empty();
    for t in &s.from {
        let table = catalog.table(&t.name).map_err(|_| SqlError::UnknownTable(t.name.clone()))?;
        add_binding(t.binding())?;
        let scan = PhysicalPlan::Scan { table: t.name.clone(), filter: None };
        scope.push(t.binding(), table.schema().clone());
        plan = Some(match plan {
            None => scan,
            Some(p) => PhysicalPlan::NestedLoopJoin {
                left: Box::new(p),
                right: Box::new(scan),
                on: BoundExpr::Literal(Value::Bool(true)),
            },
        });
    }
    let mut plan = plan.ok_or_else(|| ExecError::Unsupported("SELECT without FROM".into()))?;
    for (t, on) in &s.joins {
        let table = catalog.table(&t.name).map_err(|_| SqlError::UnknownTable(t.name.clone()))?;
        add_binding(t.binding())?;
        let right_scope = Scope::single(&Schema::new(t.binding(), table.schema().columns.clone()));
        let left_scope = scope.clone();
        scope.push(t.binding(), table.schema().clone());
        let right = Box::new(PhysicalPlan::Scan { table: t.name.clone(), filter: None });
        plan = match equi_key(on, &left_scope, &right_scope) {
            Some((left_key, right_key, rest)) => {
                let residual = and_all(rest).map(|e| bind_predicate(&e, &scope)).transpose()?;
                PhysicalPlan::HashJoin { left: Box::new(plan), right, left_key, right_key, residual }
            }
            None => PhysicalPlan::NestedLoopJoin { left: Box::new(plan), right, on: bind_predicate(on, &scope)? },
        };
    }
    if let Some(f) = &s.filter {
        let pred = bind_predicate(f, &scope)?;
        plan = match plan {
            PhysicalPlan::Scan { table, filter: None } if single => PhysicalPlan::Scan { table, filter: Some(pred) },
            p => PhysicalPlan::Filter { input: Box::new(p), predicate: pred },
        };
    }
    let mut exprs = Vec::new();
    let mut names = Vec::new();
    for item in &s.projection {
        match item {
            SelectItem::Wildcard => {
                for e in scope.entries() {
                    for (i, c) in e.schema.columns.iter().enumerate() {
                        exprs.push(BoundExpr::Column(e.offset + i));
                        names.push(c.name.clone());
                    }
                }
            }
            SelectItem::Expr { expr, alias } => {
                exprs.push(bind(expr, &scope)?.0);
                names.push(match (alias, expr) {
                    (Some(a), _) => a.clone(),
                    (None, Expr::Column(c)) => c.name.clone(),
                    (None, e) => e.to_string(),
                });
            }
        }
    }
    let identity = exprs.len() == scope.width() && exprs.iter().enumerate().all(|(i, e)| *e == BoundExpr::Column(i));
    if !identity {
        plan = PhysicalPlan::Project { input: Box::new(plan), exprs, names: names.clone() };
    }
    if let Some(n) = s.limit {
        plan = PhysicalPlan::Limit { input: Box::new(plan), n };
    }
    Ok((plan, names))
}

/// Evaluates a row-producing plan.
pub fn run(plan: &PhysicalPlan, catalog: &Catalog, scanned: &mut u64) -> Result<Vec<Tuple>, ExecError> {
    Ok(match plan {
        PhysicalPlan::Scan { table, filter } => {
            let t = catalog.table(table)?;
            let mut out = Vec::new();
            for r in t.scan() {
                let (_, row) = r?;
                *scanned += 1;
                if filter.as_ref().is_none_or(|f| f.matches(&row)) {
                    out.push(row);
                }
            }
            out
        }
        PhysicalPlan::InlineRows { rows } => rows.clone(),
        PhysicalPlan::Filter { input, predicate } => {
            run(input, catalog, scanned)?.into_iter().filter(|r| predicate.matches(r)).collect()
        }
        PhysicalPlan::Project { input, exprs, .. } => {
            run(input, catalog, scanned)?.into_iter().map(|r| exprs.iter().map(|e| e.eval(&r)).collect()).collect()
        }
        PhysicalPlan::HashJoin { left, right, left_key, right_key, residual } => {
            let build = run(right, catalog, scanned)?;
            let mut table: HashMap<ValueKey, Vec<&Tuple>> = HashMap::new();
            for r in &build {
                if let Some(k) = join_key(&r[*right_key]) {
                    table.entry(k).or_default().push(r);
                }
            }
            let mut out = Vec::new();
            for l in run(left, catalog, scanned)? {
                let Some(matches) = join_key(&l[*left_key]).and_then(|k| table.get(&k)) else {
                    continue;
                };
                for r in matches {
                    let mut row = l.clone();
                    row.extend(r.iter().cloned());
                    if residual.as_ref().is_none_or(|p| p.matches(&row)) {
                        out.push(row);
                    }
                }
            }
            out
        }
        PhysicalPlan::NestedLoopJoin { left, right, on } => {
            let inner = run(right, catalog, scanned)?;
            let mut out = Vec::new();
            for l in run(left, catalog, scanned)? {
                for r in &inner {
                    let mut row = l.clone();
                    row.extend(r.iter().cloned());
                    if on.matches(&row) {
                        out.push(row);
                    }
                }
            }
            out
        }
        PhysicalPlan::Limit { input, n } => {
            let mut rows = run(input, catalog, scanned)?;
            rows.truncate((*n).min(usize::MAX as u64) as usize);
            rows
        }
        p => return Err(ExecError::Unsupported(format!("{} does not produce rows", p.name()))),
    })
}

pub fn select(s: &Select, catalog: &Catalog, scanned: &mut u64) -> Result<ResultSet, ExecError> {
    let (plan, columns) = plan_select(s, catalog)?;
    Ok(ResultSet { columns, rows: run(&plan, catalog, scanned)? })
}

pub fn create_schema(name: &str, columns: &[ColumnDef]) -> Schema {
    Schema::new(
        name,
        columns
            .iter()
            .map(|c| Column { name: c.name.clone(), ty: c.ty, unique: c.unique, nullable: c.nullable })
            .collect(),
    )
}

fn constant(e: &Expr) -> Result<Value, ExecError> {
    let (b, _) = bind(e, &Scope::new())?;
    Ok(b.eval(&[]))
}

fn coerce(v: Value, c: &Column) -> Result<Value, ExecError> {
    let shown = v.to_string();
    v.coerce(c.ty).ok_or_else(|| {
        SqlError::TypeMismatch(format!("{shown} does not fit {} column {}", c.ty.sql_name(), c.name)).into()
    })
}

/// Materializes INSERT rows in schema order.
pub fn insert_rows(schema: &Schema, columns: Option<&[String]>, rows: &[Vec<Expr>]) -> Result<Vec<Tuple>, ExecError> {
    let positions: Vec<usize> = match columns {
        None => (0..schema.arity()).collect(),
        Some(cols) => cols
            .iter()
            .map(|c| {
                schema.column_index(c).ok_or_else(|| SqlError::UnknownColumn(format!("{}.{c}", schema.table_name)))
            })
            .collect::<Result<_, _>>()?,
    };
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != positions.len() {
                return Err(SqlError::ArityMismatch { row: i + 1, expected: positions.len(), actual: row.len() }.into());
            }
            let mut t = vec![Value::Null; schema.arity()];
            for (e, &p) in row.iter().zip(&positions) {
                t[p] = coerce(constant(e)?, &schema.columns[p])?;
            }
            Ok(t)
        })
        .collect()
}

pub fn bind_assignments(schema: &Schema, assignments: &[(String, Expr)]) -> Result<Vec<(usize, BoundExpr)>, ExecError> {
    let scope = Scope::single(schema);
    assignments
        .iter()
        .map(|(c, e)| {
            let i =
                schema.column_index(c).ok_or_else(|| SqlError::UnknownColumn(format!("{}.{c}", schema.table_name)))?;
            let (b, ty) = bind(e, &scope)?;
            if let Some(ty) = ty {
                if !comparable(ty, schema.columns[i].ty)
                    || (ty == DataType::Float64 && schema.columns[i].ty == DataType::Int64)
                {
                    return Err(SqlError::TypeMismatch(format!(
                        "cannot assign {} to {} column {c}",
                        ty.sql_name(),
                        schema.columns[i].ty.sql_name()
                    ))
                    .into());
                }
            }
            Ok((i, b))
        })
        .collect()
}

pub fn apply_assignments(schema: &Schema, row: &Tuple, assignments: &[(usize, BoundExpr)]) -> Result<Tuple, ExecError> {
    let mut new = row.clone();
    for (i, e) in assignments {
        new[*i] = coerce(e.eval(row), &schema.columns[*i])?;
    }
    Ok(new)
}
