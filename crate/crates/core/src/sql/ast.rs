use std::fmt;

use crate::storage::{DataType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    And,
    Or,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Eq => "=",
            BinOp::NotEq => "<>",
            BinOp::Lt => "<",
            BinOp::LtEq => "<=",
            BinOp::Gt => ">",
            BinOp::GtEq => ">=",
            BinOp::And => "AND",
            BinOp::Or => "OR",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::NotEq | BinOp::Lt | BinOp::LtEq | BinOp::Gt | BinOp::GtEq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnRef {
    pub table: Option<String>,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Value),
    Column(ColumnRef),
    Binary { op: BinOp, left: Box<Expr>, right: Box<Expr> },
    Not(Box<Expr>),
    Neg(Box<Expr>),
    IsNull { expr: Box<Expr>, negated: bool },
}

impl Expr {
    pub fn binary(op: BinOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary { op, left: Box::new(left), right: Box::new(right) }
    }

    pub fn column(name: &str) -> Expr {
        Expr::Column(ColumnRef { table: None, name: name.to_string() })
    }

    /// Splits a conjunction into its conjuncts.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        match self {
            Expr::Binary { op: BinOp::And, left, right } => {
                let mut v = left.conjuncts();
                v.extend(right.conjuncts());
                v
            }
            e => vec![e],
        }
    }

    pub fn columns(&self) -> Vec<&ColumnRef> {
        let mut out = Vec::new();
        self.walk_columns(&mut out);
        out
    }

    fn walk_columns<'a>(&'a self, out: &mut Vec<&'a ColumnRef>) {
        match self {
            Expr::Literal(_) => {}
            Expr::Column(c) => out.push(c),
            Expr::Binary { left, right, .. } => {
                left.walk_columns(out);
                right.walk_columns(out);
            }
            Expr::Not(e) | Expr::Neg(e) | Expr::IsNull { expr: e, .. } => e.walk_columns(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnDef {
    pub name: String,
    pub ty: DataType,
    pub unique: bool,
    pub nullable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRef {
    pub name: String,
    pub alias: Option<String>,
}

impl TableRef {
    pub fn binding(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Wildcard,
    Expr { expr: Expr, alias: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub projection: Vec<SelectItem>,
    pub from: Vec<TableRef>,
    /// `JOIN t ON expr` clauses, in order.
    pub joins: Vec<(TableRef, Expr)>,
    pub filter: Option<Expr>,
    pub limit: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum TaskKind {
    /// Regression (`PREDICT VALUE OF`).
    Value,
    /// Classification (`PREDICT CLASS OF`).
    Class,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureList {
    All,
    Columns(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictStatement {
    pub task: TaskKind,
    pub target: String,
    pub source_table: String,
    pub infer_predicate: Option<Expr>,
    pub train_features: FeatureList,
    pub train_predicate: Option<Expr>,
    pub inline_rows: Option<Vec<Vec<Value>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    CreateTable { name: String, columns: Vec<ColumnDef> },
    Insert { table: String, columns: Option<Vec<String>>, rows: Vec<Vec<Expr>> },
    Select(Select),
    Update { table: String, assignments: Vec<(String, Expr)>, filter: Option<Expr> },
    Delete { table: String, filter: Option<Expr> },
    Predict(PredictStatement),
}

const RESERVED: &[&str] = &[
    "select", "from", "where", "insert", "into", "values", "update", "set", "delete", "create", "table", "and", "or",
    "not", "null", "true", "false", "is", "join", "on", "as", "limit", "predict", "value", "class", "of", "train",
    "with", "unique", "primary", "key", "inner",
];

pub fn is_reserved(word: &str) -> bool {
    RESERVED.contains(&word)
}

/// Writes an identifier so that it lexes back to the same name.
pub struct Ident<'a>(pub &'a str);

impl fmt::Display for Ident<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0;
        let plain = s.chars().next().is_some_and(|c| c.is_ascii_lowercase() || c == '_')
            && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
            && !is_reserved(s);
        if plain {
            f.write_str(s)
        } else {
            write!(f, "\"{}\"", s.replace('"', "\"\""))
        }
    }
}

pub struct Literal<'a>(pub &'a Value);

impl fmt::Display for Literal<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Value::Null => f.write_str("NULL"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => {
                // Shortest round-trip form; it lexes back to a float only
                // when a dot or exponent is present.
                let s = format!("{v:?}");
                if s.contains(['.', 'e']) {
                    f.write_str(&s)
                } else {
                    write!(f, "{s}.0")
                }
            }
            Value::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
            Value::Bool(b) => f.write_str(if *b { "TRUE" } else { "FALSE" }),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(t) = &self.table {
            write!(f, "{}.", Ident(t))?;
        }
        write!(f, "{}", Ident(&self.name))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(v) => write!(f, "{}", Literal(v)),
            Expr::Column(c) => write!(f, "{c}"),
            Expr::Binary { op, left, right } => write!(f, "({left} {} {right})", op.symbol()),
            Expr::Not(e) => write!(f, "(NOT {e})"),
            Expr::Neg(e) => write!(f, "(- {e})"),
            Expr::IsNull { expr, negated } => {
                write!(f, "({expr} IS {}NULL)", if *negated { "NOT " } else { "" })
            }
        }
    }
}

fn comma<T>(
    f: &mut fmt::Formatter<'_>,
    items: &[T],
    mut each: impl FnMut(&mut fmt::Formatter<'_>, &T) -> fmt::Result,
) -> fmt::Result {
    for (i, it) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        each(f, it)?;
    }
    Ok(())
}

impl fmt::Display for TableRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", Ident(&self.name))?;
        if let Some(a) = &self.alias {
            write!(f, " AS {}", Ident(a))?;
        }
        Ok(())
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::CreateTable { name, columns } => {
                write!(f, "CREATE TABLE {} (", Ident(name))?;
                comma(f, columns, |f, c| {
                    write!(f, "{} {}", Ident(&c.name), c.ty)?;
                    if c.unique {
                        f.write_str(" UNIQUE")?;
                    }
                    if !c.nullable {
                        f.write_str(" NOT NULL")?;
                    }
                    Ok(())
                })?;
                f.write_str(")")
            }
            Statement::Insert { table, columns, rows } => {
                write!(f, "INSERT INTO {}", Ident(table))?;
                if let Some(cols) = columns {
                    f.write_str(" (")?;
                    comma(f, cols, |f, c| write!(f, "{}", Ident(c)))?;
                    f.write_str(")")?;
                }
                f.write_str(" VALUES ")?;
                comma(f, rows, |f, r| {
                    f.write_str("(")?;
                    comma(f, r, |f, e| write!(f, "{e}"))?;
                    f.write_str(")")
                })
            }
            Statement::Select(s) => {
                f.write_str("SELECT ")?;
                comma(f, &s.projection, |f, item| match item {
                    SelectItem::Wildcard => f.write_str("*"),
                    SelectItem::Expr { expr, alias } => {
                        write!(f, "{expr}")?;
                        if let Some(a) = alias {
                            write!(f, " AS {}", Ident(a))?;
                        }
                        Ok(())
                    }
                })?;
                f.write_str(" FROM ")?;
                comma(f, &s.from, |f, t| write!(f, "{t}"))?;
                for (t, on) in &s.joins {
                    write!(f, " JOIN {t} ON {on}")?;
                }
                if let Some(w) = &s.filter {
                    write!(f, " WHERE {w}")?;
                }
                if let Some(l) = s.limit {
                    write!(f, " LIMIT {l}")?;
                }
                Ok(())
            }
            Statement::Update { table, assignments, filter } => {
                write!(f, "UPDATE {} SET ", Ident(table))?;
                comma(f, assignments, |f, (c, e)| write!(f, "{} = {e}", Ident(c)))?;
                if let Some(w) = filter {
                    write!(f, " WHERE {w}")?;
                }
                Ok(())
            }
            Statement::Delete { table, filter } => {
                write!(f, "DELETE FROM {}", Ident(table))?;
                if let Some(w) = filter {
                    write!(f, " WHERE {w}")?;
                }
                Ok(())
            }
            Statement::Predict(p) => {
                let task = match p.task {
                    TaskKind::Value => "VALUE",
                    TaskKind::Class => "CLASS",
                };
                write!(f, "PREDICT {task} OF {} FROM {}", Ident(&p.target), Ident(&p.source_table))?;
                if let Some(w) = &p.infer_predicate {
                    write!(f, " WHERE {w}")?;
                }
                f.write_str(" TRAIN ON ")?;
                match &p.train_features {
                    FeatureList::All => f.write_str("*")?,
                    FeatureList::Columns(cols) => comma(f, cols, |f, c| write!(f, "{}", Ident(c)))?,
                }
                if let Some(w) = &p.train_predicate {
                    write!(f, " WITH {w}")?;
                }
                if let Some(rows) = &p.inline_rows {
                    f.write_str(" VALUES ")?;
                    comma(f, rows, |f, r| {
                        f.write_str("(")?;
                        comma(f, r, |f, v| write!(f, "{}", Literal(v)))?;
                        f.write_str(")")
                    })?;
                }
                Ok(())
            }
        }
    }
}
