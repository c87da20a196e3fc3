//! SQL subset with the PREDICT extension: lexer, parser, printer and
//! semantic analysis.

mod analyzer;
mod ast;
mod lexer;
mod parser;

pub use analyzer::{
    analyze_predict, bind, bind_predicate, expand_features, BoundExpr, ResolvedPredict, Scope, ScopeEntry, MAX_CLASSES,
    TEXT_DISTINCT_RATIO,
};
pub use ast::{
    is_reserved, BinOp, ColumnDef, ColumnRef, Expr, FeatureList, Ident, Literal, PredictStatement, Select, SelectItem,
    Statement, TableRef, TaskKind,
};
pub use lexer::{tokenize, Token, TokenKind};
pub use parser::{parse, parse_statement, split_statements};

use thiserror::Error;

use crate::storage::StorageError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SqlError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax { message: String, line: usize, col: usize, offset: usize },
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("column reference {0} is ambiguous")]
    AmbiguousColumn(String),
    #[error("feature set of {0} is empty after expansion")]
    EmptyFeatureSet(String),
    #[error("target column {0} cannot also be a feature")]
    TargetInFeatures(String),
    #[error("PREDICT needs a WHERE clause or VALUES rows to predict for")]
    NoInferenceSet,
    #[error("PREDICT takes either a WHERE clause or VALUES rows, not both")]
    AmbiguousInferenceSet,
    #[error("target {column} has {distinct} distinct values; classification allows at most {max}")]
    TooManyClasses { column: String, distinct: usize, max: usize },
    #[error("TEXT column {0} has too many distinct values to be a feature")]
    HighCardinalityText(String),
    #[error("VALUES row {row} has {actual} values, expected {expected}")]
    ArityMismatch { row: usize, expected: usize, actual: usize },
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

impl SqlError {
    pub(crate) fn syntax(message: impl Into<String>, line: usize, col: usize, offset: usize) -> Self {
        SqlError::Syntax { message: message.into(), line, col, offset }
    }
}
