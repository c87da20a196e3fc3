use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{DataType, StorageError, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub ty: DataType,
    pub unique: bool,
    pub nullable: bool,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: DataType) -> Self {
        Self { name: name.into(), ty, unique: false, nullable: true }
    }

    pub fn unique(mut self) -> Self {
        self.unique = true;
        self
    }

    pub fn not_null(mut self) -> Self {
        self.nullable = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub table_name: String,
    pub columns: Vec<Column>,
}

pub type Tuple = Vec<Value>;

impl Schema {
    pub fn new(table_name: impl Into<String>, columns: Vec<Column>) -> Self {
        Self { table_name: table_name.into(), columns }
    }

    pub fn validate(&self) -> Result<(), StorageError> {
        if self.table_name.is_empty() {
            return Err(StorageError::InvalidSchema("empty table name".into()));
        }
        if self.columns.is_empty() {
            return Err(StorageError::InvalidSchema(format!("table {} has no columns", self.table_name)));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if c.name.is_empty() {
                return Err(StorageError::InvalidSchema("empty column name".into()));
            }
            if !seen.insert(c.name.to_lowercase()) {
                return Err(StorageError::InvalidSchema(format!("duplicate column {}", c.name)));
            }
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name.eq_ignore_ascii_case(name))
    }

    /// Checks arity, types and nullability, coercing integer literals in
    /// float columns.
    pub fn conform(&self, tuple: Tuple) -> Result<Tuple, StorageError> {
        if tuple.len() != self.arity() {
            return Err(StorageError::TypeMismatch(format!(
                "{} expects {} values, got {}",
                self.table_name,
                self.arity(),
                tuple.len()
            )));
        }
        tuple
            .into_iter()
            .zip(&self.columns)
            .map(|(v, c)| {
                if v.is_null() && !c.nullable {
                    return Err(StorageError::TypeMismatch(format!("NULL in non-nullable column {}", c.name)));
                }
                let shown = format!("{v:?}");
                v.coerce(c.ty).ok_or_else(|| {
                    StorageError::TypeMismatch(format!("{shown} does not fit {} column {}", c.ty, c.name))
                })
            })
            .collect()
    }
}
