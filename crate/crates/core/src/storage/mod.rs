//! Paged heap storage, buffer pool and catalog.

mod buffer;
pub mod page;
mod schema;
mod table;
mod value;

pub use buffer::{BufferPool, BufferStats};
pub use schema::{Column, Schema, Tuple};
pub use table::{RowId, Table, TableScan};
pub use value::{DataType, Value, ValueKey};

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use table::PageFile;

pub type TableId = u32;

/// Default buffer pool size in pages.
pub const DEFAULT_POOL_PAGES: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StorageError {
    #[error("table {0} already exists")]
    DuplicateTable(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unique constraint violated on {table}.{column}")]
    UniqueViolation { table: String, column: String },
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("column {0} is not numeric")]
    NonNumericColumn(String),
    #[error("tuple of {0} bytes does not fit in a page")]
    TupleTooLarge(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("corrupt storage: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for StorageError {
    fn from(e: std::io::Error) -> Self {
        StorageError::Io(e.to_string())
    }
}

/// Equi-width histogram. An empty input yields zero bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(values: &[f64], bins: usize) -> Self {
        if values.is_empty() {
            return Self { min: 0.0, max: 0.0, counts: Vec::new() };
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0u64; bins];
        for &v in values {
            counts[Self::bin_of(min, max, bins, v)] += 1;
        }
        Self { min, max, counts }
    }

    fn bin_of(min: f64, max: f64, bins: usize, v: f64) -> usize {
        if max <= min {
            return 0;
        }
        (((v - min) / (max - min) * bins as f64) as usize).min(bins - 1)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn width(&self) -> f64 {
        if self.counts.is_empty() {
            0.0
        } else {
            (self.max - self.min) / self.counts.len() as f64
        }
    }

    /// Estimated fraction of values `v` with `lo <= v <= hi`, assuming values
    /// are uniform within each bin.
    pub fn range_fraction(&self, lo: f64, hi: f64) -> f64 {
        let total = self.total();
        if total == 0 || hi < lo {
            return 0.0;
        }
        if self.max <= self.min {
            return if lo <= self.min && self.min <= hi { 1.0 } else { 0.0 };
        }
        let w = self.width();
        let mut acc = 0.0;
        for (i, &c) in self.counts.iter().enumerate() {
            let b_lo = self.min + w * i as f64;
            let b_hi = b_lo + w;
            let overlap = (hi.min(b_hi) - lo.max(b_lo)).max(0.0);
            acc += c as f64 * (overlap / w).min(1.0);
        }
        (acc / total as f64).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogMeta {
    tables: Vec<TableMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TableMeta {
    id: TableId,
    schema: Schema,
}

/// Registry of tables sharing one buffer pool. With a data directory the
/// schemas live in `catalog.meta` and each table in `<table>.heap`.
#[derive(Debug)]
pub struct Catalog {
    dir: Option<PathBuf>,
    pool: Arc<BufferPool>,
    tables: RwLock<BTreeMap<String, Arc<Table>>>,
    next_id: AtomicU32,
}

impl Catalog {
    pub fn in_memory(pool_pages: usize) -> Self {
        Self {
            dir: None,
            pool: Arc::new(BufferPool::new(pool_pages)),
            tables: RwLock::new(BTreeMap::new()),
            next_id: AtomicU32::new(1),
        }
    }

    pub fn open(dir: &Path, pool_pages: usize) -> Result<Self, StorageError> {
        fs::create_dir_all(dir)?;
        let pool = Arc::new(BufferPool::new(pool_pages));
        let mut tables = BTreeMap::new();
        let mut next = 1;
        let meta_path = dir.join("catalog.meta");
        if meta_path.exists() {
            let meta: CatalogMeta =
                serde_json::from_slice(&fs::read(&meta_path)?).map_err(|e| StorageError::Corrupt(e.to_string()))?;
            for tm in meta.tables {
                let path = dir.join(format!("{}.heap", tm.schema.table_name));
                let file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&path)?;
                let len = file.metadata()?.len();
                if len % page::PAGE_SIZE as u64 != 0 {
                    return Err(StorageError::Corrupt(format!("{path:?} is not page aligned")));
                }
                let pages = (len / page::PAGE_SIZE as u64) as u32;
                next = next.max(tm.id + 1);
                let t = Table::new(tm.id, tm.schema, pool.clone(), PageFile::File { file, pages })?;
                tables.insert(t.name().to_string(), t);
            }
        }
        Ok(Self { dir: Some(dir.to_path_buf()), pool, tables: RwLock::new(tables), next_id: AtomicU32::new(next) })
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn pool(&self) -> &Arc<BufferPool> {
        &self.pool
    }

    pub fn create_table(&self, schema: Schema) -> Result<Arc<Table>, StorageError> {
        schema.validate()?;
        let mut tables = self.tables.write();
        if tables.contains_key(&schema.table_name) {
            return Err(StorageError::DuplicateTable(schema.table_name));
        }
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let file = match &self.dir {
            None => PageFile::Memory(Vec::new()),
            Some(dir) => {
                let path = dir.join(format!("{}.heap", schema.table_name));
                let file = OpenOptions::new().read(true).write(true).create(true).truncate(true).open(path)?;
                PageFile::File { file, pages: 0 }
            }
        };
        let table = Table::new(id, schema, self.pool.clone(), file)?;
        tables.insert(table.name().to_string(), table.clone());
        self.write_meta(&tables)?;
        Ok(table)
    }

    pub fn table(&self, name: &str) -> Result<Arc<Table>, StorageError> {
        self.tables.read().get(name).cloned().ok_or_else(|| StorageError::UnknownTable(name.to_string()))
    }

    pub fn tables(&self) -> Vec<Arc<Table>> {
        self.tables.read().values().cloned().collect()
    }

    pub fn drop_table(&self, name: &str) -> Result<(), StorageError> {
        let mut tables = self.tables.write();
        let t = tables.remove(name).ok_or_else(|| StorageError::UnknownTable(name.to_string()))?;
        self.pool.drop_table(t.id());
        self.write_meta(&tables)?;
        if let Some(dir) = &self.dir {
            let _ = fs::remove_file(dir.join(format!("{name}.heap")));
        }
        Ok(())
    }

    fn write_meta(&self, tables: &BTreeMap<String, Arc<Table>>) -> Result<(), StorageError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut metas: Vec<TableMeta> =
            tables.values().map(|t| TableMeta { id: t.id(), schema: t.schema().clone() }).collect();
        metas.sort_by_key(|m| m.id);
        let bytes = serde_json::to_vec_pretty(&CatalogMeta { tables: metas }).expect("serializable");
        let tmp = dir.join("catalog.meta.tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, dir.join("catalog.meta"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn review_schema() -> Schema {
        Schema::new(
            "review",
            vec![
                Column::new("score", DataType::Float64),
                Column::new("brand_name", DataType::Text),
                Column::new("review_id", DataType::Int64).unique(),
            ],
        )
    }

    fn row(score: f64, brand: &str, id: i64) -> Tuple {
        vec![Value::Float(score), Value::Text(brand.into()), Value::Int(id)]
    }

    #[test]
    fn create_and_catalog_errors() {
        let cat = Catalog::in_memory(16);
        let t = cat.create_table(review_schema()).unwrap();
        assert_eq!(t.schema().arity(), 3);
        assert_eq!(cat.create_table(review_schema()).unwrap_err(), StorageError::DuplicateTable("review".into()));
        assert!(matches!(cat.create_table(Schema::new("e", vec![])), Err(StorageError::InvalidSchema(_))));
        let dup = Schema::new("d", vec![Column::new("a", DataType::Int64), Column::new("A", DataType::Text)]);
        assert!(matches!(cat.create_table(dup), Err(StorageError::InvalidSchema(_))));
        assert!(matches!(cat.table("nope"), Err(StorageError::UnknownTable(_))));
    }

    #[test]
    fn insert_scan_unique() {
        let cat = Catalog::in_memory(16);
        let t = cat.create_table(review_schema()).unwrap();
        t.insert(row(4.0, "Special Goods", 1)).unwrap();
        t.insert(row(3.0, "Acme", 2)).unwrap();
        t.insert(row(5.0, "Special Goods", 3)).unwrap();
        assert_eq!(t.collect().unwrap().len(), 3);
        let special: Vec<_> =
            t.scan_where(|r| r[1] == Value::Text("Special Goods".into())).collect::<Result<Vec<_>, _>>().unwrap();
        assert_eq!(special.len(), 2);
        assert!(matches!(t.insert(row(1.0, "X", 2)), Err(StorageError::UniqueViolation { .. })));
        assert!(matches!(
            t.insert(vec![Value::Text("x".into()), Value::Null, Value::Null]),
            Err(StorageError::TypeMismatch(_))
        ));
        assert_eq!(t.row_count(), 3);
    }

    #[test]
    fn delete_and_update_maintain_uniques() {
        let cat = Catalog::in_memory(16);
        let t = cat.create_table(review_schema()).unwrap();
        let a = t.insert(row(1.0, "a", 1)).unwrap();
        let b = t.insert(row(2.0, "b", 2)).unwrap();
        assert!(t.delete(a).unwrap());
        assert!(!t.delete(a).unwrap());
        t.insert(row(3.0, "c", 1)).unwrap();
        assert!(matches!(t.update(b, row(2.0, "b", 1)), Err(StorageError::UniqueViolation { .. })));
        let b2 = t.update(b, row(9.0, "b", 2)).unwrap();
        assert_eq!(t.get(b2).unwrap(), Some(row(9.0, "b", 2)));
        assert_eq!(t.row_count(), 2);
    }

    #[test]
    fn histograms() {
        let cat = Catalog::in_memory(16);
        let t = cat
            .create_table(Schema::new("h", vec![Column::new("v", DataType::Int64), Column::new("s", DataType::Text)]))
            .unwrap();
        assert_eq!(t.column_histogram("v", 4).unwrap().bins(), 0);
        for v in [0, 1, 2, 3] {
            t.insert(vec![Value::Int(v), Value::Null]).unwrap();
        }
        assert_eq!(t.column_histogram("v", 4).unwrap().counts, vec![1, 1, 1, 1]);
        assert!(matches!(t.column_histogram("s", 4), Err(StorageError::NonNumericColumn(_))));
        assert!(matches!(t.column_histogram("v", 0), Err(StorageError::InvalidArgument(_))));
        t.insert(vec![Value::Null, Value::Null]).unwrap();
        assert_eq!(t.column_histogram("v", 4).unwrap().total(), 4);
        assert_eq!(Histogram::build(&[0.0, 0.0, 0.0, 10.0], 2).counts, vec![3, 1]);
    }

    #[test]
    fn buffer_stats_move_with_scans() {
        let cat = Catalog::in_memory(4);
        let t = cat.create_table(review_schema()).unwrap();
        for i in 0..2000 {
            t.insert(row(i as f64, "brand", i)).unwrap();
        }
        assert!(t.page_count() > 4);
        cat.pool().reset_stats();
        t.collect().unwrap();
        let s1 = t.buffer_stats();
        assert_eq!(s1.hits + s1.misses, t.page_count() as u64);
    }

    #[test]
    fn persistence_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<Tuple> = (0..500).map(|i| row(i as f64 * 0.5, &format!("b{}", i % 7), i)).collect();
        {
            let cat = Catalog::open(dir.path(), 8).unwrap();
            let t = cat.create_table(review_schema()).unwrap();
            t.insert_many(rows.clone()).unwrap();
        }
        let heap1 = fs::read(dir.path().join("review.heap")).unwrap();
        let meta1 = fs::read(dir.path().join("catalog.meta")).unwrap();
        {
            let cat = Catalog::open(dir.path(), 8).unwrap();
            let t = cat.table("review").unwrap();
            assert_eq!(t.collect().unwrap(), rows);
            assert_eq!(t.row_count(), 500);
            assert!(matches!(t.insert(row(0.0, "x", 3)), Err(StorageError::UniqueViolation { .. })));
        }
        assert_eq!(fs::read(dir.path().join("review.heap")).unwrap(), heap1);
        assert_eq!(fs::read(dir.path().join("catalog.meta")).unwrap(), meta1);
    }
}
