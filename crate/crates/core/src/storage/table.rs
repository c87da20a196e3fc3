use std::collections::HashMap;
use std::fs::File;
use std::os::unix::fs::FileExt;
use std::sync::Arc;

use parking_lot::RwLock;

use super::buffer::{BufferPool, BufferStats, PageImage};
use super::page::{self, PAGE_SIZE};
use super::{Histogram, Schema, StorageError, TableId, Tuple, ValueKey};

/// Physical address of a tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId {
    pub page: u32,
    pub slot: u16,
}

/// Backing page images; the "disk" tier behind the buffer pool.
#[derive(Debug)]
pub(crate) enum PageFile {
    Memory(Vec<Vec<u8>>),
    File { file: File, pages: u32 },
}

impl PageFile {
    fn len(&self) -> u32 {
        match self {
            PageFile::Memory(p) => p.len() as u32,
            PageFile::File { pages, .. } => *pages,
        }
    }

    fn read(&self, n: u32) -> Result<Vec<u8>, StorageError> {
        match self {
            PageFile::Memory(p) => Ok(p[n as usize].clone()),
            PageFile::File { file, .. } => {
                let mut buf = vec![0u8; PAGE_SIZE];
                file.read_exact_at(&mut buf, n as u64 * PAGE_SIZE as u64)?;
                Ok(buf)
            }
        }
    }

    fn write(&mut self, n: u32, img: &[u8]) -> Result<(), StorageError> {
        match self {
            PageFile::Memory(p) => {
                if n as usize == p.len() {
                    p.push(img.to_vec());
                } else {
                    p[n as usize].copy_from_slice(img);
                }
            }
            PageFile::File { file, pages } => {
                file.write_all_at(img, n as u64 * PAGE_SIZE as u64)?;
                *pages = (*pages).max(n + 1);
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
struct TableState {
    file: PageFile,
    /// `(column index, value -> row)` for every unique column.
    uniques: Vec<(usize, HashMap<ValueKey, RowId>)>,
    rows: u64,
}

/// A heap table. Readers never block each other; writers are serialized by
/// the table lock.
#[derive(Debug)]
pub struct Table {
    id: TableId,
    schema: Schema,
    pool: Arc<BufferPool>,
    state: RwLock<TableState>,
}

impl Table {
    pub(crate) fn new(
        id: TableId,
        schema: Schema,
        pool: Arc<BufferPool>,
        file: PageFile,
    ) -> Result<Arc<Self>, StorageError> {
        let uniques =
            schema.columns.iter().enumerate().filter(|(_, c)| c.unique).map(|(i, _)| (i, HashMap::new())).collect();
        let table = Arc::new(Self { id, schema, pool, state: RwLock::new(TableState { file, uniques, rows: 0 }) });
        table.rebuild_indexes()?;
        Ok(table)
    }

    fn rebuild_indexes(self: &Arc<Self>) -> Result<(), StorageError> {
        let mut rows = 0;
        let mut entries = Vec::new();
        for item in self.scan() {
            let (rid, t) = item?;
            rows += 1;
            entries.push((rid, t));
        }
        let mut st = self.state.write();
        st.rows = rows;
        for (rid, t) in entries {
            for (col, idx) in &mut st.uniques {
                if let Some(k) = t[*col].key() {
                    idx.insert(k, rid);
                }
            }
        }
        Ok(())
    }

    pub fn id(&self) -> TableId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.schema.table_name
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn row_count(&self) -> u64 {
        self.state.read().rows
    }

    pub fn page_count(&self) -> u32 {
        self.state.read().file.len()
    }

    pub fn buffer_stats(&self) -> BufferStats {
        self.pool.stats(self.id)
    }

    fn fetch_page(&self, st: &TableState, n: u32) -> Result<PageImage, StorageError> {
        self.pool.fetch(self.id, n, || st.file.read(n))
    }

    fn write_page(&self, st: &mut TableState, n: u32, img: Vec<u8>) -> Result<(), StorageError> {
        st.file.write(n, &img)?;
        self.pool.update(self.id, n, Arc::new(img));
        Ok(())
    }

    fn check_unique(&self, st: &TableState, tuple: &Tuple, ignore: Option<RowId>) -> Result<(), StorageError> {
        for (col, idx) in &st.uniques {
            if let Some(k) = tuple[*col].key() {
                if let Some(&rid) = idx.get(&k) {
                    if Some(rid) != ignore {
                        return Err(StorageError::UniqueViolation {
                            table: self.name().to_string(),
                            column: self.schema.columns[*col].name.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn insert(&self, tuple: Tuple) -> Result<RowId, StorageError> {
        let tuple = self.schema.conform(tuple)?;
        let mut st = self.state.write();
        self.check_unique(&st, &tuple, None)?;
        let rid = self.place(&mut st, &tuple)?;
        self.index(&mut st, &tuple, rid);
        st.rows += 1;
        Ok(rid)
    }

    /// Inserts many tuples under one lock acquisition; stops at the first
    /// error, keeping the tuples inserted before it.
    pub fn insert_many(&self, tuples: impl IntoIterator<Item = Tuple>) -> Result<usize, StorageError> {
        let mut st = self.state.write();
        let mut n = 0;
        for t in tuples {
            let t = self.schema.conform(t)?;
            self.check_unique(&st, &t, None)?;
            let rid = self.place(&mut st, &t)?;
            self.index(&mut st, &t, rid);
            st.rows += 1;
            n += 1;
        }
        Ok(n)
    }

    fn place(&self, st: &mut TableState, tuple: &Tuple) -> Result<RowId, StorageError> {
        let bytes = page::encode_tuple(&self.schema, tuple);
        if bytes.len() > page::max_tuple_len() {
            return Err(StorageError::TupleTooLarge(bytes.len()));
        }
        let n = st.file.len();
        if n > 0 {
            let last = n - 1;
            let mut img = (*self.fetch_page(st, last)?).clone();
            if let Some(slot) = page::insert(&mut img, &bytes) {
                self.write_page(st, last, img)?;
                return Ok(RowId { page: last, slot });
            }
        }
        let mut img = page::empty_page();
        let slot = page::insert(&mut img, &bytes).expect("fits in an empty page");
        self.write_page(st, n, img)?;
        Ok(RowId { page: n, slot })
    }

    fn index(&self, st: &mut TableState, tuple: &Tuple, rid: RowId) {
        for (col, idx) in &mut st.uniques {
            if let Some(k) = tuple[*col].key() {
                idx.insert(k, rid);
            }
        }
    }

    fn unindex(&self, st: &mut TableState, tuple: &Tuple) {
        for (col, idx) in &mut st.uniques {
            if let Some(k) = tuple[*col].key() {
                idx.remove(&k);
            }
        }
    }

    pub fn get(&self, rid: RowId) -> Result<Option<Tuple>, StorageError> {
        let st = self.state.read();
        if rid.page >= st.file.len() {
            return Ok(None);
        }
        let img = self.fetch_page(&st, rid.page)?;
        page::get(&img, rid.slot).map(|b| page::decode_tuple(&self.schema, b)).transpose()
    }

    pub fn delete(&self, rid: RowId) -> Result<bool, StorageError> {
        let mut st = self.state.write();
        if rid.page >= st.file.len() {
            return Ok(false);
        }
        let mut img = (*self.fetch_page(&st, rid.page)?).clone();
        let Some(bytes) = page::get(&img, rid.slot) else {
            return Ok(false);
        };
        let old = page::decode_tuple(&self.schema, bytes)?;
        page::delete(&mut img, rid.slot);
        self.write_page(&mut st, rid.page, img)?;
        self.unindex(&mut st, &old);
        st.rows -= 1;
        Ok(true)
    }

    /// Replaces the tuple at `rid`; the new version may move.
    pub fn update(&self, rid: RowId, tuple: Tuple) -> Result<RowId, StorageError> {
        let tuple = self.schema.conform(tuple)?;
        let mut st = self.state.write();
        self.check_unique(&st, &tuple, Some(rid))?;
        let mut img = (*self.fetch_page(&st, rid.page)?).clone();
        let bytes = page::get(&img, rid.slot).ok_or_else(|| StorageError::Corrupt(format!("no row at {rid:?}")))?;
        let old = page::decode_tuple(&self.schema, bytes)?;
        page::delete(&mut img, rid.slot);
        self.write_page(&mut st, rid.page, img)?;
        self.unindex(&mut st, &old);
        let new_rid = self.place(&mut st, &tuple)?;
        self.index(&mut st, &tuple, new_rid);
        Ok(new_rid)
    }

    /// Streams committed tuples in storage order, page by page through the
    /// buffer pool.
    pub fn scan(self: &Arc<Self>) -> TableScan {
        TableScan { table: self.clone(), pages: self.page_count(), next_page: 0, buffered: Vec::new().into_iter() }
    }

    /// Tuples satisfying `pred`, in storage order.
    pub fn scan_where<'a>(
        self: &'a Arc<Self>,
        pred: impl Fn(&Tuple) -> bool + 'a,
    ) -> impl Iterator<Item = Result<Tuple, StorageError>> + 'a {
        self.scan().filter_map(move |r| match r {
            Ok((_, t)) => pred(&t).then_some(Ok(t)),
            Err(e) => Some(Err(e)),
        })
    }

    pub fn collect(self: &Arc<Self>) -> Result<Vec<Tuple>, StorageError> {
        self.scan().map(|r| r.map(|(_, t)| t)).collect()
    }

    /// Equi-width histogram over the non-NULL values of a numeric column.
    pub fn column_histogram(self: &Arc<Self>, column: &str, bins: usize) -> Result<Histogram, StorageError> {
        let col = self
            .schema
            .column_index(column)
            .ok_or_else(|| StorageError::UnknownColumn(format!("{}.{column}", self.name())))?;
        if !self.schema.columns[col].ty.is_numeric() {
            return Err(StorageError::NonNumericColumn(column.to_string()));
        }
        if bins == 0 {
            return Err(StorageError::InvalidArgument("histogram needs at least one bin".into()));
        }
        let mut vals = Vec::new();
        for r in self.scan() {
            let (_, t) = r?;
            if let Some(v) = t[col].as_f64() {
                vals.push(v);
            }
        }
        Ok(Histogram::build(&vals, bins))
    }
}

/// Iterator returned by [`Table::scan`].
pub struct TableScan {
    table: Arc<Table>,
    pages: u32,
    next_page: u32,
    buffered: std::vec::IntoIter<(RowId, Tuple)>,
}

impl Iterator for TableScan {
    type Item = Result<(RowId, Tuple), StorageError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(t) = self.buffered.next() {
                return Some(Ok(t));
            }
            if self.next_page >= self.pages {
                return None;
            }
            let n = self.next_page;
            self.next_page += 1;
            let img = {
                let st = self.table.state.read();
                match self.table.fetch_page(&st, n) {
                    Ok(img) => img,
                    Err(e) => return Some(Err(e)),
                }
            };
            let mut rows = Vec::with_capacity(page::slot_count(&img));
            for (slot, bytes) in page::live_slots(&img) {
                match page::decode_tuple(&self.table.schema, bytes) {
                    Ok(t) => rows.push((RowId { page: n, slot }, t)),
                    Err(e) => return Some(Err(e)),
                }
            }
            self.buffered = rows.into_iter();
        }
    }
}
