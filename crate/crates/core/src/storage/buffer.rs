use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;

use super::TableId;

pub type PageImage = Arc<Vec<u8>>;

/// Per-table buffer hit statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BufferStats {
    pub hits: u64,
    pub misses: u64,
}

impl BufferStats {
    /// `hits / (hits + misses)`, 0 when there was no access.
    pub fn hit_ratio(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

type PageKey = (TableId, u32);

#[derive(Debug, Default)]
struct Lru {
    clock: u64,
    pages: HashMap<PageKey, (PageImage, u64)>,
    order: BTreeMap<u64, PageKey>,
    stats: HashMap<TableId, BufferStats>,
}

/// LRU pool of page images shared by all tables.
#[derive(Debug)]
pub struct BufferPool {
    capacity: usize,
    inner: Mutex<Lru>,
}

impl BufferPool {
    pub fn new(capacity_pages: usize) -> Self {
        Self { capacity: capacity_pages.max(1), inner: Mutex::new(Lru::default()) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Returns the cached image or loads it with `load` (a miss).
    pub fn fetch<E>(
        &self,
        table: TableId,
        page_no: u32,
        load: impl FnOnce() -> Result<Vec<u8>, E>,
    ) -> Result<PageImage, E> {
        let key = (table, page_no);
        {
            let mut lru = self.inner.lock();
            let lru = &mut *lru;
            lru.clock += 1;
            let now = lru.clock;
            if let Some((img, last)) = lru.pages.get_mut(&key) {
                lru.order.remove(last);
                *last = now;
                lru.order.insert(now, key);
                lru.stats.entry(table).or_default().hits += 1;
                return Ok(img.clone());
            }
            lru.stats.entry(table).or_default().misses += 1;
        }
        let img = Arc::new(load()?);
        self.install(key, img.clone());
        Ok(img)
    }

    /// Replaces the cached image after a write, if the page is resident.
    pub fn update(&self, table: TableId, page_no: u32, img: PageImage) {
        let mut lru = self.inner.lock();
        if let Some((cur, _)) = lru.pages.get_mut(&(table, page_no)) {
            *cur = img;
        }
    }

    fn install(&self, key: PageKey, img: PageImage) {
        let mut lru = self.inner.lock();
        let lru = &mut *lru;
        if lru.pages.contains_key(&key) {
            return;
        }
        while lru.pages.len() >= self.capacity {
            let (&oldest, &victim) = lru.order.iter().next().expect("non-empty");
            lru.order.remove(&oldest);
            lru.pages.remove(&victim);
        }
        lru.clock += 1;
        let now = lru.clock;
        lru.pages.insert(key, (img, now));
        lru.order.insert(now, key);
    }

    pub fn stats(&self, table: TableId) -> BufferStats {
        self.inner.lock().stats.get(&table).copied().unwrap_or_default()
    }

    pub fn reset_stats(&self) {
        self.inner.lock().stats.clear();
    }

    pub fn drop_table(&self, table: TableId) {
        let mut lru = self.inner.lock();
        let lru = &mut *lru;
        let keys: Vec<_> = lru.pages.keys().filter(|k| k.0 == table).copied().collect();
        for k in keys {
            if let Some((_, t)) = lru.pages.remove(&k) {
                lru.order.remove(&t);
            }
        }
        lru.stats.remove(&table);
    }

    pub fn resident_pages(&self) -> usize {
        self.inner.lock().pages.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(v: u8) -> Result<Vec<u8>, ()> {
        Ok(vec![v])
    }

    #[test]
    fn hit_ratio_definition() {
        assert_eq!(BufferStats::default().hit_ratio(), 0.0);
        assert_eq!(BufferStats { hits: 3, misses: 1 }.hit_ratio(), 0.75);
    }

    #[test]
    fn lru_eviction() {
        let pool = BufferPool::new(2);
        pool.fetch(1, 0, || load(0)).unwrap();
        pool.fetch(1, 1, || load(1)).unwrap();
        pool.fetch(1, 0, || load(0)).unwrap(); // hit, 0 becomes most recent
        pool.fetch(1, 2, || load(2)).unwrap(); // evicts page 1
        assert_eq!(pool.stats(1), BufferStats { hits: 1, misses: 3 });
        pool.fetch(1, 0, || load(0)).unwrap();
        assert_eq!(pool.stats(1).hits, 2);
        pool.fetch(1, 1, || load(1)).unwrap();
        assert_eq!(pool.stats(1).misses, 4);
        assert_eq!(pool.resident_pages(), 2);
    }
}
