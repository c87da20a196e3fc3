use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use super::{ModelId, ModelStore, Result, Timestamp};
use crate::nn::Network;

type Key = (ModelId, Vec<Timestamp>);

/// LRU cache of deserialized networks keyed by `(mid, version vector)`.
#[derive(Debug)]
pub struct ModelBuffer {
    capacity: usize,
    /// Most recently used last.
    entries: Mutex<Vec<(Key, Arc<Network>)>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl Default for ModelBuffer {
    fn default() -> Self {
        Self::new(8)
    }
}

impl ModelBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: Mutex::new(Vec::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn get(&self, store: &ModelStore, mid: ModelId, t: Timestamp) -> Result<Arc<Network>> {
        let view = store.resolve(mid, t)?;
        let key = (mid, view.version_vector());
        {
            let mut entries = self.entries.lock();
            if let Some(pos) = entries.iter().position(|(k, _)| *k == key) {
                let e = entries.remove(pos);
                let net = e.1.clone();
                entries.push(e);
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(net);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let net = Arc::new(store.assemble(&view)?);
        let mut entries = self.entries.lock();
        if !entries.iter().any(|(k, _)| *k == key) {
            if entries.len() >= self.capacity {
                entries.remove(0);
            }
            entries.push((key, net.clone()));
        }
        Ok(net)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, mid: ModelId, versions: &[Timestamp]) -> bool {
        self.entries.lock().iter().any(|((m, v), _)| *m == mid && v == versions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Loss;

    #[test]
    fn hit_after_miss_and_after_update() {
        let store = ModelStore::in_memory();
        let net = Network::mlp(3, &[4], 1, Loss::Mse, 0).unwrap();
        store.store_initial(1, &net, 1).unwrap();
        let buf = ModelBuffer::default();
        buf.get(&store, 1, 1).unwrap();
        buf.get(&store, 1, 1).unwrap();
        assert_eq!((buf.hits(), buf.misses()), (1, 1));

        let last = net.layers().last().unwrap().clone();
        store.incremental_update(1, 1, &[last], 2).unwrap();
        buf.get(&store, 1, 2).unwrap();
        assert_eq!((buf.hits(), buf.misses()), (1, 2));
        buf.get(&store, 1, 2).unwrap();
        assert_eq!((buf.hits(), buf.misses()), (2, 2));
    }

    #[test]
    fn evicts_least_recent() {
        let store = ModelStore::in_memory();
        for mid in 1..=3 {
            store.store_initial(mid, &Network::mlp(2, &[], 1, Loss::Mse, mid).unwrap(), 1).unwrap();
        }
        let buf = ModelBuffer::new(2);
        buf.get(&store, 1, 1).unwrap();
        buf.get(&store, 2, 1).unwrap();
        buf.get(&store, 3, 1).unwrap();
        assert_eq!(buf.len(), 2);
        assert!(!buf.contains(1, &[1]));
        assert!(buf.contains(3, &[1]));
        // Evicted models stay resolvable.
        buf.get(&store, 1, 1).unwrap();
        assert_eq!(buf.misses(), 4);
    }
}
