//! Layered, versioned model storage.
//!
//! Every layer of a model is an independent [`LayerRecord`] keyed by
//! `(mid, layer_index, version)`. A [`ModelView`] resolves, for each layer
//! index, the newest record not newer than the requested timestamp, so a
//! fine-tuned suffix is stored once and shares the untouched prefix with
//! earlier versions.

mod buffer;
pub mod payload;

pub use buffer::ModelBuffer;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use thiserror::Error;

use crate::nn::{Layer, LayerKind, Loss, Network, NnError};

pub type ModelId = u64;
/// Logical per-store timestamp.
pub type Timestamp = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model {0} already exists")]
    DuplicateModel(ModelId),
    #[error("no such model {0}")]
    NoSuchModel(ModelId),
    #[error("model {mid} has no version at or before {t}")]
    NoVersionAtOrBefore { mid: ModelId, t: Timestamp },
    #[error("timestamp {given} is not after latest version {latest}")]
    NonMonotonicTimestamp { latest: Timestamp, given: Timestamp },
    #[error("suffix mismatch: {0}")]
    SuffixMismatch(String),
    #[error("corrupt layer payload: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// One persisted layer version.
#[derive(Debug, PartialEq)]
pub struct LayerRecord {
    pub mid: ModelId,
    /// 1-based position in the network.
    pub layer_index: u16,
    pub version: Timestamp,
    payload: Vec<u8>,
}

impl LayerRecord {
    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn byte_len(&self) -> usize {
        self.payload.len()
    }

    pub fn decode(&self) -> Result<Layer> {
        Ok(payload::decode_layer(&self.payload)?.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayerRef {
    pub layer_index: u16,
    pub version: Timestamp,
}

/// Logical model version `M_{mid,t}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelView {
    pub mid: ModelId,
    pub resolved_at: Timestamp,
    pub layer_refs: Vec<LayerRef>,
}

impl ModelView {
    pub fn version_vector(&self) -> Vec<Timestamp> {
        self.layer_refs.iter().map(|r| r.version).collect()
    }

    /// Newest layer version in the view.
    pub fn latest_version(&self) -> Timestamp {
        self.layer_refs.iter().map(|r| r.version).max().unwrap_or(0)
    }

    /// Versions never decrease with depth and never exceed `resolved_at`.
    pub fn is_depth_monotone(&self) -> bool {
        self.layer_refs.windows(2).all(|w| w[0].version <= w[1].version)
            && self.layer_refs.iter().all(|r| r.version <= self.resolved_at)
    }
}

#[derive(Debug, Default)]
struct ModelEntry {
    /// Indexed by `layer_index - 1`.
    layers: Vec<BTreeMap<Timestamp, Arc<LayerRecord>>>,
}

impl ModelEntry {
    fn latest_version(&self) -> Timestamp {
        self.layers.iter().filter_map(|m| m.keys().next_back().copied()).max().unwrap_or(0)
    }

    fn resolve(&self, mid: ModelId, t: Timestamp) -> Result<ModelView> {
        let mut refs = Vec::with_capacity(self.layers.len());
        for (i, versions) in self.layers.iter().enumerate() {
            let (&v, _) = versions.range(..=t).next_back().ok_or(ModelError::NoVersionAtOrBefore { mid, t })?;
            refs.push(LayerRef { layer_index: (i + 1) as u16, version: v });
        }
        if refs.is_empty() {
            return Err(ModelError::NoVersionAtOrBefore { mid, t });
        }
        Ok(ModelView { mid, resolved_at: t, layer_refs: refs })
    }
}

/// Versioned layer store, optionally mirrored to
/// `<data_dir>/models/<mid>/<layer_index>.<version>.layer`.
#[derive(Debug, Default)]
pub struct ModelStore {
    dir: Option<PathBuf>,
    models: RwLock<HashMap<ModelId, ModelEntry>>,
    clock: AtomicU64,
}

impl ModelStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) the on-disk store under `data_dir/models`,
    /// rebuilding the version index from the directory listing.
    pub fn open(data_dir: &Path) -> Result<Self> {
        let root = data_dir.join("models");
        fs::create_dir_all(&root)?;
        let store = Self { dir: Some(root.clone()), ..Self::default() };
        let mut max_t = 0;
        {
            let mut models = store.models.write();
            for dir in fs::read_dir(&root)? {
                let dir = dir?;
                let Some(mid) = dir.file_name().to_str().and_then(|s| s.parse::<ModelId>().ok()) else {
                    continue;
                };
                for f in fs::read_dir(dir.path())? {
                    let f = f?;
                    let name = f.file_name();
                    let Some((idx, ver)) = parse_layer_file_name(name.to_str().unwrap_or("")) else {
                        continue;
                    };
                    let bytes = fs::read(f.path())?;
                    let h = payload::decode_header(&bytes)?;
                    if h.mid != mid || h.layer_index != idx || h.version != ver {
                        return Err(ModelError::Corrupt(format!("header of {:?} disagrees with its name", f.path())));
                    }
                    let entry = models.entry(mid).or_default();
                    insert_record(entry, Arc::new(LayerRecord { mid, layer_index: idx, version: ver, payload: bytes }));
                    max_t = max_t.max(ver);
                }
            }
            for (&mid, entry) in models.iter() {
                if entry.layers.iter().any(BTreeMap::is_empty) {
                    return Err(ModelError::Corrupt(format!("model {mid} has a gap in its layer indices")));
                }
            }
        }
        store.clock.store(max_t, Ordering::SeqCst);
        Ok(store)
    }

    /// Next logical timestamp; strictly greater than anything handed out or
    /// stored before.
    pub fn next_timestamp(&self) -> Timestamp {
        self.clock.fetch_add(1, Ordering::SeqCst) + 1
    }

    pub fn current_timestamp(&self) -> Timestamp {
        self.clock.load(Ordering::SeqCst)
    }

    fn observe_timestamp(&self, t: Timestamp) {
        self.clock.fetch_max(t, Ordering::SeqCst);
    }

    pub fn allocate_mid(&self) -> ModelId {
        self.models.read().keys().max().map_or(1, |m| m + 1)
    }

    pub fn model_ids(&self) -> Vec<ModelId> {
        let mut ids: Vec<_> = self.models.read().keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn contains(&self, mid: ModelId) -> bool {
        self.models.read().contains_key(&mid)
    }

    pub fn store_initial(&self, mid: ModelId, net: &Network, t: Timestamp) -> Result<ModelView> {
        let mut models = self.models.write();
        if models.contains_key(&mid) {
            return Err(ModelError::DuplicateModel(mid));
        }
        let mut entry = ModelEntry::default();
        let mut written = Vec::new();
        for (i, layer) in net.layers().iter().enumerate() {
            let rec = self.make_record(mid, (i + 1) as u16, t, layer);
            written.push(rec.clone());
            insert_record(&mut entry, rec);
        }
        self.persist(&written)?;
        let view = entry.resolve(mid, t)?;
        models.insert(mid, entry);
        self.observe_timestamp(t);
        Ok(view)
    }

    /// For each layer index, the newest version `<= t`.
    pub fn resolve(&self, mid: ModelId, t: Timestamp) -> Result<ModelView> {
        let models = self.models.read();
        models.get(&mid).ok_or(ModelError::NoSuchModel(mid))?.resolve(mid, t)
    }

    pub fn latest(&self, mid: ModelId) -> Result<ModelView> {
        let models = self.models.read();
        let entry = models.get(&mid).ok_or(ModelError::NoSuchModel(mid))?;
        entry.resolve(mid, entry.latest_version())
    }

    /// Writes new records for the last `suffix_len` layers only.
    pub fn incremental_update(
        &self,
        mid: ModelId,
        suffix_len: usize,
        fine_tuned: &[Layer],
        t_new: Timestamp,
    ) -> Result<ModelView> {
        let mut models = self.models.write();
        let entry = models.get_mut(&mid).ok_or(ModelError::NoSuchModel(mid))?;
        let latest = entry.latest_version();
        if t_new <= latest {
            return Err(ModelError::NonMonotonicTimestamp { latest, given: t_new });
        }
        let n = entry.layers.len();
        if suffix_len == 0 || suffix_len > n || fine_tuned.len() != suffix_len {
            return Err(ModelError::SuffixMismatch(format!(
                "suffix_len {suffix_len} with {} layers for a {n}-layer model",
                fine_tuned.len()
            )));
        }
        let current = entry.resolve(mid, latest)?;
        let mut written = Vec::with_capacity(suffix_len);
        for (k, layer) in fine_tuned.iter().enumerate() {
            let idx = n - suffix_len + k;
            let r = current.layer_refs[idx];
            let stored = entry.layers[idx][&r.version].decode()?;
            if stored.kind() != layer.kind() || stored.in_dim() != layer.in_dim() || stored.out_dim() != layer.out_dim()
            {
                return Err(ModelError::SuffixMismatch(format!(
                    "layer {} is {:?} {}x{}, update is {:?} {}x{}",
                    idx + 1,
                    stored.kind(),
                    stored.out_dim(),
                    stored.in_dim(),
                    layer.kind(),
                    layer.out_dim(),
                    layer.in_dim()
                )));
            }
            written.push(self.make_record(mid, (idx + 1) as u16, t_new, layer));
        }
        self.persist(&written)?;
        for rec in written {
            insert_record(entry, rec);
        }
        self.observe_timestamp(t_new);
        entry.resolve(mid, t_new)
    }

    pub fn record(&self, mid: ModelId, layer_index: u16, version: Timestamp) -> Option<Arc<LayerRecord>> {
        let models = self.models.read();
        let entry = models.get(&mid)?;
        entry.layers.get((layer_index as usize).checked_sub(1)?)?.get(&version).cloned()
    }

    pub fn view_records(&self, view: &ModelView) -> Result<Vec<Arc<LayerRecord>>> {
        view.layer_refs
            .iter()
            .map(|r| {
                self.record(view.mid, r.layer_index, r.version)
                    .ok_or(ModelError::NoVersionAtOrBefore { mid: view.mid, t: r.version })
            })
            .collect()
    }

    /// Deserializes a view into a network. The loss follows the layer list:
    /// a trailing softmax means cross-entropy.
    pub fn assemble(&self, view: &ModelView) -> Result<Network> {
        let layers = self.view_records(view)?.iter().map(|r| r.decode()).collect::<Result<Vec<_>>>()?;
        let loss =
            if layers.last().map(Layer::kind) == Some(LayerKind::Softmax) { Loss::CrossEntropy } else { Loss::Mse };
        Ok(Network::new(layers, loss)?)
    }

    pub fn record_count(&self, mid: ModelId) -> usize {
        self.models.read().get(&mid).map_or(0, |e| e.layers.iter().map(BTreeMap::len).sum())
    }

    /// Total payload bytes held for `mid`.
    pub fn storage_bytes(&self, mid: ModelId) -> usize {
        self.models.read().get(&mid).map_or(0, |e| e.layers.iter().flat_map(|m| m.values()).map(|r| r.byte_len()).sum())
    }

    /// Drops every record not needed to resolve a timestamp `>= keep_from`.
    /// Returns the number of records removed.
    pub fn vacuum(&self, keep_from: Timestamp) -> Result<usize> {
        let mut models = self.models.write();
        let mut removed = Vec::new();
        for entry in models.values_mut() {
            for versions in &mut entry.layers {
                let anchor = versions.range(..=keep_from).next_back().map(|(&v, _)| v);
                let stale: Vec<Timestamp> =
                    versions.keys().copied().filter(|&v| Some(v) != anchor && v < keep_from).collect();
                for v in stale {
                    removed.push(versions.remove(&v).expect("present"));
                }
            }
        }
        if let Some(dir) = &self.dir {
            for rec in &removed {
                let p = dir.join(rec.mid.to_string()).join(layer_file_name(rec.layer_index, rec.version));
                fs::remove_file(p)?;
            }
        }
        Ok(removed.len())
    }

    fn make_record(&self, mid: ModelId, layer_index: u16, version: Timestamp, layer: &Layer) -> Arc<LayerRecord> {
        Arc::new(LayerRecord {
            mid,
            layer_index,
            version,
            payload: payload::encode_layer(mid, layer_index, version, layer),
        })
    }

    fn persist(&self, records: &[Arc<LayerRecord>]) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        for rec in records {
            let mdir = dir.join(rec.mid.to_string());
            fs::create_dir_all(&mdir)?;
            let name = layer_file_name(rec.layer_index, rec.version);
            let tmp = mdir.join(format!("{name}.tmp"));
            fs::write(&tmp, &rec.payload)?;
            fs::rename(&tmp, mdir.join(name))?;
        }
        Ok(())
    }
}

fn insert_record(entry: &mut ModelEntry, rec: Arc<LayerRecord>) {
    let idx = rec.layer_index as usize - 1;
    if entry.layers.len() <= idx {
        entry.layers.resize_with(idx + 1, BTreeMap::new);
    }
    entry.layers[idx].insert(rec.version, rec);
}

fn layer_file_name(layer_index: u16, version: Timestamp) -> String {
    format!("{layer_index}.{version}.layer")
}

fn parse_layer_file_name(name: &str) -> Option<(u16, Timestamp)> {
    let rest = name.strip_suffix(".layer")?;
    let (idx, ver) = rest.split_once('.')?;
    let idx: u16 = idx.parse().ok()?;
    (idx >= 1).then_some(())?;
    Some((idx, ver.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    fn net3(seed: u64) -> Network {
        // Three parameterized layers and no activations, so layer indices
        // line up with the figure-style examples.
        let mut n =
            Network::new(vec![Layer::linear(4, 3), Layer::linear(3, 2), Layer::linear(2, 1)], Loss::Mse).unwrap();
        n.init(seed);
        n
    }

    #[test]
    fn initial_store_writes_one_record_per_layer() {
        let store = ModelStore::in_memory();
        let view = store.store_initial(1, &net3(0), 1).unwrap();
        let refs: Vec<(u16, u64)> = view.layer_refs.iter().map(|r| (r.layer_index, r.version)).collect();
        assert_eq!(refs, vec![(1, 1), (2, 1), (3, 1)]);
        assert_eq!(store.store_initial(1, &net3(0), 2), Err(ModelError::DuplicateModel(1)));
    }

    #[test]
    fn round_trip_forward_is_bit_identical() {
        let store = ModelStore::in_memory();
        let net = Network::mlp(5, &[8, 4], 3, Loss::CrossEntropy, 11).unwrap();
        let view = store.store_initial(9, &net, 1).unwrap();
        let back = store.assemble(&view).unwrap();
        let probe = Matrix::from_rows(&[vec![0.1, -0.2, 0.3, 1.5, -2.0], vec![1.0; 5]]).unwrap();
        let a = net.forward(&probe).unwrap();
        let b = back.forward(&probe).unwrap();
        let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(back.loss(), Loss::CrossEntropy);
    }

    #[test]
    fn resolve_merges_prefix_with_new_suffix() {
        let store = ModelStore::in_memory();
        let net = net3(0);
        store.store_initial(1, &net, 1).unwrap();
        let mut tuned = net.layers()[2].clone();
        tuned.weights_mut()[0] += 1.0;
        store.incremental_update(1, 1, &[tuned], 2).unwrap();
        let v2 = store.resolve(1, 2).unwrap();
        assert_eq!(v2.version_vector(), vec![1, 1, 2]);
        assert_eq!(store.resolve(1, 1).unwrap().version_vector(), vec![1, 1, 1]);
        assert_eq!(store.resolve(1, 0), Err(ModelError::NoVersionAtOrBefore { mid: 1, t: 0 }));
        assert_eq!(store.resolve(2, 5), Err(ModelError::NoSuchModel(2)));
        assert!(v2.is_depth_monotone());
    }

    #[test]
    fn update_rules() {
        let store = ModelStore::in_memory();
        let net = net3(0);
        store.store_initial(1, &net, 5).unwrap();
        let last = net.layers()[2].clone();
        assert_eq!(
            store.incremental_update(1, 1, &[last.clone()], 5),
            Err(ModelError::NonMonotonicTimestamp { latest: 5, given: 5 })
        );
        assert!(matches!(
            store.incremental_update(1, 1, &[Layer::linear(2, 2)], 6),
            Err(ModelError::SuffixMismatch(_))
        ));
        assert!(matches!(store.incremental_update(1, 2, &[last.clone()], 6), Err(ModelError::SuffixMismatch(_))));
        // Full-suffix update rewrites every layer.
        let view = store.incremental_update(1, 3, net.layers(), 6).unwrap();
        assert_eq!(view.version_vector(), vec![6, 6, 6]);
        assert_eq!(store.record_count(1), 6);
    }

    #[test]
    fn storage_grows_by_suffix_payload() {
        let store = ModelStore::in_memory();
        let net = Network::mlp(6, &[16, 8], 1, Loss::Mse, 2).unwrap();
        store.store_initial(3, &net, 1).unwrap();
        let initial = store.storage_bytes(3);
        let last = net.layers().last().unwrap().clone();
        let last_bytes = payload::encode_layer(3, 5, 1, &last).len();
        for k in 1..=4u64 {
            store.incremental_update(3, 1, &[last.clone()], 1 + k).unwrap();
            assert_eq!(store.storage_bytes(3), initial + k as usize * last_bytes);
        }
    }

    #[test]
    fn disk_round_trip_and_vacuum() {
        let dir = tempfile::tempdir().unwrap();
        let net = net3(4);
        {
            let store = ModelStore::open(dir.path()).unwrap();
            store.store_initial(1, &net, 1).unwrap();
            store.incremental_update(1, 1, &[net.layers()[2].clone()], 2).unwrap();
            store.incremental_update(1, 1, &[net.layers()[2].clone()], 3).unwrap();
        }
        let store = ModelStore::open(dir.path()).unwrap();
        assert_eq!(store.latest(1).unwrap().version_vector(), vec![1, 1, 3]);
        assert_eq!(store.resolve(1, 2).unwrap().version_vector(), vec![1, 1, 2]);
        assert!(store.next_timestamp() > 3);
        let on_disk = fs::read(dir.path().join("models/1/3.2.layer")).unwrap();
        assert_eq!(on_disk, store.record(1, 3, 2).unwrap().payload());

        assert_eq!(store.vacuum(3).unwrap(), 2);
        assert!(!dir.path().join("models/1/3.2.layer").exists());
        let reopened = ModelStore::open(dir.path()).unwrap();
        assert_eq!(reopened.latest(1).unwrap().version_vector(), vec![1, 1, 3]);
        assert_eq!(reopened.record_count(1), 3);
    }

    #[test]
    fn file_names() {
        assert_eq!(parse_layer_file_name("3.17.layer"), Some((3, 17)));
        assert_eq!(parse_layer_file_name("0.17.layer"), None);
        assert_eq!(parse_layer_file_name("3.17.layer.tmp"), None);
        assert_eq!(layer_file_name(3, 17), "3.17.layer");
    }
}
