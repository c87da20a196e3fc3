//! Feature encoding: train-time statistics turn tuples into f32 rows.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{Batch, EngineError};
use crate::nn::Matrix;
use crate::sql::{BoundExpr, TaskKind};
use crate::storage::{DataType, StorageError, Table, Tuple, Value, ValueKey};

/// Rows per data batch unless configured otherwise.
pub const DEFAULT_BATCH_SIZE: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureEncoding {
    /// z-score; `std` is clamped to 1 for constant columns.
    Numeric {
        mean: f64,
        std: f64,
    },
    Bool,
    /// Dictionary id in `1..=vocab.len()` divided by the vocabulary size.
    /// Id 0 is reserved for NULL and values unseen at fit time.
    Text {
        vocab: Vec<String>,
    },
}

impl FeatureEncoding {
    pub fn tag(&self) -> &'static str {
        match self {
            FeatureEncoding::Numeric { .. } => "zscore",
            FeatureEncoding::Bool => "bool",
            FeatureEncoding::Text { .. } => "dict",
        }
    }

    pub fn encode(&self, v: &Value) -> f32 {
        match self {
            FeatureEncoding::Numeric { mean, std } => match v.as_f64() {
                Some(x) => ((x - mean) / std) as f32,
                None => 0.0,
            },
            FeatureEncoding::Bool => match v {
                Value::Bool(true) => 1.0,
                _ => 0.0,
            },
            FeatureEncoding::Text { vocab } => match v {
                Value::Text(s) => match vocab.binary_search(s) {
                    Ok(i) => (i + 1) as f32 / vocab.len() as f32,
                    Err(_) => 0.0,
                },
                _ => 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TargetEncoding {
    /// Regression targets are standardized for training and mapped back on
    /// output.
    Value { mean: f64, std: f64 },
    /// Class labels in sorted order; the label of class `i` is `labels[i]`.
    Class { labels: Vec<Value> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub features: Vec<(String, FeatureEncoding)>,
    pub target: TargetEncoding,
}

impl EncodingSpec {
    pub fn width(&self) -> usize {
        self.features.len()
    }

    pub fn output_dim(&self) -> usize {
        match &self.target {
            TargetEncoding::Value { .. } => 1,
            TargetEncoding::Class { labels } => labels.len(),
        }
    }

    /// Appends the encoding of `row` (already in feature order).
    pub fn encode_into<'a>(&self, row: impl IntoIterator<Item = &'a Value>, out: &mut Vec<f32>) {
        out.extend(row.into_iter().zip(&self.features).map(|(v, (_, e))| e.encode(v)));
    }

    /// Training label, or `None` for a NULL or unknown target.
    pub fn encode_label(&self, v: &Value) -> Option<f32> {
        match &self.target {
            TargetEncoding::Value { mean, std } => v.as_f64().map(|x| ((x - mean) / std) as f32),
            TargetEncoding::Class { labels } => {
                let k = v.key()?;
                labels.iter().position(|l| l.key().as_ref() == Some(&k)).map(|i| i as f32)
            }
        }
    }

    /// Maps one network output row back to the target domain.
    pub fn decode(&self, out: &[f32]) -> Value {
        match &self.target {
            TargetEncoding::Value { mean, std } => Value::Float(out[0] as f64 * std + mean),
            TargetEncoding::Class { labels } => labels[argmax(out)].clone(),
        }
    }
}

/// First index of the maximum; NaN never wins.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Welford accumulator; population variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).sqrt()
        }
    }
}

/// Standard deviation used for scaling: degenerate spread maps to 1.
fn scale(std: f64) -> f64 {
    if std.is_finite() && std > 1e-12 {
        std
    } else {
        1.0
    }
}

enum FeatureStats {
    Numeric(Moments),
    Bool,
    Text(BTreeSet<String>),
}

/// Accumulates encoding statistics over a stream of training rows.
pub struct SpecBuilder {
    names: Vec<String>,
    stats: Vec<FeatureStats>,
    task: TaskKind,
    target_moments: Moments,
    classes: BTreeMap<ValueKey, Value>,
    rows: u64,
}

impl SpecBuilder {
    pub fn new(names: &[String], types: &[DataType], task: TaskKind) -> Self {
        let stats = types
            .iter()
            .map(|t| match t {
                DataType::Int64 | DataType::Float64 => FeatureStats::Numeric(Moments::default()),
                DataType::Bool => FeatureStats::Bool,
                DataType::Text => FeatureStats::Text(BTreeSet::new()),
            })
            .collect();
        Self {
            names: names.to_vec(),
            stats,
            task,
            target_moments: Moments::default(),
            classes: BTreeMap::new(),
            rows: 0,
        }
    }

    /// Adds one row; rows with a NULL target are not training rows and
    /// are ignored. Returns whether the row counted.
    pub fn push<'a>(&mut self, features: impl IntoIterator<Item = &'a Value>, target: &Value) -> bool {
        let Some(key) = target.key() else {
            return false;
        };
        match self.task {
            TaskKind::Value => match target.as_f64() {
                Some(y) => self.target_moments.push(y),
                None => return false,
            },
            TaskKind::Class => {
                self.classes.entry(key).or_insert_with(|| target.clone());
            }
        }
        for (v, s) in features.into_iter().zip(&mut self.stats) {
            match (s, v) {
                (FeatureStats::Numeric(m), v) => {
                    if let Some(x) = v.as_f64() {
                        m.push(x);
                    }
                }
                (FeatureStats::Text(set), Value::Text(t)) => {
                    if !set.contains(t) {
                        set.insert(t.clone());
                    }
                }
                _ => {}
            }
        }
        self.rows += 1;
        true
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn finish(self) -> EncodingSpec {
        let features = self
            .names
            .into_iter()
            .zip(self.stats)
            .map(|(n, s)| {
                let e = match s {
                    FeatureStats::Numeric(m) => FeatureEncoding::Numeric { mean: m.mean(), std: scale(m.std()) },
                    FeatureStats::Bool => FeatureEncoding::Bool,
                    FeatureStats::Text(set) => FeatureEncoding::Text { vocab: set.into_iter().collect() },
                };
                (n, e)
            })
            .collect();
        let target = match self.task {
            TaskKind::Value => {
                TargetEncoding::Value { mean: self.target_moments.mean(), std: scale(self.target_moments.std()) }
            }
            TaskKind::Class => TargetEncoding::Class { labels: self.classes.into_values().collect() },
        };
        EncodingSpec { features, target }
    }
}

/// Committed tuples of `table` matching `filter`, in storage order. Owns
/// everything it needs so it can run on a producer thread.
pub fn scan_rows(
    table: &Arc<Table>,
    filter: Option<BoundExpr>,
) -> impl Iterator<Item = Result<Tuple, StorageError>> + Send + 'static {
    table.scan().filter_map(move |r| match r {
        Ok((_, t)) => match &filter {
            Some(f) if !f.matches(&t) => None,
            _ => Some(Ok(t)),
        },
        Err(e) => Some(Err(e)),
    })
}

/// Lazily turns tuples into batches of at most `batch_size` rows. Only one
/// batch is materialized at a time.
pub struct EncodedBatches<I> {
    rows: I,
    spec: Arc<EncodingSpec>,
    feature_idx: Vec<usize>,
    /// Position of the target in each tuple when labels are wanted. Tuples
    /// with a NULL target are skipped.
    target_idx: Option<usize>,
    batch_size: usize,
    /// Remaining rows to emit.
    remaining: u64,
    /// Rows to drop before emitting.
    skip: u64,
}

impl<I> EncodedBatches<I>
where
    I: Iterator<Item = Result<Tuple, StorageError>>,
{
    pub fn new(
        rows: I,
        spec: Arc<EncodingSpec>,
        feature_idx: Vec<usize>,
        target_idx: Option<usize>,
        batch_size: usize,
    ) -> Self {
        Self { rows, spec, feature_idx, target_idx, batch_size: batch_size.max(1), remaining: u64::MAX, skip: 0 }
    }

    /// Emits rows `skip..skip+take` of the labeled stream.
    pub fn window(mut self, skip: u64, take: u64) -> Self {
        self.skip = skip;
        self.remaining = take;
        self
    }
}

impl<I> Iterator for EncodedBatches<I>
where
    I: Iterator<Item = Result<Tuple, StorageError>>,
{
    type Item = Result<Batch, EngineError>;

    fn next(&mut self) -> Option<Self::Item> {
        let w = self.spec.width();
        let mut feats = Vec::with_capacity(self.batch_size.min(self.remaining as usize) * w);
        let mut labels = self.target_idx.map(|_| Vec::new());
        let mut n = 0;
        while n < self.batch_size && self.remaining > 0 {
            let t = match self.rows.next() {
                Some(Ok(t)) => t,
                Some(Err(e)) => return Some(Err(EngineError::Source(e.to_string()))),
                None => {
                    self.remaining = 0;
                    break;
                }
            };
            let label = match self.target_idx {
                Some(ti) => match self.spec.encode_label(&t[ti]) {
                    Some(y) => Some(y),
                    None => continue,
                },
                None => None,
            };
            if self.skip > 0 {
                self.skip -= 1;
                continue;
            }
            self.spec.encode_into(self.feature_idx.iter().map(|&i| &t[i]), &mut feats);
            if let (Some(ls), Some(y)) = (labels.as_mut(), label) {
                ls.push(y);
            }
            n += 1;
            self.remaining -= 1;
        }
        if n == 0 {
            return None;
        }
        Some(Ok(Batch { features: Matrix::from_vec(n, w, feats).expect("row width matches spec"), labels }))
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(col: &[Value]) -> FeatureEncoding {
        let mut b = SpecBuilder::new(&["x".into()], &[col[0].data_type().unwrap()], TaskKind::Value);
        for v in col {
            b.push([v], &Value::Float(0.0));
        }
        b.finish().features.remove(0).1
    }

    #[test]
    fn zscore_of_two_four_six() {
        let e = fit(&[Value::Int(2), Value::Int(4), Value::Int(6)]);
        let got: Vec<f32> = [2, 4, 6].iter().map(|v| e.encode(&Value::Int(*v))).collect();
        for (g, want) in got.iter().zip([-1.2247f32, 0.0, 1.2247]) {
            assert!((g - want).abs() < 1e-4, "{got:?}");
        }
    }

    #[test]
    fn constant_column_encodes_to_zero() {
        let e = fit(&vec![Value::Float(3.5); 4]);
        assert_eq!(e, FeatureEncoding::Numeric { mean: 3.5, std: 1.0 });
        assert_eq!(e.encode(&Value::Float(3.5)), 0.0);
    }

    #[test]
    fn text_dictionary_reserves_zero() {
        let e = fit(&[Value::Text("b".into()), Value::Text("a".into()), Value::Text("b".into())]);
        assert_eq!(e.encode(&Value::Text("a".into())), 0.5);
        assert_eq!(e.encode(&Value::Text("b".into())), 1.0);
        assert_eq!(e.encode(&Value::Text("zzz".into())), 0.0);
        assert_eq!(e.encode(&Value::Null), 0.0);
    }

    #[test]
    fn class_labels_sorted_and_decoded() {
        let mut b = SpecBuilder::new(&[], &[], TaskKind::Class);
        for y in [1, 0, 1, 2] {
            b.push([], &Value::Int(y));
        }
        assert!(!b.push([], &Value::Null));
        let s = b.finish();
        assert_eq!(s.output_dim(), 3);
        assert_eq!(s.encode_label(&Value::Int(2)), Some(2.0));
        assert_eq!(s.encode_label(&Value::Int(9)), None);
        assert_eq!(s.decode(&[0.1, 0.7, 0.2]), Value::Int(1));
    }

    #[test]
    fn batches_respect_size_and_window() {
        let spec = Arc::new(EncodingSpec {
            features: vec![("x".into(), FeatureEncoding::Numeric { mean: 0.0, std: 1.0 })],
            target: TargetEncoding::Value { mean: 0.0, std: 1.0 },
        });
        let rows: Vec<Result<Tuple, StorageError>> = (0..10)
            .map(|i| Ok(vec![Value::Int(i), if i == 3 { Value::Null } else { Value::Float(i as f64) }]))
            .collect();
        let b: Vec<Batch> = EncodedBatches::new(rows.clone().into_iter(), spec.clone(), vec![0], Some(1), 4)
            .map(Result::unwrap)
            .collect();
        assert_eq!(b.iter().map(|b| b.features.rows()).collect::<Vec<_>>(), vec![4, 4, 1]);
        assert_eq!(b[0].labels.as_deref(), Some(&[0.0, 1.0, 2.0, 4.0][..]));
        let tail: Vec<Batch> =
            EncodedBatches::new(rows.into_iter(), spec, vec![0], Some(1), 4).window(7, 5).map(Result::unwrap).collect();
        assert_eq!(tail.len(), 1);
        assert_eq!(tail[0].features.data(), &[8.0, 9.0]);
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }
}
