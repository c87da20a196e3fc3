//! Statement execution. PREDICT runs scan, optional train or fine-tune,
//! then inference, delegating all model work to the AI engine.

mod encode;
mod plan;
mod query;

pub use encode::{
    argmax, fnv1a, scan_rows, EncodedBatches, EncodingSpec, FeatureEncoding, Moments, SpecBuilder, TargetEncoding,
    DEFAULT_BATCH_SIZE,
};
pub use plan::{plan_predict, ModelKey, ModelStatus, PhysicalPlan};
pub use query::plan_select;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::engine::{
    AiEngine, AiTask, Batch, BatchSource, EngineError, ModelSpec, StreamParams, TaskKind as AiTaskKind,
};
use crate::models::{ModelBuffer, ModelError, ModelId, ModelStore};
use crate::monitor::{DriftAction, DriftKind, MetricId, Monitor, MonitorError};
use crate::nn::{Loss, Matrix, Network, NnError};
use crate::sql::{self, analyze_predict, PredictStatement, ResolvedPredict, SqlError, Statement, TaskKind};
use crate::storage::{Catalog, StorageError, Tuple, Value};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("training predicate of {0} matches no labeled rows")]
    EmptyTrainingSet(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ExecError {
    fn from(e: std::io::Error) -> Self {
        ExecError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Tuple>,
}

impl fmt::Display for ResultSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(|v| v.to_string()).collect()).collect();
        let mut w: Vec<usize> = self.columns.iter().map(|c| c.chars().count()).collect();
        for r in &cells {
            for (i, c) in r.iter().enumerate() {
                w[i] = w[i].max(c.chars().count());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, row: &[String]| -> fmt::Result {
            let parts: Vec<String> = row.iter().zip(&w).map(|(c, w)| format!(" {c:<w$} ")).collect();
            writeln!(f, "|{}|", parts.join("|"))
        };
        let rule: Vec<String> = w.iter().map(|w| "-".repeat(w + 2)).collect();
        line(f, &self.columns)?;
        writeln!(f, "|{}|", rule.join("+"))?;
        for r in &cells {
            line(f, r)?;
        }
        write!(f, "({} row{})", self.rows.len(), if self.rows.len() == 1 { "" } else { "s" })
    }
}

/// Quality on the held-out tail of the training stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Holdout {
    pub rows: u64,
    /// Model loss (the training objective, on encoded labels).
    pub loss: f64,
    /// MSE in target units for regression, error rate for classification.
    pub metric: f64,
    /// The same metric for the train mean or majority class.
    pub baseline_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExecutionReport {
    pub plan: String,
    pub model: Option<ModelId>,
    pub trained: bool,
    pub fine_tuned: bool,
    pub rows_scanned: u64,
    pub batches_streamed: u64,
    pub train_losses: Vec<f32>,
    pub holdout: Option<Holdout>,
    pub drift: Option<DriftAction>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryResult {
    Created(String),
    Affected { verb: &'static str, rows: usize },
    Rows(ResultSet),
    Predict { rows: ResultSet, report: ExecutionReport },
}

impl fmt::Display for QueryResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryResult::Created(t) => write!(f, "CREATE TABLE {t}"),
            QueryResult::Affected { verb, rows } => write!(f, "{verb} {rows}"),
            QueryResult::Rows(rs) => write!(f, "{rs}"),
            QueryResult::Predict { rows, report } => {
                writeln!(f, "{rows}")?;
                write!(
                    f,
                    "plan: {}; scanned {} rows, streamed {} batches",
                    report.plan, report.rows_scanned, report.batches_streamed
                )?;
                if let Some(h) = &report.holdout {
                    write!(f, "; holdout {} rows, metric {:.4} (baseline {:.4})", h.rows, h.metric, h.baseline_metric)?;
                }
                write!(f, "; {:.1} ms", report.wall_time.as_secs_f64() * 1e3)
            }
        }
    }
}

/// Everything needed to reuse a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub key: ModelKey,
    pub mid: ModelId,
    pub spec: EncodingSpec,
    /// Train-time mean or majority class, the naive predictor.
    pub baseline: Value,
}

struct TrainScope {
    /// Labeled rows matching the training predicate.
    labeled: u64,
    /// Leading rows used for fitting; the rest are held out.
    fit: u64,
}

impl TrainScope {
    fn new(labeled: u64) -> Self {
        Self { labeled, fit: labeled - labeled / 10 }
    }

    fn held_out(&self) -> u64 {
        self.labeled - self.fit
    }
}

/// An embedded database instance. All methods take `&self`; sessions may
/// share one instance across threads.
pub struct Database {
    config: Config,
    catalog: Catalog,
    models: ModelStore,
    buffer: ModelBuffer,
    engine: AiEngine,
    monitor: Arc<Monitor>,
    registry: RwLock<HashMap<ModelKey, ModelEntry>>,
    /// Timestamp of the last sample written to `metrics.csv`.
    metrics_flushed: RwLock<u64>,
}

fn loss_of(task: TaskKind) -> Loss {
    match task {
        TaskKind::Value => Loss::Mse,
        TaskKind::Class => Loss::CrossEntropy,
    }
}

fn accuracy_metric(mid: ModelId) -> MetricId {
    MetricId::new(DriftKind::ModelAccuracy, mid)
}

impl Database {
    pub fn open(config: Config) -> Result<Self, ExecError> {
        let monitor = Arc::new(Monitor::new(config.monitor())?);
        let (catalog, models, registry) = match &config.data_dir {
            None => (Catalog::in_memory(config.buffer_pool_pages), ModelStore::in_memory(), HashMap::new()),
            Some(dir) => {
                let catalog = Catalog::open(dir, config.buffer_pool_pages)?;
                let models = ModelStore::open(dir)?;
                let path = dir.join("registry.json");
                let mut registry = HashMap::new();
                if path.exists() {
                    let entries: Vec<ModelEntry> = serde_json::from_slice(&fs::read(&path)?)
                        .map_err(|e| ExecError::Io(format!("{}: {e}", path.display())))?;
                    for e in entries {
                        if models.contains(e.mid) {
                            monitor.register(accuracy_metric(e.mid));
                            registry.insert(e.key.clone(), e);
                        }
                    }
                }
                (catalog, models, registry)
            }
        };
        Ok(Self {
            buffer: ModelBuffer::new(config.model_buffer),
            engine: AiEngine::new(config.engine()),
            catalog,
            models,
            monitor,
            registry: RwLock::new(registry),
            metrics_flushed: RwLock::new(0),
            config,
        })
    }

    pub fn in_memory() -> Self {
        Self::open(Config::default()).expect("in-memory database opens")
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn models(&self) -> &ModelStore {
        &self.models
    }

    pub fn model_buffer(&self) -> &ModelBuffer {
        &self.buffer
    }

    pub fn monitor(&self) -> &Arc<Monitor> {
        &self.monitor
    }

    pub fn engine(&self) -> &AiEngine {
        &self.engine
    }

    pub fn model_entry(&self, key: &ModelKey) -> Option<ModelEntry> {
        self.registry.read().get(key).cloned()
    }

    pub fn model_entries(&self) -> Vec<ModelEntry> {
        let mut v: Vec<ModelEntry> = self.registry.read().values().cloned().collect();
        v.sort_by_key(|e| e.mid);
        v
    }

    /// Runs every statement of a script in order, stopping at the first
    /// error. Statements before the error keep their effects.
    pub fn execute(&self, script: &str) -> Result<Vec<QueryResult>, ExecError> {
        let mut out = Vec::new();
        self.execute_with(script, |r| out.push(r))?;
        Ok(out)
    }

    /// Like [`Database::execute`], handing each result to `sink` as soon as
    /// its statement finishes. Returns the number of statements executed.
    pub fn execute_with(&self, script: &str, mut sink: impl FnMut(QueryResult)) -> Result<usize, ExecError> {
        let mut n = 0;
        for (offset, text) in sql::split_statements(script)? {
            let stmt = sql::parse_statement(&text).map_err(|e| shift(e, script, offset))?;
            sink(self.execute_statement(&stmt)?);
            n += 1;
        }
        Ok(n)
    }

    pub fn execute_one(&self, sql: &str) -> Result<QueryResult, ExecError> {
        self.execute_statement(&sql::parse_statement(sql)?)
    }

    pub fn execute_statement(&self, stmt: &Statement) -> Result<QueryResult, ExecError> {
        match stmt {
            Statement::CreateTable { name, columns } => {
                let t = self.catalog.create_table(query::create_schema(name, columns))?;
                Ok(QueryResult::Created(t.name().to_string()))
            }
            Statement::Insert { table, columns, rows } => {
                let t = self.catalog.table(table).map_err(|_| SqlError::UnknownTable(table.clone()))?;
                let tuples = query::insert_rows(t.schema(), columns.as_deref(), rows)?;
                let n = t.insert_many(tuples)?;
                Ok(QueryResult::Affected { verb: "INSERT", rows: n })
            }
            Statement::Select(s) => {
                let mut scanned = 0;
                Ok(QueryResult::Rows(query::select(s, &self.catalog, &mut scanned)?))
            }
            Statement::Update { table, assignments, filter } => {
                let t = self.catalog.table(table).map_err(|_| SqlError::UnknownTable(table.clone()))?;
                let scope = sql::Scope::single(t.schema());
                let pred = filter.as_ref().map(|f| sql::bind_predicate(f, &scope)).transpose()?;
                let assigns = query::bind_assignments(t.schema(), assignments)?;
                let mut targets = Vec::new();
                for r in t.scan() {
                    let (rid, row) = r?;
                    if pred.as_ref().is_none_or(|p| p.matches(&row)) {
                        let new = query::apply_assignments(t.schema(), &row, &assigns)?;
                        targets.push((rid, new));
                    }
                }
                let n = targets.len();
                for (rid, new) in targets {
                    t.update(rid, new)?;
                }
                Ok(QueryResult::Affected { verb: "UPDATE", rows: n })
            }
            Statement::Delete { table, filter } => {
                let t = self.catalog.table(table).map_err(|_| SqlError::UnknownTable(table.clone()))?;
                let scope = sql::Scope::single(t.schema());
                let pred = filter.as_ref().map(|f| sql::bind_predicate(f, &scope)).transpose()?;
                let mut targets = Vec::new();
                for r in t.scan() {
                    let (rid, row) = r?;
                    if pred.as_ref().is_none_or(|p| p.matches(&row)) {
                        targets.push(rid);
                    }
                }
                let mut n = 0;
                for rid in targets {
                    n += t.delete(rid)? as usize;
                }
                Ok(QueryResult::Affected { verb: "DELETE", rows: n })
            }
            Statement::Predict(p) => {
                let (rows, report) = self.predict(p)?;
                Ok(QueryResult::Predict { rows, report })
            }
        }
    }

    fn status(&self, key: &ModelKey) -> ModelStatus {
        match self.registry.read().get(key) {
            None => ModelStatus::Missing,
            Some(e) if self.monitor.is_flagged(e.mid) => ModelStatus::Drifted(e.mid),
            Some(e) => ModelStatus::Healthy(e.mid),
        }
    }

    /// Plans a PREDICT without running it.
    pub fn explain_predict(&self, stmt: &PredictStatement) -> Result<PhysicalPlan, ExecError> {
        let r = analyze_predict(stmt, &self.catalog)?;
        Ok(plan_predict(&r, self.status(&ModelKey::of(&r))))
    }

    pub fn predict(&self, stmt: &PredictStatement) -> Result<(ResultSet, ExecutionReport), ExecError> {
        let start = Instant::now();
        let r = analyze_predict(stmt, &self.catalog)?;
        let key = ModelKey::of(&r);
        let plan = plan_predict(&r, self.status(&key));
        let mut rep = ExecutionReport { plan: plan.to_string(), ..Default::default() };
        let PhysicalPlan::Inference { prepare, .. } = &plan else { unreachable!("PREDICT plans end in Inference") };
        let entry = match prepare.as_deref() {
            Some(PhysicalPlan::Train { .. }) => self.train(&r, &key, &mut rep)?,
            Some(PhysicalPlan::FineTune { .. }) => {
                let e = self.model_entry(&key).expect("planned fine-tune has a model");
                self.fine_tune(&r, &e, &mut rep)?;
                e
            }
            _ => self.model_entry(&key).expect("planned inference has a model"),
        };
        rep.model = Some(entry.mid);
        self.evaluate_holdout(&r, &entry, &mut rep)?;
        if self.config.eager_finetune && !rep.fine_tuned && self.monitor.is_flagged(entry.mid) {
            self.fine_tune(&r, &entry, &mut rep)?;
            rep.plan.push_str(" (+FineTune)");
        }
        let rows = self.infer(&r, &entry, &mut rep)?;
        rep.wall_time = start.elapsed();
        Ok((rows, rep))
    }

    fn params(&self) -> StreamParams {
        StreamParams { batch_size: self.config.batch_size as u32, ..Default::default() }
    }

    fn count_labeled(
        &self,
        r: &ResolvedPredict,
        spec: Option<&EncodingSpec>,
        rep: &mut ExecutionReport,
    ) -> Result<u64, ExecError> {
        let mut n = 0;
        for t in scan_rows(&r.table, r.train_filter.clone()) {
            let t = t?;
            rep.rows_scanned += 1;
            let y = &t[r.target_index];
            let labeled = match spec {
                Some(s) => s.encode_label(y).is_some(),
                None => y.as_f64().is_some() || (r.task == TaskKind::Class && !y.is_null()),
            };
            n += labeled as u64;
        }
        Ok(n)
    }

    /// Lazily encoded labeled rows `skip..skip+take`, repeated `epochs` times.
    fn labeled_source(
        &self,
        r: &ResolvedPredict,
        spec: &Arc<EncodingSpec>,
        skip: u64,
        take: u64,
        epochs: usize,
    ) -> BatchSource {
        let table = r.table.clone();
        let filter = r.train_filter.clone();
        let (spec, idx, target, bs) = (spec.clone(), r.feature_indices.clone(), r.target_index, self.config.batch_size);
        Box::new((0..epochs).flat_map(move |_| {
            EncodedBatches::new(scan_rows(&table, filter.clone()), spec.clone(), idx.clone(), Some(target), bs)
                .window(skip, take)
        }))
    }

    fn train(&self, r: &ResolvedPredict, key: &ModelKey, rep: &mut ExecutionReport) -> Result<ModelEntry, ExecError> {
        let scope = TrainScope::new(self.count_labeled(r, None, rep)?);
        if scope.fit == 0 {
            return Err(ExecError::EmptyTrainingSet(r.table.name().to_string()));
        }
        let mut builder = SpecBuilder::new(&r.features, &r.feature_types, r.task);
        let mut class_counts: HashMap<String, (u64, Value)> = HashMap::new();
        for t in scan_rows(&r.table, r.train_filter.clone()) {
            let t = t?;
            rep.rows_scanned += 1;
            if builder.rows() == scope.fit {
                break;
            }
            let y = &t[r.target_index];
            if builder.push(r.feature_indices.iter().map(|&i| &t[i]), y) && r.task == TaskKind::Class {
                class_counts.entry(format!("{:?}", y.key())).or_insert((0, y.clone())).0 += 1;
            }
        }
        let spec = Arc::new(builder.finish());
        let baseline = match &spec.target {
            TargetEncoding::Value { mean, .. } => Value::Float(*mean),
            TargetEncoding::Class { labels } => {
                // Majority class; ties go to the smallest label.
                let mut best: Option<(u64, usize)> = None;
                for (i, l) in labels.iter().enumerate() {
                    let c = class_counts.get(&format!("{:?}", l.key())).map_or(0, |c| c.0);
                    if best.is_none_or(|(bc, _)| c > bc) {
                        best = Some((c, i));
                    }
                }
                labels[best.map_or(0, |b| b.1)].clone()
            }
        };
        let mut dims = vec![spec.width()];
        dims.extend(&self.config.hidden);
        dims.push(spec.output_dim());
        let loss = loss_of(r.task);
        let out = self.engine.run(AiTask {
            kind: AiTaskKind::Train,
            model: ModelSpec { layer_dims: dims, loss, suffix_len: 0 },
            params: self.params(),
            seed: self.config.seed,
            lr: self.config.lr,
            weights: Vec::new(),
            source: self.labeled_source(r, &spec, 0, scope.fit, self.config.epochs),
        })?;
        rep.rows_scanned += scope.labeled * self.config.epochs as u64;
        rep.batches_streamed += out.stats.batches_sent;
        rep.train_losses.extend_from_slice(&out.losses);
        let mut layers = out.layers;
        layers.sort_by_key(|(i, _)| *i);
        let net = Network::new(layers.into_iter().map(|(_, l)| l).collect(), loss)?;
        let mid = self.models.allocate_mid();
        self.models.store_initial(mid, &net, self.models.next_timestamp())?;
        let entry = ModelEntry { key: key.clone(), mid, spec: (*spec).clone(), baseline };
        self.registry.write().insert(key.clone(), entry.clone());
        self.save_registry()?;
        self.monitor.register(accuracy_metric(mid));
        rep.trained = true;
        Ok(entry)
    }

    fn current_net(&self, mid: ModelId) -> Result<Arc<Network>, ExecError> {
        Ok(self.buffer.get(&self.models, mid, self.models.current_timestamp())?)
    }

    fn fine_tune(&self, r: &ResolvedPredict, entry: &ModelEntry, rep: &mut ExecutionReport) -> Result<(), ExecError> {
        let spec = Arc::new(entry.spec.clone());
        let scope = TrainScope::new(self.count_labeled(r, Some(&spec), rep)?);
        if scope.fit == 0 {
            return Err(ExecError::EmptyTrainingSet(r.table.name().to_string()));
        }
        let net = self.current_net(entry.mid)?;
        let suffix = net.last_param_suffix_len();
        let out = self.engine.run(AiTask {
            kind: AiTaskKind::Finetune,
            model: ModelSpec { layer_dims: net.layer_dims(), loss: net.loss(), suffix_len: suffix },
            params: self.params(),
            seed: self.config.seed,
            lr: self.config.lr,
            weights: net.layers().to_vec(),
            source: self.labeled_source(r, &spec, 0, scope.fit, self.config.epochs),
        })?;
        rep.rows_scanned += scope.labeled * self.config.epochs as u64;
        rep.batches_streamed += out.stats.batches_sent;
        rep.train_losses.extend_from_slice(&out.losses);
        let mut layers = out.layers;
        layers.sort_by_key(|(i, _)| *i);
        let layers: Vec<_> = layers.into_iter().map(|(_, l)| l).collect();
        self.models.incremental_update(entry.mid, suffix, &layers, self.models.next_timestamp())?;
        self.monitor.clear_flag(entry.mid);
        rep.fine_tuned = true;
        Ok(())
    }

    /// Scores the held-out tail and reports the loss to the monitor.
    fn evaluate_holdout(
        &self,
        r: &ResolvedPredict,
        entry: &ModelEntry,
        rep: &mut ExecutionReport,
    ) -> Result<(), ExecError> {
        let spec = Arc::new(entry.spec.clone());
        let scope = TrainScope::new(self.count_labeled(r, Some(&spec), rep)?);
        if scope.held_out() == 0 {
            return Ok(());
        }
        let net = self.current_net(entry.mid)?;
        let naive = spec.encode_label(&entry.baseline);
        let (mut loss, mut metric, mut base) = (0.0f64, 0.0f64, 0.0f64);
        let mut n = 0u64;
        for b in self.labeled_source(r, &spec, scope.fit, scope.held_out(), 1) {
            let b = b?;
            let labels = b.labels.as_ref().expect("labeled source");
            let rows = b.features.rows();
            loss += net.evaluate(&b.features, labels)? as f64 * rows as f64;
            let out = net.forward(&b.features)?;
            for (i, y) in labels.iter().enumerate() {
                let pred = out.row(i);
                match &spec.target {
                    TargetEncoding::Value { std, .. } => {
                        let s2 = std * std;
                        metric += ((pred[0] - y) as f64).powi(2) * s2;
                        base += ((naive.unwrap_or(0.0) - y) as f64).powi(2) * s2;
                    }
                    TargetEncoding::Class { .. } => {
                        metric += (argmax(pred) as f32 != *y) as u8 as f64;
                        base += (naive != Some(*y)) as u8 as f64;
                    }
                }
            }
            n += rows as u64;
        }
        rep.rows_scanned += scope.labeled;
        if n == 0 {
            return Ok(());
        }
        let nf = n as f64;
        let h = Holdout { rows: n, loss: loss / nf, metric: metric / nf, baseline_metric: base / nf };
        rep.drift = self.monitor.observe_and_route(accuracy_metric(entry.mid), h.loss)?;
        rep.holdout = Some(h);
        Ok(())
    }

    fn infer(
        &self,
        r: &ResolvedPredict,
        entry: &ModelEntry,
        rep: &mut ExecutionReport,
    ) -> Result<ResultSet, ExecError> {
        let feature_rows: Vec<Tuple> = match &r.inline_rows {
            Some(rows) => rows.clone(),
            None => {
                let mut v = Vec::new();
                for t in scan_rows(&r.table, r.infer_filter.clone()) {
                    let t = t?;
                    v.push(r.feature_indices.iter().map(|&i| t[i].clone()).collect());
                }
                rep.rows_scanned += r.table.row_count();
                v
            }
        };
        let mut columns = vec![r.target.clone()];
        columns.extend(r.features.iter().cloned());
        if feature_rows.is_empty() {
            return Ok(ResultSet { columns, rows: Vec::new() });
        }
        let spec = Arc::new(entry.spec.clone());
        let net = self.current_net(entry.mid)?;
        let w = spec.width();
        let bs = self.config.batch_size;
        let batches: Vec<Batch> = feature_rows
            .chunks(bs)
            .map(|chunk| {
                let mut f = Vec::with_capacity(chunk.len() * w);
                for row in chunk {
                    spec.encode_into(row, &mut f);
                }
                Batch { features: Matrix::from_vec(chunk.len(), w, f).expect("row width matches spec"), labels: None }
            })
            .collect();
        let out = self.engine.run(AiTask {
            kind: AiTaskKind::Infer,
            model: ModelSpec { layer_dims: net.layer_dims(), loss: net.loss(), suffix_len: 0 },
            params: self.params(),
            seed: self.config.seed,
            lr: 0.0,
            weights: net.layers().to_vec(),
            source: Box::new(batches.into_iter().map(Ok)),
        })?;
        rep.batches_streamed += out.stats.batches_sent;
        let k = spec.output_dim();
        if out.predictions.len() != feature_rows.len() * k {
            return Err(EngineError::Protocol(format!(
                "{} predictions for {} rows of width {k}",
                out.predictions.len(),
                feature_rows.len()
            ))
            .into());
        }
        let rows = feature_rows
            .into_iter()
            .zip(out.predictions.chunks(k))
            .map(|(f, p)| {
                let mut row = vec![spec.decode(p)];
                row.extend(f);
                row
            })
            .collect();
        Ok(ResultSet { columns, rows })
    }

    fn save_registry(&self) -> Result<(), ExecError> {
        let Some(dir) = &self.config.data_dir else {
            return Ok(());
        };
        let entries = self.model_entries();
        let json = serde_json::to_vec_pretty(&entries).map_err(|e| ExecError::Io(e.to_string()))?;
        let tmp = dir.join("registry.json.tmp");
        fs::write(&tmp, json)?;
        fs::rename(tmp, dir.join("registry.json"))?;
        Ok(())
    }

    pub fn metrics_path(&self) -> Option<PathBuf> {
        self.config.data_dir.as_ref().map(|d| d.join("metrics.csv"))
    }

    /// Appends monitor samples recorded since the last flush to
    /// `metrics.csv` in the data directory.
    pub fn flush_metrics(&self) -> Result<(), ExecError> {
        let Some(path) = self.metrics_path() else {
            return Ok(());
        };
        let samples = self.monitor.samples();
        let mut flushed = self.metrics_flushed.write();
        let mut fresh_samples: Vec<_> = samples.into_iter().filter(|(_, s)| s.ts > *flushed).collect();
        if fresh_samples.is_empty() {
            return Ok(());
        }
        fresh_samples.sort_by_key(|(_, s)| s.ts);
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
        if fresh {
            writeln!(f, "metric_id,ts,value,baseline")?;
        }
        for (m, s) in &fresh_samples {
            let b = s.baseline.map(|b| b.to_string()).unwrap_or_default();
            writeln!(f, "{m},{},{},{b}", s.ts, s.value)?;
            *flushed = s.ts;
        }
        Ok(())
    }
}

impl Drop for Database {
    fn drop(&mut self) {
        if let Err(e) = self.flush_metrics() {
            log::warn!("could not write metrics: {e}");
        }
    }
}

/// Moves a statement-relative syntax position into script coordinates.
fn shift(e: SqlError, script: &str, offset: usize) -> SqlError {
    match e {
        SqlError::Syntax { message, offset: o, .. } => {
            let abs = offset + o;
            let before = &script[..abs.min(script.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            SqlError::Syntax { message, line, col, offset: abs }
        }
        e => e,
    }
}
