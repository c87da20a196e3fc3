//! Reproducible experiment drivers shared by the CLI, benches and
//! acceptance tests: drift adaptation under cluster switches and streamed
//! versus fully materialized training input.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::datagen::{drift_clusters, load_wide, Cluster, DriftSpec, GenError};
use crate::engine::{
    AiEngine, AiTask, Batch, BatchSource, EngineError, ModelSpec, StreamParams, TaskKind as AiTaskKind,
};
use crate::exec::{scan_rows, EncodedBatches, EncodingSpec, ExecError, SpecBuilder};
use crate::monitor::{DriftKind, MetricId, Monitor, MonitorConfig};
use crate::nn::{Layer, Loss, Matrix, Network};
use crate::sql::TaskKind;
use crate::storage::{Catalog, DataType};

#[derive(Debug, Clone, PartialEq)]
pub struct DriftConfig {
    pub data: DriftSpec,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub lr: f32,
    /// Step size of the incremental updates after each switch.
    pub finetune_lr: f32,
    /// Passes over the first cluster before the switches start.
    pub warmup_epochs: usize,
    /// Post-switch window length in batches.
    pub window: usize,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            data: DriftSpec { rows_per_cluster: 4096, ..Default::default() },
            hidden: vec![32, 16],
            batch_size: 64,
            lr: 0.05,
            finetune_lr: 0.005,
            warmup_epochs: 3,
            window: 16,
        }
    }
}

/// Losses around one cluster switch.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchOutcome {
    /// 1-based index of the cluster switched to.
    pub cluster: usize,
    pub window_loss_updated: f64,
    pub window_loss_frozen: f64,
    /// Whether the monitor raised drift on the updated model's loss stream
    /// within the window.
    pub detected: bool,
}

impl SwitchOutcome {
    pub fn improved(&self) -> bool {
        self.window_loss_updated < self.window_loss_frozen
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub switches: Vec<SwitchOutcome>,
    /// Prequential per-batch losses of the updated model, clusters 2..k.
    pub updated_curve: Vec<f32>,
    pub frozen_curve: Vec<f32>,
}

impl DriftReport {
    pub fn improved_switches(&self) -> usize {
        self.switches.iter().filter(|s| s.improved()).count()
    }
}

fn cluster_batches(c: &Cluster, d: usize, mean: &[f64], std: &[f64], y_mean: f64, y_std: f64, bs: usize) -> Vec<Batch> {
    let n = c.rows();
    (0..n)
        .step_by(bs)
        .map(|start| {
            let end = (start + bs).min(n);
            let mut f = Vec::with_capacity((end - start) * d);
            for i in start..end {
                for j in 0..d {
                    f.push(((c.features[i * d + j] - mean[j]) / std[j]) as f32);
                }
            }
            let labels = c.labels[start..end].iter().map(|y| ((y - y_mean) / y_std) as f32).collect();
            Batch { features: Matrix::from_vec(end - start, d, f).expect("row width"), labels: Some(labels) }
        })
        .collect()
}

fn source(batches: Vec<Batch>) -> BatchSource {
    Box::new(batches.into_iter().map(Ok))
}

fn sorted_layers(mut layers: Vec<(u16, Layer)>) -> Vec<Layer> {
    layers.sort_by_key(|(i, _)| *i);
    layers.into_iter().map(|(_, l)| l).collect()
}

/// Trains on cluster 1, then streams clusters 2..k through two copies of the
/// model: one fine-tuned incrementally (last layer only), one frozen. Losses
/// are prequential, measured on each batch before the update on it.
pub fn drift_adaptation(engine: &AiEngine, cfg: &DriftConfig) -> Result<DriftReport, ExecError> {
    let clusters = drift_clusters(&cfg.data).map_err(|e| match e {
        GenError::InvalidSpec(m) => ExecError::Unsupported(m),
        GenError::Storage(s) => ExecError::Storage(s),
    })?;
    let d = cfg.data.n_features;
    // Encoding statistics come from the first cluster only, as a deployed
    // model would have them.
    let c1 = &clusters[0];
    let n1 = c1.rows() as f64;
    let mean: Vec<f64> = (0..d).map(|j| (0..c1.rows()).map(|i| c1.features[i * d + j]).sum::<f64>() / n1).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let v = (0..c1.rows()).map(|i| (c1.features[i * d + j] - mean[j]).powi(2)).sum::<f64>() / n1;
            if v.sqrt() < 1e-12 {
                1.0
            } else {
                v.sqrt()
            }
        })
        .collect();
    let y_mean = c1.labels.iter().sum::<f64>() / n1;
    let y_std = (c1.labels.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n1).sqrt().max(1e-12);
    let batches: Vec<Vec<Batch>> =
        clusters.iter().map(|c| cluster_batches(c, d, &mean, &std, y_mean, y_std, cfg.batch_size)).collect();

    let mut dims = vec![d];
    dims.extend(&cfg.hidden);
    dims.push(1);
    let params = StreamParams { batch_size: cfg.batch_size as u32, ..Default::default() };
    let warm: Vec<Batch> = (0..cfg.warmup_epochs.max(1)).flat_map(|_| batches[0].clone()).collect();
    let out = engine.run(AiTask {
        kind: AiTaskKind::Train,
        model: ModelSpec { layer_dims: dims.clone(), loss: Loss::Mse, suffix_len: 0 },
        params,
        seed: cfg.data.seed,
        lr: cfg.lr,
        weights: Vec::new(),
        source: source(warm),
    })?;
    let base = Network::new(sorted_layers(out.layers), Loss::Mse)?;
    let suffix = base.last_param_suffix_len();

    let monitor = Monitor::new(MonitorConfig { capacity: cfg.window.max(1) * 4, ..Default::default() })?;
    let metric = MetricId::new(DriftKind::ModelAccuracy, 0);
    monitor.register(metric);
    // Seed the monitor's baseline with in-distribution losses.
    for b in &batches[0] {
        monitor.observe(metric, base.evaluate(&b.features, b.labels.as_deref().expect("labeled"))? as f64)?;
    }

    let mut updated = base.layers().to_vec();
    let mut report = DriftReport { switches: Vec::new(), updated_curve: Vec::new(), frozen_curve: Vec::new() };
    for (ci, cluster_batches) in batches.iter().enumerate().skip(1) {
        let run = |weights: Vec<Layer>, lr: f32| {
            engine.run(AiTask {
                kind: AiTaskKind::Finetune,
                model: ModelSpec { layer_dims: dims.clone(), loss: Loss::Mse, suffix_len: suffix },
                params,
                seed: cfg.data.seed,
                lr,
                weights,
                source: source(cluster_batches.clone()),
            })
        };
        let up = run(updated.clone(), cfg.finetune_lr)?;
        let frozen = run(base.layers().to_vec(), 0.0)?;
        let w = cfg.window.min(up.losses.len()).max(1);
        let mean_of = |v: &[f32]| v[..w.min(v.len())].iter().map(|x| *x as f64).sum::<f64>() / w as f64;
        let mut detected = false;
        for l in up.losses[..w.min(up.losses.len())].iter().filter(|l| l.is_finite()) {
            detected |= monitor.observe(metric, *l as f64)?.is_some();
        }
        report.switches.push(SwitchOutcome {
            cluster: ci + 1,
            window_loss_updated: mean_of(&up.losses),
            window_loss_frozen: mean_of(&frozen.losses),
            detected,
        });
        report.updated_curve.extend_from_slice(&up.losses);
        report.frozen_curve.extend_from_slice(&frozen.losses);
        let start = updated.len() - suffix;
        for (i, l) in sorted_layers(up.layers).into_iter().enumerate() {
            updated[start + i] = l;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoaderConfig {
    pub rows: usize,
    pub n_features: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for LoaderConfig {
    fn default() -> Self {
        Self { rows: 500_000, n_features: 16, batch_size: 4096, hidden: vec![64, 32], seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoaderRun {
    pub elapsed: Duration,
    pub rows_per_sec: f64,
    /// Largest number of encoded batches held in memory at once.
    pub peak_resident: u64,
    pub final_layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoaderReport {
    pub streamed: LoaderRun,
    pub materialized: LoaderRun,
}

impl LoaderReport {
    pub fn speedup(&self) -> f64 {
        self.streamed.rows_per_sec / self.materialized.rows_per_sec
    }
}

/// Trains one epoch over a generated table twice: once with lazily encoded
/// batches streamed under the credit window, once after encoding the whole
/// table up front. Both runs see identical batches, so the weights agree.
pub fn streaming_vs_materialize(engine: &AiEngine, cfg: &LoaderConfig) -> Result<LoaderReport, ExecError> {
    let catalog = Catalog::in_memory(crate::storage::DEFAULT_POOL_PAGES);
    let table = load_wide(&catalog, "wide", cfg.rows, cfg.n_features, cfg.seed).map_err(|e| match e {
        GenError::InvalidSpec(m) => ExecError::Unsupported(m),
        GenError::Storage(s) => ExecError::Storage(s),
    })?;
    let names: Vec<String> = (0..cfg.n_features).map(|j| format!("x{j}")).collect();
    let mut builder = SpecBuilder::new(&names, &vec![DataType::Float64; cfg.n_features], TaskKind::Value);
    for t in scan_rows(&table, None) {
        let t = t?;
        builder.push(&t[..cfg.n_features], &t[cfg.n_features]);
    }
    let spec: Arc<EncodingSpec> = Arc::new(builder.finish());
    let idx: Vec<usize> = (0..cfg.n_features).collect();
    let mut dims = vec![cfg.n_features];
    dims.extend(&cfg.hidden);
    dims.push(1);
    let task = |source: BatchSource| AiTask {
        kind: AiTaskKind::Train,
        model: ModelSpec { layer_dims: dims.clone(), loss: Loss::Mse, suffix_len: 0 },
        params: StreamParams { batch_size: cfg.batch_size as u32, ..Default::default() },
        seed: cfg.seed,
        lr: 0.01,
        weights: Vec::new(),
        source,
    };
    let lazy = || {
        EncodedBatches::new(scan_rows(&table, None), spec.clone(), idx.clone(), Some(cfg.n_features), cfg.batch_size)
    };

    let start = Instant::now();
    let out = engine.run(task(Box::new(lazy())))?;
    let elapsed = start.elapsed();
    let streamed = LoaderRun {
        elapsed,
        rows_per_sec: cfg.rows as f64 / elapsed.as_secs_f64(),
        peak_resident: out.stats.max_resident,
        final_layers: sorted_layers(out.layers),
    };

    let start = Instant::now();
    let all: Vec<Batch> = lazy().collect::<Result<_, EngineError>>()?;
    let n_batches = all.len() as u64;
    let out = engine.run(task(source(all)))?;
    let elapsed = start.elapsed();
    let materialized = LoaderRun {
        elapsed,
        rows_per_sec: cfg.rows as f64 / elapsed.as_secs_f64(),
        peak_resident: n_batches.max(out.stats.max_resident),
        final_layers: sorted_layers(out.layers),
    };
    Ok(LoaderReport { streamed, materialized })
}
