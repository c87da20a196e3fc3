//! Event-driven AI engine: one dispatcher per task negotiates with a
//! runtime and streams data batches to it over a framed wire protocol.

mod dispatcher;
pub mod frame;
pub mod message;
pub mod runtime;

pub use dispatcher::{DispatchStats, TaskEvent, TaskHandle, TaskOutcome};
pub use frame::{Frame, FrameType, MAX_PAYLOAD};
pub use message::{
    DataBatch, ErrorMsg, Hello, Message, ParamDelta, ResultKind, ResultMsg, SetupAck, StreamParams, TaskKind,
    TaskSetup, WeightsMsg, PROTOCOL_VERSION,
};
pub use runtime::{
    serve_connection, Connection, FrameReader, InProcessConnection, RuntimeConfig, RuntimeSession, TcpConnection,
    TcpRuntimeServer,
};

use std::net::{SocketAddr, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use thiserror::Error;

use crate::nn::{Layer, Loss, Matrix, NnError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("protocol version mismatch: {0}")]
    ProtocolVersionMismatch(String),
    #[error("handshake rejected: {0}")]
    HandshakeRejected(String),
    #[error("runtime unavailable: {0}")]
    RuntimeUnavailable(String),
    #[error("peer closed the connection")]
    PeerClosed,
    #[error("no progress from runtime within {0:?}")]
    BackpressureTimeout(Duration),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("runtime error {code}: {message}")]
    Runtime { code: String, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("data source: {0}")]
    Source(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl EngineError {
    pub(crate) fn from_io(e: std::io::Error) -> Self {
        use std::io::ErrorKind::*;
        match e.kind() {
            BrokenPipe | ConnectionReset | ConnectionAborted | UnexpectedEof => EngineError::PeerClosed,
            _ => EngineError::Io(e.to_string()),
        }
    }
}

/// Where tasks run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuntimeEndpoint {
    InProcess,
    Tcp(String),
}

impl FromStr for RuntimeEndpoint {
    type Err = EngineError;

    /// `inprocess` or `tcp:<host>:<port>`.
    fn from_str(s: &str) -> Result<Self, EngineError> {
        if s == "inprocess" {
            return Ok(RuntimeEndpoint::InProcess);
        }
        match s.strip_prefix("tcp:") {
            Some(addr) if addr.contains(':') => Ok(RuntimeEndpoint::Tcp(addr.to_string())),
            _ => Err(EngineError::InvalidTask(format!("runtime must be inprocess or tcp:<host>:<port>, got {s}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub endpoint: RuntimeEndpoint,
    /// Use the in-process runtime when a remote one cannot be reached.
    pub fallback_inprocess: bool,
    /// Maximum batches in flight without a result.
    pub window: u32,
    pub timeout: Duration,
    pub runtime: RuntimeConfig,
}

/// Default streaming window in batches.
pub const DEFAULT_WINDOW: u32 = 80;

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            endpoint: RuntimeEndpoint::InProcess,
            fallback_inprocess: false,
            window: DEFAULT_WINDOW,
            timeout: Duration::from_secs(30),
            runtime: RuntimeConfig::default(),
        }
    }
}

/// Architecture shipped in TASK_SETUP.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// `[in, hidden..., out]`.
    pub layer_dims: Vec<usize>,
    pub loss: Loss,
    /// Trailing layers trained by FINETUNE.
    pub suffix_len: usize,
}

/// One batch produced by a data source.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Option<Vec<f32>>,
}

pub type BatchSource = Box<dyn Iterator<Item = Result<Batch, EngineError>> + Send>;

pub struct AiTask {
    pub kind: TaskKind,
    pub model: ModelSpec,
    pub params: StreamParams,
    pub seed: u64,
    pub lr: f32,
    /// Full layer list for FINETUNE and INFER; empty for TRAIN.
    pub weights: Vec<Layer>,
    pub source: BatchSource,
}

impl AiTask {
    fn validate(&self) -> Result<(), EngineError> {
        self.params.validate()?;
        if self.model.layer_dims.len() < 2 || self.model.layer_dims.contains(&0) {
            return Err(EngineError::InvalidTask(format!("bad layer dims {:?}", self.model.layer_dims)));
        }
        if self.model.layer_dims[0] > u16::MAX as usize {
            return Err(EngineError::InvalidTask("more than 65535 feature columns".into()));
        }
        match self.kind {
            TaskKind::Train => {}
            TaskKind::Infer | TaskKind::Finetune if self.weights.is_empty() => {
                return Err(EngineError::InvalidTask("FINETUNE and INFER need the current weights".into()));
            }
            _ => {}
        }
        if self.kind == TaskKind::Finetune && (self.model.suffix_len == 0 || self.model.suffix_len > self.weights.len())
        {
            return Err(EngineError::InvalidTask(format!(
                "suffix_len {} for {} layers",
                self.model.suffix_len,
                self.weights.len()
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(EngineError::InvalidTask(format!("learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// Accepts tasks from any thread and runs each on its own dispatcher.
pub struct AiEngine {
    config: EngineConfig,
    next_task: AtomicU64,
}

impl AiEngine {
    pub fn new(config: EngineConfig) -> Self {
        Self { config, next_task: AtomicU64::new(1) }
    }

    pub fn in_process() -> Self {
        Self::new(EngineConfig::default())
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn connect(&self) -> Result<Box<dyn Connection>, EngineError> {
        match &self.config.endpoint {
            RuntimeEndpoint::InProcess => Ok(Box::new(InProcessConnection::spawn(self.config.runtime))),
            RuntimeEndpoint::Tcp(addr) => {
                let attempt = resolve(addr)
                    .and_then(|a| TcpConnection::connect(a, self.config.timeout.min(Duration::from_secs(5))));
                match attempt {
                    Ok(c) => Ok(Box::new(c)),
                    Err(e) if self.config.fallback_inprocess => {
                        log::warn!("{e}; falling back to the in-process runtime");
                        Ok(Box::new(InProcessConnection::spawn(self.config.runtime)))
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }

    /// Validates, connects and starts streaming. Progress arrives on the
    /// handle's event queue.
    pub fn submit(&self, task: AiTask) -> Result<TaskHandle, EngineError> {
        task.validate()?;
        let conn = self.connect()?;
        let task_id = self.next_task.fetch_add(1, Ordering::Relaxed);
        Ok(dispatcher::spawn(task_id, task, conn, self.config.window.max(1), self.config.timeout))
    }

    /// Submits and waits for the outcome.
    pub fn run(&self, task: AiTask) -> Result<TaskOutcome, EngineError> {
        self.submit(task)?.wait()
    }
}

fn resolve(addr: &str) -> Result<SocketAddr, EngineError> {
    addr.to_socket_addrs()
        .map_err(|e| EngineError::RuntimeUnavailable(format!("{addr}: {e}")))?
        .next()
        .ok_or_else(|| EngineError::RuntimeUnavailable(format!("{addr} resolves to nothing")))
}

/// Splits a feature matrix (and labels) into batches of at most
/// `batch_size` rows.
pub fn batches_of(features: &Matrix, labels: Option<&[f32]>, batch_size: usize) -> Vec<Batch> {
    let n = features.rows();
    let bs = batch_size.max(1);
    (0..n)
        .step_by(bs)
        .map(|s| {
            let e = (s + bs).min(n);
            Batch { features: features.slice_rows(s, e), labels: labels.map(|l| l[s..e].to_vec()) }
        })
        .collect()
}
