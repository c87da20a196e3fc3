use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, Sender};
use std::thread::{self, JoinHandle};

use super::frame::Frame;
use super::message::*;
use super::EngineError;
use crate::nn::{Layer, Loss, Matrix, Network};

/// Limits a runtime applies when acknowledging a task setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuntimeConfig {
    pub max_batch_size: u32,
    pub max_batches_per_transmission: u32,
    pub max_send_buffer: u32,
    pub max_recv_buffer: u32,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            max_batch_size: u32::MAX,
            max_batches_per_transmission: u32::MAX,
            max_send_buffer: u32::MAX,
            max_recv_buffer: u32::MAX,
        }
    }
}

impl RuntimeConfig {
    fn limits(&self) -> StreamParams {
        StreamParams {
            batch_size: self.max_batch_size,
            batches_per_transmission: self.max_batches_per_transmission,
            send_buffer: self.max_send_buffer,
            recv_buffer: self.max_recv_buffer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    AwaitHello,
    AwaitSetup,
    Running,
    Closed,
}

#[derive(Debug)]
struct ActiveTask {
    setup: TaskSetup,
    params: StreamParams,
    loss: Loss,
    weights: Vec<Option<Layer>>,
    net: Option<Network>,
    /// Values of the transmission group being filled.
    group: Vec<f32>,
    group_batches: u32,
}

/// Runtime side of one connection: consumes frames in order and produces
/// the replies. Shared by the in-process runtime and the TCP server.
#[derive(Debug)]
pub struct RuntimeSession {
    config: RuntimeConfig,
    phase: Phase,
    task: Option<ActiveTask>,
}

fn error_frame(code: &str, message: impl Into<String>) -> Frame {
    Message::Error(ErrorMsg { code: code.into(), message: message.into() }).to_frame()
}

impl RuntimeSession {
    pub fn new(config: RuntimeConfig) -> Self {
        Self { config, phase: Phase::AwaitHello, task: None }
    }

    pub fn is_closed(&self) -> bool {
        self.phase == Phase::Closed
    }

    /// Handles one incoming frame. Any error yields an ERROR frame and
    /// closes the session.
    pub fn handle(&mut self, frame: &Frame) -> Vec<Frame> {
        if self.phase == Phase::Closed {
            return Vec::new();
        }
        match self.step(frame) {
            Ok(out) => out,
            Err((code, msg)) => {
                self.phase = Phase::Closed;
                vec![error_frame(code, msg)]
            }
        }
    }

    fn step(&mut self, frame: &Frame) -> Result<Vec<Frame>, (&'static str, String)> {
        let msg = Message::from_frame(frame).map_err(|e| (codes::MALFORMED, e.to_string()))?;
        match (self.phase, msg) {
            (Phase::AwaitHello, Message::Hello(h)) => {
                if h.protocol_version != PROTOCOL_VERSION {
                    return Err((codes::VERSION, format!("unsupported protocol version {}", h.protocol_version)));
                }
                self.phase = Phase::AwaitSetup;
                Ok(vec![Message::Hello(Hello {
                    protocol_version: PROTOCOL_VERSION,
                    capabilities: vec!["train".into(), "infer".into(), "finetune".into()],
                })
                .to_frame()])
            }
            (Phase::AwaitSetup, Message::TaskSetup(s)) => self.setup(s),
            (Phase::Running, Message::Weights(w)) => {
                let t = self.task.as_mut().expect("running task");
                if t.net.is_some() {
                    return Err((codes::PROTOCOL, "WEIGHTS after data".into()));
                }
                let idx = w.layer_index as usize;
                if idx == 0 {
                    return Err((codes::PROTOCOL, "layer_index is 1-based".into()));
                }
                if idx > t.weights.len() {
                    t.weights.resize(idx, None);
                }
                t.weights[idx - 1] = Some(w.layer().map_err(|e| (codes::MALFORMED, e.to_string()))?);
                Ok(Vec::new())
            }
            (Phase::Running, Message::DataBatch(b)) => self.batch(b),
            (Phase::Running, Message::Control(d)) => {
                let t = self.task.as_mut().expect("running task");
                if t.group_batches != 0 {
                    return Err((codes::PROTOCOL, "CONTROL inside a transmission group".into()));
                }
                let wanted = t.params.with_delta(&d);
                let eff = self.config.limits().clamp_to(wanted);
                eff.validate().map_err(|e| (codes::REJECTED, e.to_string()))?;
                t.params = eff;
                let ack = ParamDelta {
                    batch_size: Some(eff.batch_size),
                    batches_per_transmission: Some(eff.batches_per_transmission),
                    send_buffer: Some(eff.send_buffer),
                    recv_buffer: Some(eff.recv_buffer),
                };
                Ok(vec![Message::Control(ack).to_frame()])
            }
            (Phase::Running, Message::EndTask { task_id }) => {
                let mut t = self.task.take().expect("running task");
                if task_id != t.setup.task_id {
                    return Err((codes::PROTOCOL, format!("END_TASK for {task_id}, running {}", t.setup.task_id)));
                }
                let mut out = Vec::new();
                if t.group_batches > 0 {
                    out.push(Self::flush(&mut t));
                }
                let (kind, suffix) = (t.setup.kind, t.setup.suffix_len as usize);
                let net = Self::ensure_net(&mut t)?;
                let n = net.layers().len();
                let from = match kind {
                    TaskKind::Train => 0,
                    TaskKind::Finetune => n - suffix,
                    TaskKind::Infer => n,
                };
                for (j, l) in net.layers().iter().enumerate().skip(from) {
                    out.push(Message::Weights(WeightsMsg::from_layer(0, (j + 1) as u16, 0, l)).to_frame());
                }
                out.push(Message::EndTask { task_id }.to_frame());
                // One task per connection.
                self.phase = Phase::Closed;
                Ok(out)
            }
            (phase, m) => Err((codes::PROTOCOL, format!("unexpected {} in state {phase:?}", m.frame_type().name()))),
        }
    }

    fn setup(&mut self, s: TaskSetup) -> Result<Vec<Frame>, (&'static str, String)> {
        let requested = s.params();
        requested.validate().map_err(|e| (codes::REJECTED, e.to_string()))?;
        let loss = Loss::from_name(&s.loss).ok_or_else(|| (codes::REJECTED, format!("unknown loss {}", s.loss)))?;
        if s.layer_dims.len() < 2 || s.layer_dims.contains(&0) {
            return Err((codes::REJECTED, format!("bad layer_dims {:?}", s.layer_dims)));
        }
        let eff = self.config.limits().clamp_to(requested);
        let ack = SetupAck {
            task_id: s.task_id,
            batch_size: eff.batch_size,
            batches_per_transmission: eff.batches_per_transmission,
            send_buffer: eff.send_buffer,
            recv_buffer: eff.recv_buffer,
        };
        self.task = Some(ActiveTask {
            setup: s,
            params: eff,
            loss,
            weights: Vec::new(),
            net: None,
            group: Vec::new(),
            group_batches: 0,
        });
        self.phase = Phase::Running;
        Ok(vec![Message::SetupAck(ack).to_frame()])
    }

    fn ensure_net(t: &mut ActiveTask) -> Result<&mut Network, (&'static str, String)> {
        if t.net.is_none() {
            let s = &t.setup;
            let mut net = if t.weights.is_empty() {
                if s.kind != TaskKind::Train {
                    return Err((codes::PROTOCOL, "FINETUNE and INFER need WEIGHTS before data".into()));
                }
                let dims: Vec<usize> = s.layer_dims.iter().map(|&d| d as usize).collect();
                Network::mlp(dims[0], &dims[1..dims.len() - 1], dims[dims.len() - 1], t.loss, s.seed)
                    .map_err(|e| (codes::REJECTED, e.to_string()))?
            } else {
                let layers = std::mem::take(&mut t.weights)
                    .into_iter()
                    .enumerate()
                    .map(|(j, l)| l.ok_or_else(|| (codes::PROTOCOL, format!("missing WEIGHTS for layer {}", j + 1))))
                    .collect::<Result<Vec<_>, _>>()?;
                Network::new(layers, t.loss).map_err(|e| (codes::REJECTED, e.to_string()))?
            };
            if s.kind == TaskKind::Finetune {
                let n = net.layers().len();
                let k = s.suffix_len as usize;
                if k == 0 || k > n {
                    return Err((codes::REJECTED, format!("suffix_len {k} for {n} layers")));
                }
                net.freeze_before(n - k);
            } else {
                net.unfreeze_all();
            }
            t.net = Some(net);
        }
        Ok(t.net.as_mut().expect("just built"))
    }

    fn batch(&mut self, b: DataBatch) -> Result<Vec<Frame>, (&'static str, String)> {
        let t = self.task.as_mut().expect("running task");
        if b.task_id != t.setup.task_id {
            return Err((codes::PROTOCOL, format!("batch for task {}, running {}", b.task_id, t.setup.task_id)));
        }
        let lr = t.setup.lr;
        let kind = t.setup.kind;
        let net = Self::ensure_net(t)?;
        let x: Matrix = b.matrix();
        match kind {
            TaskKind::Infer => {
                let y = net.forward(&x).map_err(|e| (codes::TRAINING, e.to_string()))?;
                t.group.extend_from_slice(y.data());
            }
            TaskKind::Train | TaskKind::Finetune => {
                let labels =
                    b.labels.as_ref().ok_or_else(|| (codes::PROTOCOL, "training batch without labels".into()))?;
                let loss = net.train_step(&x, labels, lr).map_err(|e| (codes::TRAINING, e.to_string()))?;
                t.group.push(loss);
            }
        }
        t.group_batches += 1;
        if t.group_batches >= t.params.batches_per_transmission {
            return Ok(vec![Self::flush(t)]);
        }
        Ok(Vec::new())
    }

    fn flush(t: &mut ActiveTask) -> Frame {
        t.group_batches = 0;
        let kind = if t.setup.kind == TaskKind::Infer { ResultKind::Predictions } else { ResultKind::LossReport };
        Message::Result(ResultMsg { task_id: t.setup.task_id, kind, values: std::mem::take(&mut t.group) }).to_frame()
    }
}

/// Engine-side end of a connection to a runtime.
pub trait Connection: Send {
    fn send(&mut self, f: &Frame) -> Result<(), EngineError>;
    fn flush(&mut self) -> Result<(), EngineError> {
        Ok(())
    }
    /// Applies negotiated buffer sizes.
    fn configure(&mut self, _params: &StreamParams) -> Result<(), EngineError> {
        Ok(())
    }
    /// A reader for incoming frames, movable to its own thread.
    fn reader(&mut self) -> Result<Box<dyn FrameReader>, EngineError>;
}

pub trait FrameReader: Send {
    fn recv(&mut self) -> Result<Frame, EngineError>;
}

/// A runtime living on a thread of this process, fed over channels.
pub struct InProcessConnection {
    to_runtime: Option<Sender<Frame>>,
    from_runtime: Option<Receiver<Frame>>,
    worker: Option<JoinHandle<()>>,
}

impl InProcessConnection {
    pub fn spawn(config: RuntimeConfig) -> Self {
        let (tx, rx) = mpsc::channel::<Frame>();
        let (otx, orx) = mpsc::channel::<Frame>();
        let worker = thread::Builder::new()
            .name("inprocess-runtime".into())
            .spawn(move || {
                let mut session = RuntimeSession::new(config);
                while let Ok(f) = rx.recv() {
                    for out in session.handle(&f) {
                        if otx.send(out).is_err() {
                            return;
                        }
                    }
                    if session.is_closed() {
                        return;
                    }
                }
            })
            .expect("spawn runtime thread");
        Self { to_runtime: Some(tx), from_runtime: Some(orx), worker: Some(worker) }
    }
}

impl Drop for InProcessConnection {
    fn drop(&mut self) {
        self.to_runtime.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Connection for InProcessConnection {
    fn send(&mut self, f: &Frame) -> Result<(), EngineError> {
        self.to_runtime.as_ref().ok_or(EngineError::PeerClosed)?.send(f.clone()).map_err(|_| EngineError::PeerClosed)
    }

    fn reader(&mut self) -> Result<Box<dyn FrameReader>, EngineError> {
        let rx = self.from_runtime.take().ok_or_else(|| EngineError::Io("reader already taken".into()))?;
        Ok(Box::new(ChannelReader(rx)))
    }
}

struct ChannelReader(Receiver<Frame>);

impl FrameReader for ChannelReader {
    fn recv(&mut self) -> Result<Frame, EngineError> {
        self.0.recv().map_err(|_| EngineError::PeerClosed)
    }
}

pub struct TcpConnection {
    stream: TcpStream,
    writer: BufWriter<TcpStream>,
}

impl TcpConnection {
    pub fn connect(addr: SocketAddr, timeout: std::time::Duration) -> Result<Self, EngineError> {
        let stream = TcpStream::connect_timeout(&addr, timeout)
            .map_err(|e| EngineError::RuntimeUnavailable(format!("{addr}: {e}")))?;
        stream.set_nodelay(true).map_err(EngineError::from_io)?;
        let writer = BufWriter::new(stream.try_clone().map_err(EngineError::from_io)?);
        Ok(Self { stream, writer })
    }
}

impl Connection for TcpConnection {
    fn send(&mut self, f: &Frame) -> Result<(), EngineError> {
        f.write_to(&mut self.writer).map_err(EngineError::from_io)
    }

    fn flush(&mut self) -> Result<(), EngineError> {
        self.writer.flush().map_err(EngineError::from_io)
    }

    /// Resizes the write buffer to the negotiated send buffer.
    fn configure(&mut self, params: &StreamParams) -> Result<(), EngineError> {
        self.writer.flush().map_err(EngineError::from_io)?;
        let cap = (params.send_buffer as usize).clamp(4096, 64 << 20);
        self.writer = BufWriter::with_capacity(cap, self.stream.try_clone().map_err(EngineError::from_io)?);
        Ok(())
    }

    fn reader(&mut self) -> Result<Box<dyn FrameReader>, EngineError> {
        Ok(Box::new(TcpReader(BufReader::new(self.stream.try_clone().map_err(EngineError::from_io)?))))
    }
}

struct TcpReader(BufReader<TcpStream>);

impl FrameReader for TcpReader {
    fn recv(&mut self) -> Result<Frame, EngineError> {
        Frame::read_from(&mut self.0)
    }
}

/// Serves one connection to completion over `stream`.
pub fn serve_connection(stream: TcpStream, config: RuntimeConfig) -> Result<(), EngineError> {
    stream.set_nodelay(true).map_err(EngineError::from_io)?;
    let mut reader = BufReader::new(stream.try_clone().map_err(EngineError::from_io)?);
    let mut writer = BufWriter::new(stream);
    let mut session = RuntimeSession::new(config);
    loop {
        let frame = match Frame::read_from(&mut reader) {
            Ok(f) => f,
            Err(EngineError::PeerClosed) => return Ok(()),
            Err(e @ EngineError::MalformedFrame(_)) => {
                let _ = error_frame(codes::MALFORMED, e.to_string()).write_to(&mut writer);
                let _ = writer.flush();
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        for out in session.handle(&frame) {
            out.write_to(&mut writer).map_err(EngineError::from_io)?;
        }
        writer.flush().map_err(EngineError::from_io)?;
        if session.is_closed() {
            return Ok(());
        }
    }
}

/// A TCP runtime serving connections one at a time on a background thread.
pub struct TcpRuntimeServer {
    addr: SocketAddr,
    handle: Option<JoinHandle<()>>,
}

impl TcpRuntimeServer {
    /// Binds `addr` (port 0 picks a free port) and serves until `max_conns`
    /// connections have been handled, or forever if `None`.
    pub fn spawn(addr: &str, config: RuntimeConfig, max_conns: Option<usize>) -> Result<Self, EngineError> {
        let listener = TcpListener::bind(addr).map_err(EngineError::from_io)?;
        let addr = listener.local_addr().map_err(EngineError::from_io)?;
        let handle = thread::Builder::new()
            .name("tcp-runtime".into())
            .spawn(move || {
                let mut served = 0;
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    if let Err(e) = serve_connection(stream, config) {
                        log::warn!("runtime connection ended with {e}");
                    }
                    served += 1;
                    if max_conns.is_some_and(|m| served >= m) {
                        return;
                    }
                }
            })
            .map_err(EngineError::from_io)?;
        Ok(Self { addr, handle: Some(handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Waits for the server to finish its connection budget.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
