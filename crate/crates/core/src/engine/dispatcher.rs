use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, SyncSender, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::frame::Frame;
use super::message::*;
use super::runtime::Connection;
use super::{AiTask, Batch, BatchSource, EngineError};
use crate::nn::Layer;

/// Counters kept by a dispatcher.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DispatchStats {
    pub batches_sent: u64,
    pub bytes_sent: u64,
    pub results_received: u64,
    /// Largest number of sent batches not yet covered by a RESULT.
    pub max_in_flight: u32,
    /// Largest number of batches produced but not yet acknowledged,
    /// including those queued between producer and sender.
    pub max_resident: u64,
    /// Size of every transmission group, in send order.
    pub group_sizes: Vec<u32>,
    pub renegotiations: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskEvent {
    Started {
        task_id: u64,
        params: StreamParams,
    },
    /// Values of one RESULT: per-batch losses or raw predictions.
    Progress {
        task_id: u64,
        kind: ResultKind,
        batches_acked: u64,
        values: Vec<f32>,
    },
    Renegotiated {
        task_id: u64,
        params: StreamParams,
    },
    Completed {
        task_id: u64,
    },
    Failed {
        task_id: u64,
        error: EngineError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub task_id: u64,
    pub kind: TaskKind,
    /// Parameters in force when the task ended.
    pub params: StreamParams,
    /// Per-batch training losses in stream order.
    pub losses: Vec<f32>,
    /// Raw network outputs, row-major, in stream order.
    pub predictions: Vec<f32>,
    /// Returned layers with their 1-based positions: all of them after
    /// TRAIN, the trained suffix after FINETUNE, none after INFER.
    pub layers: Vec<(u16, Layer)>,
    pub stats: DispatchStats,
}

/// Submitter's view of a running task.
pub struct TaskHandle {
    task_id: u64,
    events: Receiver<TaskEvent>,
    control: Sender<ParamDelta>,
    join: Option<JoinHandle<Result<TaskOutcome, EngineError>>>,
}

impl TaskHandle {
    pub fn task_id(&self) -> u64 {
        self.task_id
    }

    pub fn events(&self) -> &Receiver<TaskEvent> {
        &self.events
    }

    /// Asks for new streaming parameters; they apply from the first
    /// transmission group after the runtime acknowledges.
    pub fn renegotiate(&self, delta: ParamDelta) -> Result<(), EngineError> {
        if self.join.as_ref().is_none_or(|j| j.is_finished()) {
            return Err(EngineError::PeerClosed);
        }
        self.control.send(delta).map_err(|_| EngineError::PeerClosed)
    }

    pub fn is_finished(&self) -> bool {
        self.join.as_ref().is_none_or(|j| j.is_finished())
    }

    pub fn wait(mut self) -> Result<TaskOutcome, EngineError> {
        let j = self.join.take().expect("waited once");
        j.join().unwrap_or_else(|_| Err(EngineError::Io("dispatcher panicked".into())))
    }
}

pub(crate) fn spawn(
    task_id: u64,
    task: AiTask,
    conn: Box<dyn Connection>,
    window: u32,
    timeout: Duration,
) -> TaskHandle {
    let (etx, erx) = mpsc::channel();
    let (ctx, crx) = mpsc::channel();
    let join = thread::Builder::new()
        .name(format!("dispatcher-{task_id}"))
        .spawn(move || {
            let mut d = Dispatcher::new(task_id, conn, etx.clone(), crx, window, timeout);
            let r = d.run(task);
            let _ = match &r {
                Ok(_) => etx.send(TaskEvent::Completed { task_id }),
                Err(e) => etx.send(TaskEvent::Failed { task_id, error: e.clone() }),
            };
            r
        })
        .expect("spawn dispatcher");
    TaskHandle { task_id, events: erx, control: ctx, join: Some(join) }
}

enum Incoming {
    Frame(Frame),
    Closed(EngineError),
}

struct Dispatcher {
    task_id: u64,
    conn: Box<dyn Connection>,
    inbox: Option<Receiver<Incoming>>,
    events: Sender<TaskEvent>,
    control: Receiver<ParamDelta>,
    window: u32,
    timeout: Duration,
    params: StreamParams,
    /// Batch counts of sent groups awaiting a RESULT, oldest first.
    pending: VecDeque<u32>,
    current_group: u32,
    acked: Arc<AtomicU64>,
    produced: Arc<AtomicU64>,
    out: TaskOutcome,
    /// Parameters awaiting a CONTROL acknowledgement.
    awaiting_ack: bool,
    end_seen: bool,
}

impl Dispatcher {
    fn new(
        task_id: u64,
        conn: Box<dyn Connection>,
        events: Sender<TaskEvent>,
        control: Receiver<ParamDelta>,
        window: u32,
        timeout: Duration,
    ) -> Self {
        Self {
            task_id,
            conn,
            inbox: None,
            events,
            control,
            window,
            timeout,
            params: StreamParams::default(),
            pending: VecDeque::new(),
            current_group: 0,
            acked: Arc::new(AtomicU64::new(0)),
            produced: Arc::new(AtomicU64::new(0)),
            out: TaskOutcome {
                task_id,
                kind: TaskKind::Train,
                params: StreamParams::default(),
                losses: Vec::new(),
                predictions: Vec::new(),
                layers: Vec::new(),
                stats: DispatchStats::default(),
            },
            awaiting_ack: false,
            end_seen: false,
        }
    }

    fn send(&mut self, m: &Message) -> Result<(), EngineError> {
        let f = m.to_frame();
        self.out.stats.bytes_sent += f.encoded_len() as u64;
        self.conn.send(&f)
    }

    fn in_flight(&self) -> u32 {
        self.pending.iter().sum::<u32>() + self.current_group
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Message>, EngineError> {
        let inbox = self.inbox.as_ref().expect("reader started");
        match inbox.recv_timeout(timeout) {
            Ok(Incoming::Frame(f)) => Ok(Some(Message::from_frame(&f)?)),
            Ok(Incoming::Closed(e)) => Err(e),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(EngineError::PeerClosed),
        }
    }

    fn try_recv(&mut self) -> Result<Option<Message>, EngineError> {
        let inbox = self.inbox.as_ref().expect("reader started");
        match inbox.try_recv() {
            Ok(Incoming::Frame(f)) => Ok(Some(Message::from_frame(&f)?)),
            Ok(Incoming::Closed(e)) => Err(e),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(EngineError::PeerClosed),
        }
    }

    fn expect_reply(&mut self) -> Result<Message, EngineError> {
        self.recv(self.timeout)?.ok_or(EngineError::BackpressureTimeout(self.timeout))
    }

    fn handshake(&mut self, task: &AiTask) -> Result<(), EngineError> {
        self.send(&Message::Hello(Hello {
            protocol_version: PROTOCOL_VERSION,
            capabilities: vec!["train".into(), "infer".into(), "finetune".into()],
        }))?;
        self.conn.flush()?;
        match self.expect_reply()? {
            Message::Hello(h) if h.protocol_version == PROTOCOL_VERSION => {}
            Message::Hello(h) => {
                return Err(EngineError::ProtocolVersionMismatch(format!(
                    "engine speaks {PROTOCOL_VERSION}, runtime {}",
                    h.protocol_version
                )))
            }
            Message::Error(e) if e.code == codes::VERSION => {
                return Err(EngineError::ProtocolVersionMismatch(e.message))
            }
            Message::Error(e) => return Err(EngineError::HandshakeRejected(format!("{}: {}", e.code, e.message))),
            m => return Err(EngineError::Protocol(format!("expected HELLO, got {}", m.frame_type().name()))),
        }
        let requested = task.params;
        let setup = TaskSetup {
            task_id: self.task_id,
            kind: task.kind,
            layer_dims: task.model.layer_dims.iter().map(|&d| d as u32).collect(),
            loss: task.model.loss.name().to_string(),
            suffix_len: task.model.suffix_len as u32,
            batch_size: requested.batch_size,
            batches_per_transmission: requested.batches_per_transmission,
            send_buffer: requested.send_buffer,
            recv_buffer: requested.recv_buffer,
            seed: task.seed,
            lr: task.lr,
        };
        self.send(&Message::TaskSetup(setup))?;
        self.conn.flush()?;
        match self.expect_reply()? {
            Message::SetupAck(a) if a.task_id == self.task_id => {
                self.params = self.clamp(a.params().clamp_to(requested));
                self.params.validate().map_err(|e| EngineError::HandshakeRejected(e.to_string()))?;
            }
            Message::Error(e) => return Err(EngineError::HandshakeRejected(format!("{}: {}", e.code, e.message))),
            m => return Err(EngineError::Protocol(format!("expected SETUP_ACK, got {}", m.frame_type().name()))),
        }
        self.conn.configure(&self.params)?;
        self.out.params = self.params;
        let _ = self.events.send(TaskEvent::Started { task_id: self.task_id, params: self.params });
        Ok(())
    }

    /// A group never exceeds the window, so a full group can always be sent.
    fn clamp(&self, p: StreamParams) -> StreamParams {
        StreamParams { batches_per_transmission: p.batches_per_transmission.min(self.window), ..p }
    }

    fn handle(&mut self, m: Message) -> Result<(), EngineError> {
        match m {
            Message::Result(r) => {
                if r.task_id != self.task_id {
                    return Err(EngineError::Protocol(format!("RESULT for task {}", r.task_id)));
                }
                let n = self
                    .pending
                    .pop_front()
                    .ok_or_else(|| EngineError::Protocol("RESULT without an outstanding group".into()))?;
                let expected_kind =
                    if self.out.kind == TaskKind::Infer { ResultKind::Predictions } else { ResultKind::LossReport };
                if r.kind != expected_kind {
                    return Err(EngineError::Protocol(format!("unexpected RESULT kind {:?}", r.kind)));
                }
                if r.kind == ResultKind::LossReport {
                    if r.values.len() != n as usize {
                        return Err(EngineError::Protocol(format!("{} losses for a group of {n}", r.values.len())));
                    }
                    self.out.losses.extend_from_slice(&r.values);
                } else {
                    self.out.predictions.extend_from_slice(&r.values);
                }
                self.out.stats.results_received += 1;
                let acked = self.acked.fetch_add(n as u64, Ordering::SeqCst) + n as u64;
                let _ = self.events.send(TaskEvent::Progress {
                    task_id: self.task_id,
                    kind: r.kind,
                    batches_acked: acked,
                    values: r.values,
                });
                Ok(())
            }
            Message::Control(ack) => {
                if !self.awaiting_ack {
                    return Err(EngineError::Protocol("unsolicited CONTROL".into()));
                }
                self.awaiting_ack = false;
                self.params = self.clamp(self.params.with_delta(&ack));
                self.conn.configure(&self.params)?;
                self.out.params = self.params;
                self.out.stats.renegotiations += 1;
                let _ = self.events.send(TaskEvent::Renegotiated { task_id: self.task_id, params: self.params });
                Ok(())
            }
            Message::Weights(w) => {
                let layer = w.layer()?;
                self.out.layers.push((w.layer_index, layer));
                Ok(())
            }
            Message::EndTask { task_id } if task_id == self.task_id => {
                self.end_seen = true;
                Ok(())
            }
            Message::Error(e) => Err(EngineError::Runtime { code: e.code, message: e.message }),
            m => Err(EngineError::Protocol(format!("unexpected {} from runtime", m.frame_type().name()))),
        }
    }

    fn drain(&mut self) -> Result<(), EngineError> {
        while let Some(m) = self.try_recv()? {
            self.handle(m)?;
        }
        Ok(())
    }

    /// Blocks for one message. A timeout first schedules halving the group
    /// size; a second consecutive timeout fails the task.
    fn wait_one(&mut self, strikes: &mut u32, halve: &mut bool) -> Result<(), EngineError> {
        match self.recv(self.timeout)? {
            Some(m) => {
                *strikes = 0;
                self.handle(m)
            }
            None => {
                *strikes += 1;
                if *strikes >= 2 || self.params.batches_per_transmission <= 1 {
                    return Err(EngineError::BackpressureTimeout(self.timeout));
                }
                log::warn!("task {}: runtime idle for {:?}, halving group size", self.task_id, self.timeout);
                *halve = true;
                Ok(())
            }
        }
    }

    fn note_resident(&mut self) {
        let resident = self.produced.load(Ordering::SeqCst).saturating_sub(self.acked.load(Ordering::SeqCst));
        self.out.stats.max_resident = self.out.stats.max_resident.max(resident);
        self.out.stats.max_in_flight = self.out.stats.max_in_flight.max(self.in_flight());
    }

    fn close_group(&mut self) -> Result<(), EngineError> {
        if self.current_group > 0 {
            self.pending.push_back(self.current_group);
            self.out.stats.group_sizes.push(self.current_group);
            self.current_group = 0;
            self.conn.flush()?;
        }
        Ok(())
    }

    fn renegotiate(&mut self, delta: ParamDelta, strikes: &mut u32, halve: &mut bool) -> Result<(), EngineError> {
        debug_assert_eq!(self.current_group, 0);
        self.awaiting_ack = true;
        self.send(&Message::Control(delta))?;
        self.conn.flush()?;
        while self.awaiting_ack {
            self.wait_one(strikes, halve)?;
        }
        Ok(())
    }

    /// Applies queued parameter requests at a group boundary.
    fn maybe_renegotiate(&mut self, strikes: &mut u32, halve: &mut bool) -> Result<(), EngineError> {
        let mut delta = None;
        while let Ok(d) = self.control.try_recv() {
            delta = Some(d);
        }
        if *halve {
            *halve = false;
            let bpt = (self.params.batches_per_transmission / 2).max(1);
            delta = Some(ParamDelta { batches_per_transmission: Some(bpt), ..delta.unwrap_or_default() });
        }
        match delta {
            Some(d) => self.renegotiate(d, strikes, halve),
            None => Ok(()),
        }
    }

    fn run(&mut self, mut task: AiTask) -> Result<TaskOutcome, EngineError> {
        self.out.kind = task.kind;
        let mut reader = self.conn.reader()?;
        let (itx, irx) = mpsc::channel();
        self.inbox = Some(irx);
        thread::Builder::new()
            .name(format!("dispatcher-{}-rx", self.task_id))
            .spawn(move || loop {
                match reader.recv() {
                    Ok(f) => {
                        if itx.send(Incoming::Frame(f)).is_err() {
                            return;
                        }
                    }
                    Err(e) => {
                        let _ = itx.send(Incoming::Closed(e));
                        return;
                    }
                }
            })
            .map_err(|e| EngineError::Io(e.to_string()))?;

        self.handshake(&task)?;
        for (j, l) in task.weights.iter().enumerate() {
            self.send(&Message::Weights(WeightsMsg::from_layer(0, (j + 1) as u16, 0, l)))?;
        }

        let source = std::mem::replace(&mut task.source, Box::new(std::iter::empty()));
        let (btx, brx) = mpsc::sync_channel(self.params.batches_per_transmission as usize);
        let producer = spawn_producer(source, btx, self.produced.clone(), self.task_id);

        let mut seq = 0u64;
        let mut strikes = 0u32;
        let mut halve = false;
        let result = (|| -> Result<(), EngineError> {
            loop {
                // Keep consuming RESULTs while the source is slow.
                let batch = loop {
                    match brx.recv_timeout(Duration::from_millis(2)) {
                        Ok(b) => break Some(b?),
                        Err(RecvTimeoutError::Timeout) => self.drain()?,
                        Err(RecvTimeoutError::Disconnected) => break None,
                    }
                };
                let Some(batch) = batch else { break };
                for piece in split(batch, self.params.batch_size as usize) {
                    if self.current_group == 0 {
                        self.maybe_renegotiate(&mut strikes, &mut halve)?;
                    }
                    while self.in_flight() >= self.window {
                        self.wait_one(&mut strikes, &mut halve)?;
                    }
                    let msg = Message::DataBatch(DataBatch {
                        task_id: self.task_id,
                        seq,
                        n_rows: piece.features.rows() as u32,
                        n_cols: piece.features.cols() as u16,
                        features: piece.features.into_vec(),
                        labels: piece.labels,
                    });
                    seq += 1;
                    self.send(&msg)?;
                    self.out.stats.batches_sent += 1;
                    self.current_group += 1;
                    self.note_resident();
                    if self.current_group >= self.params.batches_per_transmission {
                        self.close_group()?;
                    }
                    self.drain()?;
                }
            }
            self.close_group()?;
            self.send(&Message::EndTask { task_id: self.task_id })?;
            self.conn.flush()?;
            while !self.end_seen {
                self.wait_one(&mut strikes, &mut halve)?;
            }
            if !self.pending.is_empty() {
                return Err(EngineError::Protocol(format!("{} groups unanswered at END_TASK", self.pending.len())));
            }
            Ok(())
        })();
        drop(brx);
        let _ = producer.join();
        result?;
        Ok(std::mem::replace(
            &mut self.out,
            TaskOutcome {
                task_id: self.task_id,
                kind: task.kind,
                params: self.params,
                losses: Vec::new(),
                predictions: Vec::new(),
                layers: Vec::new(),
                stats: DispatchStats::default(),
            },
        ))
    }
}

fn spawn_producer(
    source: BatchSource,
    tx: SyncSender<Result<Batch, EngineError>>,
    produced: Arc<AtomicU64>,
    task_id: u64,
) -> JoinHandle<()> {
    thread::Builder::new()
        .name(format!("dispatcher-{task_id}-src"))
        .spawn(move || {
            for item in source {
                let stop = item.is_err();
                produced.fetch_add(1, Ordering::SeqCst);
                if tx.send(item).is_err() || stop {
                    return;
                }
            }
        })
        .expect("spawn producer")
}

fn split(b: Batch, max_rows: usize) -> Vec<Batch> {
    let n = b.features.rows();
    if n <= max_rows {
        return vec![b];
    }
    super::batches_of(&b.features, b.labels.as_deref(), max_rows)
}
