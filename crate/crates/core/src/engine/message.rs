use serde::{Deserialize, Serialize};

use super::frame::{put_f32s, Cursor, Frame, FrameType};
use super::EngineError;
use crate::models::payload;
use crate::nn::{Layer, Matrix};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskKind {
    Train,
    Infer,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub protocol_version: u32,
    pub capabilities: Vec<String>,
}

/// Streaming parameters negotiated during the handshake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamParams {
    pub batch_size: u32,
    pub batches_per_transmission: u32,
    pub send_buffer: u32,
    pub recv_buffer: u32,
}

impl Default for StreamParams {
    fn default() -> Self {
        Self { batch_size: 4096, batches_per_transmission: 8, send_buffer: 1 << 20, recv_buffer: 1 << 20 }
    }
}

impl StreamParams {
    /// Field-wise minimum: an acknowledgement may lower but never raise.
    pub fn clamp_to(self, requested: StreamParams) -> StreamParams {
        StreamParams {
            batch_size: self.batch_size.min(requested.batch_size),
            batches_per_transmission: self.batches_per_transmission.min(requested.batches_per_transmission),
            send_buffer: self.send_buffer.min(requested.send_buffer),
            recv_buffer: self.recv_buffer.min(requested.recv_buffer),
        }
    }

    pub fn with_delta(self, d: &ParamDelta) -> StreamParams {
        StreamParams {
            batch_size: d.batch_size.unwrap_or(self.batch_size),
            batches_per_transmission: d.batches_per_transmission.unwrap_or(self.batches_per_transmission),
            send_buffer: d.send_buffer.unwrap_or(self.send_buffer),
            recv_buffer: d.recv_buffer.unwrap_or(self.recv_buffer),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.batch_size == 0 {
            return Err(EngineError::InvalidTask("batch_size must be at least 1".into()));
        }
        if self.batches_per_transmission == 0 {
            return Err(EngineError::InvalidTask("batches_per_transmission must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSetup {
    pub task_id: u64,
    pub kind: TaskKind,
    /// `[in, hidden..., out]` of an MLP with ReLU between linear layers.
    pub layer_dims: Vec<u32>,
    /// `"mse"` or `"cross_entropy"`; the latter adds a trailing Softmax.
    pub loss: String,
    /// Trailing layers (activations included) trained by FINETUNE.
    pub suffix_len: u32,
    pub batch_size: u32,
    pub batches_per_transmission: u32,
    pub send_buffer: u32,
    pub recv_buffer: u32,
    pub seed: u64,
    pub lr: f32,
}

impl TaskSetup {
    pub fn params(&self) -> StreamParams {
        StreamParams {
            batch_size: self.batch_size,
            batches_per_transmission: self.batches_per_transmission,
            send_buffer: self.send_buffer,
            recv_buffer: self.recv_buffer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupAck {
    pub task_id: u64,
    pub batch_size: u32,
    pub batches_per_transmission: u32,
    pub send_buffer: u32,
    pub recv_buffer: u32,
}

impl SetupAck {
    pub fn params(&self) -> StreamParams {
        StreamParams {
            batch_size: self.batch_size,
            batches_per_transmission: self.batches_per_transmission,
            send_buffer: self.send_buffer,
            recv_buffer: self.recv_buffer,
        }
    }
}

/// Partial parameter update carried by CONTROL, and echoed back with the
/// effective values as the acknowledgement.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDelta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batches_per_transmission: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub send_buffer: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recv_buffer: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorMsg {
    pub code: String,
    pub message: String,
}

/// Error codes carried by ERROR frames.
pub mod codes {
    pub const VERSION: &str = "VERSION";
    pub const MALFORMED: &str = "MALFORMED";
    pub const PROTOCOL: &str = "PROTOCOL";
    pub const REJECTED: &str = "REJECTED";
    pub const TRAINING: &str = "TRAINING";
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    pub task_id: u64,
    pub seq: u64,
    pub n_rows: u32,
    pub n_cols: u16,
    /// Row-major, `n_rows * n_cols`.
    pub features: Vec<f32>,
    pub labels: Option<Vec<f32>>,
}

impl DataBatch {
    pub fn matrix(&self) -> Matrix {
        Matrix::from_vec(self.n_rows as usize, self.n_cols as usize, self.features.clone())
            .expect("length checked on decode")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsMsg {
    /// 1-based layer position.
    pub layer_index: u16,
    pub version: u64,
    /// Layer in the model-store payload format.
    pub payload: Vec<u8>,
}

impl WeightsMsg {
    pub fn from_layer(mid: u64, layer_index: u16, version: u64, layer: &Layer) -> Self {
        Self { layer_index, version, payload: payload::encode_layer(mid, layer_index, version, layer) }
    }

    pub fn layer(&self) -> Result<Layer, EngineError> {
        payload::decode_layer(&self.payload)
            .map(|(_, l)| l)
            .map_err(|e| EngineError::MalformedFrame(format!("WEIGHTS layer {}: {e}", self.layer_index)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultKind {
    Predictions = 0,
    LossReport = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultMsg {
    pub task_id: u64,
    pub kind: ResultKind,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    TaskSetup(TaskSetup),
    SetupAck(SetupAck),
    DataBatch(DataBatch),
    Weights(WeightsMsg),
    Result(ResultMsg),
    Control(ParamDelta),
    EndTask { task_id: u64 },
    Error(ErrorMsg),
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("control messages serialize")
}

fn from_json<T: for<'de> Deserialize<'de>>(ty: FrameType, b: &[u8]) -> Result<T, EngineError> {
    serde_json::from_slice(b).map_err(|e| EngineError::MalformedFrame(format!("{}: {e}", ty.name())))
}

impl Message {
    pub fn frame_type(&self) -> FrameType {
        match self {
            Message::Hello(_) => FrameType::Hello,
            Message::TaskSetup(_) => FrameType::TaskSetup,
            Message::SetupAck(_) => FrameType::SetupAck,
            Message::DataBatch(_) => FrameType::DataBatch,
            Message::Weights(_) => FrameType::Weights,
            Message::Result(_) => FrameType::Result,
            Message::Control(_) => FrameType::Control,
            Message::EndTask { .. } => FrameType::EndTask,
            Message::Error(_) => FrameType::Error,
        }
    }

    pub fn to_frame(&self) -> Frame {
        let payload = match self {
            Message::Hello(h) => json(h),
            Message::TaskSetup(s) => json(s),
            Message::SetupAck(a) => json(a),
            Message::Control(d) => json(d),
            Message::Error(e) => json(e),
            Message::EndTask { task_id } => task_id.to_le_bytes().to_vec(),
            Message::DataBatch(b) => {
                let mut out = Vec::with_capacity(23 + 4 * (b.features.len() + b.labels.as_ref().map_or(0, Vec::len)));
                out.extend_from_slice(&b.task_id.to_le_bytes());
                out.extend_from_slice(&b.seq.to_le_bytes());
                out.extend_from_slice(&b.n_rows.to_le_bytes());
                out.extend_from_slice(&b.n_cols.to_le_bytes());
                out.push(b.labels.is_some() as u8);
                put_f32s(&mut out, &b.features);
                if let Some(l) = &b.labels {
                    put_f32s(&mut out, l);
                }
                out
            }
            Message::Weights(w) => {
                let mut out = Vec::with_capacity(10 + w.payload.len());
                out.extend_from_slice(&w.layer_index.to_le_bytes());
                out.extend_from_slice(&w.version.to_le_bytes());
                out.extend_from_slice(&w.payload);
                out
            }
            Message::Result(r) => {
                let mut out = Vec::with_capacity(13 + 4 * r.values.len());
                out.extend_from_slice(&r.task_id.to_le_bytes());
                out.push(r.kind as u8);
                out.extend_from_slice(&(r.values.len() as u32).to_le_bytes());
                put_f32s(&mut out, &r.values);
                out
            }
        };
        Frame::new(self.frame_type(), payload)
    }

    pub fn from_frame(f: &Frame) -> Result<Message, EngineError> {
        let p = &f.payload[..];
        Ok(match f.ty {
            FrameType::Hello => Message::Hello(from_json(f.ty, p)?),
            FrameType::TaskSetup => Message::TaskSetup(from_json(f.ty, p)?),
            FrameType::SetupAck => Message::SetupAck(from_json(f.ty, p)?),
            FrameType::Control => Message::Control(from_json(f.ty, p)?),
            FrameType::Error => Message::Error(from_json(f.ty, p)?),
            FrameType::EndTask => {
                let mut c = Cursor::new(p, "END_TASK");
                let task_id = c.u64()?;
                c.finish()?;
                Message::EndTask { task_id }
            }
            FrameType::DataBatch => {
                let mut c = Cursor::new(p, "DATA_BATCH");
                let task_id = c.u64()?;
                let seq = c.u64()?;
                let n_rows = c.u32()?;
                let n_cols = c.u16()?;
                let has_labels = match c.u8()? {
                    0 => false,
                    1 => true,
                    b => return Err(EngineError::MalformedFrame(format!("DATA_BATCH has_labels byte {b}"))),
                };
                let features = c.f32s(n_rows as usize * n_cols as usize)?;
                let labels = if has_labels { Some(c.f32s(n_rows as usize)?) } else { None };
                c.finish()?;
                Message::DataBatch(DataBatch { task_id, seq, n_rows, n_cols, features, labels })
            }
            FrameType::Weights => {
                let mut c = Cursor::new(p, "WEIGHTS");
                let layer_index = c.u16()?;
                let version = c.u64()?;
                let payload = c.rest().to_vec();
                Message::Weights(WeightsMsg { layer_index, version, payload })
            }
            FrameType::Result => {
                let mut c = Cursor::new(p, "RESULT");
                let task_id = c.u64()?;
                let kind = match c.u8()? {
                    0 => ResultKind::Predictions,
                    1 => ResultKind::LossReport,
                    b => return Err(EngineError::MalformedFrame(format!("RESULT kind {b}"))),
                };
                let count = c.u32()?;
                let values = c.f32s(count as usize)?;
                c.finish()?;
                Message::Result(ResultMsg { task_id, kind, values })
            }
        })
    }
}
