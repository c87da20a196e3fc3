use std::io::{self, Read, Write};

use super::EngineError;

/// Frame header: type byte plus little-endian payload length.
pub const HEADER_LEN: usize = 5;

/// Largest payload accepted by the decoder.
pub const MAX_PAYLOAD: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Hello = 0x01,
    TaskSetup = 0x02,
    SetupAck = 0x03,
    DataBatch = 0x04,
    Weights = 0x05,
    Result = 0x06,
    Control = 0x07,
    EndTask = 0x08,
    Error = 0x09,
}

impl FrameType {
    pub const ALL: [FrameType; 9] = [
        FrameType::Hello,
        FrameType::TaskSetup,
        FrameType::SetupAck,
        FrameType::DataBatch,
        FrameType::Weights,
        FrameType::Result,
        FrameType::Control,
        FrameType::EndTask,
        FrameType::Error,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        Self::ALL.get((b as usize).wrapping_sub(1)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameType::Hello => "HELLO",
            FrameType::TaskSetup => "TASK_SETUP",
            FrameType::SetupAck => "SETUP_ACK",
            FrameType::DataBatch => "DATA_BATCH",
            FrameType::Weights => "WEIGHTS",
            FrameType::Result => "RESULT",
            FrameType::Control => "CONTROL",
            FrameType::EndTask => "END_TASK",
            FrameType::Error => "ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub ty: FrameType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(ty: FrameType, payload: Vec<u8>) -> Self {
        Self { ty, payload }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.ty as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    /// Decodes one frame from the front of `buf`, returning it and the bytes
    /// consumed. Truncated input, unknown types and oversized lengths are
    /// all `MalformedFrame`.
    pub fn decode(buf: &[u8]) -> Result<(Frame, usize), EngineError> {
        if buf.len() < HEADER_LEN {
            return Err(EngineError::MalformedFrame(format!("truncated header: {} bytes", buf.len())));
        }
        let ty = FrameType::from_u8(buf[0])
            .ok_or_else(|| EngineError::MalformedFrame(format!("unknown frame type 0x{:02x}", buf[0])))?;
        let len = u32::from_le_bytes(buf[1..5].try_into().expect("4 bytes")) as usize;
        if len > MAX_PAYLOAD {
            return Err(EngineError::MalformedFrame(format!("payload of {len} bytes exceeds {MAX_PAYLOAD}")));
        }
        let end = HEADER_LEN + len;
        if buf.len() < end {
            return Err(EngineError::MalformedFrame(format!(
                "truncated {} payload: {} of {len} bytes",
                ty.name(),
                buf.len() - HEADER_LEN
            )));
        }
        Ok((Frame { ty, payload: buf[HEADER_LEN..end].to_vec() }, end))
    }

    /// Decodes a buffer holding exactly one frame.
    pub fn decode_exact(buf: &[u8]) -> Result<Frame, EngineError> {
        let (f, n) = Self::decode(buf)?;
        if n != buf.len() {
            return Err(EngineError::MalformedFrame(format!("{} trailing bytes", buf.len() - n)));
        }
        Ok(f)
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&[self.ty as u8])?;
        w.write_all(&(self.payload.len() as u32).to_le_bytes())?;
        w.write_all(&self.payload)
    }

    /// Reads one frame. A clean end of stream before the first header byte
    /// is `PeerClosed`; anything cut short after that is malformed.
    pub fn read_from(r: &mut impl Read) -> Result<Frame, EngineError> {
        let mut header = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match r.read(&mut header[got..]) {
                Ok(0) if got == 0 => return Err(EngineError::PeerClosed),
                Ok(0) => return Err(EngineError::MalformedFrame(format!("truncated header: {got} bytes"))),
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(EngineError::from_io(e)),
            }
        }
        let ty = FrameType::from_u8(header[0])
            .ok_or_else(|| EngineError::MalformedFrame(format!("unknown frame type 0x{:02x}", header[0])))?;
        let len = u32::from_le_bytes(header[1..5].try_into().expect("4 bytes")) as usize;
        if len > MAX_PAYLOAD {
            return Err(EngineError::MalformedFrame(format!("payload of {len} bytes exceeds {MAX_PAYLOAD}")));
        }
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => EngineError::MalformedFrame(format!("truncated {} payload", ty.name())),
            _ => EngineError::from_io(e),
        })?;
        Ok(Frame { ty, payload })
    }
}

/// Little-endian cursor over a binary payload.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], EngineError> {
        if self.buf.len() - self.pos < n {
            return Err(EngineError::MalformedFrame(format!("truncated {} payload", self.what)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, EngineError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, EngineError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, EngineError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, EngineError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, EngineError> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| EngineError::MalformedFrame(format!("{} element count overflows", self.what)))?;
        let raw = self.take(bytes)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    pub(crate) fn finish(&self) -> Result<(), EngineError> {
        if self.pos != self.buf.len() {
            return Err(EngineError::MalformedFrame(format!(
                "{} trailing bytes in {} payload",
                self.buf.len() - self.pos,
                self.what
            )));
        }
        Ok(())
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    out.reserve(vals.len() * 4);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
