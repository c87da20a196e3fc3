//! Frame codec fuzzing shared by the protocol tests and the acceptance run.

use std::panic::{catch_unwind, AssertUnwindSafe};

use neurdb_core::engine::{EngineError, Frame, FrameType, Message, MAX_PAYLOAD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Default)]
pub struct FuzzReport {
    pub frames: usize,
    pub round_trips: usize,
    pub truncated_rejected: usize,
    pub oversized_rejected: usize,
    pub garbage_handled: usize,
    pub failures: Vec<String>,
}

impl FuzzReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.round_trips == self.frames
    }
}

fn random_payload(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let len = match rng.gen_range(0..10) {
        0 => 0,
        1..=7 => rng.gen_range(1..64),
        _ => rng.gen_range(64..4096),
    };
    (0..len).map(|_| rng.gen()).collect()
}

/// Encodes `n` random frames and checks that each decodes to itself, that
/// every strict prefix and every length above the limit is rejected as
/// malformed, and that decoding random bytes as frames or messages never
/// panics.
pub fn fuzz_frames(n: usize, seed: u64) -> FuzzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = FuzzReport { frames: n, ..Default::default() };
    for i in 0..n {
        let ty = FrameType::ALL[rng.gen_range(0..FrameType::ALL.len())];
        let frame = Frame::new(ty, random_payload(&mut rng));
        let bytes = frame.encode();

        match Frame::decode_exact(&bytes) {
            Ok(f) if f == frame => {}
            other => {
                rep.failures.push(format!("frame {i}: round trip gave {other:?}"));
                continue;
            }
        }
        let mut reader = &bytes[..];
        match Frame::read_from(&mut reader) {
            Ok(f) if f == frame && reader.is_empty() => rep.round_trips += 1,
            other => rep.failures.push(format!("frame {i}: stream round trip gave {other:?}")),
        }

        let cut = rng.gen_range(0..bytes.len());
        let cut_ok = matches!(Frame::decode(&bytes[..cut]), Err(EngineError::MalformedFrame(_)))
            && (cut == 0 || matches!(Frame::read_from(&mut &bytes[..cut]), Err(EngineError::MalformedFrame(_))));
        if cut_ok {
            rep.truncated_rejected += 1;
        } else {
            rep.failures.push(format!("frame {i}: prefix of {cut} bytes accepted"));
        }

        let mut big = bytes.clone();
        let len = rng.gen_range(MAX_PAYLOAD as u64 + 1..=u32::MAX as u64) as u32;
        big[1..5].copy_from_slice(&len.to_le_bytes());
        if matches!(Frame::decode(&big), Err(EngineError::MalformedFrame(_)))
            && matches!(Frame::read_from(&mut &big[..]), Err(EngineError::MalformedFrame(_)))
        {
            rep.oversized_rejected += 1;
        } else {
            rep.failures.push(format!("frame {i}: oversized length {len} accepted"));
        }

        let garbage: Vec<u8> = (0..rng.gen_range(0..32)).map(|_| rng.gen()).collect();
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            if let Ok((f, used)) = Frame::decode(&garbage) {
                assert!(used <= garbage.len());
                let _ = Message::from_frame(&f);
            }
            let _ = Message::from_frame(&frame);
        }));
        match outcome {
            Ok(()) => rep.garbage_handled += 1,
            Err(_) => rep.failures.push(format!("frame {i}: decoder panicked")),
        }
    }
    rep
}
