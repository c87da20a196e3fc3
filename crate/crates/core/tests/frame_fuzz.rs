mod support;

use neurdb_core::engine::*;
use proptest::prelude::*;

#[test]
fn codec_survives_random_frames() {
    let rep = support::fuzz::fuzz_frames(20_000, 0x5eed);
    assert!(rep.ok(), "{:?}", &rep.failures[..rep.failures.len().min(5)]);
    assert_eq!(rep.truncated_rejected, rep.frames);
    assert_eq!(rep.oversized_rejected, rep.frames);
}

fn arb_message() -> impl Strategy<Value = Message> {
    let floats = prop::collection::vec(-1e6f32..1e6, 0..40);
    prop_oneof![
        (any::<u32>(), prop::collection::vec("[a-z]{1,6}", 0..3))
            .prop_map(|(v, c)| Message::Hello(Hello { protocol_version: v, capabilities: c })),
        (prop::option::of(1u32..5000), prop::option::of(1u32..100)).prop_map(|(b, t)| {
            Message::Control(ParamDelta { batch_size: b, batches_per_transmission: t, ..Default::default() })
        }),
        (any::<u64>(), any::<u64>(), 1usize..6, 1usize..6, any::<bool>()).prop_flat_map(|(task, seq, r, c, lab)| {
            (prop::collection::vec(-1e3f32..1e3, r * c), prop::collection::vec(-1e3f32..1e3, r)).prop_map(
                move |(features, labels)| {
                    Message::DataBatch(DataBatch {
                        task_id: task,
                        seq,
                        n_rows: r as u32,
                        n_cols: c as u16,
                        features,
                        labels: lab.then_some(labels),
                    })
                },
            )
        }),
        (any::<u64>(), any::<bool>(), floats).prop_map(|(task_id, p, values)| Message::Result(ResultMsg {
            task_id,
            kind: if p { ResultKind::Predictions } else { ResultKind::LossReport },
            values
        })),
        any::<u64>().prop_map(|task_id| Message::EndTask { task_id }),
        ("[A-Z]{3,9}", ".{0,20}").prop_map(|(code, message)| Message::Error(ErrorMsg { code, message })),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn messages_round_trip_through_bytes(m in arb_message()) {
        let bytes = m.to_frame().encode();
        let back = Message::from_frame(&Frame::decode_exact(&bytes).unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn concatenated_frames_decode_in_order(ms in prop::collection::vec(arb_message(), 1..8)) {
        let mut buf = Vec::new();
        for m in &ms {
            m.to_frame().encode_into(&mut buf);
        }
        let mut off = 0;
        for m in &ms {
            let (f, used) = Frame::decode(&buf[off..]).unwrap();
            prop_assert_eq!(&Message::from_frame(&f).unwrap(), m);
            off += used;
        }
        prop_assert_eq!(off, buf.len());
    }
}
