use std::sync::mpsc;
use std::time::Duration;

use neurdb_core::engine::*;
use neurdb_core::nn::{Layer, Loss, Matrix, Network};

fn regression_data(rows: usize, cols: usize, seed: u64) -> (Matrix, Vec<f32>) {
    let mut rng = neurdb_core::nn::SplitMix64::new(seed);
    let mut x = Vec::with_capacity(rows * cols);
    let mut y = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut t = 0.0;
        for c in 0..cols {
            let v = rng.next_f32() * 2.0 - 1.0;
            t += v * (c as f32 + 1.0);
            x.push(v);
        }
        y.push(t);
    }
    (Matrix::from_vec(rows, cols, x).unwrap(), y)
}

fn source(batches: Vec<Batch>) -> BatchSource {
    Box::new(batches.into_iter().map(Ok))
}

fn params(batch_size: u32, bpt: u32) -> StreamParams {
    StreamParams { batch_size, batches_per_transmission: bpt, ..Default::default() }
}

fn train_task(x: &Matrix, y: &[f32], bs: usize, bpt: u32, seed: u64) -> AiTask {
    AiTask {
        kind: TaskKind::Train,
        model: ModelSpec { layer_dims: vec![x.cols(), 8, 1], loss: Loss::Mse, suffix_len: 0 },
        params: params(bs as u32, bpt),
        seed,
        lr: 0.05,
        weights: vec![],
        source: source(batches_of(x, Some(y), bs)),
    }
}

fn network_of(layers: &[(u16, Layer)], loss: Loss) -> Network {
    let mut ls = layers.to_vec();
    ls.sort_by_key(|(i, _)| *i);
    Network::new(ls.into_iter().map(|(_, l)| l).collect(), loss).unwrap()
}

fn local_train(x: &Matrix, y: &[f32], bs: usize, seed: u64) -> (Network, Vec<f32>) {
    let mut net = Network::mlp(x.cols(), &[8], 1, Loss::Mse, seed).unwrap();
    let mut losses = Vec::new();
    for b in batches_of(x, Some(y), bs) {
        losses.push(net.train_step(&b.features, b.labels.as_ref().unwrap(), 0.05).unwrap());
    }
    (net, losses)
}

fn bits(net: &Network) -> Vec<u32> {
    net.layers().iter().flat_map(|l| l.weights().iter().chain(l.bias()).map(|v| v.to_bits())).collect()
}

#[test]
fn train_in_process_matches_local_sgd() {
    let (x, y) = regression_data(300, 3, 1);
    let engine = AiEngine::in_process();
    let out = engine.run(train_task(&x, &y, 32, 4, 7)).unwrap();
    let (local, local_losses) = local_train(&x, &y, 32, 7);
    assert_eq!(out.losses, local_losses);
    assert_eq!(bits(&network_of(&out.layers, Loss::Mse)), bits(&local));
    assert_eq!(out.stats.batches_sent, 10);
    assert_eq!(out.stats.group_sizes, vec![4, 4, 2]);
    assert!(out.losses.last().unwrap() < out.losses.first().unwrap());
}

#[test]
fn tcp_runtime_is_bit_equal_to_in_process() {
    let (x, y) = regression_data(200, 4, 2);
    let server = TcpRuntimeServer::spawn("127.0.0.1:0", RuntimeConfig::default(), Some(1)).unwrap();
    let tcp =
        AiEngine::new(EngineConfig { endpoint: RuntimeEndpoint::Tcp(server.addr().to_string()), ..Default::default() });
    let a = tcp.run(train_task(&x, &y, 16, 3, 11)).unwrap();
    server.join();
    let b = AiEngine::in_process().run(train_task(&x, &y, 16, 3, 11)).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(bits(&network_of(&a.layers, Loss::Mse)), bits(&network_of(&b.layers, Loss::Mse)));
}

#[test]
fn finetune_returns_suffix_and_infer_matches_forward() {
    let (x, y) = regression_data(128, 2, 3);
    let engine = AiEngine::in_process();
    let base = network_of(&engine.run(train_task(&x, &y, 32, 2, 5)).unwrap().layers, Loss::Mse);
    let n = base.layers().len();
    let ft = engine
        .run(AiTask {
            kind: TaskKind::Finetune,
            model: ModelSpec { layer_dims: base.layer_dims(), loss: Loss::Mse, suffix_len: 1 },
            params: params(32, 2),
            seed: 0,
            lr: 0.05,
            weights: base.layers().to_vec(),
            source: source(batches_of(&x, Some(&y), 32)),
        })
        .unwrap();
    assert_eq!(ft.layers.len(), 1);
    assert_eq!(ft.layers[0].0 as usize, n);
    // Local replay with the prefix frozen.
    let mut local = base.clone();
    local.freeze_before(n - 1);
    for b in batches_of(&x, Some(&y), 32) {
        local.train_step(&b.features, b.labels.as_ref().unwrap(), 0.05).unwrap();
    }
    assert_eq!(ft.layers[0].1.weights(), local.layers()[n - 1].weights());

    let inf = engine
        .run(AiTask {
            kind: TaskKind::Infer,
            model: ModelSpec { layer_dims: base.layer_dims(), loss: Loss::Mse, suffix_len: 0 },
            params: params(50, 2),
            seed: 0,
            lr: 0.0,
            weights: base.layers().to_vec(),
            source: source(batches_of(&x, None, 50)),
        })
        .unwrap();
    assert!(inf.layers.is_empty());
    assert_eq!(inf.predictions, base.forward(&x).unwrap().into_vec());
}

#[test]
fn invalid_tasks_rejected_before_dispatch() {
    let (x, y) = regression_data(10, 2, 4);
    let engine = AiEngine::in_process();
    let mut t = train_task(&x, &y, 5, 1, 0);
    t.params.batch_size = 0;
    assert!(matches!(engine.submit(t), Err(EngineError::InvalidTask(_))));
    let mut t = train_task(&x, &y, 5, 1, 0);
    t.params.batches_per_transmission = 0;
    assert!(matches!(engine.submit(t), Err(EngineError::InvalidTask(_))));
    let mut t = train_task(&x, &y, 5, 1, 0);
    t.kind = TaskKind::Infer;
    assert!(matches!(engine.submit(t), Err(EngineError::InvalidTask(_))));
}

#[test]
fn offline_runtime_and_fallback() {
    let (x, y) = regression_data(10, 2, 4);
    // Bind then drop to get a port with nobody listening.
    let addr = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let cfg = EngineConfig { endpoint: RuntimeEndpoint::Tcp(addr.to_string()), ..Default::default() };
    let engine = AiEngine::new(cfg.clone());
    assert!(matches!(engine.submit(train_task(&x, &y, 5, 1, 0)), Err(EngineError::RuntimeUnavailable(_))));
    let engine = AiEngine::new(EngineConfig { fallback_inprocess: true, ..cfg });
    assert_eq!(engine.run(train_task(&x, &y, 5, 1, 0)).unwrap().losses.len(), 2);
    assert_eq!("tcp:localhost:9000".parse::<RuntimeEndpoint>().unwrap(), RuntimeEndpoint::Tcp("localhost:9000".into()));
    assert!("udp:1".parse::<RuntimeEndpoint>().is_err());
}

#[test]
fn ack_lowers_but_never_raises() {
    let (x, y) = regression_data(64, 2, 5);
    let same = AiEngine::in_process().run(train_task(&x, &y, 4, 8, 0)).unwrap();
    assert_eq!(same.params, params(4, 8));
    let limited = AiEngine::new(EngineConfig {
        runtime: RuntimeConfig { max_batches_per_transmission: 40, ..Default::default() },
        ..Default::default()
    });
    let mut t = train_task(&x, &y, 1, 80, 0);
    t.params.batches_per_transmission = 80;
    let out = limited.run(t).unwrap();
    assert_eq!(out.params.batches_per_transmission, 40);
    assert_eq!(out.stats.group_sizes, vec![40, 24]);
}

#[test]
fn empty_source_sends_only_end_task() {
    let engine = AiEngine::in_process();
    let out = engine
        .run(AiTask {
            kind: TaskKind::Train,
            model: ModelSpec { layer_dims: vec![3, 2, 1], loss: Loss::Mse, suffix_len: 0 },
            params: params(8, 2),
            seed: 3,
            lr: 0.1,
            weights: vec![],
            source: source(vec![]),
        })
        .unwrap();
    assert_eq!(out.stats.batches_sent, 0);
    assert!(out.stats.group_sizes.is_empty());
    // Untrained weights come back as initialized from the seed.
    assert_eq!(bits(&network_of(&out.layers, Loss::Mse)), bits(&Network::mlp(3, &[2], 1, Loss::Mse, 3).unwrap()));
}

#[test]
fn window_bounds_unacknowledged_batches() {
    let (x, y) = regression_data(200, 2, 6);
    let engine = AiEngine::in_process();
    let out = engine.run(train_task(&x, &y, 1, 8, 0)).unwrap();
    assert_eq!(out.stats.batches_sent, 200);
    assert!(out.stats.max_in_flight <= DEFAULT_WINDOW);
    let small = AiEngine::new(EngineConfig { window: 10, ..Default::default() });
    let out = small.run(train_task(&x, &y, 1, 4, 0)).unwrap();
    assert!(out.stats.max_in_flight <= 10);
    assert_eq!(out.losses.len(), 200);
}

/// A source that yields `first` batches, then blocks until released.
fn gated(batches: Vec<Batch>, first: usize) -> (BatchSource, mpsc::Sender<()>) {
    let (tx, rx) = mpsc::channel::<()>();
    let mut i = 0;
    let it = batches.into_iter().map(move |b| {
        if i == first {
            rx.recv().unwrap();
        }
        i += 1;
        Ok(b)
    });
    (Box::new(it), tx)
}

fn wait_acked(h: &TaskHandle, n: u64) {
    loop {
        match h.events().recv_timeout(Duration::from_secs(10)).unwrap() {
            TaskEvent::Progress { batches_acked, .. } if batches_acked >= n => return,
            _ => {}
        }
    }
}

#[test]
fn renegotiation_changes_group_size_after_ack() {
    let (x, y) = regression_data(48, 2, 7);
    let (src, release) = gated(batches_of(&x, Some(&y), 1), 16);
    let mut t = train_task(&x, &y, 1, 8, 0);
    t.source = src;
    let h = AiEngine::in_process().submit(t).unwrap();
    wait_acked(&h, 16);
    h.renegotiate(ParamDelta { batches_per_transmission: Some(4), ..Default::default() }).unwrap();
    release.send(()).unwrap();
    let out = h.wait().unwrap();
    assert_eq!(out.stats.group_sizes, vec![8, 8, 4, 4, 4, 4, 4, 4, 4, 4]);
    assert_eq!(out.stats.renegotiations, 1);
    assert_eq!(out.losses.len(), 48);
}

#[test]
fn identical_renegotiation_changes_nothing() {
    let (x, y) = regression_data(32, 2, 8);
    let (src, release) = gated(batches_of(&x, Some(&y), 1), 8);
    let mut t = train_task(&x, &y, 1, 8, 0);
    t.source = src;
    let h = AiEngine::in_process().submit(t).unwrap();
    wait_acked(&h, 8);
    h.renegotiate(ParamDelta { batches_per_transmission: Some(8), ..Default::default() }).unwrap();
    release.send(()).unwrap();
    let out = h.wait().unwrap();
    assert_eq!(out.stats.group_sizes, vec![8, 8, 8, 8]);
    let (_, local) = local_train(&x, &y, 1, 0);
    assert_eq!(out.losses, local);
}

#[test]
fn renegotiate_after_end_is_peer_closed() {
    let (x, y) = regression_data(8, 2, 9);
    let h = AiEngine::in_process().submit(train_task(&x, &y, 4, 1, 0)).unwrap();
    while !h.is_finished() {
        std::thread::sleep(Duration::from_millis(1));
    }
    assert_eq!(h.renegotiate(ParamDelta::default()), Err(EngineError::PeerClosed));
}

#[test]
fn runtime_rejects_unknown_version_and_garbage() {
    let mut s = RuntimeSession::new(RuntimeConfig::default());
    let out = s.handle(&Message::Hello(Hello { protocol_version: 99, capabilities: vec![] }).to_frame());
    assert_eq!(out.len(), 1);
    match Message::from_frame(&out[0]).unwrap() {
        Message::Error(e) => assert_eq!(e.code, "VERSION"),
        m => panic!("{m:?}"),
    }
    assert!(s.is_closed());

    let mut s = RuntimeSession::new(RuntimeConfig::default());
    let out = s.handle(&Frame::new(FrameType::DataBatch, vec![1, 2, 3]));
    assert!(matches!(Message::from_frame(&out[0]).unwrap(), Message::Error(e) if e.code == "MALFORMED"));

    let mut s = RuntimeSession::new(RuntimeConfig::default());
    let out = s.handle(&Message::EndTask { task_id: 1 }.to_frame());
    assert!(matches!(Message::from_frame(&out[0]).unwrap(), Message::Error(e) if e.code == "PROTOCOL"));
}

#[test]
fn engine_reports_version_mismatch() {
    // A fake runtime that answers HELLO with a newer version.
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let t = std::thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let _ = Frame::read_from(&mut s).unwrap();
        Message::Error(ErrorMsg { code: "VERSION".into(), message: "runtime speaks 2".into() })
            .to_frame()
            .write_to(&mut s)
            .unwrap();
    });
    let engine = AiEngine::new(EngineConfig { endpoint: RuntimeEndpoint::Tcp(addr.to_string()), ..Default::default() });
    let (x, y) = regression_data(4, 2, 0);
    assert!(matches!(engine.run(train_task(&x, &y, 2, 1, 0)), Err(EngineError::ProtocolVersionMismatch(_))));
    t.join().unwrap();
}

#[test]
fn classification_predictions_are_probabilities() {
    let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
    let net = Network::mlp(2, &[4], 3, Loss::CrossEntropy, 1).unwrap();
    let out = AiEngine::in_process()
        .run(AiTask {
            kind: TaskKind::Infer,
            model: ModelSpec { layer_dims: net.layer_dims(), loss: Loss::CrossEntropy, suffix_len: 0 },
            params: params(2, 1),
            seed: 0,
            lr: 0.0,
            weights: net.layers().to_vec(),
            source: source(batches_of(&x, None, 2)),
        })
        .unwrap();
    assert_eq!(out.predictions.len(), 9);
    for row in out.predictions.chunks(3) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
