mod common;

use std::io::Cursor;
use std::net::TcpListener;
use std::thread;

use ddss::dist::message::{decode, encode, read_frame, write_frame, HEADER_LEN};
use ddss::dist::*;
use ddss::screening::ActiveSet;
use ddss::solver::{Mode, SolverConfig};
use ddss::Error;
use proptest::prelude::*;

use common::{body_strategy as body, SIZES};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn encode_decode_is_identity(epoch in any::<u64>(), body in body()) {
        let msg = Message::new(epoch, body);
        let frame = encode(&msg);
        let back = decode(&frame, &SIZES).unwrap();
        // compare bytes so NaN payloads count as equal
        prop_assert_eq!(encode(&back), frame.clone());
        prop_assert_eq!(back.tag(), msg.tag());
        prop_assert_eq!(back.epoch, epoch);
        let mut stream = Cursor::new(Vec::new());
        write_frame(&mut stream, &msg).unwrap();
        stream.set_position(0);
        let read = read_frame(&mut stream, &SIZES).unwrap().unwrap();
        prop_assert_eq!(encode(&read), frame);
        prop_assert!(read_frame(&mut stream, &SIZES).unwrap().is_none());
    }
}

#[test]
fn header_layout() {
    let frame = encode(&Message::new(0x0102, Body::Params(vec![1.5])));
    assert_eq!(&frame[0..4], &8u32.to_le_bytes());
    assert_eq!(frame[4], Tag::Params as u8);
    assert_eq!(&frame[5..13], &0x0102u64.to_le_bytes());
    assert_eq!(&frame[HEADER_LEN..], &1.5f64.to_le_bytes());
}

#[test]
fn malformed_frames_are_rejected() {
    let good = encode(&Message::new(3, Body::Params(vec![1.0, 2.0])));
    assert!(matches!(decode(&good[..good.len() - 1], &SIZES), Err(Error::Frame(_))));
    let mut bad_tag = good.clone();
    bad_tag[4] = 42;
    assert!(matches!(decode(&bad_tag, &SIZES), Err(Error::Frame(_))));
    let unknown_block = encode(&Message::new(0, Body::DeltaPush(vec![BlockDelta { block: 9, values: vec![1.0] }])));
    assert!(matches!(decode(&unknown_block, &SIZES), Err(Error::Frame(_))));
    // a delta whose length disagrees with the block size leaves trailing bytes
    let wrong_len = encode(&Message::new(0, Body::DeltaPush(vec![BlockDelta { block: 0, values: vec![1.0, 2.0] }])));
    assert!(decode(&wrong_len, &SIZES).is_err());
    let mut truncated = Cursor::new(good[..HEADER_LEN + 3].to_vec());
    assert!(matches!(read_frame(&mut truncated, &SIZES), Err(Error::Frame(_))));
}

fn sync_opts(transport: TransportKind) -> DistOptions {
    DistOptions { workers: 1, transport, schedule: Schedule::Sync }
}

#[test]
fn tcp_and_loopback_traces_agree_under_sync_scheduling() {
    let problem = common::reference_instance(0.0);
    let cfg = SolverConfig { epochs: 8, seed: 11, tau_assumed: 3.0, ..Default::default() };
    for workers in [1, 3] {
        let run = |t| dist_ddss_run(&problem, &cfg, DistOptions { workers, ..sync_opts(t) }).unwrap();
        let (a, b) = (run(TransportKind::Loopback), run(TransportKind::Tcp));
        assert_eq!(a.trace.len(), b.trace.len());
        assert!(a.trace.iter().zip(&b.trace).all(|(x, y)| x.same_up_to_time(y)));
        assert_eq!(a.x, b.x);
    }
}

#[test]
fn stale_deltas_are_discarded_and_surplus_drained() {
    let problem = common::lasso_instance(12, 4, 1.0, 0.1, 2);
    let (links, mut worker) = loopback_pair();
    let mut server = DistServer::new(&problem, links, Schedule::Sync).unwrap();
    let active = ActiveSet::full(&problem.spec().partition);
    let grad0 = vec![0.0; 4];
    let mut x = vec![0.5; 4];
    let stale = Message::new(0, Body::DeltaPush(vec![BlockDelta { block: 0, values: vec![100.0] }]));
    let fresh = Message::new(1, Body::DeltaPush(vec![BlockDelta { block: 2, values: vec![0.25] }]));
    worker.sink.send(stale).unwrap();
    worker.sink.send(fresh).unwrap();
    let report = server.run_inner(1, &active, &grad0, &mut x, Mode::Ddss, 0.1, 1, 0).unwrap();
    assert_eq!(report.applied, 1);
    assert_eq!(report.stale_discarded, 1);
    assert_eq!(x, vec![0.5, 0.5, 0.75, 0.5]);
    // announcement, inner flag, one priming push; nothing after the K-th delta
    let tags: Vec<Tag> = (0..3).map(|_| worker.source.recv().unwrap().tag()).collect();
    assert_eq!(tags, vec![Tag::FullGradAndActiveSet, Tag::FlagFalse, Tag::ParamPush]);
}

#[test]
fn zero_inner_steps_leave_the_iterate_alone() {
    let problem = common::lasso_instance(12, 4, 1.0, 0.1, 2);
    let (links, mut worker) = loopback_pair();
    let mut server = DistServer::new(&problem, links, Schedule::Async).unwrap();
    let active = ActiveSet::full(&problem.spec().partition);
    let mut x = vec![0.5, -1.0, 0.0, 2.0];
    let report = server.run_inner(1, &active, &[0.0; 4], &mut x, Mode::Ddss, 0.1, 0, 0).unwrap();
    assert_eq!(report, InnerReport::default());
    assert_eq!(x, vec![0.5, -1.0, 0.0, 2.0]);
    server.shutdown();
    let tags: Vec<Tag> = (0..3).map(|_| worker.source.recv().unwrap().tag()).collect();
    assert_eq!(tags, vec![Tag::FullGradAndActiveSet, Tag::FlagFalse, Tag::Shutdown]);
}

#[test]
fn future_epoch_delta_is_a_protocol_error() {
    let problem = common::lasso_instance(12, 4, 1.0, 0.1, 2);
    let (links, mut worker) = loopback_pair();
    let mut server = DistServer::new(&problem, links, Schedule::Sync).unwrap();
    let active = ActiveSet::full(&problem.spec().partition);
    worker.sink.send(Message::new(5, Body::DeltaPush(Vec::new()))).unwrap();
    let err = server.run_inner(1, &active, &[0.0; 4], &mut [0.0; 4], Mode::Ddss, 0.1, 3, 0).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)));
}

#[test]
fn dropped_worker_is_reported() {
    let problem = common::lasso_instance(12, 4, 1.0, 0.1, 2);
    let (links, worker) = loopback_pair();
    let mut server = DistServer::new(&problem, links, Schedule::Sync).unwrap();
    drop(worker);
    let active = ActiveSet::full(&problem.spec().partition);
    let err = server.run_head(0, &active, &[0.0; 4]).unwrap_err();
    assert!(matches!(err, Error::Disconnected { worker: 0, .. }));
}

#[test]
fn tcp_registration_rejects_duplicates() {
    let problem = common::lasso_instance(12, 4, 1.0, 0.1, 2);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let sizes = frame_block_sizes(&problem);
    let s2 = sizes.clone();
    let h = thread::spawn(move || {
        let a = tcp_connect(addr, 0, 2, s2.clone()).unwrap();
        let b = tcp_connect(addr, 0, 2, s2).unwrap();
        (a, b)
    });
    let res = tcp_accept(&listener, 2, sizes);
    assert!(matches!(res, Err(Error::Protocol(_))));
    drop(h.join().unwrap());
}
