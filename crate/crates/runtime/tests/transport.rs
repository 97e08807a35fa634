use std::io::Write;
use std::net::TcpStream;

use hecsb_core::distill::SplitModelBase;
use hecsb_core::{FactorizedPrior, Mlp, Tensor};
use hecsb_runtime::{
    argmax, infer_remote, latency_model, read_frame, request_shutdown, serve_tail, write_frame,
    Frame, FrameKind, HeadModel, LinkProfile, RemoteSession, TailService,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_split(latent: usize, seed: u64) -> SplitModelBase<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SplitModelBase {
        encoder: Mlp::relu_net(&[4, 8, latent], &mut rng).unwrap(),
        decoder: Mlp::relu_net(&[latent, 8, 6], &mut rng).unwrap(),
        tail: Mlp::relu_net(&[6, 3], &mut rng).unwrap(),
        prior: FactorizedPrior::standard(latent).unwrap(),
    }
}

fn inputs() -> Vec<Tensor> {
    (0..20)
        .map(|i| {
            let base = i as f32 * 0.05;
            Tensor::new(vec![4], vec![base, 1.0 - base, base * 0.5, 0.3]).unwrap()
        })
        .collect()
}

fn head_of(model: &SplitModelBase<f32>) -> HeadModel {
    HeadModel::from_parts(model.encoder.clone(), model.prior.build_cdf().unwrap()).unwrap()
}

#[test]
fn remote_logits_are_bit_identical_to_local_for_both_codecs() {
    let model = tiny_split(2, 11);
    let mut server = serve_tail(TailService::try_from(&model).unwrap(), "127.0.0.1:0").unwrap();
    let head = head_of(&model);
    let mut session = RemoteSession::connect(server.addr(), &head).unwrap();

    for x in inputs() {
        let (remote, timing) = session.infer(&head, &x, FrameKind::CodedLatent, None).unwrap();
        let (local, _) = model.predict_local(&x).unwrap();
        assert_eq!(remote, local.as_slice());
        assert!(timing.payload_bytes > 0);

        let (remote_raw, _) = session.infer(&head, &x, FrameKind::RawLatent, None).unwrap();
        let z = model.head_infer(&x).unwrap();
        let local_raw = model.logits_from_latent(&z).unwrap();
        assert_eq!(remote_raw, local_raw.as_slice());
    }
    server.stop();
}

#[test]
fn one_connection_handles_a_hundred_ordered_requests() {
    let model = tiny_split(3, 12);
    let mut server = serve_tail(TailService::try_from(&model).unwrap(), "127.0.0.1:0").unwrap();
    let head = head_of(&model);
    let mut session = RemoteSession::connect(server.addr(), &head).unwrap();
    let xs = inputs();
    for i in 0..100 {
        let x = &xs[i % xs.len()];
        let (remote, _) = session.infer(&head, x, FrameKind::CodedLatent, None).unwrap();
        let (local, _) = model.predict_local(x).unwrap();
        assert_eq!(remote, local.as_slice(), "request {i}");
    }
    server.stop();
}

#[test]
fn garbage_and_corruption_get_error_frames_and_the_connection_survives() {
    let model = tiny_split(2, 13);
    let mut server = serve_tail(TailService::try_from(&model).unwrap(), "127.0.0.1:0").unwrap();
    let head = head_of(&model);

    let stream = TcpStream::connect(server.addr()).unwrap();
    let mut reader = std::io::BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;

    // Garbage before any handshake: the server must answer with an error
    // frame once it resynchronizes on the next real frame.
    writer.write_all(&[0x55u8; 64]).unwrap();
    let mut hello = Vec::new();
    hello.extend_from_slice(&head.checksum().to_be_bytes());
    hello.extend_from_slice(&(head.latent_dim() as u32).to_be_bytes());
    write_frame(&mut writer, &Frame::control(FrameKind::Hello, hello).unwrap()).unwrap();
    let junk_reply = read_frame(&mut reader).unwrap();
    assert_eq!(junk_reply.kind, FrameKind::Error);
    let ack = read_frame(&mut reader).unwrap();
    assert_eq!(ack.kind, FrameKind::Ack);

    // A frame with a flipped payload bit: checksum error frame, then normal
    // service continues on the same connection.
    let x = &inputs()[0];
    let good = head.encode_latent(x, FrameKind::CodedLatent).unwrap();
    let mut corrupted = good.encode().unwrap();
    let n = corrupted.len();
    corrupted[n - 6] ^= 0x40;
    writer.write_all(&corrupted).unwrap();
    let crc_reply = read_frame(&mut reader).unwrap();
    assert_eq!(crc_reply.kind, FrameKind::Error);

    write_frame(&mut writer, &good).unwrap();
    let logits_reply = read_frame(&mut reader).unwrap();
    assert_eq!(logits_reply.kind, FrameKind::Logits);
    server.stop();
}

#[test]
fn handshake_rejects_a_mismatched_table() {
    let model = tiny_split(2, 14);
    let mut server = serve_tail(TailService::try_from(&model).unwrap(), "127.0.0.1:0").unwrap();

    // Same latent width, different prior parameters: the checksum differs.
    let mut wrong_prior = model.prior.clone();
    wrong_prior.mu.as_mut_slice()[0] = 3.0;
    let head = HeadModel::from_parts(model.encoder.clone(), wrong_prior.build_cdf().unwrap())
        .unwrap();
    let err = RemoteSession::connect(server.addr(), &head).unwrap_err();
    assert!(matches!(err, hecsb_runtime::RuntimeError::Handshake(_)));

    // Inference before a handshake is refused but answered.
    let stream = TcpStream::connect(server.addr()).unwrap();
    let mut reader = std::io::BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let good_head = head_of(&model);
    let frame = good_head
        .encode_latent(&inputs()[0], FrameKind::CodedLatent)
        .unwrap();
    write_frame(&mut writer, &frame).unwrap();
    let reply = read_frame(&mut reader).unwrap();
    assert_eq!(reply.kind, FrameKind::Error);
    server.stop();
}

#[test]
fn server_survives_abrupt_disconnects() {
    let model = tiny_split(2, 15);
    let mut server = serve_tail(TailService::try_from(&model).unwrap(), "127.0.0.1:0").unwrap();
    let head = head_of(&model);

    // Half a frame, then the client vanishes.
    {
        let mut stream = TcpStream::connect(server.addr()).unwrap();
        let bytes = head
            .encode_latent(&inputs()[0], FrameKind::CodedLatent)
            .unwrap()
            .encode()
            .unwrap();
        stream.write_all(&bytes[..bytes.len() / 2]).unwrap();
    }
    // The server still serves new clients.
    let (label, logits, _) = infer_remote(
        &head,
        server.addr(),
        &inputs()[3],
        FrameKind::CodedLatent,
        None,
    )
    .unwrap();
    assert_eq!(label, argmax(&logits));
    let (local, _) = model.predict_local(&inputs()[3]).unwrap();
    assert_eq!(logits, local.as_slice());
    server.stop();
}

#[test]
fn shutdown_frame_stops_the_server() {
    let model = tiny_split(2, 16);
    let mut server = serve_tail(TailService::try_from(&model).unwrap(), "127.0.0.1:0").unwrap();
    let addr = server.addr();
    request_shutdown(addr).unwrap();
    server.wait();
    // The listener is gone; a fresh session cannot be established.
    assert!(RemoteSession::connect(addr, &head_of(&model)).is_err());
}

#[test]
fn paced_transfer_matches_the_latency_model_within_ten_percent() {
    // A wide latent makes the raw-codec payload a realistic size: 4088
    // floats are 16,352 bytes, within rounding of the flagship 16,350-byte
    // payload whose 4G serialization time is 10.9 ms.
    let model = tiny_split(4088, 17);
    let mut server = serve_tail(TailService::try_from(&model).unwrap(), "127.0.0.1:0").unwrap();
    let head = head_of(&model);
    let mut session = RemoteSession::connect(server.addr(), &head).unwrap();
    let x = &inputs()[0];

    let mut measured = Vec::new();
    for mbps in [12.0, 54.0, 66.9] {
        let link = LinkProfile::from_mbps("test", mbps, 0.0).unwrap();
        // The pacer can only err slow (scheduler preemption), never fast, so
        // the minimum of a few attempts is the honest fidelity measurement.
        let mut best = f64::INFINITY;
        let mut predicted = 0.0;
        for _ in 0..3 {
            let (_, timing) = session.infer(&head, x, FrameKind::RawLatent, Some(&link)).unwrap();
            best = best.min(timing.transfer_ms);
            predicted = latency_model(timing.payload_bytes, &link);
        }
        let ratio = best / predicted;
        assert!(
            (0.9..1.1).contains(&ratio),
            "{mbps} Mbps: measured {best:.3} ms vs predicted {predicted:.3} ms"
        );
        measured.push(best);
    }
    assert!(measured[0] > measured[1] && measured[1] > measured[2]);
    server.stop();
}

#[test]
fn timing_report_components_sum_to_the_total() {
    let model = tiny_split(2, 18);
    let mut server = serve_tail(TailService::try_from(&model).unwrap(), "127.0.0.1:0").unwrap();
    let head = head_of(&model);
    let mut session = RemoteSession::connect(server.addr(), &head).unwrap();
    let link = LinkProfile::from_mbps("rtt-link", 54.0, 8.0).unwrap();
    let (_, timing) = session
        .infer(&head, &inputs()[1], FrameKind::CodedLatent, Some(&link))
        .unwrap();
    let sum = timing.head_ms + timing.transfer_ms + timing.tail_ms;
    assert!(
        (timing.total_ms - sum).abs() < 1.0,
        "total {} vs component sum {sum}",
        timing.total_ms
    );
    // The round trip is baked into the transfer term.
    assert!(timing.transfer_ms >= 8.0);
    server.stop();
}
