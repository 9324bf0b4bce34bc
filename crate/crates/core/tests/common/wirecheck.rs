//! Golden frames, random messages and a byte-level fuzzer for the wire format.

use std::panic::{catch_unwind, AssertUnwindSafe};

use edgesplit::runtime::{decode_frame, encode_frame, AckStatus, DecodeError, FeatureFrame, Message, ResultFrame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hex(s: &str) -> Vec<u8> {
    let clean: String = s.split_whitespace().collect();
    (0..clean.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&clean[i..i + 2], 16).unwrap())
        .collect()
}

/// One hand-assembled frame per message type.
pub fn goldens() -> Vec<(&'static str, Message, Vec<u8>)> {
    let mut hash = [0u8; 32];
    for (i, b) in hash.iter_mut().enumerate() {
        *b = i as u8;
    }
    vec![
        (
            "hello",
            Message::Hello { model_hash: hash, split: 6 },
            hex("53574952 01 01 0000 00000022
                 000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f
                 0006"),
        ),
        (
            "hello_ack",
            Message::HelloAck { status: AckStatus::BadSplit },
            hex("53574952 01 02 0000 00000001 02"),
        ),
        (
            "feature",
            Message::Feature(FeatureFrame {
                request_id: 0x0102,
                dims: vec![1, 2],
                data: vec![1.0, -2.0],
            }),
            hex("53574952 01 03 0000 0000001a
                 0000000000000102 00 02 00000001 00000002 0000803f 000000c0"),
        ),
        (
            "result",
            Message::Result(ResultFrame {
                request_id: 7,
                logits: vec![0.5, 0.25],
                server_compute_ns: 1000,
            }),
            hex("53574952 01 04 0000 0000001c
                 0000000000000007 00000002 0000003f 0000803e 00000000000003e8"),
        ),
        ("ping", Message::Ping, hex("53574952 01 05 0000 00000000")),
        ("pong", Message::Pong, hex("53574952 01 06 0000 00000000")),
        (
            "error",
            Message::Error {
                code: 3,
                message: "shape".into(),
            },
            hex("53574952 01 07 0000 00000007 0003 7368617065"),
        ),
    ]
}

/// Names of golden frames whose encoding or decoding differs.
pub fn golden_failures() -> Vec<String> {
    let mut bad = Vec::new();
    for (name, msg, bytes) in goldens() {
        if encode_frame(&msg) != bytes {
            bad.push(format!("{name}: encode"));
        }
        match decode_frame(&bytes) {
            Ok((m, used)) if m == msg && used == bytes.len() => {}
            _ => bad.push(format!("{name}: decode")),
        }
    }
    bad
}

fn finite<R: Rng>(rng: &mut R) -> f32 {
    loop {
        let v = f32::from_bits(rng.random());
        if !v.is_nan() {
            return v;
        }
    }
}

pub fn random_message<R: Rng>(rng: &mut R) -> Message {
    match rng.random_range(0..7) {
        0 => Message::Hello {
            model_hash: rng.random(),
            split: rng.random(),
        },
        1 => Message::HelloAck {
            status: [AckStatus::Ok, AckStatus::HashMismatch, AckStatus::BadSplit][rng.random_range(0..3)],
        },
        2 => {
            let dims: Vec<u32> = (0..rng.random_range(0..5)).map(|_| rng.random_range(0..5)).collect();
            let n = dims.iter().product::<u32>() as usize;
            Message::Feature(FeatureFrame {
                request_id: rng.random(),
                data: (0..n).map(|_| finite(rng)).collect(),
                dims,
            })
        }
        3 => Message::Result(ResultFrame {
            request_id: rng.random(),
            logits: (0..rng.random_range(0..50)).map(|_| finite(rng)).collect(),
            server_compute_ns: rng.random(),
        }),
        4 => Message::Ping,
        5 => Message::Pong,
        _ => Message::Error {
            code: rng.random(),
            message: (0..rng.random_range(0..20)).map(|_| rng.random::<char>()).collect(),
        },
    }
}

/// Count of random messages that fail `decode(encode(m)) == m`.
pub fn roundtrip_failures(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .filter(|_| {
            let m = random_message(&mut rng);
            let bytes = encode_frame(&m);
            !matches!(decode_frame(&bytes), Ok((d, used)) if d == m && used == bytes.len())
        })
        .count()
}

#[derive(Debug, Default)]
pub struct FuzzStats {
    pub inputs: usize,
    pub panics: usize,
    pub decoded: usize,
    pub need_more: usize,
    pub errors: usize,
}

fn fuzz_input<R: Rng>(rng: &mut R) -> Vec<u8> {
    match rng.random_range(0..4) {
        // raw noise
        0 => (0..rng.random_range(0..64)).map(|_| rng.random()).collect(),
        // valid header, random type and payload
        1 => {
            let payload: Vec<u8> = (0..rng.random_range(0..48)).map(|_| rng.random()).collect();
            let mut b = b"SWIR".to_vec();
            b.push(1);
            b.push(rng.random_range(0..9));
            b.extend_from_slice(&[0, 0]);
            b.extend_from_slice(&(payload.len() as u32).to_be_bytes());
            b.extend_from_slice(&payload);
            b
        }
        // valid frame with flipped bytes
        2 => {
            let mut b = encode_frame(&random_message(rng));
            for _ in 0..rng.random_range(1..4) {
                let i = rng.random_range(0..b.len());
                b[i] ^= 1 << rng.random_range(0..8);
            }
            b
        }
        // truncated valid frame
        _ => {
            let b = encode_frame(&random_message(rng));
            let cut = rng.random_range(0..b.len());
            b[..cut].to_vec()
        }
    }
}

pub fn fuzz(n: usize, seed: u64) -> FuzzStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = FuzzStats::default();
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for _ in 0..n {
        let input = fuzz_input(&mut rng);
        stats.inputs += 1;
        match catch_unwind(AssertUnwindSafe(|| decode_frame(&input))) {
            Err(_) => stats.panics += 1,
            Ok(Ok(_)) => stats.decoded += 1,
            Ok(Err(DecodeError::NeedMoreBytes { .. })) => stats.need_more += 1,
            Ok(Err(_)) => stats.errors += 1,
        }
    }
    std::panic::set_hook(hook);
    stats
}
