//! Framed TCP messages.
//!
//! Header (12 bytes): `"SWIR" | version u8 (=1) | type u8 | 2 reserved zero
//! bytes | payload_len u32 BE`. Header and payload integers are big-endian;
//! tensor values are little-endian `f32`.

use std::io::{self, Read, Write};
use std::time::{Duration, Instant};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SWIR";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 12;
/// Upper bound on accepted payloads.
pub const MAX_PAYLOAD: u32 = 256 << 20;

pub const TYPE_HELLO: u8 = 0x01;
pub const TYPE_HELLO_ACK: u8 = 0x02;
pub const TYPE_FEATURE: u8 = 0x03;
pub const TYPE_RESULT: u8 = 0x04;
pub const TYPE_PING: u8 = 0x05;
pub const TYPE_PONG: u8 = 0x06;
pub const TYPE_ERROR: u8 = 0x07;

/// Codes carried by [`Message::Error`].
pub mod error_code {
    pub const PROTOCOL: u16 = 1;
    pub const VERSION: u16 = 2;
    pub const SHAPE: u16 = 3;
    pub const INTERNAL: u16 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum AckStatus {
    Ok = 0,
    HashMismatch = 1,
    BadSplit = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub request_id: u64,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultFrame {
    pub request_id: u64,
    pub logits: Vec<f32>,
    pub server_compute_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { model_hash: [u8; 32], split: u16 },
    HelloAck { status: AckStatus },
    Feature(FeatureFrame),
    Result(ResultFrame),
    Ping,
    Pong,
    Error { code: u16, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("need {needed} more bytes")]
    NeedMoreBytes { needed: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("payload of {0} bytes exceeds limit")]
    TooLarge(u32),
    #[error("framing: {0}")]
    Framing(String),
}

impl DecodeError {
    /// The ERROR-frame code a peer should receive for this failure.
    pub fn code(&self) -> u16 {
        match self {
            DecodeError::UnsupportedVersion(_) => error_code::VERSION,
            _ => error_code::PROTOCOL,
        }
    }
}

fn framing(msg: impl Into<String>) -> DecodeError {
    DecodeError::Framing(msg.into())
}

impl Message {
    pub fn type_code(&self) -> u8 {
        match self {
            Message::Hello { .. } => TYPE_HELLO,
            Message::HelloAck { .. } => TYPE_HELLO_ACK,
            Message::Feature(_) => TYPE_FEATURE,
            Message::Result(_) => TYPE_RESULT,
            Message::Ping => TYPE_PING,
            Message::Pong => TYPE_PONG,
            Message::Error { .. } => TYPE_ERROR,
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            Message::Hello { model_hash, split } => {
                p.extend_from_slice(model_hash);
                p.extend_from_slice(&split.to_be_bytes());
            }
            Message::HelloAck { status } => p.push(*status as u8),
            Message::Feature(f) => {
                p.reserve(10 + 4 * f.dims.len() + 4 * f.data.len());
                p.extend_from_slice(&f.request_id.to_be_bytes());
                p.push(0);
                p.push(f.dims.len() as u8);
                for d in &f.dims {
                    p.extend_from_slice(&d.to_be_bytes());
                }
                for v in &f.data {
                    p.extend_from_slice(&v.to_le_bytes());
                }
            }
            Message::Result(r) => {
                p.reserve(20 + 4 * r.logits.len());
                p.extend_from_slice(&r.request_id.to_be_bytes());
                p.extend_from_slice(&(r.logits.len() as u32).to_be_bytes());
                for v in &r.logits {
                    p.extend_from_slice(&v.to_le_bytes());
                }
                p.extend_from_slice(&r.server_compute_ns.to_be_bytes());
            }
            Message::Ping | Message::Pong => {}
            Message::Error { code, message } => {
                p.extend_from_slice(&code.to_be_bytes());
                p.extend_from_slice(message.as_bytes());
            }
        }
        p
    }
}

/// Serializes a message with its header.
pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let payload = msg.payload();
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.type_code());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Validates a header and returns `(type, payload_len)`.
pub fn decode_header(h: &[u8]) -> Result<(u8, u32), DecodeError> {
    if h.len() < HEADER_LEN {
        // reject garbage as early as the bytes allow
        let n = h.len().min(4);
        if h[..n] != MAGIC[..n] {
            let mut m = [0; 4];
            m[..n].copy_from_slice(&h[..n]);
            return Err(DecodeError::BadMagic(m));
        }
        return Err(DecodeError::NeedMoreBytes {
            needed: HEADER_LEN - h.len(),
        });
    }
    let magic = [h[0], h[1], h[2], h[3]];
    if magic != MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    if h[4] != VERSION {
        return Err(DecodeError::UnsupportedVersion(h[4]));
    }
    let ty = h[5];
    if !(TYPE_HELLO..=TYPE_ERROR).contains(&ty) {
        return Err(DecodeError::UnknownType(ty));
    }
    if h[6] != 0 || h[7] != 0 {
        return Err(framing("reserved header bytes are not zero"));
    }
    let len = u32::from_be_bytes([h[8], h[9], h[10], h[11]]);
    if len > MAX_PAYLOAD {
        return Err(DecodeError::TooLarge(len));
    }
    Ok((ty, len))
}

fn be_u64(b: &[u8]) -> u64 {
    u64::from_be_bytes(b[..8].try_into().expect("8 bytes"))
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes(b[..4].try_into().expect("4 bytes"))
}

fn le_f32s(b: &[u8]) -> Vec<f32> {
    b.chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}

/// Parses the payload of a message of type `ty`.
pub fn decode_payload(ty: u8, p: &[u8]) -> Result<Message, DecodeError> {
    let exact = |n: usize| {
        if p.len() == n {
            Ok(())
        } else {
            Err(framing(format!("type {ty:#04x} payload is {} bytes, expected {n}", p.len())))
        }
    };
    match ty {
        TYPE_HELLO => {
            exact(34)?;
            Ok(Message::Hello {
                model_hash: p[..32].try_into().expect("32 bytes"),
                split: u16::from_be_bytes([p[32], p[33]]),
            })
        }
        TYPE_HELLO_ACK => {
            exact(1)?;
            let status = match p[0] {
                0 => AckStatus::Ok,
                1 => AckStatus::HashMismatch,
                2 => AckStatus::BadSplit,
                s => return Err(framing(format!("unknown ack status {s}"))),
            };
            Ok(Message::HelloAck { status })
        }
        TYPE_FEATURE => {
            if p.len() < 10 {
                return Err(framing("feature payload shorter than its fixed fields"));
            }
            let request_id = be_u64(p);
            if p[8] != 0 {
                return Err(framing(format!("unsupported dtype {}", p[8])));
            }
            let ndim = p[9] as usize;
            let data_at = 10 + 4 * ndim;
            if p.len() < data_at {
                return Err(framing("feature payload shorter than its dims"));
            }
            let dims: Vec<u32> = p[10..data_at].chunks_exact(4).map(be_u32).collect();
            let count = dims
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                .ok_or_else(|| framing("feature dims overflow"))?;
            let data = &p[data_at..];
            if count.checked_mul(4) != Some(data.len() as u64) {
                return Err(framing(format!(
                    "feature carries {} data bytes, dims {dims:?} need {}",
                    data.len(),
                    count.saturating_mul(4)
                )));
            }
            Ok(Message::Feature(FeatureFrame {
                request_id,
                dims,
                data: le_f32s(data),
            }))
        }
        TYPE_RESULT => {
            if p.len() < 20 {
                return Err(framing("result payload shorter than its fixed fields"));
            }
            let request_id = be_u64(p);
            let n = be_u32(&p[8..]) as u64;
            if 20 + 4 * n != p.len() as u64 {
                return Err(framing(format!("result with {n} logits has {} payload bytes", p.len())));
            }
            let end = 12 + 4 * n as usize;
            Ok(Message::Result(ResultFrame {
                request_id,
                logits: le_f32s(&p[12..end]),
                server_compute_ns: be_u64(&p[end..]),
            }))
        }
        TYPE_PING => exact(0).map(|_| Message::Ping),
        TYPE_PONG => exact(0).map(|_| Message::Pong),
        TYPE_ERROR => {
            if p.len() < 2 {
                return Err(framing("error payload lacks its code"));
            }
            let message =
                String::from_utf8(p[2..].to_vec()).map_err(|_| framing("error message is not UTF-8"))?;
            Ok(Message::Error {
                code: u16::from_be_bytes([p[0], p[1]]),
                message,
            })
        }
        other => Err(DecodeError::UnknownType(other)),
    }
}

/// Decodes one frame from the front of `buf`, returning the message and
/// the number of bytes consumed. Incomplete input yields
/// [`DecodeError::NeedMoreBytes`].
pub fn decode_frame(buf: &[u8]) -> Result<(Message, usize), DecodeError> {
    let (ty, len) = decode_header(buf)?;
    let total = HEADER_LEN + len as usize;
    if buf.len() < total {
        return Err(DecodeError::NeedMoreBytes {
            needed: total - buf.len(),
        });
    }
    Ok((decode_payload(ty, &buf[HEADER_LEN..total])?, total))
}

/// Decodes a buffer that must hold exactly one frame.
pub fn decode_message(buf: &[u8]) -> Result<Message, DecodeError> {
    let (msg, used) = decode_frame(buf)?;
    if used != buf.len() {
        return Err(framing(format!("{} bytes after the frame", buf.len() - used)));
    }
    Ok(msg)
}

/// Outcome of reading a frame off a stream.
#[derive(Debug)]
pub enum ReadError {
    /// Clean end of stream before any header byte.
    Closed,
    Io(io::Error),
    Decode(DecodeError),
}

impl From<ReadError> for crate::error::Error {
    fn from(e: ReadError) -> Self {
        match e {
            ReadError::Closed => crate::error::Error::Transport("connection closed by peer".into()),
            ReadError::Io(e) => crate::error::Error::Transport(e.to_string()),
            ReadError::Decode(d) => crate::error::Error::Protocol(d),
        }
    }
}

/// Reads one complete frame.
pub fn read_message<R: Read>(r: &mut R) -> Result<Message, ReadError> {
    read_message_timed(r).map(|(m, _)| m)
}

/// Reads one frame and also reports how long the payload took to arrive
/// after its header.
pub fn read_message_timed<R: Read>(r: &mut R) -> Result<(Message, Duration), ReadError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Err(ReadError::Closed),
            Ok(0) => return Err(ReadError::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(ReadError::Io(e)),
        }
    }
    let start = Instant::now();
    let (ty, len) = decode_header(&header).map_err(ReadError::Decode)?;
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(ReadError::Io)?;
    let elapsed = start.elapsed();
    Ok((decode_payload(ty, &payload).map_err(ReadError::Decode)?, elapsed))
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode_frame(msg))?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_golden() {
        assert_eq!(
            encode_frame(&Message::Ping),
            [0x53, 0x57, 0x49, 0x52, 0x01, 0x05, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00]
        );
    }

    #[test]
    fn partial_frames_need_more() {
        let bytes = encode_frame(&Message::Error {
            code: 3,
            message: "shape".into(),
        });
        for cut in 0..bytes.len() {
            assert!(matches!(decode_frame(&bytes[..cut]), Err(DecodeError::NeedMoreBytes { .. })), "{cut}");
        }
        assert_eq!(decode_frame(&bytes).unwrap().1, bytes.len());
    }

    #[test]
    fn header_errors() {
        let mut b = encode_frame(&Message::Pong);
        b[4] = 2;
        assert_eq!(decode_message(&b), Err(DecodeError::UnsupportedVersion(2)));
        let mut b = encode_frame(&Message::Pong);
        b[0] = b'X';
        assert!(matches!(decode_message(&b), Err(DecodeError::BadMagic(_))));
        let mut b = encode_frame(&Message::Pong);
        b[5] = 9;
        assert_eq!(decode_message(&b), Err(DecodeError::UnknownType(9)));
        let mut b = encode_frame(&Message::Pong);
        b.push(0);
        assert!(matches!(decode_message(&b), Err(DecodeError::Framing(_))));
    }

    #[test]
    fn stream_read() {
        let mut bytes = encode_frame(&Message::Ping);
        bytes.extend(encode_frame(&Message::HelloAck { status: AckStatus::BadSplit }));
        let mut cur = io::Cursor::new(bytes);
        assert_eq!(read_message(&mut cur).unwrap(), Message::Ping);
        assert_eq!(
            read_message(&mut cur).unwrap(),
            Message::HelloAck { status: AckStatus::BadSplit }
        );
        assert!(matches!(read_message(&mut cur), Err(ReadError::Closed)));
    }
}
