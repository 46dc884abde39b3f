//! Framed party-to-party messaging with byte, message, and round meters.
//!
//! One wire format serves both backends: the deterministic virtual-clock
//! simulator ([`sim`]) and real TCP sockets ([`tcp`]). A frame is
//! `u32 length | u8 type | u16 version | 16-byte session id | payload`,
//! all little-endian. A *round* is a send followed by a blocking receive on
//! the same session; the meter increments at that receive, so request-response
//! over any backend counts exactly one round.

pub mod bench;
pub mod sim;
pub mod tcp;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const WIRE_VERSION: u16 = 1;
/// Upper bound on a single frame body; guards allocation on corrupt input.
pub const MAX_FRAME_BYTES: u32 = 64 << 20;
const FRAME_HEADER: usize = 1 + 2 + 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0,
    Share = 1,
    Open = 2,
    KeyBlock = 3,
    Result = 4,
    Error = 5,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Result<MsgType> {
        Ok(match v {
            0 => MsgType::Hello,
            1 => MsgType::Share,
            2 => MsgType::Open,
            3 => MsgType::KeyBlock,
            4 => MsgType::Result,
            5 => MsgType::Error,
            _ => return Err(Error::Format(format!("unknown frame type {v}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub version: u16,
    pub session_id: [u8; 16],
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, session_id: [u8; 16], payload: Vec<u8>) -> Frame {
        Frame { msg_type, version: WIRE_VERSION, session_id, payload }
    }

    /// Total on-wire size including the length prefix.
    pub fn encoded_len(&self) -> usize {
        4 + FRAME_HEADER + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let body_len = FRAME_HEADER + self.payload.len();
        let mut out = Vec::with_capacity(4 + body_len);
        out.extend_from_slice(&(body_len as u32).to_le_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.session_id);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decode one full frame from `bytes` (length prefix included).
    pub fn decode(bytes: &[u8]) -> Result<Frame> {
        if bytes.len() < 4 {
            return Err(Error::Format("frame shorter than length prefix".into()));
        }
        let body_len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        if bytes.len() != 4 + body_len {
            return Err(Error::Format(format!(
                "frame length prefix {} does not match body {}",
                body_len,
                bytes.len() - 4
            )));
        }
        Self::decode_body(&bytes[4..])
    }

    fn decode_body(body: &[u8]) -> Result<Frame> {
        if body.len() < FRAME_HEADER {
            return Err(Error::Format("frame body shorter than header".into()));
        }
        let msg_type = MsgType::from_u8(body[0])?;
        let version = u16::from_le_bytes(body[1..3].try_into().unwrap());
        if version != WIRE_VERSION {
            return Err(Error::Protocol(format!(
                "unsupported wire version {version}, this build speaks {WIRE_VERSION}"
            )));
        }
        let session_id: [u8; 16] = body[3..19].try_into().unwrap();
        Ok(Frame { msg_type, version, session_id, payload: body[19..].to_vec() })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Frame> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let body_len = u32::from_le_bytes(len);
        if body_len < FRAME_HEADER as u32 || body_len > MAX_FRAME_BYTES {
            return Err(Error::Format(format!("frame body length {body_len} out of bounds")));
        }
        let mut body = vec![0u8; body_len as usize];
        r.read_exact(&mut body)?;
        Self::decode_body(&body)
    }
}

/// Byte/message/round counters for one endpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meter {
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub rounds: u64,
}

#[derive(Debug, Default)]
pub(crate) struct MeterState {
    meter: Meter,
    sent_since_recv: bool,
}

impl MeterState {
    pub fn on_send(&mut self, bytes: usize) {
        self.meter.messages_sent += 1;
        self.meter.bytes_sent += bytes as u64;
        self.sent_since_recv = true;
    }

    pub fn on_recv(&mut self, bytes: usize) {
        self.meter.messages_received += 1;
        self.meter.bytes_received += bytes as u64;
        if self.sent_since_recv {
            self.meter.rounds += 1;
            self.sent_since_recv = false;
        }
    }

    pub fn snapshot(&self) -> Meter {
        self.meter
    }
}

/// A party's view of the network: indexed peers, blocking receive.
pub trait Net {
    fn me(&self) -> usize;
    fn n_parties(&self) -> usize;
    fn send(&mut self, to: usize, frame: Frame) -> Result<()>;
    fn recv(&mut self, from: usize) -> Result<Frame>;
    fn meter(&self) -> Meter;
}
