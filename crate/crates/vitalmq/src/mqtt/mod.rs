//! MQTT 3.1.1 wire protocol, restricted to the packets this toolkit needs:
//! CONNECT/CONNACK, PUBLISH/PUBACK (QoS 0 and 1), SUBSCRIBE/SUBACK,
//! PINGREQ/PINGRESP, and DISCONNECT. QoS 2, wills, retained-message
//! persistence across restarts, and UNSUBSCRIBE are intentionally out of
//! scope and rejected at decode time rather than half-supported.

mod codec;
pub mod topic;

pub use codec::{
    decode_packet, decode_remaining_length, encode_packet, encode_remaining_length,
    EncodeError, ProtocolError, MAX_REMAINING_LENGTH,
};

use serde::{Deserialize, Serialize};

/// Delivery guarantee for a publish: fire-and-forget or acknowledged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QoS {
    AtMostOnce = 0,
    AtLeastOnce = 1,
}

impl QoS {
    pub fn from_bits(bits: u8) -> Option<QoS> {
        match bits {
            0 => Some(QoS::AtMostOnce),
            1 => Some(QoS::AtLeastOnce),
            _ => None,
        }
    }

    pub fn bits(self) -> u8 {
        self as u8
    }
}

/// CONNACK return codes defined by MQTT 3.1.1 §3.2.2.3.
pub mod connect_return {
    pub const ACCEPTED: u8 = 0;
    pub const UNACCEPTABLE_PROTOCOL_VERSION: u8 = 1;
    pub const IDENTIFIER_REJECTED: u8 = 2;
    pub const SERVER_UNAVAILABLE: u8 = 3;
    pub const BAD_USERNAME_OR_PASSWORD: u8 = 4;
    pub const NOT_AUTHORIZED: u8 = 5;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Connect {
    pub client_id: String,
    pub clean_session: bool,
    pub keep_alive_s: u16,
    pub username: Option<String>,
    pub password: Option<Vec<u8>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Connack {
    pub session_present: bool,
    pub return_code: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Publish {
    pub dup: bool,
    pub qos: QoS,
    pub retain: bool,
    pub topic: String,
    /// Present exactly when `qos == AtLeastOnce`.
    pub packet_id: Option<u16>,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subscribe {
    pub packet_id: u16,
    /// Topic filter plus requested QoS, in wire order.
    pub filters: Vec<(String, QoS)>,
}

/// Per-filter outcome in a SUBACK.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubackCode {
    GrantedQos0,
    GrantedQos1,
    Failure,
}

impl SubackCode {
    pub fn byte(self) -> u8 {
        match self {
            SubackCode::GrantedQos0 => 0x00,
            SubackCode::GrantedQos1 => 0x01,
            SubackCode::Failure => 0x80,
        }
    }

    pub fn from_byte(byte: u8) -> Option<SubackCode> {
        match byte {
            0x00 => Some(SubackCode::GrantedQos0),
            0x01 => Some(SubackCode::GrantedQos1),
            0x80 => Some(SubackCode::Failure),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Suback {
    pub packet_id: u16,
    pub return_codes: Vec<SubackCode>,
}

/// A parsed control packet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Packet {
    Connect(Connect),
    Connack(Connack),
    Publish(Publish),
    Puback { packet_id: u16 },
    Subscribe(Subscribe),
    Suback(Suback),
    Pingreq,
    Pingresp,
    Disconnect,
}

impl Packet {
    /// Short name for logging.
    pub fn kind(&self) -> &'static str {
        match self {
            Packet::Connect(_) => "CONNECT",
            Packet::Connack(_) => "CONNACK",
            Packet::Publish(_) => "PUBLISH",
            Packet::Puback { .. } => "PUBACK",
            Packet::Subscribe(_) => "SUBSCRIBE",
            Packet::Suback(_) => "SUBACK",
            Packet::Pingreq => "PINGREQ",
            Packet::Pingresp => "PINGRESP",
            Packet::Disconnect => "DISCONNECT",
        }
    }
}

/// Accumulates stream bytes and yields complete packets. Used by both the
/// broker and the client connection loops.
pub struct FrameBuffer {
    buf: Vec<u8>,
    max_frame: usize,
}

impl FrameBuffer {
    /// `max_frame` caps a single packet's encoded size, protecting the
    /// desk-scale broker from a peer streaming an unbounded frame.
    pub fn new(max_frame: usize) -> FrameBuffer {
        FrameBuffer {
            buf: Vec::new(),
            max_frame,
        }
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Pops the next complete packet, or `Ok(None)` when more bytes are
    /// needed.
    pub fn next_packet(&mut self) -> Result<Option<Packet>, ProtocolError> {
        match decode_packet(&self.buf)? {
            Some((packet, consumed)) => {
                if consumed > self.max_frame {
                    return Err(ProtocolError::FrameTooLarge {
                        limit: self.max_frame,
                    });
                }
                self.buf.drain(..consumed);
                Ok(Some(packet))
            }
            None if self.buf.len() > self.max_frame => Err(ProtocolError::FrameTooLarge {
                limit: self.max_frame,
            }),
            None => Ok(None),
        }
    }
}
