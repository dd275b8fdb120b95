//! Binary encoding and decoding of the supported MQTT 3.1.1 packets.
//!
//! Decoding is incremental: `decode_packet` returns `Ok(None)` until a whole
//! frame is buffered, and structural violations inside a complete frame are
//! hard errors. Unsupported-but-valid protocol features (QoS 2, wills,
//! UNSUBSCRIBE) are rejected explicitly so the failure mode is a clear error
//! rather than silent misbehavior.

use thiserror::Error;

use super::topic;
use super::{Connack, Connect, Packet, Publish, QoS, Suback, SubackCode, Subscribe};

/// Largest value representable by the 4-byte variable-length encoding.
pub const MAX_REMAINING_LENGTH: u32 = 268_435_455;

const PROTOCOL_NAME: &[u8] = b"MQTT";
const PROTOCOL_LEVEL: u8 = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("remaining length {0}")]
    BadRemainingLength(&'static str),
    #[error("reserved packet type {0}")]
    UnknownPacketType(u8),
    #[error("{0} packets are not supported by this subset")]
    UnsupportedPacket(&'static str),
    #[error("{0} is not supported by this subset")]
    UnsupportedFeature(&'static str),
    #[error("{packet} packet has reserved flag bits set: 0x{flags:01x}")]
    ReservedFlagBits { packet: &'static str, flags: u8 },
    #[error("malformed packet: {0}")]
    Malformed(&'static str),
    #[error("string is not valid UTF-8 or contains a NUL character")]
    BadString,
    #[error("invalid topic name {0:?}")]
    InvalidTopic(String),
    #[error("invalid topic filter {0:?}")]
    InvalidFilter(String),
    #[error("invalid QoS value {0}")]
    BadQos(u8),
    #[error("packet identifier 0 is forbidden")]
    ZeroPacketId,
    #[error("connect packet does not begin with the MQTT 3.1.1 protocol header")]
    BadProtocolName,
    #[error("unacceptable protocol level {0} (only 4 is supported)")]
    UnacceptableProtocolLevel(u8),
    #[error("frame exceeds the {limit}-byte limit")]
    FrameTooLarge { limit: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("payload of {size} bytes exceeds the maximum remaining length")]
    TooLarge { size: usize },
    #[error("string of {0} bytes exceeds the 16-bit length prefix")]
    StringTooLong(usize),
    #[error("invalid topic name {0:?}")]
    InvalidTopic(String),
    #[error("invalid topic filter {0:?}")]
    InvalidFilter(String),
    #[error("packet identifier 0 is forbidden")]
    ZeroPacketId,
    #[error("packet identifier {0}")]
    InconsistentPacketId(&'static str),
    #[error("a password cannot be sent without a username")]
    PasswordWithoutUsername,
    #[error("a subscribe packet needs at least one filter")]
    EmptyFilterList,
}

/// Encodes a length using the 7-bits-per-byte continuation scheme (§2.2.3).
pub fn encode_remaining_length(value: u32) -> Result<Vec<u8>, EncodeError> {
    if value > MAX_REMAINING_LENGTH {
        return Err(EncodeError::TooLarge {
            size: value as usize,
        });
    }
    let mut out = Vec::with_capacity(4);
    let mut v = value;
    loop {
        let mut byte = (v % 128) as u8;
        v /= 128;
        if v > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if v == 0 {
            return Ok(out);
        }
    }
}

/// Number of bytes the minimal encoding of `value` occupies.
fn remaining_length_width(value: u32) -> usize {
    match value {
        0..=127 => 1,
        128..=16_383 => 2,
        16_384..=2_097_151 => 3,
        _ => 4,
    }
}

/// Decodes a remaining-length field. `Ok(None)` means the buffer ends in the
/// middle of the field; non-minimal encodings and fields longer than four
/// bytes are rejected.
pub fn decode_remaining_length(buf: &[u8]) -> Result<Option<(u32, usize)>, ProtocolError> {
    let mut value: u32 = 0;
    for (i, &byte) in buf.iter().enumerate().take(4) {
        value |= u32::from(byte & 0x7f) << (7 * i);
        if byte & 0x80 == 0 {
            let width = i + 1;
            if remaining_length_width(value) != width {
                return Err(ProtocolError::BadRemainingLength(
                    "is not minimally encoded",
                ));
            }
            return Ok(Some((value, width)));
        }
    }
    if buf.len() >= 4 {
        return Err(ProtocolError::BadRemainingLength(
            "continues past four bytes",
        ));
    }
    Ok(None)
}

/// Cursor over a complete packet body. Running out of bytes here is a
/// structural error, not a need-more-data condition.
struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.buf.len() < n {
            return Err(ProtocolError::Malformed(
                "body ends before a declared field",
            ));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        let bytes = self.take(2)?;
        Ok(u16::from_be_bytes([bytes[0], bytes[1]]))
    }

    /// Length-prefixed binary field.
    fn bytes(&mut self) -> Result<&'a [u8], ProtocolError> {
        let len = self.u16()? as usize;
        self.take(len)
    }

    /// Length-prefixed UTF-8 string; NUL characters are forbidden (§1.5.3).
    fn string(&mut self) -> Result<&'a str, ProtocolError> {
        let raw = self.bytes()?;
        let s = std::str::from_utf8(raw).map_err(|_| ProtocolError::BadString)?;
        if s.contains('\0') {
            return Err(ProtocolError::BadString);
        }
        Ok(s)
    }

    fn rest(self) -> &'a [u8] {
        self.buf
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    fn expect_end(&self) -> Result<(), ProtocolError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(ProtocolError::Malformed("body has trailing bytes"))
        }
    }
}

fn nonzero_packet_id(id: u16) -> Result<u16, ProtocolError> {
    if id == 0 {
        Err(ProtocolError::ZeroPacketId)
    } else {
        Ok(id)
    }
}

/// Decodes one packet from the front of `buf`, returning it with the number
/// of bytes consumed, or `Ok(None)` when the buffer does not yet hold a
/// complete frame.
pub fn decode_packet(buf: &[u8]) -> Result<Option<(Packet, usize)>, ProtocolError> {
    let Some(&first) = buf.first() else {
        return Ok(None);
    };
    let Some((remaining_len, len_width)) = decode_remaining_length(&buf[1..])? else {
        return Ok(None);
    };
    let total = 1 + len_width + remaining_len as usize;
    if buf.len() < total {
        return Ok(None);
    }
    let packet_type = first >> 4;
    let flags = first & 0x0f;
    let body = &buf[1 + len_width..total];

    let packet = match packet_type {
        1 => decode_connect(flags, body)?,
        2 => decode_connack(flags, body)?,
        3 => decode_publish(flags, body)?,
        4 => Packet::Puback {
            packet_id: decode_only_packet_id("PUBACK", flags, body)?,
        },
        8 => decode_subscribe(flags, body)?,
        9 => decode_suback(flags, body)?,
        12 => decode_empty(Packet::Pingreq, "PINGREQ", flags, body)?,
        13 => decode_empty(Packet::Pingresp, "PINGRESP", flags, body)?,
        14 => decode_empty(Packet::Disconnect, "DISCONNECT", flags, body)?,
        5 => return Err(ProtocolError::UnsupportedPacket("PUBREC")),
        6 => return Err(ProtocolError::UnsupportedPacket("PUBREL")),
        7 => return Err(ProtocolError::UnsupportedPacket("PUBCOMP")),
        10 => return Err(ProtocolError::UnsupportedPacket("UNSUBSCRIBE")),
        11 => return Err(ProtocolError::UnsupportedPacket("UNSUBACK")),
        t => return Err(ProtocolError::UnknownPacketType(t)),
    };
    Ok(Some((packet, total)))
}

fn require_flags(
    packet: &'static str,
    flags: u8,
    expected: u8,
) -> Result<(), ProtocolError> {
    if flags == expected {
        Ok(())
    } else {
        Err(ProtocolError::ReservedFlagBits { packet, flags })
    }
}

fn decode_empty(
    packet: Packet,
    name: &'static str,
    flags: u8,
    body: &[u8],
) -> Result<Packet, ProtocolError> {
    require_flags(name, flags, 0)?;
    if !body.is_empty() {
        return Err(ProtocolError::Malformed("body has trailing bytes"));
    }
    Ok(packet)
}

fn decode_only_packet_id(
    name: &'static str,
    flags: u8,
    body: &[u8],
) -> Result<u16, ProtocolError> {
    require_flags(name, flags, 0)?;
    let mut r = Reader::new(body);
    let id = nonzero_packet_id(r.u16()?)?;
    r.expect_end()?;
    Ok(id)
}

fn decode_connect(flags: u8, body: &[u8]) -> Result<Packet, ProtocolError> {
    require_flags("CONNECT", flags, 0)?;
    let mut r = Reader::new(body);
    if r.bytes()? != PROTOCOL_NAME {
        return Err(ProtocolError::BadProtocolName);
    }
    let level = r.u8()?;
    if level != PROTOCOL_LEVEL {
        return Err(ProtocolError::UnacceptableProtocolLevel(level));
    }
    let connect_flags = r.u8()?;
    if connect_flags & 0x01 != 0 {
        return Err(ProtocolError::Malformed("connect reserved flag bit is set"));
    }
    let clean_session = connect_flags & 0x02 != 0;
    let will_flag = connect_flags & 0x04 != 0;
    let will_qos = (connect_flags >> 3) & 0x03;
    let will_retain = connect_flags & 0x20 != 0;
    let password_flag = connect_flags & 0x40 != 0;
    let username_flag = connect_flags & 0x80 != 0;
    if will_flag {
        return Err(ProtocolError::UnsupportedFeature("will messages are"));
    }
    if will_qos != 0 || will_retain {
        return Err(ProtocolError::Malformed(
            "will qos/retain set without the will flag",
        ));
    }
    if password_flag && !username_flag {
        return Err(ProtocolError::Malformed(
            "password flag set without the username flag",
        ));
    }
    let keep_alive_s = r.u16()?;
    let client_id = r.string()?.to_string();
    let username = if username_flag {
        Some(r.string()?.to_string())
    } else {
        None
    };
    let password = if password_flag {
        Some(r.bytes()?.to_vec())
    } else {
        None
    };
    r.expect_end()?;
    Ok(Packet::Connect(Connect {
        client_id,
        clean_session,
        keep_alive_s,
        username,
        password,
    }))
}

fn decode_connack(flags: u8, body: &[u8]) -> Result<Packet, ProtocolError> {
    require_flags("CONNACK", flags, 0)?;
    let mut r = Reader::new(body);
    let ack_flags = r.u8()?;
    if ack_flags & !0x01 != 0 {
        return Err(ProtocolError::Malformed("connack reserved bits are set"));
    }
    let return_code = r.u8()?;
    if return_code > 5 {
        return Err(ProtocolError::Malformed("connack return code out of range"));
    }
    r.expect_end()?;
    Ok(Packet::Connack(Connack {
        session_present: ack_flags & 0x01 != 0,
        return_code,
    }))
}

fn decode_publish(flags: u8, body: &[u8]) -> Result<Packet, ProtocolError> {
    let dup = flags & 0x08 != 0;
    let retain = flags & 0x01 != 0;
    let qos_bits = (flags >> 1) & 0x03;
    let qos = match qos_bits {
        2 => return Err(ProtocolError::UnsupportedFeature("QoS 2 is")),
        bits => QoS::from_bits(bits).ok_or(ProtocolError::BadQos(bits))?,
    };
    if dup && qos == QoS::AtMostOnce {
        return Err(ProtocolError::Malformed("dup flag set on a QoS 0 publish"));
    }
    let mut r = Reader::new(body);
    let topic = r.string()?.to_string();
    if !topic::valid_topic(&topic) {
        return Err(ProtocolError::InvalidTopic(topic));
    }
    let packet_id = match qos {
        QoS::AtMostOnce => None,
        QoS::AtLeastOnce => Some(nonzero_packet_id(r.u16()?)?),
    };
    let payload = r.rest().to_vec();
    Ok(Packet::Publish(Publish {
        dup,
        qos,
        retain,
        topic,
        packet_id,
        payload,
    }))
}

fn decode_subscribe(flags: u8, body: &[u8]) -> Result<Packet, ProtocolError> {
    // §3.8.1: the low nibble of a SUBSCRIBE fixed header is always 0b0010
    require_flags("SUBSCRIBE", flags, 0x02)?;
    let mut r = Reader::new(body);
    let packet_id = nonzero_packet_id(r.u16()?)?;
    let mut filters = Vec::new();
    while !r.is_empty() {
        let filter = r.string()?.to_string();
        if !topic::valid_filter(&filter) {
            return Err(ProtocolError::InvalidFilter(filter));
        }
        let qos_byte = r.u8()?;
        let qos = match qos_byte {
            2 => return Err(ProtocolError::UnsupportedFeature("QoS 2 is")),
            b => QoS::from_bits(b).ok_or(ProtocolError::BadQos(b))?,
        };
        filters.push((filter, qos));
    }
    if filters.is_empty() {
        return Err(ProtocolError::Malformed("subscribe carries no filters"));
    }
    Ok(Packet::Subscribe(Subscribe { packet_id, filters }))
}

fn decode_suback(flags: u8, body: &[u8]) -> Result<Packet, ProtocolError> {
    require_flags("SUBACK", flags, 0)?;
    let mut r = Reader::new(body);
    let packet_id = nonzero_packet_id(r.u16()?)?;
    let codes = r.rest();
    if codes.is_empty() {
        return Err(ProtocolError::Malformed("suback carries no return codes"));
    }
    let return_codes = codes
        .iter()
        .map(|&b| SubackCode::from_byte(b).ok_or(ProtocolError::Malformed("bad suback code")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Packet::Suback(Suback {
        packet_id,
        return_codes,
    }))
}

struct Writer {
    body: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { body: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.body.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.body.extend_from_slice(&v.to_be_bytes());
    }

    fn bytes(&mut self, v: &[u8]) -> Result<(), EncodeError> {
        let len = u16::try_from(v.len()).map_err(|_| EncodeError::StringTooLong(v.len()))?;
        self.u16(len);
        self.body.extend_from_slice(v);
        Ok(())
    }

    fn finish(self, packet_type: u8, flags: u8) -> Result<Vec<u8>, EncodeError> {
        let len = u32::try_from(self.body.len()).map_err(|_| EncodeError::TooLarge {
            size: self.body.len(),
        })?;
        let len_bytes = encode_remaining_length(len)?;
        let mut out = Vec::with_capacity(1 + len_bytes.len() + self.body.len());
        out.push(packet_type << 4 | flags);
        out.extend_from_slice(&len_bytes);
        out.extend_from_slice(&self.body);
        Ok(out)
    }
}

/// Encodes a packet into a complete frame.
pub fn encode_packet(packet: &Packet) -> Result<Vec<u8>, EncodeError> {
    match packet {
        Packet::Connect(c) => encode_connect(c),
        Packet::Connack(c) => {
            let mut w = Writer::new();
            w.u8(c.session_present as u8);
            w.u8(c.return_code);
            w.finish(2, 0)
        }
        Packet::Publish(p) => encode_publish(p),
        Packet::Puback { packet_id } => {
            if *packet_id == 0 {
                return Err(EncodeError::ZeroPacketId);
            }
            let mut w = Writer::new();
            w.u16(*packet_id);
            w.finish(4, 0)
        }
        Packet::Subscribe(s) => encode_subscribe(s),
        Packet::Suback(s) => {
            if s.packet_id == 0 {
                return Err(EncodeError::ZeroPacketId);
            }
            let mut w = Writer::new();
            w.u16(s.packet_id);
            for code in &s.return_codes {
                w.u8(code.byte());
            }
            w.finish(9, 0)
        }
        Packet::Pingreq => Writer::new().finish(12, 0),
        Packet::Pingresp => Writer::new().finish(13, 0),
        Packet::Disconnect => Writer::new().finish(14, 0),
    }
}

fn encode_connect(c: &Connect) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::new();
    w.bytes(PROTOCOL_NAME)?;
    w.u8(PROTOCOL_LEVEL);
    let mut flags = 0u8;
    if c.clean_session {
        flags |= 0x02;
    }
    if c.username.is_some() {
        flags |= 0x80;
    }
    if c.password.is_some() {
        if c.username.is_none() {
            return Err(EncodeError::PasswordWithoutUsername);
        }
        flags |= 0x40;
    }
    w.u8(flags);
    w.u16(c.keep_alive_s);
    w.bytes(c.client_id.as_bytes())?;
    if let Some(username) = &c.username {
        w.bytes(username.as_bytes())?;
    }
    if let Some(password) = &c.password {
        w.bytes(password)?;
    }
    w.finish(1, 0)
}

fn encode_publish(p: &Publish) -> Result<Vec<u8>, EncodeError> {
    if !topic::valid_topic(&p.topic) {
        return Err(EncodeError::InvalidTopic(p.topic.clone()));
    }
    let mut flags = (p.qos.bits()) << 1;
    if p.retain {
        flags |= 0x01;
    }
    if p.dup {
        if p.qos == QoS::AtMostOnce {
            return Err(EncodeError::InconsistentPacketId(
                "dup is meaningless at QoS 0",
            ));
        }
        flags |= 0x08;
    }
    let mut w = Writer::new();
    w.bytes(p.topic.as_bytes())?;
    match (p.qos, p.packet_id) {
        (QoS::AtMostOnce, None) => {}
        (QoS::AtLeastOnce, Some(0)) => return Err(EncodeError::ZeroPacketId),
        (QoS::AtLeastOnce, Some(id)) => w.u16(id),
        (QoS::AtMostOnce, Some(_)) => {
            return Err(EncodeError::InconsistentPacketId(
                "present on a QoS 0 publish",
            ))
        }
        (QoS::AtLeastOnce, None) => {
            return Err(EncodeError::InconsistentPacketId(
                "missing on a QoS 1 publish",
            ))
        }
    }
    w.body.extend_from_slice(&p.payload);
    w.finish(3, flags)
}

fn encode_subscribe(s: &Subscribe) -> Result<Vec<u8>, EncodeError> {
    if s.packet_id == 0 {
        return Err(EncodeError::ZeroPacketId);
    }
    if s.filters.is_empty() {
        return Err(EncodeError::EmptyFilterList);
    }
    let mut w = Writer::new();
    w.u16(s.packet_id);
    for (filter, qos) in &s.filters {
        if !topic::valid_filter(filter) {
            return Err(EncodeError::InvalidFilter(filter.clone()));
        }
        w.bytes(filter.as_bytes())?;
        w.u8(qos.bits());
    }
    w.finish(8, 0x02)
}
