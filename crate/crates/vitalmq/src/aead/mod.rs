//! Payload-level encryption: cipher registry, wire envelope, and the
//! session security context that manages nonces and associated data.
//!
//! Everything here operates on MQTT payload bytes only — topics, packet
//! headers, and the rest of the wire protocol stay in the clear, which keeps
//! the broker oblivious to the keys. The envelope is self-describing, so a
//! subscriber can open payloads from publishers using either cipher.

pub mod gcm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ascon;

pub const KEY_LEN: usize = 16;
pub const NONCE_LEN: usize = 16;
pub const TAG_LEN: usize = 16;

/// Constant 16-byte vector used as key, nonce, and associated data by the
/// fixed-vector reproduction mode (see [`SecurityContext::fixed_vectors`]).
pub const FIXED_VECTOR: [u8; 16] = *b"This is 16 bytes";

/// Cipher identifier carried in the first envelope byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CipherId {
    /// Plaintext passthrough: no nonce, no tag, payload as-is.
    None,
    Aes128Gcm,
    Ascon128,
}

// Serialized by canonical name; parsed with the same aliases the CLI takes,
// so config files and flags accept identical spellings.
impl Serialize for CipherId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for CipherId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl CipherId {
    pub fn wire_byte(self) -> u8 {
        match self {
            CipherId::None => 0x00,
            CipherId::Aes128Gcm => 0x01,
            CipherId::Ascon128 => 0x02,
        }
    }

    pub fn from_wire_byte(byte: u8) -> Option<CipherId> {
        match byte {
            0x00 => Some(CipherId::None),
            0x01 => Some(CipherId::Aes128Gcm),
            0x02 => Some(CipherId::Ascon128),
            _ => None,
        }
    }

    /// Stable lowercase name used in CSV output and log lines.
    pub fn name(self) -> &'static str {
        match self {
            CipherId::None => "none",
            CipherId::Aes128Gcm => "aes128gcm",
            CipherId::Ascon128 => "ascon128",
        }
    }
}

impl std::str::FromStr for CipherId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "plaintext" => Ok(CipherId::None),
            "aes" | "aes128gcm" | "aes-128-gcm" => Ok(CipherId::Aes128Gcm),
            "ascon" | "ascon128" | "ascon-128" => Ok(CipherId::Ascon128),
            other => Err(format!("unknown cipher '{other}' (expected none, aes, or ascon)")),
        }
    }
}

impl std::fmt::Display for CipherId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("envelope truncated: {0}")]
    Truncated(&'static str),
    #[error("unknown cipher byte 0x{0:02x}")]
    UnknownCipher(u8),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SealError {
    #[error("nonce counter exhausted; rotate the key before continuing")]
    NonceExhausted,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OpenError {
    #[error("malformed envelope: {0}")]
    Malformed(#[from] EnvelopeError),
    #[error("authentication failed: wrong key, replayed/mismatched topic, or tampered payload")]
    AuthFailure,
    #[error("plaintext envelope rejected: this receiver requires sealed payloads")]
    PlaintextRejected,
}

impl From<ascon::AuthFailure> for OpenError {
    fn from(_: ascon::AuthFailure) -> Self {
        OpenError::AuthFailure
    }
}

/// Payload envelope as carried in the MQTT publish payload:
///
/// ```text
/// cipher_id (1 byte) ‖ nonce (16 bytes, absent for None)
///                    ‖ ciphertext (N bytes)
///                    ‖ tag (16 bytes, absent for None)
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    cipher: CipherId,
    nonce: Option<[u8; NONCE_LEN]>,
    ciphertext: Vec<u8>,
    tag: Option<[u8; TAG_LEN]>,
}

impl Envelope {
    /// Plaintext passthrough envelope (cipher byte 0x00, no nonce or tag).
    pub fn plaintext(payload: Vec<u8>) -> Envelope {
        Envelope {
            cipher: CipherId::None,
            nonce: None,
            ciphertext: payload,
            tag: None,
        }
    }

    /// Sealed envelope for an authenticated cipher.
    pub fn sealed(
        cipher: CipherId,
        nonce: [u8; NONCE_LEN],
        ciphertext: Vec<u8>,
        tag: [u8; TAG_LEN],
    ) -> Envelope {
        debug_assert_ne!(cipher, CipherId::None);
        Envelope {
            cipher,
            nonce: Some(nonce),
            ciphertext,
            tag: Some(tag),
        }
    }

    pub fn cipher(&self) -> CipherId {
        self.cipher
    }

    pub fn ciphertext(&self) -> &[u8] {
        &self.ciphertext
    }

    pub fn nonce(&self) -> Option<&[u8; NONCE_LEN]> {
        self.nonce.as_ref()
    }

    pub fn tag(&self) -> Option<&[u8; TAG_LEN]> {
        self.tag.as_ref()
    }

    /// Total encoded size: 1 byte overhead for plaintext, 33 bytes for
    /// authenticated ciphers.
    pub fn encoded_len(&self) -> usize {
        match self.cipher {
            CipherId::None => 1 + self.ciphertext.len(),
            _ => 1 + NONCE_LEN + self.ciphertext.len() + TAG_LEN,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.cipher.wire_byte());
        if let Some(nonce) = &self.nonce {
            out.extend_from_slice(nonce);
        }
        out.extend_from_slice(&self.ciphertext);
        if let Some(tag) = &self.tag {
            out.extend_from_slice(tag);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Envelope, EnvelopeError> {
        let (&cipher_byte, rest) = bytes
            .split_first()
            .ok_or(EnvelopeError::Truncated("empty payload"))?;
        let cipher = CipherId::from_wire_byte(cipher_byte)
            .ok_or(EnvelopeError::UnknownCipher(cipher_byte))?;
        if cipher == CipherId::None {
            return Ok(Envelope::plaintext(rest.to_vec()));
        }
        if rest.len() < NONCE_LEN + TAG_LEN {
            return Err(EnvelopeError::Truncated(
                "too short to hold a nonce and tag",
            ));
        }
        let (nonce, rest) = rest.split_at(NONCE_LEN);
        let (ciphertext, tag) = rest.split_at(rest.len() - TAG_LEN);
        Ok(Envelope::sealed(
            cipher,
            nonce.try_into().expect("split at NONCE_LEN"),
            ciphertext.to_vec(),
            tag.try_into().expect("split at TAG_LEN"),
        ))
    }
}

/// How the per-message nonce is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NonceMode {
    /// Monotonic 96-bit counter in the leading 12 nonce bytes (big-endian),
    /// trailing 4 bytes zero. Refuses to wrap.
    Counter,
    /// The constant [`FIXED_VECTOR`] for every message. Reproduces the
    /// original evaluation setup; never use outside benchmarks and tests.
    FixedVector,
}

/// What is bound into the tag as associated data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AadMode {
    /// The topic string, so a ciphertext replayed on another topic fails
    /// authentication.
    TopicBinding,
    /// The original evaluation's constants: [`FIXED_VECTOR`] for ASCON,
    /// empty associated data for AES-GCM.
    FixedVector,
}

/// Per-session encryption state: key, nonce discipline, and AAD policy.
///
/// `seal` requires `&mut self` because choosing a nonce advances the counter;
/// `open` is read-only.
pub struct SecurityContext {
    key: [u8; KEY_LEN],
    nonce_mode: NonceMode,
    aad_mode: AadMode,
    counter: u128,
    accept_plaintext: bool,
}

/// First counter value that no longer fits in the 96-bit nonce prefix.
const COUNTER_LIMIT: u128 = 1 << 96;

impl SecurityContext {
    /// Production configuration: counter nonces, topic-bound AAD.
    pub fn new(key: [u8; KEY_LEN]) -> SecurityContext {
        SecurityContext {
            key,
            nonce_mode: NonceMode::Counter,
            aad_mode: AadMode::TopicBinding,
            counter: 0,
            accept_plaintext: false,
        }
    }

    /// Reproduction configuration matching the original evaluation: the
    /// constant key/nonce/AD vector `b"This is 16 bytes"`. Nonces repeat, so
    /// this mode is gated to benchmarking and known-answer reproduction.
    pub fn fixed_vectors() -> SecurityContext {
        SecurityContext {
            key: FIXED_VECTOR,
            nonce_mode: NonceMode::FixedVector,
            aad_mode: AadMode::FixedVector,
            counter: 0,
            accept_plaintext: false,
        }
    }

    pub fn is_fixed_vectors(&self) -> bool {
        self.nonce_mode == NonceMode::FixedVector
    }

    /// Permits `open` to pass through unencrypted (`CipherId::None`)
    /// envelopes. Off by default: without the opt-in, an incoming plaintext
    /// envelope is treated as a downgrade attempt and rejected, so a
    /// corrupted or attacker-flipped cipher-id byte can never turn an
    /// authenticated payload into an accepted unauthenticated one. Enable it
    /// only where plaintext is an expected part of the deployment.
    pub fn accept_plaintext(mut self, accept: bool) -> SecurityContext {
        self.accept_plaintext = accept;
        self
    }

    pub fn plaintext_accepted(&self) -> bool {
        self.accept_plaintext
    }

    /// Messages sealed so far in counter mode (next counter value).
    pub fn messages_sealed(&self) -> u128 {
        self.counter
    }

    #[cfg(test)]
    fn set_counter(&mut self, value: u128) {
        self.counter = value;
    }

    fn next_nonce(&mut self) -> Result<[u8; NONCE_LEN], SealError> {
        match self.nonce_mode {
            NonceMode::FixedVector => Ok(FIXED_VECTOR),
            NonceMode::Counter => {
                if self.counter >= COUNTER_LIMIT {
                    return Err(SealError::NonceExhausted);
                }
                let mut nonce = [0u8; NONCE_LEN];
                // 96-bit big-endian counter in the first 12 bytes
                nonce[..12].copy_from_slice(&self.counter.to_be_bytes()[4..]);
                self.counter += 1;
                Ok(nonce)
            }
        }
    }

    fn associated_data<'t>(&self, cipher: CipherId, topic: &'t str) -> &'t [u8] {
        match (self.aad_mode, cipher) {
            (AadMode::TopicBinding, _) => topic.as_bytes(),
            (AadMode::FixedVector, CipherId::Ascon128) => &FIXED_VECTOR,
            (AadMode::FixedVector, _) => b"",
        }
    }

    /// Seals `plaintext` for `topic` under the requested cipher.
    /// `CipherId::None` passes the payload through untouched (and does not
    /// consume a nonce).
    pub fn seal(
        &mut self,
        cipher: CipherId,
        topic: &str,
        plaintext: &[u8],
    ) -> Result<Envelope, SealError> {
        if cipher == CipherId::None {
            return Ok(Envelope::plaintext(plaintext.to_vec()));
        }
        let nonce = self.next_nonce()?;
        let ad = self.associated_data(cipher, topic);
        let (ciphertext, tag) = match cipher {
            CipherId::Aes128Gcm => gcm::encrypt(&self.key, &nonce, ad, plaintext),
            CipherId::Ascon128 => ascon::aead_encrypt(&self.key, &nonce, ad, plaintext),
            CipherId::None => unreachable!("handled above"),
        };
        Ok(Envelope::sealed(cipher, nonce, ciphertext, tag))
    }

    /// Opens an envelope received on `topic`. Sealed envelopes are decrypted
    /// and authenticated; plaintext envelopes pass through only when this
    /// context has opted in via [`SecurityContext::accept_plaintext`],
    /// otherwise they are rejected as a downgrade attempt.
    pub fn open(&self, topic: &str, envelope: &Envelope) -> Result<Vec<u8>, OpenError> {
        let cipher = envelope.cipher();
        if cipher == CipherId::None {
            if !self.accept_plaintext {
                return Err(OpenError::PlaintextRejected);
            }
            return Ok(envelope.ciphertext().to_vec());
        }
        let nonce = envelope
            .nonce()
            .ok_or(EnvelopeError::Truncated("sealed envelope without nonce"))?;
        let tag = envelope
            .tag()
            .ok_or(EnvelopeError::Truncated("sealed envelope without tag"))?;
        let ad = self.associated_data(cipher, topic);
        let plaintext = match cipher {
            CipherId::Aes128Gcm => gcm::decrypt(&self.key, nonce, ad, envelope.ciphertext(), tag)?,
            CipherId::Ascon128 => {
                ascon::aead_decrypt(&self.key, nonce, ad, envelope.ciphertext(), tag)?
            }
            CipherId::None => unreachable!("handled above"),
        };
        Ok(plaintext)
    }

    /// Convenience: seal straight to envelope bytes.
    pub fn seal_bytes(
        &mut self,
        cipher: CipherId,
        topic: &str,
        plaintext: &[u8],
    ) -> Result<Vec<u8>, SealError> {
        Ok(self.seal(cipher, topic, plaintext)?.encode())
    }

    /// Convenience: decode and open envelope bytes.
    pub fn open_bytes(&self, topic: &str, payload: &[u8]) -> Result<Vec<u8>, OpenError> {
        let envelope = Envelope::decode(payload)?;
        self.open(topic, &envelope)
    }
}
