//! ASCON-128 authenticated encryption with associated data.
//!
//! Implements the ASCON v1.2 parameter set selected by the NIST lightweight
//! cryptography standardization effort: 128-bit key, nonce, and tag, a 64-bit
//! rate, 12 permutation rounds for initialization/finalization, and 6 rounds
//! between data blocks. The 320-bit state is held as five big-endian u64
//! words.

use subtle::ConstantTimeEq;
use thiserror::Error;

pub const KEY_LEN: usize = 16;
pub const NONCE_LEN: usize = 16;
pub const TAG_LEN: usize = 16;

/// Rate in bytes: one 64-bit word absorbed/squeezed per permutation call.
const RATE: usize = 8;

/// Initialization vector encoding the parameter set (k=128, r=64, a=12, b=6).
const IV: u64 = 0x80400c0600000000;

/// Round constants XORed into x2. A reduced-round permutation uses the tail
/// of this list.
const ROUND_CONSTANTS: [u64; 12] = [
    0xf0, 0xe1, 0xd2, 0xc3, 0xb4, 0xa5, 0x96, 0x87, 0x78, 0x69, 0x5a, 0x4b,
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AsconError {
    #[error("invalid round count {0}: the permutation is defined for 6 or 12 rounds")]
    InvalidRounds(usize),
    #[error("invalid key length {0}: expected {KEY_LEN} bytes")]
    InvalidKeyLength(usize),
    #[error("invalid nonce length {0}: expected {NONCE_LEN} bytes")]
    InvalidNonceLength(usize),
}

/// Ciphertext failed authentication: wrong key, wrong nonce, mismatched
/// associated data, or tampered ciphertext/tag. No plaintext is released.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("authentication failed")]
pub struct AuthFailure;

/// The 320-bit permutation state.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct AsconState {
    x: [u64; 5],
}

impl AsconState {
    pub fn new(words: [u64; 5]) -> Self {
        AsconState { x: words }
    }

    pub fn words(&self) -> [u64; 5] {
        self.x
    }

    /// Applies the ASCON permutation p^rounds in place. Only the round counts
    /// used by ASCON-128 (6 and 12) are accepted.
    pub fn permute(&mut self, rounds: usize) -> Result<(), AsconError> {
        if rounds != 6 && rounds != 12 {
            return Err(AsconError::InvalidRounds(rounds));
        }
        for &rc in &ROUND_CONSTANTS[12 - rounds..] {
            self.round(rc);
        }
        Ok(())
    }

    fn round(&mut self, rc: u64) {
        let x = &mut self.x;
        // constant addition
        x[2] ^= rc;
        // substitution layer: 5-bit S-box applied across the words
        x[0] ^= x[4];
        x[4] ^= x[3];
        x[2] ^= x[1];
        let t0 = !x[0] & x[1];
        let t1 = !x[1] & x[2];
        let t2 = !x[2] & x[3];
        let t3 = !x[3] & x[4];
        let t4 = !x[4] & x[0];
        x[0] ^= t1;
        x[1] ^= t2;
        x[2] ^= t3;
        x[3] ^= t4;
        x[4] ^= t0;
        x[1] ^= x[0];
        x[0] ^= x[4];
        x[3] ^= x[2];
        x[2] = !x[2];
        // linear diffusion layer
        x[0] ^= x[0].rotate_right(19) ^ x[0].rotate_right(28);
        x[1] ^= x[1].rotate_right(61) ^ x[1].rotate_right(39);
        x[2] ^= x[2].rotate_right(1) ^ x[2].rotate_right(6);
        x[3] ^= x[3].rotate_right(10) ^ x[3].rotate_right(17);
        x[4] ^= x[4].rotate_right(7) ^ x[4].rotate_right(41);
    }
}

/// Reads up to 8 bytes as a big-endian word with the 0x80 padding byte
/// appended, as used for the final (partial) block of a message.
fn pad_word(chunk: &[u8]) -> u64 {
    debug_assert!(chunk.len() < RATE);
    let mut block = [0u8; RATE];
    block[..chunk.len()].copy_from_slice(chunk);
    block[chunk.len()] = 0x80;
    u64::from_be_bytes(block)
}

fn word(chunk: &[u8]) -> u64 {
    u64::from_be_bytes(chunk.try_into().expect("full rate block"))
}

struct Core {
    state: AsconState,
    k0: u64,
    k1: u64,
}

impl Core {
    /// Runs initialization and associated-data absorption, leaving the state
    /// ready for plaintext/ciphertext processing.
    fn start(key: &[u8; KEY_LEN], nonce: &[u8; NONCE_LEN], ad: &[u8]) -> Core {
        let k0 = word(&key[..8]);
        let k1 = word(&key[8..]);
        let mut state = AsconState::new([
            IV,
            k0,
            k1,
            word(&nonce[..8]),
            word(&nonce[8..]),
        ]);
        state.permute(12).expect("12 is a valid round count");
        state.x[3] ^= k0;
        state.x[4] ^= k1;

        if !ad.is_empty() {
            let mut chunks = ad.chunks_exact(RATE);
            for chunk in &mut chunks {
                state.x[0] ^= word(chunk);
                state.permute(6).expect("6 is a valid round count");
            }
            state.x[0] ^= pad_word(chunks.remainder());
            state.permute(6).expect("6 is a valid round count");
        }
        // domain separation between associated data and plaintext
        state.x[4] ^= 1;

        Core { state, k0, k1 }
    }

    fn finalize(mut self) -> [u8; TAG_LEN] {
        self.state.x[1] ^= self.k0;
        self.state.x[2] ^= self.k1;
        self.state.permute(12).expect("12 is a valid round count");
        let mut tag = [0u8; TAG_LEN];
        tag[..8].copy_from_slice(&(self.state.x[3] ^ self.k0).to_be_bytes());
        tag[8..].copy_from_slice(&(self.state.x[4] ^ self.k1).to_be_bytes());
        tag
    }
}

/// Encrypts `plaintext` under `key`/`nonce`, binding `associated_data` into
/// the tag. Returns the ciphertext (same length as the plaintext) and the
/// 128-bit authentication tag.
pub fn aead_encrypt(
    key: &[u8; KEY_LEN],
    nonce: &[u8; NONCE_LEN],
    associated_data: &[u8],
    plaintext: &[u8],
) -> (Vec<u8>, [u8; TAG_LEN]) {
    let mut core = Core::start(key, nonce, associated_data);
    let mut ciphertext = Vec::with_capacity(plaintext.len());

    let mut chunks = plaintext.chunks_exact(RATE);
    for chunk in &mut chunks {
        core.state.x[0] ^= word(chunk);
        ciphertext.extend_from_slice(&core.state.x[0].to_be_bytes());
        core.state.permute(6).expect("6 is a valid round count");
    }
    let rem = chunks.remainder();
    core.state.x[0] ^= pad_word(rem);
    ciphertext.extend_from_slice(&core.state.x[0].to_be_bytes()[..rem.len()]);

    let tag = core.finalize();
    (ciphertext, tag)
}

/// Decrypts and authenticates. The plaintext is released only when the
/// recomputed tag matches `tag`; comparison is constant-time.
pub fn aead_decrypt(
    key: &[u8; KEY_LEN],
    nonce: &[u8; NONCE_LEN],
    associated_data: &[u8],
    ciphertext: &[u8],
    tag: &[u8; TAG_LEN],
) -> Result<Vec<u8>, AuthFailure> {
    let mut core = Core::start(key, nonce, associated_data);
    let mut plaintext = Vec::with_capacity(ciphertext.len());

    let mut chunks = ciphertext.chunks_exact(RATE);
    for chunk in &mut chunks {
        let c = word(chunk);
        plaintext.extend_from_slice(&(core.state.x[0] ^ c).to_be_bytes());
        core.state.x[0] = c;
        core.state.permute(6).expect("6 is a valid round count");
    }
    // the final partial block: recover plaintext bytes, then overwrite the
    // exposed rate bytes with ciphertext and apply the padding bit
    let rem = chunks.remainder();
    let exposed = core.state.x[0].to_be_bytes();
    for (i, &c) in rem.iter().enumerate() {
        plaintext.push(exposed[i] ^ c);
    }
    let mut replaced = exposed;
    replaced[..rem.len()].copy_from_slice(rem);
    core.state.x[0] = u64::from_be_bytes(replaced) ^ (0x80u64 << (56 - 8 * rem.len()));

    let computed = core.finalize();
    if bool::from(computed.ct_eq(tag)) {
        Ok(plaintext)
    } else {
        Err(AuthFailure)
    }
}
