//! AES-128-GCM built from the AES block primitive.
//!
//! GHASH and counter-mode layers are implemented here rather than taken from
//! an AEAD crate so that arbitrary IV lengths (the deployed configuration
//! uses 16-byte IVs) and the known-answer verification command share one code
//! path. The multiplication in GF(2^128) is the straightforward shift/xor
//! form, which is plenty for payloads in the kilobyte range.

use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;
use subtle::ConstantTimeEq;

use crate::ascon::AuthFailure;

pub const KEY_LEN: usize = 16;
pub const TAG_LEN: usize = 16;

/// Multiplication in GF(2^128) with the GCM reduction polynomial, operating
/// on big-endian bit order (bit 0 of the block is the most significant bit).
fn gmul(x: u128, y: u128) -> u128 {
    const R: u128 = 0xe1 << 120;
    let mut z = 0u128;
    let mut v = x;
    for i in 0..128 {
        if (y >> (127 - i)) & 1 == 1 {
            z ^= v;
        }
        let carry = v & 1;
        v >>= 1;
        if carry == 1 {
            v ^= R;
        }
    }
    z
}

/// Loads up to 16 bytes as a big-endian block, zero-padded on the right.
fn block_to_u128(block: &[u8]) -> u128 {
    let mut padded = [0u8; 16];
    padded[..block.len()].copy_from_slice(block);
    u128::from_be_bytes(padded)
}

/// Absorbs `data` into the GHASH accumulator as zero-padded 16-byte blocks.
fn ghash_update(h: u128, acc: u128, data: &[u8]) -> u128 {
    let mut acc = acc;
    for chunk in data.chunks(16) {
        acc = gmul(acc ^ block_to_u128(chunk), h);
    }
    acc
}

/// GHASH over associated data and ciphertext followed by the standard
/// 64-bit-lengths block.
fn ghash(h: u128, aad: &[u8], ct: &[u8]) -> u128 {
    let acc = ghash_update(h, 0, aad);
    let acc = ghash_update(h, acc, ct);
    let lengths = ((aad.len() as u128 * 8) << 64) | (ct.len() as u128 * 8);
    gmul(acc ^ lengths, h)
}

fn encrypt_block(cipher: &Aes128, block: u128) -> u128 {
    let mut b = block.to_be_bytes().into();
    cipher.encrypt_block(&mut b);
    u128::from_be_bytes(b.into())
}

/// Derives the pre-counter block J0. A 96-bit IV is used directly with a
/// counter suffix of 1; any other length is hashed down with GHASH.
fn derive_j0(h: u128, iv: &[u8]) -> u128 {
    if iv.len() == 12 {
        block_to_u128(iv) | 1
    } else {
        let acc = ghash_update(h, 0, iv);
        gmul(acc ^ (iv.len() as u128 * 8), h)
    }
}

/// Counter-mode keystream application starting at inc32(j0). Only the low 32
/// bits of the counter increment, per the GCM construction.
fn ctr_xor(cipher: &Aes128, j0: u128, data: &[u8]) -> Vec<u8> {
    let prefix = j0 & !0xffff_ffffu128;
    let start = (j0 as u32).wrapping_add(1);
    let mut out = Vec::with_capacity(data.len());
    for (i, chunk) in data.chunks(16).enumerate() {
        let counter = prefix | u128::from(start.wrapping_add(i as u32));
        let keystream = encrypt_block(cipher, counter).to_be_bytes();
        for (j, &byte) in chunk.iter().enumerate() {
            out.push(byte ^ keystream[j]);
        }
    }
    out
}

/// Encrypts `plaintext` under AES-128-GCM. `iv` may be any non-empty length;
/// 12-byte IVs take the direct path defined by the specification.
pub fn encrypt(
    key: &[u8; KEY_LEN],
    iv: &[u8],
    associated_data: &[u8],
    plaintext: &[u8],
) -> (Vec<u8>, [u8; TAG_LEN]) {
    let cipher = Aes128::new(key.into());
    let h = encrypt_block(&cipher, 0);
    let j0 = derive_j0(h, iv);
    let ciphertext = ctr_xor(&cipher, j0, plaintext);
    let s = ghash(h, associated_data, &ciphertext);
    let tag = (encrypt_block(&cipher, j0) ^ s).to_be_bytes();
    (ciphertext, tag)
}

/// Decrypts and authenticates; the tag comparison is constant-time and no
/// plaintext is released on failure.
pub fn decrypt(
    key: &[u8; KEY_LEN],
    iv: &[u8],
    associated_data: &[u8],
    ciphertext: &[u8],
    tag: &[u8; TAG_LEN],
) -> Result<Vec<u8>, AuthFailure> {
    let cipher = Aes128::new(key.into());
    let h = encrypt_block(&cipher, 0);
    let j0 = derive_j0(h, iv);
    let s = ghash(h, associated_data, ciphertext);
    let computed = (encrypt_block(&cipher, j0) ^ s).to_be_bytes();
    if bool::from(computed.ct_eq(tag)) {
        Ok(ctr_xor(&cipher, j0, ciphertext))
    } else {
        Err(AuthFailure)
    }
}
