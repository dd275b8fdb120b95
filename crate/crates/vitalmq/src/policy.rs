//! Size-based cipher selection.
//!
//! Measurements show the lightweight cipher wins on small payloads but falls
//! behind AES-GCM somewhere in the low-kilobyte range on hardware with AES
//! acceleration. The policy picks the small-message cipher up to a size
//! threshold and the large-message cipher above it; the threshold can be
//! recalibrated from benchmark output ([`calibrate_threshold`]) instead of
//! trusting the shipped default.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aead::CipherId;
use crate::bench::{CipherLabel, MrttRecord};

/// Default crossover: measurements degrade beyond 2 KiB payloads.
pub const DEFAULT_SIZE_THRESHOLD_BYTES: u32 = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Payloads up to and including this size use `small_cipher`.
    pub size_threshold_bytes: u32,
    pub small_cipher: CipherId,
    pub large_cipher: CipherId,
    /// Refuse to select `CipherId::None` unless explicitly permitted.
    pub allow_plaintext: bool,
    /// When set, every decision returns this cipher (reason
    /// `PolicyOverride`). Plaintext override still requires
    /// `allow_plaintext`.
    pub override_cipher: Option<CipherId>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            size_threshold_bytes: DEFAULT_SIZE_THRESHOLD_BYTES,
            small_cipher: CipherId::Ascon128,
            large_cipher: CipherId::Aes128Gcm,
            allow_plaintext: false,
            override_cipher: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("policy selects plaintext but allow_plaintext is false")]
    PlaintextNotAllowed,
    #[error("malformed calibration input: {0}")]
    MalformedInput(String),
    #[error("missing data: {0}")]
    MissingData(String),
}

impl PolicyConfig {
    /// Checks that the configured ciphers respect `allow_plaintext`.
    pub fn validate(&self) -> Result<(), PolicyError> {
        let plaintext_selected = self.small_cipher == CipherId::None
            || self.large_cipher == CipherId::None
            || self.override_cipher == Some(CipherId::None);
        if plaintext_selected && !self.allow_plaintext {
            return Err(PolicyError::PlaintextNotAllowed);
        }
        Ok(())
    }
}

/// Why a decision came out the way it did; carried into logs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecisionReason {
    BelowThreshold,
    AboveThreshold,
    PolicyOverride,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub cipher: CipherId,
    pub reason: DecisionReason,
}

/// Picks a cipher for a message of `size_bytes`. The threshold is inclusive:
/// a payload of exactly `size_threshold_bytes` is still "small".
pub fn select_cipher(size_bytes: usize, policy: &PolicyConfig) -> Decision {
    if let Some(cipher) = policy.override_cipher {
        return Decision {
            cipher,
            reason: DecisionReason::PolicyOverride,
        };
    }
    if size_bytes <= policy.size_threshold_bytes as usize {
        Decision {
            cipher: policy.small_cipher,
            reason: DecisionReason::BelowThreshold,
        }
    } else {
        Decision {
            cipher: policy.large_cipher,
            reason: DecisionReason::AboveThreshold,
        }
    }
}

/// Result of threshold calibration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Calibration {
    /// Largest grid size S such that the lightweight cipher is no slower
    /// than AES-GCM at every grid size up to and including S.
    Threshold(u32),
    /// The lightweight cipher already loses at the smallest measured size.
    NoCrossover,
}

/// Derives a size threshold from aggregated benchmark records.
///
/// Both ciphers must have been measured on the same size grid. The answer is
/// prefix-based: the threshold only extends while ASCON keeps winning (or
/// tying), so a single early loss ends the prefix even if ASCON wins again
/// at larger sizes.
pub fn calibrate_threshold(records: &[MrttRecord]) -> Result<Calibration, PolicyError> {
    let mut ascon: Vec<(u32, f64)> = Vec::new();
    let mut aes: Vec<(u32, f64)> = Vec::new();
    for record in records {
        if !record.mrtt_ms.is_finite() || record.mrtt_ms < 0.0 {
            return Err(PolicyError::MalformedInput(format!(
                "non-finite or negative MRTT for {} at {} bytes",
                record.cipher, record.message_size_bytes
            )));
        }
        match record.cipher {
            CipherLabel::Ascon128 => ascon.push((record.message_size_bytes, record.mrtt_ms)),
            CipherLabel::Aes128Gcm => aes.push((record.message_size_bytes, record.mrtt_ms)),
            _ => {}
        }
    }
    ascon.sort_unstable_by_key(|&(size, _)| size);
    aes.sort_unstable_by_key(|&(size, _)| size);
    for rows in [&ascon, &aes] {
        if rows.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(PolicyError::MalformedInput(
                "duplicate size rows for a cipher".into(),
            ));
        }
    }
    if ascon.is_empty() || aes.is_empty() {
        return Err(PolicyError::MalformedInput(
            "need MRTT rows for both ascon128 and aes128gcm".into(),
        ));
    }
    if ascon.len() != aes.len()
        || ascon.iter().zip(&aes).any(|(a, b)| a.0 != b.0)
    {
        return Err(PolicyError::MalformedInput(
            "ascon128 and aes128gcm were measured on different size grids".into(),
        ));
    }

    let mut threshold = None;
    for (&(size, ascon_mrtt), &(_, aes_mrtt)) in ascon.iter().zip(&aes) {
        if ascon_mrtt <= aes_mrtt {
            threshold = Some(size);
        } else {
            break;
        }
    }
    Ok(match threshold {
        Some(size) => Calibration::Threshold(size),
        None => Calibration::NoCrossover,
    })
}

/// Performance efficiency index at one message size: the mean MRTT of every
/// non-ASCON cipher divided by the ASCON MRTT. Values above 1 mean ASCON was
/// faster than the field at that size.
pub fn compute_pei(records: &[MrttRecord], size_bytes: u32) -> Result<f64, PolicyError> {
    let at_size: Vec<&MrttRecord> = records
        .iter()
        .filter(|r| r.message_size_bytes == size_bytes)
        .collect();
    let ascon = at_size
        .iter()
        .find(|r| r.cipher == CipherLabel::Ascon128)
        .ok_or_else(|| {
            PolicyError::MissingData(format!("no ascon128 MRTT at {size_bytes} bytes"))
        })?;
    if ascon.mrtt_ms.is_nan() || ascon.mrtt_ms <= 0.0 {
        return Err(PolicyError::MalformedInput(format!(
            "ascon128 MRTT at {size_bytes} bytes must be positive, got {}",
            ascon.mrtt_ms
        )));
    }
    let others: Vec<f64> = at_size
        .iter()
        .filter(|r| r.cipher != CipherLabel::Ascon128)
        .map(|r| r.mrtt_ms)
        .collect();
    if others.is_empty() {
        return Err(PolicyError::MissingData(format!(
            "no non-ascon ciphers measured at {size_bytes} bytes"
        )));
    }
    let mean = others.iter().sum::<f64>() / others.len() as f64;
    Ok(mean / ascon.mrtt_ms)
}
