//! Round-trip-time benchmark harness.
//!
//! One client both publishes and subscribes on a single topic. For each
//! cipher and each power-of-two payload size, the harness runs warmup
//! iterations followed by timed iterations, strictly sequentially: the timer
//! starts before the payload is sealed, the message travels through the
//! broker back to the same process, and the clock stops when the decrypted
//! copy is delivered. The measured window therefore spans seal, publish,
//! broker fanout, delivery, and open — the full application-visible path.
//!
//! Timing uses the process monotonic clock. Wall-clock timestamps appear
//! only in the metadata sidecar.

pub mod report;

use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aead::CipherId;
use crate::client::{CipherChoice, Client, ClientConfig, ClientError, ReceivedMessage};
use crate::mqtt::QoS;

/// What a measurement is labeled as in CSV output. Distinct from
/// [`CipherId`]: `TlsExternal` marks runs where transport security is
/// terminated outside the process, so the payload travels as plaintext
/// (wire cipher `None`) but the records must not be confused with the
/// unprotected baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CipherLabel {
    None,
    Aes128Gcm,
    Ascon128,
    TlsExternal,
}

impl Serialize for CipherLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for CipherLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl CipherLabel {
    pub fn name(self) -> &'static str {
        match self {
            CipherLabel::None => "none",
            CipherLabel::Aes128Gcm => "aes128gcm",
            CipherLabel::Ascon128 => "ascon128",
            CipherLabel::TlsExternal => "tls-external",
        }
    }

    /// The envelope cipher used on the wire for this label.
    pub fn wire_cipher(self) -> CipherId {
        match self {
            CipherLabel::None | CipherLabel::TlsExternal => CipherId::None,
            CipherLabel::Aes128Gcm => CipherId::Aes128Gcm,
            CipherLabel::Ascon128 => CipherId::Ascon128,
        }
    }
}

impl std::fmt::Display for CipherLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CipherLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "plaintext" => Ok(CipherLabel::None),
            "aes" | "aes128gcm" | "aes-128-gcm" => Ok(CipherLabel::Aes128Gcm),
            "ascon" | "ascon128" | "ascon-128" => Ok(CipherLabel::Ascon128),
            "tls-external" | "tls_external" | "tlsexternal" => Ok(CipherLabel::TlsExternal),
            other => Err(format!(
                "unknown cipher label '{other}' (expected none, aes, ascon, or tls-external)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub broker_addr: String,
    pub topic: String,
    pub client_id: String,
    pub ciphers: Vec<CipherLabel>,
    /// Payload sizes are 2^min ..= 2^max bytes.
    pub size_exponent_min: u32,
    pub size_exponent_max: u32,
    pub iterations_per_size: u32,
    /// Untimed round trips before each measured cell.
    pub warmup_iterations: u32,
    pub qos: QoS,
    /// Constant key/nonce/AD reproduction mode (see the security context).
    pub fixed_vectors: bool,
    /// Hex key for the session; a random ephemeral key when absent.
    pub key_hex: Option<String>,
    /// A round trip slower than this is recorded as invalid and excluded
    /// from aggregation.
    pub iteration_timeout_ms: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            broker_addr: "127.0.0.1:1883".into(),
            topic: "bench/rtt".into(),
            client_id: "bench-harness".into(),
            ciphers: vec![
                CipherLabel::None,
                CipherLabel::Aes128Gcm,
                CipherLabel::Ascon128,
            ],
            size_exponent_min: 1,
            size_exponent_max: 12,
            iterations_per_size: 10,
            warmup_iterations: 2,
            qos: QoS::AtLeastOnce,
            fixed_vectors: false,
            key_hex: None,
            iteration_timeout_ms: 10_000,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.ciphers.is_empty() {
            return Err(BenchError::InvalidConfig("ciphers must not be empty".into()));
        }
        if self.iterations_per_size == 0 {
            return Err(BenchError::InvalidConfig(
                "iterations_per_size must be at least 1".into(),
            ));
        }
        if self.size_exponent_min > self.size_exponent_max {
            return Err(BenchError::InvalidConfig(format!(
                "size exponent range {}..={} is empty",
                self.size_exponent_min, self.size_exponent_max
            )));
        }
        if self.size_exponent_max > 20 {
            return Err(BenchError::InvalidConfig(
                "size_exponent_max above 20 (1 MiB payloads) is not supported".into(),
            ));
        }
        if self.iteration_timeout_ms == 0 {
            return Err(BenchError::InvalidConfig(
                "iteration_timeout_ms must be positive".into(),
            ));
        }
        if let Some(hex_key) = &self.key_hex {
            parse_key_hex(hex_key)?;
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<u32> {
        (self.size_exponent_min..=self.size_exponent_max)
            .map(|e| 1u32 << e)
            .collect()
    }
}

pub fn parse_key_hex(s: &str) -> Result<[u8; 16], BenchError> {
    let bytes = hex::decode(s.trim())
        .map_err(|e| BenchError::InvalidConfig(format!("key is not valid hex: {e}")))?;
    bytes
        .as_slice()
        .try_into()
        .map_err(|_| BenchError::InvalidConfig(format!("key must be 16 bytes, got {}", bytes.len())))
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report error: {0}")]
    Report(String),
}

/// One timed round trip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RttSample {
    pub cipher: CipherLabel,
    pub message_size_bytes: u32,
    /// 1-based iteration index within the (cipher, size) cell.
    pub iteration: u32,
    /// Milliseconds, quantized to 0.001 ms so CSV round trips exactly.
    pub rtt_ms: f64,
    pub valid: bool,
}

/// Aggregated statistics for one (cipher, size) cell over valid samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MrttRecord {
    pub cipher: CipherLabel,
    pub message_size_bytes: u32,
    /// Mean round-trip time.
    pub mrtt_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Population standard deviation.
    pub stddev_ms: f64,
    /// Number of valid samples aggregated.
    pub n: u32,
}

/// Where and why a run stopped early. Written into the raw CSV as a final
/// marker row so partial data is never mistaken for a complete sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct AbortMarker {
    pub cipher: CipherLabel,
    pub message_size_bytes: u32,
    /// Iteration that failed; 0 when the failure hit a warmup round.
    pub iteration: u32,
    /// Human-readable cause; logged and recorded in run metadata, not in
    /// the CSV row itself.
    pub reason: String,
}

/// Full result of one benchmark run.
#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub config: BenchConfig,
    pub samples: Vec<RttSample>,
    pub records: Vec<MrttRecord>,
    /// Populated when the run stopped early (connection loss etc.).
    pub aborted: Option<AbortMarker>,
    pub started_at: chrono::DateTime<chrono::Utc>,
    pub finished_at: chrono::DateTime<chrono::Utc>,
}

/// The benchmark payload: `size` repetitions of `'X'`.
pub fn generate_payload(size: usize) -> Vec<u8> {
    vec![b'X'; size]
}

/// Quantizes milliseconds to the 0.001 ms grid used by the CSV schema, so
/// values survive a format/parse round trip bit-exactly.
pub fn quantize_ms(ms: f64) -> f64 {
    (ms * 1000.0).round() / 1000.0
}

fn duration_ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

enum IterationOutcome {
    Completed(f64),
    TimedOut(f64),
    Fatal(String),
}

/// One full round trip: seal, publish, wait for the decrypted copy to come
/// back. The timer starts before sealing.
fn run_iteration(
    client: &mut Client,
    rx: &Receiver<ReceivedMessage>,
    topic: &str,
    cipher: CipherLabel,
    payload: &[u8],
    timeout: Duration,
) -> IterationOutcome {
    let t0 = Instant::now();
    match client.publish_with_cipher(topic, payload, cipher.wire_cipher()) {
        Ok(_receipt) => {}
        Err(ClientError::AckTimeout { .. }) => {
            // the message may still arrive; fall through to the receive wait
            log::warn!(target: "vitalmq::bench", "event=puback_missing cipher={cipher}");
        }
        Err(e) => return IterationOutcome::Fatal(e.to_string()),
    }
    loop {
        let Some(remaining) = timeout.checked_sub(t0.elapsed()) else {
            return IterationOutcome::TimedOut(duration_ms(t0.elapsed()));
        };
        match rx.recv_timeout(remaining) {
            Ok(message) if message.plaintext == payload && message.received_at >= t0 => {
                // received_at was stamped by the reader thread right after
                // decryption, so channel latency does not inflate the RTT;
                // the >= t0 guard rejects late redeliveries of the previous
                // iteration, whose payload bytes are identical
                return IterationOutcome::Completed(duration_ms(
                    message.received_at.duration_since(t0),
                ));
            }
            Ok(stale) => {
                log::debug!(
                    target: "vitalmq::bench",
                    "event=stale_delivery bytes={} dup={}",
                    stale.plaintext.len(),
                    stale.dup
                );
            }
            Err(RecvTimeoutError::Timeout) => {
                return IterationOutcome::TimedOut(duration_ms(t0.elapsed()));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return IterationOutcome::Fatal("receive channel closed".into());
            }
        }
    }
}

fn drain(rx: &Receiver<ReceivedMessage>) {
    while rx.try_recv().is_ok() {}
}

/// Runs the full sweep against a live broker.
pub fn run_bench(config: &BenchConfig) -> Result<BenchOutcome, BenchError> {
    config.validate()?;
    let started_at = chrono::Utc::now();

    let key = match &config.key_hex {
        Some(hex_key) => Some(parse_key_hex(hex_key)?),
        None if config.fixed_vectors => None, // context supplies the constant
        None => {
            let mut key = [0u8; 16];
            rand::Rng::fill(&mut rand::rng(), &mut key[..]);
            log::info!(target: "vitalmq::bench", "event=ephemeral_key_generated");
            Some(key)
        }
    };
    let mut client = Client::connect(ClientConfig {
        broker_addr: config.broker_addr.clone(),
        client_id: config.client_id.clone(),
        keep_alive_s: 30,
        qos: config.qos,
        cipher: CipherChoice::Fixed(CipherId::None), // overridden per publish
        key,
        fixed_vectors: config.fixed_vectors,
        ack_timeout: Duration::from_millis(config.iteration_timeout_ms),
        max_publish_retries: 0, // the broker is local; a lost ack means trouble
        ..ClientConfig::default()
    })?;
    let (_granted, rx) = client.subscribe_channel(&config.topic, 256)?;

    let timeout = Duration::from_millis(config.iteration_timeout_ms);
    let mut samples = Vec::new();
    let mut aborted = None;

    'sweep: for &cipher in &config.ciphers {
        for size in config.sizes() {
            let payload = generate_payload(size as usize);
            log::info!(
                target: "vitalmq::bench",
                "event=cell_start cipher={cipher} bytes={size}"
            );
            for _warmup in 0..config.warmup_iterations {
                drain(&rx);
                if let IterationOutcome::Fatal(reason) =
                    run_iteration(&mut client, &rx, &config.topic, cipher, &payload, timeout)
                {
                    log::error!(
                        target: "vitalmq::bench",
                        "event=abort during=warmup cipher={cipher} bytes={size} reason={reason}"
                    );
                    aborted = Some(AbortMarker {
                        cipher,
                        message_size_bytes: size,
                        iteration: 0,
                        reason,
                    });
                    break 'sweep;
                }
            }
            for iteration in 1..=config.iterations_per_size {
                drain(&rx);
                match run_iteration(&mut client, &rx, &config.topic, cipher, &payload, timeout) {
                    IterationOutcome::Completed(rtt_ms) => samples.push(RttSample {
                        cipher,
                        message_size_bytes: size,
                        iteration,
                        rtt_ms: quantize_ms(rtt_ms),
                        valid: true,
                    }),
                    IterationOutcome::TimedOut(elapsed_ms) => {
                        log::warn!(
                            target: "vitalmq::bench",
                            "event=iteration_timeout cipher={cipher} bytes={size} iteration={iteration}"
                        );
                        samples.push(RttSample {
                            cipher,
                            message_size_bytes: size,
                            iteration,
                            rtt_ms: quantize_ms(elapsed_ms),
                            valid: false,
                        });
                    }
                    IterationOutcome::Fatal(reason) => {
                        log::error!(
                            target: "vitalmq::bench",
                            "event=abort cipher={cipher} bytes={size} iteration={iteration} reason={reason}"
                        );
                        aborted = Some(AbortMarker {
                            cipher,
                            message_size_bytes: size,
                            iteration,
                            reason,
                        });
                        break 'sweep;
                    }
                }
            }
        }
    }
    client.disconnect();

    let records = aggregate(&samples);
    Ok(BenchOutcome {
        config: config.clone(),
        samples,
        records,
        aborted,
        started_at,
        finished_at: chrono::Utc::now(),
    })
}

/// Groups samples by (cipher, size) and computes the aggregate statistics
/// over valid samples only. Cell order follows first appearance of each
/// cipher in the sample list, then size ascending.
pub fn aggregate(samples: &[RttSample]) -> Vec<MrttRecord> {
    let mut cipher_order: Vec<CipherLabel> = Vec::new();
    for sample in samples {
        if !cipher_order.contains(&sample.cipher) {
            cipher_order.push(sample.cipher);
        }
    }

    let mut records = Vec::new();
    for &cipher in &cipher_order {
        let mut sizes: Vec<u32> = samples
            .iter()
            .filter(|s| s.cipher == cipher)
            .map(|s| s.message_size_bytes)
            .collect();
        sizes.sort_unstable();
        sizes.dedup();
        for size in sizes {
            let values: Vec<f64> = samples
                .iter()
                .filter(|s| s.cipher == cipher && s.message_size_bytes == size && s.valid)
                .map(|s| s.rtt_ms)
                .collect();
            let n = values.len() as u32;
            if n == 0 {
                log::warn!(
                    target: "vitalmq::bench",
                    "event=empty_cell cipher={cipher} bytes={size}"
                );
                records.push(MrttRecord {
                    cipher,
                    message_size_bytes: size,
                    mrtt_ms: 0.0,
                    min_ms: 0.0,
                    max_ms: 0.0,
                    stddev_ms: 0.0,
                    n: 0,
                });
                continue;
            }
            let mean = values.iter().sum::<f64>() / f64::from(n);
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let variance =
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f64::from(n);
            records.push(MrttRecord {
                cipher,
                message_size_bytes: size,
                mrtt_ms: mean,
                min_ms: min,
                max_ms: max,
                stddev_ms: variance.sqrt(),
                n,
            });
        }
    }
    records
}
