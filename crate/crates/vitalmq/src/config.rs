//! TOML configuration. Every CLI subcommand can run from a config file
//! alone; flags override individual values.
//!
//! Keys are never configuration values. They arrive through a file path
//! (`key_file` here, `--key-file` on the command line) or through the
//! `VITALMQ_KEY` environment variable as 32 hex characters — never as a
//! bare command-line argument, which would leak into shell history and
//! process listings.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::aead::CipherId;
use crate::bench::BenchConfig;
use crate::broker::{BrokerConfig, FaultConfig};
use crate::client::{CipherChoice, ClientConfig};
use crate::mqtt::QoS;
use crate::policy::PolicyConfig;

/// Environment variable consulted for the payload key (32 hex characters).
pub const KEY_ENV: &str = "VITALMQ_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("{0}")]
    Invalid(String),
}

/// The whole configuration file. All sections and fields are optional;
/// an empty file is a valid configuration.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub broker: BrokerSection,
    pub client: ClientSection,
    pub policy: PolicyConfig,
    pub bench: BenchConfig,
    pub kat: KatSection,
    pub calibrate: CalibrateSection,
}

/// Vector-file paths used by `kat` when no flags are given, so the
/// subcommand is runnable from a config file alone.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct KatSection {
    pub ascon: Option<PathBuf>,
    pub gcm: Option<PathBuf>,
}

/// Input path used by `policy-calibrate` when no flags are given.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub input: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Toml {
            path: path.to_path_buf(),
            source: Box::new(source),
        })
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BrokerSection {
    pub listen_addr: String,
    pub retransmit_interval_ms: u64,
    pub max_retries: u32,
    pub max_frame_bytes: usize,
    /// `username = "password"` allowlist; omit to accept all clients.
    pub auth: Option<HashMap<String, String>>,
    pub fault: FaultConfig,
}

impl Default for BrokerSection {
    fn default() -> Self {
        let defaults = BrokerConfig::default();
        BrokerSection {
            listen_addr: "127.0.0.1:1883".into(),
            retransmit_interval_ms: defaults.retransmit_interval.as_millis() as u64,
            max_retries: defaults.max_retries,
            max_frame_bytes: defaults.max_frame_bytes,
            auth: None,
            fault: defaults.fault,
        }
    }
}

impl BrokerSection {
    pub fn broker_config(&self) -> BrokerConfig {
        BrokerConfig {
            retransmit_interval: Duration::from_millis(self.retransmit_interval_ms),
            max_retries: self.max_retries,
            auth: self.auth.clone(),
            max_frame_bytes: self.max_frame_bytes,
            fault: self.fault.clone(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ClientSection {
    pub broker_addr: String,
    /// Default topic for `publish` and default filter for `subscribe`.
    pub topic: String,
    /// Generated (`vitalmq-xxxxxxxx`) when omitted.
    pub client_id: Option<String>,
    pub keep_alive_s: u16,
    /// 0 or 1.
    pub qos: u8,
    /// `none`, `aes128gcm`, `ascon128`, or `adaptive`.
    pub cipher: String,
    /// File containing the key as 32 hex characters.
    pub key_file: Option<PathBuf>,
    pub fixed_vectors: bool,
    /// Deliver incoming unencrypted envelopes instead of rejecting them.
    pub accept_plaintext: bool,
    pub username: Option<String>,
    pub password: Option<String>,
    pub ack_timeout_ms: u64,
    pub max_publish_retries: u32,
    pub connect_timeout_ms: u64,
    pub max_frame_bytes: usize,
}

impl Default for ClientSection {
    fn default() -> Self {
        let defaults = ClientConfig::default();
        ClientSection {
            broker_addr: defaults.broker_addr,
            topic: "vitals/demo".into(),
            client_id: None,
            keep_alive_s: defaults.keep_alive_s,
            qos: defaults.qos.bits(),
            cipher: "ascon128".into(),
            key_file: None,
            fixed_vectors: false,
            accept_plaintext: false,
            username: None,
            password: None,
            ack_timeout_ms: defaults.ack_timeout.as_millis() as u64,
            max_publish_retries: defaults.max_publish_retries,
            connect_timeout_ms: defaults.connect_timeout.as_millis() as u64,
            max_frame_bytes: defaults.max_frame_bytes,
        }
    }
}

impl ClientSection {
    /// Resolves the cipher string, using `policy` when it says `adaptive`.
    pub fn cipher_choice(&self, policy: &PolicyConfig) -> Result<CipherChoice, ConfigError> {
        cipher_choice(&self.cipher, policy)
    }

    pub fn client_config(
        &self,
        policy: &PolicyConfig,
        key: Option<[u8; 16]>,
    ) -> Result<ClientConfig, ConfigError> {
        let qos = QoS::from_bits(self.qos)
            .ok_or_else(|| ConfigError::Invalid(format!("qos must be 0 or 1, got {}", self.qos)))?;
        Ok(ClientConfig {
            broker_addr: self.broker_addr.clone(),
            client_id: self
                .client_id
                .clone()
                .unwrap_or_else(|| format!("vitalmq-{:08x}", rand::random::<u32>())),
            keep_alive_s: self.keep_alive_s,
            qos,
            cipher: self.cipher_choice(policy)?,
            key,
            fixed_vectors: self.fixed_vectors,
            accept_plaintext: self.accept_plaintext,
            username: self.username.clone(),
            password: self.password.clone(),
            ack_timeout: Duration::from_millis(self.ack_timeout_ms),
            max_publish_retries: self.max_publish_retries,
            connect_timeout: Duration::from_millis(self.connect_timeout_ms),
            max_frame_bytes: self.max_frame_bytes,
        })
    }
}

/// Parses a cipher selector: a cipher name or `adaptive`.
pub fn cipher_choice(name: &str, policy: &PolicyConfig) -> Result<CipherChoice, ConfigError> {
    if name.eq_ignore_ascii_case("adaptive") {
        policy
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("policy: {e}")))?;
        return Ok(CipherChoice::Adaptive(policy.clone()));
    }
    name.parse::<CipherId>()
        .map(CipherChoice::Fixed)
        .map_err(|_| {
            ConfigError::Invalid(format!(
                "unknown cipher '{name}' (expected none, aes128gcm, ascon128, or adaptive)"
            ))
        })
}

fn parse_key_text(text: &str, origin: &str) -> Result<[u8; 16], ConfigError> {
    let bytes = hex::decode(text.trim())
        .map_err(|e| ConfigError::Invalid(format!("{origin}: key is not valid hex: {e}")))?;
    let len = bytes.len();
    bytes
        .try_into()
        .map_err(|_| ConfigError::Invalid(format!("{origin}: key must be 16 bytes, got {len}")))
}

/// Reads a key file: 32 hex characters, surrounding whitespace ignored.
pub fn load_key_file(path: &Path) -> Result<[u8; 16], ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_key_text(&text, &path.display().to_string())
}

/// Key resolution order: explicit `--key-file` flag, then the `VITALMQ_KEY`
/// environment variable, then the config file's `key_file`.
pub fn resolve_key(
    flag_key_file: Option<&Path>,
    config_key_file: Option<&Path>,
) -> Result<Option<[u8; 16]>, ConfigError> {
    resolve_key_from(flag_key_file, std::env::var(KEY_ENV).ok(), config_key_file)
}

fn resolve_key_from(
    flag_key_file: Option<&Path>,
    env_value: Option<String>,
    config_key_file: Option<&Path>,
) -> Result<Option<[u8; 16]>, ConfigError> {
    if let Some(path) = flag_key_file {
        return load_key_file(path).map(Some);
    }
    if let Some(value) = env_value {
        return parse_key_text(&value, KEY_ENV).map(Some);
    }
    if let Some(path) = config_key_file {
        return load_key_file(path).map(Some);
    }
    Ok(None)
}
