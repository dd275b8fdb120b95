//! Secure publish/subscribe messaging for constrained telemetry networks.
//!
//! The toolkit has four layers:
//!
//! * [`mqtt`] — an MQTT 3.1.1 wire-protocol subset (QoS 0/1, no wills, no
//!   QoS 2) shared by the broker and the client.
//! * [`ascon`] and [`aead`] — payload encryption. Payloads travel inside a
//!   self-describing envelope sealed with ASCON-128 or AES-128-GCM; the
//!   broker never sees a key.
//! * [`broker`] and [`client`] — a small TCP broker (thread per connection,
//!   deterministic core) and a synchronous client.
//! * [`policy`] and [`bench`] — size-based cipher selection and the
//!   round-trip-time harness used to calibrate it.

pub mod aead;
pub mod ascon;
pub mod bench;
pub mod broker;
pub mod client;
pub mod config;
pub mod mqtt;
pub mod policy;
pub mod vectors;
