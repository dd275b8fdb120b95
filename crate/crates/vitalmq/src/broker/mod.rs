//! Message broker: a deterministic core state machine plus a TCP front end.
//!
//! [`BrokerCore`] owns all sessions, subscriptions, and QoS 1 retransmission
//! state but performs no IO: packets go in, a list of [`Action`]s comes out,
//! and time is an explicit parameter. That makes at-least-once delivery,
//! fault injection, and keep-alive expiry testable with fabricated clocks
//! and no sockets. [`server::Broker`] wraps the core in a
//! thread-per-connection TCP listener.

pub mod server;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mqtt::{
    connect_return, topic, Connack, Connect, Packet, Publish, QoS, Suback, SubackCode, Subscribe,
};

/// Connection handle assigned by the transport layer.
pub type ConnId = u64;

/// Probabilities for injecting message loss, used to demonstrate that QoS 1
/// recovers. Zero everywhere by default. Faults are driven by a seeded RNG
/// so a given seed reproduces the same loss pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultConfig {
    /// Drop an inbound PUBLISH as if it never arrived (no PUBACK, no fanout).
    pub drop_inbound_publish: f64,
    /// Drop an inbound PUBACK so the broker keeps retransmitting.
    pub drop_inbound_puback: f64,
    /// Swallow an outbound CONNACK so the client's connect times out.
    pub drop_outbound_connack: f64,
    pub seed: u64,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig {
            drop_inbound_publish: 0.0,
            drop_inbound_puback: 0.0,
            drop_outbound_connack: 0.0,
            seed: 0,
        }
    }
}

impl FaultConfig {
    fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("drop_inbound_publish", self.drop_inbound_publish),
            ("drop_inbound_puback", self.drop_inbound_puback),
            ("drop_outbound_connack", self.drop_outbound_connack),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be a probability in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BrokerConfig {
    /// How long to wait for a PUBACK before resending with DUP set.
    pub retransmit_interval: Duration,
    /// Give up on a QoS 1 delivery after this many resends.
    pub max_retries: u32,
    /// Optional `username -> password` allowlist. When set, connections
    /// must present matching credentials.
    pub auth: Option<HashMap<String, String>>,
    /// Per-frame size cap for inbound packets.
    pub max_frame_bytes: usize,
    pub fault: FaultConfig,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            retransmit_interval: Duration::from_secs(2),
            max_retries: 10,
            auth: None,
            max_frame_bytes: 1024 * 1024,
            fault: FaultConfig::default(),
        }
    }
}

/// Counters exposed for tests and the stats log line. All monotonic.
#[derive(Default, Debug)]
pub struct BrokerStats {
    pub connects: AtomicU64,
    pub auth_rejections: AtomicU64,
    pub publishes_received: AtomicU64,
    pub deliveries: AtomicU64,
    pub retransmissions: AtomicU64,
    pub abandoned_deliveries: AtomicU64,
    pub injected_publish_drops: AtomicU64,
    pub injected_puback_drops: AtomicU64,
    pub injected_connack_drops: AtomicU64,
}

impl BrokerStats {
    fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> String {
        format!(
            "connects={} auth_rejections={} publishes_received={} deliveries={} \
             retransmissions={} abandoned={} injected_drops={}/{}/{}",
            self.connects.load(Ordering::Relaxed),
            self.auth_rejections.load(Ordering::Relaxed),
            self.publishes_received.load(Ordering::Relaxed),
            self.deliveries.load(Ordering::Relaxed),
            self.retransmissions.load(Ordering::Relaxed),
            self.abandoned_deliveries.load(Ordering::Relaxed),
            self.injected_publish_drops.load(Ordering::Relaxed),
            self.injected_puback_drops.load(Ordering::Relaxed),
            self.injected_connack_drops.load(Ordering::Relaxed),
        )
    }
}

/// What the transport layer must do after feeding the core.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Send { conn: ConnId, packet: Packet },
    Close { conn: ConnId },
}

/// An unacknowledged QoS 1 delivery to one subscriber.
#[derive(Clone, Debug)]
struct Inflight {
    publish: Publish,
    retries: u32,
    next_retry_at: Instant,
}

struct Session {
    conn: ConnId,
    client_id: String,
    keep_alive: Duration,
    last_activity: Instant,
    subscriptions: Vec<(String, QoS)>,
    inflight: HashMap<u16, Inflight>,
    next_packet_id: u16,
}

impl Session {
    /// Allocates the next free packet id for an outbound QoS 1 delivery,
    /// wrapping within 1..=65535 and skipping ids still in flight.
    fn allocate_packet_id(&mut self) -> u16 {
        loop {
            let id = self.next_packet_id;
            self.next_packet_id = self.next_packet_id.checked_add(1).filter(|&n| n != 0).unwrap_or(1);
            if !self.inflight.contains_key(&id) {
                return id;
            }
        }
    }

    /// Best matching subscription QoS for `topic`, if any filter matches.
    fn match_qos(&self, topic_name: &str) -> Option<QoS> {
        self.subscriptions
            .iter()
            .filter(|(filter, _)| topic::matches(filter, topic_name))
            .map(|&(_, qos)| qos)
            .max()
    }
}

/// The deterministic broker state machine.
pub struct BrokerCore {
    config: BrokerConfig,
    /// Connections that have opened but not yet sent a valid CONNECT.
    handshaking: HashMap<ConnId, Instant>,
    sessions: HashMap<ConnId, Session>,
    by_client_id: HashMap<String, ConnId>,
    rng: ChaCha8Rng,
    stats: Arc<BrokerStats>,
}

impl BrokerCore {
    pub fn new(config: BrokerConfig) -> Result<BrokerCore, String> {
        config.fault.validate()?;
        if config.retransmit_interval.is_zero() {
            return Err("retransmit_interval must be positive".into());
        }
        let rng = ChaCha8Rng::seed_from_u64(config.fault.seed);
        Ok(BrokerCore {
            config,
            handshaking: HashMap::new(),
            sessions: HashMap::new(),
            by_client_id: HashMap::new(),
            rng,
            stats: Arc::new(BrokerStats::default()),
        })
    }

    pub fn stats(&self) -> Arc<BrokerStats> {
        Arc::clone(&self.stats)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    /// Registers a freshly accepted connection. The peer must send CONNECT
    /// first; anything else closes the connection.
    pub fn conn_opened(&mut self, conn: ConnId, now: Instant) {
        self.handshaking.insert(conn, now);
    }

    /// Tears down all state for a connection (socket closed or errored).
    pub fn conn_closed(&mut self, conn: ConnId) {
        self.handshaking.remove(&conn);
        if let Some(session) = self.sessions.remove(&conn) {
            log::info!(
                target: "vitalmq::broker",
                "event=session_closed client_id={} inflight={}",
                session.client_id,
                session.inflight.len()
            );
            if self.by_client_id.get(&session.client_id) == Some(&conn) {
                self.by_client_id.remove(&session.client_id);
            }
        }
    }

    fn inject(&mut self, probability: f64) -> bool {
        probability > 0.0 && self.rng.random::<f64>() < probability
    }

    /// Feeds one decoded packet from `conn` into the state machine.
    pub fn handle_packet(&mut self, conn: ConnId, packet: Packet, now: Instant) -> Vec<Action> {
        if let Some(session) = self.sessions.get_mut(&conn) {
            session.last_activity = now;
        }
        match packet {
            Packet::Connect(connect) => self.handle_connect(conn, connect, now),
            Packet::Publish(publish) => self.handle_publish(conn, publish, now),
            Packet::Puback { packet_id } => self.handle_puback(conn, packet_id),
            Packet::Subscribe(subscribe) => self.handle_subscribe(conn, subscribe),
            Packet::Pingreq => self.require_session(conn, |_, _| {
                vec![Action::Send {
                    conn,
                    packet: Packet::Pingresp,
                }]
            }),
            Packet::Disconnect => {
                log::info!(target: "vitalmq::broker", "event=disconnect conn={conn}");
                self.conn_closed(conn);
                vec![Action::Close { conn }]
            }
            // a client has no business sending server-side packets
            Packet::Connack(_) | Packet::Suback(_) | Packet::Pingresp => {
                log::warn!(
                    target: "vitalmq::broker",
                    "event=protocol_violation conn={conn} packet={}",
                    packet.kind()
                );
                self.conn_closed(conn);
                vec![Action::Close { conn }]
            }
        }
    }

    /// Runs `f` only when `conn` has completed its handshake.
    fn require_session<F>(&mut self, conn: ConnId, f: F) -> Vec<Action>
    where
        F: FnOnce(&mut Self, ConnId) -> Vec<Action>,
    {
        if self.sessions.contains_key(&conn) {
            f(self, conn)
        } else {
            log::warn!(
                target: "vitalmq::broker",
                "event=packet_before_connect conn={conn}"
            );
            self.handshaking.remove(&conn);
            vec![Action::Close { conn }]
        }
    }

    fn handle_connect(&mut self, conn: ConnId, connect: Connect, now: Instant) -> Vec<Action> {
        // a second CONNECT on a live session is a protocol violation (§3.1)
        if self.sessions.contains_key(&conn) {
            self.conn_closed(conn);
            return vec![Action::Close { conn }];
        }
        if self.handshaking.remove(&conn).is_none() {
            // unknown connection; nothing sensible to do
            return vec![Action::Close { conn }];
        }

        if connect.client_id.is_empty() {
            return self.refuse(conn, connect, connect_return::IDENTIFIER_REJECTED);
        }
        if let Some(code) = self.check_credentials(&connect) {
            return self.refuse(conn, connect, code);
        }

        let mut actions = Vec::new();
        // session takeover: a reconnecting client id evicts its old socket
        if let Some(&old_conn) = self.by_client_id.get(&connect.client_id) {
            log::info!(
                target: "vitalmq::broker",
                "event=session_takeover client_id={} old_conn={old_conn} new_conn={conn}",
                connect.client_id
            );
            self.conn_closed(old_conn);
            actions.push(Action::Close { conn: old_conn });
        }

        BrokerStats::bump(&self.stats.connects);
        log::info!(
            target: "vitalmq::broker",
            "event=connect conn={conn} client_id={} keep_alive_s={} clean_session={}",
            connect.client_id,
            connect.keep_alive_s,
            connect.clean_session
        );
        self.sessions.insert(
            conn,
            Session {
                conn,
                client_id: connect.client_id.clone(),
                keep_alive: Duration::from_secs(u64::from(connect.keep_alive_s)),
                last_activity: now,
                subscriptions: Vec::new(),
                inflight: HashMap::new(),
                next_packet_id: 1,
            },
        );
        self.by_client_id.insert(connect.client_id, conn);

        if self.inject(self.config.fault.drop_outbound_connack) {
            BrokerStats::bump(&self.stats.injected_connack_drops);
            log::warn!(
                target: "vitalmq::broker",
                "event=fault_injected kind=connack_drop conn={conn}"
            );
            return actions;
        }
        actions.push(Action::Send {
            conn,
            packet: Packet::Connack(Connack {
                session_present: false,
                return_code: connect_return::ACCEPTED,
            }),
        });
        actions
    }

    /// Returns the CONNACK code to refuse with, or None when credentials
    /// pass. With no allowlist configured every connection is accepted.
    fn check_credentials(&self, connect: &Connect) -> Option<u8> {
        let allowlist = self.config.auth.as_ref()?;
        let (Some(username), Some(password)) = (&connect.username, &connect.password) else {
            return Some(connect_return::NOT_AUTHORIZED);
        };
        let expected = allowlist.get(username);
        // the password field is binary on the wire; the allowlist is UTF-8
        if expected.map(String::as_bytes) == Some(password.as_slice()) {
            None
        } else {
            Some(connect_return::BAD_USERNAME_OR_PASSWORD)
        }
    }

    fn refuse(&mut self, conn: ConnId, connect: Connect, return_code: u8) -> Vec<Action> {
        BrokerStats::bump(&self.stats.auth_rejections);
        log::warn!(
            target: "vitalmq::broker",
            "event=connect_refused conn={conn} client_id={} return_code={return_code}",
            connect.client_id
        );
        vec![
            Action::Send {
                conn,
                packet: Packet::Connack(Connack {
                    session_present: false,
                    return_code,
                }),
            },
            Action::Close { conn },
        ]
    }

    fn handle_publish(&mut self, conn: ConnId, publish: Publish, now: Instant) -> Vec<Action> {
        self.require_session(conn, |core, conn| {
            if core.inject(core.config.fault.drop_inbound_publish) {
                BrokerStats::bump(&core.stats.injected_publish_drops);
                log::warn!(
                    target: "vitalmq::broker",
                    "event=fault_injected kind=publish_drop conn={conn} topic={}",
                    publish.topic
                );
                return Vec::new();
            }
            BrokerStats::bump(&core.stats.publishes_received);
            log::debug!(
                target: "vitalmq::broker",
                "event=publish conn={conn} topic={} qos={} bytes={}",
                publish.topic,
                publish.qos.bits(),
                publish.payload.len()
            );

            let mut actions = Vec::new();
            // ack the publisher first: receipt is independent of fanout
            if let (QoS::AtLeastOnce, Some(packet_id)) = (publish.qos, publish.packet_id) {
                actions.push(Action::Send {
                    conn,
                    packet: Packet::Puback { packet_id },
                });
            }
            actions.extend(core.fan_out(&publish, now));
            actions
        })
    }

    /// Delivers `publish` to every matching session at the effective QoS
    /// (the lower of publish QoS and subscription QoS).
    fn fan_out(&mut self, publish: &Publish, now: Instant) -> Vec<Action> {
        let mut actions = Vec::new();
        let targets: Vec<(ConnId, QoS)> = self
            .sessions
            .values()
            .filter_map(|s| s.match_qos(&publish.topic).map(|qos| (s.conn, qos)))
            .collect();
        for (conn, sub_qos) in targets {
            let effective_qos = publish.qos.min(sub_qos);
            let session = self.sessions.get_mut(&conn).expect("target session exists");
            let mut delivery = Publish {
                dup: false,
                qos: effective_qos,
                retain: false,
                topic: publish.topic.clone(),
                packet_id: None,
                payload: publish.payload.clone(),
            };
            if effective_qos == QoS::AtLeastOnce {
                let packet_id = session.allocate_packet_id();
                delivery.packet_id = Some(packet_id);
                session.inflight.insert(
                    packet_id,
                    Inflight {
                        publish: delivery.clone(),
                        retries: 0,
                        next_retry_at: now + self.config.retransmit_interval,
                    },
                );
            }
            BrokerStats::bump(&self.stats.deliveries);
            actions.push(Action::Send {
                conn,
                packet: Packet::Publish(delivery),
            });
        }
        actions
    }

    fn handle_puback(&mut self, conn: ConnId, packet_id: u16) -> Vec<Action> {
        self.require_session(conn, |core, conn| {
            if core.inject(core.config.fault.drop_inbound_puback) {
                BrokerStats::bump(&core.stats.injected_puback_drops);
                log::warn!(
                    target: "vitalmq::broker",
                    "event=fault_injected kind=puback_drop conn={conn} packet_id={packet_id}"
                );
                return Vec::new();
            }
            let session = core.sessions.get_mut(&conn).expect("session checked");
            if session.inflight.remove(&packet_id).is_none() {
                // duplicate or stale ack; harmless
                log::debug!(
                    target: "vitalmq::broker",
                    "event=stale_puback conn={conn} packet_id={packet_id}"
                );
            }
            Vec::new()
        })
    }

    fn handle_subscribe(&mut self, conn: ConnId, subscribe: Subscribe) -> Vec<Action> {
        self.require_session(conn, |core, conn| {
            let session = core.sessions.get_mut(&conn).expect("session checked");
            let mut return_codes = Vec::with_capacity(subscribe.filters.len());
            for (filter, qos) in subscribe.filters {
                // replace an existing identical filter (§3.8.4)
                session.subscriptions.retain(|(f, _)| *f != filter);
                log::info!(
                    target: "vitalmq::broker",
                    "event=subscribe client_id={} filter={} qos={}",
                    session.client_id,
                    filter,
                    qos.bits()
                );
                session.subscriptions.push((filter, qos));
                return_codes.push(match qos {
                    QoS::AtMostOnce => SubackCode::GrantedQos0,
                    QoS::AtLeastOnce => SubackCode::GrantedQos1,
                });
            }
            vec![Action::Send {
                conn,
                packet: Packet::Suback(Suback {
                    packet_id: subscribe.packet_id,
                    return_codes,
                }),
            }]
        })
    }

    /// Drives time-based behavior: QoS 1 retransmission and keep-alive
    /// expiry. The transport calls this periodically with the current time;
    /// tests call it with fabricated instants.
    pub fn tick(&mut self, now: Instant) -> Vec<Action> {
        let mut actions = Vec::new();
        let mut expired_conns = Vec::new();

        for session in self.sessions.values_mut() {
            // §3.1.2.10: disconnect after 1.5x the keep-alive with no packets
            if !session.keep_alive.is_zero() {
                let deadline = session.last_activity + session.keep_alive * 3 / 2;
                if now > deadline {
                    log::warn!(
                        target: "vitalmq::broker",
                        "event=keep_alive_expired client_id={}",
                        session.client_id
                    );
                    expired_conns.push(session.conn);
                    continue;
                }
            }

            let mut abandoned = Vec::new();
            for (&packet_id, inflight) in session.inflight.iter_mut() {
                if inflight.next_retry_at > now {
                    continue;
                }
                if inflight.retries >= self.config.max_retries {
                    abandoned.push(packet_id);
                    continue;
                }
                inflight.retries += 1;
                inflight.next_retry_at = now + self.config.retransmit_interval;
                let mut resend = inflight.publish.clone();
                resend.dup = true;
                log::info!(
                    target: "vitalmq::broker",
                    "event=retransmit client_id={} packet_id={packet_id} attempt={}",
                    session.client_id,
                    inflight.retries
                );
                BrokerStats::bump(&self.stats.retransmissions);
                actions.push(Action::Send {
                    conn: session.conn,
                    packet: Packet::Publish(resend),
                });
            }
            for packet_id in abandoned {
                session.inflight.remove(&packet_id);
                BrokerStats::bump(&self.stats.abandoned_deliveries);
                log::warn!(
                    target: "vitalmq::broker",
                    "event=delivery_abandoned client_id={} packet_id={packet_id} after_retries={}",
                    session.client_id,
                    self.config.max_retries
                );
            }
        }

        for conn in expired_conns {
            self.conn_closed(conn);
            actions.push(Action::Close { conn });
        }
        actions
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::Ordering;

    fn connect_packet(client_id: &str) -> Packet {
        Packet::Connect(Connect {
            client_id: client_id.into(),
            clean_session: true,
            keep_alive_s: 0,
            username: None,
            password: None,
        })
    }

    fn subscribe_packet(id: u16, filter: &str, qos: QoS) -> Packet {
        Packet::Subscribe(Subscribe {
            packet_id: id,
            filters: vec![(filter.into(), qos)],
        })
    }

    fn publish_packet(topic: &str, qos: QoS, packet_id: Option<u16>, payload: &[u8]) -> Packet {
        Packet::Publish(Publish {
            dup: false,
            qos,
            retain: false,
            topic: topic.into(),
            packet_id,
            payload: payload.to_vec(),
        })
    }

    fn core() -> BrokerCore {
        BrokerCore::new(BrokerConfig::default()).unwrap()
    }

    /// Convenience: open + connect a client, asserting the CONNACK.
    fn join(core: &mut BrokerCore, conn: ConnId, client_id: &str, now: Instant) {
        core.conn_opened(conn, now);
        let actions = core.handle_packet(conn, connect_packet(client_id), now);
        assert_eq!(
            actions,
            vec![Action::Send {
                conn,
                packet: Packet::Connack(Connack {
                    session_present: false,
                    return_code: connect_return::ACCEPTED,
                }),
            }]
        );
    }

    fn sent_publishes(actions: &[Action]) -> Vec<(ConnId, Publish)> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Send {
                    conn,
                    packet: Packet::Publish(p),
                } => Some((*conn, p.clone())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn first_packet_must_be_connect() {
        let mut core = core();
        let now = Instant::now();
        core.conn_opened(1, now);
        let actions = core.handle_packet(1, Packet::Pingreq, now);
        assert_eq!(actions, vec![Action::Close { conn: 1 }]);
    }

    #[test]
    fn qos1_publish_is_acked_and_fanned_out() {
        let mut core = core();
        let now = Instant::now();
        join(&mut core, 1, "publisher", now);
        join(&mut core, 2, "subscriber", now);
        core.handle_packet(2, subscribe_packet(1, "vitals/#", QoS::AtLeastOnce), now);

        let actions = core.handle_packet(
            1,
            publish_packet("vitals/hr", QoS::AtLeastOnce, Some(42), b"72"),
            now,
        );
        // publisher gets its PUBACK with the original id
        assert!(actions.contains(&Action::Send {
            conn: 1,
            packet: Packet::Puback { packet_id: 42 },
        }));
        // subscriber gets the message with a broker-assigned id
        let deliveries = sent_publishes(&actions);
        assert_eq!(deliveries.len(), 1);
        let (conn, delivery) = &deliveries[0];
        assert_eq!(*conn, 2);
        assert_eq!(delivery.topic, "vitals/hr");
        assert_eq!(delivery.payload, b"72");
        assert_eq!(delivery.qos, QoS::AtLeastOnce);
        assert!(!delivery.dup);
        assert!(delivery.packet_id.is_some());
    }

    #[test]
    fn subscription_qos_caps_delivery_qos() {
        let mut core = core();
        let now = Instant::now();
        join(&mut core, 1, "publisher", now);
        join(&mut core, 2, "subscriber", now);
        core.handle_packet(2, subscribe_packet(1, "t", QoS::AtMostOnce), now);

        let actions = core.handle_packet(
            1,
            publish_packet("t", QoS::AtLeastOnce, Some(1), b"x"),
            now,
        );
        let deliveries = sent_publishes(&actions);
        assert_eq!(deliveries[0].1.qos, QoS::AtMostOnce);
        assert_eq!(deliveries[0].1.packet_id, None);
        // nothing to retransmit for a QoS 0 delivery
        assert!(core.tick(now + Duration::from_secs(60)).is_empty());
    }

    #[test]
    fn unacked_delivery_is_retransmitted_with_dup_until_acked() {
        let mut core = core();
        let t0 = Instant::now();
        join(&mut core, 1, "publisher", t0);
        join(&mut core, 2, "subscriber", t0);
        core.handle_packet(2, subscribe_packet(1, "t", QoS::AtLeastOnce), t0);
        let actions =
            core.handle_packet(1, publish_packet("t", QoS::AtLeastOnce, Some(9), b"m"), t0);
        let packet_id = sent_publishes(&actions)[0].1.packet_id.unwrap();

        // before the interval elapses: silence
        assert!(core.tick(t0 + Duration::from_millis(1999)).is_empty());

        // after: a DUP resend
        let resends = core.tick(t0 + Duration::from_millis(2001));
        let resent = sent_publishes(&resends);
        assert_eq!(resent.len(), 1);
        assert!(resent[0].1.dup);
        assert_eq!(resent[0].1.packet_id, Some(packet_id));

        // ack it; no further resends ever
        core.handle_packet(2, Packet::Puback { packet_id }, t0 + Duration::from_secs(3));
        assert!(core.tick(t0 + Duration::from_secs(60)).is_empty());
    }

    #[test]
    fn delivery_is_abandoned_after_max_retries() {
        let mut core = BrokerCore::new(BrokerConfig {
            max_retries: 3,
            ..BrokerConfig::default()
        })
        .unwrap();
        let stats = core.stats();
        let t0 = Instant::now();
        join(&mut core, 1, "publisher", t0);
        join(&mut core, 2, "subscriber", t0);
        core.handle_packet(2, subscribe_packet(1, "t", QoS::AtLeastOnce), t0);
        core.handle_packet(1, publish_packet("t", QoS::AtLeastOnce, Some(9), b"m"), t0);

        let mut resends = 0;
        let mut now = t0;
        for _ in 0..20 {
            now += Duration::from_secs(3);
            resends += sent_publishes(&core.tick(now)).len();
        }
        assert_eq!(resends, 3);
        assert_eq!(stats.abandoned_deliveries.load(Ordering::Relaxed), 1);
        assert_eq!(stats.retransmissions.load(Ordering::Relaxed), 3);
    }

    #[test]
    fn duplicate_puback_is_harmless() {
        let mut core = core();
        let now = Instant::now();
        join(&mut core, 1, "publisher", now);
        join(&mut core, 2, "subscriber", now);
        core.handle_packet(2, subscribe_packet(1, "t", QoS::AtLeastOnce), now);
        let actions =
            core.handle_packet(1, publish_packet("t", QoS::AtLeastOnce, Some(9), b"m"), now);
        let packet_id = sent_publishes(&actions)[0].1.packet_id.unwrap();
        assert!(core.handle_packet(2, Packet::Puback { packet_id }, now).is_empty());
        assert!(core.handle_packet(2, Packet::Puback { packet_id }, now).is_empty());
    }

    #[test]
    fn no_cross_topic_delivery() {
        let mut core = core();
        let now = Instant::now();
        join(&mut core, 1, "publisher", now);
        join(&mut core, 2, "hr-listener", now);
        join(&mut core, 3, "spo2-listener", now);
        core.handle_packet(2, subscribe_packet(1, "vitals/hr", QoS::AtMostOnce), now);
        core.handle_packet(3, subscribe_packet(1, "vitals/spo2", QoS::AtMostOnce), now);

        let actions =
            core.handle_packet(1, publish_packet("vitals/hr", QoS::AtMostOnce, None, b"x"), now);
        let deliveries = sent_publishes(&actions);
        assert_eq!(deliveries.len(), 1);
        assert_eq!(deliveries[0].0, 2);
    }

    #[test]
    fn overlapping_filters_deliver_once_at_highest_qos() {
        let mut core = core();
        let now = Instant::now();
        join(&mut core, 1, "publisher", now);
        join(&mut core, 2, "subscriber", now);
        core.handle_packet(2, subscribe_packet(1, "vitals/#", QoS::AtMostOnce), now);
        core.handle_packet(2, subscribe_packet(2, "vitals/+", QoS::AtLeastOnce), now);

        let actions = core.handle_packet(
            1,
            publish_packet("vitals/hr", QoS::AtLeastOnce, Some(5), b"x"),
            now,
        );
        let deliveries = sent_publishes(&actions);
        assert_eq!(deliveries.len(), 1, "one delivery per session");
        assert_eq!(deliveries[0].1.qos, QoS::AtLeastOnce);
    }

    #[test]
    fn resubscribing_the_same_filter_replaces_it() {
        let mut core = core();
        let now = Instant::now();
        join(&mut core, 1, "publisher", now);
        join(&mut core, 2, "subscriber", now);
        core.handle_packet(2, subscribe_packet(1, "t", QoS::AtLeastOnce), now);
        core.handle_packet(2, subscribe_packet(2, "t", QoS::AtMostOnce), now);

        let actions =
            core.handle_packet(1, publish_packet("t", QoS::AtLeastOnce, Some(5), b"x"), now);
        let deliveries = sent_publishes(&actions);
        assert_eq!(deliveries.len(), 1);
        assert_eq!(deliveries[0].1.qos, QoS::AtMostOnce, "downgraded by replacement");
    }

    #[test]
    fn session_takeover_closes_the_old_connection() {
        let mut core = core();
        let now = Instant::now();
        join(&mut core, 1, "sensor", now);
        core.conn_opened(2, now);
        let actions = core.handle_packet(2, connect_packet("sensor"), now);
        assert!(actions.contains(&Action::Close { conn: 1 }));
        assert!(actions.iter().any(|a| matches!(
            a,
            Action::Send {
                conn: 2,
                packet: Packet::Connack(Connack { return_code: 0, .. }),
            }
        )));
        assert_eq!(core.session_count(), 1);
    }

    #[test]
    fn empty_client_id_is_rejected() {
        let mut core = core();
        let now = Instant::now();
        core.conn_opened(1, now);
        let actions = core.handle_packet(1, connect_packet(""), now);
        assert_eq!(
            actions[0],
            Action::Send {
                conn: 1,
                packet: Packet::Connack(Connack {
                    session_present: false,
                    return_code: connect_return::IDENTIFIER_REJECTED,
                }),
            }
        );
        assert_eq!(actions[1], Action::Close { conn: 1 });
    }

    #[test]
    fn credential_allowlist_gates_connections() {
        let mut auth = HashMap::new();
        auth.insert("nurse".to_string(), "station4".to_string());
        let mut core = BrokerCore::new(BrokerConfig {
            auth: Some(auth),
            ..BrokerConfig::default()
        })
        .unwrap();
        let now = Instant::now();

        let attempt = |core: &mut BrokerCore,
                       conn: ConnId,
                       username: Option<&str>,
                       password: Option<&[u8]>| {
            core.conn_opened(conn, now);
            let actions = core.handle_packet(
                conn,
                Packet::Connect(Connect {
                    client_id: format!("c{conn}"),
                    clean_session: true,
                    keep_alive_s: 0,
                    username: username.map(String::from),
                    password: password.map(Vec::from),
                }),
                now,
            );
            match &actions[0] {
                Action::Send {
                    packet: Packet::Connack(ack),
                    ..
                } => ack.return_code,
                other => panic!("expected CONNACK, got {other:?}"),
            }
        };

        assert_eq!(attempt(&mut core, 1, None, None), connect_return::NOT_AUTHORIZED);
        assert_eq!(
            attempt(&mut core, 2, Some("nurse"), Some(b"wrong")),
            connect_return::BAD_USERNAME_OR_PASSWORD
        );
        assert_eq!(
            attempt(&mut core, 3, Some("intruder"), Some(b"station4")),
            connect_return::BAD_USERNAME_OR_PASSWORD
        );
        assert_eq!(
            attempt(&mut core, 4, Some("nurse"), Some(b"station4")),
            connect_return::ACCEPTED
        );
    }

    #[test]
    fn keep_alive_expiry_closes_the_session() {
        let mut core = core();
        let t0 = Instant::now();
        core.conn_opened(1, t0);
        core.handle_packet(
            1,
            Packet::Connect(Connect {
                client_id: "sensor".into(),
                clean_session: true,
                keep_alive_s: 10,
                username: None,
                password: None,
            }),
            t0,
        );
        // within 1.5x keep-alive: alive
        assert!(core.tick(t0 + Duration::from_secs(14)).is_empty());
        // a PINGREQ refreshes the deadline
        core.handle_packet(1, Packet::Pingreq, t0 + Duration::from_secs(14));
        assert!(core.tick(t0 + Duration::from_secs(28)).is_empty());
        // silence past the deadline: closed
        let actions = core.tick(t0 + Duration::from_secs(30));
        assert_eq!(actions, vec![Action::Close { conn: 1 }]);
        assert_eq!(core.session_count(), 0);
    }

    #[test]
    fn injected_publish_drop_suppresses_ack_and_fanout() {
        let mut core = BrokerCore::new(BrokerConfig {
            fault: FaultConfig {
                drop_inbound_publish: 1.0,
                seed: 7,
                ..FaultConfig::default()
            },
            ..BrokerConfig::default()
        })
        .unwrap();
        let stats = core.stats();
        let now = Instant::now();
        join(&mut core, 1, "publisher", now);
        join(&mut core, 2, "subscriber", now);
        core.handle_packet(2, subscribe_packet(1, "t", QoS::AtLeastOnce), now);
        let actions =
            core.handle_packet(1, publish_packet("t", QoS::AtLeastOnce, Some(3), b"m"), now);
        assert!(actions.is_empty(), "dropped publish must produce nothing");
        assert_eq!(stats.injected_publish_drops.load(Ordering::Relaxed), 1);
        assert_eq!(stats.publishes_received.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn injected_puback_drop_causes_redelivery() {
        let mut core = BrokerCore::new(BrokerConfig {
            fault: FaultConfig {
                drop_inbound_puback: 1.0,
                seed: 7,
                ..FaultConfig::default()
            },
            ..BrokerConfig::default()
        })
        .unwrap();
        let t0 = Instant::now();
        join(&mut core, 1, "publisher", t0);
        join(&mut core, 2, "subscriber", t0);
        core.handle_packet(2, subscribe_packet(1, "t", QoS::AtLeastOnce), t0);
        let actions =
            core.handle_packet(1, publish_packet("t", QoS::AtLeastOnce, Some(9), b"m"), t0);
        let packet_id = sent_publishes(&actions)[0].1.packet_id.unwrap();

        // the subscriber acks, but the broker never sees it
        core.handle_packet(2, Packet::Puback { packet_id }, t0);
        let resends = core.tick(t0 + Duration::from_secs(3));
        assert_eq!(sent_publishes(&resends).len(), 1, "dropped ack forces a resend");
    }

    #[test]
    fn fault_pattern_is_reproducible_for_a_seed() {
        let run = |seed: u64| -> Vec<bool> {
            let mut core = BrokerCore::new(BrokerConfig {
                fault: FaultConfig {
                    drop_inbound_publish: 0.5,
                    seed,
                    ..FaultConfig::default()
                },
                ..BrokerConfig::default()
            })
            .unwrap();
            let now = Instant::now();
            join(&mut core, 1, "p", now);
            // self-subscribe so a surviving publish produces a delivery and
            // a dropped one produces nothing
            core.handle_packet(1, subscribe_packet(1, "t", QoS::AtMostOnce), now);
            (0..64)
                .map(|_| {
                    core.handle_packet(1, publish_packet("t", QoS::AtMostOnce, None, b"x"), now)
                        .is_empty()
                })
                .collect()
        };
        assert_eq!(run(1234), run(1234));
        assert_ne!(run(1234), run(5678), "different seeds give different patterns");
    }

    #[test]
    fn rejects_invalid_fault_probabilities() {
        let bad = BrokerConfig {
            fault: FaultConfig {
                drop_inbound_puback: 1.5,
                ..FaultConfig::default()
            },
            ..BrokerConfig::default()
        };
        assert!(BrokerCore::new(bad).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(200))]

        /// Fanout must agree with a brute-force check of every session's
        /// filters, and only ever target live sessions.
        #[test]
        fn fanout_targets_exactly_the_matching_sessions(
            filters in proptest::collection::vec(
                prop_oneof_filters(),
                1..6,
            ),
            topic in "[a-c]{1,2}(/[a-c]{1,2}){0,3}",
        ) {
            let mut core = core();
            let now = Instant::now();
            join(&mut core, 0, "publisher", now);
            for (i, filter) in filters.iter().enumerate() {
                let conn = (i + 1) as ConnId;
                join(&mut core, conn, &format!("sub{i}"), now);
                core.handle_packet(conn, subscribe_packet(1, filter, QoS::AtMostOnce), now);
            }
            let actions = core.handle_packet(
                0,
                publish_packet(&topic, QoS::AtMostOnce, None, b"x"),
                now,
            );
            let mut delivered: Vec<ConnId> =
                sent_publishes(&actions).iter().map(|(c, _)| *c).collect();
            delivered.sort_unstable();
            let mut expected: Vec<ConnId> = filters
                .iter()
                .enumerate()
                .filter(|(_, f)| crate::mqtt::topic::matches(f, &topic))
                .map(|(i, _)| (i + 1) as ConnId)
                .collect();
            expected.sort_unstable();
            proptest::prop_assert_eq!(delivered, expected);
        }
    }

    fn prop_oneof_filters() -> impl proptest::strategy::Strategy<Value = String> {
        use proptest::prelude::*;
        prop_oneof![
            Just("#".to_string()),
            "[a-c]{1,2}",
            "[a-c]{1,2}/\\+",
            "[a-c]{1,2}/[a-c]{1,2}",
            "[a-c]{1,2}/#",
            "\\+/[a-c]{1,2}",
        ]
    }
}
