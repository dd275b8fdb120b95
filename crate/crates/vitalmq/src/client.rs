//! Synchronous MQTT client with payload-level encryption.
//!
//! Publishing seals the payload into a self-describing envelope before it
//! leaves the process; subscribing opens envelopes and only acknowledges
//! (PUBACK) messages that authenticate, so a tampered QoS 1 message is
//! redelivered by the broker rather than silently lost.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::aead::{CipherId, SealError, SecurityContext};
use crate::mqtt::{
    connect_return, encode_packet, topic, Connack, Connect, FrameBuffer, Packet, Publish, QoS,
    Suback, SubackCode, Subscribe,
};
use crate::policy::{self, PolicyConfig};

/// How the client picks a cipher for each publish.
#[derive(Clone, Debug)]
pub enum CipherChoice {
    /// Always the same cipher.
    Fixed(CipherId),
    /// Size-based selection (see [`policy::select_cipher`]).
    Adaptive(PolicyConfig),
}

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub broker_addr: String,
    pub client_id: String,
    /// 0 disables keep-alive pings.
    pub keep_alive_s: u16,
    pub qos: QoS,
    pub cipher: CipherChoice,
    /// Required for any cipher other than `None` unless `fixed_vectors`.
    pub key: Option<[u8; 16]>,
    /// Reproduce the original evaluation's constant key/nonce/AD vectors.
    pub fixed_vectors: bool,
    /// Deliver incoming unencrypted envelopes instead of rejecting them as a
    /// downgrade. Implied when this client itself publishes plaintext
    /// (`Fixed(None)` or an adaptive policy with `allow_plaintext`).
    pub accept_plaintext: bool,
    pub username: Option<String>,
    pub password: Option<String>,
    /// Wait this long for CONNACK, SUBACK, or PUBACK.
    pub ack_timeout: Duration,
    /// Resend an unacked QoS 1 publish this many times before giving up.
    pub max_publish_retries: u32,
    pub connect_timeout: Duration,
    pub max_frame_bytes: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            broker_addr: "127.0.0.1:1883".into(),
            client_id: String::new(),
            keep_alive_s: 30,
            qos: QoS::AtLeastOnce,
            cipher: CipherChoice::Fixed(CipherId::Ascon128),
            key: None,
            fixed_vectors: false,
            accept_plaintext: false,
            username: None,
            password: None,
            ack_timeout: Duration::from_secs(2),
            max_publish_retries: 10,
            connect_timeout: Duration::from_secs(5),
            max_frame_bytes: 1024 * 1024,
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("connection failed: {0}")]
    Connect(#[source] std::io::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("broker closed the connection")]
    ConnectionClosed,
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("broker refused the connection with return code {code} ({reason})")]
    Rejected { code: u8, reason: &'static str },
    #[error("no PUBACK after {attempts} attempts")]
    AckTimeout { attempts: u32 },
    #[error("subscription to {filter:?} was refused")]
    SubscriptionDenied { filter: String },
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
    #[error("invalid topic filter {0:?}")]
    InvalidFilter(String),
    #[error(transparent)]
    Seal(#[from] SealError),
    #[error("{0} requires a 16-byte key (provide one or enable fixed vectors)")]
    MissingKey(CipherId),
    #[error("encode error: {0}")]
    Encode(#[from] crate::mqtt::EncodeError),
}

fn reject_reason(code: u8) -> &'static str {
    match code {
        connect_return::UNACCEPTABLE_PROTOCOL_VERSION => "unacceptable protocol version",
        connect_return::IDENTIFIER_REJECTED => "identifier rejected",
        connect_return::SERVER_UNAVAILABLE => "server unavailable",
        connect_return::BAD_USERNAME_OR_PASSWORD => "bad username or password",
        connect_return::NOT_AUTHORIZED => "not authorized",
        _ => "unknown",
    }
}

/// A message that decoded and authenticated successfully.
#[derive(Clone, Debug)]
pub struct ReceivedMessage {
    pub topic: String,
    pub plaintext: Vec<u8>,
    pub cipher: CipherId,
    pub dup: bool,
    /// Monotonic receive timestamp, taken after decryption succeeds.
    pub received_at: Instant,
}

/// Outcome of a successful publish.
#[derive(Clone, Copy, Debug)]
pub struct PublishReceipt {
    pub cipher: CipherId,
    pub qos: QoS,
    pub packet_id: Option<u16>,
    /// Resends that were needed before the PUBACK arrived (0 = first try).
    pub retries: u32,
    pub sealed_bytes: usize,
}

type Subscriber = Box<dyn FnMut(ReceivedMessage) + Send>;

struct Shared {
    // writes are short and framed, so a plain mutex around the socket works
    writer: Mutex<TcpStream>,
    ctx: Mutex<SecurityContext>,
    subscriptions: Mutex<Vec<(String, Subscriber)>>,
    puback_waiters: Mutex<HashMap<u16, SyncSender<()>>>,
    suback_waiters: Mutex<HashMap<u16, SyncSender<Suback>>>,
    auth_failures: AtomicU64,
    decode_failures: AtomicU64,
    closed: AtomicBool,
}

impl Shared {
    fn send_packet(&self, packet: &Packet) -> Result<(), ClientError> {
        let frame = encode_packet(packet)?;
        let mut writer = self.writer.lock().unwrap();
        writer.write_all(&frame).map_err(ClientError::Io)
    }
}

/// A connected client. Cloneable handles are not provided: one owner drives
/// publishes, while received messages arrive on subscriber callbacks or
/// channels from the reader thread.
pub struct Client {
    shared: Arc<Shared>,
    config: ClientConfig,
    next_packet_id: u16,
    reader_thread: Option<std::thread::JoinHandle<()>>,
    pinger_thread: Option<std::thread::JoinHandle<()>>,
}

impl Client {
    /// Connects, performs the MQTT handshake, and spawns the reader (and,
    /// with a non-zero keep-alive, pinger) threads.
    pub fn connect(config: ClientConfig) -> Result<Client, ClientError> {
        let ctx = match (&config.fixed_vectors, config.key) {
            (true, _) => SecurityContext::fixed_vectors(),
            (false, Some(key)) => SecurityContext::new(key),
            (false, None) => {
                // only acceptable when every publish is plaintext
                match &config.cipher {
                    CipherChoice::Fixed(CipherId::None) => SecurityContext::new([0u8; 16]),
                    CipherChoice::Fixed(c) => return Err(ClientError::MissingKey(*c)),
                    CipherChoice::Adaptive(_) => {
                        return Err(ClientError::MissingKey(CipherId::Ascon128))
                    }
                }
            }
        };
        // A client that publishes plaintext must also be willing to receive
        // it; everyone else keeps downgrade protection on unless asked.
        let accept_plaintext = config.accept_plaintext
            || match &config.cipher {
                CipherChoice::Fixed(CipherId::None) => true,
                CipherChoice::Fixed(_) => false,
                CipherChoice::Adaptive(policy) => policy.allow_plaintext,
            };
        let ctx = ctx.accept_plaintext(accept_plaintext);
        if let CipherChoice::Adaptive(policy) = &config.cipher {
            policy
                .validate()
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
        }

        let addr = config
            .broker_addr
            .to_socket_addrs()
            .map_err(ClientError::Connect)?
            .next()
            .ok_or_else(|| {
                ClientError::Connect(std::io::Error::new(
                    std::io::ErrorKind::AddrNotAvailable,
                    "address resolved to nothing",
                ))
            })?;
        let stream =
            TcpStream::connect_timeout(&addr, config.connect_timeout).map_err(ClientError::Connect)?;
        stream.set_nodelay(true)?;

        let shared = Arc::new(Shared {
            writer: Mutex::new(stream.try_clone()?),
            ctx: Mutex::new(ctx),
            subscriptions: Mutex::new(Vec::new()),
            puback_waiters: Mutex::new(HashMap::new()),
            suback_waiters: Mutex::new(HashMap::new()),
            auth_failures: AtomicU64::new(0),
            decode_failures: AtomicU64::new(0),
            closed: AtomicBool::new(false),
        });

        shared.send_packet(&Packet::Connect(Connect {
            client_id: config.client_id.clone(),
            clean_session: true,
            keep_alive_s: config.keep_alive_s,
            username: config.username.clone(),
            password: config.password.as_ref().map(|p| p.as_bytes().to_vec()),
        }))?;

        // read the CONNACK synchronously before handing the socket to the
        // reader thread
        let connack = read_connack(&stream, config.ack_timeout, config.max_frame_bytes)?;
        if connack.return_code != connect_return::ACCEPTED {
            return Err(ClientError::Rejected {
                code: connack.return_code,
                reason: reject_reason(connack.return_code),
            });
        }
        log::info!(
            target: "vitalmq::client",
            "event=connected client_id={} broker={}",
            config.client_id,
            config.broker_addr
        );

        let reader_thread = {
            let shared = Arc::clone(&shared);
            let max_frame = config.max_frame_bytes;
            let client_id = config.client_id.clone();
            std::thread::Builder::new()
                .name(format!("mq-client-read-{client_id}"))
                .spawn(move || reader_loop(stream, &shared, max_frame))?
        };

        let pinger_thread = if config.keep_alive_s > 0 {
            let shared = Arc::clone(&shared);
            // ping at half the keep-alive, polling the closed flag often
            // enough that teardown is prompt
            let period = Duration::from_secs(u64::from(config.keep_alive_s)) / 2;
            Some(
                std::thread::Builder::new()
                    .name("mq-client-ping".into())
                    .spawn(move || {
                        let mut last_ping = Instant::now();
                        while !shared.closed.load(Ordering::Relaxed) {
                            std::thread::sleep(Duration::from_millis(50).min(period));
                            if last_ping.elapsed() >= period {
                                if shared.send_packet(&Packet::Pingreq).is_err() {
                                    break;
                                }
                                last_ping = Instant::now();
                            }
                        }
                    })?,
            )
        } else {
            None
        };

        Ok(Client {
            shared,
            config,
            next_packet_id: 1,
            reader_thread: Some(reader_thread),
            pinger_thread,
        })
    }

    fn allocate_packet_id(&mut self) -> u16 {
        let id = self.next_packet_id;
        self.next_packet_id = self.next_packet_id.checked_add(1).filter(|&n| n != 0).unwrap_or(1);
        id
    }

    /// Count of received messages that failed authentication or could not
    /// be decoded (those are never delivered and never acked).
    pub fn auth_failures(&self) -> u64 {
        self.shared.auth_failures.load(Ordering::Relaxed)
            + self.shared.decode_failures.load(Ordering::Relaxed)
    }

    /// Messages sealed so far by this client's security context.
    pub fn messages_sealed(&self) -> u128 {
        self.shared.ctx.lock().unwrap().messages_sealed()
    }

    /// Seals `plaintext` with the configured cipher choice and publishes it
    /// at the configured QoS.
    pub fn publish_secure(
        &mut self,
        topic_name: &str,
        plaintext: &[u8],
    ) -> Result<PublishReceipt, ClientError> {
        let cipher = match &self.config.cipher {
            CipherChoice::Fixed(c) => *c,
            CipherChoice::Adaptive(policy) => {
                let decision = policy::select_cipher(plaintext.len(), policy);
                log::debug!(
                    target: "vitalmq::client",
                    "event=cipher_selected cipher={} reason={:?} bytes={}",
                    decision.cipher,
                    decision.reason,
                    plaintext.len()
                );
                decision.cipher
            }
        };
        self.publish_with_cipher(topic_name, plaintext, cipher)
    }

    /// Like [`Client::publish_secure`] with an explicit cipher (used by the
    /// benchmark harness to sweep ciphers over one connection).
    pub fn publish_with_cipher(
        &mut self,
        topic_name: &str,
        plaintext: &[u8],
        cipher: CipherId,
    ) -> Result<PublishReceipt, ClientError> {
        if !topic::valid_topic(topic_name) {
            return Err(ClientError::InvalidTopic(topic_name.into()));
        }
        let payload = self
            .shared
            .ctx
            .lock()
            .unwrap()
            .seal_bytes(cipher, topic_name, plaintext)?;
        let sealed_bytes = payload.len();
        let qos = self.config.qos;

        match qos {
            QoS::AtMostOnce => {
                self.shared.send_packet(&Packet::Publish(Publish {
                    dup: false,
                    qos,
                    retain: false,
                    topic: topic_name.into(),
                    packet_id: None,
                    payload,
                }))?;
                Ok(PublishReceipt {
                    cipher,
                    qos,
                    packet_id: None,
                    retries: 0,
                    sealed_bytes,
                })
            }
            QoS::AtLeastOnce => {
                let packet_id = self.allocate_packet_id();
                let (tx, rx) = sync_channel(1);
                self.shared.puback_waiters.lock().unwrap().insert(packet_id, tx);
                let result = self.publish_acked(topic_name, payload, packet_id, &rx);
                self.shared.puback_waiters.lock().unwrap().remove(&packet_id);
                result.map(|retries| PublishReceipt {
                    cipher,
                    qos,
                    packet_id: Some(packet_id),
                    retries,
                    sealed_bytes,
                })
            }
        }
    }

    /// Sends a QoS 1 publish and waits for its PUBACK, resending with DUP on
    /// timeout. Returns the number of resends used.
    fn publish_acked(
        &self,
        topic_name: &str,
        payload: Vec<u8>,
        packet_id: u16,
        rx: &Receiver<()>,
    ) -> Result<u32, ClientError> {
        let attempts = self.config.max_publish_retries + 1;
        for attempt in 0..attempts {
            self.shared.send_packet(&Packet::Publish(Publish {
                dup: attempt > 0,
                qos: QoS::AtLeastOnce,
                retain: false,
                topic: topic_name.into(),
                packet_id: Some(packet_id),
                payload: payload.clone(),
            }))?;
            match rx.recv_timeout(self.config.ack_timeout) {
                Ok(()) => {
                    if attempt > 0 {
                        log::info!(
                            target: "vitalmq::client",
                            "event=publish_recovered packet_id={packet_id} retries={attempt}"
                        );
                    }
                    return Ok(attempt);
                }
                Err(std::sync::mpsc::RecvTimeoutError::Timeout) => {
                    log::warn!(
                        target: "vitalmq::client",
                        "event=puback_timeout packet_id={packet_id} attempt={}",
                        attempt + 1
                    );
                }
                Err(std::sync::mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(ClientError::ConnectionClosed);
                }
            }
        }
        Err(ClientError::AckTimeout { attempts })
    }

    /// Subscribes `filter` and invokes `callback` for every authenticated
    /// message whose topic matches. Returns the granted QoS.
    pub fn subscribe_secure<F>(&mut self, filter: &str, callback: F) -> Result<QoS, ClientError>
    where
        F: FnMut(ReceivedMessage) + Send + 'static,
    {
        if !topic::valid_filter(filter) {
            return Err(ClientError::InvalidFilter(filter.into()));
        }
        let packet_id = self.allocate_packet_id();
        let (tx, rx) = sync_channel(1);
        self.shared.suback_waiters.lock().unwrap().insert(packet_id, tx);
        self.shared.send_packet(&Packet::Subscribe(Subscribe {
            packet_id,
            filters: vec![(filter.into(), self.config.qos)],
        }))?;
        let suback = rx
            .recv_timeout(self.config.ack_timeout)
            .map_err(|_| ClientError::Timeout("SUBACK"));
        self.shared.suback_waiters.lock().unwrap().remove(&packet_id);
        let suback = suback?;

        let granted = match suback.return_codes.first() {
            Some(SubackCode::GrantedQos0) => QoS::AtMostOnce,
            Some(SubackCode::GrantedQos1) => QoS::AtLeastOnce,
            _ => {
                return Err(ClientError::SubscriptionDenied {
                    filter: filter.into(),
                })
            }
        };
        self.shared
            .subscriptions
            .lock()
            .unwrap()
            .push((filter.into(), Box::new(callback)));
        log::info!(
            target: "vitalmq::client",
            "event=subscribed filter={filter} granted_qos={}",
            granted.bits()
        );
        Ok(granted)
    }

    /// Channel-based subscription: messages arrive on the returned receiver.
    /// The channel holds up to `buffer` undelivered messages; beyond that,
    /// messages are dropped with a warning (receive loops should keep up).
    pub fn subscribe_channel(
        &mut self,
        filter: &str,
        buffer: usize,
    ) -> Result<(QoS, Receiver<ReceivedMessage>), ClientError> {
        let (tx, rx) = sync_channel(buffer);
        let granted = self.subscribe_secure(filter, move |message| {
            match tx.try_send(message) {
                Ok(()) => {}
                Err(TrySendError::Full(m)) => {
                    log::warn!(
                        target: "vitalmq::client",
                        "event=subscriber_overrun topic={} bytes={}",
                        m.topic,
                        m.plaintext.len()
                    );
                }
                Err(TrySendError::Disconnected(_)) => {}
            }
        })?;
        Ok((granted, rx))
    }

    /// Sends DISCONNECT and tears down the connection.
    pub fn disconnect(mut self) {
        let _ = self.shared.send_packet(&Packet::Disconnect);
        self.teardown();
    }

    fn teardown(&mut self) {
        self.shared.closed.store(true, Ordering::SeqCst);
        if let Ok(writer) = self.shared.writer.lock() {
            let _ = writer.shutdown(std::net::Shutdown::Both);
        }
        if let Some(t) = self.reader_thread.take() {
            let _ = t.join();
        }
        if let Some(t) = self.pinger_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        if !self.shared.closed.load(Ordering::SeqCst) {
            let _ = self.shared.send_packet(&Packet::Disconnect);
            self.teardown();
        }
    }
}

/// Blocks until the CONNACK arrives (or `timeout` passes) using a temporary
/// read timeout on the socket.
fn read_connack(
    stream: &TcpStream,
    timeout: Duration,
    max_frame: usize,
) -> Result<Connack, ClientError> {
    stream.set_read_timeout(Some(timeout))?;
    let mut reader = stream.try_clone()?;
    let mut frames = FrameBuffer::new(max_frame);
    let mut chunk = [0u8; 1024];
    let deadline = Instant::now() + timeout;
    let connack = loop {
        match frames.next_packet() {
            Ok(Some(Packet::Connack(connack))) => break connack,
            Ok(Some(other)) => {
                log::warn!(
                    target: "vitalmq::client",
                    "event=unexpected_preconnack packet={}",
                    other.kind()
                );
                return Err(ClientError::ConnectionClosed);
            }
            Ok(None) => {}
            Err(e) => {
                log::warn!(target: "vitalmq::client", "event=protocol_error error={e}");
                return Err(ClientError::ConnectionClosed);
            }
        }
        if Instant::now() >= deadline {
            return Err(ClientError::Timeout("CONNACK"));
        }
        match reader.read(&mut chunk) {
            Ok(0) => return Err(ClientError::ConnectionClosed),
            Ok(n) => frames.extend(&chunk[..n]),
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                return Err(ClientError::Timeout("CONNACK"));
            }
            Err(e) => return Err(ClientError::Io(e)),
        }
    };
    stream.set_read_timeout(None)?;
    Ok(connack)
}

fn reader_loop(mut stream: TcpStream, shared: &Arc<Shared>, max_frame: usize) {
    let mut frames = FrameBuffer::new(max_frame);
    let mut chunk = [0u8; 8192];
    loop {
        if shared.closed.load(Ordering::Relaxed) {
            return;
        }
        let n = match stream.read(&mut chunk) {
            Ok(0) | Err(_) => {
                shared.closed.store(true, Ordering::SeqCst);
                // wake any waiter: dropping the maps' senders disconnects them
                shared.puback_waiters.lock().unwrap().clear();
                shared.suback_waiters.lock().unwrap().clear();
                return;
            }
            Ok(n) => n,
        };
        frames.extend(&chunk[..n]);
        loop {
            match frames.next_packet() {
                Ok(Some(packet)) => handle_inbound(shared, packet),
                Ok(None) => break,
                Err(e) => {
                    log::warn!(
                        target: "vitalmq::client",
                        "event=protocol_error error={e}"
                    );
                    shared.closed.store(true, Ordering::SeqCst);
                    return;
                }
            }
        }
    }
}

fn handle_inbound(shared: &Arc<Shared>, packet: Packet) {
    match packet {
        Packet::Publish(publish) => handle_publish(shared, publish),
        Packet::Puback { packet_id } => {
            if let Some(waiter) = shared.puback_waiters.lock().unwrap().get(&packet_id) {
                let _ = waiter.try_send(());
            }
        }
        Packet::Suback(suback) => {
            if let Some(waiter) = shared.suback_waiters.lock().unwrap().get(&suback.packet_id) {
                let _ = waiter.try_send(suback.clone());
            }
        }
        Packet::Pingresp => {}
        other => {
            log::warn!(
                target: "vitalmq::client",
                "event=unexpected_packet packet={}",
                other.kind()
            );
        }
    }
}

/// Decrypts an inbound publish and, only if it authenticates, delivers it to
/// matching subscribers and acknowledges it.
fn handle_publish(shared: &Arc<Shared>, publish: Publish) {
    let envelope = match crate::aead::Envelope::decode(&publish.payload) {
        Ok(envelope) => envelope,
        Err(e) => {
            shared.decode_failures.fetch_add(1, Ordering::Relaxed);
            log::warn!(
                target: "vitalmq::client",
                "event=malformed_envelope topic={} error={e} acked=false",
                publish.topic
            );
            return; // no PUBACK for garbage
        }
    };
    let cipher = envelope.cipher();
    let plaintext = match shared.ctx.lock().unwrap().open(&publish.topic, &envelope) {
        Ok(plaintext) => plaintext,
        Err(e) => {
            shared.auth_failures.fetch_add(1, Ordering::Relaxed);
            log::warn!(
                target: "vitalmq::client",
                "event=auth_failure topic={} cipher={cipher} bytes={} error={e} acked=false",
                publish.topic,
                publish.payload.len()
            );
            return; // no PUBACK: the broker will redeliver
        }
    };

    let message = ReceivedMessage {
        topic: publish.topic.clone(),
        plaintext,
        cipher,
        dup: publish.dup,
        received_at: Instant::now(),
    };
    {
        let mut subscriptions = shared.subscriptions.lock().unwrap();
        for (filter, callback) in subscriptions.iter_mut() {
            if topic::matches(filter, &message.topic) {
                callback(message.clone());
            }
        }
    }

    // acknowledge only after successful decryption and delivery
    if let (QoS::AtLeastOnce, Some(packet_id)) = (publish.qos, publish.packet_id) {
        if let Err(e) = shared.send_packet(&Packet::Puback { packet_id }) {
            log::warn!(
                target: "vitalmq::client",
                "event=puback_send_failed packet_id={packet_id} error={e}"
            );
        }
    }
}
