//! TCP front end for [`BrokerCore`]: one reader thread and one writer thread
//! per connection, a shared core behind a mutex, and a ticker thread that
//! drives retransmission and keep-alive expiry.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::mqtt::{encode_packet, Connack, FrameBuffer, Packet, ProtocolError};

use super::{Action, BrokerConfig, BrokerCore, BrokerStats, ConnId};

/// Bytes (or a hangup) queued for a connection's writer thread.
enum Outbound {
    Frame(Vec<u8>),
    Hangup,
}

type WriterMap = Arc<Mutex<HashMap<ConnId, Sender<Outbound>>>>;

/// A running broker. Dropping it (or calling [`Broker::shutdown`]) stops the
/// listener and disconnects every client.
pub struct Broker {
    core: Arc<Mutex<BrokerCore>>,
    writers: WriterMap,
    stats: Arc<BrokerStats>,
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
    ticker_thread: Option<JoinHandle<()>>,
}

impl Broker {
    /// Binds `addr` (e.g. `"127.0.0.1:1883"`, port 0 for ephemeral) and
    /// starts serving.
    pub fn start(addr: impl ToSocketAddrs, config: BrokerConfig) -> std::io::Result<Broker> {
        let core = BrokerCore::new(config.clone())
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
        let stats = core.stats();
        let listener = TcpListener::bind(addr)?;
        let local_addr = listener.local_addr()?;
        // polled accept loop so shutdown does not hang on a blocking accept
        listener.set_nonblocking(true)?;

        let core = Arc::new(Mutex::new(core));
        let writers: WriterMap = Arc::new(Mutex::new(HashMap::new()));
        let stop = Arc::new(AtomicBool::new(false));

        let accept_thread = {
            let core = Arc::clone(&core);
            let writers = Arc::clone(&writers);
            let stop = Arc::clone(&stop);
            let max_frame = config.max_frame_bytes;
            std::thread::Builder::new()
                .name("mq-accept".into())
                .spawn(move || accept_loop(listener, core, writers, stop, max_frame))?
        };

        let ticker_thread = {
            let core = Arc::clone(&core);
            let writers = Arc::clone(&writers);
            let stop = Arc::clone(&stop);
            let period = (config.retransmit_interval / 4).min(Duration::from_millis(100));
            std::thread::Builder::new().name("mq-ticker".into()).spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    std::thread::sleep(period);
                    let actions = core.lock().unwrap().tick(Instant::now());
                    dispatch(&actions, &writers);
                }
            })?
        };

        log::info!(target: "vitalmq::broker", "event=listening addr={local_addr}");
        Ok(Broker {
            core,
            writers,
            stats,
            local_addr,
            stop,
            accept_thread: Some(accept_thread),
            ticker_thread: Some(ticker_thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stats(&self) -> Arc<BrokerStats> {
        Arc::clone(&self.stats)
    }

    pub fn session_count(&self) -> usize {
        self.core.lock().unwrap().session_count()
    }

    /// Stops accepting, hangs up every connection, and joins the service
    /// threads.
    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        for (_, writer) in self.writers.lock().unwrap().drain() {
            let _ = writer.send(Outbound::Hangup);
        }
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
        if let Some(t) = self.ticker_thread.take() {
            let _ = t.join();
        }
        log::info!(
            target: "vitalmq::broker",
            "event=shutdown stats: {}",
            self.stats.snapshot()
        );
    }
}

impl Drop for Broker {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Encodes and routes core actions to the per-connection writer queues.
fn dispatch(actions: &[Action], writers: &WriterMap) {
    for action in actions {
        match action {
            Action::Send { conn, packet } => {
                let frame = match encode_packet(packet) {
                    Ok(frame) => frame,
                    Err(e) => {
                        log::error!(
                            target: "vitalmq::broker",
                            "event=encode_failed conn={conn} packet={} error={e}",
                            packet.kind()
                        );
                        continue;
                    }
                };
                if let Some(writer) = writers.lock().unwrap().get(conn) {
                    // a full/closed queue means the connection is going away
                    let _ = writer.send(Outbound::Frame(frame));
                }
            }
            Action::Close { conn } => {
                if let Some(writer) = writers.lock().unwrap().remove(conn) {
                    let _ = writer.send(Outbound::Hangup);
                }
            }
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    core: Arc<Mutex<BrokerCore>>,
    writers: WriterMap,
    stop: Arc<AtomicBool>,
    max_frame: usize,
) {
    static NEXT_CONN_ID: AtomicU64 = AtomicU64::new(1);
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let conn = NEXT_CONN_ID.fetch_add(1, Ordering::Relaxed);
                log::info!(
                    target: "vitalmq::broker",
                    "event=accepted conn={conn} peer={peer}"
                );
                if let Err(e) = spawn_connection(
                    conn,
                    stream,
                    Arc::clone(&core),
                    Arc::clone(&writers),
                    max_frame,
                ) {
                    log::error!(
                        target: "vitalmq::broker",
                        "event=spawn_failed conn={conn} error={e}"
                    );
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(e) => {
                log::error!(target: "vitalmq::broker", "event=accept_failed error={e}");
                std::thread::sleep(Duration::from_millis(100));
            }
        }
    }
}

fn spawn_connection(
    conn: ConnId,
    stream: TcpStream,
    core: Arc<Mutex<BrokerCore>>,
    writers: WriterMap,
    max_frame: usize,
) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let write_stream = stream.try_clone()?;
    let (tx, rx) = channel::<Outbound>();
    writers.lock().unwrap().insert(conn, tx);
    core.lock().unwrap().conn_opened(conn, Instant::now());

    std::thread::Builder::new()
        .name(format!("mq-write-{conn}"))
        .spawn(move || writer_loop(write_stream, rx))?;

    std::thread::Builder::new()
        .name(format!("mq-read-{conn}"))
        .spawn(move || {
            reader_loop(conn, stream, &core, &writers, max_frame);
            // whatever ended the reader, drop the session and the writer
            core.lock().unwrap().conn_closed(conn);
            if let Some(writer) = writers.lock().unwrap().remove(&conn) {
                let _ = writer.send(Outbound::Hangup);
            }
        })?;
    Ok(())
}

fn writer_loop(mut stream: TcpStream, rx: Receiver<Outbound>) {
    while let Ok(Outbound::Frame(frame)) = rx.recv() {
        if stream.write_all(&frame).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(std::net::Shutdown::Both);
}

fn reader_loop(
    conn: ConnId,
    mut stream: TcpStream,
    core: &Arc<Mutex<BrokerCore>>,
    writers: &WriterMap,
    max_frame: usize,
) {
    let mut frames = FrameBuffer::new(max_frame);
    let mut chunk = [0u8; 8192];
    loop {
        let n = match stream.read(&mut chunk) {
            Ok(0) | Err(_) => return,
            Ok(n) => n,
        };
        frames.extend(&chunk[..n]);
        loop {
            match frames.next_packet() {
                Ok(Some(packet)) => {
                    let actions = core.lock().unwrap().handle_packet(
                        conn,
                        packet,
                        Instant::now(),
                    );
                    let closing = actions.iter().any(|a| a == &Action::Close { conn });
                    dispatch(&actions, writers);
                    if closing {
                        return;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    handle_protocol_error(conn, &e, writers);
                    return;
                }
            }
        }
    }
}

/// A peer speaking an unacceptable protocol level still deserves the CONNACK
/// code defined for it; everything else is logged and dropped.
fn handle_protocol_error(conn: ConnId, error: &ProtocolError, writers: &WriterMap) {
    log::warn!(
        target: "vitalmq::broker",
        "event=protocol_error conn={conn} error={error}"
    );
    if let ProtocolError::UnacceptableProtocolLevel(_) = error {
        let connack = Packet::Connack(Connack {
            session_present: false,
            return_code: crate::mqtt::connect_return::UNACCEPTABLE_PROTOCOL_VERSION,
        });
        if let Ok(frame) = encode_packet(&connack) {
            if let Some(writer) = writers.lock().unwrap().get(&conn) {
                let _ = writer.send(Outbound::Frame(frame));
            }
        }
    }
    if let Some(writer) = writers.lock().unwrap().remove(&conn) {
        let _ = writer.send(Outbound::Hangup);
    }
}
