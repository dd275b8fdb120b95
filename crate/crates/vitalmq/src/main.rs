//! Command-line front end: broker, publish, subscribe, benchmark sweep,
//! vector verification, and policy calibration.
//!
//! Exit codes: 0 success, 1 runtime failure (verification failed, timed
//! out, aborted), 2 configuration or usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{ArgAction, Args, Parser, Subcommand};

use vitalmq::bench::{self, report, BenchConfig, CipherLabel};
use vitalmq::broker::server::Broker;
use vitalmq::client::Client;
use vitalmq::config::{self, ConfigError, FileConfig};
use vitalmq::mqtt::QoS;
use vitalmq::policy::{self, Calibration};
use vitalmq::vectors;

#[derive(Parser)]
#[command(
    name = "vitalmq",
    version,
    about = "Secure publish/subscribe messaging with payload-level encryption",
    propagate_version = true
)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug, -vvv trace). RUST_LOG overrides.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the message broker.
    Broker(BrokerArgs),
    /// Seal a payload and publish it.
    Publish(PublishArgs),
    /// Subscribe to a filter and print authenticated messages.
    Subscribe(SubscribeArgs),
    /// Measure round-trip times across ciphers and payload sizes.
    Bench(BenchArgs),
    /// Verify the cipher implementations against known-answer vector files.
    Kat(KatArgs),
    /// Derive a cipher-selection threshold from benchmark aggregates.
    PolicyCalibrate(CalibrateArgs),
}

#[derive(Args)]
struct BrokerArgs {
    /// Listen address, e.g. 0.0.0.0:1883 [config default: 127.0.0.1:1883].
    #[arg(long, value_name = "ADDR")]
    listen: Option<String>,
}

/// Connection flags shared by publish and subscribe. The payload key is
/// deliberately NOT a flag: pass it as a file (--key-file) or through the
/// VITALMQ_KEY environment variable so it never appears in process listings
/// or shell history.
#[derive(Args)]
struct ClientFlags {
    /// Broker address (host:port) [config default: 127.0.0.1:1883].
    #[arg(long, value_name = "ADDR")]
    broker: Option<String>,
    /// Client identifier [config default: a random vitalmq-XXXXXXXX].
    #[arg(long, value_name = "ID")]
    client_id: Option<String>,
    /// none | aes128gcm | ascon128 | adaptive [config default: ascon128].
    #[arg(long, value_name = "CIPHER")]
    cipher: Option<String>,
    /// File containing the 16-byte payload key as 32 hex characters.
    #[arg(long, value_name = "PATH")]
    key_file: Option<PathBuf>,
    /// Constant key/nonce/AD mode matching the published test vectors.
    /// No key material is needed; DO NOT use outside interoperability tests.
    #[arg(long)]
    fixed_vectors: bool,
    /// Deliver incoming unencrypted payloads instead of rejecting them as a
    /// downgrade (implied by --cipher none).
    #[arg(long)]
    accept_plaintext: bool,
    /// 0 (at most once) or 1 (at least once) [config default: 1].
    #[arg(long)]
    qos: Option<u8>,
    /// MQTT username [config default: none].
    #[arg(long)]
    username: Option<String>,
    /// MQTT password; prefer the VITALMQ_PASSWORD environment variable.
    #[arg(long)]
    password: Option<String>,
}

#[derive(Args)]
struct PublishArgs {
    #[command(flatten)]
    client: ClientFlags,
    /// Topic to publish to [config default: vitals/demo].
    #[arg(long, value_name = "TOPIC")]
    topic: Option<String>,
    /// Payload text [default: hello].
    #[arg(long, conflicts_with = "message_file")]
    message: Option<String>,
    /// Read the payload from a file instead.
    #[arg(long, value_name = "PATH")]
    message_file: Option<PathBuf>,
}

#[derive(Args)]
struct SubscribeArgs {
    #[command(flatten)]
    client: ClientFlags,
    /// Topic filter ('+' and '#' wildcards allowed) [config default: vitals/demo].
    #[arg(long, value_name = "FILTER")]
    filter: Option<String>,
    /// Exit after this many messages (0 = run until killed).
    #[arg(long, default_value_t = 0)]
    count: u32,
    /// Give up if no message arrives for this long (0 = wait forever).
    #[arg(long, value_name = "MS", default_value_t = 0)]
    idle_timeout_ms: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Broker address (host:port) [config default: 127.0.0.1:1883].
    #[arg(long, value_name = "ADDR")]
    broker: Option<String>,
    /// Topic the harness publishes and subscribes on [config default: bench/rtt].
    #[arg(long, value_name = "TOPIC")]
    topic: Option<String>,
    /// Client identifier [config default: bench-harness].
    #[arg(long, value_name = "ID")]
    client_id: Option<String>,
    /// Comma-separated labels: none,aes128gcm,ascon128,tls-external
    /// [config default: none,aes128gcm,ascon128].
    #[arg(long, value_name = "LIST")]
    ciphers: Option<String>,
    /// Smallest payload is 2^MIN bytes [config default: 1].
    #[arg(long, value_name = "MIN")]
    min_exponent: Option<u32>,
    /// Largest payload is 2^MAX bytes [config default: 12].
    #[arg(long, value_name = "MAX")]
    max_exponent: Option<u32>,
    /// Timed iterations per (cipher, size) cell [config default: 10].
    #[arg(long, value_name = "N")]
    iterations: Option<u32>,
    /// Untimed warmup iterations per cell [config default: 2].
    #[arg(long, value_name = "N")]
    warmup: Option<u32>,
    /// 0 (at most once) or 1 (at least once) [config default: 1].
    #[arg(long)]
    qos: Option<u8>,
    /// Constant key/nonce/AD mode matching the published test vectors.
    #[arg(long)]
    fixed_vectors: bool,
    /// Key file (32 hex characters); otherwise VITALMQ_KEY, the config
    /// file's key_file, or an ephemeral random key.
    #[arg(long, value_name = "PATH")]
    key_file: Option<PathBuf>,
    /// Per-iteration timeout in milliseconds [config default: 10000].
    #[arg(long, value_name = "MS")]
    timeout_ms: Option<u64>,
    /// Directory for CSV, plot data, and metadata outputs.
    #[arg(long, value_name = "DIR", default_value = "bench-out")]
    out_dir: PathBuf,
    /// Start a broker inside this process on an ephemeral port and measure
    /// against it (ignores the broker address).
    #[arg(long)]
    local_broker: bool,
}

#[derive(Args)]
struct KatArgs {
    /// ASCON-128 vector file (Count/Key/Nonce/PT/AD/CT records).
    /// Falls back to the config file's `[kat] ascon`.
    #[arg(long, value_name = "PATH")]
    ascon: Option<PathBuf>,
    /// AES-128-GCM vector file (Count/Key/IV/PT/AAD/CT/Tag records).
    /// Falls back to the config file's `[kat] gcm`.
    #[arg(long, value_name = "PATH")]
    gcm: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Aggregated benchmark CSV (cipher,message_size_bytes,mrtt_ms,...).
    /// Falls back to the config file's `[calibrate] input`.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
}

enum CliError {
    /// Bad flags, bad config, malformed input files → exit 2.
    Usage(String),
    /// The operation itself failed → exit 1.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::FAILURE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<vitalmq::client::ClientError> for CliError {
    fn from(e: vitalmq::client::ClientError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<bench::BenchError> for CliError {
    fn from(e: bench::BenchError) -> Self {
        match e {
            bench::BenchError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<report::ReportError> for CliError {
    fn from(e: report::ReportError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let file_config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}", e.message());
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Broker(args) => run_broker(args, &file_config),
        Command::Publish(args) => run_publish(args, &file_config),
        Command::Subscribe(args) => run_subscribe(args, &file_config),
        Command::Bench(args) => run_bench_command(args, &file_config),
        Command::Kat(args) => run_kat(args, &file_config),
        Command::PolicyCalibrate(args) => run_calibrate(args, &file_config),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let default_filter = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_filter))
        .format_timestamp_millis()
        .init();
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        Some(p) => Ok(FileConfig::load(p)?),
        None => Ok(FileConfig::default()),
    }
}

fn run_broker(args: BrokerArgs, file_config: &FileConfig) -> Result<ExitCode, CliError> {
    let listen = args
        .listen
        .unwrap_or_else(|| file_config.broker.listen_addr.clone());
    let broker = Broker::start(listen.as_str(), file_config.broker.broker_config())
        .map_err(|e| CliError::Runtime(format!("cannot start broker on {listen}: {e}")))?;
    println!("listening on {}", broker.local_addr());
    loop {
        std::thread::park();
    }
}

/// Applies command-line overrides and opens the connection.
fn connect_client(flags: &ClientFlags, file_config: &FileConfig) -> Result<Client, CliError> {
    let mut section = file_config.client.clone();
    if let Some(broker) = &flags.broker {
        section.broker_addr = broker.clone();
    }
    if let Some(id) = &flags.client_id {
        section.client_id = Some(id.clone());
    }
    if let Some(cipher) = &flags.cipher {
        section.cipher = cipher.clone();
    }
    if flags.fixed_vectors {
        section.fixed_vectors = true;
    }
    if flags.accept_plaintext {
        section.accept_plaintext = true;
    }
    if let Some(qos) = flags.qos {
        section.qos = qos;
    }
    if let Some(username) = &flags.username {
        section.username = Some(username.clone());
    }
    if let Some(password) = &flags.password {
        section.password = Some(password.clone());
    } else if section.password.is_none() {
        section.password = std::env::var("VITALMQ_PASSWORD").ok();
    }
    let key = config::resolve_key(flags.key_file.as_deref(), section.key_file.as_deref())?;
    let client_config = section.client_config(&file_config.policy, key)?;
    Ok(Client::connect(client_config)?)
}

fn run_publish(args: PublishArgs, file_config: &FileConfig) -> Result<ExitCode, CliError> {
    let topic = args
        .topic
        .unwrap_or_else(|| file_config.client.topic.clone());
    let payload: Vec<u8> = match (&args.message, &args.message_file) {
        (Some(text), _) => text.clone().into_bytes(),
        (None, Some(path)) => std::fs::read(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?,
        (None, None) => b"hello".to_vec(),
    };
    let mut client = connect_client(&args.client, file_config)?;
    let receipt = client.publish_secure(&topic, &payload)?;
    println!(
        "published {} plaintext bytes to {} cipher={} sealed_bytes={} qos={} retries={}",
        payload.len(),
        topic,
        receipt.cipher,
        receipt.sealed_bytes,
        receipt.qos.bits(),
        receipt.retries,
    );
    client.disconnect();
    Ok(ExitCode::SUCCESS)
}

fn render_payload(plaintext: &[u8]) -> String {
    match std::str::from_utf8(plaintext) {
        Ok(text) if !text.chars().any(char::is_control) => text.to_string(),
        _ => format!("hex:{}", hex::encode(plaintext)),
    }
}

fn run_subscribe(args: SubscribeArgs, file_config: &FileConfig) -> Result<ExitCode, CliError> {
    let filter = args
        .filter
        .unwrap_or_else(|| file_config.client.topic.clone());
    let mut client = connect_client(&args.client, file_config)?;
    let (granted, rx) = client.subscribe_channel(&filter, 1024)?;
    log::info!("subscribed to {filter} at qos {}", granted.bits());
    let mut received = 0u32;
    loop {
        let message = if args.idle_timeout_ms == 0 {
            rx.recv().map_err(|_| CliError::Runtime("connection closed".into()))?
        } else {
            match rx.recv_timeout(Duration::from_millis(args.idle_timeout_ms)) {
                Ok(m) => m,
                Err(std::sync::mpsc::RecvTimeoutError::Timeout) => {
                    return Err(CliError::Runtime(format!(
                        "no message within {} ms ({received} received)",
                        args.idle_timeout_ms
                    )));
                }
                Err(std::sync::mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(CliError::Runtime("connection closed".into()));
                }
            }
        };
        println!(
            "{} cipher={} bytes={}: {}",
            message.topic,
            message.cipher,
            message.plaintext.len(),
            render_payload(&message.plaintext)
        );
        received += 1;
        if args.count != 0 && received >= args.count {
            client.disconnect();
            return Ok(ExitCode::SUCCESS);
        }
    }
}

fn parse_cipher_list(list: &str) -> Result<Vec<CipherLabel>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(CliError::Usage))
        .collect()
}

fn run_bench_command(args: BenchArgs, file_config: &FileConfig) -> Result<ExitCode, CliError> {
    let mut bench_config: BenchConfig = file_config.bench.clone();
    if let Some(broker) = args.broker {
        bench_config.broker_addr = broker;
    }
    if let Some(topic) = args.topic {
        bench_config.topic = topic;
    }
    if let Some(id) = args.client_id {
        bench_config.client_id = id;
    }
    if let Some(list) = &args.ciphers {
        bench_config.ciphers = parse_cipher_list(list)?;
    }
    if let Some(min) = args.min_exponent {
        bench_config.size_exponent_min = min;
    }
    if let Some(max) = args.max_exponent {
        bench_config.size_exponent_max = max;
    }
    if let Some(n) = args.iterations {
        bench_config.iterations_per_size = n;
    }
    if let Some(n) = args.warmup {
        bench_config.warmup_iterations = n;
    }
    if let Some(bits) = args.qos {
        bench_config.qos = QoS::from_bits(bits)
            .ok_or_else(|| CliError::Usage(format!("qos must be 0 or 1, got {bits}")))?;
    }
    if args.fixed_vectors {
        bench_config.fixed_vectors = true;
    }
    if let Some(ms) = args.timeout_ms {
        bench_config.iteration_timeout_ms = ms;
    }
    if let Some(key) =
        config::resolve_key(args.key_file.as_deref(), file_config.client.key_file.as_deref())?
    {
        bench_config.key_hex = Some(hex::encode(key));
    }

    // keep the broker alive for the duration of the run
    let _local_broker = if args.local_broker {
        let broker = Broker::start("127.0.0.1:0", file_config.broker.broker_config())
            .map_err(|e| CliError::Runtime(format!("cannot start local broker: {e}")))?;
        let addr = broker.local_addr();
        bench_config.broker_addr = addr.to_string();
        log::info!("local broker on {addr}");
        Some(broker)
    } else {
        None
    };

    let outcome = bench::run_bench(&bench_config)?;
    let paths = report::export_outcome(&outcome, &args.out_dir)?;

    print!("{}", report::format_aggregated_csv(&outcome.records));
    println!("wrote {}", paths.csv.raw.display());
    println!("wrote {}", paths.csv.aggregated.display());
    println!("wrote {}", paths.plots.mrtt.display());
    if let Some(pei) = &paths.plots.pei {
        println!("wrote {}", pei.display());
    }
    println!("wrote {}", paths.metadata.display());

    match &outcome.aborted {
        Some(marker) => {
            eprintln!(
                "aborted at cipher={} size={} iteration={}: {}",
                marker.cipher, marker.message_size_bytes, marker.iteration, marker.reason
            );
            Ok(ExitCode::FAILURE)
        }
        None => Ok(ExitCode::SUCCESS),
    }
}

fn run_kat(args: KatArgs, file_config: &FileConfig) -> Result<ExitCode, CliError> {
    let ascon = args.ascon.or_else(|| file_config.kat.ascon.clone());
    let gcm = args.gcm.or_else(|| file_config.kat.gcm.clone());
    if ascon.is_none() && gcm.is_none() {
        return Err(CliError::Usage(
            "nothing to verify: pass --ascon and/or --gcm, or set them in the [kat] config section".into(),
        ));
    }
    let mut all_ok = true;
    if let Some(path) = &ascon {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let parsed = vectors::parse_aead_kat(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let report = vectors::verify_ascon_kat(&parsed);
        println!("ascon128: {report}");
        all_ok &= report.ok();
    }
    if let Some(path) = &gcm {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let parsed = vectors::parse_gcm_vectors(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let report = vectors::verify_gcm_vectors(&parsed);
        println!("aes128gcm: {report}");
        all_ok &= report.ok();
    }
    Ok(if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn run_calibrate(args: CalibrateArgs, file_config: &FileConfig) -> Result<ExitCode, CliError> {
    let input = args
        .input
        .or_else(|| file_config.calibrate.input.clone())
        .ok_or_else(|| {
            CliError::Usage(
                "nothing to calibrate: pass --input or set the [calibrate] config section".into(),
            )
        })?;
    let text = std::fs::read_to_string(&input)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", input.display())))?;
    let records = report::parse_aggregated_csv(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;

    match policy::calibrate_threshold(&records) {
        Ok(Calibration::Threshold(bytes)) => {
            println!("calibrated_threshold_bytes={bytes}");
        }
        Ok(Calibration::NoCrossover) => {
            println!("calibrated_threshold_bytes=none (no crossover in the measured range)");
        }
        Err(e) => return Err(CliError::Usage(format!("{}: {e}", input.display()))),
    }

    let mut sizes: Vec<u32> = records.iter().map(|r| r.message_size_bytes).collect();
    sizes.sort_unstable();
    sizes.dedup();
    println!("size_bytes  pei");
    for size in sizes {
        match policy::compute_pei(&records, size) {
            Ok(pei) => println!("{size}  {pei:.3}"),
            Err(_) => println!("{size}  -"),
        }
    }
    Ok(ExitCode::SUCCESS)
}
