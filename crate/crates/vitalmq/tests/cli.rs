//! End-to-end tests of the `vitalmq` binary: the help surface, exit codes,
//! vector verification, policy calibration, benchmark artifacts, key
//! handling, and config-file-only operation — all through real subprocesses.

use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Output, Stdio};
use std::sync::atomic::Ordering;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use vitalmq::broker::server::Broker;
use vitalmq::broker::BrokerConfig;

const KEY_HEX: &str = "000102030405060708090a0b0c0d0e0f";

/// A small aggregated CSV where ASCON wins at 2 bytes and loses at 4, so the
/// calibrated threshold is 2 and both PEI values are exact decimals.
const SMALL_AGGREGATES_CSV: &str = "\
cipher,message_size_bytes,mrtt_ms,min_ms,max_ms,stddev_ms,n
none,2,1.000,1.000,1.000,0.000,10
aes128gcm,2,3.000,3.000,3.000,0.000,10
ascon128,2,2.000,2.000,2.000,0.000,10
none,4,1.000,1.000,1.000,0.000,10
aes128gcm,4,2.000,2.000,2.000,0.000,10
ascon128,4,3.000,3.000,3.000,0.000,10
";

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vitalmq"));
    // Isolate from the invoking shell; tests set these explicitly when needed.
    cmd.env_remove("VITALMQ_KEY")
        .env_remove("VITALMQ_PASSWORD")
        .env_remove("RUST_LOG");
    cmd
}

fn data_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("vitalmq binary runs")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("stdout is UTF-8")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).expect("stderr is UTF-8")
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("process exited normally")
}

/// Trailing whitespace and the final newline are insignificant in help text.
fn normalized(text: &str) -> String {
    text.lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
}

fn start_broker() -> Broker {
    Broker::start("127.0.0.1:0", BrokerConfig::default()).expect("broker binds an ephemeral port")
}

/// Kills the child when the test ends, pass or fail.
struct KillOnDrop(Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Streams a child's stdout line by line so a test can wait on output from a
/// process that never exits.
fn line_reader(stdout: ChildStdout) -> mpsc::Receiver<String> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            match line {
                Ok(line) => {
                    if tx.send(line).is_err() {
                        break;
                    }
                }
                Err(_) => break,
            }
        }
    });
    rx
}

// --- help surface -----------------------------------------------------------

#[test]
fn help_output_matches_the_committed_snapshots() {
    let cases: [(&[&str], &str); 7] = [
        (&["--help"], include_str!("snapshots/help.txt")),
        (&["broker", "--help"], include_str!("snapshots/help_broker.txt")),
        (&["publish", "--help"], include_str!("snapshots/help_publish.txt")),
        (
            &["subscribe", "--help"],
            include_str!("snapshots/help_subscribe.txt"),
        ),
        (&["bench", "--help"], include_str!("snapshots/help_bench.txt")),
        (&["kat", "--help"], include_str!("snapshots/help_kat.txt")),
        (
            &["policy-calibrate", "--help"],
            include_str!("snapshots/help_policy_calibrate.txt"),
        ),
    ];
    for (args, snapshot) in cases {
        let output = run(bin().args(args));
        assert_eq!(exit_code(&output), 0, "{args:?}");
        assert_eq!(
            normalized(&stdout_of(&output)),
            normalized(snapshot),
            "help for {args:?} drifted; regenerate tests/snapshots if intentional"
        );
    }

    let version = run(bin().arg("--version"));
    assert_eq!(exit_code(&version), 0);
    assert!(stdout_of(&version).starts_with("vitalmq "));
}

#[test]
fn help_enumerates_every_flag_with_its_default() {
    struct Case {
        subcommand: &'static str,
        flags: &'static [&'static str],
        defaults: &'static [&'static str],
    }
    let cases = [
        Case {
            subcommand: "broker",
            flags: &["--listen", "--config", "--verbose"],
            defaults: &["[config default: 127.0.0.1:1883]"],
        },
        Case {
            subcommand: "publish",
            flags: &[
                "--broker",
                "--client-id",
                "--cipher",
                "--key-file",
                "--fixed-vectors",
                "--accept-plaintext",
                "--qos",
                "--username",
                "--password",
                "--topic",
                "--message",
                "--message-file",
                "--config",
                "--verbose",
            ],
            defaults: &[
                "[config default: 127.0.0.1:1883]",
                "[config default: a random vitalmq-XXXXXXXX]",
                "[config default: ascon128]",
                "[config default: 1]",
                "[config default: none]",
                "[config default: vitals/demo]",
                "[default: hello]",
            ],
        },
        Case {
            subcommand: "subscribe",
            flags: &[
                "--broker",
                "--client-id",
                "--cipher",
                "--key-file",
                "--fixed-vectors",
                "--accept-plaintext",
                "--qos",
                "--username",
                "--password",
                "--filter",
                "--count",
                "--idle-timeout-ms",
            ],
            defaults: &[
                "[config default: vitals/demo]",
                "[default: 0]",
            ],
        },
        Case {
            subcommand: "bench",
            flags: &[
                "--broker",
                "--topic",
                "--client-id",
                "--ciphers",
                "--min-exponent",
                "--max-exponent",
                "--iterations",
                "--warmup",
                "--qos",
                "--fixed-vectors",
                "--key-file",
                "--timeout-ms",
                "--out-dir",
                "--local-broker",
            ],
            defaults: &[
                "[config default: bench/rtt]",
                "[config default: bench-harness]",
                "[config default: none,aes128gcm,ascon128]",
                "[config default: 1]",
                "[config default: 12]",
                "[config default: 10]",
                "[config default: 2]",
                "[config default: 10000]",
                "[default: bench-out]",
            ],
        },
        Case {
            subcommand: "kat",
            flags: &["--ascon", "--gcm"],
            defaults: &["`[kat] ascon`", "`[kat] gcm`"],
        },
        Case {
            subcommand: "policy-calibrate",
            flags: &["--input"],
            defaults: &["`[calibrate] input`"],
        },
    ];
    for case in cases {
        let help = stdout_of(&run(bin().args([case.subcommand, "--help"])));
        for flag in case.flags {
            assert!(
                help.contains(flag),
                "{} help is missing {flag}:\n{help}",
                case.subcommand
            );
        }
        for default in case.defaults {
            assert!(
                help.contains(default),
                "{} help is missing the default note {default:?}:\n{help}",
                case.subcommand
            );
        }
    }
}

#[test]
fn key_material_never_has_a_bare_command_line_flag() {
    for subcommand in ["publish", "subscribe", "bench"] {
        let help = stdout_of(&run(bin().args([subcommand, "--help"])));
        assert!(help.contains("--key-file"), "{subcommand}:\n{help}");
        assert!(
            !help.contains("--key <"),
            "{subcommand} must not accept the key itself as an argument:\n{help}"
        );
    }
}

// --- exit codes -------------------------------------------------------------

#[test]
fn bad_flag_values_exit_with_the_usage_code() {
    // Rejected value caught by our own validation.
    let output = run(bin().args(["publish", "--qos", "3"]));
    assert_eq!(exit_code(&output), 2, "stderr: {}", stderr_of(&output));

    // Unknown cipher label.
    let output = run(bin().args(["publish", "--cipher", "rot13"]));
    assert_eq!(exit_code(&output), 2, "stderr: {}", stderr_of(&output));

    // Unknown flag, caught by the argument parser.
    let output = run(bin().args(["publish", "--frobnicate"]));
    assert_eq!(exit_code(&output), 2, "stderr: {}", stderr_of(&output));
}

#[test]
fn a_malformed_environment_key_is_rejected_not_ignored() {
    let output = run(bin().arg("publish").env("VITALMQ_KEY", "zz"));
    assert_eq!(exit_code(&output), 2, "stderr: {}", stderr_of(&output));
    let stderr = stderr_of(&output);
    assert!(stderr.contains("VITALMQ_KEY"), "{stderr}");
    assert!(stderr.contains("not valid hex"), "{stderr}");

    let output = run(bin().arg("publish").env("VITALMQ_KEY", "abcd"));
    assert_eq!(exit_code(&output), 2);
    assert!(stderr_of(&output).contains("key must be 16 bytes, got 2"));
}

// --- kat --------------------------------------------------------------------

#[test]
fn kat_verifies_the_shipped_vector_files() {
    let output = run(bin()
        .arg("kat")
        .arg("--ascon")
        .arg(data_file("ascon128_kat.txt"))
        .arg("--gcm")
        .arg(data_file("gcm_vectors.txt")));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(
        stdout.contains("ascon128: 1089/1089 vectors passed"),
        "{stdout}"
    );
    assert!(
        stdout.contains("aes128gcm: 11/11 vectors passed"),
        "{stdout}"
    );
}

#[test]
fn kat_reports_failure_when_a_vector_is_corrupted() {
    let text = std::fs::read_to_string(data_file("ascon128_kat.txt")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let target = lines
        .iter_mut()
        .find(|line| line.starts_with("CT = "))
        .expect("the file has ciphertext records");
    let flipped = if target.ends_with('0') { '1' } else { '0' };
    target.pop();
    target.push(flipped);

    let dir = tempfile::tempdir().unwrap();
    let corrupted = dir.path().join("corrupted_kat.txt");
    std::fs::write(&corrupted, lines.join("\n")).unwrap();

    let output = run(bin().arg("kat").arg("--ascon").arg(&corrupted));
    assert_eq!(exit_code(&output), 1, "stdout: {}", stdout_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("1088/1089 vectors passed"), "{stdout}");
    assert!(stdout.contains("Count 1"), "{stdout}");
}

#[test]
fn kat_with_no_inputs_is_a_usage_error() {
    let output = run(bin().arg("kat"));
    assert_eq!(exit_code(&output), 2);
    assert!(stderr_of(&output).contains("nothing to verify"));
}

// --- policy-calibrate -------------------------------------------------------

#[test]
fn calibrate_prints_the_threshold_and_pei_table() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("aggregates.csv");
    std::fs::write(&input, SMALL_AGGREGATES_CSV).unwrap();

    let output = run(bin().arg("policy-calibrate").arg("--input").arg(&input));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("calibrated_threshold_bytes=2\n"), "{stdout}");
    assert!(stdout.contains("size_bytes  pei"), "{stdout}");
    // PEI at 2 B: mean(1.0, 3.0) / 2.0; at 4 B: mean(1.0, 2.0) / 3.0.
    assert!(stdout.contains("2  1.000"), "{stdout}");
    assert!(stdout.contains("4  0.500"), "{stdout}");

    // Same grid with ASCON slower at the smallest size: no crossover.
    let no_crossover = SMALL_AGGREGATES_CSV.replace(
        "ascon128,2,2.000,2.000,2.000,0.000,10",
        "ascon128,2,9.000,9.000,9.000,0.000,10",
    );
    let input = dir.path().join("no_crossover.csv");
    std::fs::write(&input, no_crossover).unwrap();
    let output = run(bin().arg("policy-calibrate").arg("--input").arg(&input));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    assert!(
        stdout_of(&output)
            .contains("calibrated_threshold_bytes=none (no crossover in the measured range)"),
        "{}",
        stdout_of(&output)
    );
}

#[test]
fn calibrate_without_a_readable_input_is_a_usage_error() {
    let output = run(bin().arg("policy-calibrate"));
    assert_eq!(exit_code(&output), 2);
    assert!(stderr_of(&output).contains("nothing to calibrate"));

    let output = run(bin().args(["policy-calibrate", "--input", "/nonexistent/aggregates.csv"]));
    assert_eq!(exit_code(&output), 2);
    assert!(stderr_of(&output).contains("cannot read"));
}

// --- bench ------------------------------------------------------------------

#[test]
fn bench_writes_the_full_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("artifacts");
    let output = run(bin()
        .args([
            "bench",
            "--local-broker",
            "--max-exponent",
            "3",
            "--iterations",
            "2",
            "--warmup",
            "1",
            "--out-dir",
        ])
        .arg(&out_dir));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));

    let stdout = stdout_of(&output);
    assert!(
        stdout.starts_with("cipher,message_size_bytes,mrtt_ms,min_ms,max_ms,stddev_ms,n"),
        "{stdout}"
    );
    assert_eq!(stdout.matches("wrote ").count(), 5, "{stdout}");
    for name in [
        "rtt_samples.csv",
        "rtt_aggregates.csv",
        "mrtt_vs_size.dat",
        "pei_vs_size.dat",
        "run_metadata.txt",
    ] {
        let path = out_dir.join(name);
        let metadata =
            std::fs::metadata(&path).unwrap_or_else(|e| panic!("{name} was not written: {e}"));
        assert!(metadata.len() > 0, "{name} is empty");
    }
}

// --- round trips through the binary ------------------------------------------

enum PublisherKey<'a> {
    File,
    Env(&'a str),
}

/// Spawns a one-message subscriber, then publishes (retrying while the
/// subscription may still be in flight) until the subscriber exits. The
/// subscriber always reads its key from a file; the publisher's key source
/// is the case under test.
fn round_trip_through_the_binary(topic: &str, payload: &str, publisher_key: PublisherKey) {
    let mut broker = start_broker();
    let addr = broker.local_addr().to_string();
    let dir = tempfile::tempdir().unwrap();
    let key_path = dir.path().join("payload.key");
    std::fs::write(&key_path, KEY_HEX).unwrap();

    let mut subscriber = KillOnDrop(
        bin()
            .args([
                "subscribe",
                "--broker",
                &addr,
                "--filter",
                topic,
                "--count",
                "1",
                "--idle-timeout-ms",
                "20000",
                "--client-id",
                "cli-sub",
                "--key-file",
            ])
            .arg(&key_path)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .expect("spawn subscriber"),
    );

    let deadline = Instant::now() + Duration::from_secs(10);
    while broker.stats().connects.load(Ordering::Relaxed) == 0 {
        assert!(Instant::now() < deadline, "subscriber never connected");
        std::thread::sleep(Duration::from_millis(20));
    }

    let status = loop {
        let mut publish = bin();
        publish.args([
            "publish",
            "--broker",
            &addr,
            "--topic",
            topic,
            "--message",
            payload,
            "--client-id",
            "cli-pub",
        ]);
        match publisher_key {
            PublisherKey::File => {
                publish.arg("--key-file").arg(&key_path);
            }
            PublisherKey::Env(hex) => {
                publish.env("VITALMQ_KEY", hex);
            }
        }
        let output = run(&mut publish);
        assert_eq!(exit_code(&output), 0, "publish: {}", stderr_of(&output));
        let publish_stdout = stdout_of(&output);
        assert!(
            publish_stdout.contains("cipher=ascon128"),
            "{publish_stdout}"
        );

        std::thread::sleep(Duration::from_millis(150));
        if let Some(status) = subscriber.0.try_wait().expect("poll subscriber") {
            break status;
        }
        assert!(
            Instant::now() < deadline,
            "subscriber never received a publish"
        );
    };

    let mut sub_stderr = String::new();
    subscriber
        .0
        .stderr
        .take()
        .unwrap()
        .read_to_string(&mut sub_stderr)
        .unwrap();
    assert!(status.success(), "subscriber: {status:?} {sub_stderr}");

    let mut sub_stdout = String::new();
    subscriber
        .0
        .stdout
        .take()
        .unwrap()
        .read_to_string(&mut sub_stdout)
        .unwrap();
    let expected = format!(
        "{topic} cipher=ascon128 bytes={}: {payload}",
        payload.len()
    );
    assert!(sub_stdout.contains(&expected), "{sub_stdout}");

    broker.shutdown();
}

#[test]
fn publish_and_subscribe_round_trip_through_the_binary() {
    round_trip_through_the_binary("cli/roundtrip", "round trip payload", PublisherKey::File);
}

#[test]
fn the_key_can_come_from_the_environment() {
    round_trip_through_the_binary("cli/envkey", "sealed via env key", PublisherKey::Env(KEY_HEX));
}

// --- config-file-only operation ----------------------------------------------

#[test]
fn kat_and_calibrate_run_from_a_config_file_alone() {
    let dir = tempfile::tempdir().unwrap();
    let aggregates = dir.path().join("aggregates.csv");
    std::fs::write(&aggregates, SMALL_AGGREGATES_CSV).unwrap();

    let config_path = dir.path().join("vitalmq.toml");
    let config = format!(
        "[kat]\nascon = {ascon:?}\ngcm = {gcm:?}\n\n[calibrate]\ninput = {input:?}\n",
        ascon = data_file("ascon128_kat.txt"),
        gcm = data_file("gcm_vectors.txt"),
        input = aggregates,
    );
    std::fs::write(&config_path, config).unwrap();

    let output = run(bin().arg("kat").arg("--config").arg(&config_path));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("ascon128: 1089/1089 vectors passed"), "{stdout}");
    assert!(stdout.contains("aes128gcm: 11/11 vectors passed"), "{stdout}");

    let output = run(bin().arg("policy-calibrate").arg("--config").arg(&config_path));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    assert!(
        stdout_of(&output).contains("calibrated_threshold_bytes=2"),
        "{}",
        stdout_of(&output)
    );
}

#[test]
fn broker_publish_and_subscribe_run_from_a_config_file_alone() {
    let dir = tempfile::tempdir().unwrap();
    let key_path = dir.path().join("payload.key");
    std::fs::write(&key_path, KEY_HEX).unwrap();

    let broker_config_path = dir.path().join("broker.toml");
    std::fs::write(&broker_config_path, "[broker]\nlisten_addr = \"127.0.0.1:0\"\n").unwrap();
    let mut broker = KillOnDrop(
        bin()
            .arg("broker")
            .arg("--config")
            .arg(&broker_config_path)
            .stdout(Stdio::piped())
            .spawn()
            .expect("spawn broker"),
    );
    let broker_lines = line_reader(broker.0.stdout.take().unwrap());
    let announcement = broker_lines
        .recv_timeout(Duration::from_secs(10))
        .expect("broker announces its address");
    let addr = announcement
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected broker output: {announcement}"));

    let client_config_path = dir.path().join("client.toml");
    let client_config = format!(
        "[client]\nbroker_addr = {addr:?}\ntopic = \"cfg/demo\"\nkey_file = {key:?}\n",
        key = key_path,
    );
    std::fs::write(&client_config_path, client_config).unwrap();

    let mut subscriber = KillOnDrop(
        bin()
            .arg("subscribe")
            .arg("--config")
            .arg(&client_config_path)
            .stdout(Stdio::piped())
            .spawn()
            .expect("spawn subscriber"),
    );
    let subscriber_lines = line_reader(subscriber.0.stdout.take().unwrap());

    // No other flags anywhere: the topic, key, and payload all come from the
    // config file or its defaults. Retry while the subscription settles.
    let deadline = Instant::now() + Duration::from_secs(20);
    let received = loop {
        let output = run(bin().arg("publish").arg("--config").arg(&client_config_path));
        assert_eq!(exit_code(&output), 0, "publish: {}", stderr_of(&output));
        assert!(
            stdout_of(&output).contains("published 5 plaintext bytes to cfg/demo"),
            "{}",
            stdout_of(&output)
        );
        match subscriber_lines.recv_timeout(Duration::from_millis(500)) {
            Ok(line) => break line,
            Err(mpsc::RecvTimeoutError::Timeout) => {
                assert!(Instant::now() < deadline, "subscriber never printed");
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => panic!("subscriber exited early"),
        }
    };
    assert_eq!(received, "cfg/demo cipher=ascon128 bytes=5: hello");
}

#[test]
fn bench_runs_from_a_config_file_alone() {
    let mut broker = start_broker();
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bench.toml");
    let config = format!(
        "[bench]\nbroker_addr = \"{}\"\nsize_exponent_max = 2\niterations_per_size = 2\nwarmup_iterations = 1\nciphers = [\"ascon128\"]\n",
        broker.local_addr(),
    );
    std::fs::write(&config_path, config).unwrap();

    let output = run(bin()
        .arg("bench")
        .arg("--config")
        .arg(&config_path)
        .current_dir(dir.path()));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));

    // Artifacts land in the default out-dir, relative to the working
    // directory. A single-cipher run has no efficiency series to plot.
    let out_dir = dir.path().join("bench-out");
    for name in [
        "rtt_samples.csv",
        "rtt_aggregates.csv",
        "mrtt_vs_size.dat",
        "run_metadata.txt",
    ] {
        assert!(out_dir.join(name).is_file(), "{name} was not written");
    }
    assert!(
        !out_dir.join("pei_vs_size.dat").exists(),
        "a single-cipher run cannot have an efficiency series"
    );
    broker.shutdown();
}
