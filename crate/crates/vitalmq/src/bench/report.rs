//! Benchmark result files: raw and aggregated CSV, plot-ready columnar
//! data, and a key=value metadata sidecar.
//!
//! All numeric fields are written with three decimal places. Raw samples
//! are quantized to that grid when recorded, so parsing the raw CSV and
//! re-aggregating reproduces the aggregated CSV byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{AbortMarker, BenchOutcome, CipherLabel, MrttRecord, RttSample};
use crate::policy::{self, PolicyError};

pub const RAW_HEADER: &str = "cipher,message_size_bytes,iteration,rtt_ms,valid";
pub const AGGREGATED_HEADER: &str = "cipher,message_size_bytes,mrtt_ms,min_ms,max_ms,stddev_ms,n";

pub const RAW_FILE: &str = "rtt_samples.csv";
pub const AGGREGATED_FILE: &str = "rtt_aggregates.csv";
pub const MRTT_PLOT_FILE: &str = "mrtt_vs_size.dat";
pub const PEI_PLOT_FILE: &str = "pei_vs_size.dat";
pub const METADATA_FILE: &str = "run_metadata.txt";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("nothing to export")]
    NoData,
}

impl ReportError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        ReportError::Parse {
            line,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvPaths {
    pub raw: PathBuf,
    pub aggregated: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlotPaths {
    pub mrtt: PathBuf,
    /// Absent when no size had both an ASCON record and a comparison record.
    pub pei: Option<PathBuf>,
}

/// Everything one run leaves on disk.
#[derive(Clone, Debug)]
pub struct ReportPaths {
    pub csv: CsvPaths,
    pub plots: PlotPaths,
    pub metadata: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn format_raw_csv(samples: &[RttSample], aborted: Option<&AbortMarker>) -> String {
    let mut out = String::with_capacity(64 + samples.len() * 32);
    out.push_str(RAW_HEADER);
    out.push('\n');
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{}",
            s.cipher,
            s.message_size_bytes,
            s.iteration,
            s.rtt_ms,
            if s.valid { "true" } else { "false" }
        );
    }
    if let Some(marker) = aborted {
        let _ = writeln!(
            out,
            "{},{},{},0.000,aborted",
            marker.cipher, marker.message_size_bytes, marker.iteration
        );
    }
    out
}

pub fn format_aggregated_csv(records: &[MrttRecord]) -> String {
    let mut out = String::with_capacity(64 + records.len() * 48);
    out.push_str(AGGREGATED_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{:.3},{:.3},{:.3},{:.3},{}",
            r.cipher, r.message_size_bytes, r.mrtt_ms, r.min_ms, r.max_ms, r.stddev_ms, r.n
        );
    }
    out
}

/// Writes the raw and aggregated CSV files. Deterministic: identical inputs
/// produce byte-identical files.
pub fn export_csv(
    samples: &[RttSample],
    records: &[MrttRecord],
    out_dir: &Path,
) -> Result<CsvPaths, ReportError> {
    export_csv_with_marker(samples, records, None, out_dir)
}

pub fn export_csv_with_marker(
    samples: &[RttSample],
    records: &[MrttRecord],
    aborted: Option<&AbortMarker>,
    out_dir: &Path,
) -> Result<CsvPaths, ReportError> {
    if samples.is_empty() && aborted.is_none() {
        return Err(ReportError::NoData);
    }
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let raw = out_dir.join(RAW_FILE);
    let aggregated = out_dir.join(AGGREGATED_FILE);
    write_file(&raw, &format_raw_csv(samples, aborted))?;
    write_file(&aggregated, &format_aggregated_csv(records))?;
    Ok(CsvPaths { raw, aggregated })
}

fn split_csv_line(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn parse_cipher(field: &str, line: usize) -> Result<CipherLabel, ReportError> {
    field
        .parse()
        .map_err(|e: String| ReportError::parse(line, e))
}

fn parse_u32(field: &str, what: &str, line: usize) -> Result<u32, ReportError> {
    field
        .parse()
        .map_err(|_| ReportError::parse(line, format!("bad {what}: '{field}'")))
}

fn parse_ms(field: &str, what: &str, line: usize) -> Result<f64, ReportError> {
    let value: f64 = field
        .parse()
        .map_err(|_| ReportError::parse(line, format!("bad {what}: '{field}'")))?;
    if !value.is_finite() || value < 0.0 {
        return Err(ReportError::parse(
            line,
            format!("{what} out of range: '{field}'"),
        ));
    }
    Ok(value)
}

/// Parses a raw-sample CSV back into samples plus the abort marker, if one
/// was flushed. The marker row, when present, must be the last row.
pub fn parse_raw_csv(text: &str) -> Result<(Vec<RttSample>, Option<AbortMarker>), ReportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == RAW_HEADER => {}
        Some((_, header)) => {
            return Err(ReportError::parse(
                1,
                format!("unexpected header '{}'", header.trim()),
            ))
        }
        None => return Err(ReportError::parse(1, "empty file")),
    }
    let mut samples = Vec::new();
    let mut aborted: Option<AbortMarker> = None;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if aborted.is_some() {
            return Err(ReportError::parse(
                line_no,
                "data after the abort marker row",
            ));
        }
        let fields = split_csv_line(line);
        if fields.len() != 5 {
            return Err(ReportError::parse(
                line_no,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let cipher = parse_cipher(fields[0], line_no)?;
        let message_size_bytes = parse_u32(fields[1], "message_size_bytes", line_no)?;
        let iteration = parse_u32(fields[2], "iteration", line_no)?;
        let rtt_ms = parse_ms(fields[3], "rtt_ms", line_no)?;
        match fields[4] {
            "true" | "false" => samples.push(RttSample {
                cipher,
                message_size_bytes,
                iteration,
                rtt_ms,
                valid: fields[4] == "true",
            }),
            "aborted" => {
                aborted = Some(AbortMarker {
                    cipher,
                    message_size_bytes,
                    iteration,
                    reason: String::new(),
                })
            }
            other => {
                return Err(ReportError::parse(
                    line_no,
                    format!("bad valid flag: '{other}'"),
                ))
            }
        }
    }
    Ok((samples, aborted))
}

/// Parses an aggregated CSV back into records.
pub fn parse_aggregated_csv(text: &str) -> Result<Vec<MrttRecord>, ReportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == AGGREGATED_HEADER => {}
        Some((_, header)) => {
            return Err(ReportError::parse(
                1,
                format!("unexpected header '{}'", header.trim()),
            ))
        }
        None => return Err(ReportError::parse(1, "empty file")),
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv_line(line);
        if fields.len() != 7 {
            return Err(ReportError::parse(
                line_no,
                format!("expected 7 fields, found {}", fields.len()),
            ));
        }
        records.push(MrttRecord {
            cipher: parse_cipher(fields[0], line_no)?,
            message_size_bytes: parse_u32(fields[1], "message_size_bytes", line_no)?,
            mrtt_ms: parse_ms(fields[2], "mrtt_ms", line_no)?,
            min_ms: parse_ms(fields[3], "min_ms", line_no)?,
            max_ms: parse_ms(fields[4], "max_ms", line_no)?,
            stddev_ms: parse_ms(fields[5], "stddev_ms", line_no)?,
            n: parse_u32(fields[6], "n", line_no)?,
        });
    }
    Ok(records)
}

fn record_ciphers(records: &[MrttRecord]) -> Vec<CipherLabel> {
    let mut ciphers = Vec::new();
    for r in records {
        if !ciphers.contains(&r.cipher) {
            ciphers.push(r.cipher);
        }
    }
    ciphers
}

fn record_sizes(records: &[MrttRecord]) -> Vec<u32> {
    let mut sizes: Vec<u32> = records.iter().map(|r| r.message_size_bytes).collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
}

pub fn format_mrtt_plot(records: &[MrttRecord]) -> String {
    let ciphers = record_ciphers(records);
    let mut out = String::from("# mean round-trip time by payload size (ms)\n");
    out.push_str("# size_bytes");
    for cipher in &ciphers {
        let _ = write!(out, "  {cipher}");
    }
    out.push('\n');
    for size in record_sizes(records) {
        let _ = write!(out, "{size}");
        for &cipher in &ciphers {
            match records
                .iter()
                .find(|r| r.cipher == cipher && r.message_size_bytes == size && r.n > 0)
            {
                Some(r) => {
                    let _ = write!(out, "  {:.3}", r.mrtt_ms);
                }
                None => out.push_str("  nan"),
            }
        }
        out.push('\n');
    }
    out
}

/// Returns `None` when no size has both an ASCON record and at least one
/// comparison record, in which case the PEI series cannot be computed.
pub fn format_pei_plot(records: &[MrttRecord]) -> Option<String> {
    let mut rows = Vec::new();
    for size in record_sizes(records) {
        match policy::compute_pei(records, size) {
            Ok(pei) => rows.push((size, pei)),
            Err(PolicyError::MissingData(_)) => continue,
            Err(e) => {
                log::warn!(target: "vitalmq::bench", "event=pei_skipped size={size} reason={e}");
                continue;
            }
        }
    }
    if rows.is_empty() {
        return None;
    }
    let mut out =
        String::from("# performance efficiency index: mean comparison MRTT / ascon128 MRTT\n");
    out.push_str("# size_bytes  pei\n");
    for (size, pei) in rows {
        let _ = writeln!(out, "{size}  {pei:.3}");
    }
    Some(out)
}

/// Writes the MRTT-vs-size series and, when computable, the PEI-vs-size
/// series. A missing ASCON series downgrades the PEI file to a warning.
pub fn emit_plot_data(records: &[MrttRecord], out_dir: &Path) -> Result<PlotPaths, ReportError> {
    if records.is_empty() {
        return Err(ReportError::NoData);
    }
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mrtt = out_dir.join(MRTT_PLOT_FILE);
    write_file(&mrtt, &format_mrtt_plot(records))?;
    let pei = match format_pei_plot(records) {
        Some(contents) => {
            let path = out_dir.join(PEI_PLOT_FILE);
            write_file(&path, &contents)?;
            Some(path)
        }
        None => {
            log::warn!(
                target: "vitalmq::bench",
                "event=pei_plot_skipped reason=no_ascon_comparison_pairs"
            );
            None
        }
    };
    Ok(PlotPaths { mrtt, pei })
}

pub fn format_metadata(outcome: &BenchOutcome) -> String {
    let cfg = &outcome.config;
    let mut out = String::new();
    let ts = |t: &chrono::DateTime<chrono::Utc>| {
        t.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
    };
    let _ = writeln!(out, "started_at={}", ts(&outcome.started_at));
    let _ = writeln!(out, "finished_at={}", ts(&outcome.finished_at));
    let _ = writeln!(out, "broker_addr={}", cfg.broker_addr);
    let _ = writeln!(out, "topic={}", cfg.topic);
    let _ = writeln!(out, "client_id={}", cfg.client_id);
    let ciphers: Vec<&str> = cfg.ciphers.iter().map(|c| c.name()).collect();
    let _ = writeln!(out, "ciphers={}", ciphers.join(","));
    let sizes: Vec<String> = cfg.sizes().iter().map(u32::to_string).collect();
    let _ = writeln!(out, "message_sizes_bytes={}", sizes.join(","));
    let _ = writeln!(out, "iterations_per_size={}", cfg.iterations_per_size);
    let _ = writeln!(out, "warmup_iterations={}", cfg.warmup_iterations);
    let _ = writeln!(out, "qos={}", cfg.qos.bits());
    let _ = writeln!(out, "fixed_vectors={}", cfg.fixed_vectors);
    let _ = writeln!(out, "iteration_timeout_ms={}", cfg.iteration_timeout_ms);
    let _ = writeln!(out, "samples={}", outcome.samples.len());
    let valid = outcome.samples.iter().filter(|s| s.valid).count();
    let _ = writeln!(out, "valid_samples={valid}");
    match &outcome.aborted {
        Some(marker) => {
            let _ = writeln!(out, "aborted=true");
            let _ = writeln!(out, "abort_cipher={}", marker.cipher);
            let _ = writeln!(out, "abort_message_size_bytes={}", marker.message_size_bytes);
            let _ = writeln!(out, "abort_iteration={}", marker.iteration);
            let _ = writeln!(out, "abort_reason={}", marker.reason.replace('\n', " "));
        }
        None => {
            let _ = writeln!(out, "aborted=false");
        }
    }
    out
}

/// Writes every artifact for one run: both CSVs (with the abort marker when
/// the run stopped early), plot data, and the metadata sidecar.
pub fn export_outcome(outcome: &BenchOutcome, out_dir: &Path) -> Result<ReportPaths, ReportError> {
    let csv = export_csv_with_marker(
        &outcome.samples,
        &outcome.records,
        outcome.aborted.as_ref(),
        out_dir,
    )?;
    let plots = if outcome.records.is_empty() {
        PlotPaths {
            mrtt: out_dir.join(MRTT_PLOT_FILE),
            pei: None,
        }
    } else {
        emit_plot_data(&outcome.records, out_dir)?
    };
    let metadata = out_dir.join(METADATA_FILE);
    write_file(&metadata, &format_metadata(outcome))?;
    Ok(ReportPaths {
        csv,
        plots,
        metadata,
    })
}
