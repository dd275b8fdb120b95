//! Known-answer test vector files and their verification.
//!
//! Two formats live under `tests/data/`:
//!
//! * `ascon128_kat.txt` — `Count`/`Key`/`Nonce`/`PT`/`AD`/`CT` records,
//!   where `CT` is ciphertext followed by the 16-byte tag.
//! * `gcm_vectors.txt` — `Count`/`Key`/`IV`/`PT`/`AAD`/`CT`/`Tag` records
//!   with the tag separate and IVs of any length.
//!
//! Records are blank-line separated; both parsers reject unknown fields,
//! duplicate fields, and missing fields, so a truncated or reordered file
//! fails loudly instead of silently verifying fewer vectors.

use thiserror::Error;

use crate::aead::gcm;
use crate::ascon;

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl VectorError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        VectorError::Parse {
            line,
            message: message.into(),
        }
    }
}

/// One combined-ciphertext AEAD vector (`CT` = ciphertext ‖ tag).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AeadVector {
    pub count: u32,
    pub key: [u8; 16],
    pub nonce: [u8; 16],
    pub pt: Vec<u8>,
    pub ad: Vec<u8>,
    pub ct: Vec<u8>,
}

/// One GCM vector with a detached tag and a variable-length IV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GcmVector {
    pub count: u32,
    pub key: [u8; 16],
    pub iv: Vec<u8>,
    pub pt: Vec<u8>,
    pub aad: Vec<u8>,
    pub ct: Vec<u8>,
    pub tag: [u8; 16],
}

/// A `Name = hexvalue` record block, fields in file order.
struct RawRecord {
    first_line: usize,
    fields: Vec<(String, Vec<u8>, usize)>,
}

impl RawRecord {
    fn take(&mut self, name: &str) -> Result<Vec<u8>, VectorError> {
        let idx = self
            .fields
            .iter()
            .position(|(n, _, _)| n == name)
            .ok_or_else(|| {
                VectorError::at(self.first_line, format!("record is missing field '{name}'"))
            })?;
        Ok(self.fields.remove(idx).1)
    }

    fn finish(self) -> Result<(), VectorError> {
        if let Some((name, _, line)) = self.fields.first() {
            return Err(VectorError::at(*line, format!("unexpected field '{name}'")));
        }
        Ok(())
    }
}

fn exact_16(bytes: Vec<u8>, line: usize, name: &str) -> Result<[u8; 16], VectorError> {
    let len = bytes.len();
    bytes
        .try_into()
        .map_err(|_| VectorError::at(line, format!("{name} must be 16 bytes, got {len}")))
}

/// Parses the combined-ciphertext format (`Count`, `Key`, `Nonce`, `PT`,
/// `AD`, `CT`).
pub fn parse_aead_kat(text: &str) -> Result<Vec<AeadVector>, VectorError> {
    let mut vectors = Vec::new();
    for mut record in split_records_decimal_count(text, "Count")? {
        let line = record.raw.first_line;
        let key = exact_16(record.raw.take("Key")?, line, "Key")?;
        let nonce = exact_16(record.raw.take("Nonce")?, line, "Nonce")?;
        let pt = record.raw.take("PT")?;
        let ad = record.raw.take("AD")?;
        let ct = record.raw.take("CT")?;
        record.raw.finish()?;
        if ct.len() < ascon::TAG_LEN {
            return Err(VectorError::at(
                line,
                format!("CT shorter than a tag: {} bytes", ct.len()),
            ));
        }
        if ct.len() != pt.len() + ascon::TAG_LEN {
            return Err(VectorError::at(
                line,
                format!("CT length {} does not match PT length {} + 16", ct.len(), pt.len()),
            ));
        }
        vectors.push(AeadVector {
            count: record.count,
            key,
            nonce,
            pt,
            ad,
            ct,
        });
    }
    Ok(vectors)
}

/// Parses the detached-tag format (`Count`, `Key`, `IV`, `PT`, `AAD`, `CT`,
/// `Tag`).
pub fn parse_gcm_vectors(text: &str) -> Result<Vec<GcmVector>, VectorError> {
    let mut vectors = Vec::new();
    for mut record in split_records_decimal_count(text, "Count")? {
        let line = record.raw.first_line;
        let key = exact_16(record.raw.take("Key")?, line, "Key")?;
        let iv = record.raw.take("IV")?;
        let pt = record.raw.take("PT")?;
        let aad = record.raw.take("AAD")?;
        let ct = record.raw.take("CT")?;
        let tag = exact_16(record.raw.take("Tag")?, line, "Tag")?;
        record.raw.finish()?;
        if iv.is_empty() {
            return Err(VectorError::at(line, "IV must not be empty"));
        }
        if ct.len() != pt.len() {
            return Err(VectorError::at(
                line,
                format!("CT length {} does not match PT length {}", ct.len(), pt.len()),
            ));
        }
        vectors.push(GcmVector {
            count: record.count,
            key,
            iv,
            pt,
            aad,
            ct,
            tag,
        });
    }
    Ok(vectors)
}

struct CountedRecord {
    count: u32,
    raw: RawRecord,
}

/// Splits blank-line-separated records. `Count` is decimal and mandatory;
/// every other field is hex (possibly empty) and kept in file order.
fn split_records_decimal_count(
    text: &str,
    count_field: &str,
) -> Result<Vec<CountedRecord>, VectorError> {
    let mut records = Vec::new();
    let mut current_fields: Vec<(String, Vec<u8>, usize)> = Vec::new();
    let mut current_count: Option<(u32, usize)> = None;
    let mut first_line = 0usize;

    let flush = |records: &mut Vec<CountedRecord>,
                 fields: &mut Vec<(String, Vec<u8>, usize)>,
                 count: &mut Option<(u32, usize)>,
                 first_line: usize|
     -> Result<(), VectorError> {
        if fields.is_empty() && count.is_none() {
            return Ok(());
        }
        let (count_value, _) = count
            .take()
            .ok_or_else(|| VectorError::at(first_line, "record is missing field 'Count'"))?;
        records.push(CountedRecord {
            count: count_value,
            raw: RawRecord {
                first_line,
                fields: std::mem::take(fields),
            },
        });
        Ok(())
    };

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            flush(&mut records, &mut current_fields, &mut current_count, first_line)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let Some((name, value)) = line.split_once('=') else {
            return Err(VectorError::at(line_no, format!("expected 'Name = value', got '{line}'")));
        };
        let name = name.trim();
        let value = value.trim();
        if current_fields.is_empty() && current_count.is_none() {
            first_line = line_no;
        }
        if name == count_field {
            if current_count.is_some() {
                return Err(VectorError::at(line_no, "duplicate field 'Count'"));
            }
            let parsed = value
                .parse::<u32>()
                .map_err(|_| VectorError::at(line_no, format!("bad Count: '{value}'")))?;
            current_count = Some((parsed, line_no));
            continue;
        }
        let bytes = hex::decode(value)
            .map_err(|e| VectorError::at(line_no, format!("bad hex in '{name}': {e}")))?;
        if current_fields.iter().any(|(n, _, _)| n == name) {
            return Err(VectorError::at(line_no, format!("duplicate field '{name}'")));
        }
        current_fields.push((name.to_string(), bytes, line_no));
    }
    flush(&mut records, &mut current_fields, &mut current_count, first_line)?;
    Ok(records)
}

/// Outcome of running a vector file against the implementation.
#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub total: usize,
    pub passed: usize,
    pub failures: Vec<VectorFailure>,
}

#[derive(Clone, Debug)]
pub struct VectorFailure {
    pub count: u32,
    pub detail: String,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.passed == self.total && self.total > 0
    }

    fn record(&mut self, count: u32, result: Result<(), String>) {
        self.total += 1;
        match result {
            Ok(()) => self.passed += 1,
            Err(detail) => self.failures.push(VectorFailure { count, detail }),
        }
    }
}

impl std::fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{} vectors passed", self.passed, self.total)?;
        for failure in self.failures.iter().take(5) {
            write!(f, "\n  Count {}: {}", failure.count, failure.detail)?;
        }
        if self.failures.len() > 5 {
            write!(f, "\n  ... and {} more", self.failures.len() - 5)?;
        }
        Ok(())
    }
}

/// Runs every vector through the ASCON-128 implementation: the encryption
/// must reproduce `CT` exactly and the decryption must round-trip.
pub fn verify_ascon_kat(vectors: &[AeadVector]) -> VerifyReport {
    let mut report = VerifyReport::default();
    for v in vectors {
        report.record(v.count, check_ascon_vector(v));
    }
    report
}

fn check_ascon_vector(v: &AeadVector) -> Result<(), String> {
    let (ct, tag) = ascon::aead_encrypt(&v.key, &v.nonce, &v.ad, &v.pt);
    let mut combined = ct;
    combined.extend_from_slice(&tag);
    if combined != v.ct {
        return Err(format!(
            "encrypt mismatch: got {}, want {}",
            hex::encode_upper(&combined),
            hex::encode_upper(&v.ct)
        ));
    }
    let split = v.ct.len() - ascon::TAG_LEN;
    let tag_arr: [u8; 16] = v.ct[split..].try_into().expect("length checked at parse");
    match ascon::aead_decrypt(&v.key, &v.nonce, &v.ad, &v.ct[..split], &tag_arr) {
        Ok(pt) if pt == v.pt => Ok(()),
        Ok(_) => Err("decrypt produced different plaintext".into()),
        Err(_) => Err("decrypt rejected a valid vector".into()),
    }
}

/// Runs every vector through the AES-128-GCM implementation, both
/// directions.
pub fn verify_gcm_vectors(vectors: &[GcmVector]) -> VerifyReport {
    let mut report = VerifyReport::default();
    for v in vectors {
        report.record(v.count, check_gcm_vector(v));
    }
    report
}

fn check_gcm_vector(v: &GcmVector) -> Result<(), String> {
    let (ct, tag) = gcm::encrypt(&v.key, &v.iv, &v.aad, &v.pt);
    if ct != v.ct {
        return Err(format!(
            "ciphertext mismatch: got {}, want {}",
            hex::encode_upper(&ct),
            hex::encode_upper(&v.ct)
        ));
    }
    if tag != v.tag {
        return Err(format!(
            "tag mismatch: got {}, want {}",
            hex::encode_upper(tag),
            hex::encode_upper(v.tag)
        ));
    }
    match gcm::decrypt(&v.key, &v.iv, &v.aad, &v.ct, &v.tag) {
        Ok(pt) if pt == v.pt => Ok(()),
        Ok(_) => Err("decrypt produced different plaintext".into()),
        Err(_) => Err("decrypt rejected a valid vector".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ASCON_SNIPPET: &str = "\
Count = 1
Key = 000102030405060708090A0B0C0D0E0F
Nonce = 000102030405060708090A0B0C0D0E0F
PT =
AD =
CT = E355159F292911F794CB1432A0103A8A

Count = 34
Key = 000102030405060708090A0B0C0D0E0F
Nonce = 000102030405060708090A0B0C0D0E0F
PT = 00
AD =
CT = BC18C3F4E39ECA7222490D967C79BFFC92
";

    #[test]
    fn parses_the_combined_format() {
        let vectors = parse_aead_kat(ASCON_SNIPPET).unwrap();
        assert_eq!(vectors.len(), 2);
        assert_eq!(vectors[0].count, 1);
        assert!(vectors[0].pt.is_empty());
        assert!(vectors[0].ad.is_empty());
        assert_eq!(vectors[0].ct.len(), 16);
        assert_eq!(vectors[1].count, 34);
        assert_eq!(vectors[1].pt, vec![0x00]);
        assert_eq!(vectors[1].ct.len(), 17);
    }

    #[test]
    fn verification_passes_on_genuine_vectors() {
        let vectors = parse_aead_kat(ASCON_SNIPPET).unwrap();
        let report = verify_ascon_kat(&vectors);
        assert!(report.ok(), "{report}");
        assert_eq!(report.total, 2);
    }

    #[test]
    fn verification_flags_a_corrupted_vector() {
        let corrupted = ASCON_SNIPPET.replace(
            "CT = E355159F292911F794CB1432A0103A8A",
            "CT = E355159F292911F794CB1432A0103A8B",
        );
        let vectors = parse_aead_kat(&corrupted).unwrap();
        let report = verify_ascon_kat(&vectors);
        assert!(!report.ok());
        assert_eq!(report.passed, 1);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].count, 1);
        assert!(report.to_string().contains("Count 1"));
    }

    #[test]
    fn parser_rejects_structural_damage() {
        // missing CT field
        let missing = "Count = 1\nKey = 000102030405060708090A0B0C0D0E0F\n\
                       Nonce = 000102030405060708090A0B0C0D0E0F\nPT = \nAD = \n";
        assert!(parse_aead_kat(missing).is_err());
        // duplicate field
        let dup = format!("{ASCON_SNIPPET}\nCount = 3\nCount = 4\n");
        assert!(parse_aead_kat(&dup).is_err());
        // CT shorter than a tag
        let short = "Count = 1\nKey = 000102030405060708090A0B0C0D0E0F\n\
                     Nonce = 000102030405060708090A0B0C0D0E0F\nPT = \nAD = \nCT = AB\n";
        assert!(parse_aead_kat(short).is_err());
        // stray unknown field
        let extra = ASCON_SNIPPET.replace("CT = E355", "XX = 00\nCT = E355");
        assert!(extra != ASCON_SNIPPET && parse_aead_kat(&extra).is_err());
        // non-hex value
        let bad_hex = ASCON_SNIPPET.replace("PT = 00\n", "PT = zz\n");
        assert!(bad_hex != ASCON_SNIPPET && parse_aead_kat(&bad_hex).is_err());
        // CT/PT length disagreement
        let bad_len = ASCON_SNIPPET.replace("PT = 00\n", "PT = 0000\n");
        assert!(parse_aead_kat(&bad_len).is_err());
    }

    #[test]
    fn shipped_ascon_file_parses_completely() {
        let text = include_str!("../tests/data/ascon128_kat.txt");
        let vectors = parse_aead_kat(text).unwrap();
        assert_eq!(vectors.len(), 1089, "expected the full 33x33 grid");
        // counts are 1..=1089 in order
        assert_eq!(vectors.first().unwrap().count, 1);
        assert_eq!(vectors.last().unwrap().count, 1089);
    }

    #[test]
    fn shipped_gcm_file_parses_and_verifies() {
        let text = include_str!("../tests/data/gcm_vectors.txt");
        let vectors = parse_gcm_vectors(text).unwrap();
        assert_eq!(vectors.len(), 11);
        let report = verify_gcm_vectors(&vectors);
        assert!(report.ok(), "{report}");
    }

    #[test]
    fn gcm_parser_checks_its_invariants() {
        let good = "Count = 1\nKey = 00000000000000000000000000000000\n\
                    IV = 000000000000000000000000\nPT = \nAAD = \nCT = \n\
                    Tag = 58E2FCCEFA7E3061367F1D57A4E7455A\n";
        assert_eq!(parse_gcm_vectors(good).unwrap().len(), 1);
        let empty_iv = good.replace("IV = 000000000000000000000000", "IV = ");
        assert!(parse_gcm_vectors(&empty_iv).is_err());
        let short_tag = good.replace("Tag = 58E2FCCEFA7E3061367F1D57A4E7455A", "Tag = 58E2");
        assert!(parse_gcm_vectors(&short_tag).is_err());
    }
}
