//! Report files: structured `key = value` text with an embedded provenance
//! hash, delimited tables, and trajectory dumps.
//!
//! Every structured report starts with a schema line and ends with a hash of
//! everything above it, so downstream consumers can both re-parse the file
//! and cite exactly which report they validated against.  All numbers are
//! written through Rust's shortest round-trip float formatting, which keeps
//! byte-identical reruns trivial to check with `diff`.

use std::path::Path;

use crate::dynamics::Trajectory;
use crate::stream::fnv64;
use crate::{Error, Result};

/// Schema version stamped into every report.
pub const SCHEMA: u32 = 1;

/// Wrap a report body with the schema header and the trailing provenance
/// hash.  The hash covers the header and body bytes exactly as written.
pub fn finalize(kind: &str, body: &str) -> String {
    let mut out = format!("schema = {SCHEMA}\nreport.kind = {kind}\n");
    out.push_str(body);
    if !out.ends_with('\n') {
        out.push('\n');
    }
    let h = fnv64(out.as_bytes());
    out.push_str(&format!("report.hash = {h:016x}\n"));
    out
}

/// Parsed report: ordered key/value pairs (keys may repeat, e.g. flag and
/// trace lines).
#[derive(Clone, Debug)]
pub struct ParsedReport {
    pub pairs: Vec<(String, String)>,
    pub hash: u64,
}

impl ParsedReport {
    /// First value under a key.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::Invalid(format!("report is missing `{key}`")))?;
        v.parse()
            .map_err(|_| Error::Invalid(format!("report key `{key}` is not a number: {v}")))
    }
}

/// Re-parse a finalized report, verifying the schema line and the embedded
/// hash.
pub fn parse(text: &str) -> Result<ParsedReport> {
    let Some(hash_at) = text.rfind("report.hash = ") else {
        return Err(Error::Invalid("report has no provenance hash line".into()));
    };
    let hashed_part = &text[..hash_at];
    let hash_line = text[hash_at..].trim();
    let hex = hash_line
        .strip_prefix("report.hash = ")
        .expect("found by rfind");
    let declared = u64::from_str_radix(hex, 16)
        .map_err(|_| Error::Invalid(format!("malformed report hash `{hex}`")))?;
    if fnv64(hashed_part.as_bytes()) != declared {
        return Err(Error::Invalid(
            "report hash does not match its contents (file edited or truncated?)".into(),
        ));
    }
    let mut pairs = Vec::new();
    for line in hashed_part.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Invalid(format!("report line is not key = value: {line}")));
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    let schema: u32 = pairs
        .iter()
        .find(|(k, _)| k == "schema")
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| Error::Invalid("report has no schema line".into()))?;
    if schema != SCHEMA {
        return Err(Error::Invalid(format!(
            "report schema {schema} is not the supported {SCHEMA}"
        )));
    }
    Ok(ParsedReport { pairs, hash: declared })
}

/// Extract the embedded hash of a finalized report without re-verifying.
pub fn embedded_hash(text: &str) -> Option<u64> {
    let at = text.rfind("report.hash = ")?;
    u64::from_str_radix(text[at..].trim().strip_prefix("report.hash = ")?, 16).ok()
}

/// Trajectory dump: one row per accepted breakpoint with the post-event
/// state, jump rows marked.  The terminal state closes the table.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let d = traj.terminal_state.len();
    let mut out = String::from("time,jump");
    for k in 0..d {
        out.push_str(&format!(",x{k}"));
    }
    out.push('\n');
    for b in &traj.breakpoints {
        out.push_str(&format!("{},{}", b.time, b.jump as u8));
        for v in &b.post {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out.push_str(&format!("{},0", traj.terminal_time));
    for v in &traj.terminal_state {
        out.push_str(&format!(",{v}"));
    }
    out.push('\n');
    out
}

/// Manifest over a set of emitted files: name and content hash per file,
/// plus caller-supplied context lines (seed, config echo).  Deterministic —
/// no timestamps.
pub fn manifest(context: &[(String, String)], files: &[(String, &str)]) -> String {
    let mut body = String::new();
    for (k, v) in context {
        body.push_str(&format!("{k} = {v}\n"));
    }
    body.push_str(&format!("files = {}\n", files.len()));
    for (name, content) in files {
        body.push_str(&format!(
            "file.{name} = {:016x}\n",
            fnv64(content.as_bytes())
        ));
    }
    finalize("manifest", &body)
}

/// Write a file, creating parent directories as needed.
pub fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finalized_reports_roundtrip_and_detect_tampering() {
        let body = "qp.value = 0.9566789\nqp.flag = OK\nqp.flag = ALSO\n";
        let text = finalize("quasipotential", body);
        let parsed = parse(&text).unwrap();
        assert_eq!(parsed.get("schema"), Some("1"));
        assert_eq!(parsed.get("report.kind"), Some("quasipotential"));
        assert_eq!(parsed.get_f64("qp.value").unwrap(), 0.9566789);
        assert_eq!(
            parsed.pairs.iter().filter(|(k, _)| k == "qp.flag").count(),
            2
        );
        assert_eq!(embedded_hash(&text), Some(parsed.hash));

        let tampered = text.replace("0.9566789", "0.95");
        assert!(parse(&tampered).is_err());
        assert!(parse("no hash here\n").is_err());
    }

    #[test]
    fn float_display_round_trips_exactly() {
        for v in [0.1, 1.0 / 3.0, 2.0_f64.powi(-52), 123456.789012345, 1e300] {
            let s = format!("{v}");
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn manifest_lists_every_file_with_its_hash() {
        let m = manifest(
            &[("seed".into(), "42".into())],
            &[("a.csv".into(), "x\n"), ("b.csv".into(), "y\n")],
        );
        let parsed = parse(&m).unwrap();
        assert_eq!(parsed.get("files"), Some("2"));
        assert_eq!(
            parsed.get("file.a.csv"),
            Some(format!("{:016x}", fnv64(b"x\n")).as_str())
        );
        assert_eq!(parsed.get("seed"), Some("42"));
    }
}
