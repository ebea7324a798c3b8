//! JSON report emission and run manifests.
//!
//! Reports are wrapped in an envelope
//! `{schema_version, manifest, warnings, non_finite_values, report}`. Field
//! order follows struct declaration order, floats are written with 17
//! significant digits (`{:.16e}`), and non-finite floats become `null` with a
//! warning added to the envelope.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_value::Value;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub struct ReportError {
    pub path: PathBuf,
    pub source: io::Error,
}

impl std::fmt::Display for ReportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.source)
    }
}

impl std::error::Error for ReportError {}

/// Pretty JSON with fixed-width scientific floats.
struct ReportFormatter {
    inner: PrettyFormatter<'static>,
}

impl Formatter for ReportFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_value(writer)
    }
}

fn count_non_finite(v: &Value) -> usize {
    match v {
        Value::F64(x) => usize::from(!x.is_finite()),
        Value::F32(x) => usize::from(!x.is_finite()),
        Value::Option(Some(b)) | Value::Newtype(b) => count_non_finite(b),
        Value::Seq(items) => items.iter().map(count_non_finite).sum(),
        Value::Map(m) => m
            .iter()
            .map(|(k, v)| count_non_finite(k) + count_non_finite(v))
            .sum(),
        _ => 0,
    }
}

/// Serializes `value` to the report JSON dialect.
pub fn to_json<T: Serialize>(value: &T) -> io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    let fmt = ReportFormatter {
        inner: PrettyFormatter::with_indent(b"  "),
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value.serialize(&mut ser).map_err(io::Error::other)?;
    buf.push(b'\n');
    Ok(buf)
}

/// SHA-256 digest of an input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest_file(path: &Path) -> io::Result<InputDigest> {
    let bytes = fs::read(path)?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub command: String,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub seed: u64,
    pub config: C,
    pub inputs: Vec<InputDigest>,
    /// Seconds since the Unix epoch; only recorded on request because it
    /// breaks byte-identical reruns.
    pub timestamp: Option<u64>,
}

impl<C: Serialize> RunManifest<C> {
    pub fn new(command: &str, seed: u64, config: C, inputs: Vec<InputDigest>, stamp: bool) -> Self {
        let timestamp = stamp.then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        });
        Self {
            command: command.to_string(),
            tool: env!("CARGO_PKG_NAME"),
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            inputs,
            timestamp,
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, M: Serialize, R: Serialize> {
    schema_version: u32,
    manifest: &'a M,
    warnings: Vec<String>,
    non_finite_values: usize,
    report: &'a R,
}

/// Wraps `report` with its manifest and returns the bytes to write.
pub fn render_report<M: Serialize, R: Serialize>(
    manifest: &M,
    report: &R,
    mut warnings: Vec<String>,
) -> io::Result<Vec<u8>> {
    let value = serde_value::to_value(report).map_err(io::Error::other)?;
    let non_finite = count_non_finite(&value);
    if non_finite > 0 {
        warnings.push(format!(
            "{non_finite} non-finite value(s) were written as null"
        ));
    }
    to_json(&Envelope {
        schema_version: SCHEMA_VERSION,
        manifest,
        warnings,
        non_finite_values: non_finite,
        report,
    })
}

/// Creates `dir` (or checks it exists when `mkdir` is false).
pub fn ensure_dir(dir: &Path, mkdir: bool) -> Result<(), ReportError> {
    if dir.is_dir() {
        return Ok(());
    }
    if !mkdir {
        return Err(ReportError {
            path: dir.to_path_buf(),
            source: io::Error::new(
                io::ErrorKind::NotFound,
                "output directory does not exist (--no-mkdir given)",
            ),
        });
    }
    fs::create_dir_all(dir).map_err(|source| ReportError {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    fs::write(path, bytes).map_err(|source| ReportError {
        path: path.to_path_buf(),
        source,
    })
}

/// Renders and writes a report envelope to `path`.
pub fn emit_report<M: Serialize, R: Serialize>(
    manifest: &M,
    report: &R,
    warnings: Vec<String>,
    path: &Path,
) -> Result<(), ReportError> {
    let bytes = render_report(manifest, report, warnings).map_err(|source| ReportError {
        path: path.to_path_buf(),
        source,
    })?;
    write_bytes(path, &bytes)
}

/// Formats a float for CSV output, matching the JSON float style.
pub fn csv_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        String::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Demo {
        b: f64,
        a: Option<f64>,
        list: Vec<f64>,
    }

    #[test]
    fn floats_have_seventeen_significant_digits() {
        let s = String::from_utf8(to_json(&0.1f64).unwrap()).unwrap();
        assert_eq!(s.trim(), "1.0000000000000001e-1");
        let back: f64 = s.trim().parse().unwrap();
        assert_eq!(back, 0.1);
    }

    #[test]
    fn field_order_follows_declaration() {
        let d = Demo {
            b: 1.0,
            a: None,
            list: vec![2.0],
        };
        let s = String::from_utf8(to_json(&d).unwrap()).unwrap();
        assert!(s.find("\"b\"").unwrap() < s.find("\"a\"").unwrap());
        let parsed: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(parsed["list"][0], 2.0);
    }

    #[test]
    fn nan_becomes_null_with_warning() {
        let d = Demo {
            b: f64::NAN,
            a: None,
            list: vec![f64::INFINITY, 1.0],
        };
        let bytes = render_report(&"m", &d, Vec::new()).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert!(v["report"]["b"].is_null());
        assert!(v["report"]["list"][0].is_null());
        assert_eq!(v["non_finite_values"], 2);
        assert_eq!(v["warnings"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn rendering_is_deterministic() {
        let d = Demo {
            b: 1.0 / 3.0,
            a: Some(2.0),
            list: vec![],
        };
        assert_eq!(
            render_report(&"m", &d, vec![]).unwrap(),
            render_report(&"m", &d, vec![]).unwrap()
        );
    }

    #[test]
    fn missing_directory_respects_no_mkdir() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("a/b");
        assert!(ensure_dir(&target, false).is_err());
        ensure_dir(&target, true).unwrap();
        assert!(target.is_dir());
    }
}
