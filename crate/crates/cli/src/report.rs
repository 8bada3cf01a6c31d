//! Output plumbing: JSON with full-precision floats, tidy CSV, and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

use crate::{CliResult, Failure};

pub const MANIFEST: &str = "manifest.json";

/// Pretty JSON whose floats carry 17 significant digits.
struct Precise<'a>(PrettyFormatter<'a>);

impl Formatter for Precise<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Precise(PrettyFormatter::new()));
    value.serialize(&mut ser).map_err(|e| Failure::Estimation(format!("serializing report: {e}")))?;
    buf.push(b'\n');
    Ok(buf)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Shortest representation that round-trips; empty for NaN.
pub fn csv_num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

/// Collects output files under one directory and records their digests.
pub struct OutputDir {
    root: PathBuf,
    digests: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf(), digests: BTreeMap::new() }
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| Failure::Validation(format!("writing {}: {e}", path.display())))?;
        self.digests.insert(name.to_string(), sha256_hex(bytes));
        log::info!("wrote {}", path.display());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.write(name, &to_json(value)?)
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish<F: Serialize>(self, mut manifest: RunManifest<F>) -> CliResult<()> {
        manifest.outputs = self.digests;
        manifest.finished_unix = unix_now();
        let bytes = to_json(&manifest)?;
        let path = self.root.join(MANIFEST);
        fs::write(&path, bytes).map_err(|e| Failure::Validation(format!("writing {}: {e}", path.display())))?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest<F> {
    pub command: &'static str,
    pub flags: F,
    /// SHA-256 of the input file, when there is one.
    pub input_digest: Option<String>,
    pub seeds: Vec<u64>,
    pub version: &'static str,
    pub threads: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Output file name to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl<F> RunManifest<F> {
    pub fn new(command: &'static str, flags: F, input_digest: Option<String>, seeds: Vec<u64>) -> Self {
        Self {
            command,
            flags,
            input_digest,
            seeds,
            version: env!("CARGO_PKG_VERSION"),
            threads: rayon::current_num_threads(),
            started_unix: unix_now(),
            finished_unix: 0,
            outputs: BTreeMap::new(),
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Reads the whole input so it can be both hashed and parsed.
pub fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::Validation(format!("reading {}: {e}", path.display())))
}
