//! Deterministic CSV emission. Every artifact starts with a provenance
//! comment naming the config hash, the effective master seed, and the git
//! revision, followed by a header row. Numbers are formatted with the
//! shortest round-trip representation so reruns are byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use epi_smc_core::error::{Error, Result};

/// FNV-1a over the canonical config JSON; stable across platforms and has no
/// dependency footprint. This fingerprints the run, it is not a checksum.
pub fn config_hash(canonical_json: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in canonical_json.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn git_revision() -> String {
    Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|out| out.status.success())
        .and_then(|out| String::from_utf8(out.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Collects rows in memory and writes them in one pass, so fan-out order
/// never reaches the file.
pub struct Artifact {
    path: PathBuf,
    lines: Vec<String>,
}

impl Artifact {
    pub fn new(dir: &Path, name: &str, provenance: &str, header: &str) -> Self {
        Artifact {
            path: dir.join(name),
            lines: vec![format!("# {provenance}"), header.to_string()],
        }
    }

    pub fn push(&mut self, row: String) {
        self.lines.push(row);
    }

    pub fn write(self) -> Result<PathBuf> {
        let mut out = fs::File::create(&self.path).map_err(Error::from)?;
        for line in &self.lines {
            writeln!(out, "{line}").map_err(Error::from)?;
        }
        Ok(self.path)
    }
}

/// Shortest decimal that round-trips, `inf`/`-inf`/`nan` spelled out.
pub fn fmt(value: f64) -> String {
    if value.is_nan() {
        "nan".into()
    } else if value.is_infinite() {
        if value > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        let mut buffer = ryu_style(value);
        if buffer.ends_with(".0") {
            buffer.truncate(buffer.len() - 2);
        }
        buffer
    }
}

fn ryu_style(value: f64) -> String {
    // `{}` on f64 is already the shortest representation that round-trips.
    format!("{value}")
}
