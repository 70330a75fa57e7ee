//! Deterministic artifact writers: CSV tables, plain-text blocks, and
//! an appended JSON-lines summary.
//!
//! Floats are printed in their shortest round-trip decimal form (or a
//! fixed 12-significant-digit scientific form where a schema demands
//! it), and every writer emits rows in a deterministic order, so a
//! given configuration and seed always reproduce byte-identical files.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(path: &Path) -> std::io::Result<OutDir> {
        fs::create_dir_all(path)?;
        Ok(OutDir {
            root: path.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Write a CSV file (header plus rows) in one pass.
    pub fn csv<I>(&self, name: &str, header: &str, rows: I) -> std::io::Result<()>
    where
        I: IntoIterator<Item = String>,
    {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        writeln!(w, "{header}")?;
        for row in rows {
            writeln!(w, "{row}")?;
        }
        w.flush()
    }

    /// Write a plain-text artifact.
    pub fn text(&self, name: &str, content: &str) -> std::io::Result<()> {
        fs::write(self.path(name), content)
    }

    /// Append one record to `summary.jsonl`.  `serde_json` keeps object
    /// keys sorted, so records are byte-stable as well.
    pub fn record(&self, value: &serde_json::Value) -> std::io::Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path("summary.jsonl"))?;
        writeln!(f, "{value}")
    }
}

/// Shortest round-trip decimal form of a float.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Twelve-significant-digit scientific form (for the root tables).
pub fn sci12(x: f64) -> String {
    format!("{x:.11e}")
}
