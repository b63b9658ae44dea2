use crate::error::CliError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

/// Output directory and the artifacts written to it so far.
pub struct Output {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
        if !dir.is_dir() {
            return Err(CliError::Model(format!("{} is not a directory", dir.display())));
        }
        Ok(Output { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn artifacts(&self) -> &[String] {
        &self.artifacts
    }

    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.dir.join(name);
        let io = |e: csv::Error| CliError::io(path.display(), e);
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::io(path.display(), e))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path.display(), e))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(path.display(), e))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// `x` when finite, JSON `null` otherwise.
pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// SHA-256 of `blob <len>\0<bytes>`, the content-addressing scheme of git
/// object ids.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
