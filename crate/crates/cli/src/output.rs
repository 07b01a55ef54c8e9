//! Report envelopes and file emission. Every file carries the config hash and
//! the parameters of the run; nothing time- or host-dependent is written.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};

pub struct Provenance {
    pub verb: &'static str,
    pub config_path: Option<PathBuf>,
    pub config_hash: Option<String>,
    pub parameters: Value,
}

impl Provenance {
    fn header(&self) -> Value {
        json!({
            "verb": self.verb,
            "config": self.config_path.as_ref().map(|p| p.display().to_string()),
            "config_sha256": self.config_hash,
            "parameters": self.parameters,
        })
    }

    /// One-line `#` comment naming the config hash and parameters, placed
    /// above CSV headers.
    fn csv_comment(&self) -> String {
        format!(
            "# verb={} config_sha256={} parameters={}",
            self.verb,
            self.config_hash.as_deref().unwrap_or("none"),
            self.parameters
        )
    }

    pub fn write_json(&self, dir: &Path, name: &str, result: Value) -> Result<PathBuf> {
        let mut doc = self.header();
        doc["result"] = result;
        let path = dir.join(name);
        let mut f = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        serde_json::to_writer_pretty(&mut f, &doc)?;
        writeln!(f)?;
        f.flush()?;
        Ok(path)
    }

    pub fn write_csv<F>(&self, dir: &Path, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> memristor_ann::Result<()>,
    {
        let path = dir.join(name);
        let mut f = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(f, "{}", self.csv_comment())?;
        body(&mut f)?;
        f.flush()?;
        Ok(path)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}
