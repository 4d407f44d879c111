//! Artifact writer: every CSV gets a header row and a JSON sidecar carrying
//! the full configuration; all files land in the manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::record::{sha256_file, ManifestEntry};
use crate::error::Result;

pub struct Outputs {
    dir: PathBuf,
    config: serde_json::Value,
    files: Vec<PathBuf>,
}

/// Shortest round-trip text of a float, so equal runs give equal bytes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

impl Outputs {
    pub fn new(dir: &Path, config: serde_json::Value) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&mut self, name: &str, description: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path(&format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.files.push(path);
        self.sidecar(name, description, header)
    }

    /// Registers a CSV some module wrote itself and gives it a sidecar.
    pub fn adopt_csv(&mut self, name: &str, description: &str, header: &[&str]) -> Result<()> {
        self.files.push(self.path(&format!("{name}.csv")));
        let own = self.path(&format!("{name}.json"));
        if own.exists() {
            self.files.push(own);
        }
        self.sidecar(name, description, header)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(&format!("{name}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(value)?)?;
        self.files.push(path);
        Ok(())
    }

    fn sidecar(&mut self, name: &str, description: &str, header: &[&str]) -> Result<()> {
        let meta = json!({
            "file": format!("{name}.csv"),
            "description": description,
            "columns": header,
            "config": self.config,
            "code_version": env!("CARGO_PKG_VERSION"),
        });
        self.json(&format!("{name}.csv"), &meta)
    }

    pub fn manifest(&self) -> Result<Vec<ManifestEntry>> {
        let mut files = self.files.clone();
        files.sort();
        files.dedup();
        files.iter().map(|p| sha256_file(p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = Outputs::new(dir.path(), json!({"seed": 1})).unwrap();
        o.csv("x", "squares", &["n", "sq"], &[vec!["2".into(), num(4.0)]])
            .unwrap();
        let text = std::fs::read_to_string(dir.path().join("x.csv")).unwrap();
        assert_eq!(text, "n,sq\n2,4.0\n");
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("x.csv.json")).unwrap()).unwrap();
        assert_eq!(side["config"]["seed"], 1);
        assert_eq!(o.manifest().unwrap().len(), 2);
        assert_eq!(num(0.1), "0.1");
    }
}
