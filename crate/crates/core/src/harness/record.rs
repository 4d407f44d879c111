//! Check outcomes, run records, file manifests and the text report.

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// The Monte Carlo floor exceeds the signal the check needs.
    Unidentifiable,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Unidentifiable => "UNIDENTIFIABLE",
        })
    }
}

impl Status {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    /// Fail dominates, then unidentifiable; an empty list passes.
    pub fn combine(items: impl IntoIterator<Item = Status>) -> Status {
        items.into_iter().fold(Status::Pass, |acc, s| match (acc, s) {
            (Status::Fail, _) | (_, Status::Fail) => Status::Fail,
            (Status::Unidentifiable, _) | (_, Status::Unidentifiable) => Status::Unidentifiable,
            _ => Status::Pass,
        })
    }
}

/// One measured quantity against its tolerance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: String,
    pub status: Status,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, measured: f64, tolerance: impl Into<String>, status: Status) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance: tolerance.into(),
            status,
            detail: String::new(),
        }
    }

    /// Passes when `measured <= bound`.
    pub fn at_most(name: &str, measured: f64, bound: f64) -> Self {
        Self::new(
            name,
            measured,
            format!("<= {bound:e}"),
            Status::from_bool(measured <= bound),
        )
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// All checks of one acceptance criterion.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Criterion {
    pub id: u8,
    pub key: String,
    pub title: String,
    pub checks: Vec<Check>,
    /// Reported values that are not asserted.
    pub notes: Vec<String>,
    pub seconds: f64,
}

impl Criterion {
    pub fn status(&self) -> Status {
        Status::combine(self.checks.iter().map(|c| c.status))
    }

    /// One line: status, id, key, runtime and every sub-check.
    pub fn line(&self) -> String {
        let parts: Vec<String> = self
            .checks
            .iter()
            .map(|c| format!("{}={} ({:.4e} vs {})", c.name, c.status, c.measured, c.tolerance))
            .collect();
        format!(
            "{:<14} criterion {:>2} {:<22} [{:.1}s] {}",
            self.status().to_string(),
            self.id,
            self.key,
            self.seconds,
            parts.join("; ")
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<ManifestEntry> {
    let mut f = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        bytes += n as u64;
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    Ok(ManifestEntry {
        path: path.to_path_buf(),
        bytes,
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

/// Everything one `run` produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: String,
    pub config: serde_json::Value,
    pub code_version: String,
    pub wall_seconds: f64,
    pub criteria: Vec<Criterion>,
    pub manifest: Vec<ManifestEntry>,
}

impl RunRecord {
    pub fn status(&self) -> Status {
        Status::combine(self.criteria.iter().map(|c| c.status()))
    }

    pub fn any_failed(&self) -> bool {
        self.criteria.iter().any(|c| c.status() == Status::Fail)
    }
}

/// Plain-text table of every criterion and check.
pub fn emit_report(records: &[RunRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "run `{}` (version {}, {:.1}s): {}\n",
            r.kind,
            r.code_version,
            r.wall_seconds,
            r.status()
        ));
        for c in &r.criteria {
            out.push_str(&format!("  [{}] {} {}: {}\n", c.status(), c.id, c.key, c.title));
            for k in &c.checks {
                out.push_str(&format!(
                    "      {:<16} {:<34} measured {:<12.6e} tolerance {}",
                    k.status.to_string(),
                    k.name,
                    k.measured,
                    k.tolerance
                ));
                if !k.detail.is_empty() {
                    out.push_str(&format!("  ({})", k.detail));
                }
                out.push('\n');
            }
            for n in &c.notes {
                out.push_str(&format!("      note: {n}\n"));
            }
        }
        if !r.manifest.is_empty() {
            out.push_str("  outputs:\n");
            for m in &r.manifest {
                out.push_str(&format!(
                    "      {}  {:>10}  {}\n",
                    &m.sha256[..16],
                    m.bytes,
                    m.path.display()
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_combination() {
        use Status::*;
        assert_eq!(Status::combine([Pass, Unidentifiable]), Unidentifiable);
        assert_eq!(Status::combine([Pass, Pass]), Pass);
        assert_eq!(Status::combine([Pass, Fail, Unidentifiable]), Fail);
        assert_eq!(Status::combine([Unidentifiable]), Unidentifiable);
        assert_eq!(Status::combine(Vec::new()), Pass);
    }

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, b"abc").unwrap();
        let e = sha256_file(&p).unwrap();
        assert_eq!(
            e.sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(e.bytes, 3);
    }

    #[test]
    fn report_marks_unidentifiable() {
        let c = Criterion {
            id: 5,
            key: "stable-limit".into(),
            title: "t".into(),
            checks: vec![Check::new("fit", f64::NAN, "resolved", Status::Unidentifiable)],
            notes: vec!["c_hat candidates".into()],
            seconds: 0.0,
        };
        let r = RunRecord {
            kind: "charfn".into(),
            config: serde_json::Value::Null,
            code_version: "0".into(),
            wall_seconds: 0.0,
            criteria: vec![c],
            manifest: vec![],
        };
        let text = emit_report(&[r]);
        assert!(text.contains("UNIDENTIFIABLE") && text.contains("c_hat candidates"));
    }
}
