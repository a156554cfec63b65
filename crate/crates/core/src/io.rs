//! Run outputs and their checksum manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::GeneratorConfig;
use crate::data::ObservationSet;
use crate::diffnet::format_f64;
use crate::simulators::{simulate_bacteria, simulate_feynman, simulate_kinetic, SimError};
use crate::trainer::{MetricReport, TrainRecord};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
}

pub const DATASET_FILE: &str = "dataset.csv";
pub const PARAMS_FILE: &str = "omega.params";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const ZETA_FILE: &str = "zeta.csv";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn generate(g: &GeneratorConfig, seed: u64) -> Result<ObservationSet, SimError> {
    match g {
        GeneratorConfig::Kinetic(p) => simulate_kinetic(p, seed),
        GeneratorConfig::Bacteria(p) => simulate_bacteria(p, seed),
        GeneratorConfig::Feynman(p) => simulate_feynman(p, seed),
    }
}

/// Collects files written by one stage, then records them in
/// `manifest_<stage>.txt`.
pub struct StageWriter {
    dir: PathBuf,
    stage: &'static str,
    files: Vec<(String, String)>,
}

impl StageWriter {
    pub fn new(dir: &Path, stage: &'static str) -> Result<Self, IoError> {
        fs::create_dir_all(dir).map_err(|source| IoError::File {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            stage,
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, IoError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| IoError::File {
            path: path.clone(),
            source,
        })?;
        self.files.push((name.to_string(), sha256_hex(contents.as_bytes())));
        Ok(path)
    }

    /// Writes the manifest: tool version, wall-clock seconds, the config
    /// snapshot, extra metadata, then one checksum line per file.
    pub fn finish(self, config: &BTreeMap<String, String>, extra: &BTreeMap<String, String>, wall_clock: f64) -> Result<PathBuf, IoError> {
        let mut s = String::new();
        let _ = writeln!(s, "stage={}", self.stage);
        let _ = writeln!(s, "tool={} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "wall_clock_s={wall_clock:.3}");
        for (k, v) in config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        for (k, v) in extra {
            let _ = writeln!(s, "meta.{k}={v}");
        }
        for (name, sum) in &self.files {
            let _ = writeln!(s, "file.{name}.sha256={sum}");
        }
        let path = self.dir.join(format!("manifest_{}.txt", self.stage));
        fs::write(&path, s).map_err(|source| IoError::File {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

/// Re-reads every file listed in a manifest and checks its digest.
/// Returns the number of files verified.
pub fn verify_manifest(path: &Path) -> Result<usize, IoError> {
    let text = read_text(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut n = 0;
    for line in text.lines() {
        let Some(rest) = line.strip_prefix("file.") else { continue };
        let (key, sum) = rest.split_once('=').ok_or_else(|| IoError::Manifest {
            path: path.to_path_buf(),
            msg: format!("malformed line `{line}`"),
        })?;
        let name = key.strip_suffix(".sha256").ok_or_else(|| IoError::Manifest {
            path: path.to_path_buf(),
            msg: format!("malformed line `{line}`"),
        })?;
        let bytes = fs::read(dir.join(name)).map_err(|source| IoError::File {
            path: dir.join(name),
            source,
        })?;
        if sha256_hex(&bytes) != sum {
            return Err(IoError::Manifest {
                path: path.to_path_buf(),
                msg: format!("checksum mismatch for `{name}`"),
            });
        }
        n += 1;
    }
    Ok(n)
}

/// `epoch,system_id,cr` rows.
pub fn history_csv(rec: &TrainRecord, system_ids: &[usize]) -> String {
    let mut s = String::from("epoch,system_id,cr\n");
    for (epoch, e) in rec.epochs.iter().enumerate() {
        for (cr, id) in e.cr.iter().zip(system_ids) {
            let _ = writeln!(s, "{epoch},{id},{}", format_f64(*cr));
        }
    }
    s
}

/// Per-system `k,t,c,c_hat,e[,c_star]` rows for the predicted steps.
pub fn series_csvs(report: &MetricReport) -> Vec<(String, String)> {
    report
        .series
        .iter()
        .map(|sr| {
            let t0 = sr.c.len() - sr.c_hat.len();
            let mut s = String::from("k,t,c,c_hat,e");
            if sr.c_star.is_some() {
                s.push_str(",c_star");
            }
            s.push('\n');
            for i in 0..sr.c_hat.len() {
                let k = t0 + i;
                let _ = write!(
                    s,
                    "{k},{},{},{},{}",
                    format_f64(sr.times[k]),
                    format_f64(sr.c[k]),
                    format_f64(sr.c_hat[i]),
                    format_f64(sr.e[i])
                );
                if let Some(cs) = &sr.c_star {
                    let _ = write!(s, ",{}", format_f64(cs[i]));
                }
                s.push('\n');
            }
            (format!("series_{}.csv", sr.system), s)
        })
        .collect()
}

/// `system_id,bin_left,bin_right,ratio`; identity functions have no rows.
pub fn zeta_csv(report: &MetricReport) -> String {
    let mut s = String::from("system_id,bin_left,bin_right,ratio\n");
    for (sr, z) in report.series.iter().zip(&report.zeta) {
        for (l, r, v) in z.to_csv_rows() {
            let _ = writeln!(s, "{},{},{},{}", sr.system, format_f64(l), format_f64(r), format_f64(v));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_input() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = StageWriter::new(dir.path(), "test").unwrap();
        w.write("a.txt", "hello\n").unwrap();
        w.write("b.txt", "world\n").unwrap();
        let m = w.finish(&BTreeMap::new(), &BTreeMap::new(), 0.0).unwrap();
        assert_eq!(verify_manifest(&m).unwrap(), 2);
        fs::write(dir.path().join("b.txt"), "changed\n").unwrap();
        assert!(matches!(verify_manifest(&m), Err(IoError::Manifest { .. })));
    }
}
