//! On-disk artifacts: effect draws, summaries, parameter snapshots and the
//! run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CfmError, Result};
use crate::gibbs::ParamSnapshot;

pub const MANIFEST: &str = "manifest.json";

/// SHA-256 of `"blob <len>\0" ++ bytes`, as git hashes file contents.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(blob_hash(&fs::read(path).map_err(|e| CfmError::io(path, e))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the output directory for outputs, as given for inputs.
    pub path: String,
    pub sha256: String,
}

/// Record of one command invocation, written after every other output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub wall_clock_seconds: f64,
    pub version: String,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: Option<&Path>, seed: Option<u64>) -> Self {
        RunManifest {
            subcommand: subcommand.into(),
            config: config.map(portable),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileEntry { path: portable(path), sha256: hash_file(path)? });
        Ok(())
    }
}

fn portable(path: &Path) -> String {
    path.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// An output directory under construction. Any stale manifest is removed
/// first, so a directory carries a manifest only after a complete run.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CfmError::io(root, e))?;
        let stale = root.join(MANIFEST);
        if stale.exists() {
            fs::remove_file(&stale).map_err(|e| CfmError::io(&stale, e))?;
        }
        Ok(OutputDir { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path for `rel`, creating parent directories and recording
    /// it as an output.
    pub fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CfmError::io(parent, e))?;
        }
        self.written.push(PathBuf::from(rel));
        Ok(path)
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel)?;
        fs::write(&path, bytes).map_err(|e| CfmError::io(&path, e))
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let path = self.root.join(rel);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CfmError::json(&path, e))?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_csv(&mut self, rel: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path(rel)?;
        let file = fs::File::create(&path).map_err(|e| CfmError::io(&path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        w.write_record(header).map_err(|e| CfmError::csv(&path, e))?;
        for row in rows {
            w.write_record(row).map_err(|e| CfmError::csv(&path, e))?;
        }
        w.flush().map_err(|e| CfmError::io(&path, e))
    }

    /// Hash every output and write the manifest through a temporary file.
    pub fn finish(mut self, mut manifest: RunManifest, started: std::time::Instant) -> Result<()> {
        self.written.sort();
        self.written.dedup();
        for rel in &self.written {
            manifest.outputs.push(FileEntry { path: portable(rel), sha256: hash_file(&self.root.join(rel))? });
        }
        manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
        let tmp = self.root.join(format!("{MANIFEST}.partial"));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CfmError::json(&tmp, e))?;
        let mut f = fs::File::create(&tmp).map_err(|e| CfmError::io(&tmp, e))?;
        f.write_all(text.as_bytes()).and_then(|_| f.write_all(b"\n")).map_err(|e| CfmError::io(&tmp, e))?;
        let dest = self.root.join(MANIFEST);
        fs::rename(&tmp, &dest).map_err(|e| CfmError::io(&dest, e))
    }
}

/// Rows of `sate_draws.csv`: header `sate_1..sate_q`, one row per draw.
pub fn sate_table(draws: &DMatrix<f64>) -> (Vec<String>, Vec<Vec<String>>) {
    let header = (1..=draws.ncols()).map(|k| format!("sate_{k}")).collect();
    let rows = draws.row_iter().map(|r| r.iter().map(|v| v.to_string()).collect()).collect();
    (header, rows)
}

pub fn read_sate_draws(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CfmError::csv(path, e))?;
    let q = r.headers().map_err(|e| CfmError::csv(path, e))?.len();
    let mut values = Vec::new();
    let mut m = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| CfmError::csv(path, e))?;
        for field in rec.iter() {
            values.push(field.parse::<f64>().map_err(|_| {
                CfmError::Validation(format!("{}: row {}: not a number: {field}", path.display(), m + 1))
            })?);
        }
        m += 1;
    }
    Ok(DMatrix::from_row_slice(m, q, &values))
}

/// Long-format snapshot tables keyed by parameter name: `mu`, `psi`
/// (draw, arm, outcome, value), `b` (… covariate …) and `lambda` (… factor …).
pub fn snapshot_tables(snapshots: &[ParamSnapshot]) -> Vec<(&'static str, Vec<String>, Vec<Vec<String>>)> {
    let head = |cols: &[&str]| cols.iter().map(|c| c.to_string()).collect::<Vec<_>>();
    let mut vectors = [Vec::new(), Vec::new()];
    let mut b = Vec::new();
    let mut lambda = Vec::new();
    for s in snapshots {
        for (t, arm) in s.arms.iter().enumerate() {
            for (k, (mu, psi)) in arm.mu.iter().zip(arm.psi.iter()).enumerate() {
                for (table, v) in vectors.iter_mut().zip([mu, psi]) {
                    table.push(vec![s.draw.to_string(), t.to_string(), (k + 1).to_string(), v.to_string()]);
                }
            }
            for k in 0..arm.b.nrows() {
                for c in 0..arm.b.ncols() {
                    b.push(vec![
                        s.draw.to_string(),
                        t.to_string(),
                        (k + 1).to_string(),
                        (c + 1).to_string(),
                        arm.b[(k, c)].to_string(),
                    ]);
                }
            }
            for k in 0..arm.lambda.nrows() {
                for h in 0..arm.lambda.ncols() {
                    lambda.push(vec![
                        s.draw.to_string(),
                        t.to_string(),
                        (k + 1).to_string(),
                        (h + 1).to_string(),
                        arm.lambda[(k, h)].to_string(),
                    ]);
                }
            }
        }
    }
    let [mu, psi] = vectors;
    vec![
        ("mu", head(&["draw", "arm", "outcome", "value"]), mu),
        ("psi", head(&["draw", "arm", "outcome", "value"]), psi),
        ("b", head(&["draw", "arm", "outcome", "covariate", "value"]), b),
        ("lambda", head(&["draw", "arm", "outcome", "factor", "value"]), lambda),
    ]
}

/// Per-arm loading draws read back from a long-format `lambda.csv`.
pub fn read_lambda_draws(path: &Path) -> Result<[Vec<DMatrix<f64>>; 2]> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CfmError::csv(path, e))?;
    let mut entries: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CfmError::csv(path, e))?;
        let bad = || CfmError::Validation(format!("{}: malformed row", path.display()));
        let int = |i: usize| rec.get(i).and_then(|v| v.parse::<usize>().ok()).ok_or_else(bad);
        let value = rec.get(4).and_then(|v| v.parse::<f64>().ok()).ok_or_else(bad)?;
        entries.push((int(0)?, int(1)?, int(2)?, int(3)?, value));
    }
    let q = entries.iter().map(|e| e.2).max().unwrap_or(0);
    let j = entries.iter().map(|e| e.3).max().unwrap_or(0);
    let mut out = [Vec::new(), Vec::new()];
    let mut index = std::collections::BTreeMap::new();
    for &(d, t, k, h, v) in &entries {
        if t > 1 || k == 0 || h == 0 {
            return Err(CfmError::Validation(format!("{}: index out of range", path.display())));
        }
        let m: &mut DMatrix<f64> = index.entry((t, d)).or_insert_with(|| DMatrix::zeros(q, j));
        m[(k - 1, h - 1)] = v;
    }
    for ((t, _), m) in index {
        out[t].push(m);
    }
    Ok(out)
}
