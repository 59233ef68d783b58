//! Tracking results, accuracy curves and run manifests.
//!
//! Per-frame tracking CSV, one row per frame and joint:
//!
//! ```text
//! frame,mode,inlier_fraction,joint_name,x,y,z,err_m
//! ```
//!
//! `err_m` is empty when the sequence has no ground-truth joints. Curve CSVs
//! hold `threshold_m,fraction`; comparison CSVs hold `threshold_m,a,b,delta`
//! with a final `auc` row.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use semtrack_core::eval::{AccuracyCurve, RunComparison};
use semtrack_core::tracker::FrameReport;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{format_err, Error, IoContext, Result};
use crate::formats::sha256_hex;
use crate::seqio::{read_json, write_json};

pub const RUN_FORMAT: &str = "semtrack-run";
pub const RESULTS_FILE: &str = "results.csv";
pub const RUN_MANIFEST: &str = "run.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrackRow {
    frame: usize,
    mode: String,
    inlier_fraction: f64,
    joint_name: String,
    x: f64,
    y: f64,
    z: f64,
    err_m: Option<f64>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Mismatch(format!("csv: {e}"))
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Renders tracking reports as CSV text.
pub fn track_csv(
    reports: &[FrameReport],
    joint_names: &[String],
    gt: Option<&[Vec<Vector3<f64>>]>,
) -> Result<Vec<u8>> {
    if gt.is_some_and(|g| g.len() != reports.len()) {
        return Err(Error::Mismatch(
            "ground truth does not cover every tracked frame".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, r) in reports.iter().enumerate() {
        if r.joints.len() != joint_names.len() {
            return Err(Error::Mismatch("joint names do not match the model".into()));
        }
        for (j, p) in r.joints.iter().enumerate() {
            w.serialize(TrackRow {
                frame: i,
                mode: r.mode.name().into(),
                inlier_fraction: round6(r.inlier_fraction),
                joint_name: joint_names[j].clone(),
                x: round6(p.x),
                y: round6(p.y),
                z: round6(p.z),
                err_m: gt.map(|g| round6((p - g[i][j]).norm())),
            })
            .map_err(csv_err)?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::Mismatch(format!("csv: {e}")))
}

/// Joint estimates and per-frame summaries read back from a results CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackTable {
    pub joint_names: Vec<String>,
    pub modes: Vec<String>,
    pub inlier_fraction: Vec<f64>,
    pub joints: Vec<Vec<Vector3<f64>>>,
}

pub fn read_track_csv(path: &Path) -> Result<TrackTable> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e))?;
    let mut t = TrackTable {
        joint_names: vec![],
        modes: vec![],
        inlier_fraction: vec![],
        joints: vec![],
    };
    for row in r.deserialize() {
        let row: TrackRow = row.map_err(|e| format_err(path, e))?;
        if row.frame == t.joints.len() {
            t.modes.push(row.mode);
            t.inlier_fraction.push(row.inlier_fraction);
            t.joints.push(vec![]);
        } else if row.frame + 1 != t.joints.len() {
            return Err(format_err(
                path,
                format!("frame {} out of order", row.frame),
            ));
        }
        let frame = t.joints.len() - 1;
        let j = t.joints[frame].len();
        if frame == 0 {
            t.joint_names.push(row.joint_name);
        } else if t.joint_names.get(j) != Some(&row.joint_name) {
            return Err(format_err(
                path,
                format!("unexpected joint {} in frame {frame}", row.joint_name),
            ));
        }
        t.joints[frame].push(Vector3::new(row.x, row.y, row.z));
    }
    if t.joints.iter().any(|f| f.len() != t.joint_names.len()) {
        return Err(format_err(path, "frames have differing joint counts"));
    }
    Ok(t)
}

pub fn curve_csv(curve: &AccuracyCurve) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold_m", "fraction"])
        .map_err(csv_err)?;
    for (t, f) in curve.thresholds.iter().zip(&curve.fraction) {
        w.write_record([format!("{t:.4}"), format!("{f:.6}")])
            .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Mismatch(format!("csv: {e}")))
}

pub fn comparison_csv(c: &RunComparison) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold_m", "a", "b", "delta"])
        .map_err(csv_err)?;
    for i in 0..c.thresholds.len() {
        w.write_record([
            format!("{:.4}", c.thresholds[i]),
            format!("{:.6}", c.a[i]),
            format!("{:.6}", c.b[i]),
            format!("{:.6}", c.delta[i]),
        ])
        .map_err(csv_err)?;
    }
    w.write_record([
        "auc".into(),
        format!("{:.6}", c.auc_a),
        format!("{:.6}", c.auc_b),
        format!("{:.6}", c.auc_delta),
    ])
    .map_err(csv_err)?;
    w.into_inner()
        .map_err(|e| Error::Mismatch(format!("csv: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

/// Written next to every set of results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub config: RunConfig,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_digest: Option<String>,
    pub artifacts: Vec<Artifact>,
    #[serde(default)]
    pub diagnostics: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            format: RUN_FORMAT.into(),
            version: 1,
            command: command.into(),
            config: config.clone(),
            config_digest: config.digest(),
            sequence_digest: None,
            checkpoint_digest: None,
            artifacts: vec![],
            diagnostics: serde_json::Value::Null,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_MANIFEST);
        let m: Self = read_json(&path)?;
        if m.format != RUN_FORMAT || m.version != 1 {
            return Err(format_err(&path, "not a run manifest"));
        }
        Ok(m)
    }

    /// Checks that every listed artifact is present and unchanged and that
    /// the embedded config still hashes to the recorded digest.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        if self.config.digest() != self.config_digest {
            return Err(Error::Mismatch(format!(
                "{}: config digest does not match its config",
                dir.display()
            )));
        }
        for a in &self.artifacts {
            let path = dir.join(&a.file);
            let bytes = fs::read(&path).at(&path)?;
            if sha256_hex(&bytes) != a.sha256 {
                return Err(Error::Mismatch(format!(
                    "{}: contents do not match the run manifest",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

/// Collects files for one run directory and commits them together.
///
/// Files are staged under temporary names and renamed into place only by
/// [`RunWriter::finish`], so a failed run leaves no partial results behind.
pub struct RunWriter {
    dir: PathBuf,
    staged: Vec<(PathBuf, PathBuf)>,
    pub manifest: RunManifest,
}

impl RunWriter {
    pub fn new(dir: &Path, manifest: RunManifest) -> Result<Self> {
        fs::create_dir_all(dir).at(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            staged: vec![],
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn add(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let tmp = self.dir.join(format!(".{name}.partial"));
        fs::write(&tmp, bytes).at(&tmp)?;
        self.staged.push((tmp, self.dir.join(name)));
        self.manifest.artifacts.push(Artifact {
            file: name.into(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        for (tmp, dst) in std::mem::take(&mut self.staged) {
            fs::rename(&tmp, &dst).at(&dst)?;
        }
        write_json(&self.dir.join(RUN_MANIFEST), &self.manifest)?;
        Ok(self.manifest.clone())
    }
}

impl Drop for RunWriter {
    fn drop(&mut self) {
        for (tmp, _) in &self.staged {
            let _ = fs::remove_file(tmp);
        }
    }
}
