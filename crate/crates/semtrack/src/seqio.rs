//! Sequence directories: per-frame PNG color, depth (16-bit millimeters) and
//! label images plus a JSON manifest.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use semtrack_core::{CameraIntrinsics, LabelMap, RgbdFrame, SemanticLabel};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, Error, IoContext, Result};

pub const SEQUENCE_FORMAT: &str = "semtrack-sequence";
pub const SEQUENCE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl From<CameraIntrinsics> for Intrinsics {
    fn from(k: CameraIntrinsics) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl TryFrom<Intrinsics> for CameraIntrinsics {
    type Error = semtrack_core::Error;

    fn try_from(k: Intrinsics) -> Result<Self, Self::Error> {
        CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub format: String,
    pub version: u32,
    pub intrinsics: Intrinsics,
    pub frames: usize,
    pub max_range: f32,
    pub has_labels: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_names: Option<Vec<String>>,
    /// Ground-truth joint positions per frame, meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints: Option<Vec<Vec<[f64; 3]>>>,
    /// Ground-truth pose parameters per frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses: Option<Vec<Vec<f64>>>,
    /// Free-form description of how the sequence was made.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

/// A sequence in memory with whatever ground truth it carries.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredSequence {
    pub frames: Vec<RgbdFrame>,
    pub labels: Option<Vec<LabelMap>>,
    pub joint_names: Option<Vec<String>>,
    pub joints: Option<Vec<Vec<Vector3<f64>>>>,
    pub poses: Option<Vec<Vec<f64>>>,
    pub provenance: Option<serde_json::Value>,
    pub config_digest: Option<String>,
}

impl StoredSequence {
    pub fn new(frames: Vec<RgbdFrame>) -> Self {
        Self {
            frames,
            labels: None,
            joint_names: None,
            joints: None,
            poses: None,
            provenance: None,
            config_digest: None,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        let Some(first) = self.frames.first() else {
            return Err(Error::Mismatch("sequence has no frames".into()));
        };
        if self
            .frames
            .iter()
            .any(|f| f.intrinsics != first.intrinsics || f.max_range != first.max_range)
        {
            return Err(Error::Mismatch(
                "frames disagree on intrinsics or range".into(),
            ));
        }
        let aligned = |len: Option<usize>| len.is_none_or(|l| l == n);
        if !aligned(self.labels.as_ref().map(Vec::len))
            || !aligned(self.joints.as_ref().map(Vec::len))
            || !aligned(self.poses.as_ref().map(Vec::len))
        {
            return Err(Error::Mismatch(format!(
                "ground truth is not aligned with {n} frames"
            )));
        }
        if let Some(labels) = &self.labels {
            if labels
                .iter()
                .any(|l| (l.width, l.height) != (first.width(), first.height()))
            {
                return Err(Error::Mismatch("label maps do not match frame size".into()));
            }
        }
        Ok(())
    }

    /// Digest of the manifest contents; identifies the sequence.
    pub fn manifest(&self) -> Result<SequenceManifest> {
        self.validate()?;
        let f = &self.frames[0];
        Ok(SequenceManifest {
            format: SEQUENCE_FORMAT.into(),
            version: SEQUENCE_VERSION,
            intrinsics: f.intrinsics.into(),
            frames: self.frames.len(),
            max_range: f.max_range,
            has_labels: self.labels.is_some(),
            joint_names: self.joint_names.clone(),
            joints: self.joints.as_ref().map(|j| {
                j.iter()
                    .map(|f| f.iter().map(|p| [p.x, p.y, p.z]).collect())
                    .collect()
            }),
            poses: self.poses.clone(),
            provenance: self.provenance.clone(),
            config_digest: self.config_digest.clone(),
        })
    }
}

pub fn color_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("color_{i:05}.png"))
}

pub fn depth_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("depth_{i:05}.png"))
}

pub fn labels_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("labels_{i:05}.png"))
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub(crate) fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<()> {
    let file = File::create(path).at(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut w = enc.write_header().map_err(|e| format_err(path, e))?;
    w.write_image_data(data).map_err(|e| format_err(path, e))?;
    w.finish().map_err(|e| format_err(path, e))
}

pub(crate) struct RawPng {
    pub width: usize,
    pub height: usize,
    pub color: png::ColorType,
    pub depth: png::BitDepth,
    pub data: Vec<u8>,
}

pub(crate) fn read_png(path: &Path) -> Result<RawPng> {
    let file = File::open(path).at(path)?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| format_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| format_err(path, e))?;
    buf.truncate(info.buffer_size());
    Ok(RawPng {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data: buf,
    })
}

pub(crate) fn expect_png(
    path: &Path,
    png: &RawPng,
    w: usize,
    h: usize,
    color: png::ColorType,
    depth: png::BitDepth,
) -> Result<()> {
    if (png.width, png.height) != (w, h) || png.color != color || png.depth != depth {
        return Err(format_err(
            path,
            format!(
                "expected {w}x{h} {color:?}/{depth:?}, found {}x{} {:?}/{:?}",
                png.width, png.height, png.color, png.depth
            ),
        ));
    }
    Ok(())
}

pub(crate) fn encode_color(color: &[[f32; 3]]) -> Vec<u8> {
    color
        .iter()
        .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect()
}

pub(crate) fn decode_color(bytes: &[u8]) -> Vec<[f32; 3]> {
    bytes
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]].map(|b| b as f32 / 255.0))
        .collect()
}

/// Meters to big-endian 16-bit millimeters.
pub(crate) fn encode_depth(depth: &[f32]) -> Vec<u8> {
    depth
        .iter()
        .flat_map(|d| ((d * 1000.0).round().clamp(0.0, 65535.0) as u16).to_be_bytes())
        .collect()
}

pub(crate) fn decode_depth(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 1000.0)
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

/// Writes `seq` into `dir` (created if needed). Depth is stored in whole
/// millimeters.
pub fn write_sequence(dir: &Path, seq: &StoredSequence) -> Result<()> {
    let manifest = seq.manifest()?;
    fs::create_dir_all(dir).at(dir)?;
    let (w, h) = (manifest.intrinsics.width, manifest.intrinsics.height);
    for (i, f) in seq.frames.iter().enumerate() {
        write_png(
            &color_path(dir, i),
            w,
            h,
            png::ColorType::Rgb,
            png::BitDepth::Eight,
            &encode_color(&f.color),
        )?;
        write_png(
            &depth_path(dir, i),
            w,
            h,
            png::ColorType::Grayscale,
            png::BitDepth::Sixteen,
            &encode_depth(&f.depth),
        )?;
        if let Some(labels) = &seq.labels {
            let ids: Vec<u8> = labels[i].labels.iter().map(|l| l.id()).collect();
            write_png(
                &labels_path(dir, i),
                w,
                h,
                png::ColorType::Grayscale,
                png::BitDepth::Eight,
                &ids,
            )?;
        }
    }
    write_json(&manifest_path(dir), &manifest)
}

/// SHA-256 over the manifest and every frame file, in a fixed order.
pub fn sequence_digest(dir: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let m = read_manifest(dir)?;
    let mut h = Sha256::new();
    let mut feed = |p: PathBuf| -> Result<()> {
        let bytes = fs::read(&p).at(&p)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
        Ok(())
    };
    feed(manifest_path(dir))?;
    for i in 0..m.frames {
        feed(color_path(dir, i))?;
        feed(depth_path(dir, i))?;
        if m.has_labels {
            feed(labels_path(dir, i))?;
        }
    }
    Ok(format!("{:x}", h.finalize()))
}

pub fn read_manifest(dir: &Path) -> Result<SequenceManifest> {
    let path = manifest_path(dir);
    let m: SequenceManifest = read_json(&path)?;
    if m.format != SEQUENCE_FORMAT || m.version != SEQUENCE_VERSION {
        return Err(format_err(
            &path,
            format!("unsupported sequence format {} v{}", m.format, m.version),
        ));
    }
    Ok(m)
}

pub fn read_sequence(dir: &Path) -> Result<StoredSequence> {
    let m = read_manifest(dir)?;
    let k = CameraIntrinsics::try_from(m.intrinsics)?;
    let (w, h) = (k.width, k.height);
    let mut frames = Vec::with_capacity(m.frames);
    let mut labels = m.has_labels.then(Vec::new);
    for i in 0..m.frames {
        let cp = color_path(dir, i);
        let c = read_png(&cp)?;
        expect_png(&cp, &c, w, h, png::ColorType::Rgb, png::BitDepth::Eight)?;
        let dp = depth_path(dir, i);
        let d = read_png(&dp)?;
        expect_png(
            &dp,
            &d,
            w,
            h,
            png::ColorType::Grayscale,
            png::BitDepth::Sixteen,
        )?;
        let depth = decode_depth(&d.data)
            .into_iter()
            .map(|v| v.min(m.max_range))
            .collect();
        frames.push(RgbdFrame::new(
            k,
            decode_color(&c.data),
            depth,
            m.max_range,
        )?);
        if let Some(labels) = labels.as_mut() {
            let lp = labels_path(dir, i);
            let l = read_png(&lp)?;
            expect_png(
                &lp,
                &l,
                w,
                h,
                png::ColorType::Grayscale,
                png::BitDepth::Eight,
            )?;
            let ids = l
                .data
                .iter()
                .map(|id| {
                    SemanticLabel::from_id(*id)
                        .ok_or_else(|| format_err(&lp, format!("invalid label id {id}")))
                })
                .collect::<Result<Vec<_>>>()?;
            labels.push(LabelMap::from_labels(w, h, ids)?);
        }
    }
    let seq = StoredSequence {
        frames,
        labels,
        joint_names: m.joint_names,
        joints: m.joints.map(|j| {
            j.iter()
                .map(|f| f.iter().map(|p| Vector3::from(*p)).collect())
                .collect()
        }),
        poses: m.poses,
        provenance: m.provenance,
        config_digest: m.config_digest,
    };
    seq.validate()?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_and_color_codecs_round_trip() {
        let d = [0.0, 1.2345, 4.5];
        let back = decode_depth(&encode_depth(&d));
        for (a, b) in d.iter().zip(&back) {
            assert!((a - b).abs() <= 0.0005);
        }
        let c = [[0.0, 0.5, 1.0]];
        let back = decode_color(&encode_color(&c));
        assert!((back[0][1] - 0.5).abs() < 0.5 / 255.0 + 1e-6);
    }
}
