//! Body models, object crops and motion scripts on disk.
//!
//! A body model is a JSON description (`<stem>.json`) of the skeleton and
//! capsules plus a little-endian binary block (`<stem>.bin`) holding the skin
//! vertices. The JSON records the block's SHA-256 so a stale or swapped block is
//! rejected on load.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use semtrack_core::body::{BodyModel, Capsule, Dof, Joint, Skeleton, SkinVertex, SkinnedMesh};
use semtrack_core::synth::{Keyframe, MotionScript, ObjectCrop};
use semtrack_core::SemanticLabel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{format_err, IoContext, Result};
use crate::seqio::{
    decode_color, decode_depth, encode_color, encode_depth, expect_png, read_json, read_png,
    write_json, write_png,
};

pub const MODEL_FORMAT: &str = "semtrack-body";
pub const MODEL_VERSION: u32 = 1;
const VERTEX_MAGIC: &[u8; 4] = b"SKIN";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct JointRecord {
    name: String,
    parent: Option<usize>,
    offset: [f64; 3],
    dof: String,
    limits: [[f64; 2]; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CapsuleRecord {
    a: [f64; 3],
    b: [f64; 3],
    radius: f64,
    label: u8,
    bone: usize,
    blend_a: Option<usize>,
    blend_b: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelRecord {
    format: String,
    version: u32,
    joints: Vec<JointRecord>,
    center_joints: [usize; 6],
    bind: Vec<[f64; 3]>,
    capsules: Vec<CapsuleRecord>,
    vertex_count: usize,
    vertex_block: String,
    vertex_block_sha256: String,
}

fn dof_name(d: Dof) -> &'static str {
    match d {
        Dof::Fixed => "fixed",
        Dof::HingeX => "hinge-x",
        Dof::Ball => "ball",
    }
}

fn dof_from(name: &str) -> Option<Dof> {
    [Dof::Fixed, Dof::HingeX, Dof::Ball]
        .into_iter()
        .find(|d| dof_name(*d) == name)
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn encode_vertices(vertices: &[SkinVertex]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + vertices.len() * 72);
    out.extend_from_slice(VERTEX_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(vertices.len() as u32).to_le_bytes());
    for v in vertices {
        for x in arr(&v.rest).iter().chain(&arr(&v.normal)) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.push(v.label.id());
        out.push(v.weights.len() as u8);
        for &(j, w) in &v.weights {
            out.extend_from_slice(&(j as u16).to_le_bytes());
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.bytes.len() < N {
            return Err(format_err(self.path, "truncated vertex block"));
        }
        let (head, rest) = self.bytes.split_at(N);
        self.bytes = rest;
        Ok(head.try_into().expect("split length"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn vec3(&mut self) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

fn decode_vertices(bytes: &[u8], path: &Path) -> Result<Vec<SkinVertex>> {
    let mut c = Cursor { bytes, path };
    if &c.take::<4>()? != VERTEX_MAGIC {
        return Err(format_err(path, "not a vertex block"));
    }
    let version = u32::from_le_bytes(c.take()?);
    if version != MODEL_VERSION {
        return Err(format_err(
            path,
            format!("unsupported vertex block version {version}"),
        ));
    }
    let n = u32::from_le_bytes(c.take()?) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let rest = c.vec3()?;
        let normal = c.vec3()?;
        let [id, count] = c.take::<2>()?;
        let label = SemanticLabel::from_id(id)
            .ok_or_else(|| format_err(path, format!("invalid label id {id}")))?;
        let weights = (0..count)
            .map(|_| Ok((u16::from_le_bytes(c.take()?) as usize, c.f64()?)))
            .collect::<Result<Vec<_>>>()?;
        out.push(SkinVertex {
            rest,
            normal,
            weights,
            label,
        });
    }
    if !c.bytes.is_empty() {
        return Err(format_err(path, "trailing bytes after vertex block"));
    }
    Ok(out)
}

fn model_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("bin"))
}

/// Writes `<path>.json` and `<path>.bin`.
pub fn write_model(path: &Path, model: &BodyModel) -> Result<()> {
    model.validate()?;
    let (json_path, bin_path) = model_paths(path);
    let block = encode_vertices(&model.mesh.vertices);
    let record = ModelRecord {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        joints: model
            .skeleton
            .joints
            .iter()
            .map(|j| JointRecord {
                name: j.name.clone(),
                parent: j.parent,
                offset: arr(&j.offset),
                dof: dof_name(j.dof).into(),
                limits: j.limits.map(|(lo, hi)| [lo, hi]),
            })
            .collect(),
        center_joints: model.skeleton.center_joints,
        bind: model.mesh.bind.iter().map(arr).collect(),
        capsules: model
            .capsules
            .iter()
            .map(|c| CapsuleRecord {
                a: arr(&c.a),
                b: arr(&c.b),
                radius: c.radius,
                label: c.label.id(),
                bone: c.bone,
                blend_a: c.blend_a,
                blend_b: c.blend_b,
            })
            .collect(),
        vertex_count: model.mesh.vertices.len(),
        vertex_block: bin_path
            .file_name()
            .expect("model path has a file name")
            .to_string_lossy()
            .into_owned(),
        vertex_block_sha256: sha256_hex(&block),
    };
    fs::write(&bin_path, &block).at(&bin_path)?;
    write_json(&json_path, &record)
}

pub fn read_model(path: &Path) -> Result<BodyModel> {
    let (json_path, _) = model_paths(path);
    let r: ModelRecord = read_json(&json_path)?;
    if r.format != MODEL_FORMAT || r.version != MODEL_VERSION {
        return Err(format_err(
            &json_path,
            format!("unsupported model format {} v{}", r.format, r.version),
        ));
    }
    let bin_path = json_path.with_file_name(&r.vertex_block);
    let block = fs::read(&bin_path).at(&bin_path)?;
    if sha256_hex(&block) != r.vertex_block_sha256 {
        return Err(format_err(
            &bin_path,
            "vertex block checksum does not match the model description",
        ));
    }
    let vertices = decode_vertices(&block, &bin_path)?;
    if vertices.len() != r.vertex_count {
        return Err(format_err(
            &bin_path,
            "vertex count does not match the model description",
        ));
    }
    let joints = r
        .joints
        .into_iter()
        .map(|j| {
            let dof = dof_from(&j.dof)
                .ok_or_else(|| format_err(&json_path, format!("unknown dof {:?}", j.dof)))?;
            Ok(Joint {
                name: j.name,
                parent: j.parent,
                offset: Vector3::from(j.offset),
                dof,
                limits: j.limits.map(|[lo, hi]| (lo, hi)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let capsules = r
        .capsules
        .into_iter()
        .map(|c| {
            let label = SemanticLabel::from_id(c.label)
                .ok_or_else(|| format_err(&json_path, "invalid capsule label"))?;
            Ok(Capsule {
                a: Vector3::from(c.a),
                b: Vector3::from(c.b),
                radius: c.radius,
                label,
                bone: c.bone,
                blend_a: c.blend_a,
                blend_b: c.blend_b,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = BodyModel {
        skeleton: Skeleton::new(joints, r.center_joints)?,
        mesh: SkinnedMesh {
            vertices,
            bind: r.bind.into_iter().map(Vector3::from).collect(),
        },
        capsules,
    };
    model.validate()?;
    Ok(model)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CropRecord {
    name: String,
    width: usize,
    height: usize,
    color: String,
    depth: String,
    depth_unit: String,
}

/// Writes `<dir>/<name>.json` with `<name>_color.png` and `<name>_depth.png`
/// (16-bit millimeters, zero transparent).
pub fn write_crop(dir: &Path, crop: &ObjectCrop) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let record = CropRecord {
        name: crop.name.clone(),
        width: crop.width,
        height: crop.height,
        color: format!("{}_color.png", crop.name),
        depth: format!("{}_depth.png", crop.name),
        depth_unit: "mm".into(),
    };
    let (w, h) = (crop.width, crop.height);
    write_png(
        &dir.join(&record.color),
        w,
        h,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &encode_color(&crop.color),
    )?;
    write_png(
        &dir.join(&record.depth),
        w,
        h,
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &encode_depth(&crop.depth),
    )?;
    write_json(&dir.join(format!("{}.json", crop.name)), &record)
}

pub fn read_crop(json_path: &Path) -> Result<ObjectCrop> {
    let r: CropRecord = read_json(json_path)?;
    if r.depth_unit != "mm" {
        return Err(format_err(
            json_path,
            format!("unsupported depth unit {:?}", r.depth_unit),
        ));
    }
    let dir = json_path.parent().unwrap_or(Path::new("."));
    let (cp, dp) = (dir.join(&r.color), dir.join(&r.depth));
    let c = read_png(&cp)?;
    expect_png(
        &cp,
        &c,
        r.width,
        r.height,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
    )?;
    let d = read_png(&dp)?;
    expect_png(
        &dp,
        &d,
        r.width,
        r.height,
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
    )?;
    Ok(ObjectCrop::new(
        r.name,
        r.width,
        r.height,
        decode_color(&c.data),
        decode_depth(&d.data),
    )?)
}

/// Every crop description (`*.json`) in `dir`, sorted by file name.
pub fn read_crop_dir(dir: &Path) -> Result<Vec<ObjectCrop>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .map(|e| e.map(|e| e.path()).at(dir))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths.iter().map(|p| read_crop(p)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct KeyframeRecord {
    frame: usize,
    params: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MotionRecord {
    format: String,
    version: u32,
    name: String,
    keyframes: Vec<KeyframeRecord>,
}

pub const MOTION_FORMAT: &str = "semtrack-motion";

pub fn write_motion(path: &Path, script: &MotionScript) -> Result<()> {
    let record = MotionRecord {
        format: MOTION_FORMAT.into(),
        version: 1,
        name: script.name.clone(),
        keyframes: script
            .keyframes
            .iter()
            .map(|k| KeyframeRecord {
                frame: k.frame,
                params: k.params.clone(),
            })
            .collect(),
    };
    write_json(path, &record)
}

pub fn read_motion(path: &Path) -> Result<MotionScript> {
    let r: MotionRecord = read_json(path)?;
    if r.format != MOTION_FORMAT || r.version != 1 {
        return Err(format_err(
            path,
            format!("unsupported motion format {} v{}", r.format, r.version),
        ));
    }
    let keys = r
        .keyframes
        .into_iter()
        .map(|k| Keyframe {
            frame: k.frame,
            params: k.params,
        })
        .collect();
    Ok(MotionScript::new(r.name, keys)?)
}
