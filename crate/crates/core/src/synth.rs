//! Synthetic RGB-D sequences with exact labels, procedural occluding
//! objects, and object insertion for augmentation.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::Vector3;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, RngCore};

use crate::body::{forward_kinematics, joint_positions, BodyModel, Pose, PosedCapsule};
use crate::error::{bail, Result};
use crate::fcn::TrainingSet;
use crate::geometry::{resize_and_normalize, CameraIntrinsics, LabelMap, RgbdFrame, SemanticLabel};
use crate::tensor::Tensor;

/// Depth of the backdrop behind the subject, meters.
pub const FAR_PLANE: f32 = 4.0;

/// Default sequence length.
pub const DEFAULT_FRAMES: usize = 300;

/// Flat colors of one subject and its backdrop.
#[derive(Clone, Debug, PartialEq)]
pub struct Palette {
    pub background: [f32; 3],
    /// Indexed by `label.index() - 1`.
    pub parts: [[f32; 3]; 6],
}

impl Palette {
    /// Skin-toned head, one shirt color for torso and arms, one trouser
    /// color for both legs, and a muted backdrop.
    pub fn random(seed: u64) -> Self {
        let mut rng = crate::rng::seeded(seed);
        let mut pick =
            |lo: f32, hi: f32| -> [f32; 3] { core::array::from_fn(|_| rng.random_range(lo..hi)) };
        let skin_base: f32 = pick(0.35, 0.85)[0];
        let skin = [skin_base, skin_base * 0.8, skin_base * 0.65];
        let shirt = pick(0.05, 0.95);
        let trousers = pick(0.05, 0.7);
        let background = pick(0.3, 0.8);
        Self {
            background,
            parts: [skin, shirt, shirt, shirt, trousers, trousers],
        }
    }

    pub fn color(&self, label: SemanticLabel) -> [f32; 3] {
        if label.is_body() {
            self.parts[label.index() - 1]
        } else {
            self.background
        }
    }
}

/// Conservative pixel box covering a capsule, or `None` when it straddles
/// the camera plane.
fn pixel_bounds(c: &PosedCapsule, k: &CameraIntrinsics) -> Option<(usize, usize, usize, usize)> {
    let m = (c.a + c.b) / 2.0;
    let r = (c.b - c.a).norm() / 2.0 + c.radius;
    let (near, far) = (m.z - r, m.z + r);
    if near <= 1e-3 {
        return None;
    }
    let span = |lo: f64, hi: f64, f: f64, cc: f64| {
        let a = [lo / near, lo / far, hi / near, hi / far];
        let min = a.iter().copied().fold(f64::INFINITY, f64::min);
        let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (f * min + cc, f * max + cc)
    };
    let (u0, u1) = span(m.x - r, m.x + r, k.fx, k.cx);
    let (v0, v1) = span(m.y - r, m.y + r, k.fy, k.cy);
    let clip = |lo: f64, hi: f64, n: usize| {
        let lo = lo.floor().max(0.0);
        let hi = (hi.ceil() + 1.0).min(n as f64);
        (lo as usize, (hi.max(lo)) as usize)
    };
    let (c0, c1) = clip(u0, u1, k.width);
    let (r0, r1) = clip(v0, v1, k.height);
    Some((r0, r1, c0, c1))
}

/// Ray-cast a capsule scene: per-pixel depth of the nearest surface, its
/// label, and flat color. Uncovered pixels show the backdrop.
pub fn render_frame(
    capsules: &[PosedCapsule],
    palette: &Palette,
    k: &CameraIntrinsics,
    max_range: f32,
) -> Result<(RgbdFrame, LabelMap)> {
    let far = FAR_PLANE.min(max_range);
    let n = k.pixel_count();
    let mut depth = alloc::vec![far; n];
    let mut labels = alloc::vec![SemanticLabel::Background; n];
    let origin = Vector3::zeros();
    for c in capsules {
        let (r0, r1, c0, c1) = pixel_bounds(c, k).unwrap_or((0, k.height, 0, k.width));
        for row in r0..r1 {
            for col in c0..c1 {
                let dir = k.ray(col as f64, row as f64).normalize();
                let Some(t) = c.intersect(&origin, &dir) else {
                    continue;
                };
                let z = (t * dir.z) as f32;
                let i = row * k.width + col;
                if z > 0.0 && z < depth[i] {
                    depth[i] = z;
                    labels[i] = c.label;
                }
            }
        }
    }
    let color = labels.iter().map(|l| palette.color(*l)).collect();
    Ok((
        RgbdFrame::new(*k, color, depth, max_range)?,
        LabelMap::from_labels(k.width, k.height, labels)?,
    ))
}

/// Renders `model` in `pose`.
pub fn render_pose(
    model: &BodyModel,
    pose: &Pose,
    palette: &Palette,
    k: &CameraIntrinsics,
    max_range: f32,
) -> Result<(RgbdFrame, LabelMap)> {
    let fk = forward_kinematics(&model.skeleton, pose);
    render_frame(&model.posed_capsules(&fk), palette, k, max_range)
}

/// Pose parameter vector at a given frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Keyframe {
    pub frame: usize,
    pub params: Vec<f64>,
}

/// Piecewise-linear pose trajectory; poses hold before the first and after
/// the last keyframe.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionScript {
    pub name: String,
    pub keyframes: Vec<Keyframe>,
}

/// Built-in motions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionKind {
    Static,
    ArmSwing,
    Walk,
}

impl MotionKind {
    pub const ALL: [MotionKind; 3] = [MotionKind::Static, MotionKind::ArmSwing, MotionKind::Walk];

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::Static => "static",
            MotionKind::ArmSwing => "arm-swing",
            MotionKind::Walk => "walk",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

const KEY_SPACING: usize = 8;

impl MotionScript {
    pub fn new(name: impl Into<String>, keyframes: Vec<Keyframe>) -> Result<Self> {
        if keyframes.is_empty() {
            bail!(InvalidInput, "motion script needs at least one keyframe");
        }
        if keyframes.windows(2).any(|w| w[1].frame <= w[0].frame) {
            bail!(
                InvalidInput,
                "keyframes must have strictly increasing frame numbers"
            );
        }
        let len = keyframes[0].params.len();
        if keyframes
            .iter()
            .any(|k| k.params.len() != len || k.params.iter().any(|v| !v.is_finite()))
        {
            bail!(
                InvalidInput,
                "keyframes must share one finite parameter length"
            );
        }
        Ok(Self {
            name: name.into(),
            keyframes,
        })
    }

    pub fn static_pose(skeleton: &crate::body::Skeleton, pose: &Pose) -> Self {
        Self {
            name: "static".to_string(),
            keyframes: alloc::vec![Keyframe {
                frame: 0,
                params: pose.to_params(skeleton)
            }],
        }
    }

    pub fn pose_at(&self, skeleton: &crate::body::Skeleton, frame: usize) -> Result<Pose> {
        let ks = &self.keyframes;
        let i = ks.partition_point(|k| k.frame <= frame);
        let params = if i == 0 {
            ks[0].params.clone()
        } else if i == ks.len() {
            ks[i - 1].params.clone()
        } else {
            let (a, b) = (&ks[i - 1], &ks[i]);
            let t = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
            a.params
                .iter()
                .zip(&b.params)
                .map(|(x, y)| x + (y - x) * t)
                .collect()
        };
        Ok(Pose::from_params(skeleton, &params)?.clamped(skeleton))
    }

    /// A built-in motion of `frames` frames starting from `base`, randomized
    /// by `seed`.
    pub fn builtin(
        kind: MotionKind,
        model: &BodyModel,
        base: &Pose,
        frames: usize,
        seed: u64,
    ) -> Result<Self> {
        let sk = &model.skeleton;
        let idx = |name: &str| {
            sk.joint_index(name).ok_or_else(|| {
                crate::Error::InvalidInput(alloc::format!("skeleton lacks joint {name}"))
            })
        };
        let (ls, rs, le, re) = (
            idx("left_shoulder")?,
            idx("right_shoulder")?,
            idx("left_elbow")?,
            idx("right_elbow")?,
        );
        let (lh, rh, lk, rk) = (
            idx("left_hip")?,
            idx("right_hip")?,
            idx("left_knee")?,
            idx("right_knee")?,
        );
        let (spine, neck) = (idx("spine")?, idx("skull_base")?);
        let mut rng = crate::rng::seeded(seed);
        let mut keys = Vec::new();
        let n_keys = frames.max(1).div_ceil(KEY_SPACING) + 1;
        // walking path parameters
        let (ax, az) = (rng.random_range(0.2..0.5), rng.random_range(0.1..0.35));
        let (px, pz) = (rng.random_range(0.0..6.28), rng.random_range(0.0..6.28));
        let stride = rng.random_range(0.3..0.5);
        for key in 0..n_keys {
            let mut p = base.clone();
            match kind {
                MotionKind::Static => {}
                MotionKind::ArmSwing => {
                    let phase = if key % 2 == 0 { 1.0 } else { -1.0 };
                    let swing: f64 = rng.random_range(0.3..0.9);
                    p.angles[ls].x = phase * swing;
                    p.angles[rs].x = -phase * swing * rng.random_range(0.6..1.0);
                    p.angles[ls].z = -rng.random_range(0.05..0.7);
                    p.angles[rs].z = rng.random_range(0.05..0.7);
                    p.angles[le].x = -rng.random_range(0.1..1.3);
                    p.angles[re].x = -rng.random_range(0.1..1.3);
                    p.angles[spine] = Vector3::new(
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.1..0.1),
                    );
                    p.angles[neck] = Vector3::new(
                        rng.random_range(-0.15..0.15),
                        rng.random_range(-0.3..0.3),
                        0.0,
                    );
                    p.angles[lh].z = -rng.random_range(0.0..0.1);
                    p.angles[rh].z = rng.random_range(0.0..0.1);
                }
                MotionKind::Walk => {
                    let s = (key * KEY_SPACING) as f64 / 60.0 * core::f64::consts::TAU;
                    p.translation.x += ax * (s * 0.5 + px).sin();
                    p.translation.z += az * (s * 0.35 + pz).sin();
                    p.rotation.y += 0.35 * (s * 0.5 + px).cos();
                    let phase = if key % 2 == 0 { 1.0 } else { -1.0 };
                    p.angles[lh].x = -phase * stride;
                    p.angles[rh].x = phase * stride;
                    p.angles[lk].x = if phase > 0.0 { 0.7 } else { 0.1 };
                    p.angles[rk].x = if phase > 0.0 { 0.1 } else { 0.7 };
                    p.angles[ls].x = phase * stride * 0.8;
                    p.angles[rs].x = -phase * stride * 0.8;
                    p.angles[ls].z = -0.12;
                    p.angles[rs].z = 0.12;
                    p.angles[le].x = -0.3;
                    p.angles[re].x = -0.3;
                    p.angles[spine].y = 0.1 * phase;
                }
            }
            keys.push(Keyframe {
                frame: key * KEY_SPACING,
                params: p.clamped(sk).to_params(sk),
            });
        }
        Self::new(kind.name(), keys)
    }
}

/// A subject: body model plus colors.
#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub model: BodyModel,
    pub palette: Palette,
}

impl Subject {
    /// Height drawn from 1.55 m to 1.90 m.
    pub fn random(seed: u64) -> Result<Self> {
        let mut rng = crate::rng::seeded(seed);
        let model = crate::body::default_human(rng.random_range(1.55..1.90))?;
        Ok(Self {
            model,
            palette: Palette::random(rng.next_u64()),
        })
    }

    /// Upright pose facing the camera at a random spot 2.2 to 2.9 m away.
    pub fn random_placement(&self, seed: u64) -> Pose {
        let mut rng = crate::rng::seeded(seed);
        let mut p = Pose::identity(&self.model.skeleton);
        p.translation = Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.05..0.1),
            rng.random_range(2.2..2.9),
        );
        p.rotation = Vector3::new(0.0, rng.random_range(-0.3..0.3), 0.0);
        p
    }
}

/// Exact per-frame ground truth of a rendered sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SequenceGt {
    pub poses: Vec<Pose>,
    pub joints: Vec<Vec<Vector3<f64>>>,
    pub labels: Vec<LabelMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub frames: Vec<RgbdFrame>,
    pub gt: SequenceGt,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Renders `frames` frames of `script` with exact poses, joints and labels.
pub fn generate_sequence(
    subject: &Subject,
    script: &MotionScript,
    frames: usize,
    k: &CameraIntrinsics,
    max_range: f32,
) -> Result<Sequence> {
    let sk = &subject.model.skeleton;
    let mut seq = Sequence {
        frames: Vec::with_capacity(frames),
        gt: SequenceGt::default(),
    };
    for f in 0..frames {
        let pose = script.pose_at(sk, f)?;
        let (frame, labels) = render_pose(&subject.model, &pose, &subject.palette, k, max_range)?;
        seq.gt.joints.push(joint_positions(sk, &pose));
        seq.gt.poses.push(pose);
        seq.gt.labels.push(labels);
        seq.frames.push(frame);
    }
    Ok(seq)
}

/// RGB-D object image; depth 0 marks transparent pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectCrop {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f32; 3]>,
    pub depth: Vec<f32>,
}

impl ObjectCrop {
    pub fn new(
        name: impl Into<String>,
        width: usize,
        height: usize,
        color: Vec<[f32; 3]>,
        depth: Vec<f32>,
    ) -> Result<Self> {
        if color.len() != width * height || depth.len() != width * height {
            bail!(
                DimensionMismatch,
                "object crop {width}x{height} has {} colors, {} depths",
                color.len(),
                depth.len()
            );
        }
        if depth.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            bail!(InvalidInput, "object depth must be finite and non-negative");
        }
        if !depth.iter().any(|d| *d > 0.0) {
            bail!(InvalidInput, "object crop has no opaque pixel");
        }
        Ok(Self {
            name: name.into(),
            width,
            height,
            color,
            depth,
        })
    }

    pub fn opaque_count(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }

    fn depth_range(&self) -> (f32, f32) {
        self.depth
            .iter()
            .filter(|d| **d > 0.0)
            .fold((f32::INFINITY, 0.0f32), |(lo, hi), &d| {
                (lo.min(d), hi.max(d))
            })
    }
}

/// Which crop point is placed `depth_offset` in front of the subject.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DepthAnchor {
    #[default]
    Furthest,
    Nearest,
}

/// Placement of one object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    /// Image-space size relative to the crop.
    pub scale: f64,
    /// In-plane rotation, degrees, positive counter-clockwise on screen.
    pub rotation_deg: f64,
    /// Meters in front of the subject (positive is nearer the camera).
    pub depth_offset: f64,
    /// Pixel `(column, row)` where the crop center lands.
    pub anchor: (f64, f64),
    pub depth_anchor: DepthAnchor,
}

/// Mean depth of the labelled body pixels.
pub fn subject_depth(frame: &RgbdFrame, labels: &LabelMap) -> Option<f64> {
    let (sum, n) = frame
        .depth
        .iter()
        .zip(&labels.labels)
        .filter(|(d, l)| l.is_body() && **d > 0.0)
        .fold((0.0, 0usize), |(s, n), (d, _)| (s + *d as f64, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Composites an object into a frame with a depth test. Object pixels that
/// end up in front of the scene replace its color and depth and become
/// background in the label map.
///
/// The crop is scaled by `spec.scale` in the image and keeps its own
/// relief; the point chosen by `spec.depth_anchor` is placed at
/// `subject_depth - depth_offset`.
pub fn insert_object(
    frame: &RgbdFrame,
    labels: &LabelMap,
    crop: &ObjectCrop,
    spec: &AugmentSpec,
    subject_depth: f64,
) -> Result<(RgbdFrame, LabelMap)> {
    let (w, h) = (frame.width(), frame.height());
    if labels.width != w || labels.height != h {
        bail!(
            DimensionMismatch,
            "labels {}x{} for frame {w}x{h}",
            labels.width,
            labels.height
        );
    }
    if !(spec.scale > 0.0) || !spec.rotation_deg.is_finite() || !spec.depth_offset.is_finite() {
        bail!(InvalidInput, "invalid augmentation spec {spec:?}");
    }
    let (near, far) = crop.depth_range();
    let anchor_depth = match spec.depth_anchor {
        DepthAnchor::Furthest => far,
        DepthAnchor::Nearest => near,
    } as f64;
    let target = subject_depth - spec.depth_offset;
    if !(target + (near as f64 - anchor_depth) > 0.0) {
        bail!(InvalidInput, "object would lie behind the camera");
    }
    let s = spec.scale;
    let (sin, cos) = spec.rotation_deg.to_radians().sin_cos();
    let (cc, cr) = (crop.width as f64 / 2.0, crop.height as f64 / 2.0);
    let reach = s * (cc * cc + cr * cr).sqrt() + 1.0;
    let (ax, ay) = spec.anchor;
    let rows = ((ay - reach).floor().max(0.0) as usize)
        ..((ay + reach).ceil().clamp(0.0, h as f64) as usize);
    let cols = ((ax - reach).floor().max(0.0) as usize)
        ..((ax + reach).ceil().clamp(0.0, w as f64) as usize);

    let mut out = frame.clone();
    let mut out_labels = labels.clone();
    let mut landed = 0;
    for row in rows {
        for col in cols.clone() {
            // inverse map: screen offset -> unrotated, unscaled crop coordinates
            let (dx, dy) = (col as f64 - ax, row as f64 - ay);
            let x = (cos * dx - sin * dy) / s + cc;
            let y = (sin * dx + cos * dy) / s + cr;
            if x < 0.0 || y < 0.0 || x >= crop.width as f64 || y >= crop.height as f64 {
                continue;
            }
            let ci = y as usize * crop.width + x as usize;
            let d = crop.depth[ci];
            if d <= 0.0 {
                continue;
            }
            landed += 1;
            let z = (target + (d as f64 - anchor_depth)) as f32;
            let i = row * w + col;
            let scene = frame.depth[i];
            if scene <= 0.0 || z < scene {
                out.depth[i] = z.min(frame.max_range);
                out.color[i] = crop.color[ci];
                out_labels.labels[i] = SemanticLabel::Background;
            }
        }
    }
    if landed == 0 {
        bail!(
            InvalidInput,
            "object {} has no opaque pixel inside the frame",
            crop.name
        );
    }
    Ok((out, out_labels))
}

/// Share of originally-body pixels that became background.
pub fn occlusion_fraction(original: &LabelMap, augmented: &LabelMap) -> f64 {
    let body = original.body_pixel_count();
    if body == 0 {
        return 0.0;
    }
    let hidden = original
        .labels
        .iter()
        .zip(&augmented.labels)
        .filter(|(a, b)| a.is_body() && !b.is_body())
        .count();
    hidden as f64 / body as f64
}

/// Procedural object families used as occluders.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectKind {
    Box,
    Suitcase,
    Chair,
    Table,
    Stool,
    Panel,
    Lamp,
    Guitar,
    Cabinet,
    Ball,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 10] = [
        ObjectKind::Box,
        ObjectKind::Suitcase,
        ObjectKind::Chair,
        ObjectKind::Table,
        ObjectKind::Stool,
        ObjectKind::Panel,
        ObjectKind::Lamp,
        ObjectKind::Guitar,
        ObjectKind::Cabinet,
        ObjectKind::Ball,
    ];
    /// Kinds used when augmenting training data.
    pub const TRAIN: [ObjectKind; 6] = [
        ObjectKind::Box,
        ObjectKind::Suitcase,
        ObjectKind::Chair,
        ObjectKind::Table,
        ObjectKind::Stool,
        ObjectKind::Panel,
    ];
    /// Kinds reserved for test sequences.
    pub const HELD_OUT: [ObjectKind; 4] = [
        ObjectKind::Lamp,
        ObjectKind::Guitar,
        ObjectKind::Cabinet,
        ObjectKind::Ball,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Box => "box",
            ObjectKind::Suitcase => "suitcase",
            ObjectKind::Chair => "chair",
            ObjectKind::Table => "table",
            ObjectKind::Stool => "stool",
            ObjectKind::Panel => "panel",
            ObjectKind::Lamp => "lamp",
            ObjectKind::Guitar => "guitar",
            ObjectKind::Cabinet => "cabinet",
            ObjectKind::Ball => "ball",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Distance at which procedural crops are captured, meters.
pub const CROP_CAPTURE_DEPTH: f64 = 2.0;

struct Canvas {
    w: usize,
    h: usize,
    px_per_m: f64,
    color: Vec<[f32; 3]>,
    depth: Vec<f32>,
}

impl Canvas {
    fn new(width_m: f64, height_m: f64, px_per_m: f64) -> Self {
        let w = (width_m * px_per_m).ceil().max(1.0) as usize;
        let h = (height_m * px_per_m).ceil().max(1.0) as usize;
        Self {
            w,
            h,
            px_per_m,
            color: alloc::vec![[0.0; 3]; w * h],
            depth: alloc::vec![0.0; w * h],
        }
    }

    /// Paints pixels whose center (meters from the top-left corner) passes
    /// `inside`, with relief `relief(x, y)` meters behind the capture depth.
    fn paint(
        &mut self,
        inside: impl Fn(f64, f64) -> bool,
        relief: impl Fn(f64, f64) -> f64,
        color: [f32; 3],
    ) {
        for r in 0..self.h {
            for c in 0..self.w {
                let (x, y) = (
                    (c as f64 + 0.5) / self.px_per_m,
                    (r as f64 + 0.5) / self.px_per_m,
                );
                if inside(x, y) {
                    let d = (CROP_CAPTURE_DEPTH + relief(x, y)) as f32;
                    let i = r * self.w + c;
                    if self.depth[i] == 0.0 || d < self.depth[i] {
                        self.depth[i] = d;
                        self.color[i] = color;
                    }
                }
            }
        }
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, relief: f64, color: [f32; 3]) {
        self.paint(
            |x, y| x >= x0 && x < x1 && y >= y0 && y < y1,
            |_, _| relief,
            color,
        );
    }

    fn ellipse(
        &mut self,
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        bulge: f64,
        base: f64,
        color: [f32; 3],
    ) {
        let q = move |x: f64, y: f64| ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2);
        self.paint(
            |x, y| q(x, y) <= 1.0,
            |x, y| base - bulge * (1.0 - q(x, y)).max(0.0).sqrt(),
            color,
        );
    }
}

/// Procedural RGB-D crop of the given kind, captured at
/// [`CROP_CAPTURE_DEPTH`] with the camera `k`. Sizes and colors vary with
/// `seed`.
pub fn procedural_crop(kind: ObjectKind, k: &CameraIntrinsics, seed: u64) -> ObjectCrop {
    let mut rng = crate::rng::seeded(seed ^ (kind as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let ppm = k.fx / CROP_CAPTURE_DEPTH;
    let mut col =
        |lo: f32, hi: f32| -> [f32; 3] { core::array::from_fn(|_| rng.random_range(lo..hi)) };
    let main = col(0.1, 0.9);
    let accent = col(0.05, 0.6);
    let mut rng = crate::rng::seeded(seed.wrapping_add(1) ^ (kind as u64));
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let canvas = match kind {
        ObjectKind::Box => {
            let (w, h) = (u(0.45, 0.7), u(0.45, 0.7));
            let tilt = u(-0.08, 0.08);
            let mut cv = Canvas::new(w, h, ppm);
            cv.paint(|_, _| true, |x, _| 0.1 + tilt * (x / w - 0.5), main);
            cv.rect(0.0, h * 0.45, w, h * 0.55, 0.1 + 0.001, accent);
            cv
        }
        ObjectKind::Suitcase => {
            let (w, h) = (u(0.4, 0.5), u(0.6, 0.75));
            let mut cv = Canvas::new(w, h + 0.12, ppm);
            cv.rect(0.0, 0.12, w, h + 0.12, 0.05, main);
            cv.rect(w * 0.35, 0.0, w * 0.65, 0.03, 0.05, accent);
            cv.rect(w * 0.35, 0.0, w * 0.4, 0.12, 0.05, accent);
            cv.rect(w * 0.6, 0.0, w * 0.65, 0.12, 0.05, accent);
            cv
        }
        ObjectKind::Chair => {
            let w = u(0.42, 0.55);
            let mut cv = Canvas::new(w, 1.0, ppm);
            cv.rect(0.0, 0.0, w, 0.5, 0.3, main);
            cv.rect(0.0, 0.5, w, 0.56, 0.15, accent);
            for x in [0.0, w - 0.04] {
                cv.rect(x, 0.56, x + 0.04, 1.0, 0.05, accent);
            }
            cv
        }
        ObjectKind::Table => {
            let (w, h) = (u(0.8, 1.1), u(0.7, 0.8));
            let mut cv = Canvas::new(w, h, ppm);
            cv.rect(0.0, 0.0, w, 0.06, 0.2, main);
            for x in [0.03, w - 0.08] {
                cv.rect(x, 0.06, x + 0.05, h, 0.05, main);
            }
            cv
        }
        ObjectKind::Stool => {
            let (w, h) = (u(0.35, 0.45), u(0.55, 0.7));
            let mut cv = Canvas::new(w, h, ppm);
            cv.ellipse(w / 2.0, 0.04, w / 2.0, 0.04, 0.02, 0.1, main);
            for x in [0.02, w / 2.0 - 0.02, w - 0.06] {
                cv.rect(x, 0.06, x + 0.04, h, 0.1, accent);
            }
            cv
        }
        ObjectKind::Panel => {
            let (w, h) = (u(0.5, 0.8), u(0.8, 1.2));
            let mut cv = Canvas::new(w, h, ppm);
            cv.rect(0.0, 0.0, w, h, 0.02, main);
            cv
        }
        ObjectKind::Lamp => {
            let (w, shade) = (u(0.55, 0.65), u(0.45, 0.55));
            let h = shade + 0.35;
            let mut cv = Canvas::new(w, h, ppm);
            cv.paint(
                |x, y| y < shade && (x - w / 2.0).abs() < w / 2.0 * (0.7 + 0.3 * y / shade),
                |_, _| 0.1,
                main,
            );
            cv.rect(w / 2.0 - 0.02, shade, w / 2.0 + 0.02, h - 0.06, 0.15, accent);
            cv.ellipse(w / 2.0, h - 0.04, w / 3.0, 0.04, 0.0, 0.1, accent);
            cv
        }
        ObjectKind::Guitar => {
            let h = u(0.95, 1.05);
            let mut cv = Canvas::new(0.42, h, ppm);
            cv.rect(0.18, 0.0, 0.24, 0.5, 0.06, accent);
            cv.ellipse(0.21, 0.58, 0.15, 0.13, 0.05, 0.1, main);
            cv.ellipse(0.21, h - 0.2, 0.2, 0.19, 0.06, 0.1, main);
            cv
        }
        ObjectKind::Cabinet => {
            let (w, h) = (u(0.5, 0.7), u(0.8, 1.1));
            let mut cv = Canvas::new(w, h, ppm);
            cv.rect(0.0, 0.0, w, h, 0.15, main);
            for i in 1..4 {
                let y = h * i as f64 / 4.0;
                cv.rect(0.05, y - 0.015, w - 0.05, y + 0.015, 0.149, accent);
            }
            cv
        }
        ObjectKind::Ball => {
            let r = u(0.22, 0.32);
            let mut cv = Canvas::new(2.0 * r, 2.0 * r, ppm);
            cv.ellipse(r, r, r, r, r, r, main);
            cv
        }
    };
    ObjectCrop::new(kind.name(), canvas.w, canvas.h, canvas.color, canvas.depth)
        .expect("procedural crops always have opaque pixels")
}

/// Pixel bounding box `(row0, row1, col0, col1)` of the body, half-open.
pub fn body_bounds(labels: &LabelMap) -> Option<(usize, usize, usize, usize)> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for r in 0..labels.height {
        for c in 0..labels.width {
            if labels.get(r, c).is_body() {
                b = Some(match b {
                    None => (r, r + 1, c, c + 1),
                    Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r + 1), c0.min(c), c1.max(c + 1)),
                });
            }
        }
    }
    b
}

/// Random placement over the body, retried until it hides between
/// `coverage.0` and `coverage.1` of the body pixels (the last attempt is
/// kept otherwise).
pub fn random_augmentation(
    frame: &RgbdFrame,
    labels: &LabelMap,
    crop: &ObjectCrop,
    rng: &mut impl RngCore,
    coverage: (f64, f64),
) -> Result<(RgbdFrame, LabelMap, AugmentSpec)> {
    let Some((r0, r1, c0, c1)) = body_bounds(labels) else {
        bail!(InvalidInput, "no body pixels to occlude");
    };
    let depth = subject_depth(frame, labels).unwrap_or(2.5);
    let mut last = None;
    for _ in 0..8 {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let bw = (c1 - c0) as f64;
        let spec = AugmentSpec {
            scale: rng.random_range(0.8..1.3),
            rotation_deg: rng.random_range(-20.0..20.0),
            depth_offset: rng.random_range(0.2..0.8),
            anchor: (
                (c0 + c1) as f64 / 2.0 + side * rng.random_range(0.0..0.6) * bw,
                rng.random_range(r0 as f64..r1 as f64),
            ),
            depth_anchor: DepthAnchor::Furthest,
        };
        let Ok((f, l)) = insert_object(frame, labels, crop, &spec, depth) else {
            continue;
        };
        let occ = occlusion_fraction(labels, &l);
        let done = occ >= coverage.0 && occ <= coverage.1;
        last = Some((f, l, spec));
        if done {
            break;
        }
    }
    last.ok_or_else(|| crate::Error::InvalidInput("could not place object".into()))
}

/// Training pairs drawn from rendered frames. With `recolor` every sample is
/// repainted with a fresh random palette; with probability `probability` it
/// is then occluded by a random crop. Deterministic per
/// `(seed, index, epoch)`.
pub struct AugmentedFrames<'a> {
    pub frames: &'a [(RgbdFrame, LabelMap)],
    pub crops: &'a [ObjectCrop],
    pub probability: f64,
    pub recolor: bool,
    pub seed: u64,
}

impl AugmentedFrames<'_> {
    pub fn frame(&self, index: usize, epoch: usize) -> Result<(RgbdFrame, LabelMap)> {
        let (frame, labels) = &self.frames[index];
        let mut rng = crate::rng::seeded(
            self.seed
                ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
                ^ (epoch as u64).wrapping_mul(0x8CB9_2BA7_2F3D_8DD7),
        );
        let mut frame = frame.clone();
        if self.recolor {
            let palette = Palette::random(rng.next_u64());
            for (c, l) in frame.color.iter_mut().zip(&labels.labels) {
                *c = palette.color(*l);
            }
        }
        if self.crops.is_empty() || !rng.random_bool(self.probability.clamp(0.0, 1.0)) {
            return Ok((frame, labels.clone()));
        }
        let crop = &self.crops[rng.random_range(0..self.crops.len())];
        match random_augmentation(&frame, labels, crop, &mut rng, (0.33, 0.5)) {
            Ok((f, l, _)) => Ok((f, l)),
            Err(_) => Ok((frame, labels.clone())),
        }
    }
}

impl TrainingSet for AugmentedFrames<'_> {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn sample(&self, index: usize, epoch: usize) -> Result<(Tensor<f32>, LabelMap)> {
        let (frame, labels) = self.frame(index, epoch)?;
        let input = resize_and_normalize(&frame)?;
        let (h, w) = (input.shape()[0], input.shape()[1]);
        Ok((input, labels.resized(w, h)))
    }
}
