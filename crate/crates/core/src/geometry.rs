//! Camera model, frame containers and the conversions shared by every stage.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::Vector3;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Network input width in pixels.
pub const NET_WIDTH: usize = 128;
/// Network input height in pixels.
pub const NET_HEIGHT: usize = 106;
/// Default depth range used to normalize the depth channel.
pub const DEFAULT_MAX_RANGE: f32 = 4.5;

/// Body-part label set, in canonical id order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(u8)]
pub enum SemanticLabel {
    #[default]
    Background = 0,
    Head = 1,
    Torso = 2,
    RightArm = 3,
    LeftArm = 4,
    RightLeg = 5,
    LeftLeg = 6,
}

impl SemanticLabel {
    pub const COUNT: usize = 7;

    pub const ALL: [SemanticLabel; 7] = [
        SemanticLabel::Background,
        SemanticLabel::Head,
        SemanticLabel::Torso,
        SemanticLabel::RightArm,
        SemanticLabel::LeftArm,
        SemanticLabel::RightLeg,
        SemanticLabel::LeftLeg,
    ];

    /// The six non-background labels.
    pub const BODY: [SemanticLabel; 6] = [
        SemanticLabel::Head,
        SemanticLabel::Torso,
        SemanticLabel::RightArm,
        SemanticLabel::LeftArm,
        SemanticLabel::RightLeg,
        SemanticLabel::LeftLeg,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn is_body(self) -> bool {
        self != SemanticLabel::Background
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticLabel::Background => "background",
            SemanticLabel::Head => "head",
            SemanticLabel::Torso => "torso",
            SemanticLabel::RightArm => "right-arm",
            SemanticLabel::LeftArm => "left-arm",
            SemanticLabel::RightLeg => "right-leg",
            SemanticLabel::LeftLeg => "left-leg",
        }
    }
}

impl fmt::Display for SemanticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pinhole intrinsics. Pixel `(u, v)` means column `u`, row `v`, with pixel
/// centers at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let ok = fx > 0.0
            && fy > 0.0
            && cx >= 0.0
            && cy >= 0.0
            && cx < width as f64
            && cy < height as f64
            && fx.is_finite()
            && fy.is_finite();
        if !ok {
            bail!(
                InvalidInput,
                "intrinsics fx={fx} fy={fy} cx={cx} cy={cy} for {width}x{height}"
            );
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Nominal second-generation Kinect depth camera, 512x424.
    pub fn kinect_v2() -> Self {
        Self {
            fx: 365.0,
            fy: 365.0,
            cx: 256.0,
            cy: 212.0,
            width: 512,
            height: 424,
        }
    }

    /// The Kinect model rescaled to the 128x106 network resolution.
    pub fn network_default() -> Self {
        Self::kinect_v2().scaled_to(NET_WIDTH, NET_HEIGHT)
    }

    /// Intrinsics of the same camera sampled on a `width` x `height` grid.
    pub fn scaled_to(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Ray direction through pixel `(u, v)`, scaled to unit depth.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Pixel coordinates of a projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    InFrame { u: f64, v: f64 },
    OutOfFrame { u: f64, v: f64 },
}

impl Projection {
    pub fn in_frame(self) -> Option<(f64, f64)> {
        match self {
            Projection::InFrame { u, v } => Some((u, v)),
            Projection::OutOfFrame { .. } => None,
        }
    }

    pub fn coords(self) -> (f64, f64) {
        match self {
            Projection::InFrame { u, v } | Projection::OutOfFrame { u, v } => (u, v),
        }
    }
}

/// Registered color + depth frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame {
    pub intrinsics: CameraIntrinsics,
    /// Row-major RGB in `[0, 1]`.
    pub color: Vec<[f32; 3]>,
    /// Row-major depth in meters; 0 marks an invalid pixel.
    pub depth: Vec<f32>,
    pub max_range: f32,
}

impl RgbdFrame {
    pub fn new(
        intrinsics: CameraIntrinsics,
        color: Vec<[f32; 3]>,
        depth: Vec<f32>,
        max_range: f32,
    ) -> Result<Self> {
        let n = intrinsics.pixel_count();
        if color.len() != n || depth.len() != n {
            bail!(
                DimensionMismatch,
                "frame of {}x{} needs {n} pixels, got color {} depth {}",
                intrinsics.width,
                intrinsics.height,
                color.len(),
                depth.len()
            );
        }
        if !(max_range > 0.0) {
            bail!(InvalidInput, "max_range must be positive, got {max_range}");
        }
        if let Some(d) = depth.iter().find(|d| !(**d >= 0.0 && **d <= max_range)) {
            bail!(InvalidInput, "depth {d} outside [0, {max_range}]");
        }
        if color.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            bail!(InvalidInput, "color channel outside [0, 1]");
        }
        Ok(Self {
            intrinsics,
            color,
            depth,
            max_range,
        })
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn depth_at(&self, row: usize, col: usize) -> f32 {
        self.depth[row * self.width() + col]
    }

    pub fn valid_depth_count(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }
}

/// Per-pixel ground-truth or predicted labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<SemanticLabel>,
}

impl LabelMap {
    pub fn filled(width: usize, height: usize, label: SemanticLabel) -> Self {
        Self {
            width,
            height,
            labels: alloc::vec![label; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<SemanticLabel>) -> Result<Self> {
        if labels.len() != width * height {
            bail!(
                DimensionMismatch,
                "label map {width}x{height} given {} labels",
                labels.len()
            );
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> SemanticLabel {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: SemanticLabel) {
        self.labels[row * self.width + col] = label;
    }

    /// Total pixel count.
    pub fn n_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn count(&self, label: SemanticLabel) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    pub fn body_pixel_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_body()).count()
    }

    /// Nearest-neighbor resample to a new grid.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let labels = nearest_indices(self.width, self.height, width, height)
            .map(|i| self.labels[i])
            .collect();
        Self {
            width,
            height,
            labels,
        }
    }
}

/// Labelled observation points in the camera frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub labels: Vec<SemanticLabel>,
    /// `(row, col)` of the pixel each point came from.
    pub pixel_origin: Vec<(usize, usize)>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Dense `width * height` lookup from pixel to point index.
    pub fn pixel_lookup(&self, width: usize, height: usize) -> Vec<Option<u32>> {
        let mut lookup = alloc::vec![None; width * height];
        for (i, &(r, c)) in self.pixel_origin.iter().enumerate() {
            if r < height && c < width {
                lookup[r * width + c] = Some(i as u32);
            }
        }
        lookup
    }

    /// Copy with every label replaced.
    pub fn relabelled(&self, label: SemanticLabel) -> Self {
        Self {
            points: self.points.clone(),
            labels: alloc::vec![label; self.len()],
            pixel_origin: self.pixel_origin.clone(),
        }
    }
}

/// Back-project every valid depth pixel to a camera-frame point.
pub fn backproject(frame: &RgbdFrame, label_map: Option<&LabelMap>) -> Result<PointCloud> {
    let k = &frame.intrinsics;
    if let Some(lm) = label_map {
        if lm.width != k.width || lm.height != k.height {
            bail!(
                DimensionMismatch,
                "label map {}x{} vs frame {}x{}",
                lm.width,
                lm.height,
                k.width,
                k.height
            );
        }
    }
    let mut cloud = PointCloud::default();
    for row in 0..k.height {
        for col in 0..k.width {
            let idx = row * k.width + col;
            let d = frame.depth[idx] as f64;
            if d <= 0.0 {
                continue;
            }
            cloud.points.push(Vector3::new(
                (col as f64 - k.cx) * d / k.fx,
                (row as f64 - k.cy) * d / k.fy,
                d,
            ));
            cloud
                .labels
                .push(label_map.map_or(SemanticLabel::Background, |lm| lm.labels[idx]));
            cloud.pixel_origin.push((row, col));
        }
    }
    Ok(cloud)
}

/// Pinhole projection. Points whose pixel falls outside `[0, width) x [0,
/// height)` come back as [`Projection::OutOfFrame`].
pub fn project(point: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Projection> {
    if !(point.z > 0.0) {
        bail!(InvalidInput, "cannot project point with z = {}", point.z);
    }
    let u = k.fx * point.x / point.z + k.cx;
    let v = k.fy * point.y / point.z + k.cy;
    if u >= 0.0 && v >= 0.0 && u < k.width as f64 && v < k.height as f64 {
        Ok(Projection::InFrame { u, v })
    } else {
        Ok(Projection::OutOfFrame { u, v })
    }
}

/// Source index for each destination pixel of a nearest-neighbor resize.
fn nearest_indices(
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> impl Iterator<Item = usize> {
    (0..dst_h).flat_map(move |r| {
        let sr = (((r as f64 + 0.5) * src_h as f64 / dst_h as f64) as usize).min(src_h - 1);
        (0..dst_w).map(move |c| {
            let sc = (((c as f64 + 0.5) * src_w as f64 / dst_w as f64) as usize).min(src_w - 1);
            sr * src_w + sc
        })
    })
}

/// Nearest-neighbor resample of a frame, intrinsics rescaled to match.
pub fn resize_frame(frame: &RgbdFrame, width: usize, height: usize) -> Result<RgbdFrame> {
    if frame.color.is_empty() || width == 0 || height == 0 {
        bail!(InvalidInput, "cannot resize an empty frame");
    }
    let idx: Vec<usize> = nearest_indices(frame.width(), frame.height(), width, height).collect();
    Ok(RgbdFrame {
        intrinsics: frame.intrinsics.scaled_to(width, height),
        color: idx.iter().map(|&i| frame.color[i]).collect(),
        depth: idx.iter().map(|&i| frame.depth[i]).collect(),
        max_range: frame.max_range,
    })
}

/// Network input: nearest-neighbor resize to 128x106 and channels R, G, B, D
/// with depth divided by the frame's `max_range`. Shape is `(106, 128, 4)`.
pub fn resize_and_normalize(frame: &RgbdFrame) -> Result<Tensor<f32>> {
    let small = resize_frame(frame, NET_WIDTH, NET_HEIGHT)?;
    let mut data = Vec::with_capacity(NET_WIDTH * NET_HEIGHT * 4);
    for (rgb, &d) in small.color.iter().zip(&small.depth) {
        data.extend_from_slice(rgb);
        data.push(if d > 0.0 {
            (d / frame.max_range).min(1.0)
        } else {
            0.0
        });
    }
    Tensor::from_vec(&[NET_HEIGHT, NET_WIDTH, 4], data)
}
