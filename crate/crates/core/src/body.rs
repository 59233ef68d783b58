//! Articulated human model: kinematic tree, axis-angle pose, capsule
//! geometry, linear blend skinning and analytic pose Jacobians.
//!
//! Coordinates follow the camera: x right, y down, z away from the camera.
//! In the rest pose the subject stands upright facing the camera, so the
//! subject's left side lies at +x.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix3, Rotation3, Vector3};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{bail, Result};
use crate::geometry::SemanticLabel;

/// Rotational degrees of freedom of a joint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dof {
    Fixed,
    /// Single rotation about the local x axis (flexion).
    HingeX,
    Ball,
}

impl Dof {
    pub fn axes(self) -> &'static [usize] {
        match self {
            Dof::Fixed => &[],
            Dof::HingeX => &[0],
            Dof::Ball => &[0, 1, 2],
        }
    }

    pub fn count(self) -> usize {
        self.axes().len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Offset from the parent joint in the parent's frame (root: rest position).
    pub offset: Vector3<f64>,
    pub dof: Dof,
    /// Per-component `(min, max)` on the axis-angle vector, radians.
    pub limits: [(f64, f64); 3],
}

/// Kinematic tree. Joints are stored parents-first with the root at index 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
    /// Joint attracted to the recovery target of each body label, indexed by
    /// `label.index() - 1`.
    pub center_joints: [usize; 6],
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>, center_joints: [usize; 6]) -> Result<Self> {
        if joints.is_empty() || joints[0].parent.is_some() {
            bail!(InvalidInput, "joint 0 must be the root");
        }
        for (i, j) in joints.iter().enumerate().skip(1) {
            match j.parent {
                Some(p) if p < i => {}
                _ => bail!(
                    InvalidInput,
                    "joint {} ({}) must follow its parent",
                    i,
                    j.name
                ),
            }
            if j.limits.iter().any(|(lo, hi)| !(lo <= hi)) {
                bail!(InvalidInput, "joint {} has empty limits", j.name);
            }
        }
        if center_joints.iter().any(|&c| c >= joints.len()) {
            bail!(InvalidInput, "center joint out of range");
        }
        Ok(Self {
            joints,
            center_joints,
        })
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn center_joint(&self, label: SemanticLabel) -> Option<usize> {
        label
            .is_body()
            .then(|| self.center_joints[label.index() - 1])
    }

    /// Pose vector length: root translation, root rotation, joint DoFs.
    pub fn n_params(&self) -> usize {
        6 + self.joints.iter().map(|j| j.dof.count()).sum::<usize>()
    }

    /// `(joint, axis)` of every rotational parameter after the six root ones.
    pub fn dof_layout(&self) -> Vec<(usize, usize)> {
        self.joints
            .iter()
            .enumerate()
            .flat_map(|(i, j)| j.dof.axes().iter().map(move |&a| (i, a)))
            .collect()
    }

    /// Whether `a` lies on the path from the root to `b` (inclusive).
    pub fn is_ancestor_or_self(&self, a: usize, b: usize) -> bool {
        let mut cur = Some(b);
        while let Some(c) = cur {
            if c == a {
                return true;
            }
            cur = self.joints[c].parent;
        }
        false
    }

    /// Joint positions at the identity pose with zero translation.
    pub fn rest_positions(&self) -> Vec<Vector3<f64>> {
        let mut out: Vec<Vector3<f64>> = Vec::with_capacity(self.len());
        for j in &self.joints {
            let base = j.parent.map_or(Vector3::zeros(), |p| out[p]);
            out.push(base + j.offset);
        }
        out
    }
}

/// Root rigid transform plus per-joint axis-angle rotations.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub translation: Vector3<f64>,
    /// Root rotation as an axis-angle vector.
    pub rotation: Vector3<f64>,
    /// One axis-angle vector per joint; the root entry and components outside
    /// a joint's DoF mask stay zero.
    pub angles: Vec<Vector3<f64>>,
}

impl Pose {
    pub fn identity(skeleton: &Skeleton) -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: Vector3::zeros(),
            angles: alloc::vec![Vector3::zeros(); skeleton.len()],
        }
    }

    pub fn to_params(&self, skeleton: &Skeleton) -> Vec<f64> {
        let mut p = Vec::with_capacity(skeleton.n_params());
        p.extend_from_slice(self.translation.as_slice());
        p.extend_from_slice(self.rotation.as_slice());
        for (j, a) in skeleton.dof_layout() {
            p.push(self.angles[j][a]);
        }
        p
    }

    pub fn from_params(skeleton: &Skeleton, params: &[f64]) -> Result<Self> {
        if params.len() != skeleton.n_params() {
            bail!(
                DimensionMismatch,
                "{} pose parameters, skeleton needs {}",
                params.len(),
                skeleton.n_params()
            );
        }
        let mut pose = Self::identity(skeleton);
        pose.translation = Vector3::new(params[0], params[1], params[2]);
        pose.rotation = Vector3::new(params[3], params[4], params[5]);
        for ((j, a), v) in skeleton.dof_layout().into_iter().zip(&params[6..]) {
            pose.angles[j][a] = *v;
        }
        Ok(pose)
    }

    /// Pose with `delta` added to the parameter vector, then clamped.
    pub fn updated(&self, skeleton: &Skeleton, delta: &[f64]) -> Result<Self> {
        let mut p = self.to_params(skeleton);
        if delta.len() != p.len() {
            bail!(DimensionMismatch, "pose update of length {}", delta.len());
        }
        p.iter_mut().zip(delta).for_each(|(a, d)| *a += d);
        Ok(Self::from_params(skeleton, &p)?.clamped(skeleton))
    }

    /// Joint angles clamped to their limits; non-finite entries reset to zero.
    pub fn clamped(&self, skeleton: &Skeleton) -> Self {
        let fix = |v: f64| if v.is_finite() { v } else { 0.0 };
        let mut out = self.clone();
        out.translation = self.translation.map(fix);
        out.rotation = self.rotation.map(fix);
        for (i, j) in skeleton.joints.iter().enumerate() {
            let mut a = Vector3::zeros();
            for &k in j.dof.axes() {
                let (lo, hi) = j.limits[k];
                a[k] = fix(self.angles[i][k]).clamp(lo, hi);
            }
            out.angles[i] = a;
        }
        out
    }

    pub fn is_valid(&self, skeleton: &Skeleton) -> bool {
        self.angles.len() == skeleton.len()
            && self.to_params(skeleton).iter().all(|v| v.is_finite())
            && self.clamped(skeleton) == *self
    }
}

/// World rotation and position of one joint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointTransform {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl JointTransform {
    pub fn apply(&self, rest_point: &Vector3<f64>, rest_joint: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (rest_point - rest_joint) + self.position
    }
}

fn rotation(v: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*v).into_inner()
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left Jacobian of SO(3): maps axis-angle rates to world angular velocity.
pub fn so3_left_jacobian(theta: &Vector3<f64>) -> Matrix3<f64> {
    let phi = theta.norm();
    let k = skew(theta);
    let (a, b) = if phi < 1e-6 {
        (0.5 - phi * phi / 24.0, 1.0 / 6.0 - phi * phi / 120.0)
    } else {
        (
            (1.0 - phi.cos()) / (phi * phi),
            (phi - phi.sin()) / (phi * phi * phi),
        )
    };
    Matrix3::identity() + k * a + k * k * b
}

/// World transforms of every joint, composed root to leaf.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Vec<JointTransform> {
    let mut out: Vec<JointTransform> = Vec::with_capacity(skeleton.len());
    for (i, j) in skeleton.joints.iter().enumerate() {
        let t = match j.parent {
            None => JointTransform {
                rotation: rotation(&pose.rotation),
                position: pose.translation + j.offset,
            },
            Some(p) => {
                let parent = out[p];
                JointTransform {
                    rotation: parent.rotation * rotation(&pose.angles[i]),
                    position: parent.position + parent.rotation * j.offset,
                }
            }
        };
        out.push(t);
    }
    out
}

/// Convenience: world joint positions.
pub fn joint_positions(skeleton: &Skeleton, pose: &Pose) -> Vec<Vector3<f64>> {
    forward_kinematics(skeleton, pose)
        .iter()
        .map(|t| t.position)
        .collect()
}

/// Rigid limb primitive, defined in the rest pose and carried by one joint.
#[derive(Clone, Debug, PartialEq)]
pub struct Capsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
    pub label: SemanticLabel,
    pub bone: usize,
    /// Joints whose transform blends in near the `a` and `b` ends.
    pub blend_a: Option<usize>,
    pub blend_b: Option<usize>,
}

/// A capsule placed in the world.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosedCapsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
    pub label: SemanticLabel,
}

impl PosedCapsule {
    /// Distance from `p` to the capsule axis segment.
    pub fn axis_distance(&self, p: &Vector3<f64>) -> f64 {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p - (self.a + ab * t)).norm()
    }

    /// Nearest positive distance along the unit ray `origin + t * dir` at
    /// which it enters the capsule.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let r = self.radius;
        let ba = self.b - self.a;
        let oa = origin - self.a;
        let baba = ba.dot(&ba);
        let bard = ba.dot(dir);
        let baoa = ba.dot(&oa);
        let k2 = baba - bard * bard;
        if k2 > 1e-12 * baba.max(1e-300) {
            let k1 = baba * dir.dot(&oa) - baoa * bard;
            let k0 = baba * oa.dot(&oa) - baoa * baoa - r * r * baba;
            let h = k1 * k1 - k2 * k0;
            if h < 0.0 {
                return None;
            }
            let t = (-k1 - h.sqrt()) / k2;
            let y = baoa + t * bard;
            if y > 0.0 && y < baba {
                return (t > 0.0).then_some(t);
            }
        }
        // the hit lies on an end cap: test both spheres, keep the nearest
        let sphere = |c: Vector3<f64>| {
            let oc = origin - c;
            let b = dir.dot(&oc);
            let h = b * b - (oc.dot(&oc) - r * r);
            if h < 0.0 {
                return None;
            }
            let t = -b - h.sqrt();
            (t > 0.0).then_some(t)
        };
        match (sphere(self.a), sphere(self.b)) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        }
    }
}

/// Surface point attached to the skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinVertex {
    pub rest: Vector3<f64>,
    /// Outward surface normal in the rest pose.
    pub normal: Vector3<f64>,
    /// `(joint, weight)` pairs, at most four, summing to one.
    pub weights: Vec<(usize, f64)>,
    pub label: SemanticLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkinnedMesh {
    pub vertices: Vec<SkinVertex>,
    /// Joint positions at bind time.
    pub bind: Vec<Vector3<f64>>,
}

impl SkinnedMesh {
    pub fn validate(&self, skeleton: &Skeleton) -> Result<()> {
        if self.bind.len() != skeleton.len() {
            bail!(
                DimensionMismatch,
                "bind pose has {} joints",
                self.bind.len()
            );
        }
        for (i, v) in self.vertices.iter().enumerate() {
            let sum: f64 = v.weights.iter().map(|w| w.1).sum();
            if v.weights.is_empty()
                || v.weights.len() > 4
                || v.weights
                    .iter()
                    .any(|&(j, w)| j >= skeleton.len() || !(w >= 0.0))
                || (sum - 1.0).abs() > 1e-9
            {
                bail!(InvalidInput, "vertex {i} has invalid skinning weights");
            }
            if !v.label.is_body() {
                bail!(InvalidInput, "vertex {i} is labelled background");
            }
        }
        Ok(())
    }
}

/// Skeleton, skin and limb capsules of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyModel {
    pub skeleton: Skeleton,
    pub mesh: SkinnedMesh,
    pub capsules: Vec<Capsule>,
}

impl BodyModel {
    pub fn validate(&self) -> Result<()> {
        self.mesh.validate(&self.skeleton)?;
        for c in &self.capsules {
            if c.bone >= self.skeleton.len() || !(c.radius > 0.0) || !c.label.is_body() {
                bail!(InvalidInput, "invalid capsule");
            }
        }
        Ok(())
    }

    /// Capsules carried rigidly by their bones.
    pub fn posed_capsules(&self, fk: &[JointTransform]) -> Vec<PosedCapsule> {
        self.capsules
            .iter()
            .map(|c| {
                let t = &fk[c.bone];
                let j = &self.mesh.bind[c.bone];
                PosedCapsule {
                    a: t.apply(&c.a, j),
                    b: t.apply(&c.b, j),
                    radius: c.radius,
                    label: c.label,
                }
            })
            .collect()
    }
}

/// Linear blend skinning: `v' = sum_b w_b T_b(v)`.
pub fn skin_vertices(mesh: &SkinnedMesh, fk: &[JointTransform]) -> Vec<Vector3<f64>> {
    mesh.vertices
        .iter()
        .map(|v| skin_one(mesh, fk, v))
        .collect()
}

fn skin_one(mesh: &SkinnedMesh, fk: &[JointTransform], v: &SkinVertex) -> Vector3<f64> {
    v.weights.iter().fold(Vector3::zeros(), |acc, &(b, w)| {
        acc + fk[b].apply(&v.rest, &mesh.bind[b]) * w
    })
}

/// Normals rotated by each vertex's dominant bone.
pub fn skin_normals(mesh: &SkinnedMesh, fk: &[JointTransform]) -> Vec<Vector3<f64>> {
    mesh.vertices
        .iter()
        .map(|v| {
            let (b, _) = v
                .weights
                .iter()
                .copied()
                .fold((0, -1.0), |m, x| if x.1 > m.1 { x } else { m });
            fk[b].rotation * v.normal
        })
        .collect()
}

/// World angular velocity axis and pivot of every rotational parameter, in
/// pose-vector order after the translation block.
fn rotational_axes(
    skeleton: &Skeleton,
    pose: &Pose,
    fk: &[JointTransform],
) -> Vec<(usize, Vector3<f64>, Vector3<f64>)> {
    let mut axes = Vec::with_capacity(skeleton.n_params() - 3);
    let jl = so3_left_jacobian(&pose.rotation);
    for k in 0..3 {
        axes.push((0, jl.column(k).into_owned(), fk[0].position));
    }
    for (j, k) in skeleton.dof_layout() {
        let parent = skeleton.joints[j]
            .parent
            .map_or(Matrix3::identity(), |p| fk[p].rotation);
        let w = parent * so3_left_jacobian(&pose.angles[j]).column(k);
        axes.push((j, w, fk[j].position));
    }
    axes
}

/// Jacobian of the posed positions of `subset` vertices with respect to the
/// pose vector, `3 * subset.len()` rows by `n_params` columns.
pub fn pose_jacobian(model: &BodyModel, pose: &Pose, subset: &[usize]) -> DMatrix<f64> {
    let skeleton = &model.skeleton;
    let fk = forward_kinematics(skeleton, pose);
    let axes = rotational_axes(skeleton, pose, &fk);
    let mut jac = DMatrix::zeros(3 * subset.len(), skeleton.n_params());
    for (row, &vi) in subset.iter().enumerate() {
        let v = &model.mesh.vertices[vi];
        for d in 0..3 {
            jac[(3 * row + d, d)] = 1.0;
        }
        for &(b, w) in &v.weights {
            let p = fk[b].apply(&v.rest, &model.mesh.bind[b]);
            for (col, (j, axis, pivot)) in axes.iter().enumerate() {
                if skeleton.is_ancestor_or_self(*j, b) {
                    let dp = axis.cross(&(p - pivot)) * w;
                    for d in 0..3 {
                        jac[(3 * row + d, 3 + col)] += dp[d];
                    }
                }
            }
        }
    }
    jac
}

/// Jacobian of one joint's world position, 3 rows by `n_params` columns.
pub fn joint_jacobian(skeleton: &Skeleton, pose: &Pose, joint: usize) -> DMatrix<f64> {
    let fk = forward_kinematics(skeleton, pose);
    let axes = rotational_axes(skeleton, pose, &fk);
    let mut jac = DMatrix::zeros(3, skeleton.n_params());
    for d in 0..3 {
        jac[(d, d)] = 1.0;
    }
    let p = fk[joint].position;
    for (col, (j, axis, pivot)) in axes.iter().enumerate() {
        if *j != joint && skeleton.is_ancestor_or_self(*j, joint) {
            let dp = axis.cross(&(p - pivot));
            for d in 0..3 {
                jac[(d, 3 + col)] = dp[d];
            }
        }
    }
    jac
}

const JOINT_NAMES: [&str; 17] = [
    "pelvis",
    "spine",
    "chest",
    "skull_base",
    "head_top",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
];

/// Joint names of [`default_human`], in storage order.
pub fn default_joint_names() -> &'static [&'static str] {
    &JOINT_NAMES
}

/// Golden angle in radians.
const GOLDEN: f64 = 2.399_963_229_728_653;

const BLEND_ZONE: f64 = 0.15;

/// Standard humanoid of height `scale` (ankle to head top): 17 joints,
/// 15 capsules and about 2000 skinned surface vertices.
pub fn default_human(scale: f64) -> Result<BodyModel> {
    if !(scale > 0.0) || !scale.is_finite() {
        bail!(InvalidInput, "body scale must be positive, got {scale}");
    }
    // proportions as (x, height above pelvis) in units of body height
    let up = |x: f64, y: f64| Vector3::new(x * scale, -y * scale, 0.0);
    let free = [(-core::f64::consts::PI, core::f64::consts::PI); 3];
    let none = [(0.0, 0.0); 3];
    let joint = |name: &str, parent: Option<usize>, offset, dof, limits| Joint {
        name: name.to_string(),
        parent,
        offset,
        dof,
        limits,
    };
    let spine_lim = [(-0.6, 0.6), (-0.6, 0.6), (-0.5, 0.5)];
    let neck_lim = [(-0.8, 0.8), (-1.2, 1.2), (-0.6, 0.6)];
    let shoulder_lim = [(-3.0, 3.0), (-2.0, 2.0), (-3.0, 3.0)];
    let hip_lim = [(-2.2, 1.0), (-1.0, 1.0), (-1.2, 1.2)];
    // flexion brings the forearm toward the camera (-z) and the shank away
    let elbow_lim = [(-2.6, 0.1), (0.0, 0.0), (0.0, 0.0)];
    let knee_lim = [(-0.1, 2.5), (0.0, 0.0), (0.0, 0.0)];
    let mut joints = alloc::vec![
        joint("pelvis", None, Vector3::zeros(), Dof::Fixed, free),
        joint("spine", Some(0), up(0.0, 0.10), Dof::Ball, spine_lim),
        joint("chest", Some(1), up(0.0, 0.15), Dof::Fixed, none),
        joint("skull_base", Some(2), up(0.0, 0.12), Dof::Ball, neck_lim),
        joint("head_top", Some(3), up(0.0, 0.18), Dof::Fixed, none),
    ];
    for side in [1.0, -1.0] {
        let s = joints.len();
        let name = |j: &str| {
            if side > 0.0 {
                alloc::format!("left_{j}")
            } else {
                alloc::format!("right_{j}")
            }
        };
        joints.push(joint(
            &name("shoulder"),
            Some(2),
            up(0.18 * side, 0.08),
            Dof::Ball,
            shoulder_lim,
        ));
        joints.push(joint(
            &name("elbow"),
            Some(s),
            up(0.0, -0.17),
            Dof::HingeX,
            elbow_lim,
        ));
        joints.push(joint(
            &name("wrist"),
            Some(s + 1),
            up(0.0, -0.16),
            Dof::Fixed,
            none,
        ));
    }
    for side in [1.0, -1.0] {
        let h = joints.len();
        let name = |j: &str| {
            if side > 0.0 {
                alloc::format!("left_{j}")
            } else {
                alloc::format!("right_{j}")
            }
        };
        joints.push(joint(
            &name("hip"),
            Some(0),
            up(0.09 * side, -0.03),
            Dof::Ball,
            hip_lim,
        ));
        joints.push(joint(
            &name("knee"),
            Some(h),
            up(0.0, -0.22),
            Dof::HingeX,
            knee_lim,
        ));
        joints.push(joint(
            &name("ankle"),
            Some(h + 1),
            up(0.0, -0.20),
            Dof::Fixed,
            none,
        ));
    }
    // head, torso, right arm, left arm, right leg, left leg
    let skeleton = Skeleton::new(joints, [3, 2, 9, 6, 15, 12])?;
    let rest = skeleton.rest_positions();

    use SemanticLabel::*;
    let cap = |a: Vector3<f64>, b: Vector3<f64>, r: f64, label, bone, blend_a, blend_b| Capsule {
        a,
        b,
        radius: r * scale,
        label,
        bone,
        blend_a,
        blend_b,
    };
    let mut capsules = alloc::vec![
        cap(up(0.0, 0.43), up(0.0, 0.49), 0.06, Head, 3, None, None),
        cap(up(0.0, 0.31), up(0.0, 0.37), 0.03, Head, 3, Some(2), None),
        cap(
            up(0.0, 0.12),
            up(0.0, 0.26),
            0.10,
            Torso,
            1,
            Some(0),
            Some(2)
        ),
        cap(up(-0.13, 0.31), up(0.13, 0.31), 0.045, Torso, 2, None, None),
        cap(
            up(0.0, -0.01),
            up(0.0, 0.10),
            0.085,
            Torso,
            0,
            None,
            Some(1)
        ),
        cap(
            up(-0.08, -0.03),
            up(0.08, -0.03),
            0.06,
            Torso,
            0,
            None,
            None
        ),
    ];
    for (shoulder, label) in [(5, LeftArm), (8, RightArm)] {
        let (elbow, wrist) = (shoulder + 1, shoulder + 2);
        capsules.push(cap(
            rest[shoulder],
            rest[elbow],
            0.03,
            label,
            shoulder,
            None,
            Some(elbow),
        ));
        capsules.push(cap(
            rest[elbow],
            rest[wrist] + up(0.0, -0.04),
            0.025,
            label,
            elbow,
            Some(shoulder),
            None,
        ));
    }
    for (hip, label) in [(11, LeftLeg), (14, RightLeg)] {
        let (knee, ankle) = (hip + 1, hip + 2);
        capsules.push(cap(
            rest[hip],
            rest[knee],
            0.045,
            label,
            hip,
            Some(0),
            Some(knee),
        ));
        capsules.push(cap(
            rest[knee],
            rest[ankle] + up(0.0, -0.02),
            0.035,
            label,
            knee,
            Some(hip),
            None,
        ));
    }

    // buried samples are dropped, so rescale the request once to land near 2000
    let first = sample_surface(&capsules, 2000).len();
    let vertices = sample_surface(&capsules, 2000 * 2000 / first.max(1));
    let model = BodyModel {
        skeleton,
        mesh: SkinnedMesh {
            vertices,
            bind: rest,
        },
        capsules,
    };
    model.validate()?;
    Ok(model)
}

fn orthonormal_basis(w: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if w.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = w.cross(&helper).normalize();
    (u, w.cross(&u))
}

/// Quasi-uniform surface points on each capsule, dropping those buried in
/// another capsule.
fn sample_surface(capsules: &[Capsule], target: usize) -> Vec<SkinVertex> {
    let area = |c: &Capsule| {
        let r = c.radius;
        2.0 * core::f64::consts::PI * r * (c.b - c.a).norm() + 4.0 * core::f64::consts::PI * r * r
    };
    let total: f64 = capsules.iter().map(area).sum();
    let plain: Vec<PosedCapsule> = capsules
        .iter()
        .map(|c| PosedCapsule {
            a: c.a,
            b: c.b,
            radius: c.radius,
            label: c.label,
        })
        .collect();
    let mut out = Vec::with_capacity(target);
    for (ci, c) in capsules.iter().enumerate() {
        let n = ((target as f64) * area(c) / total).round().max(8.0) as usize;
        let len = (c.b - c.a).norm();
        let axis = if len > 0.0 {
            (c.b - c.a) / len
        } else {
            -Vector3::y()
        };
        let (u, v) = orthonormal_basis(&axis);
        let r = c.radius;
        let n_cyl = ((n as f64) * len / (len + 2.0 * r)).round() as usize;
        let n_cap = (n - n_cyl) / 2;
        let mut candidates: Vec<(Vector3<f64>, Vector3<f64>, f64)> = Vec::with_capacity(n);
        for i in 0..n_cyl {
            let t = (i as f64 + 0.5) / n_cyl as f64;
            let phi = i as f64 * GOLDEN;
            let normal = u * phi.cos() + v * phi.sin();
            candidates.push((c.a + axis * (t * len) + normal * r, normal, t));
        }
        for (end, dir, t) in [(c.a, -axis, 0.0), (c.b, axis, 1.0)] {
            for i in 0..n_cap {
                let z = 1.0 - (i as f64 + 0.5) / n_cap as f64;
                let rho = (1.0 - z * z).sqrt();
                let phi = i as f64 * GOLDEN;
                let normal = u * (rho * phi.cos()) + v * (rho * phi.sin()) + dir * z;
                candidates.push((end + normal * r, normal, t));
            }
        }
        for (p, normal, t) in candidates {
            let buried = plain
                .iter()
                .enumerate()
                .any(|(oi, o)| oi != ci && o.axis_distance(&p) < o.radius - 1e-9);
            if buried {
                continue;
            }
            let mut weights = alloc::vec![(c.bone, 1.0)];
            let blend = if t > 1.0 - BLEND_ZONE {
                c.blend_b
                    .map(|j| (j, 0.5 * (t - (1.0 - BLEND_ZONE)) / BLEND_ZONE))
            } else if t < BLEND_ZONE {
                c.blend_a.map(|j| (j, 0.5 * (BLEND_ZONE - t) / BLEND_ZONE))
            } else {
                None
            };
            if let Some((j, w)) = blend {
                weights[0].1 = 1.0 - w;
                weights.push((j, w));
            }
            out.push(SkinVertex {
                rest: p,
                normal,
                weights,
                label: c.label,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngCore};

    fn random_pose(model: &BodyModel, rng: &mut impl RngCore) -> Pose {
        let sk = &model.skeleton;
        let mut p: Vec<f64> = (0..sk.n_params())
            .map(|_| rng.random_range(-0.8..0.8))
            .collect();
        p[2] += 2.5;
        Pose::from_params(sk, &p).unwrap().clamped(sk)
    }

    #[test]
    fn default_human_construction() {
        let model = default_human(1.7).unwrap();
        let sk = &model.skeleton;
        assert_eq!(sk.len(), 17);
        assert_eq!(sk.n_params(), 28);
        let rest = sk.rest_positions();
        let ys = |n: &str| rest[sk.joint_index(n).unwrap()].y;
        assert!((ys("left_ankle") - ys("head_top") - 1.7).abs() < 1e-6);
        let top = rest.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let bottom = rest.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        assert!((bottom - top - 1.7).abs() < 1e-6);
        assert!(rest[sk.joint_index("left_shoulder").unwrap()].x > 0.0);
        let n = model.mesh.vertices.len();
        assert!((1500..=2500).contains(&n), "{n} vertices");
        for label in SemanticLabel::BODY {
            assert!(
                model.mesh.vertices.iter().any(|v| v.label == label),
                "{label} has no vertices"
            );
        }
        assert_eq!(
            sk.joints[sk.center_joint(SemanticLabel::LeftArm).unwrap()].name,
            "left_elbow"
        );
        assert_eq!(
            sk.joints[sk.center_joint(SemanticLabel::RightLeg).unwrap()].name,
            "right_knee"
        );
        assert_eq!(
            sk.joints[sk.center_joint(SemanticLabel::Torso).unwrap()].name,
            "chest"
        );
        assert_eq!(
            sk.joints[sk.center_joint(SemanticLabel::Head).unwrap()].name,
            "skull_base"
        );
        assert!(sk.center_joint(SemanticLabel::Background).is_none());
    }

    #[test]
    fn identity_pose_gives_rest_geometry() {
        let model = default_human(1.7).unwrap();
        let pose = Pose::identity(&model.skeleton);
        let fk = forward_kinematics(&model.skeleton, &pose);
        for (t, r) in fk.iter().zip(model.skeleton.rest_positions()) {
            assert!((t.position - r).norm() < 1e-12);
        }
        for (p, v) in skin_vertices(&model.mesh, &fk)
            .iter()
            .zip(&model.mesh.vertices)
        {
            assert!((p - v.rest).norm() < 1e-12);
        }
    }

    #[test]
    fn root_translation_moves_everything() {
        let model = default_human(1.7).unwrap();
        let mut rng = crate::rng::seeded(1);
        let pose = random_pose(&model, &mut rng);
        let mut moved = pose.clone();
        let t = Vector3::new(0.3, -0.2, 0.7);
        moved.translation += t;
        let a = joint_positions(&model.skeleton, &pose);
        let b = joint_positions(&model.skeleton, &moved);
        for (x, y) in a.iter().zip(&b) {
            assert!((y - x - t).norm() < 1e-12);
        }
    }

    #[test]
    fn elbow_flexion_rotates_wrist() {
        let model = default_human(1.8).unwrap();
        let sk = &model.skeleton;
        let (e, w) = (
            sk.joint_index("left_elbow").unwrap(),
            sk.joint_index("left_wrist").unwrap(),
        );
        let mut pose = Pose::identity(sk);
        pose.angles[e].x = -core::f64::consts::FRAC_PI_2;
        let pos = joint_positions(sk, &pose);
        let forearm = 0.16 * 1.8;
        // a hanging forearm flexed by 90 degrees points at the camera
        let expected = pos[e] + Vector3::new(0.0, 0.0, -forearm);
        assert!((pos[w] - expected).norm() < 1e-9);
    }

    #[test]
    fn skinning_is_rigid_equivariant() {
        let model = default_human(1.7).unwrap();
        let mut rng = crate::rng::seeded(2);
        let pose = random_pose(&model, &mut rng);
        let fk = forward_kinematics(&model.skeleton, &pose);
        let base = skin_vertices(&model.mesh, &fk);
        // pre-multiplying the root by a rigid motion moves every vertex with it
        let g = Rotation3::new(Vector3::new(0.2, -0.4, 0.3));
        let shift = Vector3::new(0.1, 0.2, -0.3);
        let root = fk[0].position;
        let mut moved = pose.clone();
        moved.rotation = (g * Rotation3::new(pose.rotation)).scaled_axis();
        moved.translation = g * root + shift - model.skeleton.joints[0].offset;
        let fk2 = forward_kinematics(&model.skeleton, &moved);
        for (p, q) in base.iter().zip(skin_vertices(&model.mesh, &fk2)) {
            assert!((g * p + shift - q).norm() < 1e-9);
        }
    }

    #[test]
    fn blend_vertex_sits_between_rigid_images() {
        let model = default_human(1.7).unwrap();
        let mesh = &model.mesh;
        let mut rng = crate::rng::seeded(3);
        let pose = random_pose(&model, &mut rng);
        let fk = forward_kinematics(&model.skeleton, &pose);
        let v = mesh.vertices.iter().find(|v| v.weights.len() == 2).unwrap();
        let skinned = skin_vertices(
            &SkinnedMesh {
                vertices: alloc::vec![v.clone()],
                bind: mesh.bind.clone(),
            },
            &fk,
        )[0];
        let [(b0, w0), (b1, w1)] = [v.weights[0], v.weights[1]];
        let expected =
            fk[b0].apply(&v.rest, &mesh.bind[b0]) * w0 + fk[b1].apply(&v.rest, &mesh.bind[b1]) * w1;
        assert!((skinned - expected).norm() < 1e-12);
        let mut half = v.clone();
        half.weights = alloc::vec![(b0, 0.5), (b1, 0.5)];
        let mid = skin_vertices(
            &SkinnedMesh {
                vertices: alloc::vec![half],
                bind: mesh.bind.clone(),
            },
            &fk,
        )[0];
        let a = fk[b0].apply(&v.rest, &mesh.bind[b0]);
        let b = fk[b1].apply(&v.rest, &mesh.bind[b1]);
        assert!((mid - (a + b) / 2.0).norm() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let model = default_human(1.7).unwrap();
        let sk = &model.skeleton;
        let mut rng = crate::rng::seeded(4);
        let subset: Vec<usize> = (0..model.mesh.vertices.len()).step_by(37).collect();
        for _ in 0..100 {
            // stay inside the limits so clamping does not bend the derivative
            let pose = random_pose(&model, &mut rng);
            let mut params = pose.to_params(sk);
            for (i, (j, a)) in sk.dof_layout().into_iter().enumerate() {
                let (lo, hi) = sk.joints[j].limits[a];
                params[6 + i] = params[6 + i].clamp(lo + 1e-3, hi - 1e-3);
            }
            let pose = Pose::from_params(sk, &params).unwrap();
            let jac = pose_jacobian(&model, &pose, &subset);
            let eval = |p: &[f64]| {
                let fk = forward_kinematics(sk, &Pose::from_params(sk, p).unwrap());
                subset
                    .iter()
                    .flat_map(|&i| {
                        skin_one(&model.mesh, &fk, &model.mesh.vertices[i])
                            .as_slice()
                            .to_vec()
                    })
                    .collect::<Vec<_>>()
            };
            let h = 1e-6;
            let mut num = DMatrix::zeros(jac.nrows(), jac.ncols());
            for c in 0..params.len() {
                let mut up = params.clone();
                up[c] += h;
                let mut down = params.clone();
                down[c] -= h;
                let (fu, fd) = (eval(&up), eval(&down));
                for r in 0..jac.nrows() {
                    num[(r, c)] = (fu[r] - fd[r]) / (2.0 * h);
                }
            }
            let rel = (&jac - &num).norm() / num.norm();
            assert!(rel < 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn jacobian_is_identity_in_translation_and_sparse() {
        let model = default_human(1.7).unwrap();
        let sk = &model.skeleton;
        let pose = random_pose(&model, &mut crate::rng::seeded(5));
        let head: Vec<usize> = model
            .mesh
            .vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| v.label == SemanticLabel::Head && v.weights.len() == 1)
            .map(|(i, _)| i)
            .take(5)
            .collect();
        let jac = pose_jacobian(&model, &pose, &head);
        for r in 0..head.len() {
            for d in 0..3 {
                for c in 0..3 {
                    assert_eq!(jac[(3 * r + d, c)], if c == d { 1.0 } else { 0.0 });
                }
            }
        }
        // knee and elbow parameters never move the head
        for (i, (j, _)) in sk.dof_layout().into_iter().enumerate() {
            if sk.joints[j].name.contains("knee") || sk.joints[j].name.contains("elbow") {
                assert!(jac.column(6 + i).iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn joint_jacobian_matches_finite_differences() {
        let model = default_human(1.7).unwrap();
        let sk = &model.skeleton;
        let pose = random_pose(&model, &mut crate::rng::seeded(6));
        let params = pose.to_params(sk);
        for joint in [0, 3, 6, 12] {
            let jac = joint_jacobian(sk, &pose, joint);
            let h = 1e-6;
            for c in 0..params.len() {
                let mut up = params.clone();
                up[c] += h;
                let mut down = params.clone();
                down[c] -= h;
                let pu = joint_positions(sk, &Pose::from_params(sk, &up).unwrap())[joint];
                let pd = joint_positions(sk, &Pose::from_params(sk, &down).unwrap())[joint];
                let num = (pu - pd) / (2.0 * h);
                for d in 0..3 {
                    assert!(
                        (jac[(d, c)] - num[d]).abs() < 1e-6,
                        "joint {joint} column {c}"
                    );
                }
            }
        }
    }

    #[test]
    fn clamping_is_finite_and_within_limits() {
        let model = default_human(1.7).unwrap();
        let sk = &model.skeleton;
        let mut p = alloc::vec![1e9; sk.n_params()];
        p[7] = f64::NAN;
        let pose = Pose::from_params(sk, &p).unwrap().clamped(sk);
        assert!(pose.is_valid(sk));
        assert!(forward_kinematics(sk, &pose)
            .iter()
            .all(|t| t.position.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn capsule_ray_intersection() {
        let c = PosedCapsule {
            a: Vector3::new(-0.5, 0.0, 2.0),
            b: Vector3::new(0.5, 0.0, 2.0),
            radius: 0.1,
            label: SemanticLabel::Torso,
        };
        let o = Vector3::zeros();
        assert!((c.intersect(&o, &Vector3::z()).unwrap() - 1.9).abs() < 1e-12);
        // random rays: the hit lies on the surface and nothing before it is inside
        let mut rng = crate::rng::seeded(7);
        let mut hits = 0;
        for _ in 0..500 {
            let d = Vector3::new(
                rng.random_range(-0.35..0.35),
                rng.random_range(-0.08..0.08),
                1.0,
            )
            .normalize();
            let brute = (1..4000)
                .map(|i| i as f64 * 1e-3)
                .find(|t| c.axis_distance(&(d * *t)) <= c.radius);
            match c.intersect(&o, &d) {
                Some(t) => {
                    hits += 1;
                    assert!((c.axis_distance(&(d * t)) - c.radius).abs() < 1e-9);
                    assert!((brute.unwrap() - t).abs() <= 1e-3 + 1e-9);
                }
                None => assert!(brute.is_none()),
            }
        }
        assert!(hits > 100);
        assert!(c
            .intersect(&o, &Vector3::new(0.0, 0.2, 1.0).normalize())
            .is_none());
        // ray along the axis direction
        let along = PosedCapsule {
            a: Vector3::new(0.0, 0.0, 2.0),
            b: Vector3::new(0.0, 0.0, 3.0),
            ..c
        };
        assert!((along.intersect(&o, &Vector3::z()).unwrap() - 1.9).abs() < 1e-12);
    }
}
