//! Label-filtered window association, damped least-squares pose updates and
//! density-binned recovery targets.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Vector3};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::body::{
    forward_kinematics, joint_jacobian, joint_positions, pose_jacobian, skin_normals,
    skin_vertices, BodyModel, Pose,
};
use crate::error::{bail, Result};
use crate::fcn::{predict, NetworkParams, NetworkSpec};
use crate::geometry::{
    backproject, project, resize_and_normalize, CameraIntrinsics, LabelMap, PointCloud, RgbdFrame,
    SemanticLabel,
};

pub const MIN_DAMPING: f64 = 1e-6;
pub const MAX_DAMPING: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    /// Half-width of the association search window, pixels.
    pub window_radius: usize,
    /// Largest accepted vertex-to-observation distance, meters.
    pub max_assoc_dist: f64,
    /// Initial Levenberg-Marquardt damping for each frame.
    pub lm_damping: f64,
    /// Weight of the recovery term relative to one association.
    pub recovery_weight: f64,
    /// Inlier fraction below which track is considered lost.
    pub inlier_threshold: f64,
    pub iters_per_frame: usize,
    /// Smallest cosine between a vertex normal and its view ray for the
    /// vertex to take part in association.
    pub min_facing_cos: f64,
    /// Side of the square bins used for recovery targets, pixels.
    pub recovery_bin: usize,
    /// Keep the recovery term on in tracking mode too.
    pub recovery_always_on: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            window_radius: 5,
            max_assoc_dist: 0.25,
            lm_damping: 1e-3,
            recovery_weight: 0.01,
            inlier_threshold: 0.3,
            iters_per_frame: 5,
            min_facing_cos: 0.4,
            recovery_bin: 8,
            recovery_always_on: false,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.window_radius == 0 || self.iters_per_frame == 0 || self.recovery_bin == 0 {
            bail!(
                InvalidInput,
                "window radius, iterations and bin size must be positive"
            );
        }
        if !positive(self.max_assoc_dist)
            || !positive(self.lm_damping)
            || !positive(self.inlier_threshold)
        {
            bail!(
                InvalidInput,
                "distance, damping and inlier threshold must be positive"
            );
        }
        if !positive(self.recovery_weight) || self.recovery_weight >= 1.0 {
            bail!(
                InvalidInput,
                "recovery weight must lie in (0, 1), got {}",
                self.recovery_weight
            );
        }
        if !(0.0..1.0).contains(&self.min_facing_cos) {
            bail!(InvalidInput, "facing cosine must lie in [0, 1)");
        }
        if self.inlier_threshold >= 1.0 {
            bail!(InvalidInput, "inlier threshold must be below 1");
        }
        Ok(())
    }
}

/// Whether association respects labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssocMode {
    Semantic,
    /// Labels are ignored: every observation may match every vertex.
    Unfiltered,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Association {
    pub vertex: usize,
    pub point: usize,
    /// Squared distance, m².
    pub dist2: f64,
}

/// A posed model vertex as seen by the association step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelledVertex {
    pub index: usize,
    pub position: Vector3<f64>,
    pub label: SemanticLabel,
}

/// Pixel `(row, col)` nearest to the projection of `p`, possibly outside
/// the image.
fn pixel_of(p: &Vector3<f64>, k: &CameraIntrinsics) -> Option<(i64, i64)> {
    let (u, v) = project(p, k).ok()?.coords();
    Some(((v.round()) as i64, (u.round()) as i64))
}

/// For every vertex, the nearest observation inside a `(2r+1)²` pixel
/// window around its projection, restricted to the vertex's label in
/// semantic mode and to `max_assoc_dist`. Ties go to the lower point index.
pub fn associate(
    vertices: &[LabelledVertex],
    cloud: &PointCloud,
    k: &CameraIntrinsics,
    config: &TrackerConfig,
    mode: AssocMode,
) -> Vec<Association> {
    let lookup = cloud.pixel_lookup(k.width, k.height);
    let r = config.window_radius as i64;
    let max2 = config.max_assoc_dist * config.max_assoc_dist;
    let mut out = Vec::new();
    for v in vertices {
        let Some((row, col)) = pixel_of(&v.position, k) else {
            continue;
        };
        let mut best: Option<Association> = None;
        for rr in (row - r).max(0)..=(row + r).min(k.height as i64 - 1) {
            for cc in (col - r).max(0)..=(col + r).min(k.width as i64 - 1) {
                let Some(pi) = lookup[rr as usize * k.width + cc as usize] else {
                    continue;
                };
                let pi = pi as usize;
                if mode == AssocMode::Semantic && cloud.labels[pi] != v.label {
                    continue;
                }
                let d2 = (cloud.points[pi] - v.position).norm_squared();
                if d2 > max2 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => d2 < b.dist2 || (d2 == b.dist2 && pi < b.point),
                };
                if better {
                    best = Some(Association {
                        vertex: v.index,
                        point: pi,
                        dist2: d2,
                    });
                }
            }
        }
        out.extend(best);
    }
    out
}

/// Vertices facing the camera (cosine between normal and view ray of at
/// least `min_facing_cos`) and not hidden behind any model capsule (1 cm
/// tolerance).
pub fn visible_vertices(
    model: &BodyModel,
    pose: &Pose,
    min_facing_cos: f64,
) -> Vec<LabelledVertex> {
    let fk = forward_kinematics(&model.skeleton, pose);
    let verts = skin_vertices(&model.mesh, &fk);
    let normals = skin_normals(&model.mesh, &fk);
    let capsules = model.posed_capsules(&fk);
    let origin = Vector3::zeros();
    let mut out = Vec::new();
    for (i, (p, n)) in verts.iter().zip(&normals).enumerate() {
        let dist = p.norm();
        if p.z <= 0.0 || -n.dot(p) < min_facing_cos * dist {
            continue;
        }
        let dir = p / dist;
        let hidden = capsules
            .iter()
            .any(|c| c.intersect(&origin, &dir).is_some_and(|t| t < dist - 0.01));
        if !hidden {
            out.push(LabelledVertex {
                index: i,
                position: *p,
                label: model.mesh.vertices[i].label,
            });
        }
    }
    out
}

/// Recovery target per body label (indexed by `label.index() - 1`).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RecoveryTargets(pub [Option<Vector3<f64>>; 6]);

impl RecoveryTargets {
    pub fn get(&self, label: SemanticLabel) -> Option<Vector3<f64>> {
        if label.is_body() {
            self.0[label.index() - 1]
        } else {
            None
        }
    }

    pub fn count(&self) -> usize {
        self.0.iter().flatten().count()
    }
}

/// Grids the image into `bin_size`² cells; for each body label the cell
/// holding most of its pixels wins (ties: smallest row, then column) and
/// the target is the mean 3D position of that label's points in the cell.
pub fn compute_recovery_targets(cloud: &PointCloud, bin_size: usize) -> Result<RecoveryTargets> {
    if bin_size == 0 {
        bail!(InvalidInput, "bin size must be at least 1");
    }
    let mut cells: BTreeMap<(usize, usize, usize), (usize, Vector3<f64>)> = BTreeMap::new();
    for ((p, l), (row, col)) in cloud
        .points
        .iter()
        .zip(&cloud.labels)
        .zip(&cloud.pixel_origin)
    {
        if l.is_body() {
            let e = cells
                .entry((l.index() - 1, row / bin_size, col / bin_size))
                .or_insert((0, Vector3::zeros()));
            e.0 += 1;
            e.1 += p;
        }
    }
    let mut best: [Option<(usize, Vector3<f64>)>; 6] = [None; 6];
    for (&(label, _, _), &(n, sum)) in &cells {
        if best[label].is_none_or(|(m, _)| n > m) {
            best[label] = Some((n, sum));
        }
    }
    Ok(RecoveryTargets(
        best.map(|b| b.map(|(n, sum)| sum / n as f64)),
    ))
}

/// Recovery term: `√weight · (t_y − p_y)` for every available target, with
/// `p_y` the label's center joint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryTerm<'a> {
    pub targets: &'a RecoveryTargets,
    pub weight: f64,
}

/// Stacked `√w (t_y − p_y)` blocks and their Jacobian.
pub fn recovery_residual(
    model: &BodyModel,
    pose: &Pose,
    term: &RecoveryTerm,
) -> (DVector<f64>, DMatrix<f64>) {
    let sk = &model.skeleton;
    let joints = joint_positions(sk, pose);
    let s = term.weight.sqrt();
    let active: Vec<(usize, Vector3<f64>)> = SemanticLabel::BODY
        .iter()
        .filter_map(|l| Some((sk.center_joint(*l)?, term.targets.get(*l)?)))
        .collect();
    let mut r = DVector::zeros(3 * active.len());
    let mut jac = DMatrix::zeros(3 * active.len(), sk.n_params());
    for (i, (j, t)) in active.iter().enumerate() {
        let block = (t - joints[*j]) * s;
        r.fixed_rows_mut::<3>(3 * i).copy_from(&block);
        let jj = joint_jacobian(sk, pose, *j) * -s;
        jac.rows_mut(3 * i, 3).copy_from(&jj);
    }
    (r, jac)
}

fn association_residual(
    model: &BodyModel,
    pose: &Pose,
    assoc: &[Association],
    cloud: &PointCloud,
) -> DVector<f64> {
    let verts = skin_vertices(&model.mesh, &forward_kinematics(&model.skeleton, pose));
    let mut r = DVector::zeros(3 * assoc.len());
    for (i, a) in assoc.iter().enumerate() {
        r.fixed_rows_mut::<3>(3 * i)
            .copy_from(&(cloud.points[a.point] - verts[a.vertex]));
    }
    r
}

/// Residual `observation − vertex` stacked over associations (then the
/// recovery block, if any) and its Jacobian with respect to the pose
/// parameters.
pub fn residual_and_jacobian(
    model: &BodyModel,
    pose: &Pose,
    assoc: &[Association],
    cloud: &PointCloud,
    recovery: Option<&RecoveryTerm>,
) -> (DVector<f64>, DMatrix<f64>) {
    let r = association_residual(model, pose, assoc, cloud);
    let subset: Vec<usize> = assoc.iter().map(|a| a.vertex).collect();
    let jac = -pose_jacobian(model, pose, &subset);
    match recovery {
        None => (r, jac),
        Some(term) => {
            let (rr, jr) = recovery_residual(model, pose, term);
            let n = model.skeleton.n_params();
            let mut r_all = DVector::zeros(r.len() + rr.len());
            r_all.rows_mut(0, r.len()).copy_from(&r);
            r_all.rows_mut(r.len(), rr.len()).copy_from(&rr);
            let mut j_all = DMatrix::zeros(r_all.len(), n);
            j_all.rows_mut(0, r.len()).copy_from(&jac);
            j_all.rows_mut(r.len(), rr.len()).copy_from(&jr);
            (r_all, j_all)
        }
    }
}

/// Total squared residual.
pub fn cost(
    model: &BodyModel,
    pose: &Pose,
    assoc: &[Association],
    cloud: &PointCloud,
    recovery: Option<&RecoveryTerm>,
) -> f64 {
    let mut c = association_residual(model, pose, assoc, cloud).norm_squared();
    if let Some(term) = recovery {
        c += recovery_residual(model, pose, term).0.norm_squared();
    }
    c
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmOutcome {
    pub pose: Pose,
    pub cost_before: f64,
    pub cost_after: f64,
    pub accepted: bool,
    /// Normal equations stayed unsolvable up to the largest damping.
    pub singular: bool,
}

/// One damped Gauss-Newton step `Δ = −(JᵀJ + μI)⁻¹ Jᵀ r`. On a cost
/// increase the step is retried with doubled damping; on success damping is
/// halved. Damping stays within `[MIN_DAMPING, MAX_DAMPING]`; when it runs
/// out the pose is returned unchanged.
pub fn lm_step(
    model: &BodyModel,
    pose: &Pose,
    assoc: &[Association],
    cloud: &PointCloud,
    recovery: Option<&RecoveryTerm>,
    damping: &mut f64,
) -> Result<LmOutcome> {
    let sk = &model.skeleton;
    let (r, jac) = residual_and_jacobian(model, pose, assoc, cloud, recovery);
    let c0 = r.norm_squared();
    let jtj = jac.tr_mul(&jac);
    let neg_g = -jac.tr_mul(&r);
    let n = jtj.nrows();
    let mut singular = true;
    *damping = damping.clamp(MIN_DAMPING, MAX_DAMPING);
    loop {
        let mut a = jtj.clone();
        for i in 0..n {
            a[(i, i)] += *damping;
        }
        if let Some(ch) = a.cholesky() {
            singular = false;
            let delta = ch.solve(&neg_g);
            if delta.iter().all(|d| *d == 0.0) {
                return Ok(LmOutcome {
                    pose: pose.clone(),
                    cost_before: c0,
                    cost_after: c0,
                    accepted: true,
                    singular,
                });
            }
            let candidate = pose.updated(sk, delta.as_slice())?;
            let c1 = cost(model, &candidate, assoc, cloud, recovery);
            if c1 <= c0 {
                *damping = (*damping * 0.5).max(MIN_DAMPING);
                return Ok(LmOutcome {
                    pose: candidate,
                    cost_before: c0,
                    cost_after: c1,
                    accepted: true,
                    singular,
                });
            }
        }
        if *damping >= MAX_DAMPING {
            return Ok(LmOutcome {
                pose: pose.clone(),
                cost_before: c0,
                cost_after: c0,
                accepted: false,
                singular,
            });
        }
        *damping = (*damping * 2.0).min(MAX_DAMPING);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Tracking,
    Recovery,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Tracking => "TRACKING",
            Mode::Recovery => "RECOVERY",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackState {
    pub pose: Pose,
    pub associations: Vec<Association>,
    /// Associations over visible vertices after the last frame.
    pub inlier_fraction: f64,
    pub mode: Mode,
    pub recovery_targets: Option<RecoveryTargets>,
    /// Consecutive frames below the inlier threshold.
    pub low_streak: usize,
}

impl TrackState {
    /// Fresh state; tracking starts in recovery mode.
    pub fn new(pose: Pose) -> Self {
        Self {
            pose,
            associations: Vec::new(),
            inlier_fraction: 0.0,
            mode: Mode::Recovery,
            recovery_targets: None,
            low_streak: 0,
        }
    }
}

/// Updates the mode from the latest inlier fraction: three consecutive
/// frames below the threshold enter recovery; leaving it needs the
/// threshold plus 0.1.
pub fn detect_mode(state: &mut TrackState, config: &TrackerConfig) -> Mode {
    let f = state.inlier_fraction;
    if f < config.inlier_threshold {
        state.low_streak += 1;
    } else {
        state.low_streak = 0;
    }
    state.mode = match state.mode {
        Mode::Tracking if state.low_streak >= 3 => Mode::Recovery,
        Mode::Recovery if f >= config.inlier_threshold + 0.1 => Mode::Tracking,
        m => m,
    };
    state.mode
}

/// Source of per-frame labels for the tracker.
#[derive(Clone, Copy, Debug)]
pub enum Labeller<'a> {
    /// Rendered ground truth, one map per frame.
    Gt(&'a [LabelMap]),
    /// No labels: association ignores semantics.
    None,
    Fcn {
        spec: &'a NetworkSpec,
        params: &'a NetworkParams<f32>,
    },
}

impl Labeller<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Labeller::Gt(_) => "gt",
            Labeller::None => "none",
            Labeller::Fcn { .. } => "fcn",
        }
    }

    pub fn assoc_mode(&self) -> AssocMode {
        match self {
            Labeller::None => AssocMode::Unfiltered,
            _ => AssocMode::Semantic,
        }
    }

    pub fn labels(&self, index: usize, frame: &RgbdFrame) -> Result<LabelMap> {
        let (w, h) = (frame.width(), frame.height());
        match self {
            Labeller::Gt(maps) => {
                let Some(m) = maps.get(index) else {
                    bail!(InvalidInput, "no ground-truth labels for frame {index}");
                };
                if (m.width, m.height) != (w, h) {
                    bail!(
                        DimensionMismatch,
                        "labels {}x{} for frame {w}x{h}",
                        m.width,
                        m.height
                    );
                }
                Ok(m.clone())
            }
            Labeller::None => Ok(LabelMap::filled(w, h, SemanticLabel::Background)),
            Labeller::Fcn { spec, params } => {
                let input = resize_and_normalize(frame)?;
                let labels = predict(spec, params, &input)?.labels;
                Ok(if (labels.width, labels.height) == (w, h) {
                    labels
                } else {
                    labels.resized(w, h)
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameReport {
    pub pose: Pose,
    pub joints: Vec<Vector3<f64>>,
    pub inlier_fraction: f64,
    /// Mode the frame was processed in.
    pub mode: Mode,
    pub associations: usize,
    /// `(before, after)` cost of every accepted step.
    pub steps: Vec<(f64, f64)>,
    /// Some iteration hit singular normal equations at maximal damping.
    pub flagged: bool,
}

/// Per-sequence tracker carrying pose and mode between frames.
#[derive(Clone, Debug)]
pub struct Tracker<'m> {
    model: &'m BodyModel,
    config: TrackerConfig,
    state: TrackState,
}

impl<'m> Tracker<'m> {
    pub fn new(model: &'m BodyModel, init: Pose, config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        if !init.is_valid(&model.skeleton) {
            bail!(InvalidInput, "initial pose does not fit the skeleton");
        }
        Ok(Self {
            model,
            config,
            state: TrackState::new(init),
        })
    }

    pub fn state(&self) -> &TrackState {
        &self.state
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn track_frame(
        &mut self,
        frame: &RgbdFrame,
        labels: &LabelMap,
        mode: AssocMode,
    ) -> Result<FrameReport> {
        let model = self.model;
        let k = &frame.intrinsics;
        let cloud = backproject(frame, Some(labels))?;
        let frame_mode = self.state.mode;
        let use_recovery = frame_mode == Mode::Recovery || self.config.recovery_always_on;
        self.state.recovery_targets = if use_recovery {
            Some(compute_recovery_targets(&cloud, self.config.recovery_bin)?)
        } else {
            None
        };
        let targets = self.state.recovery_targets.unwrap_or_default();
        let term = RecoveryTerm {
            targets: &targets,
            weight: self.config.recovery_weight,
        };
        let recovery = (use_recovery && targets.count() > 0).then_some(&term);

        let mut damping = self.config.lm_damping;
        let mut steps = Vec::new();
        let mut flagged = false;
        for _ in 0..self.config.iters_per_frame {
            let visible = visible_vertices(model, &self.state.pose, self.config.min_facing_cos);
            let assoc = associate(&visible, &cloud, k, &self.config, mode);
            if assoc.is_empty() && recovery.is_none() {
                break;
            }
            let out = lm_step(
                model,
                &self.state.pose,
                &assoc,
                &cloud,
                recovery,
                &mut damping,
            )?;
            flagged |= out.singular;
            if out.accepted {
                steps.push((out.cost_before, out.cost_after));
                self.state.pose = out.pose;
            }
        }
        let visible = visible_vertices(model, &self.state.pose, self.config.min_facing_cos);
        let assoc = associate(&visible, &cloud, k, &self.config, mode);
        if mode == AssocMode::Semantic {
            for a in &assoc {
                assert_eq!(
                    model.mesh.vertices[a.vertex].label, cloud.labels[a.point],
                    "cross-label association"
                );
            }
        }
        self.state.inlier_fraction = if visible.is_empty() {
            0.0
        } else {
            assoc.len() as f64 / visible.len() as f64
        };
        let n_assoc = assoc.len();
        self.state.associations = assoc;
        detect_mode(&mut self.state, &self.config);
        Ok(FrameReport {
            joints: joint_positions(&model.skeleton, &self.state.pose),
            pose: self.state.pose.clone(),
            inlier_fraction: self.state.inlier_fraction,
            mode: frame_mode,
            associations: n_assoc,
            steps,
            flagged,
        })
    }
}

/// Tracks every frame in order from `init`.
pub fn track_sequence(
    frames: &[RgbdFrame],
    labeller: &Labeller,
    model: &BodyModel,
    init: &Pose,
    config: &TrackerConfig,
) -> Result<Vec<FrameReport>> {
    let mut tracker = Tracker::new(model, init.clone(), config.clone())?;
    let mode = labeller.assoc_mode();
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let labels = labeller.labels(i, f)?;
            tracker.track_frame(f, &labels, mode)
        })
        .collect()
}

/// Mean joint distance between two joint sets.
pub fn mean_joint_error(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::default_human;
    use crate::synth::{render_pose, Palette};
    use rand::Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::network_default()
    }

    fn standing(model: &BodyModel) -> Pose {
        let mut p = Pose::identity(&model.skeleton);
        p.translation = Vector3::new(0.05, 0.0, 2.5);
        p.rotation = Vector3::new(0.0, 0.2, 0.0);
        p
    }

    fn cloud_of(
        points: Vec<Vector3<f64>>,
        labels: Vec<SemanticLabel>,
        pixels: Vec<(usize, usize)>,
    ) -> PointCloud {
        PointCloud {
            points,
            labels,
            pixel_origin: pixels,
        }
    }

    #[test]
    fn association_basics() {
        let k = cam();
        let p = k.ray(40.0, 30.0) * 2.0;
        let v = LabelledVertex {
            index: 7,
            position: p,
            label: SemanticLabel::Head,
        };
        let cfg = TrackerConfig::default();
        let same = cloud_of(
            alloc::vec![p],
            alloc::vec![SemanticLabel::Head],
            alloc::vec![(30, 40)],
        );
        assert_eq!(
            associate(&[v], &same, &k, &cfg, AssocMode::Semantic),
            [Association {
                vertex: 7,
                point: 0,
                dist2: 0.0
            }]
        );
        let bg = cloud_of(
            alloc::vec![p],
            alloc::vec![SemanticLabel::Background],
            alloc::vec![(30, 40)],
        );
        assert!(associate(&[v], &bg, &k, &cfg, AssocMode::Semantic).is_empty());
        assert_eq!(
            associate(&[v], &bg, &k, &cfg, AssocMode::Unfiltered).len(),
            1
        );
        let far = cloud_of(
            alloc::vec![p * 1.5],
            alloc::vec![SemanticLabel::Head],
            alloc::vec![(30, 40)],
        );
        assert!(associate(&[v], &far, &k, &cfg, AssocMode::Semantic).is_empty());
    }

    #[test]
    fn window_association_matches_brute_force() {
        let k = cam();
        let cfg = TrackerConfig::default();
        let mut rng = crate::rng::seeded(42);
        let mut compared = 0;
        for _ in 0..1000 {
            // random depth image with random labels
            let n = k.pixel_count();
            let depth: Vec<f32> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        0.0
                    } else {
                        rng.random_range(1.5..3.0)
                    }
                })
                .collect();
            let labels: Vec<SemanticLabel> = (0..n)
                .map(|_| SemanticLabel::ALL[rng.random_range(0..7)])
                .collect();
            let frame = RgbdFrame::new(k, alloc::vec![[0.5; 3]; n], depth, 4.5).unwrap();
            let lm = LabelMap::from_labels(k.width, k.height, labels).unwrap();
            let cloud = backproject(&frame, Some(&lm)).unwrap();
            let vertices: Vec<LabelledVertex> = (0..5)
                .map(|i| LabelledVertex {
                    index: i,
                    position: k.ray(rng.random_range(0.0..128.0), rng.random_range(0.0..106.0))
                        * rng.random_range(1.5..3.0),
                    label: SemanticLabel::BODY[rng.random_range(0..6)],
                })
                .collect();
            let got = associate(&vertices, &cloud, &k, &cfg, AssocMode::Semantic);
            for a in &got {
                assert_eq!(cloud.labels[a.point], vertices[a.vertex].label);
            }
            for v in &vertices {
                let best = (0..cloud.len())
                    .filter(|&i| cloud.labels[i] == v.label)
                    .map(|i| (i, (cloud.points[i] - v.position).norm_squared()))
                    .filter(|(_, d)| *d <= cfg.max_assoc_dist * cfg.max_assoc_dist)
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                let Some((bi, bd)) = best else { continue };
                let (row, col) = pixel_of(&v.position, &k).unwrap();
                let (pr, pc) = cloud.pixel_origin[bi];
                if (pr as i64 - row).abs() <= 5 && (pc as i64 - col).abs() <= 5 {
                    let a = got
                        .iter()
                        .find(|a| a.vertex == v.index)
                        .expect("missing association");
                    assert_eq!((a.point, a.dist2), (bi, bd));
                    compared += 1;
                }
            }
        }
        assert!(compared > 1000, "{compared}");
    }

    /// All posed vertices as observations, one-to-one associations.
    fn exact_scene(model: &BodyModel, pose: &Pose) -> (PointCloud, Vec<Association>) {
        let verts = skin_vertices(&model.mesh, &forward_kinematics(&model.skeleton, pose));
        let n = verts.len();
        let labels = model.mesh.vertices.iter().map(|v| v.label).collect();
        let assoc = (0..n)
            .map(|i| Association {
                vertex: i,
                point: i,
                dist2: 0.0,
            })
            .collect();
        (cloud_of(verts, labels, alloc::vec![(0, 0); n]), assoc)
    }

    #[test]
    fn residual_zero_and_jacobian_matches_finite_differences() {
        let model = default_human(1.75).unwrap();
        let sk = &model.skeleton;
        let mut rng = crate::rng::seeded(3);
        let mut pose = standing(&model);
        for a in pose.angles.iter_mut() {
            *a = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            );
        }
        let pose = pose.clamped(sk);
        let (cloud, assoc) = exact_scene(&model, &pose);
        let (r, _) = residual_and_jacobian(&model, &pose, &assoc, &cloud, None);
        assert!(r.norm() < 1e-12);

        let targets = RecoveryTargets([
            Some(Vector3::new(0.1, -0.6, 2.4)),
            None,
            Some(Vector3::new(0.3, 0.0, 2.5)),
            None,
            None,
            None,
        ]);
        let term = RecoveryTerm {
            targets: &targets,
            weight: 0.01,
        };
        let sub: Vec<Association> = assoc.iter().step_by(13).copied().collect();
        let (r0, jac) = residual_and_jacobian(&model, &pose, &sub, &cloud, Some(&term));
        assert_eq!(r0.len(), 3 * sub.len() + 6);
        let base = pose.to_params(sk);
        let h = 1e-6;
        let mut fd = DMatrix::zeros(jac.nrows(), jac.ncols());
        for c in 0..base.len() {
            let eval = |s: f64| {
                let mut p = base.clone();
                p[c] += s;
                residual_and_jacobian(
                    &model,
                    &Pose::from_params(sk, &p).unwrap(),
                    &sub,
                    &cloud,
                    Some(&term),
                )
                .0
            };
            fd.set_column(c, &((eval(h) - eval(-h)) / (2.0 * h)));
        }
        let rel = (&jac - &fd).norm() / fd.norm();
        assert!(rel < 1e-5, "{rel}");
    }

    #[test]
    fn lm_zero_residual_gives_zero_step() {
        let model = default_human(1.7).unwrap();
        let pose = standing(&model);
        let (cloud, assoc) = exact_scene(&model, &pose);
        let mut mu = 1e-3;
        let out = lm_step(&model, &pose, &assoc, &cloud, None, &mut mu).unwrap();
        assert_eq!(out.pose, pose);
        assert!(out.cost_after < 1e-20);
    }

    #[test]
    fn lm_recovers_translation_offset() {
        let model = default_human(1.7).unwrap();
        let sk = &model.skeleton;
        let truth = standing(&model);
        let (cloud, assoc) = exact_scene(&model, &truth);
        let mut pose = truth.clone();
        pose.translation += Vector3::new(0.03, -0.03, 0.0282842712474619);
        let gt = joint_positions(sk, &truth);
        let mut mu = 1e-3;
        let mut last = f64::INFINITY;
        let mut iters = 0;
        while mean_joint_error(&joint_positions(sk, &pose), &gt) >= 1e-3 {
            iters += 1;
            assert!(iters <= 10, "no convergence");
            let out = lm_step(&model, &pose, &assoc, &cloud, None, &mut mu).unwrap();
            assert!(out.accepted && out.cost_after <= out.cost_before && out.cost_before <= last);
            last = out.cost_after;
            pose = out.pose;
        }
    }

    #[test]
    fn recovery_targets_by_density() {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        let mut pix = Vec::new();
        // compact head blob, plus a sparse scatter of head pixels elsewhere
        for r in 20..26 {
            for c in 40..46 {
                pts.push(Vector3::new(c as f64 * 0.01, r as f64 * 0.01, 2.0));
                labels.push(SemanticLabel::Head);
                pix.push((r, c));
            }
        }
        for i in 0..5 {
            pts.push(Vector3::new(1.0, 1.0, 3.0));
            labels.push(SemanticLabel::Head);
            pix.push((90, 10 + 20 * i));
        }
        let cloud = cloud_of(pts, labels, pix);
        let bin = 8;
        let t = compute_recovery_targets(&cloud, bin).unwrap();
        assert_eq!(t.count(), 1);
        assert!(t.get(SemanticLabel::Torso).is_none());
        let head = t.get(SemanticLabel::Head).unwrap();
        // oracle: densest bin by brute-force scan, then its mean
        let mut best = (0, 0, 0);
        for br in 0..14 {
            for bc in 0..16 {
                let n = cloud
                    .pixel_origin
                    .iter()
                    .filter(|(r, c)| r / bin == br && c / bin == bc)
                    .count();
                if n > best.0 {
                    best = (n, br, bc);
                }
            }
        }
        let members: Vec<_> = (0..cloud.len())
            .filter(|&i| {
                cloud.pixel_origin[i].0 / bin == best.1 && cloud.pixel_origin[i].1 / bin == best.2
            })
            .collect();
        let mean = members
            .iter()
            .map(|&i| cloud.points[i])
            .sum::<Vector3<f64>>()
            / members.len() as f64;
        assert!((head - mean).norm() < 1e-12);
        let centroid = Vector3::new(0.425, 0.225, 2.0);
        assert!((head - centroid).norm() < 0.08);

        let tie = cloud_of(
            alloc::vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(1.0, 0.0, 2.0)],
            alloc::vec![SemanticLabel::LeftArm; 2],
            alloc::vec![(50, 50), (10, 90)],
        );
        assert_eq!(
            compute_recovery_targets(&tie, 4)
                .unwrap()
                .get(SemanticLabel::LeftArm),
            Some(Vector3::new(1.0, 0.0, 2.0))
        );
        assert!(compute_recovery_targets(&tie, 0).is_err());
    }

    #[test]
    fn recovery_term_alone_pulls_root() {
        let model = default_human(1.7).unwrap();
        let sk = &model.skeleton;
        let truth = standing(&model);
        let joints = joint_positions(sk, &truth);
        let mut t = RecoveryTargets::default();
        for l in SemanticLabel::BODY {
            t.0[l.index() - 1] = Some(joints[sk.center_joint(l).unwrap()]);
        }
        let term = RecoveryTerm {
            targets: &t,
            weight: 0.01,
        };
        assert!(recovery_residual(&model, &truth, &term).0.norm() < 1e-12);
        let none = RecoveryTargets::default();
        assert_eq!(
            recovery_residual(
                &model,
                &truth,
                &RecoveryTerm {
                    targets: &none,
                    weight: 0.01
                }
            )
            .0
            .len(),
            0
        );

        let empty = PointCloud {
            points: Vec::new(),
            labels: Vec::new(),
            pixel_origin: Vec::new(),
        };
        let mut pose = truth.clone();
        pose.translation += Vector3::new(0.1, 0.05, -0.1);
        let start = (pose.translation - truth.translation).norm();
        let mut mu = 1e-3;
        for _ in 0..20 {
            pose = lm_step(&model, &pose, &[], &empty, Some(&term), &mut mu)
                .unwrap()
                .pose;
        }
        assert!((pose.translation - truth.translation).norm() < 0.2 * start);
    }

    #[test]
    fn mode_detection() {
        let model = default_human(1.7).unwrap();
        let cfg = TrackerConfig::default();
        let mut s = TrackState::new(Pose::identity(&model.skeleton));
        assert_eq!(s.mode, Mode::Recovery);
        let run = |s: &mut TrackState, trace: &[f64]| {
            trace
                .iter()
                .map(|f| {
                    s.inlier_fraction = *f;
                    detect_mode(s, &cfg)
                })
                .collect::<Vec<_>>()
        };
        // inside the hysteresis band recovery persists
        assert!(run(&mut s, &[0.35, 0.38])
            .iter()
            .all(|m| *m == Mode::Recovery));
        assert_eq!(run(&mut s, &[0.9; 4]), [Mode::Tracking; 4]);
        // oscillation around the threshold never reaches three low frames
        assert!(run(&mut s, &[0.29, 0.31, 0.29, 0.29, 0.31, 0.25, 0.35])
            .iter()
            .all(|m| *m == Mode::Tracking));
        assert_eq!(
            run(&mut s, &[0.1, 0.1, 0.1]),
            [Mode::Tracking, Mode::Tracking, Mode::Recovery]
        );
    }

    #[test]
    fn static_sequence_with_gt_labels_stays_locked() {
        let model = default_human(1.72).unwrap();
        let sk = &model.skeleton;
        let pose = standing(&model);
        let (frame, labels) = render_pose(&model, &pose, &Palette::random(1), &cam(), 4.5).unwrap();
        let frames = alloc::vec![frame; 6];
        let maps = alloc::vec![labels; 6];
        let gt = joint_positions(sk, &pose);
        let out = track_sequence(
            &frames,
            &Labeller::Gt(&maps),
            &model,
            &pose,
            &TrackerConfig::default(),
        )
        .unwrap();
        for r in &out {
            assert!(
                mean_joint_error(&r.joints, &gt) < 0.01,
                "{}",
                mean_joint_error(&r.joints, &gt)
            );
            assert!(r.steps.iter().all(|(a, b)| b <= a));
            assert!(r.inlier_fraction > 0.5);
        }
        assert_eq!(out[0].mode, Mode::Recovery);
        assert_eq!(out[1].mode, Mode::Tracking);
    }

    #[test]
    fn background_labels_leave_pose_unchanged() {
        let model = default_human(1.72).unwrap();
        let pose = standing(&model);
        let (frame, _) = render_pose(&model, &pose, &Palette::random(1), &cam(), 4.5).unwrap();
        let mut start = pose.clone();
        start.translation.x += 0.1;
        let bg = LabelMap::filled(128, 106, SemanticLabel::Background);
        let mut tr = Tracker::new(&model, start.clone(), TrackerConfig::default()).unwrap();
        let r = tr.track_frame(&frame, &bg, AssocMode::Semantic).unwrap();
        assert_eq!(r.pose, start);
        assert_eq!(r.associations, 0);
        assert_eq!(tr.state().inlier_fraction, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrackerConfig::default().validate().is_ok());
        assert!(TrackerConfig {
            recovery_weight: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrackerConfig {
            window_radius: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrackerConfig {
            max_assoc_dist: f64::NAN,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
