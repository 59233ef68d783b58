//! Experiment drivers shared by the command-line tool and the acceptance
//! suite: dataset generation, network training, the occlusion sweep, the
//! augmentation ablation and timing.

use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use semtrack_core::body::{BodyModel, Pose};
use semtrack_core::eval::{
    default_thresholds, joint_accuracy_curve, AccuracyCurve, SegAccumulator, SegMetrics,
};
use semtrack_core::fcn::{
    build_fast_fcn, predict, train, NetworkParams, NetworkSpec, StepInfo, TrainConfig, TrainReport,
};
use semtrack_core::geometry::resize_and_normalize;
use semtrack_core::nn::AdamConfig;
use semtrack_core::synth::{
    body_bounds, generate_sequence, insert_object, occlusion_fraction, procedural_crop,
    random_augmentation, subject_depth, AugmentSpec, AugmentedFrames, DepthAnchor, MotionKind,
    MotionScript, ObjectCrop, ObjectKind, Sequence, Subject, CROP_CAPTURE_DEPTH,
};
use semtrack_core::tracker::{track_sequence, Labeller, TrackerConfig};
use semtrack_core::{CameraIntrinsics, LabelMap, RgbdFrame};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::plot::{line_chart, Series};
use crate::results::{comparison_csv, curve_csv};
use crate::seqio::StoredSequence;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "SEMTRACK_THREADS";

/// Worker pool honoring [`THREADS_ENV`] (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v.parse::<usize>().ok().filter(|n| *n > 0).ok_or_else(|| {
            Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Independent seed for `(stream, index)` under a run seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0xA076_1D64_78BD_642F)
        ^ index.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_TRAIN: u64 = 1;
const STREAM_SEG_TEST: u64 = 2;
const STREAM_SWEEP: u64 = 3;
const STREAM_CROPS: u64 = 4;
const STREAM_SYNTH: u64 = 5;

pub fn camera() -> CameraIntrinsics {
    CameraIntrinsics::network_default()
}

/// One rendered subject performing one motion.
pub struct SynthRun {
    pub subject: Subject,
    pub script: MotionScript,
    pub sequence: Sequence,
}

pub fn synth_run(seed: u64, motion: MotionKind, frames: usize, max_range: f32) -> Result<SynthRun> {
    let subject = Subject::random(derive_seed(seed, STREAM_SYNTH, 0))?;
    let base = subject.random_placement(derive_seed(seed, STREAM_SYNTH, 1));
    let script = MotionScript::builtin(
        motion,
        &subject.model,
        &base,
        frames,
        derive_seed(seed, STREAM_SYNTH, 2),
    )?;
    let sequence = generate_sequence(&subject, &script, frames, &camera(), max_range)?;
    Ok(SynthRun {
        subject,
        script,
        sequence,
    })
}

/// Sequence with labels, joints and poses attached, ready to write.
pub fn stored_sequence(run: &SynthRun, provenance: serde_json::Value) -> StoredSequence {
    let sk = &run.subject.model.skeleton;
    let mut s = StoredSequence::new(run.sequence.frames.clone());
    s.labels = Some(run.sequence.gt.labels.clone());
    s.joint_names = Some(sk.joints.iter().map(|j| j.name.clone()).collect());
    s.joints = Some(run.sequence.gt.joints.clone());
    s.poses = Some(
        run.sequence
            .gt
            .poses
            .iter()
            .map(|p| p.to_params(sk))
            .collect(),
    );
    s.provenance = Some(provenance);
    s
}

pub fn training_crops() -> Vec<ObjectCrop> {
    ObjectKind::TRAIN
        .iter()
        .enumerate()
        .map(|(i, k)| procedural_crop(*k, &camera(), derive_seed(0, STREAM_CROPS, i as u64)))
        .collect()
}

/// Crops of object kinds never seen in training.
pub fn held_out_crops() -> Vec<ObjectCrop> {
    ObjectKind::HELD_OUT
        .iter()
        .enumerate()
        .map(|(i, k)| procedural_crop(*k, &camera(), derive_seed(1, STREAM_CROPS, i as u64)))
        .collect()
}

/// Rendered training frames: `train.sequences` subjects cycling through the
/// built-in motions.
pub fn training_frames(cfg: &RunConfig) -> Result<Vec<(RgbdFrame, LabelMap)>> {
    let t = &cfg.train;
    let per_seq: Vec<Vec<(RgbdFrame, LabelMap)>> = (0..t.sequences)
        .into_par_iter()
        .map(|s| {
            let seed = derive_seed(cfg.seed, STREAM_TRAIN, s as u64);
            let motion = MotionKind::ALL[s % MotionKind::ALL.len()];
            let run = synth_run(seed, motion, t.frames_per_sequence, cfg.synth.max_range)?;
            Ok(run
                .sequence
                .frames
                .into_iter()
                .zip(run.sequence.gt.labels)
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_seq.into_iter().flatten().collect())
}

pub struct TrainedNetwork {
    pub spec: NetworkSpec,
    pub params: NetworkParams<f32>,
    pub report: TrainReport,
    pub augmented: bool,
}

impl TrainedNetwork {
    pub fn metadata(&self, cfg: &RunConfig) -> serde_json::Value {
        serde_json::json!({
            "config_digest": cfg.digest(),
            "seed": cfg.seed,
            "lambda": cfg.train.lambda,
            "lr": cfg.train.lr,
            "batch": cfg.train.batch,
            "steps": self.report.step_losses.len(),
            "augmented": self.augmented,
            "recolor": cfg.train.recolor,
            "final_loss": self.report.step_losses.last(),
        })
    }
}

/// Trains the Fast-FCN on `frames`, inserting training crops when
/// `cfg.train.augment` is set and repainting subjects when
/// `cfg.train.recolor` is set.
pub fn train_network(
    cfg: &RunConfig,
    frames: &[(RgbdFrame, LabelMap)],
    on_step: impl FnMut(&StepInfo),
) -> Result<TrainedNetwork> {
    let t = &cfg.train;
    let crops = if t.augment { training_crops() } else { vec![] };
    let data = AugmentedFrames {
        frames,
        crops: &crops,
        probability: if t.augment {
            t.augment_probability
        } else {
            0.0
        },
        recolor: t.recolor,
        seed: derive_seed(cfg.seed, STREAM_TRAIN, 1 << 32),
    };
    let (spec, params) = build_fast_fcn(derive_seed(cfg.seed, STREAM_TRAIN, 1 << 33));
    let tc = TrainConfig {
        lambda: t.lambda,
        adam: AdamConfig {
            lr: t.lr,
            ..AdamConfig::default()
        },
        batch: t.batch,
        epochs: t.steps.div_ceil(frames.len().div_ceil(t.batch)).max(1),
        seed: derive_seed(cfg.seed, STREAM_TRAIN, 1 << 34),
        max_steps: Some(t.steps),
    };
    let report = train(&spec, params, &data, &tc, on_step)?;
    Ok(TrainedNetwork {
        spec,
        params: report.params.clone(),
        report,
        augmented: t.augment,
    })
}

/// Held-out subjects and crops, every third frame, each frame occluded.
pub fn segmentation_test_set(seed: u64) -> Result<Vec<(RgbdFrame, LabelMap)>> {
    let crops = held_out_crops();
    let mut out = vec![];
    for (i, motion) in [MotionKind::ArmSwing, MotionKind::Walk]
        .into_iter()
        .enumerate()
    {
        let s = derive_seed(seed, STREAM_SEG_TEST, i as u64);
        let run = synth_run(s, motion, 60, semtrack_core::geometry::DEFAULT_MAX_RANGE)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        for (f, l) in run
            .sequence
            .frames
            .iter()
            .zip(&run.sequence.gt.labels)
            .step_by(3)
        {
            let (f2, l2, _) =
                random_augmentation(f, l, &crops[i % crops.len()], &mut rng, (0.33, 0.5))?;
            out.push((f2, l2));
        }
    }
    Ok(out)
}

pub fn fcn_labels(
    spec: &NetworkSpec,
    params: &NetworkParams<f32>,
    frames: &[RgbdFrame],
) -> Result<Vec<LabelMap>> {
    let labeller = Labeller::Fcn { spec, params };
    frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| Ok(labeller.labels(i, f)?))
        .collect()
}

pub fn evaluate_segmentation(
    spec: &NetworkSpec,
    params: &NetworkParams<f32>,
    set: &[(RgbdFrame, LabelMap)],
) -> Result<SegMetrics> {
    let frames: Vec<RgbdFrame> = set.iter().map(|(f, _)| f.clone()).collect();
    let preds = fcn_labels(spec, params, &frames)?;
    let mut acc = SegAccumulator::default();
    for (p, (_, truth)) in preds.iter().zip(set) {
        acc.add(p, truth)?;
    }
    Ok(acc.metrics())
}

/// Losses from fitting the network to a single frame.
pub fn overfit_one_frame(
    seed: u64,
    steps: usize,
    on_step: impl FnMut(&StepInfo),
) -> Result<Vec<f64>> {
    let run = synth_run(
        seed,
        MotionKind::Static,
        1,
        semtrack_core::geometry::DEFAULT_MAX_RANGE,
    )?;
    let input = resize_and_normalize(&run.sequence.frames[0])?;
    let data = vec![(input, run.sequence.gt.labels[0].clone())];
    let (spec, params) = build_fast_fcn(seed);
    let tc = TrainConfig {
        batch: 1,
        epochs: steps,
        seed,
        max_steps: Some(steps),
        ..TrainConfig::default()
    };
    Ok(train(&spec, params, &data, &tc, on_step)?.step_losses)
}

/// One occluded copy of a sweep sequence.
pub struct OccludedVariant {
    pub offset_cm: u32,
    pub frames: Vec<RgbdFrame>,
    pub labels: Vec<LabelMap>,
    pub occlusion: f64,
}

pub struct SweepCase {
    pub model: BodyModel,
    pub motion: MotionKind,
    pub init: Pose,
    pub gt_joints: Vec<Vec<Vector3<f64>>>,
    pub variants: Vec<OccludedVariant>,
}

/// Coverage misses below this count as hits when picking an occluder size.
const COVERAGE_SLACK: f64 = 0.03;

/// Occluder placement for sweep sequences: centered a little to one side of
/// the body (alternating with `side`) at 40% of its height, with the image
/// scale chosen so the crop hides about `coverage` of the first frame's body
/// pixels at `reference_cm`. Of the sizes and rotations that reach the
/// coverage, the one closest to the object's physical size is kept. `depth_offset` is left at zero for the caller to set.
pub fn sweep_spec(
    seq: &Sequence,
    crop: &ObjectCrop,
    side: f64,
    coverage: f64,
    reference_cm: u32,
) -> Result<AugmentSpec> {
    let (frame, labels) = (&seq.frames[0], &seq.gt.labels[0]);
    let (r0, r1, c0, c1) = body_bounds(labels)
        .ok_or_else(|| Error::Mismatch("first frame shows no body to occlude".into()))?;
    let depth = subject_depth(frame, labels).expect("body pixels present");
    let mut spec = AugmentSpec {
        scale: 1.0,
        rotation_deg: 0.0,
        depth_offset: 0.6,
        anchor: (
            (c0 + c1) as f64 / 2.0 + side * 0.15 * (c1 - c0) as f64,
            r0 as f64 + 0.4 * (r1 - r0) as f64,
        ),
        depth_anchor: DepthAnchor::Furthest,
    };
    // (miss, distance from the physical size, scale, rotation)
    let physical = CROP_CAPTURE_DEPTH / (depth - reference_cm as f64 / 100.0);
    let mut best = (f64::INFINITY, f64::INFINITY, 1.0, 0.0);
    for rotation in [0.0, 90.0] {
        spec.rotation_deg = rotation;
        for i in 0..=32 {
            spec.scale = 0.25 * 16f64.powf(i as f64 / 32.0);
            if let Ok((_, l2)) = insert_object(frame, labels, crop, &spec, depth) {
                let miss = (occlusion_fraction(labels, &l2) - coverage).abs();
                let cand = (
                    miss.max(COVERAGE_SLACK),
                    (spec.scale / physical).ln().abs(),
                    spec.scale,
                    rotation,
                );
                if (cand.0, cand.1) < (best.0, best.1) {
                    best = cand;
                }
            }
        }
    }
    (spec.scale, spec.rotation_deg) = (best.2, best.3);
    spec.depth_offset = 0.0;
    Ok(spec)
}

/// Occludes every frame of `seq` with `crop`, placed `offset_cm` in front of
/// the subject's mean depth. `spec.scale` is the crop's image scale when it
/// sits `reference_cm` in front; other offsets rescale it by perspective, so
/// the same physical object looks larger the nearer it is to the camera.
pub fn occlude_sequence(
    seq: &Sequence,
    crop: &ObjectCrop,
    spec: &AugmentSpec,
    reference_cm: u32,
    offset_cm: u32,
) -> Result<OccludedVariant> {
    let depths: Vec<f64> = seq
        .frames
        .iter()
        .zip(&seq.gt.labels)
        .filter_map(|(f, l)| subject_depth(f, l))
        .collect();
    let depth = depths.iter().sum::<f64>() / depths.len().max(1) as f64;
    let (reference, offset) = (reference_cm as f64 / 100.0, offset_cm as f64 / 100.0);
    if offset >= depth - 0.1 {
        return Err(Error::Config(format!(
            "occluder offset {offset_cm} cm reaches the camera (subject at {depth:.2} m)"
        )));
    }
    let spec = AugmentSpec {
        depth_offset: offset,
        scale: spec.scale * (depth - reference) / (depth - offset),
        ..*spec
    };
    let mut frames = Vec::with_capacity(seq.len());
    let mut labels = Vec::with_capacity(seq.len());
    let mut occlusion = 0.0;
    for (f, l) in seq.frames.iter().zip(&seq.gt.labels) {
        let (f2, l2) = insert_object(f, l, crop, &spec, depth)?;
        occlusion += occlusion_fraction(l, &l2);
        frames.push(f2);
        labels.push(l2);
    }
    Ok(OccludedVariant {
        offset_cm,
        frames,
        labels,
        occlusion: occlusion / seq.len() as f64,
    })
}

/// Held-out subjects performing arm swings and walks, each copied once per
/// occluder offset.
pub fn sweep_cases(cfg: &RunConfig) -> Result<Vec<SweepCase>> {
    let crops = held_out_crops();
    let s = &cfg.sweep;
    let jobs: Vec<(usize, MotionKind)> = [MotionKind::ArmSwing, MotionKind::Walk]
        .into_iter()
        .flat_map(|m| (0..s.subjects).map(move |i| (i, m)))
        .collect();
    jobs.par_iter()
        .enumerate()
        .map(|(n, &(i, motion))| {
            let run = synth_run(
                derive_seed(cfg.seed, STREAM_SWEEP, n as u64),
                motion,
                s.frames,
                cfg.synth.max_range,
            )?;
            let crop = &crops[n % crops.len()];
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            let reference = s.offsets_cm.iter().copied().min().unwrap_or(0);
            let spec = sweep_spec(&run.sequence, crop, side, s.coverage, reference)?;
            let variants = s
                .offsets_cm
                .iter()
                .map(|&o| occlude_sequence(&run.sequence, crop, &spec, reference, o))
                .collect::<Result<_>>()?;
            Ok(SweepCase {
                init: run.sequence.gt.poses[0].clone(),
                gt_joints: run.sequence.gt.joints,
                model: run.subject.model,
                motion,
                variants,
            })
        })
        .collect()
}

/// Where a sweep run takes its labels from.
#[derive(Clone, Copy)]
pub enum LabelSource<'a> {
    Gt,
    None,
    Fcn(&'a NetworkSpec, &'a NetworkParams<f32>),
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepEntry {
    pub offset_cm: u32,
    pub labeller: String,
    pub mean_error_m: f64,
    pub occlusion: f64,
    #[serde(skip)]
    pub curve: AccuracyCurve,
    /// Segmentation quality of the labels handed to the tracker.
    #[serde(skip)]
    pub segmentation: Option<SegMetrics>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    pub fn get(&self, offset_cm: u32, labeller: &str) -> Option<&SweepEntry> {
        self.entries
            .iter()
            .find(|e| e.offset_cm == offset_cm && e.labeller == labeller)
    }

    pub fn offsets(&self) -> Vec<u32> {
        let mut o: Vec<u32> = self.entries.iter().map(|e| e.offset_cm).collect();
        o.dedup();
        o
    }
}

/// Tracks every sweep variant with every label source and pools the joint
/// errors per `(offset, labeller)`.
pub fn run_sweep(
    cfg: &RunConfig,
    cases: &[SweepCase],
    sources: &[(&str, LabelSource)],
) -> Result<SweepResult> {
    let tc: TrackerConfig = cfg.tracker_config();
    let thresholds = default_thresholds();
    let jobs: Vec<(usize, usize, usize)> = (0..cases.len())
        .flat_map(|c| {
            (0..cases[c].variants.len())
                .flat_map(move |v| (0..sources.len()).map(move |s| (c, v, s)))
        })
        .collect();
    type JobOut = (Vec<Vec<Vector3<f64>>>, Option<Vec<LabelMap>>);
    let outputs: Vec<JobOut> = jobs
        .par_iter()
        .map(|&(c, v, s)| {
            let case = &cases[c];
            let var = &case.variants[v];
            let predicted = match sources[s].1 {
                LabelSource::Fcn(spec, params) => Some(fcn_labels(spec, params, &var.frames)?),
                _ => None,
            };
            let labeller = match (&sources[s].1, &predicted) {
                (LabelSource::None, _) => Labeller::None,
                (_, Some(p)) => Labeller::Gt(p),
                _ => Labeller::Gt(&var.labels),
            };
            let reports = track_sequence(&var.frames, &labeller, &case.model, &case.init, &tc)?;
            Ok((reports.into_iter().map(|r| r.joints).collect(), predicted))
        })
        .collect::<Result<_>>()?;

    let n_var = cases.first().map_or(0, |c| c.variants.len());
    let mut entries = vec![];
    for v in 0..n_var {
        for (s, (name, _)) in sources.iter().enumerate() {
            let mut est = vec![];
            let mut gt = vec![];
            let mut seg: Option<SegAccumulator> = None;
            let mut occ = 0.0;
            for (j, &(c, jv, js)) in jobs.iter().enumerate() {
                if jv != v || js != s {
                    continue;
                }
                est.extend(outputs[j].0.iter().cloned());
                gt.extend(cases[c].gt_joints.iter().cloned());
                occ += cases[c].variants[v].occlusion;
                if let Some(pred) = &outputs[j].1 {
                    let acc = seg.get_or_insert_with(SegAccumulator::default);
                    for (p, t) in pred.iter().zip(&cases[c].variants[v].labels) {
                        acc.add(p, t)?;
                    }
                }
            }
            let curve = joint_accuracy_curve(&est, &gt, &thresholds)?;
            let errors: Vec<f64> = est
                .iter()
                .zip(&gt)
                .flat_map(|(e, g)| e.iter().zip(g).map(|(a, b)| (a - b).norm()))
                .collect();
            entries.push(SweepEntry {
                offset_cm: cases[0].variants[v].offset_cm,
                labeller: name.to_string(),
                mean_error_m: errors.iter().sum::<f64>() / errors.len().max(1) as f64,
                occlusion: occ / cases.len() as f64,
                curve,
                segmentation: seg.map(|a| a.metrics()),
            });
        }
    }
    Ok(SweepResult { entries })
}

/// Curves from every entry of one labeller, pooled over offsets.
pub fn pooled_curve(result: &SweepResult, labeller: &str) -> Result<AccuracyCurve> {
    let mut thresholds = None;
    let mut sum: Vec<f64> = vec![];
    let mut n = 0usize;
    for e in result.entries.iter().filter(|e| e.labeller == labeller) {
        let t = thresholds.get_or_insert_with(|| e.curve.thresholds.clone());
        sum.resize(t.len(), 0.0);
        for (s, f) in sum.iter_mut().zip(&e.curve.fraction) {
            *s += f;
        }
        n += 1;
    }
    let thresholds =
        thresholds.ok_or_else(|| Error::Mismatch(format!("no sweep results for {labeller}")))?;
    Ok(AccuracyCurve {
        thresholds,
        fraction: sum.into_iter().map(|s| s / n as f64).collect(),
    })
}

/// CSV and SVG artifacts of a sweep, in a fixed order.
pub fn sweep_artifacts(result: &SweepResult, digest: &str) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = vec![];
    let mut curves = csv::Writer::from_writer(Vec::new());
    let mut summary = csv::Writer::from_writer(Vec::new());
    let cerr = |e: csv::Error| Error::Mismatch(format!("csv: {e}"));
    curves
        .write_record(["offset_cm", "labeller", "threshold_m", "fraction"])
        .map_err(cerr)?;
    summary
        .write_record([
            "offset_cm",
            "labeller",
            "auc",
            "mean_error_m",
            "occlusion_fraction",
            "non_background_iou",
        ])
        .map_err(cerr)?;
    for e in &result.entries {
        for (t, f) in e.curve.thresholds.iter().zip(&e.curve.fraction) {
            curves
                .write_record([
                    e.offset_cm.to_string(),
                    e.labeller.clone(),
                    format!("{t:.4}"),
                    format!("{f:.6}"),
                ])
                .map_err(cerr)?;
        }
        summary
            .write_record([
                e.offset_cm.to_string(),
                e.labeller.clone(),
                format!("{:.6}", e.curve.auc()),
                format!("{:.6}", e.mean_error_m),
                format!("{:.6}", e.occlusion),
                e.segmentation
                    .map_or(String::new(), |s| format!("{:.6}", s.non_background_iou)),
            ])
            .map_err(cerr)?;
    }
    out.push((
        "sweep_curves.csv".into(),
        curves
            .into_inner()
            .map_err(|e| Error::Mismatch(e.to_string()))?,
    ));
    out.push((
        "sweep_summary.csv".into(),
        summary
            .into_inner()
            .map_err(|e| Error::Mismatch(e.to_string()))?,
    ));
    let series: Vec<Series> = result
        .entries
        .iter()
        .map(|e| Series::from_curve(format!("{} @{}cm", e.labeller, e.offset_cm), &e.curve))
        .collect();
    let svg = line_chart(
        "Joint accuracy under occlusion",
        "distance threshold (cm)",
        "joints within threshold (%)",
        &series,
        digest,
    );
    out.push(("sweep.svg".into(), svg.into_bytes()));
    Ok(out)
}

/// Comparison artifacts for two curves.
pub fn comparison_artifacts(
    name: &str,
    a: (&str, &AccuracyCurve),
    b: (&str, &AccuracyCurve),
    digest: &str,
) -> Result<Vec<(String, Vec<u8>)>> {
    let cmp = semtrack_core::eval::compare_runs(a.1, b.1)?;
    let svg = line_chart(
        &format!("{} vs {}", a.0, b.0),
        "distance threshold (cm)",
        "joints within threshold (%)",
        &[Series::from_curve(a.0, a.1), Series::from_curve(b.0, b.1)],
        digest,
    );
    Ok(vec![
        (format!("{name}_a.csv"), curve_csv(a.1)?),
        (format!("{name}_b.csv"), curve_csv(b.1)?),
        (format!("{name}.csv"), comparison_csv(&cmp)?),
        (format!("{name}.svg"), svg.into_bytes()),
    ])
}

#[derive(Clone, Debug, Serialize)]
pub struct TimingReport {
    pub inference_ms_median: f64,
    pub inference_ms_mean: f64,
    pub tracking_ms_per_frame_gt: f64,
    pub tracking_ms_per_frame_fcn: f64,
    pub frames: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Wall-clock single-frame inference and per-frame tracking cost, measured
/// on the calling thread.
pub fn measure_timing(
    cfg: &RunConfig,
    spec: &NetworkSpec,
    params: &NetworkParams<f32>,
    frames: usize,
) -> Result<TimingReport> {
    let run = synth_run(
        derive_seed(cfg.seed, STREAM_SYNTH, 99),
        MotionKind::Walk,
        frames.max(1),
        cfg.synth.max_range,
    )?;
    let seq = &run.sequence;
    let mut times = vec![];
    for f in &seq.frames {
        let t = Instant::now();
        let input = resize_and_normalize(f)?;
        predict(spec, params, &input)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let tc = cfg.tracker_config();
    let t = Instant::now();
    track_sequence(
        &seq.frames,
        &Labeller::Gt(&seq.gt.labels),
        &run.subject.model,
        &seq.gt.poses[0],
        &tc,
    )?;
    let gt_ms = t.elapsed().as_secs_f64() * 1e3 / seq.len() as f64;
    let t = Instant::now();
    track_sequence(
        &seq.frames,
        &Labeller::Fcn { spec, params },
        &run.subject.model,
        &seq.gt.poses[0],
        &tc,
    )?;
    let fcn_ms = t.elapsed().as_secs_f64() * 1e3 / seq.len() as f64;
    Ok(TimingReport {
        inference_ms_median: median(&mut times),
        inference_ms_mean: mean,
        tracking_ms_per_frame_gt: gt_ms,
        tracking_ms_per_frame_fcn: fcn_ms,
        frames: seq.len(),
    })
}
