//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use semtrack_core::body::{BodyModel, Pose};
use semtrack_core::eval::{
    compare_runs, default_thresholds, joint_accuracy_curve, REFERENCE_INFERENCE_MS,
    REFERENCE_SCORES,
};
use semtrack_core::fcn::{NetworkParams, NetworkSpec};
use semtrack_core::geometry::backproject;
use semtrack_core::synth::{generate_sequence, MotionKind, Subject};
use semtrack_core::tracker::{track_sequence, Labeller};
use semtrack_core::SemanticLabel;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{LabellerKind, Overrides, RunConfig};
use crate::error::{Error, IoContext, Result};
use crate::experiments::{self as exp, LabelSource};
use crate::formats::{
    read_crop_dir, read_model, read_motion, sha256_hex, write_crop, write_model, write_motion,
};
use crate::results::{read_track_csv, track_csv, RunManifest, RunWriter, RESULTS_FILE};
use crate::seqio::{read_sequence, sequence_digest, write_json, write_sequence, StoredSequence};

pub const CHECKPOINT_FILE: &str = "fastfcn.ffcn";
pub const MODEL_STEM: &str = "model";

#[derive(Parser, Debug)]
#[command(
    name = "semtrack",
    version,
    about = "Semantic-filtered articulated body tracking on RGB-D sequences"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file overriding built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub labeller: Option<LabellerKind>,
    /// Weight of the background/body term in the training loss.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Association search half-width, pixels.
    #[arg(long, global = true)]
    pub window_radius: Option<usize>,
    /// Occluder distance in front of the subject.
    #[arg(long, global = true, value_parser = ["30", "45", "60"])]
    pub occluder_offset_cm: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic sequence with ground truth.
    Synth {
        #[arg(long)]
        frames: Option<usize>,
        /// Built-in motion: static, arm-swing or walk.
        #[arg(long)]
        motion: Option<String>,
        /// Keyframe script to play instead of a built-in motion.
        #[arg(long, value_name = "PATH")]
        motion_file: Option<PathBuf>,
    },
    /// Insert an occluding object into every frame of a sequence.
    Augment {
        #[arg(long, value_name = "DIR")]
        sequence: PathBuf,
        /// Directory of object crops (procedural held-out objects when absent).
        #[arg(long, value_name = "DIR")]
        crops: Option<PathBuf>,
        /// Also write the crops used to this directory.
        #[arg(long, value_name = "DIR")]
        export_crops: Option<PathBuf>,
    },
    /// Train the segmentation network.
    Train {
        #[arg(long)]
        steps: Option<usize>,
        /// Train without occluder insertion.
        #[arg(long)]
        no_augment: bool,
        /// Labelled sequences to train on (synthetic set when absent).
        #[arg(long, value_name = "DIR")]
        data: Vec<PathBuf>,
    },
    /// Track a sequence and write per-frame joint estimates.
    Track {
        #[arg(long, value_name = "DIR")]
        sequence: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Body model (defaults to the one stored with the sequence).
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Compare tracking runs, or score a checkpoint's segmentation.
    Eval {
        /// Run directory; give two to compare them.
        #[arg(long = "run", value_name = "DIR")]
        runs: Vec<PathBuf>,
        #[arg(long, value_name = "DIR")]
        sequence: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Proceed even when digests disagree.
        #[arg(long)]
        force: bool,
    },
    /// Scripted experiments.
    Repro {
        #[arg(value_enum)]
        experiment: Experiment,
        /// Augmentation-trained network.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Network trained without augmentation (ablation only).
        #[arg(long, value_name = "FILE")]
        baseline_checkpoint: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    OcclusionSweep,
    Ablation,
    Timing,
}

fn overrides(g: &GlobalArgs, cmd: &Command) -> Result<Overrides> {
    let mut o = Overrides {
        seed: g.seed,
        labeller: g.labeller,
        lambda: g.lambda,
        window_radius: g.window_radius,
        occluder_offset_cm: g
            .occluder_offset_cm
            .as_deref()
            .map(|s| s.parse().expect("validated by clap")),
        ..Overrides::default()
    };
    match cmd {
        Command::Synth { frames, motion, .. } => {
            o.frames = *frames;
            o.motion = motion.clone();
        }
        Command::Train {
            steps, no_augment, ..
        } => {
            o.steps = *steps;
            o.augment = no_augment.then_some(false);
        }
        _ => {}
    }
    Ok(o)
}

fn out_dir(g: &GlobalArgs) -> Result<&Path> {
    g.out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required".into()))
}

pub fn run(cli: Cli) -> Result<()> {
    let o = overrides(&cli.global, &cli.command)?;
    let cfg = RunConfig::resolve(cli.global.config.as_deref(), &o)?;
    eprintln!(
        "semtrack: config digest {}\n{}",
        cfg.digest(),
        cfg.to_json()
    );
    let pool = exp::thread_pool()?;
    pool.install(|| match &cli.command {
        Command::Synth { motion_file, .. } => {
            synth(&cfg, out_dir(&cli.global)?, motion_file.as_deref())
        }
        Command::Augment {
            sequence,
            crops,
            export_crops,
        } => augment(
            &cfg,
            out_dir(&cli.global)?,
            sequence,
            crops.as_deref(),
            export_crops.as_deref(),
        ),
        Command::Train { data, .. } => train(&cfg, out_dir(&cli.global)?, data),
        Command::Track {
            sequence,
            checkpoint,
            model,
        } => track(
            &cfg,
            out_dir(&cli.global)?,
            sequence,
            checkpoint.as_deref(),
            model.as_deref(),
        ),
        Command::Eval {
            runs,
            sequence,
            checkpoint,
            force,
        } => eval(
            &cfg,
            out_dir(&cli.global)?,
            runs,
            sequence.as_deref(),
            checkpoint.as_deref(),
            *force,
        ),
        Command::Repro {
            experiment,
            checkpoint,
            baseline_checkpoint,
        } => repro(
            &cfg,
            out_dir(&cli.global)?,
            *experiment,
            checkpoint.as_deref(),
            baseline_checkpoint.as_deref(),
        ),
    })
}

pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn provenance(cfg: &RunConfig, command: &str, extra: serde_json::Value) -> serde_json::Value {
    serde_json::json!({ "command": command, "config_digest": cfg.digest(), "config": cfg, "details": extra })
}

fn synth(cfg: &RunConfig, out: &Path, motion_file: Option<&Path>) -> Result<()> {
    let motion = MotionKind::from_name(&cfg.synth.motion).expect("validated");
    let n = cfg.synth.frames;
    let run = match motion_file {
        None => exp::synth_run(cfg.seed, motion, n, cfg.synth.max_range)?,
        Some(p) => {
            let script = read_motion(p)?;
            let subject = Subject::random(exp::derive_seed(cfg.seed, 5, 0))?;
            let sequence =
                generate_sequence(&subject, &script, n, &exp::camera(), cfg.synth.max_range)?;
            exp::SynthRun {
                subject,
                script,
                sequence,
            }
        }
    };
    let mut stored = exp::stored_sequence(
        &run,
        provenance(
            cfg,
            "synth",
            serde_json::json!({ "motion": run.script.name }),
        ),
    );
    stored.config_digest = Some(cfg.digest());
    write_sequence(out, &stored)?;
    write_model(&out.join(MODEL_STEM), &run.subject.model)?;
    write_motion(&out.join("motion.json"), &run.script)?;
    eprintln!("wrote {n} frames to {}", out.display());
    Ok(())
}

fn copy_model(from: &Path, to: &Path) -> Result<()> {
    let model = read_model(&from.join(MODEL_STEM))?;
    write_model(&to.join(MODEL_STEM), &model)
}

fn augment(
    cfg: &RunConfig,
    out: &Path,
    seq_dir: &Path,
    crops_dir: Option<&Path>,
    export: Option<&Path>,
) -> Result<()> {
    let [offset] = cfg.sweep.offsets_cm[..] else {
        return Err(Error::Config(
            "augment needs a single occluder offset (--occluder-offset-cm)".into(),
        ));
    };
    let seq = read_sequence(seq_dir)?;
    let labels = seq.labels.clone().ok_or_else(|| {
        Error::Mismatch(format!("{} has no labels to occlude", seq_dir.display()))
    })?;
    let crops = match crops_dir {
        Some(d) => read_crop_dir(d)?,
        None => exp::held_out_crops(),
    };
    if crops.is_empty() {
        return Err(Error::Config("no object crops available".into()));
    }
    let crop = &crops[(exp::derive_seed(cfg.seed, 6, 0) % crops.len() as u64) as usize];
    let side = if cfg.seed % 2 == 0 { 1.0 } else { -1.0 };
    let core_seq = semtrack_core::synth::Sequence {
        frames: seq.frames.clone(),
        gt: semtrack_core::synth::SequenceGt {
            poses: vec![],
            joints: vec![],
            labels,
        },
    };
    let reference = cfg.sweep.offsets_cm.iter().copied().min().unwrap_or(offset);
    let spec = exp::sweep_spec(&core_seq, crop, side, cfg.sweep.coverage, reference)?;
    let var = exp::occlude_sequence(&core_seq, crop, &spec, reference, offset)?;
    let mut stored = StoredSequence {
        frames: var.frames,
        labels: Some(var.labels),
        ..seq
    };
    stored.provenance = Some(provenance(
        cfg,
        "augment",
        serde_json::json!({ "source": sequence_digest(seq_dir)?, "object": crop.name, "offset_cm": offset, "occlusion_fraction": var.occlusion }),
    ));
    stored.config_digest = Some(cfg.digest());
    write_sequence(out, &stored)?;
    if seq_dir.join(format!("{MODEL_STEM}.json")).exists() {
        copy_model(seq_dir, out)?;
    }
    if let Some(d) = export {
        for c in &crops {
            write_crop(d, c)?;
        }
    }
    eprintln!(
        "occluded {} frames with {} at {offset} cm (mean occlusion {:.3})",
        stored.frames.len(),
        crop.name,
        var.occlusion
    );
    Ok(())
}

fn train(cfg: &RunConfig, out: &Path, data: &[PathBuf]) -> Result<()> {
    let frames = if data.is_empty() {
        exp::training_frames(cfg)?
    } else {
        let mut frames = vec![];
        for d in data {
            let s = read_sequence(d)?;
            let labels = s
                .labels
                .ok_or_else(|| Error::Mismatch(format!("{} has no labels", d.display())))?;
            frames.extend(s.frames.into_iter().zip(labels));
        }
        frames
    };
    eprintln!(
        "training on {} frames for {} steps",
        frames.len(),
        cfg.train.steps
    );
    let net = exp::train_network(cfg, &frames, |s| {
        if s.step % 25 == 0 {
            eprintln!("step {:5} epoch {:3} loss {:.4}", s.step, s.epoch, s.loss);
        }
    })?;
    let ck = Checkpoint::new(&net.spec, &net.params, net.metadata(cfg));
    let bytes = ck.to_bytes();
    let mut w = RunWriter::new(out, RunManifest::new("train", cfg))?;
    w.manifest.checkpoint_digest = Some(sha256_hex(&bytes));
    w.manifest.diagnostics =
        serde_json::json!({ "step_losses": net.report.step_losses, "frames": frames.len() });
    w.add(CHECKPOINT_FILE, &bytes)?;
    w.finish()?;
    Ok(())
}

fn load_network(path: &Path) -> Result<(NetworkSpec, NetworkParams<f32>, String)> {
    let bytes = fs::read(path).at(path)?;
    let ck = Checkpoint::from_bytes(&bytes, path)?;
    let spec = NetworkSpec::fast_fcn();
    let params = ck.params_for(&spec)?;
    Ok((spec, params, sha256_hex(&bytes)))
}

/// Initial pose: ground truth when the sequence has it, otherwise the rest
/// pose placed at the centroid of the first frame's points.
fn initial_pose(seq: &StoredSequence, model: &BodyModel) -> Result<Pose> {
    if let Some(p) = seq.poses.as_ref().and_then(|p| p.first()) {
        return Ok(Pose::from_params(&model.skeleton, p)?);
    }
    let frame = &seq.frames[0];
    let cloud = backproject(frame, None)?;
    let near: Vec<&Vector3<f64>> = cloud
        .points
        .iter()
        .filter(|p| p.z < frame.max_range as f64 - 0.05)
        .collect();
    if near.is_empty() {
        return Err(Error::Mismatch(
            "first frame has no foreground points to initialize from".into(),
        ));
    }
    let mut pose = Pose::identity(&model.skeleton);
    pose.translation = near.iter().copied().sum::<Vector3<f64>>() / near.len() as f64;
    Ok(pose)
}

fn track(
    cfg: &RunConfig,
    out: &Path,
    seq_dir: &Path,
    ckpt: Option<&Path>,
    model_path: Option<&Path>,
) -> Result<()> {
    let seq = read_sequence(seq_dir)?;
    let seq_digest = sequence_digest(seq_dir)?;
    let model =
        read_model(&model_path.map_or_else(|| seq_dir.join(MODEL_STEM), Path::to_path_buf))?;
    let net = match (cfg.labeller, ckpt) {
        (LabellerKind::Fcn, Some(p)) => Some(load_network(p)?),
        (LabellerKind::Fcn, None) => {
            return Err(Error::Config("--labeller fcn needs --checkpoint".into()))
        }
        _ => None,
    };
    let labeller = match (&cfg.labeller, &net, &seq.labels) {
        (LabellerKind::Fcn, Some((spec, params, _)), _) => Labeller::Fcn { spec, params },
        (LabellerKind::Gt, _, Some(l)) => Labeller::Gt(l),
        (LabellerKind::Gt, _, None) => {
            return Err(Error::Mismatch(
                "--labeller gt needs a labelled sequence".into(),
            ))
        }
        _ => Labeller::None,
    };
    let init = initial_pose(&seq, &model)?;
    let reports = track_sequence(&seq.frames, &labeller, &model, &init, &cfg.tracker_config())?;
    let names: Vec<String> = model
        .skeleton
        .joints
        .iter()
        .map(|j| j.name.clone())
        .collect();
    let gt = seq
        .joints
        .as_deref()
        .filter(|j| j.first().is_some_and(|f| f.len() == names.len()));
    let csv = track_csv(&reports, &names, gt)?;
    let mut manifest = RunManifest::new("track", cfg);
    manifest.sequence_digest = Some(seq_digest);
    manifest.checkpoint_digest = net.as_ref().map(|n| n.2.clone());
    let mean_err = gt.map(|g| {
        reports
            .iter()
            .zip(g)
            .map(|(r, g)| semtrack_core::tracker::mean_joint_error(&r.joints, g))
            .sum::<f64>()
            / reports.len() as f64
    });
    manifest.diagnostics = serde_json::json!({
        "labeller": labeller.name(),
        "frames": reports.len(),
        "mean_joint_error_m": mean_err,
        "recovery_frames": reports.iter().filter(|r| r.mode == semtrack_core::tracker::Mode::Recovery).count(),
        "flagged_frames": reports.iter().filter(|r| r.flagged).count(),
    });
    let mut w = RunWriter::new(out, manifest)?;
    w.add(RESULTS_FILE, &csv)?;
    w.finish()?;
    if let Some(e) = mean_err {
        eprintln!(
            "tracked {} frames, mean joint error {:.4} m",
            reports.len(),
            e
        );
    }
    Ok(())
}

fn eval(
    cfg: &RunConfig,
    out: &Path,
    runs: &[PathBuf],
    seq_dir: Option<&Path>,
    ckpt: Option<&Path>,
    force: bool,
) -> Result<()> {
    match (runs.len(), seq_dir, ckpt) {
        (1 | 2, _, None) => eval_runs(cfg, out, runs, seq_dir, force),
        (0, Some(s), Some(c)) => eval_segmentation(cfg, out, s, c),
        _ => Err(Error::Config(
            "eval takes one or two --run directories, or --checkpoint with --sequence".into(),
        )),
    }
}

fn eval_runs(
    cfg: &RunConfig,
    out: &Path,
    runs: &[PathBuf],
    seq_dir: Option<&Path>,
    force: bool,
) -> Result<()> {
    let mut tables = vec![];
    let mut digests = vec![];
    for r in runs {
        let m = RunManifest::load(r)?;
        let check = m
            .verify(r)
            .and_then(|_| match (&m.sequence_digest, seq_dir) {
                (Some(d), Some(s)) if *d != sequence_digest(s)? => Err(Error::Mismatch(format!(
                    "{} was tracked on a different sequence than {}",
                    r.display(),
                    s.display()
                ))),
                _ => Ok(()),
            });
        match check {
            Err(e) if force => eprintln!("warning: {e} (continuing because of --force)"),
            other => other?,
        }
        digests.push(m.sequence_digest.clone());
        tables.push(read_track_csv(&r.join(RESULTS_FILE))?);
    }
    if digests.len() == 2 && digests[0] != digests[1] {
        let e = Error::Mismatch("runs were tracked on different sequences".into());
        if !force {
            return Err(e);
        }
        eprintln!("warning: {e} (continuing because of --force)");
    }
    let seq_path = seq_dir
        .ok_or_else(|| Error::Config("eval needs --sequence holding ground-truth joints".into()))?;
    let seq = read_sequence(seq_path)?;
    let gt = seq
        .joints
        .ok_or_else(|| Error::Mismatch("sequence has no ground-truth joints".into()))?;
    let curves = tables
        .iter()
        .map(|t| Ok(joint_accuracy_curve(&t.joints, &gt, &default_thresholds())?))
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = RunManifest::new("eval", cfg);
    manifest.sequence_digest = digests[0].clone();
    let mut w = RunWriter::new(out, manifest)?;
    if curves.len() == 1 {
        w.add("curve.csv", &crate::results::curve_csv(&curves[0])?)?;
        let svg = crate::plot::line_chart(
            "Joint accuracy",
            "distance threshold (cm)",
            "joints within threshold (%)",
            &[crate::plot::Series::from_curve("run", &curves[0])],
            &cfg.digest(),
        );
        w.add("curve.svg", svg.as_bytes())?;
        eprintln!("AUC {:.4}", curves[0].auc());
    } else {
        for (name, bytes) in exp::comparison_artifacts(
            "comparison",
            ("a", &curves[0]),
            ("b", &curves[1]),
            &cfg.digest(),
        )? {
            w.add(&name, &bytes)?;
        }
        let c = compare_runs(&curves[0], &curves[1])?;
        eprintln!(
            "AUC a {:.4} b {:.4} delta {:+.4}",
            c.auc_a, c.auc_b, c.auc_delta
        );
    }
    w.finish()?;
    Ok(())
}

fn eval_segmentation(cfg: &RunConfig, out: &Path, seq_dir: &Path, ckpt: &Path) -> Result<()> {
    let (spec, params, ck_digest) = load_network(ckpt)?;
    let seq = read_sequence(seq_dir)?;
    let labels = seq
        .labels
        .ok_or_else(|| Error::Mismatch("sequence has no labels".into()))?;
    let set: Vec<_> = seq.frames.into_iter().zip(labels).collect();
    let m = exp::evaluate_segmentation(&spec, &params, &set)?;
    let mut manifest = RunManifest::new("eval", cfg);
    manifest.sequence_digest = Some(sequence_digest(seq_dir)?);
    manifest.checkpoint_digest = Some(ck_digest);
    let mut values = vec![m.pixel_accuracy, m.background_iou, m.non_background_iou];
    values.extend(SemanticLabel::BODY.iter().map(|l| m.class_iou[l.index()]));
    let mut rows = String::from("metric,value,reference\n");
    for ((name, reference), v) in REFERENCE_SCORES.iter().zip(values) {
        rows += &format!("{name},{v:.6},{:.4}\n", reference / 100.0);
    }
    rows += &format!("merged_body_iou,{:.6},\n", m.merged_body_iou);
    eprint!("{rows}");
    let mut w = RunWriter::new(out, manifest)?;
    w.add("segmentation.csv", rows.as_bytes())?;
    w.finish()?;
    Ok(())
}

fn network_or_train(
    cfg: &RunConfig,
    out: &Path,
    path: Option<&Path>,
    augment: bool,
    file: &str,
) -> Result<(NetworkSpec, NetworkParams<f32>, String)> {
    if let Some(p) = path {
        return load_network(p);
    }
    let mut c = cfg.clone();
    c.train.augment = augment;
    eprintln!(
        "training {} network ({} steps)",
        if augment { "augmented" } else { "baseline" },
        c.train.steps
    );
    let frames = exp::training_frames(&c)?;
    let net = exp::train_network(&c, &frames, |s| {
        if s.step % 50 == 0 {
            eprintln!("step {:5} loss {:.4}", s.step, s.loss);
        }
    })?;
    let ck = Checkpoint::new(&net.spec, &net.params, net.metadata(&c));
    let target = out.join(file);
    checkpoint::save(&target, &ck)?;
    Ok((net.spec, net.params, sha256_hex(&ck.to_bytes())))
}

fn repro(
    cfg: &RunConfig,
    out: &Path,
    experiment: Experiment,
    ckpt: Option<&Path>,
    baseline: Option<&Path>,
) -> Result<()> {
    let digest = cfg.digest();
    match experiment {
        Experiment::OcclusionSweep => {
            let net = ckpt.map(load_network).transpose()?;
            let cases = exp::sweep_cases(cfg)?;
            let mut sources: Vec<(&str, LabelSource)> =
                vec![("none", LabelSource::None), ("gt", LabelSource::Gt)];
            if let Some((spec, params, _)) = &net {
                sources.push(("fcn", LabelSource::Fcn(spec, params)));
            }
            let result = exp::run_sweep(cfg, &cases, &sources)?;
            let mut manifest = RunManifest::new("repro occlusion-sweep", cfg);
            manifest.checkpoint_digest = net.as_ref().map(|n| n.2.clone());
            manifest.diagnostics = serde_json::to_value(&result.entries).expect("serializable");
            let mut w = RunWriter::new(out, manifest)?;
            for (name, bytes) in exp::sweep_artifacts(&result, &digest)? {
                w.add(&name, &bytes)?;
            }
            let filtered = if net.is_some() { "fcn" } else { "gt" };
            for o in result.offsets() {
                let (a, b) = (
                    result.get(o, filtered).expect("entry"),
                    result.get(o, "none").expect("entry"),
                );
                for (name, bytes) in exp::comparison_artifacts(
                    &format!("compare_{o}cm"),
                    (filtered, &a.curve),
                    ("none", &b.curve),
                    &digest,
                )? {
                    w.add(&name, &bytes)?;
                }
            }
            for e in &result.entries {
                eprintln!(
                    "{:>3} cm {:>5}: AUC {:.4} mean error {:.4} m occlusion {:.3}",
                    e.offset_cm,
                    e.labeller,
                    e.curve.auc(),
                    e.mean_error_m,
                    e.occlusion
                );
            }
            w.finish()?;
        }
        Experiment::Ablation => {
            fs::create_dir_all(out).at(out)?;
            let with = network_or_train(cfg, out, ckpt, true, "augmented.ffcn")?;
            let without = network_or_train(cfg, out, baseline, false, "baseline.ffcn")?;
            let cases = exp::sweep_cases(cfg)?;
            let sources = [
                ("augmented", LabelSource::Fcn(&with.0, &with.1)),
                ("baseline", LabelSource::Fcn(&without.0, &without.1)),
            ];
            let result = exp::run_sweep(cfg, &cases, &sources)?;
            let a = exp::pooled_curve(&result, "augmented")?;
            let b = exp::pooled_curve(&result, "baseline")?;
            let mut manifest = RunManifest::new("repro ablation", cfg);
            manifest.diagnostics = serde_json::json!({
                "augmented_checkpoint": with.2,
                "baseline_checkpoint": without.2,
                "auc_augmented": a.auc(),
                "auc_baseline": b.auc(),
                "entries": result.entries,
            });
            let mut w = RunWriter::new(out, manifest)?;
            for (name, bytes) in exp::sweep_artifacts(&result, &digest)? {
                w.add(&name, &bytes)?;
            }
            for (name, bytes) in
                exp::comparison_artifacts("ablation", ("augmented", &a), ("baseline", &b), &digest)?
            {
                w.add(&name, &bytes)?;
            }
            eprintln!(
                "pooled AUC: augmented {:.4} baseline {:.4}",
                a.auc(),
                b.auc()
            );
            w.finish()?;
        }
        Experiment::Timing => {
            let (spec, params, ck) = match ckpt {
                Some(p) => load_network(p)?,
                None => {
                    let (s, p) = semtrack_core::fcn::build_fast_fcn(cfg.seed);
                    (s, p, String::new())
                }
            };
            let report = exp::measure_timing(cfg, &spec, &params, 30)?;
            eprintln!(
                "inference {:.2} ms/frame (median; reference {REFERENCE_INFERENCE_MS} ms), tracking {:.2} ms/frame with labels given, {:.2} ms/frame with FCN labels",
                report.inference_ms_median, report.tracking_ms_per_frame_gt, report.tracking_ms_per_frame_fcn
            );
            fs::create_dir_all(out).at(out)?;
            let mut value = serde_json::to_value(&report).expect("serializable");
            value["checkpoint_digest"] = ck.into();
            value["config_digest"] = digest.into();
            write_json(&out.join("timing.json"), &value)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "semtrack",
            "track",
            "--sequence",
            "s",
            "--labeller",
            "gt",
            "--window-radius",
            "3",
            "--out",
            "o",
        ])
        .unwrap();
        assert_eq!(cli.global.labeller, Some(LabellerKind::Gt));
        assert_eq!(cli.global.window_radius, Some(3));
        assert!(Cli::try_parse_from([
            "semtrack",
            "repro",
            "occlusion-sweep",
            "--occluder-offset-cm",
            "50"
        ])
        .is_err());
    }
}
