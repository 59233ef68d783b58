//! Run configuration: built-in defaults, optionally overridden by a JSON file,
//! in turn overridden by command-line flags.

use std::path::Path;

use semtrack_core::tracker::TrackerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seqio::read_json;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LabellerKind {
    #[default]
    Fcn,
    Gt,
    None,
}

impl LabellerKind {
    pub fn name(self) -> &'static str {
        match self {
            LabellerKind::Fcn => "fcn",
            LabellerKind::Gt => "gt",
            LabellerKind::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSettings {
    pub window_radius: usize,
    pub max_assoc_dist: f64,
    pub lm_damping: f64,
    pub recovery_weight: f64,
    pub inlier_threshold: f64,
    pub iters_per_frame: usize,
    pub min_facing_cos: f64,
    pub recovery_bin: usize,
    pub recovery_always_on: bool,
}

impl Default for TrackerSettings {
    fn default() -> Self {
        TrackerConfig::default().into()
    }
}

impl From<TrackerConfig> for TrackerSettings {
    fn from(c: TrackerConfig) -> Self {
        Self {
            window_radius: c.window_radius,
            max_assoc_dist: c.max_assoc_dist,
            lm_damping: c.lm_damping,
            recovery_weight: c.recovery_weight,
            inlier_threshold: c.inlier_threshold,
            iters_per_frame: c.iters_per_frame,
            min_facing_cos: c.min_facing_cos,
            recovery_bin: c.recovery_bin,
            recovery_always_on: c.recovery_always_on,
        }
    }
}

impl From<&TrackerSettings> for TrackerConfig {
    fn from(s: &TrackerSettings) -> Self {
        Self {
            window_radius: s.window_radius,
            max_assoc_dist: s.max_assoc_dist,
            lm_damping: s.lm_damping,
            recovery_weight: s.recovery_weight,
            inlier_threshold: s.inlier_threshold,
            iters_per_frame: s.iters_per_frame,
            min_facing_cos: s.min_facing_cos,
            recovery_bin: s.recovery_bin,
            recovery_always_on: s.recovery_always_on,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub frames: usize,
    /// Built-in motion name: `static`, `arm-swing` or `walk`.
    pub motion: String,
    pub max_range: f32,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            frames: semtrack_core::synth::DEFAULT_FRAMES,
            motion: "walk".into(),
            max_range: semtrack_core::geometry::DEFAULT_MAX_RANGE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub lambda: f64,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    /// Synthetic training sequences and frames in each.
    pub sequences: usize,
    pub frames_per_sequence: usize,
    /// Insert occluders into training frames.
    pub augment: bool,
    /// Share of training samples that receive an occluder.
    pub augment_probability: f64,
    /// Repaint every training sample with a random palette.
    pub recolor: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lr: 1e-3,
            batch: 4,
            steps: 600,
            sequences: 8,
            frames_per_sequence: 188,
            augment: true,
            augment_probability: 0.5,
            recolor: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    /// Occluder distances in front of the subject, centimeters.
    pub offsets_cm: Vec<u32>,
    /// Test subjects per motion (`arm-swing` and `walk`).
    pub subjects: usize,
    pub frames: usize,
    /// Share of the first frame's body pixels the occluder is sized to hide.
    pub coverage: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            offsets_cm: vec![30, 45, 60],
            subjects: 4,
            frames: 60,
            coverage: 0.33,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub labeller: LabellerKind,
    pub synth: SynthSettings,
    pub tracker: TrackerSettings,
    pub train: TrainSettings,
    pub sweep: SweepSettings,
}

/// Values given on the command line; `None` leaves the lower layer in place.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub labeller: Option<LabellerKind>,
    pub lambda: Option<f64>,
    pub window_radius: Option<usize>,
    pub occluder_offset_cm: Option<u32>,
    pub frames: Option<usize>,
    pub motion: Option<String>,
    pub steps: Option<usize>,
    pub augment: Option<bool>,
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut c = match file {
            Some(p) => read_json(p)?,
            None => Self::default(),
        };
        if let Some(v) = o.seed {
            c.seed = v;
        }
        if let Some(v) = o.labeller {
            c.labeller = v;
        }
        if let Some(v) = o.lambda {
            c.train.lambda = v;
        }
        if let Some(v) = o.window_radius {
            c.tracker.window_radius = v;
        }
        if let Some(v) = o.occluder_offset_cm {
            c.sweep.offsets_cm = vec![v];
        }
        if let Some(v) = o.frames {
            c.synth.frames = v;
        }
        if let Some(v) = &o.motion {
            c.synth.motion = v.clone();
        }
        if let Some(v) = o.steps {
            c.train.steps = v;
        }
        if let Some(v) = o.augment {
            c.train.augment = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let fail = |m: &str| Err(Error::Config(m.into()));
        if semtrack_core::synth::MotionKind::from_name(&self.synth.motion).is_none() {
            return fail("synth.motion must be static, arm-swing or walk");
        }
        if self.synth.frames == 0 || !(self.synth.max_range > 0.0) {
            return fail("synth.frames and synth.max_range must be positive");
        }
        let t = &self.train;
        if !(t.lambda >= 0.0)
            || !(t.lr > 0.0)
            || t.batch == 0
            || t.sequences == 0
            || t.frames_per_sequence == 0
        {
            return fail("train settings out of range");
        }
        if !(0.0..=1.0).contains(&t.augment_probability) {
            return fail("train.augment_probability must lie in [0, 1]");
        }
        if self.sweep.offsets_cm.is_empty()
            || self.sweep.offsets_cm.contains(&0)
            || self.sweep.subjects == 0
            || self.sweep.frames == 0
        {
            return fail("sweep needs positive offsets, subjects and frames");
        }
        if !(self.sweep.coverage > 0.0 && self.sweep.coverage < 1.0) {
            return fail("sweep.coverage must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        (&self.tracker).into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }
}
