//! Synthetic lip-motion corpus built from an additive model: every utterance
//! of speaker `i` reading text `j` is
//!
//! ```text
//! P_ij(t) = base + U_j(t) + L_i(t) + noise
//! ```
//!
//! followed by a random rigid head pose. `U_j` is a smooth text-driven
//! trajectory (mouth opening, spread, protrusion) shared by all speakers;
//! `L_i` holds the speaker's static shape offsets (width, asymmetry,
//! protrusion) plus a habitual opening rhythm that does not depend on the
//! text. Both fields are exposed so the decomposition can be checked
//! exactly. Outer lip rows carry larger motion gains than inner rows.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetManifest, LandmarkRoles, Utterance, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::geometry::{pose_transform, FaceCloud, Point};
use crate::rng::{self, streams};
use crate::{LANDMARKS, LIP_COLS, LIP_ROWS};

/// Resting lip height of each lattice row (mm); upper rows positive.
const ROW_HEIGHT: [f64; LIP_ROWS] = [12.0, 10.0, 8.0, 6.0, 3.0, -3.0, -6.5, -10.0, -13.0, -15.0];
/// Recession of each row behind the outer upper lip (mm). Row 0 holds the
/// pitch reference and stays in the `z = 0` plane.
const ROW_DEPTH: [f64; LIP_ROWS] = [0.0, 1.5, 3.0, 4.5, 6.0, 6.0, 4.5, 3.0, 1.5, 0.75];
/// Opening-motion gain per row: outer upper strongest, inner rows weakest.
const ROW_GAIN: [f64; LIP_ROWS] = [1.0, 0.8, 0.6, 0.45, 0.3, 0.3, 0.45, 0.6, 0.75, 0.9];

fn row_width(r: usize) -> f64 {
    1.0 - 0.03 * (r as f64 - 4.0).abs()
}

fn row_sign(r: usize) -> f64 {
    if r < LIP_ROWS / 2 {
        1.0
    } else {
        -1.0
    }
}

fn col_u(c: usize) -> f64 {
    c as f64 / (LIP_COLS - 1) as f64
}

/// Vertical profile of the lip arc; zero at both mouth corners.
fn arc(c: usize) -> f64 {
    if c == 0 || c == LIP_COLS - 1 {
        0.0
    } else {
        (PI * col_u(c)).sin()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseJitter {
    pub yaw_deg: f64,
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub translation_mm: f64,
}

impl PoseJitter {
    pub fn none() -> Self {
        Self {
            yaw_deg: 0.0,
            roll_deg: 0.0,
            pitch_deg: 0.0,
            translation_mm: 0.0,
        }
    }

    pub fn is_none(&self) -> bool {
        *self == Self::none()
    }
}

impl Default for PoseJitter {
    fn default() -> Self {
        Self {
            yaw_deg: 15.0,
            roll_deg: 15.0,
            pitch_deg: 15.0,
            translation_mm: 200.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_speakers: usize,
    pub n_sentences: usize,
    pub frames_per_utterance: usize,
    pub fps: f64,
    /// Standard deviation of the i.i.d. coordinate noise (mm).
    pub noise_sigma: f64,
    pub lip_width_mm: f64,
    /// Peak amplitude scale of the text-driven opening trajectory (mm).
    pub text_amplitude_mm: f64,
    pub text_components: usize,
    /// Sinusoid frequencies of text trajectories, cycles per utterance.
    pub text_frequency_range: [f64; 2],
    /// Explicit per-sentence trajectory seeds; derived from `seed` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_seeds: Option<Vec<u64>>,
    /// Habitual opening amplitude of a speaker (mm).
    pub speaker_amplitude_scale_range: [f64; 2],
    pub width_scale_range: [f64; 2],
    pub asymmetry_range: [f64; 2],
    /// Habitual rhythm frequency, cycles per utterance.
    pub habit_frequency_range: [f64; 2],
    pub protrusion_range: [f64; 2],
    pub pose_jitter: PoseJitter,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_speakers: 8,
            n_sentences: 30,
            frames_per_utterance: 40,
            fps: 30.0,
            noise_sigma: 0.2,
            lip_width_mm: 50.0,
            text_amplitude_mm: 0.5,
            text_components: 3,
            text_frequency_range: [0.5, 3.0],
            text_seeds: None,
            speaker_amplitude_scale_range: [0.5, 3.0],
            width_scale_range: [0.85, 1.15],
            asymmetry_range: [-0.15, 0.15],
            habit_frequency_range: [1.0, 4.0],
            protrusion_range: [-2.0, 2.0],
            pose_jitter: PoseJitter::default(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_speakers == 0 || self.n_sentences == 0 || self.frames_per_utterance == 0 {
            return bad("speaker, sentence and frame counts must be positive".into());
        }
        if self.text_components == 0 {
            return bad("text_components must be positive".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        for (name, v) in [
            ("fps", self.fps),
            ("lip_width_mm", self.lip_width_mm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.text_amplitude_mm.is_finite() || self.text_amplitude_mm < 0.0 {
            return bad("text_amplitude_mm must be finite and >= 0".into());
        }
        for (name, r) in [
            ("text_frequency_range", self.text_frequency_range),
            ("speaker_amplitude_scale_range", self.speaker_amplitude_scale_range),
            ("width_scale_range", self.width_scale_range),
            ("asymmetry_range", self.asymmetry_range),
            ("habit_frequency_range", self.habit_frequency_range),
            ("protrusion_range", self.protrusion_range),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return bad(format!("{name} must be a finite [lo, hi] with lo <= hi"));
            }
        }
        if self.width_scale_range[0] <= 0.0 {
            return bad("width_scale_range must be positive".into());
        }
        let p = &self.pose_jitter;
        for (name, v) in [
            ("yaw_deg", p.yaw_deg),
            ("roll_deg", p.roll_deg),
            ("pitch_deg", p.pitch_deg),
            ("translation_mm", p.translation_mm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("pose_jitter.{name} must be finite and >= 0"));
            }
        }
        if p.yaw_deg >= 80.0 || p.roll_deg >= 80.0 || p.pitch_deg >= 80.0 {
            return bad("pose jitter angles must stay below 80 degrees".into());
        }
        if let Some(seeds) = &self.text_seeds {
            if seeds.len() != self.n_sentences {
                return bad(format!(
                    "text_seeds has {} entries for {} sentences",
                    seeds.len(),
                    self.n_sentences
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl Sinusoid {
    fn at(&self, tau: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency * tau + self.phase).sin()
    }
}

fn mixture(bank: &[Sinusoid], tau: f64) -> f64 {
    bank.iter().map(|s| s.at(tau)).sum()
}

/// Text-dependent motion `U_j`: sinusoid mixtures over normalized time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextTrajectory {
    pub opening: Vec<Sinusoid>,
    pub spread: Vec<Sinusoid>,
    pub protrusion: Vec<Sinusoid>,
}

/// Speaker-dependent motion `L_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerFactors {
    pub width_scale: f64,
    pub asymmetry: f64,
    pub protrusion: f64,
    pub habit_amplitude: f64,
    pub habit_frequency: f64,
    pub habit_phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticSpec,
    pub speakers: Vec<SpeakerFactors>,
    pub texts: Vec<TextTrajectory>,
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn sample_text<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> TextTrajectory {
    let mut bank = |scale: f64| -> Vec<Sinusoid> {
        (0..spec.text_components)
            .map(|_| Sinusoid {
                amplitude: scale * rng.random_range(0.5..1.0) / spec.text_components as f64,
                frequency: uniform(rng, spec.text_frequency_range),
                phase: rng.random_range(0.0..2.0 * PI),
            })
            .collect()
    };
    let a = spec.text_amplitude_mm;
    TextTrajectory {
        opening: bank(a),
        spread: bank(0.5 * a),
        protrusion: bank(0.3 * a),
    }
}

fn sample_speaker<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> SpeakerFactors {
    SpeakerFactors {
        width_scale: uniform(rng, spec.width_scale_range),
        asymmetry: uniform(rng, spec.asymmetry_range),
        protrusion: uniform(rng, spec.protrusion_range),
        habit_amplitude: uniform(rng, spec.speaker_amplitude_scale_range),
        habit_frequency: uniform(rng, spec.habit_frequency_range),
        habit_phase: rng.random_range(0.0..2.0 * PI),
    }
}

/// Deterministic renderer for one synthetic corpus.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    truth: GroundTruth,
}

impl SyntheticCorpus {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut srng = rng::stream(spec.seed, streams::SPEAKERS);
        let speakers = (0..spec.n_speakers).map(|_| sample_speaker(spec, &mut srng)).collect();
        let texts = (0..spec.n_sentences)
            .map(|j| {
                let mut trng = match &spec.text_seeds {
                    Some(seeds) => rng::stream(seeds[j], streams::TEXTS),
                    None => rng::cell_stream(spec.seed, streams::TEXTS, j, 0),
                };
                sample_text(spec, &mut trng)
            })
            .collect();
        Ok(Self {
            truth: GroundTruth {
                spec: spec.clone(),
                speakers,
                texts,
            },
        })
    }

    pub fn from_ground_truth(truth: GroundTruth) -> Result<Self> {
        truth.spec.validate()?;
        if truth.speakers.len() != truth.spec.n_speakers || truth.texts.len() != truth.spec.n_sentences {
            return Err(Error::InvalidArgument(
                "ground truth factor counts disagree with its spec".into(),
            ));
        }
        Ok(Self { truth })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.truth.spec
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.truth
    }

    fn tau(&self, t: usize) -> f64 {
        let n = self.spec().frames_per_utterance;
        if n > 1 {
            t as f64 / (n - 1) as f64
        } else {
            0.0
        }
    }

    /// Resting lattice, 200 points in row-major order.
    pub fn base_frame(&self) -> Vec<Point> {
        let w = self.spec().lip_width_mm;
        let mut pts = Vec::with_capacity(LANDMARKS);
        for r in 0..LIP_ROWS {
            for c in 0..LIP_COLS {
                pts.push(Point::new(
                    (col_u(c) - 0.5) * w * row_width(r),
                    ROW_HEIGHT[r] * arc(c),
                    -ROW_DEPTH[r] * arc(c),
                ));
            }
        }
        pts
    }

    /// `U_j` flattened frame-major (frames × 200 × 3).
    pub fn text_field(&self, j: usize) -> Vec<f64> {
        let text = &self.truth.texts[j];
        let arcs: Vec<f64> = (0..LIP_COLS).map(arc).collect();
        let mut out = Vec::with_capacity(self.spec().frames_per_utterance * LANDMARKS * 3);
        for t in 0..self.spec().frames_per_utterance {
            let tau = self.tau(t);
            let (open, spread, prot) = (
                mixture(&text.opening, tau),
                mixture(&text.spread, tau),
                mixture(&text.protrusion, tau),
            );
            for r in 0..LIP_ROWS {
                for c in 0..LIP_COLS {
                    out.push(spread * (2.0 * col_u(c) - 1.0) * 0.5 * row_width(r));
                    out.push(row_sign(r) * ROW_GAIN[r] * open * arcs[c]);
                    out.push(-(ROW_DEPTH[r] / 6.0) * prot * arcs[c]);
                }
            }
        }
        out
    }

    /// `L_i` flattened frame-major (frames × 200 × 3).
    pub fn speaker_field(&self, i: usize) -> Vec<f64> {
        let s = self.truth.speakers[i];
        let base = self.base_frame();
        let arcs: Vec<f64> = (0..LIP_COLS).map(arc).collect();
        let mut out = Vec::with_capacity(self.spec().frames_per_utterance * LANDMARKS * 3);
        for t in 0..self.spec().frames_per_utterance {
            let tau = self.tau(t);
            let habit =
                s.habit_amplitude * (2.0 * PI * s.habit_frequency * tau + s.habit_phase).sin();
            for r in 0..LIP_ROWS {
                for c in 0..LIP_COLS {
                    let b = base[r * LIP_COLS + c];
                    out.push((s.width_scale - 1.0) * b.x);
                    out.push(
                        s.asymmetry * (2.0 * col_u(c) - 1.0) * b.y
                            + row_sign(r) * ROW_GAIN[r] * habit * arcs[c],
                    );
                    out.push(-(ROW_DEPTH[r] / 6.0) * s.protrusion * arcs[c]);
                }
            }
        }
        out
    }

    /// Pose-free, noise-free `base + U_j + L_i`, flattened frame-major.
    pub fn clean_field(&self, i: usize, j: usize) -> Vec<f64> {
        let base = self.base_frame();
        let u = self.text_field(j);
        let l = self.speaker_field(i);
        u.iter()
            .zip(&l)
            .enumerate()
            .map(|(idx, (a, b))| {
                let p = base[(idx / 3) % LANDMARKS];
                p[idx % 3] + a + b
            })
            .collect()
    }

    pub fn utterance(&self, i: usize, j: usize) -> Utterance {
        let spec = self.spec();
        let mut flat = self.clean_field(i, j);
        if spec.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
            let mut nrng = rng::cell_stream(spec.seed, streams::NOISE, i, j);
            flat.iter_mut().for_each(|v| *v += normal.sample(&mut nrng));
        }
        let pose = (!spec.pose_jitter.is_none()).then(|| {
            let pj = &spec.pose_jitter;
            let mut prng = rng::cell_stream(spec.seed, streams::POSE, i, j);
            let mut ang = |d: f64| uniform(&mut prng, [-d, d]).to_radians();
            let (yaw, roll, pitch) = (ang(pj.yaw_deg), ang(pj.roll_deg), ang(pj.pitch_deg));
            let mut tr = || uniform(&mut prng, [-pj.translation_mm, pj.translation_mm]);
            let t = Vector3::new(tr(), tr(), tr());
            pose_transform(yaw, roll, pitch, t)
        });
        let roles = LandmarkRoles::default();
        let frames = flat
            .chunks(LANDMARKS * 3)
            .enumerate()
            .map(|(t, chunk)| {
                let points = chunk
                    .chunks(3)
                    .map(|p| {
                        let q = Point::new(p[0], p[1], p[2]);
                        pose.map_or(q, |tf| tf.apply(&q))
                    })
                    .collect();
                FaceCloud {
                    points,
                    frame_index: t,
                    corner_left: roles.corner_left,
                    corner_right: roles.corner_right,
                    upper_ref: roles.upper_ref,
                }
            })
            .collect();
        Utterance {
            speaker_id: i,
            sentence_id: j,
            frames,
            fps: spec.fps,
        }
    }

    pub fn dataset(&self) -> Dataset {
        let spec = self.spec();
        let utterances = (0..spec.n_speakers)
            .flat_map(|i| (0..spec.n_sentences).map(move |j| (i, j)))
            .map(|(i, j)| self.utterance(i, j))
            .collect();
        Dataset {
            manifest: DatasetManifest {
                format_version: FORMAT_VERSION,
                n_speakers: spec.n_speakers,
                n_sentences: spec.n_sentences,
                fps: spec.fps,
                point_count: LANDMARKS,
                landmarks: LandmarkRoles::default(),
                ground_truth: Some(self.truth.clone()),
                excluded: Vec::new(),
            },
            utterances,
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    Ok(SyntheticCorpus::new(spec)?.dataset())
}
