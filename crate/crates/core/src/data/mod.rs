//! Utterance datasets: in-memory types, on-disk format, splits and the
//! synthetic corpus generator.

mod format;
mod split;
pub mod synthetic;

pub use format::{
    decode_s3d, encode_s3d, load_dataset, load_manifest, parse_csv, read_s3d, save_dataset, to_canonical_json, to_csv,
    write_s3d, FrameBlock, FORMAT_VERSION,
};
pub use split::{split_text_dependent, split_text_independent, Split};
pub use synthetic::{
    generate_synthetic, GroundTruth, PoseJitter, SpeakerFactors, SyntheticCorpus, SyntheticSpec, TextTrajectory,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FaceCloud;
use crate::sequence::{CORNER_LEFT_POS, CORNER_RIGHT_POS, UPPER_REF_POS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkRoles {
    pub corner_left: usize,
    pub corner_right: usize,
    pub upper_ref: usize,
}

impl Default for LandmarkRoles {
    fn default() -> Self {
        Self {
            corner_left: CORNER_LEFT_POS,
            corner_right: CORNER_RIGHT_POS,
            upper_ref: UPPER_REF_POS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n_speakers: usize,
    pub n_sentences: usize,
    pub fps: f64,
    pub point_count: usize,
    pub landmarks: LandmarkRoles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    /// `(speaker, sentence)` pairs intentionally absent from the directory.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub speaker_id: usize,
    pub sentence_id: usize,
    pub frames: Vec<FaceCloud>,
    pub fps: f64,
}

impl Utterance {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Err(Error::InvalidArgument(format!(
                "utterance spk{}_sent{} has no frames",
                self.speaker_id, self.sentence_id
            )));
        };
        if let Some(f) = self.frames.iter().find(|f| f.len() != first.len()) {
            return Err(Error::InvalidArgument(format!(
                "utterance spk{}_sent{}: frame {} has {} points, expected {}",
                self.speaker_id,
                self.sentence_id,
                f.frame_index,
                f.len(),
                first.len()
            )));
        }
        Ok(())
    }

    /// Frame coordinates flattened frame-major as `x, y, z` triples.
    pub fn flat(&self) -> Vec<f64> {
        self.frames
            .iter()
            .flat_map(|f| f.points.iter().flat_map(|p| [p.x, p.y, p.z]))
            .collect()
    }
}

/// Utterances ordered by `(speaker_id, sentence_id)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn utterance(&self, speaker: usize, sentence: usize) -> Option<&Utterance> {
        self.utterances
            .iter()
            .find(|u| u.speaker_id == speaker && u.sentence_id == sentence)
    }

    pub fn file_stem(speaker: usize, sentence: usize) -> String {
        format!("spk{speaker}_sent{sentence}")
    }
}
