//! Raw utterances to posture-corrected 28×200×3 sequences.

use serde::Serialize;

use crate::data::{Dataset, DatasetManifest, LandmarkRoles, Utterance};
use crate::error::Result;
use crate::geometry::{correct_posture_with_angles, FaceCloud, Point, PoseAngles};
use crate::sequence::{sample_frame_indices, select_lip_points, LipIndexMap, S3dlmSequence};
use crate::{FRAMES, LANDMARKS};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UtteranceLog {
    pub speaker_id: usize,
    pub sentence_id: usize,
    pub input_frames: usize,
    pub padded: bool,
    /// Pose removed from each of the 28 kept frames.
    pub angles: Vec<PoseAngles>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedUtterance {
    pub speaker_id: usize,
    pub sentence_id: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PreprocessLog {
    pub utterances: Vec<UtteranceLog>,
    pub skipped: Vec<SkippedUtterance>,
    pub warnings: Vec<String>,
}

impl PreprocessLog {
    /// Largest removed rotation angle (radians) over all frames.
    pub fn max_abs_angle(&self) -> f64 {
        self.utterances
            .iter()
            .flat_map(|u| &u.angles)
            .flat_map(|a| [a.yaw, a.roll, a.pitch])
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Samples 28 frames, corrects each frame's posture and gathers the lip lattice.
pub fn preprocess_utterance(u: &Utterance, map: &LipIndexMap) -> Result<(S3dlmSequence, UtteranceLog)> {
    u.validate()?;
    let idx = sample_frame_indices(u.frames.len())?;
    let mut data = Vec::with_capacity(S3dlmSequence::LEN);
    let mut angles = Vec::with_capacity(FRAMES);
    let mut cache: Option<(usize, FaceCloud, PoseAngles)> = None;
    for i in idx {
        // Padding repeats the last frame; reuse its correction.
        if cache.as_ref().is_none_or(|(j, _, _)| *j != i) {
            let (corrected, _, a) = correct_posture_with_angles(&u.frames[i])?;
            cache = Some((i, select_lip_points(&corrected, map)?, a));
        }
        let (_, lip, a) = cache.as_ref().expect("filled above");
        data.extend(lip.points.iter().flat_map(|p| [p.x, p.y, p.z]));
        angles.push(*a);
    }
    let seq = S3dlmSequence::new(data, u.speaker_id, u.sentence_id)?;
    let log = UtteranceLog {
        speaker_id: u.speaker_id,
        sentence_id: u.sentence_id,
        input_frames: u.frames.len(),
        padded: u.frames.len() < FRAMES,
        angles,
    };
    Ok((seq, log))
}

/// Preprocesses every utterance; degenerate ones are skipped and logged.
pub fn preprocess_dataset(ds: &Dataset, map: &LipIndexMap) -> (Vec<S3dlmSequence>, PreprocessLog) {
    let mut log = PreprocessLog::default();
    let mut seqs = Vec::with_capacity(ds.utterances.len());
    for u in &ds.utterances {
        match preprocess_utterance(u, map) {
            Ok((s, l)) => {
                if l.padded {
                    log.warnings.push(format!(
                        "{}: {} frame(s), padded to {FRAMES} by repeating the last frame",
                        Dataset::file_stem(u.speaker_id, u.sentence_id),
                        l.input_frames
                    ));
                }
                seqs.push(s);
                log.utterances.push(l);
            }
            Err(e) => log.skipped.push(SkippedUtterance {
                speaker_id: u.speaker_id,
                sentence_id: u.sentence_id,
                reason: e.to_string(),
            }),
        }
    }
    (seqs, log)
}

/// Lip map for clouds that already hold exactly the 200 lattice points.
pub fn default_lip_map(ds: &Dataset) -> Result<LipIndexMap> {
    if ds.manifest.point_count == LANDMARKS && ds.manifest.landmarks == LandmarkRoles::default() {
        Ok(LipIndexMap::identity())
    } else {
        Err(crate::Error::InvalidArgument(format!(
            "dataset has {} points per frame with custom landmark roles; a lip index map is required",
            ds.manifest.point_count
        )))
    }
}

pub fn sequence_frames(seq: &S3dlmSequence) -> Vec<FaceCloud> {
    let roles = LandmarkRoles::default();
    seq.data()
        .chunks(LANDMARKS * 3)
        .enumerate()
        .map(|(t, c)| FaceCloud {
            points: c.chunks(3).map(|p| Point::new(p[0], p[1], p[2])).collect(),
            frame_index: t,
            corner_left: roles.corner_left,
            corner_right: roles.corner_right,
            upper_ref: roles.upper_ref,
        })
        .collect()
}

/// Stores corrected sequences as a dataset of 28-frame, 200-point utterances.
/// Pairs without a sequence are listed as excluded; generator ground truth
/// describes the raw clouds and is dropped.
pub fn sequences_to_dataset(seqs: &[S3dlmSequence], source: &DatasetManifest) -> Dataset {
    let present: std::collections::BTreeSet<_> = seqs.iter().map(|s| (s.speaker_id, s.sentence_id)).collect();
    let excluded = (0..source.n_speakers)
        .flat_map(|s| (0..source.n_sentences).map(move |j| (s, j)))
        .filter(|k| !present.contains(k))
        .collect();
    Dataset {
        manifest: DatasetManifest {
            point_count: LANDMARKS,
            landmarks: LandmarkRoles::default(),
            ground_truth: None,
            excluded,
            ..source.clone()
        },
        utterances: seqs
            .iter()
            .map(|s| Utterance {
                speaker_id: s.speaker_id,
                sentence_id: s.sentence_id,
                frames: sequence_frames(s),
                fps: source.fps,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, PoseJitter, SyntheticSpec};

    fn spec(pose: PoseJitter) -> SyntheticSpec {
        SyntheticSpec {
            n_speakers: 2,
            n_sentences: 3,
            pose_jitter: pose,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn zero_pose_angles_vanish() {
        let ds = generate_synthetic(&SyntheticSpec {
            noise_sigma: 0.0,
            ..spec(PoseJitter::none())
        })
        .unwrap();
        let (seqs, log) = preprocess_dataset(&ds, &LipIndexMap::identity());
        assert_eq!(seqs.len(), 6);
        assert!(log.max_abs_angle() < 1e-9);
    }

    #[test]
    fn jittered_matches_zero_pose() {
        let a = generate_synthetic(&spec(PoseJitter::none())).unwrap();
        let b = generate_synthetic(&spec(PoseJitter::default())).unwrap();
        let (sa, _) = preprocess_dataset(&a, &LipIndexMap::identity());
        let (sb, lb) = preprocess_dataset(&b, &LipIndexMap::identity());
        assert!(lb.max_abs_angle() > 1e-3);
        for (x, y) in sa.iter().zip(&sb) {
            let err = x.data().iter().zip(y.data()).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
            assert!(err < 1e-9, "max deviation {err}");
        }
    }

    #[test]
    fn single_frame_is_padded_with_warning() {
        let mut ds = generate_synthetic(&spec(PoseJitter::default())).unwrap();
        ds.utterances[0].frames.truncate(1);
        let (seqs, log) = preprocess_dataset(&ds, &LipIndexMap::identity());
        assert_eq!(log.warnings.len(), 1);
        let s = &seqs[0];
        let first = &s.data()[..LANDMARKS * 3];
        assert!(s.data().chunks(LANDMARKS * 3).all(|f| f == first));
    }

    #[test]
    fn degenerate_utterance_is_skipped() {
        let mut ds = generate_synthetic(&spec(PoseJitter::none())).unwrap();
        for f in &mut ds.utterances[2].frames {
            let l = f.points[f.corner_left];
            f.points[f.corner_right] = l;
        }
        let (seqs, log) = preprocess_dataset(&ds, &LipIndexMap::identity());
        assert_eq!(seqs.len(), 5);
        assert_eq!(log.skipped.len(), 1);
        assert_eq!((log.skipped[0].speaker_id, log.skipped[0].sentence_id), (0, 2));
    }

    #[test]
    fn store_round_trip_is_a_fixed_point() {
        let ds = generate_synthetic(&spec(PoseJitter::default())).unwrap();
        let (seqs, _) = preprocess_dataset(&ds, &LipIndexMap::identity());
        let store = sequences_to_dataset(&seqs, &ds.manifest);
        let (again, log) = preprocess_dataset(&store, &default_lip_map(&store).unwrap());
        assert!(log.max_abs_angle() < 1e-9);
        for (a, b) in seqs.iter().zip(&again) {
            let err = a.data().iter().zip(b.data()).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
            assert!(err < 1e-9);
        }
    }

    #[test]
    fn store_lists_skipped_utterances() {
        let mut ds = generate_synthetic(&spec(PoseJitter::none())).unwrap();
        for f in &mut ds.utterances[4].frames {
            let l = f.points[f.corner_left];
            f.points[f.corner_right] = l;
        }
        let (seqs, _) = preprocess_dataset(&ds, &LipIndexMap::identity());
        let store = sequences_to_dataset(&seqs, &ds.manifest);
        assert_eq!(store.manifest.excluded, vec![(1, 1)]);
        assert!(store.manifest.ground_truth.is_none());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store");
        crate::data::save_dataset(&store, &path).unwrap();
        let back = crate::data::load_dataset(&path).unwrap();
        assert_eq!(back, store);
    }
}
