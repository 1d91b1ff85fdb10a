//! Browser bindings: posture correction, the prior heatmap and synthetic
//! lip trajectories. Every export returns a JSON or SVG string.

use lip3d::data::{generate_synthetic, PoseJitter, SyntheticCorpus, SyntheticSpec};
use lip3d::geometry::{correct_posture_with_angles, pose_transform, FaceCloud, Point};
use lip3d::pipeline::preprocess_dataset;
use lip3d::prior::{opposite_prior, prior_from_training, to_svg};
use lip3d::sequence::{LipIndexMap, S3dlmSequence, CORNER_LEFT_POS, CORNER_RIGHT_POS, UPPER_REF_POS};
use lip3d::{FRAMES, LANDMARKS};
use nalgebra::Vector3;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js(e: lip3d::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn xyz(points: &[Point]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn small_spec(n_speakers: usize, n_sentences: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_speakers,
        n_sentences,
        seed,
        ..SyntheticSpec::default()
    }
}

/// Poses the resting lip lattice (angles in degrees, translation in mm) and
/// corrects it. Returns `{posed, corrected, recovered_deg, max_error_mm}`.
#[wasm_bindgen]
pub fn pose_round_trip(yaw: f64, roll: f64, pitch: f64, tx: f64, ty: f64, tz: f64) -> Result<String, JsError> {
    let corpus = SyntheticCorpus::new(&SyntheticSpec::default()).map_err(js)?;
    let rest = FaceCloud::new(corpus.base_frame(), 0, CORNER_LEFT_POS, CORNER_RIGHT_POS, UPPER_REF_POS).map_err(js)?;
    let (canon, _, _) = correct_posture_with_angles(&rest).map_err(js)?;
    let pose = pose_transform(yaw.to_radians(), roll.to_radians(), pitch.to_radians(), Vector3::new(tx, ty, tz));
    let posed = canon.transformed(&pose);
    let (back, _, angles) = correct_posture_with_angles(&posed).map_err(js)?;
    let max_error = back
        .points
        .iter()
        .zip(&canon.points)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    Ok(json!({
        "posed": xyz(&posed.points),
        "corrected": xyz(&back.points),
        "recovered_deg": {
            "yaw": angles.yaw.to_degrees(),
            "roll": angles.roll.to_degrees(),
            "pitch": angles.pitch.to_degrees(),
        },
        "max_error_mm": max_error,
    })
    .to_string())
}

/// Prior heatmap of a small synthetic corpus as SVG; `opposed` shows `1 − p`.
#[wasm_bindgen]
pub fn prior_heatmap(n_speakers: usize, n_sentences: usize, seed: u64, opposed: bool) -> Result<String, JsError> {
    let ds = generate_synthetic(&small_spec(n_speakers, n_sentences, seed)).map_err(js)?;
    let (seqs, _) = preprocess_dataset(&ds, &LipIndexMap::identity());
    let (_, p) = prior_from_training(&seqs).map_err(js)?;
    let (p, title) = if opposed {
        (opposite_prior(&p), "opposed prior 1 - p")
    } else {
        (p, "prior p")
    };
    Ok(to_svg(p.values(), title, &format!("{n_speakers} speakers, {n_sentences} sentences, seed {seed}")))
}

/// Vertical coordinate of one landmark over the 28 sampled frames for every
/// utterance of a small pose-jittered corpus, after posture correction.
/// Returns `{frames, series: [{speaker, sentence, y}]}`.
#[wasm_bindgen]
pub fn trajectories(n_speakers: usize, n_sentences: usize, seed: u64, landmark: usize) -> Result<String, JsError> {
    if landmark >= LANDMARKS {
        return Err(JsError::new(&format!("landmark must be below {LANDMARKS}")));
    }
    let spec = SyntheticSpec {
        pose_jitter: PoseJitter::default(),
        ..small_spec(n_speakers, n_sentences, seed)
    };
    let ds = generate_synthetic(&spec).map_err(js)?;
    let (seqs, _) = preprocess_dataset(&ds, &LipIndexMap::identity());
    let series: Vec<_> = seqs
        .iter()
        .map(|s: &S3dlmSequence| {
            let y: Vec<f64> = (0..FRAMES).map(|t| s.at(t, landmark, 1)).collect();
            json!({"speaker": s.speaker_id, "sentence": s.sentence_id, "y": y})
        })
        .collect();
    Ok(json!({"frames": FRAMES, "series": series}).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_round_trip_recovers_rest_shape() {
        let out: serde_json::Value = serde_json::from_str(&pose_round_trip(10.0, -5.0, 7.0, 30.0, -20.0, 100.0).unwrap()).unwrap();
        assert!(out["max_error_mm"].as_f64().unwrap() < 1e-9);
        assert!((out["recovered_deg"]["yaw"].as_f64().unwrap() - 10.0).abs() < 1e-9);
        assert!((out["recovered_deg"]["pitch"].as_f64().unwrap() - 7.0).abs() < 1e-9);
        assert_eq!(out["posed"].as_array().unwrap().len(), LANDMARKS);
    }

    #[test]
    fn heatmap_has_one_cell_per_landmark() {
        let svg = prior_heatmap(3, 4, 1, false).unwrap();
        assert_eq!(svg.matches("class=\"cell\"").count(), LANDMARKS);
        assert_ne!(svg, prior_heatmap(3, 4, 1, true).unwrap());
    }

    #[test]
    fn trajectories_cover_every_utterance() {
        let out: serde_json::Value = serde_json::from_str(&trajectories(2, 3, 0, 10).unwrap()).unwrap();
        let series = out["series"].as_array().unwrap();
        assert_eq!(series.len(), 6);
        assert!(series.iter().all(|s| s["y"].as_array().unwrap().len() == FRAMES));
    }
}
