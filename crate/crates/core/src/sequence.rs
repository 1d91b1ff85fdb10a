//! Sentence-level lip-motion sequences: 200 lip landmarks sampled at 28 frames.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::FaceCloud;
use crate::{FRAMES, LANDMARKS, LIP_COLS};

/// Lattice position (row-major, 20 per row) of the left mouth corner.
pub const CORNER_LEFT_POS: usize = 4 * LIP_COLS;
/// Lattice position of the right mouth corner.
pub const CORNER_RIGHT_POS: usize = 4 * LIP_COLS + LIP_COLS - 1;
/// Lattice position of the default pitch reference (outer upper lip, center).
pub const UPPER_REF_POS: usize = LIP_COLS / 2;

/// Which 200 points of a face cloud form the lip lattice, in row-major
/// order (row `r`, column `c` ↦ position `20r + c`). Rows 0–4 run from the
/// outer to the inner upper lip, rows 5–9 from the inner to the outer lower lip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LipIndexMap {
    indices: Vec<usize>,
    pub corner_left: usize,
    pub corner_right: usize,
    pub upper_ref: usize,
}

impl LipIndexMap {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.len() != LANDMARKS {
            return Err(Error::Dimension {
                op: "lip_index_map",
                axis: "landmarks",
                expected: LANDMARKS,
                got: indices.len(),
            });
        }
        let mut seen = indices.clone();
        seen.sort_unstable();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!(
                "lip index map repeats landmark {}",
                w[0]
            )));
        }
        Ok(Self {
            indices,
            corner_left: CORNER_LEFT_POS,
            corner_right: CORNER_RIGHT_POS,
            upper_ref: UPPER_REF_POS,
        })
    }

    /// Map for clouds that already hold exactly the 200 lattice points.
    pub fn identity() -> Self {
        Self::new((0..LANDMARKS).collect()).expect("identity map is valid")
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn max_index(&self) -> usize {
        self.indices.iter().copied().max().unwrap_or(0)
    }

    /// Text form: one integer per line, `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut indices = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let idx = content.parse::<usize>().map_err(|e| {
                Error::parse(path, format!("line {}", lineno + 1), e.to_string())
            })?;
            indices.push(idx);
        }
        Self::new(indices).map_err(|e| Error::Validation {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# lip landmark indices, row-major 10 x 20\n");
        for i in &self.indices {
            s.push_str(&i.to_string());
            s.push('\n');
        }
        s
    }
}

/// 28 × 200 × 3 lip-motion tensor (frame, landmark, coordinate) in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct S3dlmSequence {
    data: Vec<f64>,
    pub speaker_id: usize,
    pub sentence_id: usize,
}

impl S3dlmSequence {
    pub const LEN: usize = FRAMES * LANDMARKS * 3;

    pub fn new(data: Vec<f64>, speaker_id: usize, sentence_id: usize) -> Result<Self> {
        if data.len() != Self::LEN {
            return Err(Error::Dimension {
                op: "s3dlm_sequence",
                axis: "numel",
                expected: Self::LEN,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("sequence contains non-finite values".into()));
        }
        Ok(Self {
            data,
            speaker_id,
            sentence_id,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn offset(t: usize, k: usize, c: usize) -> usize {
        (t * LANDMARKS + k) * 3 + c
    }

    #[inline]
    pub fn at(&self, t: usize, k: usize, c: usize) -> f64 {
        self.data[Self::offset(t, k, c)]
    }

    /// Copy with the depth channel zeroed, for 2D-landmark comparison runs.
    pub fn project_2d(&self) -> S3dlmSequence {
        let mut data = self.data.clone();
        data.iter_mut().skip(2).step_by(3).for_each(|z| *z = 0.0);
        S3dlmSequence { data, ..*self }
    }

    /// Channels-first layout `[3, 28, 200]` for the network input.
    pub fn to_channels_first(&self) -> Vec<f64> {
        let mut out = vec![0.0; Self::LEN];
        for t in 0..FRAMES {
            for k in 0..LANDMARKS {
                for c in 0..3 {
                    out[(c * FRAMES + t) * LANDMARKS + k] = self.at(t, k, c);
                }
            }
        }
        out
    }
}

/// Gathers the 200 lattice points of a face cloud.
pub fn select_lip_points(cloud: &FaceCloud, map: &LipIndexMap) -> Result<FaceCloud> {
    if map.max_index() >= cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "lip index {} out of range for a {}-point cloud",
            map.max_index(),
            cloud.len()
        )));
    }
    Ok(FaceCloud {
        points: map.indices.iter().map(|&i| cloud.points[i]).collect(),
        frame_index: cloud.frame_index,
        corner_left: map.corner_left,
        corner_right: map.corner_right,
        upper_ref: map.upper_ref,
    })
}

/// Indices of the frames kept out of `n`: `round(k·(n−1)/27)` for `n ≥ 28`;
/// shorter utterances keep every frame and repeat the last one.
pub fn sample_frame_indices(n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot sample frames from an empty utterance".into()));
    }
    if n < FRAMES {
        return Ok((0..FRAMES).map(|k| k.min(n - 1)).collect());
    }
    let span = (n - 1) as f64 / (FRAMES - 1) as f64;
    Ok((0..FRAMES).map(|k| (k as f64 * span).round() as usize).collect())
}

pub fn sample_frames(frames: &[FaceCloud]) -> Result<Vec<FaceCloud>> {
    Ok(sample_frame_indices(frames.len())?
        .into_iter()
        .map(|i| frames[i].clone())
        .collect())
}

/// Assembles a sequence from time-ordered, posture-corrected frames.
pub fn build_sequence(
    frames: &[FaceCloud],
    map: &LipIndexMap,
    speaker_id: usize,
    sentence_id: usize,
) -> Result<S3dlmSequence> {
    let sampled = sample_frame_indices(frames.len())?;
    let mut data = Vec::with_capacity(S3dlmSequence::LEN);
    for i in sampled {
        let lip = select_lip_points(&frames[i], map)?;
        for p in &lip.points {
            data.extend_from_slice(&[p.x, p.y, p.z]);
        }
    }
    S3dlmSequence::new(data, speaker_id, sentence_id)
}
