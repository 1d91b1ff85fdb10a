//! Text-independence analysis of lip motion.
//!
//! Each utterance is reduced to a scalar motion variance. Grouping those
//! scalars by text and by speaker and comparing how much the group spreads
//! fluctuate shows whether motion variance follows the speaker or the text.
//! All standard deviations are population (divide by `n`).

use std::fmt::Write as _;

use serde::Serialize;

use crate::data::{Dataset, SyntheticCorpus, SyntheticSpec};
use crate::error::{Error, Result};
use crate::geometry::correct_posture;
use crate::pipeline::preprocess_utterance;
use crate::sequence::{LipIndexMap, S3dlmSequence};
use crate::{FRAMES, LANDMARKS};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn population_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Mean over landmarks of the temporal variance of each landmark, summed
/// over x, y and z (mm²).
pub fn utterance_motion_variance(seq: &S3dlmSequence) -> f64 {
    let mut total = 0.0;
    for k in 0..LANDMARKS {
        for c in 0..3 {
            let m = (0..FRAMES).map(|t| seq.at(t, k, c)).sum::<f64>() / FRAMES as f64;
            total += (0..FRAMES).map(|t| (seq.at(t, k, c) - m).powi(2)).sum::<f64>() / FRAMES as f64;
        }
    }
    total / LANDMARKS as f64
}

/// Motion variance per `(speaker, sentence)`, speaker-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MotionVarianceTable {
    pub n_speakers: usize,
    pub n_sentences: usize,
    pub v: Vec<f64>,
}

impl MotionVarianceTable {
    pub fn new(n_speakers: usize, n_sentences: usize, v: Vec<f64>) -> Result<Self> {
        if v.len() != n_speakers * n_sentences {
            return Err(Error::Dimension {
                op: "motion_variance_table",
                axis: "cells",
                expected: n_speakers * n_sentences,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidArgument("motion variances must be finite and >= 0".into()));
        }
        Ok(Self {
            n_speakers,
            n_sentences,
            v,
        })
    }

    pub fn get(&self, speaker: usize, sentence: usize) -> f64 {
        self.v[speaker * self.n_sentences + sentence]
    }

    pub fn from_sequences(seqs: &[S3dlmSequence], n_speakers: usize, n_sentences: usize) -> Result<Self> {
        let mut v = vec![f64::NAN; n_speakers * n_sentences];
        for s in seqs {
            if s.speaker_id >= n_speakers || s.sentence_id >= n_sentences {
                return Err(Error::InvalidArgument(format!(
                    "sequence spk{}_sent{} outside a {n_speakers}x{n_sentences} table",
                    s.speaker_id, s.sentence_id
                )));
            }
            v[s.speaker_id * n_sentences + s.sentence_id] = utterance_motion_variance(s);
        }
        if let Some(i) = v.iter().position(|x| x.is_nan()) {
            return Err(Error::InvalidArgument(format!(
                "no sequence for spk{}_sent{}",
                i / n_sentences,
                i % n_sentences
            )));
        }
        Self::new(n_speakers, n_sentences, v)
    }

    /// Generates, corrects and measures one synthetic utterance at a time,
    /// so corpus-scale tables never hold the whole dataset in memory.
    pub fn from_synthetic(spec: &SyntheticSpec) -> Result<Self> {
        let corpus = SyntheticCorpus::new(spec)?;
        let map = LipIndexMap::identity();
        let mut v = Vec::with_capacity(spec.n_speakers * spec.n_sentences);
        for i in 0..spec.n_speakers {
            for j in 0..spec.n_sentences {
                let (seq, _) = preprocess_utterance(&corpus.utterance(i, j), &map)?;
                v.push(utterance_motion_variance(&seq));
            }
        }
        Self::new(spec.n_speakers, spec.n_sentences, v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupAnalysis {
    /// First and last (1-based, inclusive) index covered by each group.
    pub ranges: Vec<(usize, usize)>,
    pub std: Vec<f64>,
    pub deviations: Vec<f64>,
    pub std_of_deviations: f64,
}

fn analyse(groups: Vec<((usize, usize), Vec<f64>)>) -> GroupAnalysis {
    let ranges = groups.iter().map(|(r, _)| *r).collect();
    let std: Vec<f64> = groups.iter().map(|(_, v)| population_std(v)).collect();
    let m = mean(&std);
    let deviations: Vec<f64> = std.iter().map(|s| s - m).collect();
    let std_of_deviations = population_std(&deviations);
    GroupAnalysis {
        ranges,
        std,
        deviations,
        std_of_deviations,
    }
}

/// Groups of `group_size` consecutive sentences (all speakers) over the first
/// `n_texts_used` sentences.
pub fn text_group_analysis(
    table: &MotionVarianceTable,
    group_size: usize,
    n_texts_used: usize,
) -> Result<GroupAnalysis> {
    if group_size == 0 || n_texts_used < group_size || !n_texts_used.is_multiple_of(group_size) {
        return Err(Error::InvalidArgument(format!(
            "n_texts_used {n_texts_used} must be a positive multiple of group_size {group_size}"
        )));
    }
    if table.n_sentences < n_texts_used {
        return Err(Error::InvalidArgument(format!(
            "text grouping needs {n_texts_used} sentences, table has {}",
            table.n_sentences
        )));
    }
    let groups = (0..n_texts_used / group_size)
        .map(|g| {
            let js = g * group_size..(g + 1) * group_size;
            let vals = (0..table.n_speakers)
                .flat_map(|i| js.clone().map(move |j| (i, j)))
                .map(|(i, j)| table.get(i, j))
                .collect();
            ((js.start + 1, js.end), vals)
        })
        .collect();
    Ok(analyse(groups))
}

/// Groups of `group_size` consecutive speakers (all sentences); the last
/// group takes the remainder.
pub fn speaker_group_analysis(table: &MotionVarianceTable, group_size: usize) -> Result<GroupAnalysis> {
    if group_size == 0 {
        return Err(Error::InvalidArgument("group_size must be positive".into()));
    }
    let groups = (0..table.n_speakers)
        .step_by(group_size)
        .map(|start| {
            let is = start..(start + group_size).min(table.n_speakers);
            let vals = is
                .clone()
                .flat_map(|i| (0..table.n_sentences).map(move |j| (i, j)))
                .map(|(i, j)| table.get(i, j))
                .collect();
            ((is.start + 1, is.end), vals)
        })
        .collect();
    Ok(analyse(groups))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndependenceReport {
    pub text: GroupAnalysis,
    pub speaker: GroupAnalysis,
    /// `speaker.std_of_deviations / text.std_of_deviations`.
    pub ratio: f64,
}

impl IndependenceReport {
    pub fn new(
        table: &MotionVarianceTable,
        text_group_size: usize,
        n_texts_used: usize,
        speaker_group_size: usize,
    ) -> Result<Self> {
        let text = text_group_analysis(table, text_group_size, n_texts_used)?;
        let speaker = speaker_group_analysis(table, speaker_group_size)?;
        let ratio = speaker.std_of_deviations / text.std_of_deviations;
        Ok(Self { text, speaker, ratio })
    }

    /// One row per sample: `kind,group,range,std,deviation`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,group,first,last,std,deviation\n");
        for (kind, a) in [("text", &self.text), ("speaker", &self.speaker)] {
            for (g, ((lo, hi), (sd, d))) in a.ranges.iter().zip(a.std.iter().zip(&a.deviations)).enumerate() {
                let _ = writeln!(s, "{kind},{g},{lo},{hi},{sd:?},{d:?}");
            }
        }
        let _ = writeln!(s, "text,std_of_deviations,,,{:?},", self.text.std_of_deviations);
        let _ = writeln!(s, "speaker,std_of_deviations,,,{:?},", self.speaker.std_of_deviations);
        let _ = writeln!(s, "ratio,,,,{:?},", self.ratio);
        s
    }

    /// Aligned table: group ranges, std row and deviation row per kind.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# population standard deviations\n");
        for (kind, label, a) in [
            ("Text-based sample (std_t)", "D_t", &self.text),
            ("Speaker-based sample (std_s)", "D_s", &self.speaker),
        ] {
            let header: Vec<String> = a.ranges.iter().map(|(lo, hi)| format!("{lo}-{hi}")).collect();
            let std: Vec<String> = a.std.iter().map(|v| format!("{v:.4}")).collect();
            let dev: Vec<String> = a.deviations.iter().map(|v| format!("{v:.4}")).collect();
            let row = |name: &str, cells: &[String], last: &str| {
                let mut line = format!("{name:<30}");
                for c in cells {
                    let _ = write!(line, "{c:>10}");
                }
                let _ = writeln!(line, "{last:>10}");
                line
            };
            s += &row(kind, &header, "std");
            s += &row("std", &std, "");
            s += &row(label, &dev, &format!("{:.4}", a.std_of_deviations));
            s.push('\n');
        }
        let _ = writeln!(s, "ratio std(D_s)/std(D_t) = {:.3}", self.ratio);
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecompositionCheck {
    pub n_speakers: usize,
    pub n_texts: usize,
    /// Largest component of the measured `(P̄_i − P̄)²`.
    pub max_f: f64,
    /// Largest absolute difference from `(l_i − l̄)²`.
    pub max_error: f64,
}

/// Measures `f = (P̄_i − P̄)²` from the utterances, averaging texts, and
/// compares it with `(l_i − l̄)²` computed from the generator's speaker fields.
///
/// Posed datasets are posture-corrected frame by frame first; pose-free
/// ones are used as stored.
pub fn verify_decomposition(ds: &Dataset) -> Result<DecompositionCheck> {
    let truth = ds.manifest.ground_truth.clone().ok_or(Error::NoGroundTruth)?;
    let corpus = SyntheticCorpus::from_ground_truth(truth)?;
    let (m, n) = (ds.manifest.n_speakers, ds.manifest.n_sentences);
    let posed = !corpus.spec().pose_jitter.is_none();
    let len = corpus.spec().frames_per_utterance * LANDMARKS * 3;

    let mut p_bar_i = vec![vec![0.0; len]; m];
    for u in &ds.utterances {
        let flat = if posed {
            let corrected = u.frames.iter().map(|f| correct_posture(f).map(|(c, _)| c));
            corrected
                .map(|c| c.map(|c| c.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>()))
                .collect::<Result<Vec<_>>>()?
                .concat()
        } else {
            u.flat()
        };
        if flat.len() != len || u.speaker_id >= m {
            return Err(Error::InvalidArgument(format!(
                "utterance {} does not match the generator layout",
                Dataset::file_stem(u.speaker_id, u.sentence_id)
            )));
        }
        p_bar_i[u.speaker_id].iter_mut().zip(&flat).for_each(|(a, b)| *a += b);
    }
    p_bar_i.iter_mut().flatten().for_each(|a| *a /= n as f64);
    let p_bar: Vec<f64> = (0..len).map(|c| p_bar_i.iter().map(|p| p[c]).sum::<f64>() / m as f64).collect();

    let l: Vec<Vec<f64>> = (0..m).map(|i| corpus.speaker_field(i)).collect();
    let l_bar: Vec<f64> = (0..len).map(|c| l.iter().map(|li| li[c]).sum::<f64>() / m as f64).collect();

    let (mut max_f, mut max_error) = (0.0f64, 0.0f64);
    for i in 0..m {
        for c in 0..len {
            let f = (p_bar_i[i][c] - p_bar[c]).powi(2);
            let closed = (l[i][c] - l_bar[c]).powi(2);
            max_f = max_f.max(f);
            max_error = max_error.max((f - closed).abs());
        }
    }
    Ok(DecompositionCheck {
        n_speakers: m,
        n_texts: n,
        max_f,
        max_error,
    })
}
