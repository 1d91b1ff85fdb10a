//! Train/test partitions over `(speaker, sentence)` utterances.

use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Indices into `Dataset::utterances`, each list sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn check(ds: &Dataset, n_train: usize) -> Result<()> {
    if n_train == 0 || n_train >= ds.manifest.n_sentences {
        return Err(Error::InvalidArgument(format!(
            "n_train {n_train} must lie in [1, {}) for {} sentences",
            ds.manifest.n_sentences, ds.manifest.n_sentences
        )));
    }
    Ok(())
}

fn partition(ds: &Dataset, is_train: impl Fn(usize, usize) -> bool) -> Split {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (idx, u) in ds.utterances.iter().enumerate() {
        if is_train(u.speaker_id, u.sentence_id) {
            train.push(idx);
        } else {
            test.push(idx);
        }
    }
    Split { train, test }
}

/// Sentences `[0, n_train)` train for every speaker; the rest test.
pub fn split_text_independent(ds: &Dataset, n_train: usize) -> Result<Split> {
    check(ds, n_train)?;
    Ok(partition(ds, |_, sent| sent < n_train))
}

/// A seeded random choice of `n_train` sentences per speaker, drawn
/// independently for each speaker.
pub fn split_text_dependent(ds: &Dataset, seed: u64, n_train: usize) -> Result<Split> {
    check(ds, n_train)?;
    let n = ds.manifest.n_sentences;
    let chosen: Vec<Vec<bool>> = (0..ds.manifest.n_speakers)
        .map(|spk| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::cell_stream(seed, streams::SPLIT, spk, 0));
            let mut mask = vec![false; n];
            order[..n_train].iter().for_each(|&s| mask[s] = true);
            mask
        })
        .collect();
    Ok(partition(ds, |spk, sent| {
        chosen.get(spk).and_then(|m| m.get(sent)).copied().unwrap_or(false)
    }))
}
