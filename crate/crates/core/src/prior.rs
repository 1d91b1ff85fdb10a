//! Per-landmark fluctuation prior used to initialize the feedback gate.
//!
//! `delta[k]` is the mean squared Euclidean deviation of landmark `k` from
//! its temporal mean, averaged over training sequences. The prior is
//! `p = sigmoid(alpha·delta + b)` with `alpha, b` chosen to standardize delta.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::S3dlmSequence;
use crate::tensor::sigmoid;
use crate::{FRAMES, LANDMARKS, LIP_COLS, LIP_ROWS};

/// Spread below which `delta` counts as constant.
const DEGENERATE_STD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluctuationStats {
    pub delta: Vec<f64>,
    pub alpha: f64,
    pub b: f64,
}

/// Stores `1 − p` alongside `p` so that taking the opposite twice is exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorVector {
    p: Vec<f64>,
    complement: Vec<f64>,
}

impl PriorVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() != LANDMARKS {
            return Err(Error::Dimension {
                op: "prior",
                axis: "landmarks",
                expected: LANDMARKS,
                got: p.len(),
            });
        }
        if let Some(v) = p.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::InvalidArgument(format!("prior value {v} outside (0, 1)")));
        }
        let complement = p.iter().map(|v| 1.0 - v).collect();
        Ok(Self { p, complement })
    }

    pub fn uniform(value: f64) -> Result<Self> {
        Self::new(vec![value; LANDMARKS])
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn as_vec(&self) -> Vec<f64> {
        self.p.clone()
    }
}

/// Per-landmark temporal mean squared deviation of one sequence.
pub fn sequence_fluctuation(seq: &S3dlmSequence) -> Vec<f64> {
    let mut mean = vec![0.0; LANDMARKS * 3];
    for t in 0..FRAMES {
        for (i, m) in mean.iter_mut().enumerate() {
            *m += seq.data()[t * LANDMARKS * 3 + i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= FRAMES as f64);
    let mut delta = vec![0.0; LANDMARKS];
    for t in 0..FRAMES {
        let frame = &seq.data()[t * LANDMARKS * 3..(t + 1) * LANDMARKS * 3];
        for (k, d) in delta.iter_mut().enumerate() {
            for c in 0..3 {
                let e = frame[k * 3 + c] - mean[k * 3 + c];
                *d += e * e;
            }
        }
    }
    delta.iter_mut().for_each(|d| *d /= FRAMES as f64);
    delta
}

/// Mean over training sequences of the per-sequence fluctuation.
pub fn compute_fluctuation(train: &[S3dlmSequence]) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("fluctuation needs at least one training sequence".into()));
    }
    let mut delta = vec![0.0; LANDMARKS];
    for seq in train {
        for (acc, d) in delta.iter_mut().zip(sequence_fluctuation(seq)) {
            *acc += d;
        }
    }
    delta.iter_mut().for_each(|d| *d /= train.len() as f64);
    Ok(delta)
}

/// Standardizing coefficients `alpha = 1/std`, `b = -mean/std` (population std).
///
/// For constant `delta` this returns `alpha = 1, b = -delta[0]`, which maps
/// every landmark to `p = 0.5`.
pub fn fit_prior_params(delta: &[f64]) -> (f64, f64) {
    if delta.is_empty() {
        return (1.0, 0.0);
    }
    let n = delta.len() as f64;
    let mean = delta.iter().sum::<f64>() / n;
    let std = (delta.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < DEGENERATE_STD * mean.abs().max(1.0) {
        (1.0, -delta[0])
    } else {
        (1.0 / std, -mean / std)
    }
}

pub fn compute_prior(delta: &[f64], alpha: f64, b: f64) -> Result<PriorVector> {
    PriorVector::new(delta.iter().map(|d| sigmoid(alpha * d + b)).collect())
}

/// `1 − p`, elementwise.
pub fn opposite_prior(p: &PriorVector) -> PriorVector {
    PriorVector {
        p: p.complement.clone(),
        complement: p.p.clone(),
    }
}

/// Fluctuation, standardization and prior in one call.
pub fn prior_from_training(train: &[S3dlmSequence]) -> Result<(FluctuationStats, PriorVector)> {
    let delta = compute_fluctuation(train)?;
    let (alpha, b) = fit_prior_params(&delta);
    let p = compute_prior(&delta, alpha, b)?;
    Ok((FluctuationStats { delta, alpha, b }, p))
}

/// Mean of `values` over each of the 10 lattice rows.
pub fn row_means(values: &[f64]) -> Vec<f64> {
    values
        .chunks(LIP_COLS)
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect()
}

/// `landmark_index,delta,p` rows.
pub fn to_csv(stats: &FluctuationStats, prior: &PriorVector) -> String {
    let mut s = String::from("landmark_index,delta,p\n");
    for (k, (d, p)) in stats.delta.iter().zip(prior.values()).enumerate() {
        let _ = writeln!(s, "{k},{d},{p}");
    }
    s
}

/// Heatmap of `values` on the 10 × 20 lip lattice; larger values are lighter.
///
/// `values` is min-max normalized for display. `comment` is embedded verbatim
/// in an XML comment (callers put their config echo there).
pub fn to_svg(values: &[f64], title: &str, comment: &str) -> String {
    const CELL: usize = 24;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let width = LIP_COLS * CELL;
    let height = LIP_ROWS * CELL + 28;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, "<!-- {} -->", comment.replace("--", "- -"));
    let _ = writeln!(s, r#"<text x="4" y="18" font-family="sans-serif" font-size="14">{title}</text>"#);
    for (k, v) in values.iter().enumerate().take(LIP_ROWS * LIP_COLS) {
        let (r, c) = (k / LIP_COLS, k % LIP_COLS);
        let level = (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8;
        let _ = writeln!(
            s,
            r##"<rect class="cell" x="{}" y="{}" width="{CELL}" height="{CELL}" fill="#{level:02x}{level:02x}{level:02x}"><title>landmark {k}: {v}</title></rect>"##,
            c * CELL,
            28 + r * CELL,
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn static_seq() -> S3dlmSequence {
        let data = (0..S3dlmSequence::LEN).map(|i| (i % 600) as f64 * 0.1).collect();
        S3dlmSequence::new(data, 0, 0).unwrap()
    }

    #[test]
    fn static_sequences_have_zero_fluctuation() {
        let delta = compute_fluctuation(&[static_seq(), static_seq()]).unwrap();
        assert!(delta.iter().all(|&d| d < 1e-20));
        assert!(compute_fluctuation(&[]).is_err());
    }

    #[test]
    fn oscillating_landmark_matches_scalar_variance() {
        let mut data = static_seq().data().to_vec();
        // Landmark 42 alternates ±1 mm in x around its mean.
        for t in 0..28 {
            data[S3dlmSequence::offset(t, 42, 0)] += if t % 2 == 0 { 1.0 } else { -1.0 };
        }
        let seq = S3dlmSequence::new(data, 0, 0).unwrap();
        let delta = compute_fluctuation(&[seq, static_seq()]).unwrap();
        // Variance 1 in the moving sequence, 0 in the static one.
        for (k, d) in delta.iter().enumerate() {
            if k == 42 {
                assert!((d - 0.5).abs() < 1e-12);
            } else {
                assert!(d.abs() < 1e-20);
            }
        }
    }

    #[test]
    fn standardization_by_hand() {
        let (a, b) = fit_prior_params(&[0.0, 2.0]);
        assert_eq!((a, b), (1.0, -1.0));
        let (a, b) = fit_prior_params(&[3.0; 200]);
        assert_eq!((a, b), (1.0, -3.0));
        let p = compute_prior(&[3.0; 200], a, b).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.5));
        let p = compute_prior(&[0.0; 200], 1.0, 0.0).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn opposite_prior_examples() {
        let p = PriorVector::new([0.9, 0.5].repeat(100)).unwrap();
        let q = opposite_prior(&p);
        assert!((q.values()[0] - 0.1).abs() < 1e-15);
        assert_eq!(q.values()[1], 0.5);
        assert!(PriorVector::new(vec![1.0; 200]).is_err());
    }

    #[test]
    fn svg_has_full_grid() {
        let svg = to_svg(&(0..200).map(|k| k as f64).collect::<Vec<_>>(), "p", "cfg");
        assert_eq!(svg.matches("<rect class=\"cell\"").count(), 200);
        assert!(svg.contains("#ffffff"));
        assert!(svg.contains("#000000"));
    }

    proptest! {
        #[test]
        fn prior_bounded_monotone_and_involutive(
            delta in proptest::collection::vec(0.0f64..50.0, 200)
        ) {
            let (a, b) = fit_prior_params(&delta);
            let std: Vec<f64> = delta.iter().map(|d| a * d + b).collect();
            prop_assert!((std.iter().sum::<f64>() / 200.0).abs() < 1e-12);
            let p = compute_prior(&delta, a, b).unwrap();
            for i in 0..200 {
                prop_assert!(p.values()[i] > 0.0 && p.values()[i] < 1.0);
                for j in 0..200 {
                    if delta[i] < delta[j] {
                        prop_assert!(p.values()[i] <= p.values()[j]);
                    }
                }
            }
            let back = opposite_prior(&opposite_prior(&p));
            for (x, y) in back.values().iter().zip(p.values()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in opposite_prior(&p).values().iter().zip(p.values()) {
                prop_assert!((x - (1.0 - y)).abs() < 1e-15);
            }
        }

        #[test]
        fn fluctuation_permutation_equivariant(seed in 0u64..1000) {
            let data: Vec<f64> = (0..S3dlmSequence::LEN)
                .map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f64) * 0.01)
                .collect();
            let seq = S3dlmSequence::new(data.clone(), 0, 0).unwrap();
            let perm: Vec<usize> = (0..200).map(|k| (k * 7 + seed as usize) % 200).collect();
            let mut pdata = vec![0.0; data.len()];
            for t in 0..28 {
                for (k, &src) in perm.iter().enumerate() {
                    for c in 0..3 {
                        pdata[S3dlmSequence::offset(t, k, c)] = data[S3dlmSequence::offset(t, src, c)];
                    }
                }
            }
            let pseq = S3dlmSequence::new(pdata, 0, 0).unwrap();
            let d = sequence_fluctuation(&seq);
            let pd = sequence_fluctuation(&pseq);
            for (k, &src) in perm.iter().enumerate() {
                prop_assert_eq!(pd[k], d[src]);
            }
        }
    }
}
