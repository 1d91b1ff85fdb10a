//! Training, evaluation and the four-way ablation protocol.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{split_text_dependent, split_text_independent, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{init_feedback, update_feedback, AblationMode, InputNorm, Model, ModelConfig};
use crate::pipeline::{preprocess_dataset, PreprocessLog};
use crate::prior::{prior_from_training, PriorVector};
use crate::rng::{self, streams};
use crate::sequence::{LipIndexMap, S3dlmSequence};
use crate::stats::{mean, population_std};
use crate::tensor::{lr_decay, AdamConfig, AdamState, Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    TextIndependent,
    TextDependent,
}

impl SplitKind {
    pub const ALL: [SplitKind; 2] = [SplitKind::TextIndependent, SplitKind::TextDependent];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::TextIndependent => "text_independent",
            SplitKind::TextDependent => "text_dependent",
        }
    }
}

/// How the feedback gate is updated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum RfmUpdate {
    /// Same Adam optimizer as the weights.
    Adam,
    /// Plain gradient descent with its own rate.
    Sgd { lr: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub seed: u64,
    pub split_kind: SplitKind,
    /// Training sentences per speaker.
    pub n_train: usize,
    pub rfm_update: RfmUpdate,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            batch_size: 16,
            max_steps: 300,
            decay_every: 200,
            decay_factor: 0.3,
            seed: 0,
            split_kind: SplitKind::TextIndependent,
            n_train: 24,
            rfm_update: RfmUpdate::Adam,
        }
    }
}

impl TrainConfig {
    /// Hyperparameters of the full-size corpus run (68 speakers, 146 sentences).
    pub fn full_scale() -> Self {
        Self {
            lr: 0.01,
            batch_size: 100,
            max_steps: 1500,
            decay_every: 200,
            decay_factor: 0.3,
            seed: 0,
            split_kind: SplitKind::TextIndependent,
            n_train: 120,
            rfm_update: RfmUpdate::Adam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.batch_size == 0 || self.max_steps == 0 || self.decay_every == 0 || self.n_train == 0 {
            return bad("batch_size, max_steps, decay_every and n_train must be positive".into());
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor {} outside (0, 1]", self.decay_factor));
        }
        if let RfmUpdate::Sgd { lr } = self.rfm_update {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("rfm_update lr {lr} must be positive"));
            }
        }
        Ok(())
    }
}

/// Everything a run produced. Wall time is kept out of the serialized form
/// so identical runs give identical JSON.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub parameter_count: usize,
    pub losses: Vec<f64>,
    pub final_lr: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub theta_init: Option<Vec<f64>>,
    pub theta_final: Option<Vec<f64>>,
    /// Prior used to initialize the gate, computed from the training split.
    pub prior: Option<Vec<f64>>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Anything that maps sequences to class scores.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn logits(&self, seqs: &[&S3dlmSequence]) -> Result<Tensor>;
}

impl Classifier for Model {
    fn num_classes(&self) -> usize {
        self.config().num_speakers
    }

    fn logits(&self, seqs: &[&S3dlmSequence]) -> Result<Tensor> {
        Model::logits(self, seqs)
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_BATCH: usize = 32;

pub fn predict<C: Classifier + ?Sized>(model: &C, seqs: &[S3dlmSequence]) -> Result<Vec<usize>> {
    let c = model.num_classes();
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EVAL_BATCH) {
        let refs: Vec<&S3dlmSequence> = chunk.iter().collect();
        let logits = model.logits(&refs)?;
        out.extend(logits.data().chunks(c).map(argmax));
    }
    Ok(out)
}

/// Fraction of sequences whose predicted class is their speaker id.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, seqs: &[S3dlmSequence]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty split".into()));
    }
    check_labels(seqs, model.num_classes())?;
    let pred = predict(model, seqs)?;
    let hits = pred.iter().zip(seqs).filter(|(p, s)| **p == s.speaker_id).count();
    Ok(hits as f64 / seqs.len() as f64)
}

fn check_labels(seqs: &[S3dlmSequence], classes: usize) -> Result<()> {
    match seqs.iter().find(|s| s.speaker_id >= classes) {
        Some(s) => Err(Error::LabelOutOfRange {
            label: s.speaker_id,
            classes,
        }),
        None => Ok(()),
    }
}

/// Preprocessed sequences divided into train and test.
#[derive(Clone, Debug)]
pub struct PreparedSplit {
    pub train: Vec<S3dlmSequence>,
    pub test: Vec<S3dlmSequence>,
    pub log: PreprocessLog,
}

pub fn make_split(ds: &Dataset, kind: SplitKind, seed: u64, n_train: usize) -> Result<Split> {
    match kind {
        SplitKind::TextIndependent => split_text_independent(ds, n_train),
        SplitKind::TextDependent => split_text_dependent(ds, seed, n_train),
    }
}

/// Posture-corrects every utterance, then divides by the configured split.
pub fn prepare(ds: &Dataset, map: &LipIndexMap, cfg: &TrainConfig) -> Result<PreparedSplit> {
    let split = make_split(ds, cfg.split_kind, cfg.seed, cfg.n_train)?;
    let (seqs, log) = preprocess_dataset(ds, map);
    Ok(divide(ds, &split, seqs, log))
}

fn divide(ds: &Dataset, split: &Split, seqs: Vec<S3dlmSequence>, log: PreprocessLog) -> PreparedSplit {
    let key = |i: &usize| (ds.utterances[*i].speaker_id, ds.utterances[*i].sentence_id);
    let train_keys: BTreeSet<_> = split.train.iter().map(key).collect();
    let (train, test) = seqs
        .into_iter()
        .partition(|s| train_keys.contains(&(s.speaker_id, s.sentence_id)));
    PreparedSplit { train, test, log }
}

const THETA_SLOT: &str = "theta";

/// Names and sizes of the tensors Adam updates: every weight, then the gate
/// when it exists and is Adam-driven.
pub fn optimizer_slots(model: &Model, update: RfmUpdate) -> Vec<(String, usize)> {
    let mut slots: Vec<(String, usize)> = model.params().iter().map(|p| (p.name.clone(), p.value.len())).collect();
    if let (Some(f), RfmUpdate::Adam) = (&model.feedback, update) {
        slots.push((THETA_SLOT.into(), f.theta.len()));
    }
    slots
}

fn l2(gs: &[Vec<f64>]) -> f64 {
    gs.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Trains a fresh model. The prior, when the mode needs one, is computed
/// from `train` alone.
pub fn train(
    model_cfg: &ModelConfig,
    train: &[S3dlmSequence],
    test: &[S3dlmSequence],
    cfg: &TrainConfig,
) -> Result<(Model, RunReport)> {
    let started = Instant::now();
    cfg.validate()?;
    model_cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    check_labels(train, model_cfg.num_speakers)?;
    check_labels(test, model_cfg.num_speakers)?;

    let mode = model_cfg.ablation_mode;
    let prior: Option<PriorVector> = if mode.needs_prior() {
        Some(prior_from_training(train)?.1)
    } else {
        None
    };
    let feedback = init_feedback(mode, prior.as_ref())?;
    let theta_init = feedback.as_ref().map(|f| f.theta.clone());
    let mut model = Model::new(model_cfg.clone(), feedback, cfg.seed)?;
    model.set_input_norm(InputNorm::fit(&train.iter().collect::<Vec<_>>()))?;

    let slots = optimizer_slots(&model, cfg.rfm_update);
    let theta_in_adam = slots.last().is_some_and(|(name, _)| name == THETA_SLOT);
    let sizes: Vec<usize> = slots.iter().map(|(_, n)| *n).collect();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &sizes,
    );

    let mut shuffle = rng::stream(cfg.seed, streams::SHUFFLE);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(cfg.max_steps);

    for step in 0..cfg.max_steps {
        if cursor >= order.len() {
            order = (0..train.len()).collect();
            order.shuffle(&mut shuffle);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch: Vec<&S3dlmSequence> = order[cursor..end].iter().map(|&i| &train[i]).collect();
        cursor = end;
        let labels: Vec<usize> = batch.iter().map(|s| s.speaker_id).collect();

        let mut g = Graph::new();
        let x = g.input(model.input(&batch));
        let bound = model.bind(&mut g, x, true)?;
        let loss = g.softmax_cross_entropy(bound.logits, &labels)?;
        g.backward(loss)?;
        let loss_value = g.value(loss).item();

        let grad_of = |v| g.grad(v).map_or_else(|| vec![0.0; g.value(v).len()], <[f64]>::to_vec);
        let mut grads: Vec<Vec<f64>> = bound.params.iter().map(|&v| grad_of(v)).collect();
        let theta_grad = bound.theta.map(grad_of);
        let norm = l2(&grads).hypot(theta_grad.as_deref().map_or(0.0, |t| l2(&[t.to_vec()])));
        if !loss_value.is_finite() || !norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                lr: adam.lr,
                grad_norm: norm,
            });
        }
        losses.push(loss_value);

        let theta_sgd = match (theta_grad, theta_in_adam) {
            (Some(t), true) => {
                grads.push(t);
                None
            }
            (t, _) => t,
        };
        {
            let (mut bufs, feedback) = model.buffers_mut();
            if theta_in_adam {
                bufs.push(&mut feedback.expect("rfm mode has a gate").theta);
            }
            let grefs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut bufs, &grefs)?;
        }
        if let (Some(tg), RfmUpdate::Sgd { lr }) = (theta_sgd, cfg.rfm_update) {
            update_feedback(model.feedback.as_mut(), &tg, lr)?;
        }
        lr_decay(&mut adam, step + 1, cfg.decay_every, cfg.decay_factor)?;
    }

    let train_accuracy = evaluate(&model, train)?;
    let test_accuracy = if test.is_empty() {
        None
    } else {
        Some(evaluate(&model, test)?)
    };
    let report = RunReport {
        model: model_cfg.clone(),
        train: cfg.clone(),
        n_train: train.len(),
        n_test: test.len(),
        parameter_count: model.parameter_count(),
        losses,
        final_lr: adam.lr,
        train_accuracy,
        test_accuracy,
        theta_init,
        theta_final: model.feedback.as_ref().map(|f| f.theta.clone()),
        prior: prior.map(|p| p.as_vec()),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationCell {
    pub runs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl AblationCell {
    fn new(runs: Vec<f64>) -> Self {
        Self {
            mean: mean(&runs),
            std: population_std(&runs),
            runs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub text_independent: AblationCell,
    pub text_dependent: AblationCell,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    /// `mean(rfm_prior) >= mean(rfm_prior_opposed)` per split kind.
    pub prior_beats_opposed: [bool; 2],
}

impl AblationTable {
    pub fn row(&self, mode: AblationMode) -> &AblationRow {
        self.rows.iter().find(|r| r.mode == mode).expect("all modes present")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "mode,text_independent_mean,text_independent_std,text_dependent_mean,text_dependent_std\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?}",
                r.mode, r.text_independent.mean, r.text_independent.std, r.text_dependent.mean, r.text_dependent.std
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# test accuracy, mean ± population std over seeds {:?}\n{:<20}{:>22}{:>22}\n",
            self.seeds, "mode", "text-independent", "text-dependent"
        );
        for r in &self.rows {
            let cell = |c: &AblationCell| format!("{:.2}% ± {:.2}", 100.0 * c.mean, 100.0 * c.std);
            let _ = writeln!(
                s,
                "{:<20}{:>22}{:>22}",
                r.mode.name(),
                cell(&r.text_independent),
                cell(&r.text_dependent)
            );
        }
        for (kind, ok) in SplitKind::ALL.iter().zip(self.prior_beats_opposed) {
            let _ = writeln!(
                s,
                "{}: rfm_prior >= rfm_prior_opposed {}",
                kind.name(),
                if ok { "holds" } else { "FAILS" }
            );
        }
        s
    }
}

/// Trains every mode for every seed and split kind. The seed drives the
/// text-dependent split, weight initialization and shuffling, so the four
/// modes of one seed share initial weights.
pub fn run_ablation_suite(
    ds: &Dataset,
    map: &LipIndexMap,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one seed".into()));
    }
    let (seqs, log) = preprocess_dataset(ds, map);
    let mut acc = vec![[Vec::new(), Vec::new()]; AblationMode::ALL.len()];
    for (k, kind) in SplitKind::ALL.iter().enumerate() {
        for &seed in seeds {
            let split = make_split(ds, *kind, seed, train_cfg.n_train)?;
            let prepared = divide(ds, &split, seqs.clone(), log.clone());
            for (m, mode) in AblationMode::ALL.iter().enumerate() {
                let cfg = TrainConfig {
                    seed,
                    split_kind: *kind,
                    ..train_cfg.clone()
                };
                let mcfg = ModelConfig {
                    ablation_mode: *mode,
                    ..model_cfg.clone()
                };
                let (_, report) = train(&mcfg, &prepared.train, &prepared.test, &cfg)?;
                acc[m][k].push(report.test_accuracy.ok_or_else(|| {
                    Error::InvalidArgument("ablation split produced an empty test set".into())
                })?);
            }
        }
    }
    let rows: Vec<AblationRow> = AblationMode::ALL
        .iter()
        .zip(acc)
        .map(|(mode, [ti, td])| AblationRow {
            mode: *mode,
            text_independent: AblationCell::new(ti),
            text_dependent: AblationCell::new(td),
        })
        .collect();
    let find = |m| rows.iter().find(|r| r.mode == m).expect("all modes present");
    let (p, o) = (find(AblationMode::RfmPrior), find(AblationMode::RfmPriorOpposed));
    let prior_beats_opposed = [
        p.text_independent.mean >= o.text_independent.mean,
        p.text_dependent.mean >= o.text_dependent.mean,
    ];
    Ok(AblationTable {
        model: model_cfg.clone(),
        train: train_cfg.clone(),
        seeds: seeds.to_vec(),
        rows,
        prior_beats_opposed,
    })
}
