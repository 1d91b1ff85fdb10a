//! Subcommand bodies. Each returns the one-line stdout summary.

use std::fs;
use std::path::{Path, PathBuf};

use lip3d::data::{generate_synthetic, load_dataset, save_dataset, to_canonical_json, Dataset, SyntheticSpec};
use lip3d::harness::{self, predict, prepare, run_ablation_suite, TrainConfig};
use lip3d::model::{AblationMode, Model, ModelConfig};
use lip3d::pipeline::{default_lip_map, preprocess_dataset, sequences_to_dataset};
use lip3d::prior::{self, prior_from_training};
use lip3d::sequence::{LipIndexMap, S3dlmSequence};
use lip3d::stats::{verify_decomposition, IndependenceReport, MotionVarianceTable};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{self, AblateConfig, EvalConfig, PlotPriorConfig, PreprocessConfig, StatsConfig, Subset, TrainRunConfig};
use crate::{CliError, Common};

type Outcome = Result<String, CliError>;

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn progress(common: &Common, msg: impl AsRef<str>) {
    if common.verbose {
        eprintln!("{}", msg.as_ref());
    }
}

/// `--out`, created if needed; its parent must already exist.
fn out_dir(common: &Common) -> Result<PathBuf, CliError> {
    let out = common
        .out
        .clone()
        .ok_or_else(|| CliError::Config("--out is required".into()))?;
    check_parent(&out)?;
    fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

fn check_parent(out: &Path) -> Result<(), CliError> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if parent.is_dir() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "parent directory of --out {} does not exist",
            out.display()
        )))
    }
}

fn load_data(common: &Common, path: &Path) -> Result<Dataset, CliError> {
    if !path.is_dir() {
        return Err(CliError::Config(format!("dataset directory {} does not exist", path.display())));
    }
    progress(common, format!("loading {}", path.display()));
    Ok(load_dataset(path)?)
}

fn lip_map(ds: &Dataset) -> Result<LipIndexMap, CliError> {
    default_lip_map(ds).map_err(|e| CliError::Config(format!("{e}; run `lip3d preprocess --index-map` first")))
}

fn write(path: &Path, content: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Compact single-line JSON with sorted keys.
fn compact(v: &impl Serialize) -> String {
    serde_json::to_value(v).and_then(|v| serde_json::to_string(&v)).expect("serializable")
}

/// CSV body prefixed with a `# config:` comment line.
fn echoed_csv(echo: &Value, body: &str) -> String {
    format!("# config: {}\n{body}", compact(echo))
}

fn echo(command: &str, data: Option<&Path>, config: &impl Serialize) -> Value {
    json!({
        "command": command,
        "data": data.map(|p| p.display().to_string()),
        "config": config,
    })
}

fn with_echo(echo: &Value, key: &str, payload: &impl Serialize) -> Value {
    let mut v = echo.clone();
    v[key] = serde_json::to_value(payload).expect("serializable");
    v
}

fn resolve_model(model: Option<ModelConfig>, ds: &Dataset) -> Result<ModelConfig, CliError> {
    let model = model.unwrap_or_else(|| ModelConfig::desk(ds.manifest.n_speakers, AblationMode::RfmPrior));
    model.validate().map_err(config_err)?;
    if model.num_speakers < ds.manifest.n_speakers {
        return Err(CliError::Config(format!(
            "model has {} classes but the dataset has {} speakers",
            model.num_speakers, ds.manifest.n_speakers
        )));
    }
    Ok(model)
}

fn check_split(ds: &Dataset, n_train: usize) -> Result<(), CliError> {
    let n = ds.manifest.n_sentences;
    if n_train == 0 || n_train >= n {
        return Err(CliError::Config(format!(
            "n_train {n_train} must lie in [1, {n}) for a dataset with {n} sentences per speaker"
        )));
    }
    Ok(())
}

pub fn gen(common: &Common) -> Outcome {
    let mut spec: SyntheticSpec = config::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(config_err)?;
    let out = common
        .out
        .clone()
        .ok_or_else(|| CliError::Config("--out is required".into()))?;
    check_parent(&out)?;
    progress(common, "generating synthetic corpus");
    let ds = generate_synthetic(&spec)?;
    save_dataset(&ds, &out)?;
    Ok(format!(
        "gen: {} utterances ({} speakers x {} sentences, {} frames each) -> {}",
        ds.utterances.len(),
        spec.n_speakers,
        spec.n_sentences,
        spec.frames_per_utterance,
        out.display()
    ))
}

pub fn preprocess(common: &Common, data: &Path, index_map: Option<PathBuf>) -> Outcome {
    let mut cfg: PreprocessConfig = config::load(common.config.as_deref())?;
    if index_map.is_some() {
        cfg.index_map = index_map;
    }
    let ds = load_data(common, data)?;
    let map = match &cfg.index_map {
        Some(p) => LipIndexMap::load(p).map_err(config_err)?,
        None => lip_map(&ds)?,
    };
    if map.max_index() >= ds.manifest.point_count {
        return Err(CliError::Config(format!(
            "index map refers to point {} but frames have {} points",
            map.max_index(),
            ds.manifest.point_count
        )));
    }
    let out = out_dir(common)?;
    progress(common, "correcting posture");
    let (seqs, log) = preprocess_dataset(&ds, &map);
    for w in &log.warnings {
        eprintln!("warning: {w}");
    }
    for s in &log.skipped {
        eprintln!(
            "warning: skipped {}: {}",
            Dataset::file_stem(s.speaker_id, s.sentence_id),
            s.reason
        );
    }
    save_dataset(&sequences_to_dataset(&seqs, &ds.manifest), &out)?;
    let e = echo("preprocess", Some(data), &cfg);
    let mut doc = with_echo(&e, "log", &log);
    doc["source_manifest"] = serde_json::to_value(&ds.manifest).expect("serializable");
    write(&out.join("preprocess_log.json"), to_canonical_json(&doc))?;
    Ok(format!(
        "preprocess: {} sequences written, {} skipped, {} padded, max removed angle {:.3e} rad -> {}",
        seqs.len(),
        log.skipped.len(),
        log.warnings.len(),
        log.max_abs_angle(),
        out.display()
    ))
}

pub fn train(common: &Common, data: &Path) -> Outcome {
    let mut cfg: TrainRunConfig = config::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    cfg.train.validate().map_err(config_err)?;
    let ds = load_data(common, data)?;
    let model_cfg = resolve_model(cfg.model.take(), &ds)?;
    check_split(&ds, cfg.train.n_train)?;
    let resolved = TrainRunConfig {
        model: Some(model_cfg.clone()),
        train: cfg.train.clone(),
    };
    let out = out_dir(common)?;
    let prepared = prepare(&ds, &lip_map(&ds)?, &cfg.train)?;
    progress(
        common,
        format!(
            "training {} on {} sequences for {} steps",
            model_cfg.ablation_mode,
            prepared.train.len(),
            cfg.train.max_steps
        ),
    );
    let (model, report) = harness::train(&model_cfg, &prepared.train, &prepared.test, &cfg.train)?;
    progress(common, format!("finished in {:.1} s", report.wall_time_s));
    model.save(&out.join("model.ckpt"))?;
    let e = echo("train", Some(data), &resolved);
    write(&out.join("report.json"), to_canonical_json(&with_echo(&e, "report", &report)))?;
    let mut losses = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        losses.push_str(&format!("{i},{l:?}\n"));
    }
    write(&out.join("losses.csv"), echoed_csv(&e, &losses))?;
    Ok(format!(
        "train: {} {} steps, final loss {:.4}, train accuracy {:.4}, test accuracy {} -> {}",
        model_cfg.ablation_mode,
        report.losses.len(),
        report.losses.last().copied().unwrap_or(f64::NAN),
        report.train_accuracy,
        report.test_accuracy.map_or("n/a".into(), |a| format!("{a:.4}")),
        out.display()
    ))
}

pub fn eval(common: &Common, data: &Path, model_path: &Path) -> Outcome {
    let mut cfg: EvalConfig = config::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if !model_path.is_file() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", model_path.display())));
    }
    let model = Model::load(model_path)?;
    let ds = load_data(common, data)?;
    check_split(&ds, cfg.n_train)?;
    if model.config().num_speakers < ds.manifest.n_speakers {
        return Err(CliError::Config(format!(
            "checkpoint has {} classes but the dataset has {} speakers",
            model.config().num_speakers,
            ds.manifest.n_speakers
        )));
    }
    let out = out_dir(common)?;
    let split_cfg = TrainConfig {
        split_kind: cfg.split_kind,
        n_train: cfg.n_train,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let p = prepare(&ds, &lip_map(&ds)?, &split_cfg)?;
    let seqs: Vec<S3dlmSequence> = match cfg.subset {
        Subset::Train => p.train,
        Subset::Test => p.test,
        Subset::All => p.train.into_iter().chain(p.test).collect(),
    };
    if seqs.is_empty() {
        return Err(CliError::Config("the selected subset is empty".into()));
    }
    let predicted = predict(&model, &seqs)?;
    let hits = predicted.iter().zip(&seqs).filter(|(p, s)| **p == s.speaker_id).count();
    let accuracy = hits as f64 / seqs.len() as f64;
    let mut csv = String::from("speaker_id,sentence_id,predicted\n");
    for (s, p) in seqs.iter().zip(&predicted) {
        csv.push_str(&format!("{},{},{p}\n", s.speaker_id, s.sentence_id));
    }
    let e = echo("eval", Some(data), &cfg);
    let mut doc = with_echo(&e, "model_config", model.config());
    doc["checkpoint"] = json!(model_path.display().to_string());
    doc["accuracy"] = json!(accuracy);
    doc["n"] = json!(seqs.len());
    write(&out.join("eval.json"), to_canonical_json(&doc))?;
    write(&out.join("predictions.csv"), echoed_csv(&e, &csv))?;
    Ok(format!(
        "eval: accuracy {accuracy:.4} ({hits}/{}) on the {} subset -> {}",
        seqs.len(),
        cfg.subset.name(),
        out.display()
    ))
}

pub fn ablate(common: &Common, data: &Path) -> Outcome {
    let mut cfg: AblateConfig = config::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if cfg.seeds.is_empty() {
        return Err(CliError::Config("seeds must not be empty".into()));
    }
    cfg.train.validate().map_err(config_err)?;
    let ds = load_data(common, data)?;
    let model_cfg = resolve_model(cfg.model.take(), &ds)?;
    check_split(&ds, cfg.train.n_train)?;
    let resolved = AblateConfig {
        model: Some(model_cfg.clone()),
        ..cfg
    };
    let out = out_dir(common)?;
    progress(
        common,
        format!("ablation: 4 modes x 2 splits x {} seed(s)", resolved.seeds.len()),
    );
    let table = run_ablation_suite(&ds, &lip_map(&ds)?, &model_cfg, &resolved.train, &resolved.seeds)?;
    let e = echo("ablate", Some(data), &resolved);
    write(&out.join("ablation.json"), to_canonical_json(&with_echo(&e, "table", &table)))?;
    write(&out.join("ablation.csv"), echoed_csv(&e, &table.to_csv()))?;
    write(
        &out.join("ablation.txt"),
        format!("# config: {}\n{}", compact(&e), table.to_text()),
    )?;
    let status = |ok: bool| if ok { "holds" } else { "FAILS" };
    Ok(format!(
        "ablate: {} seed(s); rfm_prior >= rfm_prior_opposed {} (text-independent), {} (text-dependent) -> {}",
        resolved.seeds.len(),
        status(table.prior_beats_opposed[0]),
        status(table.prior_beats_opposed[1]),
        out.display()
    ))
}

pub fn stats(common: &Common, data: &Path) -> Outcome {
    let cfg: StatsConfig = config::load(common.config.as_deref())?;
    let ds = load_data(common, data)?;
    let (m, n) = (ds.manifest.n_speakers, ds.manifest.n_sentences);
    if cfg.text_group_size == 0 || cfg.speaker_group_size == 0 {
        return Err(CliError::Config("group sizes must be positive".into()));
    }
    let n_used = cfg.n_texts_used.unwrap_or(n / cfg.text_group_size * cfg.text_group_size);
    if n_used == 0 || n_used > n || !n_used.is_multiple_of(cfg.text_group_size) {
        return Err(CliError::Config(format!(
            "n_texts_used {n_used} must be a positive multiple of text_group_size {} and at most {n}",
            cfg.text_group_size
        )));
    }
    if m < 2 {
        return Err(CliError::Config("the speaker analysis needs at least 2 speakers".into()));
    }
    let out = out_dir(common)?;
    progress(common, "correcting posture");
    let (seqs, log) = preprocess_dataset(&ds, &lip_map(&ds)?);
    if !log.skipped.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} utterance(s) could not be corrected; the variance table needs all of them",
            log.skipped.len()
        )));
    }
    let table = MotionVarianceTable::from_sequences(&seqs, m, n)?;
    let report = IndependenceReport::new(&table, cfg.text_group_size, n_used, cfg.speaker_group_size)?;
    let decomposition = match &ds.manifest.ground_truth {
        Some(_) => Some(verify_decomposition(&ds)?),
        None => None,
    };
    let resolved = StatsConfig {
        n_texts_used: Some(n_used),
        ..cfg
    };
    let e = echo("stats", Some(data), &resolved);
    let mut doc = with_echo(&e, "report", &report);
    doc["decomposition"] = serde_json::to_value(&decomposition).expect("serializable");
    write(&out.join("stats.json"), to_canonical_json(&doc))?;
    write(&out.join("table.csv"), echoed_csv(&e, &report.to_csv()))?;
    write(&out.join("table.txt"), format!("# config: {}\n{}", compact(&e), report.to_text()))?;
    let mut var = String::from("speaker_id,sentence_id,motion_variance\n");
    for i in 0..m {
        for j in 0..n {
            var.push_str(&format!("{i},{j},{:?}\n", table.get(i, j)));
        }
    }
    write(&out.join("variances.csv"), echoed_csv(&e, &var))?;
    let decomp = decomposition.map_or("no ground truth".into(), |d| format!("decomposition max error {:.3e}", d.max_error));
    Ok(format!(
        "stats: std(D_t) {:.4e}, std(D_s) {:.4e}, ratio {:.3}; {decomp} -> {}",
        report.text.std_of_deviations,
        report.speaker.std_of_deviations,
        report.ratio,
        out.display()
    ))
}

pub fn plot_prior(common: &Common, data: &Path, model_path: Option<&Path>) -> Outcome {
    let mut cfg: PlotPriorConfig = config::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let ds = load_data(common, data)?;
    check_split(&ds, cfg.n_train)?;
    let model = model_path.map(Model::load).transpose()?;
    if let Some(m) = &model {
        if m.feedback.is_none() {
            return Err(CliError::Config("checkpoint is a baseline model without a gate".into()));
        }
    }
    let out = out_dir(common)?;
    let split_cfg = TrainConfig {
        split_kind: cfg.split_kind,
        n_train: cfg.n_train,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let p = prepare(&ds, &lip_map(&ds)?, &split_cfg)?;
    let (fluct, prior_vec) = prior_from_training(&p.train)?;
    let e = echo("plot-prior", Some(data), &cfg);
    let comment = compact(&e);
    write(
        &out.join("prior.svg"),
        prior::to_svg(prior_vec.values(), "fluctuation prior p (lighter = larger)", &comment),
    )?;
    write(&out.join("prior.csv"), echoed_csv(&e, &prior::to_csv(&fluct, &prior_vec)))?;
    let mut doc = with_echo(&e, "fluctuation", &fluct);
    doc["p"] = json!(prior_vec.values());
    write(&out.join("prior.json"), to_canonical_json(&doc))?;
    if let Some(theta) = model.as_ref().and_then(|m| m.feedback.as_ref()) {
        write(
            &out.join("theta.svg"),
            prior::to_svg(&theta.theta, "learned gate theta (lighter = larger)", &comment),
        )?;
    }
    let rows = prior::row_means(prior_vec.values());
    let (hi, lo) = rows.iter().enumerate().fold((0, 0), |(hi, lo), (r, v)| {
        (if *v > rows[hi] { r } else { hi }, if *v < rows[lo] { r } else { lo })
    });
    Ok(format!(
        "plot-prior: {} training sequences; highest mean p in lip row {hi}, lowest in row {lo} -> {}",
        p.train.len(),
        out.display()
    ))
}
