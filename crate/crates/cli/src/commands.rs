use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use bbscore::bridge::{
    bbscore, bbscore_windowed, floor_sigma_sq, simulate_corpus, CorpusSimConfig,
};
use bbscore::classifier::{
    extract_features, llm_detect, pairwise_discrimination_accuracy, train_pairwise,
    DetectionReport, FeatureVector, Mlp3Config, PairMode, SigmaProfile, TestCorpus,
};
use bbscore::harness::{make_shuffle_dataset, DatasetStats, ShuffleDataset};
use bbscore::metrics::{
    evaluate_shuffle_task, sigma_sweep, trajectory_profile, DocumentScores, ScoreReport,
    SigmaSweep, TrajectoryProfile,
};
use bbscore::rng::{derive_seed, rng_from_seed};
use bbscore::storage::{
    load_encoder, load_mlp3, read_corpus, save_encoder, save_mlp3, write_corpus,
};
use bbscore::{estimate_sigma_sq_corpus, train_encoder, LatentSequence, Sequence, TrainConfig};

use crate::error::CliError;
use crate::settings::*;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

/// Digests of every file a run read, keyed by role.
#[derive(Debug, Default, Serialize)]
struct Artifacts(BTreeMap<String, Artifact>);

impl Artifacts {
    fn add(&mut self, role: impl Into<String>, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.0.insert(
            role.into(),
            Artifact {
                path: path.display().to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            },
        );
        Ok(())
    }
}

pub struct Context {
    pub config: ConfigFile,
    pub global: GlobalSettings,
}

impl Context {
    fn config_block(
        &self,
        command: &str,
        settings: &impl Serialize,
        artifacts: &Artifacts,
    ) -> Value {
        json!({
            "command": command,
            "settings": settings,
            "runtime": self.global,
            "artifacts": artifacts,
        })
    }

    fn read(&self, path: &Path) -> Result<Vec<Sequence>> {
        read_corpus(path, self.global.format).map_err(|e| CliError::input(path, e))
    }

    /// Reads a corpus and, when an encoder is given, maps it to latents.
    fn latents(
        &self,
        input: &Path,
        encoder: Option<&Path>,
        artifacts: &mut Artifacts,
        role: &str,
    ) -> Result<Vec<LatentSequence>> {
        artifacts.add(role, input)?;
        let corpus = self.read(input)?;
        match encoder {
            None => Ok(corpus),
            Some(path) => {
                artifacts.add("encoder", path)?;
                let enc = load_encoder(path).map_err(|e| CliError::input(path, e))?;
                Ok(enc.encode_corpus(&corpus)?)
            }
        }
    }
}

fn emit(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(bbscore::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

/// Where the diffusion coefficient of a scoring run came from.
#[derive(Debug, Clone, Serialize)]
struct SigmaChoice {
    /// Value scores were computed with.
    sigma_sq: f64,
    /// Value before the floor was applied.
    estimate: f64,
    source: &'static str,
    floored: bool,
}

fn choose_sigma(
    sigma_sq: Option<f64>,
    sigma_file: Option<&Path>,
    corpus: Option<&[LatentSequence]>,
    artifacts: &mut Artifacts,
) -> Result<SigmaChoice> {
    let (estimate, source) = if let Some(v) = sigma_sq {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Usage(format!(
                "--sigma-sq must be positive, got {v}"
            )));
        }
        (v, "flag")
    } else if let Some(path) = sigma_file {
        artifacts.add("sigma_file", path)?;
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| CliError::input(path, e.into()))?;
        let v = value
            .get("sigma_sq")
            .and_then(Value::as_f64)
            .ok_or_else(|| {
                CliError::input(
                    path,
                    bbscore::Error::InvalidConfig("no numeric `sigma_sq` field".into()),
                )
            })?;
        (v, "file")
    } else if let Some(corpus) = corpus {
        (estimate_sigma_sq_corpus(corpus)?.sigma_sq, "input")
    } else {
        return Err(CliError::Usage(
            "a diffusion coefficient is required: pass --sigma-sq or --sigma-file".into(),
        ));
    };
    if !(estimate >= 0.0 && estimate.is_finite()) {
        return Err(bbscore::Error::Numeric(format!(
            "diffusion coefficient {estimate} is unusable"
        ))
        .into());
    }
    let (used, floored) = floor_sigma_sq(estimate);
    if floored {
        log::warn!("diffusion coefficient {estimate} raised to the floor {used}");
    }
    Ok(SigmaChoice {
        sigma_sq: used,
        estimate,
        source,
        floored,
    })
}

fn shuffle_dataset(
    latents: &[LatentSequence],
    task: &ShuffleTaskSettings,
) -> Result<ShuffleDataset> {
    let ds = make_shuffle_dataset(latents, task.kind, task.param(), task.n_shuffles, task.seed)?;
    for f in &ds.failures {
        log::warn!("{}: {}", f.doc_id, f.reason);
    }
    if let Some(path) = &task.manifest {
        let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut writer = std::io::BufWriter::new(file);
        ds.write_manifest(&mut writer)?;
        writer.flush().map_err(|e| CliError::io(path, e))?;
    }
    Ok(ds)
}

pub fn simulate(ctx: &Context, s: &SimulateSettings) -> Result<()> {
    s.validate()?;
    let output = required(&s.output, "output")?;
    let mut docs = simulate_corpus(&CorpusSimConfig {
        docs: s.docs,
        len: s.len,
        dim: s.dim,
        sigma_sq: s.sigma_sq,
        seed: s.seed,
        endpoint_scale: s.endpoint_scale,
    })?;
    if let Some(out_dim) = s.map_dim {
        let mut rng = rng_from_seed(derive_seed(s.seed, u64::MAX - 1));
        let scale = 1.0 / (s.dim as f64).sqrt();
        let map: Vec<Vec<f64>> = (0..out_dim)
            .map(|_| {
                (0..s.dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * scale
                    })
                    .collect()
            })
            .collect();
        docs = docs
            .iter()
            .map(|d| {
                let rows = d
                    .rows()
                    .map(|r| {
                        map.iter()
                            .map(|m| m.iter().zip(r).map(|(a, b)| a * b).sum())
                            .collect()
                    })
                    .collect();
                Sequence::from_rows(d.doc_id(), rows)
            })
            .collect::<bbscore::Result<_>>()?;
    }
    write_corpus(&docs, output, ctx.global.format).map_err(|e| CliError::input(output, e))?;
    log::info!("wrote {} documents to {}", docs.len(), output.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    config: Value,
    encoder: Artifact,
    loss_trace: Vec<f64>,
}

pub fn train(ctx: &Context, s: &TrainEncoderSettings) -> Result<()> {
    s.validate()?;
    let (input, output) = (required(&s.input, "input")?, required(&s.output, "output")?);
    let mut artifacts = Artifacts::default();
    artifacts.add("input", input)?;
    let corpus = ctx.read(input)?;
    let cfg = TrainConfig {
        learning_rate: s.learning_rate,
        momentum: s.momentum,
        batch_size: s.batch_size,
        epochs: s.epochs,
        seed: s.seed,
        hidden_dim: s.hidden_dim,
        output_dim: s.output_dim,
        activation: s.activation,
        negatives: s.negatives,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = train_encoder(&corpus, &cfg)?;
    save_encoder(&out.encoder, output).map_err(|e| CliError::input(output, e))?;
    if let Some(last) = out.loss_trace.last() {
        log::info!("final epoch loss {last}");
    }
    if let Some(report) = &s.report {
        let mut written = Artifacts::default();
        written.add("encoder", output)?;
        let encoder = written.0.remove("encoder").expect("just added");
        emit(
            Some(report),
            &TrainReport {
                config: ctx.config_block("train-encoder", s, &artifacts),
                encoder,
                loss_trace: out.loss_trace,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DocEstimate {
    doc_id: String,
    sigma_sq: f64,
}

#[derive(Serialize)]
struct EstimateReport {
    config: Value,
    sigma_sq: f64,
    /// Set when scoring would have to raise `sigma_sq` to the floor.
    degenerate: bool,
    n_docs: usize,
    dim: usize,
    per_doc: Vec<DocEstimate>,
}

pub fn estimate(ctx: &Context, s: &EstimateSettings) -> Result<()> {
    let input = required(&s.input, "input")?;
    let mut artifacts = Artifacts::default();
    let latents = ctx.latents(input, s.encoder.as_deref(), &mut artifacts, "input")?;
    let est = estimate_sigma_sq_corpus(&latents)?;
    let report = EstimateReport {
        config: ctx.config_block("estimate-sigma", s, &artifacts),
        sigma_sq: est.sigma_sq,
        degenerate: est.scoring_sigma_sq().1,
        n_docs: est.n_docs,
        dim: est.dim,
        per_doc: est
            .per_doc
            .into_iter()
            .map(|(doc_id, sigma_sq)| DocEstimate { doc_id, sigma_sq })
            .collect(),
    };
    emit(s.output.as_deref(), &report)
}

fn with_sigma(mut config: Value, sigma: &SigmaChoice) -> Value {
    config["sigma"] = serde_json::to_value(sigma).expect("plain struct");
    config
}

pub fn score(ctx: &Context, s: &ScoreSettings) -> Result<()> {
    let input = required(&s.input, "input")?;
    if s.windows.contains(&0) {
        return Err(CliError::Usage(
            "window half-widths must be positive".into(),
        ));
    }
    let mut artifacts = Artifacts::default();
    let sigma = choose_sigma(s.sigma_sq, s.sigma_file.as_deref(), None, &mut artifacts)?;
    let latents = ctx.latents(input, s.encoder.as_deref(), &mut artifacts, "input")?;
    let documents = latents
        .iter()
        .map(|doc| {
            let global = bbscore(doc, sigma.sigma_sq)?;
            let windowed = s
                .windows
                .iter()
                .filter(|&&w| doc.len() > 2 * w)
                .map(|&w| Ok((w, bbscore_windowed(doc, sigma.sigma_sq, w)?)))
                .collect::<bbscore::Result<_>>()?;
            Ok(DocumentScores {
                doc_id: doc.doc_id().to_string(),
                len: doc.len(),
                global,
                windowed,
                sigma_floored: sigma.floored,
            })
        })
        .collect::<bbscore::Result<Vec<_>>>()?;
    let report = ScoreReport {
        task: "score".into(),
        documents,
        dataset: None,
        shuffle: None,
        auc: None,
        pairwise_accuracy: None,
        distance_matrix: None,
        config: with_sigma(ctx.config_block("score", s, &artifacts), &sigma),
    };
    emit(s.output.as_deref(), &report)
}

pub fn shuffle_eval(ctx: &Context, s: &ShuffleSettings) -> Result<()> {
    s.validate()?;
    let input = required(&s.input, "input")?;
    let mut artifacts = Artifacts::default();
    let latents = ctx.latents(input, s.encoder.as_deref(), &mut artifacts, "input")?;
    let sigma = choose_sigma(
        s.sigma_sq,
        s.sigma_file.as_deref(),
        Some(&latents),
        &mut artifacts,
    )?;
    let ds = shuffle_dataset(&latents, &s.task)?;
    let eval = evaluate_shuffle_task(&latents, &ds, sigma.sigma_sq)?;
    let lens: BTreeMap<&str, usize> = latents.iter().map(|d| (d.doc_id(), d.len())).collect();
    let documents = eval
        .originals
        .iter()
        .map(|(doc_id, global)| DocumentScores {
            doc_id: doc_id.clone(),
            len: lens.get(doc_id.as_str()).copied().unwrap_or(0),
            global: *global,
            windowed: Vec::new(),
            sigma_floored: sigma.floored,
        })
        .collect();
    let report = ScoreReport {
        task: s.task.task_name(),
        documents,
        dataset: Some(ds.stats(latents.len())),
        auc: Some(eval.auc),
        pairwise_accuracy: Some(eval.pairwise_accuracy),
        shuffle: Some(eval),
        distance_matrix: None,
        config: with_sigma(ctx.config_block("shuffle-eval", s, &artifacts), &sigma),
    };
    emit(s.output.as_deref(), &report)
}

#[derive(Serialize)]
struct SweepReport {
    config: Value,
    task: String,
    dataset: DatasetStats,
    sweep: SigmaSweep,
}

pub fn sweep(ctx: &Context, s: &SweepSettings) -> Result<()> {
    s.validate()?;
    let input = required(&s.input, "input")?;
    let mut artifacts = Artifacts::default();
    let latents = ctx.latents(input, s.encoder.as_deref(), &mut artifacts, "input")?;
    let sigma = choose_sigma(
        s.sigma_sq,
        s.sigma_file.as_deref(),
        Some(&latents),
        &mut artifacts,
    )?;
    let ds = shuffle_dataset(&latents, &s.task)?;
    let sweep = sigma_sweep(&latents, &ds, &s.grid, Some(sigma.sigma_sq))?;
    if let Some(csv) = &s.csv {
        write_text(Some(csv), &sweep.to_csv())?;
    }
    let report = SweepReport {
        config: with_sigma(ctx.config_block("sigma-sweep", s, &artifacts), &sigma),
        task: s.task.task_name(),
        dataset: ds.stats(latents.len()),
        sweep,
    };
    emit(s.output.as_deref(), &report)
}

#[derive(Serialize)]
struct ClassifyReport {
    config: Value,
    task: String,
    dataset: DatasetStats,
    mode: PairMode,
    n_train_docs: usize,
    n_train_pairs: usize,
    n_test_pairs: usize,
    /// Accuracy on held-out pairs in the requested mode.
    pairwise_accuracy: f64,
    /// Accuracy on the same pairs when comparing global scores only.
    raw_pairwise_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_training_loss: Option<f64>,
}

pub fn classify(ctx: &Context, s: &ClassifySettings) -> Result<()> {
    s.validate()?;
    let input = required(&s.input, "input")?;
    let mut artifacts = Artifacts::default();
    let latents = ctx.latents(input, s.encoder.as_deref(), &mut artifacts, "input")?;
    let sigma = choose_sigma(
        s.sigma_sq,
        s.sigma_file.as_deref(),
        Some(&latents),
        &mut artifacts,
    )?;
    let ds = shuffle_dataset(&latents, &s.task)?;

    let n_train_docs = (s.train_fraction * latents.len() as f64).floor() as usize;
    let mut originals: BTreeMap<usize, FeatureVector> = BTreeMap::new();
    let mut train_pairs = Vec::new();
    let mut test_pairs = Vec::new();
    for pair in &ds.pairs {
        let orig = match originals.get(&pair.doc_index) {
            Some(f) => f.clone(),
            None => {
                let f = extract_features(&latents[pair.doc_index], sigma.sigma_sq)?;
                originals.insert(pair.doc_index, f.clone());
                f
            }
        };
        let shuffled = extract_features(&pair.shuffled, sigma.sigma_sq)?;
        if pair.doc_index < n_train_docs {
            train_pairs.push((orig, shuffled));
        } else {
            test_pairs.push((orig, shuffled));
        }
    }
    if test_pairs.is_empty() {
        return Err(CliError::Usage(
            "no held-out pairs: lower --train-fraction or add documents".into(),
        ));
    }

    let mut final_training_loss = None;
    let model = match (s.mode, &s.model) {
        (PairMode::Raw, _) => None,
        (PairMode::Clf, Some(path)) => {
            artifacts.add("model", path)?;
            Some(load_mlp3(path).map_err(|e| CliError::input(path, e))?)
        }
        (PairMode::Clf, None) => {
            if train_pairs.is_empty() {
                return Err(CliError::Usage(
                    "no training pairs: raise --train-fraction or pass --model".into(),
                ));
            }
            let cfg = Mlp3Config {
                learning_rate: s.learning_rate,
                momentum: s.momentum,
                epochs: s.epochs,
                batch_size: s.batch_size,
                seed: s.task.seed,
                ..Mlp3Config::default()
            };
            let out = train_pairwise(&train_pairs, &cfg)?;
            final_training_loss = out.loss_trace.last().copied();
            Some(out.model)
        }
    };
    if let (Some(model), Some(path)) = (&model, &s.model_out) {
        save_mlp3(model, path).map_err(|e| CliError::input(path, e))?;
    }

    let pairwise_accuracy = pairwise_discrimination_accuracy(&test_pairs, s.mode, model.as_ref())?;
    let raw_pairwise_accuracy = pairwise_discrimination_accuracy(&test_pairs, PairMode::Raw, None)?;
    let report = ClassifyReport {
        config: with_sigma(ctx.config_block("classify", s, &artifacts), &sigma),
        task: s.task.task_name(),
        dataset: ds.stats(latents.len()),
        mode: s.mode,
        n_train_docs,
        n_train_pairs: train_pairs.len(),
        n_test_pairs: test_pairs.len(),
        pairwise_accuracy,
        raw_pairwise_accuracy,
        final_training_loss,
    };
    emit(s.output.as_deref(), &report)
}

#[derive(Serialize)]
struct DetectReport {
    config: Value,
    #[serde(flatten)]
    detection: DetectionReport,
}

pub fn detect(ctx: &Context, s: &DetectSettings) -> Result<()> {
    s.validate()?;
    let mut artifacts = Artifacts::default();
    let encoder = match &s.encoder {
        Some(path) => {
            artifacts.add("encoder", path)?;
            Some(load_encoder(path).map_err(|e| CliError::input(path, e))?)
        }
        None => None,
    };
    let mut load = |role: String, path: &Path| -> Result<Vec<LatentSequence>> {
        artifacts.add(role, path)?;
        let corpus = ctx.read(path)?;
        match &encoder {
            Some(enc) => Ok(enc.encode_corpus(&corpus)?),
            None => Ok(corpus),
        }
    };
    let mut profiles = Vec::new();
    for spec in &s.train {
        let (label, path) = labelled_path(spec)?;
        if profiles.iter().any(|p: &SigmaProfile| p.label == label) {
            return Err(CliError::Usage(format!("duplicate source label {label:?}")));
        }
        let docs = load(format!("train:{label}"), &path)?;
        profiles.push(SigmaProfile::from_corpus(label, &docs)?);
    }
    let mut tests = Vec::new();
    for spec in &s.test {
        let (label, path) = labelled_path(spec)?;
        let docs = load(format!("test:{label}"), &path)?;
        let source = profiles
            .iter()
            .any(|p| p.label == label)
            .then(|| label.clone());
        tests.push(TestCorpus {
            label,
            source,
            docs,
        });
    }
    let detection = llm_detect(&profiles, &tests, s.top_k, s.mode)?;
    if let Some(csv) = &s.csv {
        write_text(Some(csv), &detection.normalized.to_csv())?;
    }
    let report = DetectReport {
        config: ctx.config_block("detect-llm", s, &artifacts),
        detection,
    };
    emit(s.output.as_deref(), &report)
}

#[derive(Serialize)]
struct TrajectoryReport {
    config: Value,
    profile: TrajectoryProfile,
}

pub fn trajectories(ctx: &Context, s: &TrajectorySettings) -> Result<()> {
    let input = required(&s.input, "input")?;
    if s.length < 2 {
        return Err(CliError::Usage("--length must be at least 2".into()));
    }
    let mut artifacts = Artifacts::default();
    let latents = ctx.latents(input, s.encoder.as_deref(), &mut artifacts, "input")?;
    let profile = trajectory_profile(&latents, s.length)?;
    for id in &profile.skipped {
        log::warn!("{id}: skipped, too short to resample");
    }
    if let Some(csv) = &s.csv {
        write_text(Some(csv), &profile.to_csv())?;
    }
    let report = TrajectoryReport {
        config: ctx.config_block("trajectories", s, &artifacts),
        profile,
    };
    emit(s.output.as_deref(), &report)
}
