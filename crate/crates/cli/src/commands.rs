use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use corefbridge::corpus::{gen_synthetic, parse_conllu, write_conllu, Document, SyntheticConfig};
use corefbridge::embeddings::{
    decode_payload, embed_document, EmbedResponse, EmbeddingMatrix, ProviderConfig,
};
use corefbridge::metrics::{Scorer, Scores};
use corefbridge::syntax::Inventories;
use corefbridge::training::{
    evaluate_inputs, grad_check_with, predict_inputs, prepare_document, randomize_params,
    read_weights, train_prepared, write_weights, Arm, DevSet, DocInputs, MentionRepr, ModelConfig,
    ModelParams,
};
use serde::Serialize;

use crate::config::{digest_of, resolve_seed, RunConfig};
use crate::error::{CliError, EXIT_OK};
use crate::report::{
    average_scores, to_json_line, write_json, AblationReport, GradCheckSummary, GridRow, RunReport,
    REPORT_FORMAT_VERSION,
};
use crate::{
    AblateArgs, Command, EvaluateArgs, GenerateArgs, GradcheckArgs, PredictArgs, TrainArgs,
};

/// Largest embedding width accepted by the gradient check.
pub const GRADCHECK_MAX_DIM: usize = 32;
/// Pass mark of the gradient check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

pub fn dispatch(cmd: &Command) -> Result<i32, CliError> {
    match cmd {
        Command::Generate(a) => {
            let docs = generate(a)?;
            eprintln!("wrote {} documents to {}", docs.len(), a.out.display());
        }
        Command::Train(a) => emit(&train(a)?, a.report.as_deref())?,
        Command::Predict(a) => {
            predict(a)?;
        }
        Command::Evaluate(a) => emit(&evaluate(a)?, a.report.as_deref())?,
        Command::Ablate(a) => {
            let grid = ablate(a)?;
            print!("{}", grid.render_table());
            if let Some(p) = &a.report {
                write_json(p, &grid)?;
            }
            return Ok(ablation_exit_code(&grid));
        }
        Command::Gradcheck(a) => {
            let r = gradcheck(a)?;
            if let Some(p) = &a.report {
                write_json(p, &r)?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn emit(report: &RunReport, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => write_json(p, report),
        None => {
            println!("{}", to_json_line(report));
            Ok(())
        }
    }
}

fn millis(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read corpus {}: {e}", path.display())))?;
    parse_conllu(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<(), CliError> {
    std::fs::write(path, write_conllu(docs)).map_err(|e| CliError::io(path, e))
}

/// Embeddings supplied from a file instead of a provider.
#[derive(Debug, Clone, Default)]
pub struct Injected(BTreeMap<String, EmbedResponse>);

impl Injected {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Data(format!("cannot read embeddings {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map(Injected)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn insert(&mut self, doc_id: &str, payload: EmbedResponse) {
        self.0.insert(doc_id.to_string(), payload);
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_json(path, &self.0)
    }
}

fn load_injected(path: Option<&Path>) -> Result<Option<Injected>, CliError> {
    path.map(Injected::load).transpose()
}

/// Provider output for `doc`, or the injected matrix when one is given.
/// Injected matrices are checked and normalized like a service response.
pub fn embed(
    doc: &Document,
    provider: &ProviderConfig,
    injected: Option<&Injected>,
) -> Result<EmbeddingMatrix, CliError> {
    let wrap = |source| CliError::Embedding {
        doc: doc.id.clone(),
        source,
    };
    match injected {
        Some(inj) => {
            let payload = inj.0.get(&doc.id).ok_or_else(|| {
                CliError::Data(format!("no injected embeddings for document {}", doc.id))
            })?;
            decode_payload(payload.clone(), doc.n_tokens(), provider.dim)
                .map(EmbeddingMatrix::normalized)
                .map_err(wrap)
        }
        None => embed_document(provider, doc).map_err(wrap),
    }
}

pub fn prepare(
    docs: &[Document],
    provider: &ProviderConfig,
    inventories: &Inventories,
    repr: MentionRepr,
    injected: Option<&Injected>,
) -> Result<Vec<DocInputs>, CliError> {
    docs.iter()
        .map(|doc| {
            let e = embed(doc, provider, injected)?;
            prepare_document(doc, &e, inventories, provider.seed, repr)
                .map_err(|err| CliError::from_train(Some(&doc.id), err))
        })
        .collect()
}

pub fn generate(args: &GenerateArgs) -> Result<Vec<Document>, CliError> {
    let cfg = SyntheticConfig {
        seed: resolve_seed(args.seed, 42)?,
        n_docs: args.docs,
        sentences_per_doc: args.sentences,
        vocab_size: args.vocab,
        syntax_signal: args.signal,
    };
    let docs = gen_synthetic(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    write_corpus(&args.out, &docs)?;
    Ok(docs)
}

pub fn train(args: &TrainArgs) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let cfg = RunConfig::load(
        args.config.config.as_deref(),
        &args.config.overrides,
        args.config.seed,
    )?;
    let docs = read_corpus(&args.corpus)?;
    let dev_docs = args.dev.as_deref().map(read_corpus).transpose()?;
    let injected = load_injected(args.embeddings.as_deref())?;

    let inventories = Inventories::from_corpus(&docs);
    let repr = cfg.attention.mention_repr;
    let inputs = prepare(&docs, &cfg.embedding, &inventories, repr, injected.as_ref())?;
    let dev_inputs = dev_docs
        .as_deref()
        .map(|d| prepare(d, &cfg.embedding, &inventories, repr, injected.as_ref()))
        .transpose()?;
    let dev = dev_inputs.as_deref().map(|inputs| DevSet {
        inputs,
        resolution: &cfg.resolver,
    });
    let trained = train_prepared(
        &inputs,
        inventories,
        cfg.embedding.dim,
        &cfg.attention,
        &cfg.train,
        args.arm,
        dev,
    )?;
    write_weights(&args.out, &trained.params).map_err(|source| CliError::Weights {
        path: args.out.display().to_string(),
        source,
    })?;

    let mut report = RunReport::new("train", cfg.digest(), cfg.train.seed);
    report.arm = Some(args.arm);
    if let Some(d) = &dev_inputs {
        let scores = evaluate_inputs(&trained.params, d, &cfg.resolver)?;
        report.per_dataset.insert("dev".into(), scores);
    }
    report.history = Some(trained.history);
    report.wall_time_ms = millis(start);
    Ok(report)
}

pub fn load_weights(path: &Path) -> Result<ModelParams, CliError> {
    read_weights(path).map_err(|source| CliError::Weights {
        path: path.display().to_string(),
        source,
    })
}

/// Writes the corpus back out with predicted chains and returns it.
pub fn predict(args: &PredictArgs) -> Result<Vec<Document>, CliError> {
    let params = load_weights(&args.weights)?;
    let mut cfg = RunConfig::load(
        args.config.config.as_deref(),
        &args.config.overrides,
        args.config.seed,
    )?;
    if let Some(s) = args.strategy {
        cfg.resolver.strategy = s;
    }
    if let Some(w) = args.beam_width {
        cfg.resolver.beam_width = w;
    }
    cfg.validate()?;
    if cfg.embedding.dim != params.dim {
        return Err(CliError::Config(format!(
            "embedding.dim is {} but the weights expect {}",
            cfg.embedding.dim, params.dim
        )));
    }
    let injected = load_injected(args.embeddings.as_deref())?;
    let mut docs = read_corpus(&args.corpus)?;
    let inputs = prepare(
        &docs,
        &cfg.embedding,
        &params.inventories,
        params.mention_repr,
        injected.as_ref(),
    )?;
    for (doc, inp) in docs.iter_mut().zip(&inputs) {
        let (chains, _) = predict_inputs(&params, inp, &cfg.resolver)
            .map_err(|e| CliError::from_train(Some(&doc.id), e))?;
        doc.gold_chains = Some(chains);
    }
    write_corpus(&args.out, &docs)?;
    Ok(docs)
}

/// Scores of `pred` against `gold`, matching documents by id.
pub fn score_corpus(gold: &[Document], pred: &[Document]) -> Result<Scores, CliError> {
    let by_id: HashMap<&str, &Document> = pred.iter().map(|d| (d.id.as_str(), d)).collect();
    if by_id.len() != pred.len() {
        return Err(CliError::Data(
            "duplicate document ids in predictions".into(),
        ));
    }
    let mut scorer = Scorer::default();
    for g in gold {
        let p = by_id
            .get(g.id.as_str())
            .ok_or_else(|| CliError::Data(format!("no prediction for document {}", g.id)))?;
        let (Some(gc), Some(pc)) = (&g.gold_chains, &p.gold_chains) else {
            return Err(CliError::Data(format!("document {} lacks chains", g.id)));
        };
        scorer
            .add(gc, pc)
            .map_err(|e| CliError::Data(format!("document {}: {e}", g.id)))?;
    }
    if gold.len() != pred.len() {
        let known: std::collections::HashSet<&str> = gold.iter().map(|d| d.id.as_str()).collect();
        let extra = pred.iter().find(|d| !known.contains(d.id.as_str()));
        return Err(CliError::Data(format!(
            "prediction for unknown document {}",
            extra.map_or("?", |d| d.id.as_str())
        )));
    }
    Ok(scorer.scores())
}

/// File stems, falling back to the full path where stems collide.
fn dataset_names(paths: &[PathBuf], taken: &[&str]) -> Vec<String> {
    let stem = |p: &PathBuf| {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string())
    };
    paths
        .iter()
        .map(|p| {
            let s = stem(p);
            let clash = taken.contains(&s.as_str())
                || s == "average"
                || paths.iter().filter(|q| stem(q) == s).count() > 1;
            if clash {
                p.display().to_string()
            } else {
                s
            }
        })
        .collect()
}

pub fn evaluate(args: &EvaluateArgs) -> Result<RunReport, CliError> {
    let start = Instant::now();
    if args.test_sets.len() != args.preds.len() {
        return Err(CliError::Config(format!(
            "{} --test-set paths but {} --pred paths",
            args.test_sets.len(),
            args.preds.len()
        )));
    }
    let names = dataset_names(&args.test_sets, &[]);
    let mut report = RunReport::new("evaluate", String::new(), 0);
    let mut inputs = Vec::new();
    for ((gold_path, pred_path), name) in args.test_sets.iter().zip(&args.preds).zip(&names) {
        let gold = read_corpus(gold_path)?;
        let pred = read_corpus(pred_path)?;
        inputs.push((
            gold_path.display().to_string(),
            pred_path.display().to_string(),
        ));
        report
            .per_dataset
            .insert(name.clone(), score_corpus(&gold, &pred)?);
    }
    report.config_digest = digest_of(&inputs);
    report.average = average_scores(report.per_dataset.values());
    report.wall_time_ms = millis(start);
    Ok(report)
}

/// Train, dev and test documents.
pub type Split = (Vec<Document>, Vec<Document>, Vec<Document>);

/// Order-preserving split by fractions; the last part takes the rest.
pub fn split_corpus(docs: &[Document], fractions: &[f64]) -> Result<Split, CliError> {
    let ok = fractions.len() == 3
        && fractions.iter().all(|f| (0.0..=1.0).contains(f))
        && (fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9;
    if !ok {
        return Err(CliError::Config(format!(
            "split {fractions:?} must be three fractions summing to 1"
        )));
    }
    let n = docs.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_dev = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let (train, rest) = docs.split_at(n_train);
    let (dev, test) = rest.split_at(n_dev);
    if train.is_empty() || test.is_empty() {
        return Err(CliError::Data(format!(
            "split of {n} documents leaves an empty train or test part"
        )));
    }
    Ok((train.to_vec(), dev.to_vec(), test.to_vec()))
}

pub fn ablate(args: &AblateArgs) -> Result<AblationReport, CliError> {
    let start = Instant::now();
    let cfg = RunConfig::load(
        args.config.config.as_deref(),
        &args.config.overrides,
        args.config.seed,
    )?;
    let docs = read_corpus(&args.corpus)?;
    let (train_docs, dev_docs, test_docs) = split_corpus(&docs, &args.split)?;
    let injected = load_injected(args.embeddings.as_deref())?;
    let inventories = Inventories::from_corpus(&train_docs);
    let repr = cfg.attention.mention_repr;
    let prep = |d: &[Document]| prepare(d, &cfg.embedding, &inventories, repr, injected.as_ref());
    let train_inputs = prep(&train_docs)?;
    let dev_inputs = prep(&dev_docs)?;

    let mut columns = vec!["test".to_string()];
    let mut sets = vec![prep(&test_docs)?];
    columns.extend(dataset_names(&args.test_sets, &["test"]));
    for p in &args.test_sets {
        sets.push(prep(&read_corpus(p)?)?);
    }

    let mut grid = AblationReport {
        format_version: REPORT_FORMAT_VERSION,
        config_digest: cfg.digest(),
        seed: cfg.train.seed,
        columns: columns.iter().cloned().chain(["average".into()]).collect(),
        rows: Vec::new(),
        reports: Vec::new(),
        wall_time_ms: 0,
    };
    for arm in Arm::ALL {
        let arm_start = Instant::now();
        let outcome = (|| -> Result<RunReport, CliError> {
            let dev = (!dev_inputs.is_empty()).then_some(DevSet {
                inputs: &dev_inputs,
                resolution: &cfg.resolver,
            });
            let trained = train_prepared(
                &train_inputs,
                inventories.clone(),
                cfg.embedding.dim,
                &cfg.attention,
                &cfg.train,
                arm,
                dev,
            )?;
            let mut r = RunReport::new("ablate", cfg.digest(), cfg.train.seed);
            r.arm = Some(arm);
            for (name, inputs) in columns.iter().zip(&sets) {
                let s = evaluate_inputs(&trained.params, inputs, &cfg.resolver)?;
                r.per_dataset.insert(name.clone(), s);
            }
            r.average = average_scores(r.per_dataset.values());
            r.history = Some(trained.history);
            r.wall_time_ms = millis(arm_start);
            Ok(r)
        })();
        match outcome {
            Ok(r) => {
                let mut f1: Vec<f64> = columns.iter().map(|c| r.per_dataset[c].conll_f1).collect();
                f1.push(r.average.map_or(0.0, |a| a.conll_f1));
                grid.rows.push(GridRow {
                    arm,
                    label: arm.label().into(),
                    conll_f1: f1,
                    error: None,
                    exit_code: EXIT_OK,
                });
                grid.reports.push(r);
            }
            Err(e) => grid.rows.push(GridRow {
                arm,
                label: arm.label().into(),
                conll_f1: Vec::new(),
                error: Some(e.to_string()),
                exit_code: e.exit_code(),
            }),
        }
    }
    grid.wall_time_ms = millis(start);
    Ok(grid)
}

/// 0 when every arm succeeded, else the code of the first failure.
pub fn ablation_exit_code(grid: &AblationReport) -> i32 {
    grid.rows
        .iter()
        .map(|r| r.exit_code)
        .find(|&c| c != EXIT_OK)
        .unwrap_or(EXIT_OK)
}

#[derive(Serialize)]
struct GradcheckSpec {
    dim: usize,
    docs: usize,
    seed: u64,
    mechanism: corefbridge::attention::Mechanism,
    arm: Arm,
    heads: usize,
    eps: f64,
}

/// Prints the worst coordinate; fails with exit 4 at or above the
/// tolerance.
pub fn gradcheck(args: &GradcheckArgs) -> Result<RunReport, CliError> {
    let start = Instant::now();
    if args.dropout != 0.0 {
        return Err(CliError::Config(format!(
            "gradient check needs a deterministic loss; dropout {} must be 0",
            args.dropout
        )));
    }
    if !(8..=GRADCHECK_MAX_DIM).contains(&args.dim) {
        return Err(CliError::Config(format!(
            "gradient check dim {} not in 8..={GRADCHECK_MAX_DIM}",
            args.dim
        )));
    }
    if args.docs == 0 || args.heads == 0 {
        return Err(CliError::Config("docs and heads must be positive".into()));
    }
    let seed = resolve_seed(args.seed, 7)?;
    let docs = gen_synthetic(&SyntheticConfig {
        seed,
        n_docs: args.docs,
        sentences_per_doc: 4,
        ..SyntheticConfig::default()
    })
    .map_err(|e| CliError::Config(e.to_string()))?;
    let provider = ProviderConfig {
        dim: args.dim,
        ..ProviderConfig::default()
    };
    let model = ModelConfig {
        mechanism: args.mechanism,
        n_heads: args.heads,
        ..ModelConfig::default()
    };
    let inventories = Inventories::from_corpus(&docs);
    let inputs = prepare(&docs, &provider, &inventories, model.mention_repr, None)?;
    let mut params = ModelParams::init(args.arm, inventories, args.dim, &model, seed)?;
    randomize_params(&mut params, seed);
    let batch: Vec<&DocInputs> = inputs.iter().collect();
    let target = params.trainable_mask().iter().position(|&t| t);
    let r = grad_check_with(&params, &batch, args.eps, |g| {
        if let (true, Some(i)) = (args.corrupt_gradient, target) {
            g[i] += 1.0 + g[i].abs();
        }
    })?;
    let coordinate = r.worst_index.map(|i| params.coordinate_name(i));
    println!(
        "max relative error {:.3e} over {} coordinates (worst: {})",
        r.max_rel_error,
        r.checked,
        coordinate.as_deref().unwrap_or("none")
    );
    if r.max_rel_error >= GRADCHECK_TOLERANCE || !r.max_rel_error.is_finite() {
        return Err(CliError::GradCheck {
            max_rel_error: r.max_rel_error,
            coordinate: coordinate.unwrap_or_default(),
        });
    }
    let spec = GradcheckSpec {
        dim: args.dim,
        docs: args.docs,
        seed,
        mechanism: args.mechanism,
        arm: args.arm,
        heads: args.heads,
        eps: args.eps,
    };
    let mut report = RunReport::new("gradcheck", digest_of(&spec), seed);
    report.arm = Some(args.arm);
    report.gradcheck = Some(GradCheckSummary {
        max_rel_error: r.max_rel_error,
        coordinate,
        analytic: r.analytic,
        numeric: r.numeric,
        checked: r.checked,
    });
    report.wall_time_ms = millis(start);
    Ok(report)
}
