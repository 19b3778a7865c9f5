use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use sifn::autograd::GradCheckConfig;
use sifn::corpus::{parse_reviews, preprocess as build_dataset, read_dataset, write_dataset, Dataset, PreprocessConfig, ReviewFormat, Side, Split};
use sifn::embeddings::{init_trainable_table, load_contextual_store, load_static_table, EmbeddingStore};
use sifn::evalkit::{export_attention, review_sentiment_eval, run_ablation, AblationStores, ResultsFile};
use sifn::model::{load_checkpoint, save_checkpoint, Model, Probe, ProbeShape, Variant};
use sifn::synth::{generate, is_sentiment_word, write_synth, SynthConfig};
use sifn::trainer::{evaluate_mse, train as train_run, tune_lambda as tune, write_history, write_timing, TrainConfig, TrainError, TrainOutcome};

use crate::config::{parse_list, KvFile};
use crate::manifest::{write_json, RunManifest};
use crate::{AblateArgs, CliError, EvaluateArgs, GradcheckArgs, PreprocessArgs, SynthArgs, TrainArgs, TrainFlags, TuneLambdaArgs, VisualizeArgs};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSpec {
    Trainable,
    Static { glove: PathBuf },
    Contextual { index: PathBuf, matrix: PathBuf },
}

/// Resolved configuration of a training run, stored in its manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainRun {
    pub data: PathBuf,
    pub train: TrainConfig,
    pub embeddings: EmbeddingSpec,
}

const TRAIN_KEYS: &[&str] = &[
    "k",
    "batch-size",
    "lr",
    "dropout",
    "lambda",
    "lambda-grid",
    "variant",
    "seed",
    "max-epochs",
    "patience",
    "clip-norm",
    "track-train-mse",
    "target-train-mse",
    "embeddings",
    "glove",
    "ctx-index",
    "ctx-matrix",
];

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn resolve_train(flags: &TrainFlags, file: &KvFile) -> Result<(TrainConfig, EmbeddingSpec), CliError> {
    let d = TrainConfig::default();
    let variant: Variant = file
        .pick(flags.variant.clone(), "variant", d.variant.name().to_string())?
        .parse()?;
    let grid = match file.get::<String>("lambda-grid")? {
        Some(s) => parse_list(&s).map_err(CliError::Usage)?,
        None => d.lambda_grid.clone(),
    };
    let clip = file.pick(flags.clip_norm, "clip-norm", d.clip_norm.unwrap_or(0.0))?;
    let target = match flags.target_train_mse {
        Some(v) => Some(v),
        None => file.get("target-train-mse")?,
    };
    let cfg = TrainConfig {
        k: file.pick(flags.k, "k", d.k)?,
        batch_size: file.pick(flags.batch_size, "batch-size", d.batch_size)?,
        learning_rate: file.pick(flags.lr, "lr", d.learning_rate)?,
        dropout: file.pick(flags.dropout, "dropout", d.dropout)?,
        lambda: file.pick(flags.lambda, "lambda", d.lambda)?,
        lambda_grid: grid,
        max_epochs: file.pick(flags.max_epochs, "max-epochs", d.max_epochs)?,
        patience: file.pick(flags.patience, "patience", d.patience)?,
        seed: file.pick(flags.seed, "seed", d.seed)?,
        variant,
        clip_norm: (clip > 0.0).then_some(clip),
        track_train_mse: file.pick(flags.track_train_mse, "track-train-mse", target.is_some())?,
        target_train_mse: target,
    };
    cfg.validate()?;

    let kind = file.pick(flags.embeddings.clone(), "embeddings", String::new())?;
    let glove = flags.glove.clone().or(file.get("glove")?);
    let kind = if kind.is_empty() {
        if variant == Variant::W2v { "static" } else { "trainable" }.to_string()
    } else {
        kind
    };
    let spec = match kind.as_str() {
        "trainable" => EmbeddingSpec::Trainable,
        "static" => EmbeddingSpec::Static {
            glove: absolute(&glove.ok_or_else(|| CliError::Usage("the static backend needs --glove".into()))?),
        },
        "contextual" => {
            let index = flags.ctx_index.clone().or(file.get("ctx-index")?);
            let matrix = flags.ctx_matrix.clone().or(file.get("ctx-matrix")?);
            match (index, matrix) {
                (Some(i), Some(m)) => EmbeddingSpec::Contextual {
                    index: absolute(&i),
                    matrix: absolute(&m),
                },
                _ => return Err(CliError::Usage("the contextual backend needs --ctx-index and --ctx-matrix".into())),
            }
        }
        other => return Err(CliError::Usage(format!("unknown embeddings backend `{other}`"))),
    };
    Ok((cfg, spec))
}

fn load_train_flags(flags: &TrainFlags) -> Result<(TrainConfig, EmbeddingSpec), CliError> {
    let file = KvFile::load(flags.config.as_deref())?;
    file.check_known(TRAIN_KEYS)?;
    resolve_train(flags, &file)
}

/// Builds the word backend; a trainable table is drawn from `seed`.
pub fn build_store(spec: &EmbeddingSpec, ds: &Dataset, k: usize, seed: u64) -> Result<EmbeddingStore, CliError> {
    Ok(match spec {
        EmbeddingSpec::Trainable => EmbeddingStore::Trainable(init_trainable_table(ds.vocab.len(), k, seed)),
        EmbeddingSpec::Static { glove } => {
            let t = load_static_table(glove, &ds.vocab, seed)?;
            info!("static table covers {:.1}% of the vocabulary", 100.0 * t.coverage.fraction());
            EmbeddingStore::Static(t)
        }
        EmbeddingSpec::Contextual { index, matrix } => {
            let s = load_contextual_store(index, matrix, Some(ds.l))?;
            let c = s.coverage(ds);
            if c.found < c.total {
                warn!("contextual store covers {} of {} profile slots", c.found, c.total);
            }
            EmbeddingStore::Contextual(s)
        }
    })
}

fn load_data(dir: &Path) -> Result<Dataset, CliError> {
    Ok(read_dataset(dir)?)
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

pub fn preprocess(a: PreprocessArgs) -> Result<(), CliError> {
    let file = KvFile::load(a.config.as_deref())?;
    file.check_known(&["min-reviews", "min-freq", "m", "l", "ratios", "seed"])?;
    let d = PreprocessConfig::default();
    let ratios = match a.ratios.or(file.get("ratios")?) {
        Some(s) => {
            let v: Vec<f64> = parse_list(&s).map_err(CliError::Usage)?;
            <[f64; 3]>::try_from(v).map_err(|_| CliError::Usage("--ratios needs three values".into()))?
        }
        None => d.ratios,
    };
    let cfg = PreprocessConfig {
        min_reviews: file.pick(a.min_reviews, "min-reviews", d.min_reviews)?,
        min_freq: file.pick(a.min_freq, "min-freq", d.min_freq)?,
        m: file.pick(a.m, "m", d.m)?,
        l: file.pick(a.l, "l", d.l)?,
        ratios,
        seed: file.pick(a.seed, "seed", d.seed)?,
    };
    let mut manifest = RunManifest::begin(
        "preprocess",
        serde_json::json!({
            "min_reviews": cfg.min_reviews,
            "min_freq": cfg.min_freq,
            "m": cfg.m,
            "l": cfg.l,
            "ratios": cfg.ratios,
            "seed": cfg.seed,
        }),
        Some(cfg.seed),
    );
    let report = parse_reviews(&a.input, ReviewFormat::AmazonJsonLines)?;
    if report.invalid > 0 {
        warn!("skipped {} of {} invalid lines", report.invalid, report.lines);
    }
    let ds = build_dataset(report.records, &cfg)?;
    write_dataset(&ds, &a.out)?;
    println!(
        "{} users, {} items, {} ratings, density {}",
        ds.stats.users,
        ds.stats.items,
        ds.stats.ratings,
        ds.stats.render_density()
    );
    manifest.inputs.push(absolute(&a.input));
    manifest.outputs = ["vocab.tsv", "splits.jsonl", "profiles.bin", "stats.json"]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    manifest.finish(&a.out)
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let file = KvFile::load(a.config.as_deref())?;
    file.check_known(&[
        "users",
        "items",
        "density",
        "latent-dim",
        "noise",
        "vocab",
        "review-len",
        "planted",
        "glove-dim",
        "seed",
    ])?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        users: file.pick(a.users, "users", d.users)?,
        items: file.pick(a.items, "items", d.items)?,
        density: file.pick(a.density, "density", d.density)?,
        latent_dim: file.pick(a.latent_dim, "latent-dim", d.latent_dim)?,
        noise: file.pick(a.noise, "noise", d.noise)?,
        filler_vocab: file.pick(a.vocab, "vocab", d.filler_vocab)?,
        review_len: file.pick(a.review_len, "review-len", d.review_len)?,
        planted: file.pick(a.planted, "planted", d.planted)?,
        glove_dim: file.pick(a.glove_dim, "glove-dim", d.glove_dim)?,
        seed: file.pick(a.seed, "seed", d.seed)?,
        ..d
    };
    let mut manifest = RunManifest::begin("synth", to_value(&cfg), Some(cfg.seed));
    let corpus = generate(&cfg)?;
    write_synth(&corpus, &a.out)?;
    println!("{} reviews written to {}", corpus.records.len(), a.out.display());
    manifest.outputs = ["reviews.jsonl", "glove.txt", "planted.json"]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    manifest.finish(&a.out)
}

fn write_outcome(out: &Path, outcome: &TrainOutcome) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    let paths = [CHECKPOINT_FILE, HISTORY_FILE, TIMING_FILE].map(|f| out.join(f));
    save_checkpoint(&outcome.model, &paths[0])?;
    write_history(&paths[1], &outcome.history)?;
    write_timing(&paths[2], &outcome.epoch_seconds)?;
    Ok(paths.to_vec())
}

fn report_outcome(outcome: &TrainOutcome) {
    match (outcome.best_epoch, outcome.best_val_mse()) {
        (Some(e), Some(mse)) => println!(
            "best validation MSE {mse:.5} at epoch {e} of {}{}",
            outcome.history.len(),
            if outcome.stopped_early { " (stopped early)" } else { "" }
        ),
        _ => println!("no epoch completed"),
    }
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let (cfg, spec) = load_train_flags(&a.flags)?;
    let run = TrainRun {
        data: absolute(&a.data),
        train: cfg.clone(),
        embeddings: spec.clone(),
    };
    let mut manifest = RunManifest::begin("train", to_value(&run), Some(cfg.seed));
    manifest.inputs.push(run.data.clone());
    let ds = load_data(&a.data)?;
    let store = build_store(&spec, &ds, cfg.k, cfg.seed)?;
    let start = Instant::now();
    let outcome = match train_run(&cfg, &ds, &store) {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, reason, best }) => {
            if let Some(best) = best {
                let path = a.out.join(CHECKPOINT_FILE);
                std::fs::create_dir_all(&a.out).ok();
                save_checkpoint(&best, &path)?;
                warn!("saved the best model before divergence to {}", path.display());
            }
            return Err(CliError::Numeric(format!("training diverged at epoch {epoch}: {reason}")));
        }
        Err(e) => return Err(e.into()),
    };
    info!("trained in {:.1}s", start.elapsed().as_secs_f64());
    report_outcome(&outcome);
    manifest.outputs = write_outcome(&a.out, &outcome)?;
    manifest.finish(&a.out)
}

/// Loads a `train` run directory: its resolved config and best model.
fn load_run(run_dir: &Path, ds: &Dataset) -> Result<(TrainRun, Model, EmbeddingStore), CliError> {
    let manifest = RunManifest::load(run_dir)?;
    let run: TrainRun = serde_json::from_value(manifest.config)
        .map_err(|e| CliError::Data(format!("{} is not a train manifest: {e}", run_dir.display())))?;
    let model = load_checkpoint(&run_dir.join(CHECKPOINT_FILE))?;
    let c = &model.config;
    if c.n_users != ds.users.len() || c.n_items != ds.items.len() || c.m != ds.m || c.l != ds.l {
        return Err(CliError::Data("the checkpoint was trained on a different dataset".into()));
    }
    let store = build_store(&run.embeddings, ds, run.train.k, run.train.seed)?;
    Ok((run, model, store))
}

#[derive(Serialize)]
struct SentimentSummary {
    side: Side,
    reviews: usize,
    accuracy: f64,
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let ds = load_data(&a.data)?;
    let (run, model, store) = load_run(&a.run, &ds)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.run.parent().map(Path::to_path_buf).unwrap_or_default());
    let out = if out.as_os_str().is_empty() { PathBuf::from(".") } else { out };
    let dataset = match a.dataset_name.clone() {
        Some(n) => n,
        None => absolute(&a.data)
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
    };
    let method = model.config.variant.method_name();
    let mut manifest = RunManifest::begin(
        "evaluate",
        serde_json::json!({ "dataset": dataset, "method": method, "batch_size": a.batch_size, "run": run }),
        Some(run.train.seed),
    );
    manifest.inputs = vec![absolute(&a.data), absolute(&a.run)];

    let test = ds.split_ids(Split::Test);
    let mse = evaluate_mse(&model, &ds, &store, &test, a.batch_size)?;
    if !mse.is_finite() {
        return Err(CliError::Numeric(format!("test MSE is {mse}")));
    }
    println!("{method} test MSE on {dataset}: {mse:.5} ({} pairs)", test.len());
    let mut sentiment = Vec::new();
    if model.config.variant.has_sentiment_head() {
        for side in [Side::User, Side::Item] {
            let r = review_sentiment_eval(&model, &ds, &store, &test, side, is_sentiment_word)?;
            println!("{side} tower sentiment accuracy on held-out reviews: {:.4}", r.accuracy);
            sentiment.push(SentimentSummary {
                side,
                reviews: r.reviews,
                accuracy: r.accuracy,
            });
        }
    }

    let results_path = out.join("results.json");
    let mut results = ResultsFile::load_or_new(&results_path)?;
    results.insert(method, &dataset, mse);
    results.save(&results_path)?;
    let eval_path = out.join(format!("evaluation_{method}_{dataset}.json"));
    write_json(
        &eval_path,
        &serde_json::json!({
            "schema_version": 1,
            "method": method,
            "dataset": dataset,
            "test_mse": mse,
            "test_pairs": test.len(),
            "sentiment": sentiment,
        }),
    )?;
    print!("{}", results.render_table(Variant::Full.method_name())?);
    manifest.outputs = vec![results_path, eval_path];
    manifest.finish(&out)
}

pub fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let (cfg, spec) = load_train_flags(&a.flags)?;
    let seeds: Vec<u64> = parse_list(&a.seeds).map_err(CliError::Usage)?;
    if seeds.is_empty() {
        return Err(CliError::Usage("--seeds is empty".into()));
    }
    let glove = match (&spec, &a.flags.glove) {
        (EmbeddingSpec::Static { glove }, _) => glove.clone(),
        (_, Some(g)) => absolute(g),
        _ => return Err(CliError::Usage("ablations need --glove for the w2v variant".into())),
    };
    let ds = load_data(&a.data)?;
    let primary = build_store(&spec, &ds, cfg.k, cfg.seed)?;
    let static_table = build_store(&EmbeddingSpec::Static { glove: glove.clone() }, &ds, cfg.k, cfg.seed)?;
    let mut manifest = RunManifest::begin(
        "ablate",
        serde_json::json!({ "train": cfg, "embeddings": spec, "glove": glove, "seeds": seeds }),
        None,
    );
    manifest.inputs = vec![absolute(&a.data), glove];
    let report = run_ablation(
        &ds,
        AblationStores {
            primary: &primary,
            static_table: &static_table,
        },
        &cfg,
        &seeds,
    )?;
    print!("{}", report.render_bars(40));
    let path = a.out.join("ablation.json");
    report.save(&path)?;
    manifest.outputs = vec![path];
    manifest.finish(&a.out)
}

pub fn tune_lambda(a: TuneLambdaArgs) -> Result<(), CliError> {
    let (mut cfg, spec) = load_train_flags(&a.flags)?;
    if let Some(g) = &a.grid {
        cfg.lambda_grid = parse_list(g).map_err(CliError::Usage)?;
        cfg.validate()?;
    }
    let ds = load_data(&a.data)?;
    let store = build_store(&spec, &ds, cfg.k, cfg.seed)?;
    let run = TrainRun {
        data: absolute(&a.data),
        train: cfg.clone(),
        embeddings: spec,
    };
    let mut manifest = RunManifest::begin("tune-lambda", to_value(&run), Some(cfg.seed));
    manifest.inputs.push(run.data.clone());
    let (report, outcomes) = tune(&cfg, &ds, &store)?;
    for r in &report.rows {
        println!("λ = {:<8} validation MSE {:.5}", r.lambda, r.val_mse);
    }
    println!("selected λ = {}", report.best_lambda);
    let best = report
        .rows
        .iter()
        .position(|r| r.lambda == report.best_lambda)
        .expect("selected λ is in the grid");
    let path = a.out.join("lambda.json");
    write_json(&path, &serde_json::json!({ "schema_version": 1, "report": report }))?;
    manifest.outputs = write_outcome(&a.out, &outcomes[best])?;
    manifest.outputs.push(path);
    // The run directory doubles as a `train` run for the selected λ.
    manifest.config = to_value(&TrainRun {
        train: TrainConfig {
            lambda: report.best_lambda,
            ..run.train
        },
        ..run
    });
    manifest.finish(&a.out)
}

pub fn visualize(a: VisualizeArgs) -> Result<(), CliError> {
    let ds = load_data(&a.data)?;
    let (run, model, store) = load_run(&a.run, &ds)?;
    let pairs: Vec<(String, String)> = if a.pairs.is_empty() {
        ds.split_ids(Split::Test)
            .into_iter()
            .take(3)
            .map(|id| (ds.pairs[id].user_id.clone(), ds.pairs[id].item_id.clone()))
            .collect()
    } else {
        a.pairs
            .iter()
            .map(|p| {
                p.split_once(',')
                    .map(|(u, i)| (u.to_string(), i.to_string()))
                    .ok_or_else(|| CliError::Usage(format!("--pair expects USER,ITEM, got `{p}`")))
            })
            .collect::<Result<_, _>>()?
    };
    let mut manifest = RunManifest::begin("visualize", serde_json::json!({ "pairs": pairs, "run": run }), None);
    manifest.inputs = vec![absolute(&a.data), absolute(&a.run)];
    let dir = a.out.join("attention");
    let reports = export_attention(&model, &ds, &store, &pairs, &dir)?;
    for r in &reports {
        println!(
            "{} → {}: predicted {:.3}, actual {:.1}",
            r.user_id, r.item_id, r.predicted_rating, r.true_rating
        );
    }
    manifest.outputs = vec![dir];
    manifest.finish(&a.out)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let variant: Variant = a.variant.parse()?;
    if a.k == 0 || a.m == 0 || a.l == 0 || a.b == 0 {
        return Err(CliError::Usage("k, m, l and b must be positive".into()));
    }
    let start = Instant::now();
    let probe = Probe::random(&ProbeShape::new(variant, a.k, a.m, a.l, a.b), a.seed)?;
    let report = probe.grad_check(&GradCheckConfig {
        eps: a.eps,
        tol: a.tol,
        subset: None,
    })?;
    print!("{}", report.render_table());
    println!(
        "{} parameters, max relative error {:.3e}, {:.2}s",
        report.entries.len(),
        report.max_rel_error(),
        start.elapsed().as_secs_f64()
    );
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().iter().map(|f| f.name.as_str()).collect();
        Err(CliError::Numeric(format!("gradient check failed for {}", names.join(", "))))
    }
}
