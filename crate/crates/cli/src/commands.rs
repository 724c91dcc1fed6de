use std::fs;
use std::io::Write;
use std::path::Path;

use ascend_core::convert::{convert_exist, convert_mlsc, ExistTask};
use ascend_core::dataset::{
    infer_label_map, load_dataset, parse_posts, prepare_examples, to_jsonl, write_dataset,
};
use ascend_core::gradcheck::run_default_suite;
use ascend_core::perception::{EmotionLexicon, SentimentLexicon, ToxicityLexicon, ToxicitySidecar};
use ascend_core::train::{parse_key_values, sweep_csv};
use ascend_core::{
    clean_text, evaluate, load_embeddings, threshold_sweep, train, Checkpoint, Encoded, Error,
    Example, LabelMap, MaskMode, PerceptionExtractor, RawPost, SynthSpec, TaskMode, ToxicitySource,
    TrainConfig, Vocabulary,
};

use crate::{
    Cli, CliError, Command, ConvertSource, ExistTaskArg, LexiconArgs, ModeArg, TaskArg, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

const DEFAULT_SEED: u64 = 42;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| {
        CliError::Core(Error::Io {
            path: path.into(),
            source,
        })
    })
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|source| {
        CliError::Core(Error::Io {
            path: path.into(),
            source,
        })
    })
}

fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write(p, contents.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Usage(format!("stdout: {e}")))
        }
    }
}

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

/// Defaults, then the config file, then ASCEND_SEED / `--seed`, the global
/// mode/task flags, the per-command flags and finally `--set` overrides.
fn resolve_config(cli: &Cli, args: Option<&TrainArgs>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &cli.config {
        for (k, v) in parse_key_values(&read(path)?).map_err(usage)? {
            cfg.set(&k, &v).map_err(usage)?;
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.contrastive.mode = match mode {
            ModeArg::Hard => MaskMode::Hard,
            ModeArg::Soft => MaskMode::Soft,
        };
    }
    if let Some(task) = cli.task {
        cfg.task = task_mode(task);
    }
    if let Some(a) = args {
        let set = |cfg: &mut TrainConfig, k: &str, v: Option<String>| -> Result<()> {
            match v {
                Some(v) => cfg.set(k, &v).map_err(usage),
                None => Ok(()),
            }
        };
        set(&mut cfg, "epochs", a.epochs.map(|v| v.to_string()))?;
        set(&mut cfg, "batch_size", a.batch_size.map(|v| v.to_string()))?;
        set(
            &mut cfg,
            "learning_rate",
            a.learning_rate.map(|v| v.to_string()),
        )?;
        set(&mut cfg, "temperature", a.tau.map(|v| v.to_string()))?;
        set(&mut cfg, "threshold", a.theta.map(|v| v.to_string()))?;
        set(&mut cfg, "soft_width", a.beta.map(|v| v.to_string()))?;
        set(&mut cfg, "optimizer", a.optimizer.clone())?;
        if a.no_contrastive {
            cfg.use_contrastive = false;
        }
        if a.no_wla {
            cfg.use_wla = false;
        }
        for o in &a.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("`--set {o}`: expected KEY=VALUE")))?;
            cfg.set(k.trim(), v.trim()).map_err(usage)?;
        }
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn task_mode(t: TaskArg) -> TaskMode {
    match t {
        TaskArg::Multiclass => TaskMode::Multiclass,
        TaskArg::Multilabel => TaskMode::Multilabel,
    }
}

fn extractor(args: &LexiconArgs) -> Result<PerceptionExtractor> {
    let mut ex = PerceptionExtractor::default();
    if let Some(p) = &args.sentiment_lexicon {
        ex.sentiment = SentimentLexicon::load(p)?;
    }
    if let Some(p) = &args.emotion_lexicon {
        ex.emotion = EmotionLexicon::load(p)?;
    }
    if let Some(p) = &args.toxicity_lexicon {
        ex.toxicity = ToxicitySource::Lexicon(ToxicityLexicon::load(p)?);
    }
    if let Some(p) = &args.toxicity_sidecar {
        ex.toxicity = ToxicitySource::Sidecar(ToxicitySidecar::load(p)?);
    }
    Ok(ex)
}

fn read_posts(path: &Path) -> Result<Vec<RawPost>> {
    Ok(parse_posts(path, &read(path)?)?
        .into_iter()
        .map(|(_, p)| p)
        .collect())
}

/// Swaps token inputs for precomputed hidden states, matched by post id.
fn attach_embeddings(
    examples: &mut [Example],
    path: Option<&Path>,
    cfg: &TrainConfig,
) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let mut states = load_embeddings(path, cfg.max_len, cfg.hidden_dim)?;
    for ex in examples.iter_mut() {
        let h = states
            .remove(&ex.id)
            .ok_or_else(|| Error::MissingId(ex.id.clone()))?;
        ex.input = Encoded::Hidden(h);
    }
    Ok(())
}

fn build_vocabulary(posts: &[RawPost], min_freq: usize) -> Vocabulary {
    let cleaned: Vec<String> = posts.iter().map(|p| clean_text(&p.text)).collect();
    Vocabulary::build(cleaned.iter().map(String::as_str), min_freq)
}

struct Prepared {
    label_map: LabelMap,
    vocabulary: Vocabulary,
    examples: Vec<Example>,
}

fn prepare_training(
    data: &Path,
    cfg: &TrainConfig,
    min_freq: usize,
    lexicons: &LexiconArgs,
    embeddings: Option<&Path>,
) -> Result<Prepared> {
    let label_map = infer_label_map(data, cfg.task)?;
    if cfg.task == TaskMode::Multiclass && label_map.len() < 2 {
        return Err(Error::InvalidData(format!(
            "{}: multiclass training needs at least two distinct labels",
            data.display()
        ))
        .into());
    }
    let posts = load_dataset(data, &label_map)?;
    let vocabulary = build_vocabulary(&posts, min_freq);
    let mut examples = prepare_examples(
        &posts,
        &vocabulary,
        cfg.max_len,
        &extractor(lexicons)?,
        &label_map,
    )?;
    attach_embeddings(&mut examples, embeddings, cfg)?;
    Ok(Prepared {
        label_map,
        vocabulary,
        examples,
    })
}

fn resolve_seed(cli: &Cli) -> Result<u64> {
    match cli.seed {
        Some(s) => Ok(s),
        None if cli.config.is_some() => Ok(resolve_config(cli, None)?.seed),
        None => Ok(DEFAULT_SEED),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Clean { input, output } => {
            let posts: Vec<RawPost> = read_posts(input)?
                .into_iter()
                .map(|p| RawPost {
                    text: clean_text(&p.text),
                    ..p
                })
                .collect();
            emit(output.as_deref(), &to_jsonl(&posts))
        }
        Command::Featurize {
            input,
            output,
            lexicons,
        } => {
            let ex = extractor(lexicons)?;
            let mut out = String::new();
            for post in read_posts(input)? {
                let f = ex.perception_vector(&post)?;
                let row = serde_json::json!({ "id": post.id, "features": f.to_vec() });
                out.push_str(&row.to_string());
                out.push('\n');
            }
            emit(output.as_deref(), &out)
        }
        Command::SynthData {
            output,
            samples_per_label,
            noise,
            labels,
            tokens_per_sample,
            signal_vocab,
            noise_vocab,
        } => {
            let seed = resolve_seed(&cli)?;
            let spec = SynthSpec {
                labels: labels.clone(),
                mode: cli.task.map_or(TaskMode::Multiclass, task_mode),
                signal_vocab: *signal_vocab,
                noise_vocab: *noise_vocab,
                samples_per_label: *samples_per_label,
                tokens_per_sample: *tokens_per_sample,
                noise_ratio: *noise,
                seed,
            };
            spec.validate().map_err(usage)?;
            let posts = ascend_core::generate_synthetic(&spec)?;
            write_dataset(output, &posts)?;
            Ok(())
        }
        Command::Train {
            data,
            out_dir,
            embeddings,
            min_freq,
            lexicons,
            train: args,
        } => {
            let cfg = resolve_config(&cli, Some(args))?;
            let prepared =
                prepare_training(data, &cfg, *min_freq, lexicons, embeddings.as_deref())?;
            let outcome = train(
                &prepared.examples,
                &prepared.label_map,
                prepared.vocabulary.len(),
                &cfg,
            )?;
            fs::create_dir_all(out_dir).map_err(|source| {
                CliError::Core(Error::Io {
                    path: out_dir.clone(),
                    source,
                })
            })?;
            let checkpoint = Checkpoint {
                model: outcome.model,
                train_config: cfg,
                label_map: prepared.label_map,
                vocabulary: prepared.vocabulary,
            };
            checkpoint.save(&out_dir.join("model.ckpt"))?;
            write(
                &out_dir.join("train_log.csv"),
                outcome.log.to_csv().as_bytes(),
            )?;
            write(
                &out_dir.join("steps.csv"),
                outcome.log.steps_csv().as_bytes(),
            )?;
            Ok(())
        }
        Command::Eval {
            model,
            data,
            output,
            embeddings,
            lexicons,
        } => {
            let ck = Checkpoint::load(model)?;
            let posts = load_dataset(data, &ck.label_map)?;
            let cfg = &ck.train_config;
            let mut examples = prepare_examples(
                &posts,
                &ck.vocabulary,
                cfg.max_len,
                &extractor(lexicons)?,
                &ck.label_map,
            )?;
            attach_embeddings(&mut examples, embeddings.as_deref(), cfg)?;
            let report = evaluate(&ck.model, &examples, &ck.label_map)?;
            let mut json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
            json.push('\n');
            emit(output.as_deref(), &json)
        }
        Command::SweepTheta {
            train_data,
            eval_data,
            output,
            grid,
            min_freq,
            lexicons,
            train: args,
        } => {
            let cfg = resolve_config(&cli, Some(args))?;
            let prepared = prepare_training(train_data, &cfg, *min_freq, lexicons, None)?;
            let eval_posts = load_dataset(eval_data, &prepared.label_map)?;
            let eval_examples = prepare_examples(
                &eval_posts,
                &prepared.vocabulary,
                cfg.max_len,
                &extractor(lexicons)?,
                &prepared.label_map,
            )?;
            let rows = threshold_sweep(
                &prepared.examples,
                &eval_examples,
                &prepared.label_map,
                prepared.vocabulary.len(),
                &cfg,
                grid,
            )
            .map_err(|e| match e {
                Error::InvalidArgument(m) => CliError::Usage(m),
                other => CliError::Core(other),
            })?;
            let rows: Vec<_> = rows.into_iter().map(|(r, _)| r).collect();
            emit(output.as_deref(), &sweep_csv(&rows))
        }
        Command::Gradcheck { tolerance } => {
            let reports = run_default_suite(resolve_seed(&cli)?)?;
            let mut out = String::from("suite,group,parameters,relative_error\n");
            let mut worst: Option<(String, f64)> = None;
            for r in &reports {
                for g in &r.groups {
                    out.push_str(&format!(
                        "{},{},{},{:e}\n",
                        r.suite, g.name, g.len, g.relative_error
                    ));
                    if g.relative_error >= *tolerance
                        && worst.as_ref().is_none_or(|w| g.relative_error > w.1)
                    {
                        worst = Some((format!("{}::{}", r.suite, g.name), g.relative_error));
                    }
                }
            }
            emit(None, &out)?;
            match worst {
                None => Ok(()),
                Some((name, err)) => Err(CliError::Numeric(format!(
                    "gradient check failed: {name} relative error {err:e} >= {tolerance:e}"
                ))),
            }
        }
        Command::Convert { source } => match source {
            ConvertSource::Exist {
                input,
                output,
                exist_task,
                language,
            } => {
                let task = match exist_task {
                    ExistTaskArg::Task1 => ExistTask::Identification,
                    ExistTaskArg::Task2 => ExistTask::Categorization,
                };
                let posts = convert_exist(&read(input)?, task, language.as_deref())?;
                write_dataset(output, &posts)?;
                Ok(())
            }
            ConvertSource::Mlsc {
                input,
                train_output,
                test_output,
            } => {
                let split = convert_mlsc(&read(input)?, resolve_seed(&cli)?)?;
                for (path, name, posts) in [
                    (train_output, "train", &split.train),
                    (test_output, "test", &split.test),
                ] {
                    let body = format!("{}\n{}", split.header(name), to_jsonl(posts));
                    write(path, body.as_bytes())?;
                }
                Ok(())
            }
        },
    }
}
