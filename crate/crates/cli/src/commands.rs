//! Subcommand implementations.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use newsrec_core::compose::{
    compose, tokenize, CompositionMode, CorpusHeader, CorpusRecord, CORPUS_SCHEMA,
};
use newsrec_core::describe::{
    corpus_word_stats, generate_all, DescriptionCache, FixtureClient, GenerateOptions,
    HttpClientConfig, HttpLlmClient, LlmClient, RetryPolicy, MEAN_WORDS_ADVISORY,
};
use newsrec_core::metrics::evaluate as run_evaluation;
use newsrec_core::mind::{
    build_category_vocab, dataset_stats, group_thousands, parse_behaviors, parse_news,
    DatasetStats, Impression, NewsCatalog, REFERENCE_STATS,
};
use newsrec_core::model::{load_checkpoint, save_checkpoint, ModelConfig};
use newsrec_core::train::{build_tokenizer, fit, FitData};

use crate::manifest::ManifestBuilder;
use crate::{EvaluateArgs, GenerateArgs, PreprocessArgs, StatsArgs, TrainArgs};

fn read_news(path: &Path) -> anyhow::Result<NewsCatalog> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let catalog = parse_news(BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))?;
    if catalog.duplicates_skipped > 0 {
        eprintln!(
            "warning: {} duplicate news ids skipped (first occurrence kept)",
            catalog.duplicates_skipped
        );
    }
    Ok(catalog)
}

fn read_behaviors(path: &Path) -> anyhow::Result<Vec<Impression>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_behaviors(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn manifest_sibling(out_file: &Path) -> PathBuf {
    let stem = out_file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    out_file.with_file_name(format!("{stem}.manifest.json"))
}

pub fn generate_descriptions(args: GenerateArgs) -> anyhow::Result<()> {
    let catalog = read_news(&args.news)?;
    let vocab = build_category_vocab(&catalog.articles);
    println!("catalog: {} articles, {} category keys", catalog.len(), vocab.len());

    let client: Box<dyn LlmClient> = match &args.fixture {
        Some(path) => Box::new(
            FixtureClient::from_file(path)
                .map_err(|e| anyhow::anyhow!("{e}"))
                .with_context(|| format!("loading fixture {}", path.display()))?,
        ),
        None => Box::new(
            HttpLlmClient::from_env(HttpClientConfig {
                base_url: args.base_url.clone(),
                model: args.model.clone(),
                api_key_env: args.api_key_env.clone(),
                ..Default::default()
            })
            .map_err(|e| anyhow::anyhow!("{e}; pass --fixture for an offline run"))?,
        ),
    };

    let manifest = ManifestBuilder::start(
        "generate-descriptions",
        serde_json::json!({
            "model": args.model,
            "force": args.force,
            "concurrency": args.concurrency,
            "max_attempts": args.max_attempts,
            "source": if args.fixture.is_some() { "fixture" } else { "live" },
        }),
    )
    .input(&args.news)?
    .input_optional(args.fixture.as_deref())?;

    let mut cache = DescriptionCache::open(&args.out)?;
    let min_request_interval = match args.rps {
        Some(rps) if rps > 0.0 => Some(std::time::Duration::from_secs_f64(1.0 / rps)),
        Some(_) => bail!("--rps must be positive"),
        None => None,
    };
    let options = GenerateOptions {
        force: args.force,
        concurrency: args.concurrency,
        min_request_interval,
        retry: RetryPolicy {
            max_attempts: args.max_attempts,
            ..RetryPolicy::default()
        },
    };
    let report = generate_all(&vocab, client.as_ref(), &mut cache, &options)
        .with_context(|| "description generation failed; completed keys were persisted")?;

    let mean = corpus_word_stats(&cache)?;
    println!(
        "{} descriptions ({} newly generated, {} cached); mean word count {mean:.1}",
        cache.len(),
        report.generated,
        report.from_cache
    );
    let (lo, hi) = MEAN_WORDS_ADVISORY;
    if mean < lo || mean > hi {
        println!(
            "note: mean word count {mean:.1} falls outside the advisory range [{lo}, {hi}]; \
             the prompt asks for about 50 words"
        );
    }

    let manifest_path = manifest_sibling(&args.out);
    manifest
        .write_file(&manifest_path, vec![args.out.clone()])
        .context("writing manifest")?;
    Ok(())
}

pub fn preprocess(args: PreprocessArgs) -> anyhow::Result<()> {
    let catalog = read_news(&args.news)?;
    let mode: CompositionMode = args.mode.into();
    let descriptions = load_descriptions(args.descriptions.as_deref(), mode)?;

    let mut config = ModelConfig {
        mode,
        plm_name: args.plm.as_str().to_string(),
        ..Default::default()
    };
    if let Some(max_len) = args.max_len {
        config.max_len_title = max_len;
        config.max_len_augmented = max_len;
    }
    config.validate().map_err(|e| anyhow::anyhow!("{e}"))?;

    let (tokenizer, _) = build_tokenizer(&config, &catalog, &descriptions, args.vocab.as_deref())
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let max_len = config.effective_max_len();

    let mut records = Vec::with_capacity(catalog.len());
    for article in catalog.iter() {
        let composed = compose(article, mode, &descriptions, tokenizer.sep_surface())
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let encoded =
            tokenize(&composed, tokenizer.as_ref(), max_len).map_err(|e| anyhow::anyhow!("{e}"))?;
        records.push(CorpusRecord {
            news_id: composed.news_id,
            full_text: composed.full_text,
            token_ids: encoded.token_ids,
        });
    }

    let header = CorpusHeader {
        schema: CORPUS_SCHEMA.to_string(),
        tokenizer: tokenizer.name().to_string(),
        mode,
        max_len,
    };
    let out = File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    newsrec_core::compose::write_corpus(std::io::BufWriter::new(out), &header, &records)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    println!(
        "wrote {} records to {} (tokenizer {}, mode {mode}, max_len {max_len})",
        records.len(),
        args.out.display(),
        header.tokenizer
    );

    ManifestBuilder::start(
        "preprocess",
        serde_json::json!({
            "mode": mode.as_str(),
            "plm": args.plm.as_str(),
            "max_len": max_len,
        }),
    )
    .input(&args.news)?
    .input_optional(args.descriptions.as_deref())?
    .input_optional(args.vocab.as_deref())?
    .write_file(&manifest_sibling(&args.out), vec![args.out.clone()])?;
    Ok(())
}

fn load_descriptions(
    path: Option<&Path>,
    mode: CompositionMode,
) -> anyhow::Result<DescriptionCache> {
    match path {
        Some(p) => {
            if !p.exists() {
                bail!("description cache {} does not exist", p.display());
            }
            Ok(DescriptionCache::open(p)?)
        }
        None if mode == CompositionMode::TitleGenerated => {
            bail!("generated mode needs --descriptions pointing at a cache file")
        }
        None => Ok(DescriptionCache::in_memory()),
    }
}

fn assemble_train_config(args: &TrainArgs) -> anyhow::Result<ModelConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str::<ModelConfig>(&raw)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => ModelConfig::default(),
    };
    if let Some(mode) = args.mode {
        config.mode = mode.into();
    }
    if let Some(arch) = args.arch {
        config.arch = arch.into();
    }
    if let Some(plm) = args.plm {
        config.plm_name = plm.as_str().to_string();
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs as usize;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(batch_size) = args.batch_size {
        config.batch_size = batch_size;
    }
    if let Some(lr) = args.lr {
        config.lr = lr;
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    if args.frozen_plm {
        config.frozen_plm = true;
    }
    config.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(config)
}

pub fn train(args: TrainArgs) -> anyhow::Result<()> {
    let config = assemble_train_config(&args)?;
    let descriptions = load_descriptions(args.descriptions.as_deref(), config.mode)?;
    let catalog = read_news(&args.news)?;
    let impressions = read_behaviors(&args.behaviors)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let manifest = ManifestBuilder::start("train", serde_json::to_value(&config)?)
        .seed(config.seed)
        .input(&args.news)?
        .input(&args.behaviors)?
        .input_optional(args.descriptions.as_deref())?
        .input_optional(args.config.as_deref())?
        .input_optional(args.vocab.as_deref())?;

    let report_path = args.out.join("report.jsonl");
    let mut report_file = File::create(&report_path)
        .with_context(|| format!("creating {}", report_path.display()))?;
    let embed_descriptions = (config.mode == CompositionMode::TitleGenerated)
        .then_some(&descriptions);

    let mut outputs = vec![report_path.clone()];
    let out_dir = args.out.clone();
    let fit_data = FitData {
        catalog: &catalog,
        impressions: &impressions,
        descriptions: &descriptions,
        wordpiece_vocab: args.vocab.as_deref(),
    };
    let outcome = fit(&config, &fit_data, |record, model, tokenizer_spec| {
        writeln!(
            report_file,
            "{}",
            serde_json::to_string(record).expect("epoch record serializes")
        )?;
        println!(
            "epoch {}/{}: mean loss {:.4} over {} samples ({:.1}s)",
            record.epoch, config.epochs, record.mean_loss, record.samples, record.wall_time_s
        );
        let checkpoint_dir = out_dir.join(format!("epoch-{}", record.epoch));
        save_checkpoint(&checkpoint_dir, model, tokenizer_spec, embed_descriptions)?;
        Ok(())
    })
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    for epoch in 1..=config.epochs {
        outputs.push(args.out.join(format!("epoch-{epoch}")));
    }

    let final_dir = args.out.join("final");
    save_checkpoint(
        &final_dir,
        &outcome.model,
        &outcome.tokenizer_spec,
        embed_descriptions,
    )?;
    outputs.push(final_dir.clone());

    let report_json = args.out.join("train_report.json");
    std::fs::write(&report_json, serde_json::to_string_pretty(&outcome.report)?)?;
    outputs.push(report_json);

    if outcome.report.skipped_no_negative > 0 || outcome.report.skipped_unknown_news > 0 {
        println!(
            "skipped impressions: {} without negatives, {} referencing unknown news",
            outcome.report.skipped_no_negative, outcome.report.skipped_unknown_news
        );
    }
    println!(
        "trained {} ({} mode, {}) for {} epochs in {:.1}s; final checkpoint at {}",
        config.arch,
        config.mode,
        config.plm_name,
        config.epochs,
        outcome.report.wall_time_s,
        final_dir.display()
    );
    manifest.write(&args.out, outputs)?;
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let (model, tokenizer, embedded_descriptions) = load_checkpoint(&args.checkpoint)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    // Composition mode comes from the checkpoint sidecar, so evaluation
    // cannot diverge from the training-time composition.
    let mode = model.config.mode;
    let descriptions = match embedded_descriptions {
        Some(cache) => cache,
        None if mode == CompositionMode::TitleGenerated => {
            bail!(
                "checkpoint {} was trained in generated mode but carries no descriptions.json",
                args.checkpoint.display()
            )
        }
        None => DescriptionCache::in_memory(),
    };

    let catalog = read_news(&args.news)?;
    let impressions = read_behaviors(&args.behaviors)?;
    let report = run_evaluation(&model, tokenizer.as_ref(), &catalog, &impressions, &descriptions)
        .map_err(|e| anyhow::anyhow!("{e}"))?;

    print!("{}", report.to_table());
    println!(
        "scored {} impressions; skipped {} ({} degenerate, {} unknown news); mode {mode}, arch {}",
        report.n_scored,
        report.n_skipped,
        report.n_skipped_degenerate,
        report.n_skipped_unknown_news,
        model.config.arch
    );

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let metrics_path = out.join("metrics.json");
        std::fs::write(&metrics_path, serde_json::to_string_pretty(&report)?)?;
        ManifestBuilder::start(
            "evaluate",
            serde_json::json!({
                "checkpoint": args.checkpoint.display().to_string(),
                "mode": mode.as_str(),
                "arch": model.config.arch.as_str(),
            }),
        )
        .seed(model.config.seed)
        .input(&args.news)?
        .input(&args.behaviors)?
        .write(out, vec![metrics_path])?;
    }
    Ok(())
}

pub fn stats(args: StatsArgs) -> anyhow::Result<()> {
    let catalog = read_news(&args.news)?;
    let impressions = read_behaviors(&args.behaviors)?;
    let stats = dataset_stats(&catalog, &impressions);

    print!("{}", stats.to_text());
    println!("{}", summary_line(&stats));
    if stats == REFERENCE_STATS {
        println!("counts match the published reference table");
    } else {
        println!(
            "note: counts differ from the published reference table ({}); informational only",
            summary_line(&REFERENCE_STATS)
        );
    }

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let stats_path = out.join("stats.json");
        std::fs::write(&stats_path, serde_json::to_string_pretty(&stats)?)?;
        ManifestBuilder::start("stats", serde_json::json!({}))
            .input(&args.news)?
            .input(&args.behaviors)?
            .write(out, vec![stats_path])?;
    }
    Ok(())
}

fn summary_line(stats: &DatasetStats) -> String {
    format!(
        "{} / {} / {} / {}",
        group_thousands(stats.n_users),
        group_thousands(stats.n_news),
        group_thousands(stats.n_impressions),
        group_thousands(stats.n_clicks)
    )
}
