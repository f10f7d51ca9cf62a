use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::Args;

use surgkit_core::annotations::{read_frames, synthetic_frames, to_canonical_line, FrameAnnotation, Schema};
use surgkit_core::cleaning::{
    apply_rules, compile_rules, corpus_digest, replay_log, sample_for_review, ChangeKind, FlagPolicy,
    PersistentSession, DEFAULT_RATIO, DEFAULT_RULE_THRESHOLD,
};
use surgkit_core::generation::{
    corpus_stats, derive_subtask_splits, generate_corpus, read_corpus, write_corpus, ConversationParadigm,
    EnrichmentClient, GenerationConfig, HttpEnricher, InstructionRecord, Numerals, StubEnricher, SubTask,
    TemplateSet,
};
use surgkit_core::metrics::{
    evaluate, read_references, read_transcript, EvalConfig, HttpJudge, JudgeClient, Metric, StubJudge,
};
use surgkit_review::{ReviewState, ServeOptions};

use crate::config::Config;
use crate::error::CliError;
use crate::files::{open, require, write_atomic, write_json};
use crate::Globals;

fn pick<T>(flag: Option<T>, config: Option<T>, what: &str) -> Result<T, CliError> {
    flag.or(config)
        .ok_or_else(|| CliError::Invalid(format!("{what} is required (flag or config file)")))
}

fn load_corpus(path: &Path) -> Result<Vec<InstructionRecord>, CliError> {
    let corpus = read_corpus(open(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    log::info!("{}: {} records", path.display(), corpus.len());
    Ok(corpus)
}

fn load_frames(path: &Path) -> Result<Vec<FrameAnnotation>, CliError> {
    let (frames, warnings) = read_frames(Schema::Canonical, open(path)?)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(frames)
}

fn write_records(path: &Path, records: &[InstructionRecord]) -> Result<(), CliError> {
    write_atomic(path, |w| write_corpus(w, records))
}

// ---- ingest -----------------------------------------------------------------

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Source layout: endovis, copesd, cholec80 or canonical.
    #[arg(long, default_value = "canonical")]
    schema: String,
    /// Line-delimited JSON annotations.
    #[arg(long, value_name = "FILE", conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    /// Emit N seeded synthetic frames instead of reading a file.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Canonical frame file to write (default: paths.frames).
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

pub fn ingest(a: IngestArgs, config: &Config) -> Result<(), CliError> {
    let output = pick(a.output, config.paths.frames.clone(), "--output")?;
    let frames = match (a.input, a.synthetic) {
        (Some(input), None) => {
            let schema: Schema = a.schema.parse().map_err(CliError::invalid)?;
            require(&input)?;
            let (frames, warnings) = read_frames(schema, open(&input)?)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", input.display())))?;
            for w in &warnings {
                log::warn!("{w}");
            }
            frames
        }
        (None, Some(n)) => synthetic_frames(n, a.seed.or(config.generation.seed).unwrap_or(0)),
        _ => return Err(CliError::Invalid("give exactly one of --input or --synthetic".into())),
    };
    write_atomic(&output, |w| {
        for f in &frames {
            writeln!(w, "{}", to_canonical_line(f))?;
        }
        Ok(())
    })?;
    log::info!("wrote {} frames to {}", frames.len(), output.display());
    Ok(())
}

// ---- generate ---------------------------------------------------------------

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Canonical frame file (default: paths.frames).
    #[arg(long, value_name = "FILE")]
    frames: Option<PathBuf>,
    /// Use N synthetic frames instead of a frame file.
    #[arg(long, value_name = "N", conflicts_with = "frames")]
    synthetic: Option<usize>,
    /// Tab-separated template file (default: built-in set).
    #[arg(long, value_name = "FILE")]
    templates: Option<PathBuf>,
    /// Corpus file to write (default: paths.corpus).
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-frame cap, e.g. `--cap single_phrase=3` (repeatable).
    #[arg(long = "cap", value_name = "PARADIGM=N")]
    caps: Vec<String>,
    /// Comma-separated paradigms to keep (default: all five).
    #[arg(long, value_delimiter = ',')]
    paradigms: Option<Vec<String>>,
    /// `stub` (deterministic) or `http`.
    #[arg(long)]
    enricher: Option<String>,
    #[arg(long, env = "SURGKIT_ENRICHER_URL", hide_env_values = true)]
    enricher_url: Option<String>,
    #[arg(long, env = "SURGKIT_ENRICHER_TOKEN", hide_env_values = true)]
    enricher_token: Option<String>,
    /// `words` or `digits` for instrument counts.
    #[arg(long)]
    numerals: Option<String>,
    /// Also group Visual QA pairs into conversations of N turns.
    #[arg(long, value_name = "N")]
    multi_turn: Option<usize>,
}

fn parse_paradigm(s: &str) -> Result<ConversationParadigm, CliError> {
    s.parse().map_err(CliError::invalid)
}

fn generation_config(a: &GenerateArgs, config: &Config) -> Result<GenerationConfig, CliError> {
    let g = &config.generation;
    let mut caps = BTreeMap::new();
    for (k, v) in &g.caps {
        caps.insert(parse_paradigm(k)?, *v);
    }
    for c in &a.caps {
        let (k, v) = c
            .split_once('=')
            .ok_or_else(|| CliError::Invalid(format!("--cap expects PARADIGM=N, got `{c}`")))?;
        let n: usize = v.trim().parse().map_err(|_| CliError::Invalid(format!("bad cap `{c}`")))?;
        caps.insert(parse_paradigm(k)?, n);
    }
    let paradigms = match a.paradigms.as_ref().or(g.paradigms.as_ref()) {
        Some(list) => list.iter().map(|p| parse_paradigm(p)).collect::<Result<BTreeSet<_>, _>>()?,
        None => ConversationParadigm::ALL.into_iter().collect(),
    };
    let numerals = match a.numerals.as_deref().or(g.numerals.as_deref()).unwrap_or("words") {
        "words" => Numerals::Words,
        "digits" => Numerals::Digits,
        other => return Err(CliError::Invalid(format!("--numerals must be words or digits, got `{other}`"))),
    };
    Ok(GenerationConfig {
        seed: a.seed.or(g.seed).unwrap_or(0),
        numerals,
        caps,
        paradigms,
        multi_turn: a.multi_turn.or(g.multi_turn),
    })
}

fn enricher(a: &GenerateArgs, config: &Config) -> Result<Box<dyn EnrichmentClient>, CliError> {
    match a.enricher.as_deref().or(config.generation.enricher.as_deref()).unwrap_or("stub") {
        "stub" => Ok(Box::new(StubEnricher)),
        "http" => {
            let url = a
                .enricher_url
                .clone()
                .ok_or_else(|| CliError::Invalid("the http enricher needs --enricher-url or SURGKIT_ENRICHER_URL".into()))?;
            Ok(Box::new(HttpEnricher::new(url, a.enricher_token.clone()).map_err(CliError::invalid)?))
        }
        other => Err(CliError::Invalid(format!("--enricher must be stub or http, got `{other}`"))),
    }
}

pub fn generate(a: GenerateArgs, config: &Config) -> Result<(), CliError> {
    let output = pick(a.output.clone(), config.paths.corpus.clone(), "--output")?;
    let gen_config = generation_config(&a, config)?;
    let templates = match a.templates.as_ref().or(config.paths.templates.as_ref()) {
        Some(p) => {
            TemplateSet::read(open(p)?).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?
        }
        None => TemplateSet::builtin(),
    };
    let frames = match a.synthetic {
        Some(n) => synthetic_frames(n, gen_config.seed),
        None => {
            let path = pick(a.frames.clone(), config.paths.frames.clone(), "--frames")?;
            require(&path)?;
            load_frames(&path)?
        }
    };
    let client = enricher(&a, config)?;
    let generated = generate_corpus(&frames, &templates, &gen_config, client.as_ref()).map_err(CliError::invalid)?;
    for w in &generated.warnings {
        log::warn!("{w}");
    }
    write_records(&output, &generated.value)?;
    log::info!(
        "wrote {} records from {} frames to {}",
        generated.value.len(),
        frames.len(),
        output.display()
    );
    Ok(())
}

// ---- stats ------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Corpus file (default: paths.corpus).
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Write one corpus file per sub-task set into DIR.
    #[arg(long, value_name = "DIR")]
    splits: Option<PathBuf>,
}

pub fn stats(a: StatsArgs, config: &Config) -> Result<(), CliError> {
    let path = pick(a.corpus, config.paths.corpus.clone(), "--corpus")?;
    require(&path)?;
    let corpus = load_corpus(&path)?;
    let s = corpus_stats(&corpus);
    let mut out = std::io::stdout().lock();
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    if a.json {
        serde_json::to_writer_pretty(&mut out, &s).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(out).map_err(io)?;
    } else {
        writeln!(out, "frames\t{}", s.frames).map_err(io)?;
        writeln!(out, "records\t{}", s.records).map_err(io)?;
        writeln!(out, "qa_pairs\t{}", s.qa_pairs).map_err(io)?;
        writeln!(out, "box_records\t{}", s.box_records).map_err(io)?;
        for (p, n) in &s.per_paradigm {
            writeln!(out, "paradigm:{}\t{n}", p.display_name()).map_err(io)?;
        }
        for (t, n) in &s.per_subtask {
            writeln!(out, "subtask:{}\t{n}", t.code()).map_err(io)?;
        }
        for (src, n) in &s.per_source {
            writeln!(out, "source:{src}\t{n}").map_err(io)?;
        }
    }
    if let Some(dir) = a.splits {
        let splits = derive_subtask_splits(&corpus).map_err(CliError::invalid)?;
        for t in SubTask::ALL {
            let recs = splits.buckets.get(&t).map(Vec::as_slice).unwrap_or(&[]);
            write_records(&dir.join(format!("{}.jsonl", t.code())), recs)?;
        }
        write_records(&dir.join("remainder.jsonl"), &splits.remainder)?;
        log::info!("wrote sub-task splits to {}", dir.display());
    }
    Ok(())
}

// ---- review-serve -----------------------------------------------------------

fn parse_policy(flag: Option<&str>, config: &Config) -> Result<FlagPolicy, CliError> {
    match flag.or(config.cleaning.flag_policy.as_deref()).unwrap_or("drop") {
        "drop" => Ok(FlagPolicy::Drop),
        "repair" => Ok(FlagPolicy::Repair),
        other => Err(CliError::Invalid(format!("--flag-policy must be drop or repair, got `{other}`"))),
    }
}

#[derive(Debug, Args)]
pub struct ReviewArgs {
    /// Corpus file (default: paths.corpus).
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Decision log; created on first run, resumed afterwards (default: paths.review_log).
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
    /// Directory of frame images, looked up by frame id (default: paths.images).
    #[arg(long, value_name = "DIR")]
    images: Option<PathBuf>,
    /// Canonical frame file whose image paths take precedence.
    #[arg(long, value_name = "FILE")]
    frames: Option<PathBuf>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// 0 picks a free port; the bound address is printed on stdout.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Require `Authorization: Bearer <token>`.
    #[arg(long, env = "SURGKIT_REVIEW_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Directory that finalize writes the cleaned corpus and rules to (default: paths.output).
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
    #[arg(long)]
    rule_threshold: Option<usize>,
    /// `drop` or `repair` for flagged records.
    #[arg(long)]
    flag_policy: Option<String>,
}

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "gif", "webp"];

/// Map frame ids to image files: every image under `dir` keyed by its
/// relative path without extension, then explicit frame image paths.
fn index_images(
    dir: Option<&Path>,
    frames: &[FrameAnnotation],
) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let mut out = BTreeMap::new();
    if let Some(dir) = dir {
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).map_err(|e| CliError::io(&d, e))? {
                let path = entry.map_err(|e| CliError::io(&d, e))?.path();
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
                if !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
                    continue;
                }
                let rel = path.strip_prefix(dir).unwrap_or(&path).with_extension("");
                let key: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
                out.insert(key.join("/"), path);
            }
        }
    }
    for f in frames {
        let p = PathBuf::from(&f.image_path);
        let p = match dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p,
        };
        if p.is_file() {
            out.insert(f.frame_id.clone(), p);
        }
    }
    Ok(out)
}

pub fn review_serve(a: ReviewArgs, config: &Config, globals: &Globals) -> Result<(), CliError> {
    let corpus_path = pick(a.corpus, config.paths.corpus.clone(), "--corpus")?;
    let log_path = pick(a.log, config.paths.review_log.clone(), "--log")?;
    require(&corpus_path)?;
    let images_dir = a.images.or(config.paths.images.clone());
    if let Some(d) = &images_dir {
        require(d)?;
    }
    let ratio = a.ratio.or(config.cleaning.ratio).unwrap_or(DEFAULT_RATIO);
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(CliError::Invalid(format!("--ratio must lie in (0, 1], got {ratio}")));
    }
    let frames = match &a.frames {
        Some(p) => {
            require(p)?;
            load_frames(p)?
        }
        None => vec![],
    };
    let corpus = load_corpus(&corpus_path)?;
    let session = if log_path.exists() {
        let s = PersistentSession::resume(&log_path, &corpus_digest(&corpus))?;
        log::info!(
            "resumed {}: {} of {} decided",
            log_path.display(),
            s.session().decisions.len(),
            s.session().sample.len()
        );
        s
    } else {
        let seed = a.seed.or(config.cleaning.seed).unwrap_or(0);
        let sampled = sample_for_review(&corpus, ratio, seed)?;
        log::info!("sampled {} of {} records (seed {seed})", sampled.sample.len(), corpus.len());
        PersistentSession::create(&log_path, sampled)?
    };
    let images = index_images(images_dir.as_deref(), &frames)?;
    let options = ServeOptions {
        token: a.token,
        rule_threshold: a.rule_threshold.or(config.cleaning.rule_threshold).unwrap_or(DEFAULT_RULE_THRESHOLD),
        flag_policy: parse_policy(a.flag_policy.as_deref(), config)?,
        output: a.output.or(config.paths.output.clone()),
    };
    let state = ReviewState::new(session, corpus, images, options).map_err(CliError::invalid)?;
    let router = surgkit_review::app(state);

    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = globals.jobs {
        rt.worker_threads(n);
    }
    let rt = rt.enable_all().build().map_err(|e| CliError::Io(e.to_string()))?;
    rt.block_on(async {
        let (listener, addr) = surgkit_review::bind(SocketAddr::new(a.host, a.port))
            .await
            .map_err(|e| CliError::Io(format!("bind {}:{}: {e}", a.host, a.port)))?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        log::info!("review API on http://{addr}/api/session");
        tokio::select! {
            r = surgkit_review::serve(listener, router) => r.map_err(|e| CliError::Io(e.to_string())),
            _ = tokio::signal::ctrl_c() => {
                log::info!("shutting down");
                Ok(())
            }
        }
    })
}

// ---- apply-clean ------------------------------------------------------------

#[derive(Debug, Args)]
pub struct CleanArgs {
    /// Corpus file (default: paths.corpus).
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Decision log written by review-serve (default: paths.review_log).
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
    /// Cleaned corpus to write.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Also write the change log as JSON.
    #[arg(long, value_name = "FILE")]
    changes: Option<PathBuf>,
    /// Also write the compiled rules as JSON.
    #[arg(long, value_name = "FILE")]
    rules: Option<PathBuf>,
    #[arg(long)]
    rule_threshold: Option<usize>,
    /// `drop` or `repair` for flagged records.
    #[arg(long)]
    flag_policy: Option<String>,
}

pub fn apply_clean(a: CleanArgs, config: &Config) -> Result<(), CliError> {
    let corpus_path = pick(a.corpus, config.paths.corpus.clone(), "--corpus")?;
    let log_path = pick(a.log, config.paths.review_log.clone(), "--log")?;
    require(&corpus_path)?;
    require(&log_path)?;
    let policy = parse_policy(a.flag_policy.as_deref(), config)?;
    let threshold = a.rule_threshold.or(config.cleaning.rule_threshold).unwrap_or(DEFAULT_RULE_THRESHOLD);
    let corpus = load_corpus(&corpus_path)?;
    let session = replay_log(open(&log_path)?)?;
    let digest = corpus_digest(&corpus);
    if session.corpus_digest != digest {
        return Err(CliError::Invalid(format!(
            "{} was recorded against a different corpus",
            log_path.display()
        )));
    }
    if !session.is_complete() {
        log::warn!(
            "{} of {} sampled records are undecided and stay unchanged",
            session.sample.len() - session.decisions.len(),
            session.sample.len()
        );
    }
    let rules = compile_rules(&session, &corpus, threshold);
    let (cleaned, changes) = apply_rules(&corpus, &rules, &session, policy);
    write_records(&a.output, &cleaned)?;
    if let Some(p) = &a.changes {
        write_json(p, &changes)?;
    }
    if let Some(p) = &a.rules {
        write_json(p, &rules)?;
    }
    println!("records_in\t{}", corpus.len());
    println!("records_out\t{}", cleaned.len());
    println!("rules\t{}", rules.len());
    for (name, kind) in [
        ("edited", ChangeKind::Edited),
        ("dropped", ChangeKind::Dropped),
        ("replaced", ChangeKind::Replaced),
        ("dropped_by_rule", ChangeKind::DroppedByRule),
    ] {
        println!("{name}\t{}", changes.count(kind));
    }
    println!("conflicts\t{}", changes.conflicts.len());
    Ok(())
}

// ---- eval -------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions, one `{"record_id", "text"}` object per line.
    #[arg(long, value_name = "FILE")]
    transcript: PathBuf,
    /// Reference corpus or flat reference lines (default: paths.corpus).
    #[arg(long, value_name = "FILE")]
    references: Option<PathBuf>,
    /// Comma-separated metric subset, e.g. `BLEU-4,CIDEr,mIoU`.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// `stub` or `http`.
    #[arg(long)]
    judge: Option<String>,
    #[arg(long, env = "SURGKIT_JUDGE_URL", hide_env_values = true)]
    judge_url: Option<String>,
    #[arg(long, env = "SURGKIT_JUDGE_TOKEN", hide_env_values = true)]
    judge_token: Option<String>,
    /// Largest tolerated fraction of ids without a counterpart.
    #[arg(long)]
    max_unmatched: Option<f64>,
    /// Write the full JSON report here.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    json: bool,
}

fn judge(a: &EvalArgs, config: &Config) -> Result<Box<dyn JudgeClient>, CliError> {
    match a.judge.as_deref().or(config.eval.judge.as_deref()).unwrap_or("stub") {
        "stub" => Ok(Box::new(StubJudge)),
        "http" => {
            let url = a
                .judge_url
                .clone()
                .ok_or_else(|| CliError::Invalid("the http judge needs --judge-url or SURGKIT_JUDGE_URL".into()))?;
            Ok(Box::new(HttpJudge::new(url, a.judge_token.clone()).map_err(CliError::invalid)?))
        }
        other => Err(CliError::Invalid(format!("--judge must be stub or http, got `{other}`"))),
    }
}

pub fn eval(a: EvalArgs, config: &Config) -> Result<(), CliError> {
    let refs_path = pick(a.references.clone(), config.paths.corpus.clone(), "--references")?;
    require(&a.transcript)?;
    require(&refs_path)?;
    let metrics = match a.metrics.as_ref().or(config.eval.metrics.as_ref()) {
        Some(list) => Some(
            list.iter()
                .map(|m| m.parse::<Metric>().map_err(CliError::Invalid))
                .collect::<Result<BTreeSet<_>, _>>()?,
        ),
        None => None,
    };
    let max_unmatched = a.max_unmatched.or(config.eval.max_unmatched).unwrap_or(0.1);
    if !(0.0..=1.0).contains(&max_unmatched) {
        return Err(CliError::Invalid(format!("--max-unmatched must lie in [0, 1], got {max_unmatched}")));
    }
    let judge = judge(&a, config)?;
    let transcript = read_transcript(open(&a.transcript)?)?;
    let references = read_references(open(&refs_path)?)?;
    let report = evaluate(
        &transcript,
        &references,
        &EvalConfig { metrics, max_unmatched },
        judge.as_ref(),
    )?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if !report.unmatched.is_empty() {
        log::warn!("{} record ids unmatched", report.unmatched.len());
    }
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    let mut out = std::io::stdout().lock();
    let res = if a.json {
        serde_json::to_writer_pretty(&mut out, &report)
            .map_err(std::io::Error::other)
            .and_then(|_| writeln!(out))
    } else {
        write!(out, "{}", report.to_table())
    };
    res.map_err(|e| CliError::Io(e.to_string()))
}
