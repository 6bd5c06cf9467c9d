use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sentinel_core::bench::{
    emit_frontier, run_bench, runs_table, synthetic_bench_data, Axis, BenchConfig, BenchError, BenchOptions,
    ThresholdPolicy,
};
use sentinel_core::calibration::{calibrate, embed_samples, evaluate, EvaluationReport};
use sentinel_core::canon::{canonicalize_bytes, ContainerReader};
use sentinel_core::datasets::{
    generate_synthetic, holdout, load_corpus, parse_csic_text, pseudo_anomalies, split, write_labeled_container,
    CorpusFormat, LabeledRequest, PayloadTable,
};
use sentinel_core::detector::{Detector, Label, ProfileSet};
use sentinel_core::embedding::{load_model, save_model, EmbeddingModel};
use sentinel_core::index::{load_index, save_index};
use sentinel_core::pipeline::{bench_data, build_index, classify_all, train_language_model, PipelineError};
use sentinel_core::{AbstractionSchema, AnnIndex, Profiles, RequestDetector};
use serde_json::json;

use crate::error::{reading, writing, CliError, CliResult};
use crate::manifest::{default_path, RunManifest};
use crate::settings::Settings;
use crate::{ArtifactArgs, Cli, Command, CorpusArgs, Format, InputFormat, Part};

/// Records classified per parallel batch.
const BATCH: usize = 4096;

struct Ctx {
    settings: Settings,
    schema: AbstractionSchema,
    schema_path: Option<PathBuf>,
    config_path: Option<PathBuf>,
    manifest_path: Option<PathBuf>,
}

impl Ctx {
    fn manifest(&self, command: &str, args: serde_json::Value) -> CliResult<RunManifest> {
        let mut m = RunManifest::new(
            command,
            self.settings.seed,
            json!({ "settings": self.settings, "args": args }),
        )?;
        if let Some(p) = &self.config_path {
            m.input(p)?;
        }
        if let Some(p) = &self.schema_path {
            m.input(p)?;
        }
        Ok(m)
    }

    /// Writes the manifest next to `primary`, or to `--manifest` when given.
    fn finish(&self, m: &RunManifest, primary: Option<&Path>) -> CliResult<()> {
        match (&self.manifest_path, primary) {
            (Some(p), _) => m.write(p),
            (None, Some(p)) => m.write(&default_path(p)),
            (None, None) => Ok(()),
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let g = cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(CliError::internal)?;
    }
    let settings = Settings::load(g.config.as_deref())?.with_seed(g.seed);
    let schema = match &g.schema {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            AbstractionSchema::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => AbstractionSchema::default(),
    };
    let ctx = Ctx {
        settings,
        schema,
        schema_path: g.schema,
        config_path: g.config,
        manifest_path: g.manifest,
    };
    match cli.command {
        Command::TrainLm { corpus, out } => train_lm(&ctx, &corpus, &out),
        Command::Build { model, corpus, out } => build(&ctx, &model, &corpus, &out),
        Command::Calibrate { artifacts, corpus, out, report, exhaustive_k, pseudo_anomalies } => {
            calibrate_cmd(&ctx, &artifacts, &corpus, &out, report.as_deref(), exhaustive_k, pseudo_anomalies)
        }
        Command::Classify { artifacts, profiles, input, input_format } => {
            classify(&ctx, &artifacts, &profiles, input.as_deref(), input_format)
        }
        Command::Evaluate { artifacts, profiles, corpus, report } => {
            evaluate_cmd(&ctx, &artifacts, &profiles, &corpus, report.as_deref())
        }
        Command::Bench {
            bench,
            corpus,
            format,
            model,
            out_dir,
            k,
            threshold,
            no_recall,
            synthetic_endpoints,
            synthetic_train,
            synthetic_dim,
        } => bench_cmd(
            &ctx,
            &BenchArgs {
                bench,
                corpus,
                format,
                model,
                out_dir,
                k,
                threshold,
                recall: !no_recall,
                synthetic: (synthetic_endpoints, synthetic_train, synthetic_dim),
            },
        ),
        Command::Canonicalize { input, input_format } => canonicalize(&ctx, input.as_deref(), input_format),
        Command::Synth { out, endpoints, normals, anomalies } => synth(&ctx, &out, endpoints, normals, anomalies),
    }
}

fn core_format(f: Format) -> CorpusFormat {
    match f {
        Format::Csic => CorpusFormat::Csic,
        Format::Atrdf => CorpusFormat::Atrdf,
        Format::Container => CorpusFormat::Container,
    }
}

fn corpus_json(c: &CorpusArgs) -> serde_json::Value {
    json!({
        "corpus": c.corpus,
        "format": format!("{:?}", c.format).to_lowercase(),
        "part": format!("{:?}", c.part).to_lowercase(),
    })
}

fn load_requests(path: &Path, format: Format) -> CliResult<Vec<LabeledRequest>> {
    if !path.exists() {
        return Err(CliError::Data(format!("{}: no such file or directory", path.display())));
    }
    let corpus = load_corpus(path, core_format(format)).map_err(CliError::data)?;
    if corpus.skipped > 0 {
        eprintln!("warning: {} malformed requests skipped", corpus.skipped);
    }
    Ok(corpus.requests)
}

fn select_part(ctx: &Ctx, requests: Vec<LabeledRequest>, part: Part) -> CliResult<Vec<LabeledRequest>> {
    if part == Part::All {
        return Ok(requests);
    }
    let parts = split(&requests, &ctx.settings.split_spec()).map_err(CliError::data)?;
    Ok(match part {
        Part::All => unreachable!(),
        Part::Train => parts.train,
        Part::Test => parts.test,
        Part::Calibration | Part::Evaluation => {
            let h = holdout(&parts.test, ctx.settings.split.calibration_fraction, ctx.settings.seed)
                .map_err(CliError::data)?;
            if part == Part::Calibration {
                h.train
            } else {
                h.test
            }
        }
    })
}

fn load_part(ctx: &Ctx, args: &CorpusArgs, m: &mut RunManifest) -> CliResult<Vec<LabeledRequest>> {
    let requests = load_requests(&args.corpus, args.format)?;
    m.input(&args.corpus)?;
    select_part(ctx, requests, args.part)
}

fn pipeline_error(e: PipelineError) -> CliError {
    match e {
        PipelineError::AnomalyInTraining(_) | PipelineError::NoTrainingData => CliError::data(e),
        PipelineError::Embedding(sentinel_core::embedding::EmbeddingError::InvalidConfig(_)) => CliError::config(e),
        PipelineError::Index(sentinel_core::index::IndexError::InvalidConfig(_)) => CliError::config(e),
        PipelineError::Embedding(sentinel_core::embedding::EmbeddingError::EmptyCorpus { .. }) => CliError::data(e),
        _ => CliError::internal(e),
    }
}

fn open_model(path: &Path, m: &mut RunManifest) -> CliResult<EmbeddingModel> {
    let model = load_model(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    m.input(path)?;
    Ok(model)
}

fn open_index(path: &Path, m: &mut RunManifest) -> CliResult<AnnIndex> {
    let index = load_index(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    m.input(path)?;
    Ok(index)
}

fn open_detector(ctx: &Ctx, a: &ArtifactArgs, profiles: &Path, m: &mut RunManifest) -> CliResult<RequestDetector> {
    let model = open_model(&a.model, m)?;
    let index = open_index(&a.index, m)?;
    let profiles: Profiles =
        ProfileSet::load(profiles).map_err(|e| CliError::Data(format!("{}: {e}", profiles.display())))?;
    Detector::new(ctx.schema.clone(), model, index, profiles).map_err(CliError::data)
}

fn train_lm(ctx: &Ctx, corpus: &CorpusArgs, out: &Path) -> CliResult<()> {
    let mut m = ctx.manifest("train-lm", json!({ "input": corpus_json(corpus), "out": out }))?;
    let requests = load_part(ctx, corpus, &mut m)?;
    let start = Instant::now();
    let (model, stats) = train_language_model(&ctx.schema, &requests, &ctx.settings.embedding).map_err(pipeline_error)?;
    m.time("train", start.elapsed().as_secs_f64());
    save_model(&model, out).map_err(|e| CliError::Internal(format!("writing {}: {e}", out.display())))?;
    m.artifact(out)?;
    println!(
        "trained on {} requests: vocabulary {}, dim {}, final loss {:.4}",
        requests.len(),
        model.vocab_len(),
        model.dim(),
        stats.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    ctx.finish(&m, Some(out))
}

fn build(ctx: &Ctx, model_path: &Path, corpus: &CorpusArgs, out: &Path) -> CliResult<()> {
    let mut m = ctx.manifest("build", json!({ "model": model_path, "input": corpus_json(corpus), "out": out }))?;
    let model = open_model(model_path, &mut m)?;
    let requests = load_part(ctx, corpus, &mut m)?;
    let start = Instant::now();
    let summary = build_index::<f32>(&ctx.schema, &model, &requests, ctx.settings.index).map_err(pipeline_error)?;
    m.time("build", start.elapsed().as_secs_f64());
    save_index(&summary.index, out).map_err(|e| CliError::Internal(format!("writing {}: {e}", out.display())))?;
    m.artifact(out)?;
    println!("{} namespaces, {} points", summary.per_endpoint.len(), summary.index.len());
    for (e, n) in &summary.per_endpoint {
        println!("{e}\t{n}");
    }
    if summary.skipped > 0 {
        eprintln!("warning: {} requests skipped", summary.skipped);
    }
    ctx.finish(&m, Some(out))
}

fn write_report(path: &Path, json: String, tsv: String) -> CliResult<()> {
    let text = if path.extension().is_some_and(|e| e == "json") { json } else { tsv };
    std::fs::write(path, text).map_err(writing(path))
}

fn calibrate_cmd(
    ctx: &Ctx,
    a: &ArtifactArgs,
    corpus: &CorpusArgs,
    out: &Path,
    report: Option<&Path>,
    exhaustive_k: bool,
    pseudo: bool,
) -> CliResult<()> {
    let mut m = ctx.manifest(
        "calibrate",
        json!({
            "model": a.model, "index": a.index, "input": corpus_json(corpus), "out": out,
            "report": report, "exhaustive_k": exhaustive_k, "pseudo_anomalies": pseudo,
        }),
    )?;
    let model = open_model(&a.model, &mut m)?;
    let index = open_index(&a.index, &mut m)?;
    let mut requests = load_part(ctx, corpus, &mut m)?;
    if pseudo {
        let normals: Vec<LabeledRequest> = requests.iter().filter(|r| r.label == Label::Normal).cloned().collect();
        let extra = pseudo_anomalies(&normals, &PayloadTable::bundled(), ctx.settings.seed);
        eprintln!("added {} pseudo-anomalies", extra.len());
        requests.extend(extra);
    }
    let start = Instant::now();
    let (samples, skipped) = embed_samples(&ctx.schema, &model, &requests);
    if skipped > 0 {
        eprintln!("warning: {skipped} malformed validation requests skipped");
    }
    let opts = ctx.settings.calibration_options(exhaustive_k);
    let mut cal = calibrate(&index, &samples, &opts).map_err(CliError::internal)?;
    cal.report.pseudo_anomalies = pseudo;
    m.time("calibrate", start.elapsed().as_secs_f64());

    for e in cal.report.single_class_endpoints() {
        eprintln!("warning: {e}: validation data has a single class; using the default threshold and k");
    }
    cal.profiles
        .save(out)
        .map_err(|e| CliError::Internal(format!("writing {}: {e}", out.display())))?;
    m.artifact(out)?;
    if let Some(r) = report {
        write_report(r, cal.report.to_json(), cal.report.to_tsv())?;
        m.artifact(r)?;
    }
    println!("{} endpoint profiles", cal.profiles.len());
    for p in cal.profiles.iter() {
        println!("{}\tthreshold {}\tk {}", p.endpoint, p.threshold.get(), p.k.get());
    }
    if let Some(mm) = &cal.report.macro_metrics {
        println!(
            "macro precision {:.4} recall {:.4} accuracy {:.4} f1 {:.4}",
            mm.precision, mm.recall, mm.accuracy, mm.f1
        );
    }
    ctx.finish(&m, Some(out))
}

/// Reads requests from a file or standard input.
fn read_input(path: Option<&Path>, format: InputFormat) -> CliResult<Box<dyn Iterator<Item = io::Result<Vec<u8>>>>> {
    let source: Box<dyn Read> = match path {
        Some(p) => Box::new(File::open(p).map_err(reading(p))?),
        None => Box::new(io::stdin().lock()),
    };
    let name = path.map_or_else(|| "stdin".to_string(), |p| p.display().to_string());
    Ok(match format {
        InputFormat::Container => Box::new(ContainerReader::new(io::BufReader::new(source))),
        InputFormat::Raw | InputFormat::Csic => {
            let mut bytes = Vec::new();
            let mut source = source;
            source
                .read_to_end(&mut bytes)
                .map_err(|e| CliError::Data(format!("{name}: {e}")))?;
            if format == InputFormat::Raw {
                Box::new(std::iter::once(Ok(bytes)))
            } else {
                let (reqs, skipped) = parse_csic_text(&bytes, Label::Normal, &name);
                if skipped > 0 {
                    eprintln!("warning: {skipped} malformed requests skipped");
                }
                Box::new(reqs.into_iter().map(|r| Ok(r.raw)))
            }
        }
    })
}

/// Stops quietly when the reader of standard output goes away.
fn emit(out: &mut impl Write, line: &str) -> CliResult<bool> {
    match writeln!(out, "{line}") {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(false),
        Err(e) => Err(CliError::Internal(format!("stdout: {e}"))),
    }
}

fn classify(
    ctx: &Ctx,
    a: &ArtifactArgs,
    profiles: &Path,
    input: Option<&Path>,
    format: InputFormat,
) -> CliResult<()> {
    let mut m = ctx.manifest(
        "classify",
        json!({ "model": a.model, "index": a.index, "profiles": profiles, "input": input,
                "input_format": format!("{format:?}").to_lowercase() }),
    )?;
    let detector = open_detector(ctx, a, profiles, &mut m)?;
    m.input(profiles)?;
    if let Some(p) = input {
        m.input(p)?;
    }
    let start = Instant::now();
    let mut records = read_input(input, format)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut seen = 0usize;
    let mut failed = None;
    'outer: loop {
        let mut batch = Vec::with_capacity(BATCH);
        for r in records.by_ref() {
            match r {
                Ok(b) => batch.push(b),
                Err(e) => {
                    failed = Some(CliError::Data(format!("input after request {}: {e}", seen + batch.len())));
                    break;
                }
            }
            if batch.len() == BATCH {
                break;
            }
        }
        if batch.is_empty() {
            break;
        }
        let raws: Vec<&[u8]> = batch.iter().map(Vec::as_slice).collect();
        for v in classify_all(&detector, &raws) {
            seen += 1;
            match v {
                Ok(v) => {
                    if !emit(&mut out, &v.to_string())? {
                        break 'outer;
                    }
                }
                Err(e) => eprintln!("request {seen}: {e}"),
            }
        }
        if failed.is_some() {
            break;
        }
    }
    if let Err(e) = out.flush() {
        if e.kind() != io::ErrorKind::BrokenPipe {
            return Err(CliError::Internal(format!("stdout: {e}")));
        }
    }
    m.time("classify", start.elapsed().as_secs_f64());
    ctx.finish(&m, None)?;
    failed.map_or(Ok(()), Err)
}

/// Sum of the recorded phase times of the artifacts that make up a
/// detector.
fn training_seconds(paths: &[&Path]) -> Option<f64> {
    let mut total = 0.0;
    for p in paths {
        let m = RunManifest::read(&default_path(p))?;
        total += m.timings.values().sum::<f64>();
    }
    Some(total)
}

fn evaluate_cmd(
    ctx: &Ctx,
    a: &ArtifactArgs,
    profiles: &Path,
    corpus: &CorpusArgs,
    report: Option<&Path>,
) -> CliResult<()> {
    let mut m = ctx.manifest(
        "evaluate",
        json!({ "model": a.model, "index": a.index, "profiles": profiles,
                "input": corpus_json(corpus), "report": report }),
    )?;
    let detector = open_detector(ctx, a, profiles, &mut m)?;
    m.input(profiles)?;
    let requests = load_part(ctx, corpus, &mut m)?;
    if requests.is_empty() {
        return Err(CliError::Data("test corpus is empty".into()));
    }
    let start = Instant::now();
    let raws: Vec<&[u8]> = requests.iter().map(|r| r.raw.as_slice()).collect();
    let verdicts = classify_all(&detector, &raws);
    let test_seconds = start.elapsed().as_secs_f64();
    m.time("test", test_seconds);
    let mut malformed = 0;
    let pairs: Vec<_> = verdicts
        .into_iter()
        .zip(&requests)
        .filter_map(|(v, r)| match v {
            Ok(v) => Some((v, r.label)),
            Err(_) => {
                malformed += 1;
                None
            }
        })
        .collect();
    if malformed > 0 {
        eprintln!("warning: {malformed} malformed requests skipped");
    }
    if pairs.is_empty() {
        return Err(CliError::Data("no test request could be classified".into()));
    }
    let mut rep: EvaluationReport = evaluate(&pairs, detector.profiles());
    rep.test_seconds = Some(test_seconds);
    rep.train_seconds = training_seconds(&[&a.model, &a.index, profiles]);

    print_evaluation(&rep);
    if let Some(r) = report {
        write_report(r, rep.to_json(), rep.to_tsv())?;
        m.artifact(r)?;
    }
    ctx.finish(&m, report)
}

fn print_evaluation(rep: &EvaluationReport) {
    for e in &rep.endpoints {
        match &e.metrics {
            Some(x) => println!(
                "{}\tprecision {:.4}\trecall {:.4}\taccuracy {:.4}\tf1 {:.4}",
                e.endpoint, x.precision, x.recall, x.accuracy, x.f1
            ),
            None => println!("{}\tno metrics", e.endpoint),
        }
    }
    let line = |name: &str, x: &Option<sentinel_core::FloatMetrics>| match x {
        Some(x) => println!(
            "{name}\tprecision {:.4}\trecall {:.4}\taccuracy {:.4}\tf1 {:.4}",
            x.precision, x.recall, x.accuracy, x.f1
        ),
        None => println!("{name}\tundefined"),
    };
    line("macro", &rep.macro_metrics);
    line("micro", &rep.micro_metrics);
    println!(
        "samples {}\tunknown-endpoint {}\ttest seconds {:.3}",
        rep.samples,
        rep.unknown_endpoint_samples,
        rep.test_seconds.unwrap_or(0.0)
    );
}

struct BenchArgs {
    bench: PathBuf,
    corpus: Option<PathBuf>,
    format: Format,
    model: Option<PathBuf>,
    out_dir: PathBuf,
    k: usize,
    threshold: Option<f64>,
    recall: bool,
    synthetic: (usize, usize, usize),
}

fn bench_cmd(ctx: &Ctx, b: &BenchArgs) -> CliResult<()> {
    let mut m = ctx.manifest(
        "bench",
        json!({ "bench": b.bench, "corpus": b.corpus, "model": b.model, "out_dir": b.out_dir,
                "k": b.k, "threshold": b.threshold, "recall": b.recall,
                "synthetic": [b.synthetic.0, b.synthetic.1, b.synthetic.2] }),
    )?;
    let config = BenchConfig::load(&b.bench).map_err(|e| match e {
        BenchError::Io(io) => CliError::Config(format!("{}: {io}", b.bench.display())),
        e => CliError::config(e),
    })?;
    m.input(&b.bench)?;
    if b.k == 0 {
        return Err(CliError::Config("--k must be positive".into()));
    }
    if let Some(t) = b.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::Config("--threshold must lie in [0, 1]".into()));
        }
    }
    let instances = config.expand_instances();
    let data = match (&b.corpus, &b.model) {
        (Some(corpus), Some(model_path)) => {
            let model = open_model(model_path, &mut m)?;
            let requests = load_requests(corpus, b.format)?;
            m.input(corpus)?;
            let parts = split(&requests, &ctx.settings.split_spec()).map_err(CliError::data)?;
            bench_data::<f32>(&ctx.schema, &model, &parts.train, &parts.test)
        }
        _ => {
            let (endpoints, train, dim) = b.synthetic;
            if endpoints == 0 || train == 0 || dim == 0 {
                return Err(CliError::Config("synthetic sizes must be positive".into()));
            }
            synthetic_bench_data::<f32>(endpoints, train, 40, 20, dim, ctx.settings.seed)
        }
    };
    let opts = BenchOptions {
        base: sentinel_core::index::IndexConfig {
            seed: ctx.settings.seed,
            ..BenchOptions::default().base
        },
        k: b.k,
        threshold: b.threshold.map_or(BenchOptions::default().threshold, ThresholdPolicy::Fixed),
        recall: b.recall,
    };
    let start = Instant::now();
    let records = run_bench(&instances, &data, &opts);
    m.time("bench", start.elapsed().as_secs_f64());

    std::fs::create_dir_all(&b.out_dir).map_err(writing(&b.out_dir))?;
    let outputs = [
        ("runs.tsv", runs_table(&records)),
        ("frontier-qps.tsv", emit_frontier(&records, Axis::Qps)),
        ("frontier-build-time.tsv", emit_frontier(&records, Axis::BuildTime)),
    ];
    for (name, text) in outputs {
        let p = b.out_dir.join(name);
        std::fs::write(&p, text).map_err(writing(&p))?;
        m.artifact(&p)?;
    }
    let failed = records.iter().filter(|r| !r.succeeded()).count();
    println!("{} instances, {} failed", records.len(), failed);
    for r in records.iter().filter(|r| !r.succeeded()) {
        eprintln!("{}: {}", r.instance, r.failure.as_deref().unwrap_or("failed"));
    }
    ctx.finish(&m, Some(&b.out_dir.join("runs.tsv")))
}

fn canonicalize(ctx: &Ctx, input: Option<&Path>, format: InputFormat) -> CliResult<()> {
    let records: Vec<Vec<u8>> = read_input(input, format)?
        .collect::<io::Result<_>>()
        .map_err(CliError::data)?;
    let lines: Vec<Result<String, String>> = records
        .par_iter()
        .map(|raw| {
            canonicalize_bytes(raw, &ctx.schema)
                .map(|c| format!("{}\t{}", c.endpoint, c.token_line()))
                .map_err(|e| e.to_string())
        })
        .collect();
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (i, l) in lines.into_iter().enumerate() {
        match l {
            Ok(l) => {
                if !emit(&mut out, &l)? {
                    return Ok(());
                }
            }
            Err(e) => eprintln!("request {}: {e}", i + 1),
        }
    }
    out.flush().or_else(|e| if e.kind() == io::ErrorKind::BrokenPipe { Ok(()) } else { Err(e) })
        .map_err(|e| CliError::Internal(format!("stdout: {e}")))
}

fn synth(ctx: &Ctx, out: &Path, endpoints: usize, normals: usize, anomalies: usize) -> CliResult<()> {
    if endpoints == 0 || normals == 0 {
        return Err(CliError::Config("--endpoints and --normals must be positive".into()));
    }
    let mut m = ctx.manifest(
        "synth",
        json!({ "out": out, "endpoints": endpoints, "normals": normals, "anomalies": anomalies }),
    )?;
    let requests = generate_synthetic(ctx.settings.seed, endpoints, normals, anomalies);
    write_labeled_container(out, &requests).map_err(writing(out))?;
    m.artifact(out)?;
    println!("{} requests written to {}", requests.len(), out.display());
    ctx.finish(&m, Some(out))
}
