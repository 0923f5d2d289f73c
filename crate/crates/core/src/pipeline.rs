//! CLI stages. Each stage reads upstream artifacts, writes its own, and
//! prefixes every output file with a `# key: value` header whose first line is
//! `# config_hash:`. Data files carry no timestamps; only `report.md` has a
//! `# generated:` line.

use crate::analysis::{
    entity_count_tpr, length_correlations, type_vulnerability_regression, LengthProfile,
};
use crate::attacks::{run_attacks, AttackConfig, AttackScore, MethodId, SkipEntry};
use crate::corpus::{
    assign_partition, build_benchmark, build_pools, emit_training_corpus, ingest_reader,
    validate_benchmark, BenchmarkRecord, CorpusError, Partition, Pools, SplitAssignment, Subset,
};
use crate::exec::{self, Execution};
use crate::metrics::{evaluate, EvalReport, MetricsError, Thresholding, DEFAULT_FPR};
use crate::provider::{
    CachedProvider, HttpProvider, LogprobProvider, ProviderConfig, ProviderError, ProviderKind,
    ReferenceProvider, ScoreCache,
};
use crate::refmodel::{ModelFile, RefModelError, TrigramLM};
use crate::seed::derive_rng;
use rand::seq::IndexedRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const BENCHMARK_FILE: &str = "benchmark.jsonl";
pub const CORPUS_FILE: &str = "train_corpus.txt";
pub const POOLS_FILE: &str = "pools.json";
pub const VALIDATION_FILE: &str = "validation.json";
pub const EXHAUSTED_FILE: &str = "pool_exhausted.jsonl";
pub const RECALL_PREFIX_FILE: &str = "recall_prefix.txt";
pub const SKIPS_FILE: &str = "skips.jsonl";
pub const LENGTHS_FILE: &str = "lengths.jsonl";

/// Holdout sentences joined into the recall prefix.
const RECALL_PREFIX_SENTENCES: usize = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("missing input {0}")]
    MissingInput(PathBuf),
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    RefModel(#[from] RefModelError),
    #[error("benchmark validation failed: {0}")]
    Validation(String),
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Provider(ProviderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Config(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Unreachable(_) => 3,
            _ => 1,
        }
    }
}

impl From<ProviderError> for PipelineError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::ProviderUnreachable(m) => PipelineError::Unreachable(m),
            other => PipelineError::Provider(other),
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Settings accepted by `--config`; command-line flags override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub holdout_fraction: f64,
    pub provider: ProviderConfig,
    pub attack: AttackConfig,
    pub thresholding: Thresholding,
    pub fpr_target: f64,
    pub analysis_method: MethodId,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            holdout_fraction: 0.5,
            provider: ProviderConfig::default(),
            attack: AttackConfig::default(),
            thresholding: Thresholding::PerType,
            fpr_target: DEFAULT_FPR,
            analysis_method: MethodId::ReferenceSetSuffix,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
            path: path.into(),
            line: e.line(),
            detail: e.to_string(),
        })
    }
}

// ---- headers and file helpers ----

/// Parsed `# key: value` header lines.
pub type Header = BTreeMap<String, String>;

fn is_header_line(line: &str) -> Option<(&str, &str)> {
    let rest = line.strip_prefix("# ")?;
    let (k, v) = rest
        .split_once(": ")
        .or_else(|| rest.strip_suffix(':').map(|k| (k, "")))?;
    (!k.is_empty()
        && k.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_'))
    .then_some((k, v))
}

/// Split a file into its leading header block and the remaining body.
pub fn split_header(text: &str) -> (Header, &str) {
    let mut header = Header::new();
    let mut rest = text;
    while !rest.is_empty() {
        let (line, next) = match rest.find('\n') {
            Some(i) => (&rest[..i], &rest[i + 1..]),
            None => (rest, ""),
        };
        let Some((k, v)) = is_header_line(line) else {
            break;
        };
        header.insert(k.to_string(), v.to_string());
        rest = next;
    }
    (header, rest)
}

fn render_header(config_hash: &str, pairs: &[(&str, String)]) -> String {
    let mut s = format!("# config_hash: {config_hash}\n");
    for (k, v) in pairs {
        let _ = writeln!(s, "# {k}: {v}");
    }
    s
}

fn hash_json(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            PipelineError::MissingInput(path.into())
        } else {
            PipelineError::Io {
                path: path.into(),
                source,
            }
        }
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let io = |source| PipelineError::Io {
        path: path.into(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}

fn jsonl_body<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).expect("serializable"));
        s.push('\n');
    }
    s
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Read a headed JSONL file. Blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Header, Vec<T>)> {
    let text = read_text(path)?;
    let (header, body) = split_header(&text);
    let offset = header.len();
    let mut items = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(line).map_err(|e| PipelineError::Parse {
                path: path.into(),
                line: offset + i + 1,
                detail: e.to_string(),
            })?,
        );
    }
    Ok((header, items))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<(Header, T)> {
    let text = read_text(path)?;
    let (header, body) = split_header(&text);
    let value = serde_json::from_str(body).map_err(|e| PipelineError::Parse {
        path: path.into(),
        line: header.len() + e.line(),
        detail: e.to_string(),
    })?;
    Ok((header, value))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn header_value(header: &Header, key: &str) -> String {
    header.get(key).cloned().unwrap_or_default()
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

// ---- build ----

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub holdout_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct BuildSummary {
    pub n_samples: usize,
    pub n_train: usize,
    pub records: usize,
    pub skipped: usize,
    pub validation: crate::corpus::ValidationReport,
}

/// Ingest, partition, build pools and records, validate, write artifacts.
/// Artifacts are written even when validation fails.
pub fn cmd_build(opts: &BuildOptions) -> Result<BuildSummary> {
    let input = read_text(&opts.input)?;
    let samples = ingest_reader(input.as_bytes())?;
    let split = SplitAssignment {
        seed: opts.seed,
        holdout_fraction: opts.holdout_fraction,
    };
    let samples = assign_partition(samples, &split)?;
    let pools = build_pools(&samples);
    let build = build_benchmark(&samples, &pools, opts.seed);
    let corpus = emit_training_corpus(&samples);
    let validation = validate_benchmark(&build.records, &corpus, &pools);
    let n_train = split.train_count(samples.len());

    let config_hash = hash_json(&json!({
        "stage": "build",
        "seed": opts.seed,
        "holdout_fraction": opts.holdout_fraction,
        "input_sha256": hex::encode(Sha256::digest(input.as_bytes())),
    }));
    let header = render_header(
        &config_hash,
        &[
            ("seed", opts.seed.to_string()),
            ("holdout_fraction", fmt_f64(opts.holdout_fraction)),
            ("n_samples", samples.len().to_string()),
            ("n_train", n_train.to_string()),
            ("n_records", build.records.len().to_string()),
            ("n_exhausted", build.skipped.len().to_string()),
        ],
    );
    let out = &opts.out_dir;
    write_text(
        &out.join(BENCHMARK_FILE),
        &(header.clone() + &jsonl_body(&build.records)),
    )?;
    write_text(&out.join(CORPUS_FILE), &(header.clone() + &corpus))?;
    write_text(&out.join(POOLS_FILE), &(header.clone() + &pretty(&pools)))?;
    write_text(
        &out.join(VALIDATION_FILE),
        &(header.clone() + &pretty(&validation)),
    )?;
    write_text(
        &out.join(EXHAUSTED_FILE),
        &(header.clone() + &jsonl_body(&build.skipped)),
    )?;
    write_text(
        &out.join(RECALL_PREFIX_FILE),
        &(header + &recall_prefix(&samples, opts.seed)),
    )?;

    for c in &validation.checks {
        log::info!("check {}: {}/{} failed", c.name, c.failed, c.checked);
    }
    let summary = BuildSummary {
        n_samples: samples.len(),
        n_train,
        records: build.records.len(),
        skipped: build.skipped.len(),
        validation,
    };
    if !summary.validation.passed() {
        let failed: Vec<String> = summary
            .validation
            .checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| format!("{} ({} of {})", c.name, c.failed, c.checked))
            .collect();
        return Err(PipelineError::Validation(failed.join(", ")));
    }
    Ok(summary)
}

/// A few holdout sentences, seeded, in sample-id order.
fn recall_prefix(samples: &[crate::corpus::AnnotatedSample], seed: u64) -> String {
    let holdout: Vec<&crate::corpus::AnnotatedSample> = samples
        .iter()
        .filter(|s| s.partition == Some(Partition::HoldoutSet))
        .collect();
    let mut chosen: Vec<&&crate::corpus::AnnotatedSample> = holdout
        .choose_multiple(
            &mut derive_rng(seed, &["recall-prefix"]),
            RECALL_PREFIX_SENTENCES,
        )
        .collect();
    chosen.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let texts: Vec<&str> = chosen.iter().map(|s| s.text.as_str()).collect();
    let mut s = texts.join(" ");
    if !s.is_empty() {
        s.push('\n');
    }
    s
}

// ---- train-ref ----

/// Train the reference trigram LM on a training corpus file.
pub fn cmd_train_ref(corpus: &Path, out: &Path) -> Result<TrigramLM> {
    let text = read_text(corpus)?;
    let (header, body) = split_header(&text);
    let lines: Vec<&str> = body.lines().filter(|l| !l.trim().is_empty()).collect();
    let lm = TrigramLM::train(&lines)?;
    let weights = lm.weights();
    let config_hash = hash_json(&json!({
        "stage": "train_ref",
        "corpus_sha256": hex::encode(Sha256::digest(body.as_bytes())),
        "weights": weights,
    }));
    let head = render_header(
        &config_hash,
        &[
            ("seed", header_value(&header, "seed")),
            ("corpus_lines", lines.len().to_string()),
            ("vocab_size", lm.vocab_size().to_string()),
        ],
    );
    let mut file = lm.to_json();
    file.meta.insert("config_hash".into(), config_hash);
    let mut body = serde_json::to_string(&file).expect("serializable");
    body.push('\n');
    write_text(out, &(head + &body))?;
    Ok(lm)
}

/// Load a model written by [`cmd_train_ref`] (or a bare model JSON file).
pub fn load_ref_model(path: &Path) -> Result<(TrigramLM, Header)> {
    let (header, file): (Header, ModelFile) = read_json(path)?;
    Ok((TrigramLM::from_json(file)?, header))
}

// ---- score ----

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub benchmark: PathBuf,
    /// Defaults to `pools.json` beside the benchmark.
    pub pools: Option<PathBuf>,
    pub out: PathBuf,
    pub provider: ProviderConfig,
    pub ref_model: Option<PathBuf>,
    pub attack: AttackConfig,
    /// Defaults to `recall_prefix.txt` beside the benchmark when it exists.
    pub recall_prefix: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub execution: Execution,
}

#[derive(Debug, Clone)]
pub struct ScoreSummary {
    pub scores: usize,
    pub skips: usize,
    /// Calls that reached the provider, when a cache is in use.
    pub provider_calls: Option<usize>,
}

pub fn cmd_score(opts: &ScoreOptions) -> Result<ScoreSummary> {
    let (bench_header, records): (Header, Vec<BenchmarkRecord>) = read_jsonl(&opts.benchmark)?;
    let pools_path = opts
        .pools
        .clone()
        .unwrap_or_else(|| sibling(&opts.benchmark, POOLS_FILE));
    let (_, pools): (Header, Pools) = read_json(&pools_path)?;

    let mut attack = opts.attack.clone();
    attack.seed = bench_header
        .get("seed")
        .and_then(|s| s.parse().ok())
        .unwrap_or(attack.seed);
    if attack.recall_prefix.is_none() {
        let path = opts
            .recall_prefix
            .clone()
            .unwrap_or_else(|| sibling(&opts.benchmark, RECALL_PREFIX_FILE));
        if opts.recall_prefix.is_some() || path.exists() {
            let text = read_text(&path)?;
            let body = split_header(&text).1.trim().to_string();
            attack.recall_prefix = (!body.is_empty()).then_some(body);
        }
    }
    attack.validate().map_err(PipelineError::Config)?;
    opts.provider
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let mut lm_hash = String::new();
    let inner: Box<dyn LogprobProvider> = match opts.provider.kind {
        ProviderKind::Reference => {
            let path = opts.ref_model.as_ref().ok_or_else(|| {
                PipelineError::Config("the reference provider needs --ref-model".into())
            })?;
            let (lm, header) = load_ref_model(path)?;
            lm_hash = header_value(&header, "config_hash");
            Box::new(
                ReferenceProvider::new(lm, opts.provider.model_id.clone())
                    .with_eos(opts.provider.include_eos),
            )
        }
        ProviderKind::Http => {
            let http = HttpProvider::new(&opts.provider)?;
            // preflight: fail fast with exit 3 rather than skipping every record
            if let Err(e) = http.score_text("probe", None) {
                match e {
                    ProviderError::ProviderUnreachable(m) => {
                        return Err(PipelineError::Unreachable(m))
                    }
                    other => log::warn!("provider probe failed: {other}"),
                }
            }
            Box::new(http)
        }
    };

    let (run, provider_calls) = match &opts.cache_dir {
        Some(dir) => {
            let cached = CachedProvider::new(inner, ScoreCache::open(dir)?);
            let run = score_with(&cached, &records, &pools, &attack, opts);
            (run, Some(cached.provider_calls()))
        }
        None => (score_with(&inner, &records, &pools, &attack, opts), None),
    };
    for s in &run.skips {
        log::debug!("skip {} {}: {}", s.record_id, s.method, s.error);
    }
    log::info!(
        "{} scores, {} skipped (record, method) pairs",
        run.scores.len(),
        run.skips.len()
    );

    let model_id = opts.provider.model_id.clone();
    let provider_json = json!({
        "kind": opts.provider.kind,
        "model_id": model_id,
        "include_eos": opts.provider.include_eos,
        "logprob_base": opts.provider.logprob_base,
    });
    let config_hash = hash_json(&json!({
        "stage": "score",
        "benchmark": header_value(&bench_header, "config_hash"),
        "model": lm_hash,
        "provider": provider_json,
        "attack": attack,
    }));
    let methods: Vec<&str> = attack.methods.iter().map(|m| m.as_str()).collect();
    let header = render_header(
        &config_hash,
        &[
            ("seed", attack.seed.to_string()),
            ("model_id", model_id),
            ("benchmark_hash", header_value(&bench_header, "config_hash")),
            ("methods", methods.join(",")),
            ("zlib_level", attack.zlib_level.to_string()),
            ("min_k_fraction", fmt_f64(attack.min_k_fraction)),
            ("suffix_window", attack.suffix_window.to_string()),
            ("refset_size", attack.refset_size.to_string()),
            (
                "llr_variant",
                serde_json::to_value(attack.llr_variant)
                    .unwrap()
                    .as_str()
                    .unwrap_or("")
                    .into(),
            ),
        ],
    );
    write_text(&opts.out, &(header.clone() + &jsonl_body(&run.scores)))?;
    write_text(
        &sibling(&opts.out, SKIPS_FILE),
        &(header.clone() + &jsonl_body(&run.skips)),
    )?;
    write_text(
        &sibling(&opts.out, LENGTHS_FILE),
        &(header + &jsonl_body(&run.lengths)),
    )?;
    Ok(ScoreSummary {
        scores: run.scores.len(),
        skips: run.skips.len(),
        provider_calls,
    })
}

fn score_with(
    provider: &dyn LogprobProvider,
    records: &[BenchmarkRecord],
    pools: &Pools,
    attack: &AttackConfig,
    opts: &ScoreOptions,
) -> crate::attacks::AttackRun {
    match opts.provider.kind {
        // requests in flight are bounded by the worker count
        ProviderKind::Http => exec::with_threads(opts.provider.max_in_flight, || {
            run_attacks(records, provider, pools, attack, opts.execution)
        }),
        ProviderKind::Reference => run_attacks(records, provider, pools, attack, opts.execution),
    }
}

/// Scores, skips and the header of a scores file.
pub fn read_scores(path: &Path) -> Result<(Header, Vec<AttackScore>)> {
    read_jsonl(path)
}

pub fn read_skips(path: &Path) -> Result<(Header, Vec<SkipEntry>)> {
    read_jsonl(path)
}

// ---- eval ----

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub scores: PathBuf,
    pub benchmark: PathBuf,
    pub out_dir: PathBuf,
    pub thresholding: Thresholding,
    pub fpr_target: f64,
    pub execution: Execution,
}

pub fn eval_file_name(mode: Thresholding, subset: Subset) -> String {
    format!("eval_{}_{}.csv", mode.as_str(), subset.as_str())
}

/// Aggregate row label in eval CSV files.
pub const WEIGHTED_ROW: &str = "WEIGHTED";

const EVAL_COLUMNS: &str = "group,method,auc,tpr,n,threshold";

/// Write one CSV per subset: a row per group and a weighted row per method.
pub fn cmd_eval(opts: &EvalOptions) -> Result<Vec<EvalReport>> {
    let (score_header, scores) = read_scores(&opts.scores)?;
    let (_, records): (Header, Vec<BenchmarkRecord>) = read_jsonl(&opts.benchmark)?;
    let reports = evaluate(
        &scores,
        &records,
        opts.thresholding,
        opts.fpr_target,
        opts.execution,
    )?;
    let config_hash = hash_json(&json!({
        "stage": "eval",
        "scores": header_value(&score_header, "config_hash"),
        "thresholding": opts.thresholding,
        "fpr_target": opts.fpr_target,
    }));
    for subset in Subset::ALL {
        let of_subset: Vec<&EvalReport> = reports.iter().filter(|r| r.subset == subset).collect();
        if of_subset.is_empty() {
            continue;
        }
        let n_records = records.iter().filter(|r| r.subset == subset).count();
        let mut pairs = vec![("seed", header_value(&score_header, "seed"))];
        for key in [
            "model_id",
            "zlib_level",
            "min_k_fraction",
            "suffix_window",
            "refset_size",
        ] {
            pairs.push((key, header_value(&score_header, key)));
        }
        pairs.extend([
            ("subset", subset.as_str().to_string()),
            ("thresholding", opts.thresholding.as_str().to_string()),
            ("fpr_target", fmt_f64(opts.fpr_target)),
            ("n_records", n_records.to_string()),
        ]);
        for r in &of_subset {
            for note in &r.notes {
                log::info!("{subset}/{}: {note}", r.method);
            }
        }
        let mut body = format!("{EVAL_COLUMNS}\n");
        for r in &of_subset {
            for g in &r.groups {
                let _ = writeln!(
                    body,
                    "{},{},{},{},{},{}",
                    g.group_key,
                    r.method,
                    fmt_f64(g.auc),
                    fmt_f64(g.tpr),
                    g.n,
                    fmt_f64(g.threshold)
                );
            }
            let _ = writeln!(
                body,
                "{WEIGHTED_ROW},{},{},{},{},",
                r.method,
                fmt_f64(r.auc),
                fmt_f64(r.tpr),
                r.n
            );
        }
        write_text(
            &opts.out_dir.join(eval_file_name(opts.thresholding, subset)),
            &(render_header(&config_hash, &pairs) + &body),
        )?;
    }
    Ok(reports)
}

// ---- analyze ----

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub scores: PathBuf,
    pub benchmark: PathBuf,
    /// Defaults to `lengths.jsonl` beside the scores.
    pub lengths: Option<PathBuf>,
    /// Defaults to `pools.json` beside the benchmark.
    pub pools: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub method: MethodId,
    pub fpr_target: f64,
}

pub const LENGTH_CORR_FILE: &str = "length_corr.csv";
pub const ENTITY_COUNT_FILE: &str = "entity_count_tpr.csv";
pub const TYPE_REGRESSION_FILE: &str = "type_regression.csv";

fn opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn cmd_analyze(opts: &AnalyzeOptions) -> Result<()> {
    let (score_header, scores) = read_scores(&opts.scores)?;
    let (_, records): (Header, Vec<BenchmarkRecord>) = read_jsonl(&opts.benchmark)?;
    let lengths_path = opts
        .lengths
        .clone()
        .unwrap_or_else(|| sibling(&opts.scores, LENGTHS_FILE));
    let (_, lengths): (Header, Vec<LengthProfile>) = read_jsonl(&lengths_path)?;
    let pools_path = opts
        .pools
        .clone()
        .unwrap_or_else(|| sibling(&opts.benchmark, POOLS_FILE));
    let (_, pools): (Header, Pools) = read_json(&pools_path)?;

    let config_hash = hash_json(&json!({
        "stage": "analyze",
        "scores": header_value(&score_header, "config_hash"),
        "method": opts.method,
        "fpr_target": opts.fpr_target,
    }));
    let header = render_header(
        &config_hash,
        &[
            ("seed", header_value(&score_header, "seed")),
            ("model_id", header_value(&score_header, "model_id")),
            ("method", opts.method.as_str().to_string()),
            ("fpr_target", fmt_f64(opts.fpr_target)),
        ],
    );

    let mut body = String::from("subset,unit,variable,r,p_value,n,error\n");
    for c in length_correlations(&scores, &records, &lengths, opts.method, opts.fpr_target) {
        let (r, p, n, err) = match &c.result {
            Ok(res) => (
                Some(res.r),
                Some(res.p_value),
                res.n.to_string(),
                String::new(),
            ),
            Err(e) => (None, None, String::new(), e.to_string()),
        };
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{}",
            c.subset,
            c.unit.as_str(),
            c.variable,
            opt_f64(r),
            opt_f64(p),
            n,
            err
        );
    }
    write_text(
        &opts.out_dir.join(LENGTH_CORR_FILE),
        &(header.clone() + &body),
    )?;

    let mut body = String::from("subset,n_entities,tpr,threshold,n,trend_r,trend_p\n");
    match entity_count_tpr(&scores, &records, opts.method, opts.fpr_target) {
        Ok(series) => {
            for s in series {
                for note in &s.notes {
                    log::info!("entity count {}: {note}", s.subset);
                }
                let (tr, tp) = match &s.trend {
                    Ok(t) => (Some(t.r), Some(t.p_value)),
                    Err(e) => {
                        log::info!("entity count {} trend: {e}", s.subset);
                        (None, None)
                    }
                };
                for p in &s.points {
                    let _ = writeln!(
                        body,
                        "{},{},{},{},{},{},{}",
                        s.subset,
                        p.n_entities,
                        fmt_f64(p.tpr),
                        fmt_f64(p.threshold),
                        p.n,
                        opt_f64(tr),
                        opt_f64(tp)
                    );
                }
            }
        }
        Err(e) => log::warn!("entity count analysis: {e}"),
    }
    write_text(
        &opts.out_dir.join(ENTITY_COUNT_FILE),
        &(header.clone() + &body),
    )?;

    let mut body = String::from("subset,n_types,r,p_value,slope,error\n");
    let method_scores: Vec<AttackScore> = scores
        .iter()
        .filter(|s| s.method == opts.method)
        .cloned()
        .collect();
    let reports = evaluate(
        &method_scores,
        &records,
        Thresholding::PerType,
        opts.fpr_target,
        Execution::Sequential,
    )
    .unwrap_or_default();
    for r in reports {
        let per_type: BTreeMap<String, f64> = r
            .groups
            .iter()
            .map(|g| (g.group_key.clone(), g.auc))
            .collect();
        let line = match type_vulnerability_regression(&per_type, &pools) {
            Ok(t) => format!(
                "{},{},{},{},{},",
                r.subset,
                per_type.len(),
                fmt_f64(t.correlation.r),
                fmt_f64(t.correlation.p_value),
                fmt_f64(t.slope)
            ),
            Err(e) => format!("{},{},,,,{e}", r.subset, per_type.len()),
        };
        body.push_str(&line);
        body.push('\n');
    }
    write_text(&opts.out_dir.join(TYPE_REGRESSION_FILE), &(header + &body))?;
    Ok(())
}

// ---- report ----

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedRow {
    pub method: MethodId,
    pub auc: f64,
    pub tpr: f64,
    pub n: usize,
}

/// Weighted rows of one eval CSV.
pub fn read_eval_csv(path: &Path) -> Result<(Header, Vec<WeightedRow>)> {
    let text = read_text(path)?;
    let (header, body) = split_header(&text);
    let bad = |line: usize, detail: String| PipelineError::Parse {
        path: path.into(),
        line,
        detail,
    };
    let mut rows = Vec::new();
    for (i, line) in body.lines().enumerate().skip(1) {
        let line_no = header.len() + i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(line_no, format!("expected 6 fields, got {}", f.len())));
        }
        if f[0] != WEIGHTED_ROW {
            continue;
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(line_no, e.to_string()));
        rows.push(WeightedRow {
            method: MethodId::parse(f[1])
                .ok_or_else(|| bad(line_no, format!("unknown method {}", f[1])))?,
            auc: num(f[2])?,
            tpr: num(f[3])?,
            n: f[4]
                .parse()
                .map_err(|e: std::num::ParseIntError| bad(line_no, e.to_string()))?,
        });
    }
    Ok((header, rows))
}

/// Markdown summary: one table per subset, methods as rows, one AUC/TPR
/// column pair per thresholding mode found in `eval_dir`.
pub fn cmd_report(eval_dir: &Path, out: &Path, generated_unix: u64) -> Result<()> {
    let modes = [Thresholding::PerType, Thresholding::Global];
    let mut tables: BTreeMap<Subset, BTreeMap<Thresholding, Vec<WeightedRow>>> = BTreeMap::new();
    let mut headers: Vec<Header> = Vec::new();
    for subset in Subset::ALL {
        for mode in modes {
            let path = eval_dir.join(eval_file_name(mode, subset));
            if !path.exists() {
                continue;
            }
            let (h, rows) = read_eval_csv(&path)?;
            headers.push(h);
            tables.entry(subset).or_default().insert(mode, rows);
        }
    }
    let Some(first) = headers.first() else {
        return Err(PipelineError::MissingInput(eval_dir.join("eval_*.csv")));
    };
    let hashes: Vec<&str> = headers
        .iter()
        .map(|h| h.get("config_hash").map(String::as_str).unwrap_or(""))
        .collect();
    let config_hash = hash_json(&json!({"stage": "report", "evals": hashes}));

    let mut s = render_header(&config_hash, &[]);
    let _ = writeln!(s, "# generated: {generated_unix}");
    for key in [
        "seed",
        "model_id",
        "zlib_level",
        "min_k_fraction",
        "suffix_window",
        "refset_size",
        "fpr_target",
    ] {
        let _ = writeln!(s, "# {key}: {}", header_value(first, key));
    }
    let fpr_pct = first
        .get("fpr_target")
        .and_then(|v| v.parse::<f64>().ok())
        .map(|f| format!("{}", f * 100.0))
        .unwrap_or_else(|| "?".into());

    for (subset, by_mode) in &tables {
        let _ = writeln!(s, "\n## {subset}\n");
        let mut head = String::from("| Method |");
        let mut rule = String::from("|---|");
        for mode in by_mode.keys() {
            let _ = write!(head, " AUC ({0}) | TPR@{fpr_pct}% ({0}) |", mode.as_str());
            rule.push_str("---:|---:|");
        }
        head.push_str(" N |");
        rule.push_str("---:|");
        let _ = writeln!(s, "{head}\n{rule}");
        for method in MethodId::ALL {
            let cells: Vec<Option<&WeightedRow>> = by_mode
                .values()
                .map(|rows| rows.iter().find(|r| r.method == method))
                .collect();
            let Some(n) = cells.iter().flatten().map(|r| r.n).next() else {
                continue;
            };
            let mut line = format!("| {} |", method.label());
            for c in &cells {
                match c {
                    Some(r) => {
                        let _ = write!(line, " {:.2} | {:.2} |", r.auc * 100.0, r.tpr * 100.0);
                    }
                    None => line.push_str(" - | - |"),
                }
            }
            let _ = writeln!(s, "{line} {n} |");
        }
    }
    write_text(out, &s)
}

/// Compare two artifact files ignoring `# generated:` lines.
pub fn same_artifact(a: &str, b: &str) -> bool {
    let strip = |t: &str| -> Vec<String> {
        t.lines()
            .filter(|l| !l.starts_with("# generated:"))
            .map(str::to_string)
            .collect()
    };
    strip(a) == strip(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let h = render_header(
            "abc",
            &[("seed", "42".into()), ("suffix_window", "all".into())],
        );
        let text = h + "{\"x\":1}\n# not: header\n";
        let (parsed, body) = split_header(&text);
        assert_eq!(parsed["config_hash"], "abc");
        assert_eq!(parsed["seed"], "42");
        assert_eq!(parsed.len(), 3);
        assert_eq!(body, "{\"x\":1}\n# not: header\n");
    }

    #[test]
    fn header_lines_need_a_lowercase_key() {
        assert!(is_header_line("# Hello: world").is_none());
        assert!(is_header_line("#seed: 1").is_none());
        assert_eq!(is_header_line("# seed: 1"), Some(("seed", "1")));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Validation("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Unreachable("x".into()).exit_code(), 3);
        assert_eq!(PipelineError::MissingInput("x".into()).exit_code(), 1);
    }

    #[test]
    fn generated_line_is_ignored() {
        assert!(same_artifact("# generated: 1\na\n", "# generated: 2\na\n"));
        assert!(!same_artifact("a\n", "b\n"));
    }
}
