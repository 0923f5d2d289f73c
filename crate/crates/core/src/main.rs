use clap::{Args, Parser, Subcommand, ValueEnum};
use el_mia::attacks::{LlrVariant, MethodId, SuffixWindow};
use el_mia::exec::Execution;
use el_mia::metrics::Thresholding;
use el_mia::pipeline::{self, PipelineError, RunConfig};
use el_mia::provider::ProviderKind;
use el_mia::synth::{self, SynthConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "el-mia",
    version,
    about = "Entity-level membership inference toolkit"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the benchmark, training corpus and pools from annotated JSONL.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        holdout_fraction: Option<f64>,
    },
    /// Train the reference trigram model on a training corpus.
    TrainRef {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score benchmark records with the attack methods.
    Score(ScoreArgs),
    /// Compute AUC and TPR@FPR per subset and method.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long, value_enum)]
        thresholding: Option<Mode>,
        #[arg(long)]
        fpr: Option<f64>,
        /// Defaults to the directory of the scores file.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Length correlations, entity-count breakdown and type regression.
    Analyze {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        fpr: Option<f64>,
        #[arg(long)]
        lengths: Option<PathBuf>,
        #[arg(long)]
        pools: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Render eval CSVs as a Markdown report.
    Report {
        #[arg(long)]
        eval_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic annotated corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        n_samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Multiplier on the per-type value pool sizes.
        #[arg(long, default_value_t = 1.0)]
        pool_scale: f64,
        /// Multiplier on the per-type popularity skew.
        #[arg(long, default_value_t = 1.0)]
        zipf_scale: f64,
    },
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    provider: Option<Provider>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long)]
    ref_model: Option<PathBuf>,
    /// `all` or a comma-separated list of method names.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    pools: Option<PathBuf>,
    #[arg(long)]
    recall_prefix: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    logprob_base: Option<f64>,
    #[arg(long)]
    include_eos: bool,
    #[arg(long)]
    min_k: Option<f64>,
    /// `all` or a token count.
    #[arg(long)]
    suffix_window: Option<SuffixWindow>,
    #[arg(long)]
    suffix_includes_candidate: bool,
    #[arg(long)]
    refset_size: Option<usize>,
    #[arg(long, value_enum)]
    llr_variant: Option<Llr>,
    #[arg(long)]
    zlib_level: Option<u32>,
    #[arg(long)]
    recall_invert: bool,
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Http,
    Reference,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "per_type")]
    PerType,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum Llr {
    Ratio,
    Standardized,
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::available()
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Build {
            input,
            out,
            seed,
            holdout_fraction,
        } => {
            let summary = pipeline::cmd_build(&pipeline::BuildOptions {
                input,
                out_dir: out,
                seed: seed.unwrap_or(cfg.seed),
                holdout_fraction: holdout_fraction.unwrap_or(cfg.holdout_fraction),
            })?;
            println!(
                "{} samples ({} train), {} records, {} exhausted slots, validation passed",
                summary.n_samples, summary.n_train, summary.records, summary.skipped
            );
        }
        Command::TrainRef { corpus, out } => {
            let lm = pipeline::cmd_train_ref(&corpus, &out)?;
            println!("trained reference model, vocabulary {}", lm.vocab_size());
        }
        Command::Score(a) => {
            let p = &mut cfg.provider;
            if let Some(kind) = a.provider {
                p.kind = match kind {
                    Provider::Http => ProviderKind::Http,
                    Provider::Reference => ProviderKind::Reference,
                };
            }
            p.base_url = a.base_url.or(p.base_url.take());
            if let Some(v) = a.model_id {
                p.model_id = v;
            }
            if let Some(v) = a.max_in_flight {
                p.max_in_flight = v;
            }
            if let Some(v) = a.timeout_ms {
                p.timeout_ms = v;
            }
            if let Some(v) = a.logprob_base {
                p.logprob_base = v;
            }
            p.include_eos |= a.include_eos;
            let at = &mut cfg.attack;
            if let Some(m) = a.methods {
                at.methods = MethodId::parse_list(&m).map_err(PipelineError::Config)?;
            }
            if let Some(v) = a.min_k {
                at.min_k_fraction = v;
            }
            if let Some(v) = a.suffix_window {
                at.suffix_window = v;
            }
            at.suffix_includes_candidate |= a.suffix_includes_candidate;
            if let Some(v) = a.refset_size {
                at.refset_size = v;
            }
            if let Some(v) = a.llr_variant {
                at.llr_variant = match v {
                    Llr::Ratio => LlrVariant::Ratio,
                    Llr::Standardized => LlrVariant::Standardized,
                };
            }
            if let Some(v) = a.zlib_level {
                at.zlib_level = v;
            }
            at.recall_invert |= a.recall_invert;
            let summary = pipeline::cmd_score(&pipeline::ScoreOptions {
                benchmark: a.benchmark,
                pools: a.pools,
                out: a.out,
                provider: cfg.provider,
                ref_model: a.ref_model,
                attack: cfg.attack,
                recall_prefix: a.recall_prefix,
                cache_dir: a.cache_dir,
                execution: execution(a.sequential),
            })?;
            println!("{} scores, {} skipped", summary.scores, summary.skips);
            if let Some(calls) = summary.provider_calls {
                println!("{calls} provider calls (cache misses)");
            }
        }
        Command::Eval {
            scores,
            benchmark,
            thresholding,
            fpr,
            out_dir,
            sequential,
        } => {
            let out_dir = out_dir.unwrap_or_else(|| parent_of(&scores));
            let reports = pipeline::cmd_eval(&pipeline::EvalOptions {
                scores,
                benchmark,
                out_dir,
                thresholding: match thresholding {
                    Some(Mode::PerType) => Thresholding::PerType,
                    Some(Mode::Global) => Thresholding::Global,
                    None => cfg.thresholding,
                },
                fpr_target: fpr.unwrap_or(cfg.fpr_target),
                execution: execution(sequential),
            })?;
            for r in reports {
                println!(
                    "{:<9} {:<22} auc {:.4} tpr {:.4} n {}",
                    r.subset, r.method, r.auc, r.tpr, r.n
                );
            }
        }
        Command::Analyze {
            scores,
            benchmark,
            method,
            fpr,
            lengths,
            pools,
            out_dir,
        } => {
            let method = match method {
                Some(m) => MethodId::parse(&m)
                    .ok_or_else(|| PipelineError::Config(format!("unknown method {m}")))?,
                None => cfg.analysis_method,
            };
            let out_dir = out_dir.unwrap_or_else(|| parent_of(&scores));
            pipeline::cmd_analyze(&pipeline::AnalyzeOptions {
                scores,
                benchmark,
                lengths,
                pools,
                out_dir,
                method,
                fpr_target: fpr.unwrap_or(cfg.fpr_target),
            })?;
        }
        Command::Report { eval_dir, out } => {
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            pipeline::cmd_report(&eval_dir, &out, now)?;
        }
        Command::Synth {
            out,
            n_samples,
            seed,
            pool_scale,
            zipf_scale,
        } => {
            let lines = synth::generate(&SynthConfig {
                n_samples,
                seed,
                pool_scale,
                zipf_scale,
            });
            let mut text = lines.join("\n");
            text.push('\n');
            std::fs::write(&out, text).map_err(|source| PipelineError::Io { path: out, source })?;
        }
    }
    Ok(())
}

fn parent_of(path: &std::path::Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
