#![allow(dead_code)]

pub mod stub;

use el_mia::attacks::AttackConfig;
use el_mia::exec::Execution;
use el_mia::metrics::{EvalReport, Thresholding};
use el_mia::pipeline::{self, BuildSummary, RunConfig, ScoreSummary};
use el_mia::synth::{self, SynthConfig};
use std::path::{Path, PathBuf};

pub struct PipelineRun {
    pub dir: PathBuf,
    pub build: BuildSummary,
    pub score: ScoreSummary,
    pub per_type: Vec<EvalReport>,
    pub global: Vec<EvalReport>,
}

impl PipelineRun {
    pub fn out(&self, name: &str) -> PathBuf {
        self.dir.join("out").join(name)
    }
}

pub fn write_fixture(dir: &Path, cfg: &SynthConfig) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    std::fs::write(&path, synth::generate(cfg).join("\n") + "\n").unwrap();
    path
}

/// synth → build → train-ref → score → eval (both modes) → analyze → report.
pub fn run_pipeline(dir: &Path, synth_cfg: &SynthConfig, execution: Execution) -> PipelineRun {
    let cfg = RunConfig {
        seed: synth_cfg.seed,
        ..RunConfig::default()
    };
    let input = write_fixture(dir, synth_cfg);
    let out = dir.join("out");
    let build = pipeline::cmd_build(&pipeline::BuildOptions {
        input,
        out_dir: out.clone(),
        seed: cfg.seed,
        holdout_fraction: cfg.holdout_fraction,
    })
    .unwrap();
    let lm_path = out.join("ref_model.json");
    pipeline::cmd_train_ref(&out.join(pipeline::CORPUS_FILE), &lm_path).unwrap();
    let scores = out.join("scores.jsonl");
    let benchmark = out.join(pipeline::BENCHMARK_FILE);
    let score = pipeline::cmd_score(&pipeline::ScoreOptions {
        benchmark: benchmark.clone(),
        pools: None,
        out: scores.clone(),
        provider: cfg.provider.clone(),
        ref_model: Some(lm_path),
        attack: AttackConfig::default(),
        recall_prefix: None,
        cache_dir: None,
        execution,
    })
    .unwrap();
    let eval = |mode| {
        pipeline::cmd_eval(&pipeline::EvalOptions {
            scores: scores.clone(),
            benchmark: benchmark.clone(),
            out_dir: out.clone(),
            thresholding: mode,
            fpr_target: cfg.fpr_target,
            execution,
        })
        .unwrap()
    };
    let per_type = eval(Thresholding::PerType);
    let global = eval(Thresholding::Global);
    pipeline::cmd_analyze(&pipeline::AnalyzeOptions {
        scores,
        benchmark,
        lengths: None,
        pools: None,
        out_dir: out.clone(),
        method: cfg.analysis_method,
        fpr_target: cfg.fpr_target,
    })
    .unwrap();
    pipeline::cmd_report(&out, &out.join("report.md"), 0).unwrap();
    PipelineRun {
        dir: dir.to_path_buf(),
        build,
        score,
        per_type,
        global,
    }
}
