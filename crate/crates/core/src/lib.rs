//! Entity-level membership inference toolkit.
//!
//! The crate builds template/slot benchmarks from PII-annotated text, scores
//! candidate entities against any token-logprob provider with seven attack
//! methods, and evaluates attack success with AUC and TPR at a fixed FPR.
//!
//! Pipeline stages map onto modules:
//!
//! * [`corpus`]: ingestion, holdout partition, candidate pools, benchmark records
//! * [`provider`]: token logprob access (HTTP, in-process reference LM, cache)
//! * [`refmodel`]: interpolated trigram LM used as the reference provider
//! * [`align`]: character span to token span mapping
//! * [`attacks`]: the membership scorers and the batch runner
//! * [`metrics`]: AUC, TPR@FPR and per-type/global aggregation
//! * [`analysis`]: length correlations, entity-count breakdowns, type regression
//! * [`pipeline`]: the CLI stages writing deterministic artifacts

pub mod align;
pub mod analysis;
pub mod attacks;
pub mod corpus;
pub mod exec;
pub mod metrics;
pub mod pipeline;
pub mod provider;
pub mod refmodel;
pub mod synth;
pub mod text;

pub(crate) mod seed;
