//! Pipelines behind the `rdskit` command.

pub mod methods;
pub mod pipeline;
pub mod settings;

pub use methods::{parse_methods, Method, MethodSpec};
pub use pipeline::{
    cmd_bestofn, cmd_embed, cmd_evaluate, cmd_sample, cmd_score, cmd_simulate, BestOfNOptions, Correctness,
    CorrectnessKind, EmbedOptions, EvalOptions, EvalOutcome, ExternalRow, IoOptions, Resources, RunSummary,
    SampleOptions, ScoreOptions, SimulateOptions,
};
