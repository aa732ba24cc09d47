//! Source pretraining, search, fine-tuning and the run-directory workflow.

pub mod config;
pub mod data;
pub mod metrics;
pub mod oracle;
pub mod outputs;
pub mod run;
pub mod stages;

pub use config::{RunConfig, Stage2Init};
pub use data::{DataSpec, Splits, Task};
pub use metrics::{cost_metrics, finetune_saving, iterations_to, search_saving, CostMetrics, MatchedSaving};
pub use oracle::TabularLandscape;
pub use outputs::Report;
pub use run::{Phase, Run};
pub use stages::{
    finetune, pretrain_source, stage1_search, stage2_finetune, vanilla_finetune, FinetuneOutcome, InScopeInit,
    PretrainOutcome, RoundLog, RewardOracle, SearchOutcome,
};
