//! Learned join-order selection for select-project-join queries.
//!
//! Candidates are left-deep hash-join orders. A dual-module model scores
//! each candidate against the current system condition and the lowest
//! predicted cost wins. Costs are tuples touched, counted exactly.

mod bench;
mod data;
mod model;
mod plan;
mod tape;
mod train;

pub use bench::{parse_queries, parse_tables_spec, run_qo_bench, QoBench};
pub use data::{
    ColRef, ColumnStats, GenParams, JoinPred, QoDb, Query, QueryStats, RangeFilter, Relation, SystemCondition,
    TableStats, COND_DIM, COND_TOKENS, CORR_RANGE, FILTER_DOMAIN, HIST_BINS, JOIN_SEL_RANGE, MAX_GEN_TABLES,
    ROWS_RANGE, SKEW_RANGE,
};
pub use model::{Adam, DualModel, Sample, EMBED, HEADS};
pub use plan::{
    build_plan, enumerate_plans, execute, heuristic_choice, scan_estimate, Enumeration, Execution, NodeKind, PlanNode,
    PlanTree, TrueCards, MAX_CANDIDATES, MAX_TABLES, NODE_DIM,
};
pub use tape::{Mat, Tape, Var};
pub use train::{
    config_queries, evaluate, finetune_on_labels, label_config, mean_regret, pretrain, random_choice_regret,
    within_factor, workload, workload_params, Labeled, Mode, Outcome, PretrainConfig, PretrainRound, SkewMode,
};

use thiserror::Error;

use crate::storage::StorageError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QoError {
    #[error("query joins {0} tables; at most 6 are supported")]
    TooManyTables(usize),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("fine-tuning needs at least one labeled plan")]
    NoLabels,
    #[error("training diverged")]
    Diverged,
    #[error(transparent)]
    Storage(#[from] StorageError),
}
