pub mod bo;
pub mod cc;
pub mod config;
pub mod datagen;
pub mod engine;
pub mod exec;
pub mod experiments;
pub mod models;
pub mod monitor;
pub mod nn;
pub mod qo;
pub mod sql;
pub mod storage;

pub use config::{Config, ConfigError};
pub use engine::{AiEngine, EngineError, RuntimeEndpoint};
pub use exec::{Database, ExecError, QueryResult, ResultSet};
pub use nn::{Matrix, Network, NnError};
pub use qo::QoError;
pub use sql::SqlError;
pub use storage::{StorageError, Value};
