use std::fmt;

use serde::{Deserialize, Serialize};

use super::encode::fnv1a;
use crate::models::ModelId;
use crate::sql::{BoundExpr, ResolvedPredict, TaskKind};
use crate::storage::{DataType, Schema, Tuple};

/// Catalog identity of a trained model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelKey {
    pub source_table: String,
    pub target: String,
    /// FNV-1a over the ordered feature names and their encodings.
    pub feature_fingerprint: u64,
    pub task: TaskKind,
}

fn encoding_tag(ty: DataType) -> &'static str {
    match ty {
        DataType::Int64 | DataType::Float64 => "zscore",
        DataType::Bool => "bool",
        DataType::Text => "dict",
    }
}

impl ModelKey {
    pub fn new(source_table: &str, target: &str, features: &[(String, DataType)], task: TaskKind) -> Self {
        let mut buf = Vec::new();
        for (name, ty) in features {
            buf.extend_from_slice(name.to_lowercase().as_bytes());
            buf.push(0x1f);
            buf.extend_from_slice(encoding_tag(*ty).as_bytes());
            buf.push(0x1e);
        }
        Self {
            source_table: source_table.to_lowercase(),
            target: target.to_lowercase(),
            feature_fingerprint: fnv1a(&buf),
            task,
        }
    }

    pub fn of(r: &ResolvedPredict) -> Self {
        let feats: Vec<(String, DataType)> = r.features.iter().cloned().zip(r.feature_types.iter().copied()).collect();
        Self::new(r.table.name(), &r.target, &feats, r.task)
    }
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let task = match self.task {
            TaskKind::Value => "VALUE",
            TaskKind::Class => "CLASS",
        };
        write!(f, "{task} {}.{} [{:016x}]", self.source_table, self.target, self.feature_fingerprint)
    }
}

/// Operator tree. Data flows from the leaves up.
#[derive(Debug, Clone)]
pub enum PhysicalPlan {
    Scan {
        table: String,
        filter: Option<BoundExpr>,
    },
    InlineRows {
        rows: Vec<Tuple>,
    },
    Filter {
        input: Box<PhysicalPlan>,
        predicate: BoundExpr,
    },
    Project {
        input: Box<PhysicalPlan>,
        exprs: Vec<BoundExpr>,
        names: Vec<String>,
    },
    /// Equi-join; `right_key` indexes the right input's own columns.
    HashJoin {
        left: Box<PhysicalPlan>,
        right: Box<PhysicalPlan>,
        left_key: usize,
        right_key: usize,
        residual: Option<BoundExpr>,
    },
    NestedLoopJoin {
        left: Box<PhysicalPlan>,
        right: Box<PhysicalPlan>,
        on: BoundExpr,
    },
    Limit {
        input: Box<PhysicalPlan>,
        n: u64,
    },
    CreateTable {
        schema: Schema,
    },
    Insert {
        table: String,
        rows: Vec<Tuple>,
    },
    Update {
        table: String,
        assignments: Vec<(usize, BoundExpr)>,
        filter: Option<BoundExpr>,
    },
    Delete {
        table: String,
        filter: Option<BoundExpr>,
    },
    Train {
        input: Box<PhysicalPlan>,
        key: ModelKey,
    },
    FineTune {
        input: Box<PhysicalPlan>,
        key: ModelKey,
        mid: ModelId,
    },
    /// `prepare` is the Train or FineTune branch that must finish before
    /// inference, if any.
    Inference {
        prepare: Option<Box<PhysicalPlan>>,
        input: Box<PhysicalPlan>,
        key: ModelKey,
        mid: Option<ModelId>,
    },
}

impl PhysicalPlan {
    pub fn name(&self) -> &'static str {
        match self {
            PhysicalPlan::Scan { .. } => "Scan",
            PhysicalPlan::InlineRows { .. } => "InlineRows",
            PhysicalPlan::Filter { .. } => "Filter",
            PhysicalPlan::Project { .. } => "Project",
            PhysicalPlan::HashJoin { .. } => "HashJoin",
            PhysicalPlan::NestedLoopJoin { .. } => "NestedLoopJoin",
            PhysicalPlan::Limit { .. } => "Limit",
            PhysicalPlan::CreateTable { .. } => "CreateTable",
            PhysicalPlan::Insert { .. } => "Insert",
            PhysicalPlan::Update { .. } => "Update",
            PhysicalPlan::Delete { .. } => "Delete",
            PhysicalPlan::Train { .. } => "Train",
            PhysicalPlan::FineTune { .. } => "FineTune",
            PhysicalPlan::Inference { .. } => "Inference",
        }
    }

    /// Operators in execution order (post-order, prepare branch first).
    pub fn pipeline(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        self.walk(&mut out);
        out
    }

    fn walk(&self, out: &mut Vec<&'static str>) {
        match self {
            PhysicalPlan::Filter { input, .. }
            | PhysicalPlan::Project { input, .. }
            | PhysicalPlan::Limit { input, .. }
            | PhysicalPlan::Train { input, .. }
            | PhysicalPlan::FineTune { input, .. } => input.walk(out),
            PhysicalPlan::HashJoin { left, right, .. } | PhysicalPlan::NestedLoopJoin { left, right, .. } => {
                left.walk(out);
                right.walk(out);
            }
            PhysicalPlan::Inference { prepare, input, .. } => {
                if let Some(p) = prepare {
                    p.walk(out);
                }
                input.walk(out);
            }
            _ => {}
        }
        out.push(self.name());
    }

    pub fn count(&self, name: &str) -> usize {
        self.pipeline().iter().filter(|n| **n == name).count()
    }
}

impl fmt::Display for PhysicalPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pipeline().join(" -> "))
    }
}

/// Model state the planner needs for one key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelStatus {
    Missing,
    Healthy(ModelId),
    Drifted(ModelId),
}

/// PREDICT plan: train when no model exists, fine-tune a drifted one,
/// then always run inference over the inference scan or inline rows.
pub fn plan_predict(r: &ResolvedPredict, status: ModelStatus) -> PhysicalPlan {
    let key = ModelKey::of(r);
    let train_scan =
        || Box::new(PhysicalPlan::Scan { table: r.table.name().to_string(), filter: r.train_filter.clone() });
    let (prepare, mid) = match status {
        ModelStatus::Missing => (Some(Box::new(PhysicalPlan::Train { input: train_scan(), key: key.clone() })), None),
        ModelStatus::Drifted(mid) => {
            (Some(Box::new(PhysicalPlan::FineTune { input: train_scan(), key: key.clone(), mid })), Some(mid))
        }
        ModelStatus::Healthy(mid) => (None, Some(mid)),
    };
    let input = match &r.inline_rows {
        Some(rows) => PhysicalPlan::InlineRows { rows: rows.clone() },
        None => PhysicalPlan::Scan { table: r.table.name().to_string(), filter: r.infer_filter.clone() },
    };
    PhysicalPlan::Inference { prepare, input: Box::new(input), key, mid }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{analyze_predict, parse_statement, Statement};
    use crate::storage::{Catalog, Column, Value};

    fn resolved(sql: &str) -> ResolvedPredict {
        let cat = Catalog::in_memory(16);
        let t = cat
            .create_table(Schema::new(
                "review",
                vec![
                    Column::new("score", DataType::Float64),
                    Column::new("brand_name", DataType::Text),
                    Column::new("text_len", DataType::Int64),
                ],
            ))
            .unwrap();
        for i in 0..8 {
            let b = if i % 2 == 0 { "Special Goods" } else { "Acme" };
            t.insert(vec![Value::Float(i as f64), Value::Text(b.into()), Value::Int(i)]).unwrap();
        }
        let Statement::Predict(p) = parse_statement(sql).unwrap() else { panic!() };
        analyze_predict(&p, &cat).unwrap()
    }

    const Q: &str = "PREDICT VALUE OF score FROM review WHERE brand_name = 'Special Goods' TRAIN ON * WITH brand_name <> 'Special Goods'";

    #[test]
    fn predict_plans_by_model_status() {
        let r = resolved(Q);
        assert_eq!(plan_predict(&r, ModelStatus::Missing).pipeline(), ["Scan", "Train", "Scan", "Inference"]);
        assert_eq!(plan_predict(&r, ModelStatus::Healthy(3)).pipeline(), ["Scan", "Inference"]);
        let drifted = plan_predict(&r, ModelStatus::Drifted(3));
        assert_eq!(drifted.to_string(), "Scan -> FineTune -> Scan -> Inference");
        let inline = resolved("PREDICT VALUE OF score FROM review TRAIN ON text_len VALUES (1), (2)");
        assert_eq!(plan_predict(&inline, ModelStatus::Healthy(1)).pipeline(), ["InlineRows", "Inference"]);
    }

    #[test]
    fn model_key_identity() {
        let a = ModelKey::of(&resolved(Q));
        let b = ModelKey::of(&resolved(&Q.replace("WHERE brand_name = 'Special Goods'", "WHERE text_len > 3")));
        assert_eq!(a, b, "inference scope is not part of the key");
        let c = ModelKey::of(&resolved(
            "PREDICT VALUE OF score FROM review WHERE text_len > 0 TRAIN ON text_len, brand_name",
        ));
        assert_ne!(a.feature_fingerprint, c.feature_fingerprint, "feature order matters");
        let f = |t| ModelKey::new("t", "y", &[("x".into(), t)], TaskKind::Value);
        assert_ne!(f(DataType::Int64), f(DataType::Text));
        assert_eq!(f(DataType::Int64), f(DataType::Float64));
    }
}
