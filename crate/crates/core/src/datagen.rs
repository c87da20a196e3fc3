//! Seeded synthetic tables: product reviews, a diabetes-style screening
//! table, clustered drift data and a wide numeric table for loader benches.
//!
//! Every generator is a pure function of its arguments and seed.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::storage::{Catalog, Column, DataType, Schema, StorageError, Table, Tuple, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

pub const BRANDS: &[&str] =
    &["Acme", "Brightline", "Contoso", "Northwind", "Special Goods", "Umbrella", "Vandelay", "Wonka"];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn review_schema(name: &str) -> Schema {
    Schema::new(
        name,
        vec![
            Column::new("review_id", DataType::Int64).unique(),
            Column::new("score", DataType::Float64),
            Column::new("brand_name", DataType::Text),
            Column::new("text_len", DataType::Int64),
            Column::new("helpful_votes", DataType::Int64),
            Column::new("verified", DataType::Bool),
        ],
    )
}

/// Review rows. `score` in [1, 5] is a smooth function of length, votes,
/// verification and brand plus Gaussian noise (std 0.25).
pub fn review_rows(n: usize, seed: u64) -> Vec<Tuple> {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.25).expect("valid std");
    (0..n)
        .map(|i| {
            let b = r.gen_range(0..BRANDS.len());
            let text_len: i64 = r.gen_range(10..600);
            let votes: i64 = r.gen_range(0..40);
            let verified = r.gen_bool(0.6);
            // Brand effect alternates sign so no single ordering explains it.
            let brand = if b % 2 == 0 { 0.6 } else { -0.6 };
            let z = 0.006 * (text_len as f64 - 300.0)
                + 0.05 * (votes as f64 - 20.0)
                + if verified { 0.7 } else { -0.3 }
                + brand;
            let score = (1.0 + 4.0 * sigmoid(z) + noise.sample(&mut r)).clamp(1.0, 5.0);
            vec![
                Value::Int(i as i64 + 1),
                Value::Float(score),
                Value::Text(BRANDS[b].to_string()),
                Value::Int(text_len),
                Value::Int(votes),
                Value::Bool(verified),
            ]
        })
        .collect()
}

pub fn load_review(catalog: &Catalog, name: &str, n: usize, seed: u64) -> Result<Arc<Table>, GenError> {
    let t = catalog.create_table(review_schema(name))?;
    t.insert_many(review_rows(n, seed))?;
    Ok(t)
}

pub const DIABETES_FEATURES: &[&str] =
    &["pregnancies", "glucose", "blood_pressure", "skin_thickness", "insulin", "bmi", "diabetes_pedigree", "age"];

pub fn diabetes_schema(name: &str) -> Schema {
    let mut cols: Vec<Column> = DIABETES_FEATURES
        .iter()
        .map(|f| {
            Column::new(*f, if matches!(*f, "bmi" | "diabetes_pedigree") { DataType::Float64 } else { DataType::Int64 })
        })
        .collect();
    cols.push(Column::new("outcome", DataType::Int64));
    Schema::new(name, cols)
}

/// Screening rows; `outcome` is Bernoulli of a logistic dominated by glucose.
pub fn diabetes_rows(n: usize, seed: u64) -> Vec<Tuple> {
    let mut r = rng(seed);
    let g = |r: &mut ChaCha8Rng, mean: f64, std: f64, lo: f64, hi: f64| {
        (mean + std * r.sample::<f64, _>(StandardNormal)).clamp(lo, hi)
    };
    (0..n)
        .map(|_| {
            let preg = r.gen_range(0..12i64);
            let glucose = g(&mut r, 120.0, 30.0, 50.0, 200.0).round();
            let bp = g(&mut r, 70.0, 12.0, 30.0, 120.0).round();
            let skin = g(&mut r, 25.0, 9.0, 5.0, 60.0).round();
            let insulin = g(&mut r, 90.0, 60.0, 0.0, 400.0).round();
            let bmi = (g(&mut r, 32.0, 6.0, 16.0, 60.0) * 10.0).round() / 10.0;
            let pedigree = (g(&mut r, 0.45, 0.3, 0.05, 2.0) * 1000.0).round() / 1000.0;
            let age = g(&mut r, 33.0, 11.0, 21.0, 80.0).round();
            let logit = 0.09 * (glucose - 130.0) + 0.12 * (bmi - 32.0) + 0.04 * (age - 33.0) + 0.8 * (pedigree - 0.45);
            let outcome = r.gen_bool(sigmoid(logit)) as i64;
            vec![
                Value::Int(preg),
                Value::Int(glucose as i64),
                Value::Int(bp as i64),
                Value::Int(skin as i64),
                Value::Int(insulin as i64),
                Value::Float(bmi),
                Value::Float(pedigree),
                Value::Int(age as i64),
                Value::Int(outcome),
            ]
        })
        .collect()
}

pub fn load_diabetes(catalog: &Catalog, name: &str, n: usize, seed: u64) -> Result<Arc<Table>, GenError> {
    let t = catalog.create_table(diabetes_schema(name))?;
    t.insert_many(diabetes_rows(n, seed))?;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    pub n_clusters: usize,
    pub rows_per_cluster: usize,
    pub n_features: usize,
    pub seed: u64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        Self { n_clusters: 5, rows_per_cluster: 8192, n_features: 8, seed: 42 }
    }
}

impl DriftSpec {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::InvalidSpec(m.to_string()));
        if self.n_clusters == 0 || self.n_clusters > 64 {
            return bad("n_clusters must be in [1, 64]");
        }
        if self.rows_per_cluster == 0 {
            return bad("rows_per_cluster must be positive");
        }
        if self.n_features == 0 || self.n_features > 256 {
            return bad("n_features must be in [1, 256]");
        }
        Ok(())
    }
}

/// One Gaussian blob with its own label function.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub center: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Row-major `rows x n_features`.
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

impl Cluster {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }
}

/// Blob centers are N(0, 2^2) per dimension and points are center + N(0, 1).
/// Labels are `tanh(w . (x - center)) * 2 + bias + N(0, 0.1^2)` with `w` and
/// `bias` drawn per cluster, so a model fit on one cluster is wrong on the next.
pub fn drift_clusters(spec: &DriftSpec) -> Result<Vec<Cluster>, GenError> {
    spec.validate()?;
    let mut r = rng(spec.seed);
    let d = spec.n_features;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Vec::with_capacity(spec.n_clusters);
    for _ in 0..spec.n_clusters {
        let center: Vec<f64> = (0..d).map(|_| 2.0 * r.sample::<f64, _>(StandardNormal)).collect();
        let weights: Vec<f64> = (0..d).map(|_| 1.5 * scale * r.sample::<f64, _>(StandardNormal)).collect();
        let bias = r.gen_range(-2.0..2.0);
        let mut features = Vec::with_capacity(spec.rows_per_cluster * d);
        let mut labels = Vec::with_capacity(spec.rows_per_cluster);
        for _ in 0..spec.rows_per_cluster {
            let mut z = 0.0;
            for j in 0..d {
                let e: f64 = r.sample(StandardNormal);
                features.push(center[j] + e);
                z += weights[j] * e;
            }
            labels.push(2.0 * z.tanh() + bias + 0.1 * r.sample::<f64, _>(StandardNormal));
        }
        out.push(Cluster { center, weights, bias, features, labels });
    }
    Ok(out)
}

pub fn drift_schema(name: &str, n_features: usize) -> Schema {
    let mut cols: Vec<Column> = (0..n_features).map(|j| Column::new(format!("x{j}"), DataType::Float64)).collect();
    cols.push(Column::new("y", DataType::Float64));
    Schema::new(name, cols)
}

/// Loads clusters as tables `c1..ck`. Returns the created tables in order.
pub fn load_drift(catalog: &Catalog, spec: &DriftSpec) -> Result<Vec<Arc<Table>>, GenError> {
    let clusters = drift_clusters(spec)?;
    let d = spec.n_features;
    let mut tables = Vec::with_capacity(clusters.len());
    for (i, c) in clusters.iter().enumerate() {
        let t = catalog.create_table(drift_schema(&format!("c{}", i + 1), d))?;
        t.insert_many(c.features.chunks(d).zip(&c.labels).map(|(x, y)| {
            let mut row: Tuple = x.iter().map(|v| Value::Float(*v)).collect();
            row.push(Value::Float(*y));
            row
        }))?;
        tables.push(t);
    }
    Ok(tables)
}

/// `n_features` uniform columns plus `y = sum(x) / n_features`, used by the
/// loader throughput comparison.
pub fn wide_rows(n: usize, n_features: usize, seed: u64) -> Vec<Tuple> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let xs: Vec<f64> = (0..n_features).map(|_| r.gen_range(-1.0..1.0)).collect();
            let y = xs.iter().sum::<f64>() / n_features as f64;
            let mut row: Tuple = xs.into_iter().map(Value::Float).collect();
            row.push(Value::Float(y));
            row
        })
        .collect()
}

pub fn load_wide(
    catalog: &Catalog,
    name: &str,
    n: usize,
    n_features: usize,
    seed: u64,
) -> Result<Arc<Table>, GenError> {
    let t = catalog.create_table(drift_schema(name, n_features))?;
    t.insert_many(wide_rows(n, n_features, seed))?;
    Ok(t)
}

/// Deterministic shuffle helper shared by experiment drivers.
pub fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_reproducible() {
        assert_eq!(review_rows(50, 3), review_rows(50, 3));
        assert_ne!(review_rows(50, 3), review_rows(50, 4));
        let s = DriftSpec { rows_per_cluster: 10, ..Default::default() };
        assert_eq!(drift_clusters(&s).unwrap(), drift_clusters(&s).unwrap());
    }

    #[test]
    fn drift_spec_validation() {
        for bad in [
            DriftSpec { n_clusters: 0, ..Default::default() },
            DriftSpec { rows_per_cluster: 0, ..Default::default() },
            DriftSpec { n_features: 0, ..Default::default() },
        ] {
            assert!(matches!(drift_clusters(&bad), Err(GenError::InvalidSpec(_))));
        }
    }

    #[test]
    fn tables_load_with_expected_shape() {
        let cat = Catalog::in_memory(64);
        let t = load_review(&cat, "review", 200, 1).unwrap();
        assert_eq!(t.row_count(), 200);
        let rows = t.collect().unwrap();
        assert!(rows.iter().all(|r| (1.0..=5.0).contains(&r[1].as_f64().unwrap())));
        assert!(rows.iter().any(|r| r[2] == Value::Text("Special Goods".into())));
        let d = load_diabetes(&cat, "diabetes", 300, 1).unwrap();
        let pos = d.collect().unwrap().iter().filter(|r| r[8] == Value::Int(1)).count();
        assert!(pos > 30 && pos < 270, "both classes present: {pos}");
        let spec = DriftSpec { rows_per_cluster: 16, n_features: 3, ..Default::default() };
        let ts = load_drift(&cat, &spec).unwrap();
        assert_eq!(ts.iter().map(|t| t.name().to_string()).collect::<Vec<_>>(), ["c1", "c2", "c3", "c4", "c5"]);
        assert_eq!(ts[4].schema().arity(), 4);
    }

    #[test]
    fn clusters_have_distinct_label_functions() {
        let c = drift_clusters(&DriftSpec { rows_per_cluster: 4, ..Default::default() }).unwrap();
        assert!(c.windows(2).all(|w| w[0].weights != w[1].weights && w[0].bias != w[1].bias));
    }
}
