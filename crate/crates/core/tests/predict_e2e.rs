use neurdb_core::config::Config;
use neurdb_core::datagen::{load_diabetes, load_review};
use neurdb_core::exec::{Database, ExecError, QueryResult};
use neurdb_core::storage::Value;

const LISTING1: &str =
    "PREDICT VALUE OF score FROM review WHERE brand_name = 'Special Goods' TRAIN ON * WITH brand_name <> 'Special Goods'";
const LISTING2: &str = "PREDICT CLASS OF outcome FROM diabetes \
     TRAIN ON pregnancies, glucose, blood_pressure, skin_thickness, insulin, bmi, diabetes_pedigree, age \
     VALUES (6, 148, 72, 35, 0, 33.6, 0.627, 50), (1, 85, 66, 29, 0, 26.6, 0.351, 31)";

fn config() -> Config {
    let mut c = Config::default();
    c.batch_size = 64;
    c.epochs = 8;
    c.lr = 0.05;
    c
}

fn db(config: Config, reviews: usize, patients: usize) -> Database {
    let db = Database::open(config).unwrap();
    load_review(db.catalog(), "review", reviews, 7).unwrap();
    load_diabetes(db.catalog(), "diabetes", patients, 8).unwrap();
    db
}

fn predict(db: &Database, sql: &str) -> (neurdb_core::exec::ResultSet, neurdb_core::exec::ExecutionReport) {
    match db.execute_one(sql).unwrap() {
        QueryResult::Predict { rows, report } => (rows, report),
        other => panic!("expected predict result, got {other:?}"),
    }
}

#[test]
fn regression_listing_trains_then_reuses() {
    let db = db(config(), 3000, 10);
    let (rows, rep) = predict(&db, LISTING1);
    assert_eq!(rep.plan, "Scan -> Train -> Scan -> Inference");
    assert!(rep.trained && !rep.fine_tuned);
    assert_eq!(rows.columns, ["score", "brand_name", "text_len", "helpful_votes", "verified"]);
    assert!(!rows.rows.is_empty());
    assert!(rows.rows.iter().all(|r| r[1] == Value::Text("Special Goods".into())));
    assert!(rows.rows.iter().all(|r| r[0].as_f64().is_some_and(f64::is_finite)));
    let h = rep.holdout.unwrap();
    assert!(h.metric < 0.8 * h.baseline_metric, "mse {} vs mean predictor {}", h.metric, h.baseline_metric);

    let (again, rep2) = predict(&db, LISTING1);
    assert_eq!(rep2.plan, "Scan -> Inference");
    assert_eq!(again, rows, "healthy model reused without retraining");
}

#[test]
fn classification_listing_outputs_known_classes() {
    let db = db(config(), 10, 3000);
    let (rows, rep) = predict(&db, LISTING2);
    assert_eq!(rep.plan, "Scan -> Train -> InlineRows -> Inference");
    assert_eq!(rows.rows.len(), 2);
    assert!(rows.rows.iter().all(|r| matches!(r[0], Value::Int(0) | Value::Int(1))));
    let h = rep.holdout.unwrap();
    assert!(h.metric < 0.8 * h.baseline_metric, "error {} vs majority {}", h.metric, h.baseline_metric);
}

#[test]
fn drift_flag_schedules_finetune() {
    let db = db(config(), 1000, 10);
    let (_, rep) = predict(&db, LISTING1);
    let mid = rep.model.unwrap();
    db.monitor().flag_model(mid);
    let (_, rep) = predict(&db, LISTING1);
    assert_eq!(rep.plan, "Scan -> FineTune -> Scan -> Inference");
    assert!(rep.fine_tuned);
    assert_eq!(db.models().latest(mid).unwrap().version_vector().iter().filter(|v| **v > 1).count(), 1);
    let (_, rep) = predict(&db, LISTING1);
    assert_eq!(rep.plan, "Scan -> Inference");
}

#[test]
fn empty_scopes() {
    let db = db(config(), 200, 10);
    let err = db
        .execute_one("PREDICT VALUE OF score FROM review WHERE text_len > 0 TRAIN ON * WITH brand_name = 'Nobody'")
        .unwrap_err();
    assert!(matches!(err, ExecError::EmptyTrainingSet(_)), "{err}");
    let (rows, _) = predict(&db, "PREDICT VALUE OF score FROM review WHERE text_len > 100000 TRAIN ON text_len");
    assert!(rows.rows.is_empty());
}

#[test]
fn identical_seeds_give_identical_predictions() {
    let a = predict(&db(config(), 500, 10), LISTING1).0;
    let b = predict(&db(config(), 500, 10), LISTING1).0;
    assert_eq!(a, b);
    let mut other = config();
    other.seed = 43;
    assert_ne!(predict(&db(other, 500, 10), LISTING1).0, a);
}

#[test]
fn models_survive_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config();
    c.data_dir = Some(dir.path().to_path_buf());
    let first = {
        let db = db(c.clone(), 400, 10);
        predict(&db, LISTING1).0
    };
    let db = Database::open(c).unwrap();
    let (rows, rep) = predict(&db, LISTING1);
    assert_eq!(rep.plan, "Scan -> Inference");
    assert_eq!(rows, first);
    assert!(db.metrics_path().unwrap().exists());
}
