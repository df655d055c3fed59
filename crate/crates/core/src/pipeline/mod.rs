//! From a CSV file to calibrated, evaluated models: ingestion with
//! dataset recipes, frozen preprocessing, stratified splits, subgroup
//! oversampling, cross-validated hyperparameter search, lambda calibration
//! and fairness reports.

mod calibrate;
mod ingest;
mod oversample;
mod preprocess;
mod report;
mod schema;
mod split;
mod synthetic;
mod tune;

pub use calibrate::{
    calibrate_lambda, elbow, suggest_lambda_scale, Calibration, CalibrationConfig,
    CalibrationRecord, RunRecord, ELBOW_THRESHOLD, MIN_REGULARISER,
};
pub use ingest::{ingest_csv, ingest_reader, IngestReport, RawTable, RowReject};
pub use oversample::{oversample_subgroups, DEFAULT_MIN_COUNT};
pub use preprocess::{
    preprocess, ColumnTransform, Dataset, FittedProtected, FittedTransforms, ProtectedBlock,
};
pub use report::{
    evaluate_model, evaluate_predictions, observation_rps, EvalConfig, FairnessReport,
    IndependenceTests, SubgroupEcdf, SubgroupRow,
};
pub use schema::{ColumnSpec, DatasetSchema, Encoding, ProtectedKind, Recipe, Role, UnseenPolicy};
pub use split::{stratified_folds, stratified_split, SplitPlan, Splits};
pub use synthetic::{planted_bias, planted_bias_schema};
pub use tune::{
    cross_validate, tune_hyperparams, tune_with_strategy, Candidate, RandomSearch, SearchSpace,
    SearchStrategy, Trial, TuneResult, CV_FOLDS,
};
