//! Experiment runner: configs, the train / fit / evaluate pipeline, and
//! report emission.

pub mod config;
pub mod report;
pub mod run;

pub use config::{
    BuiltExperiment, ControlVariateSpec, DatasetSpec, ExperimentConfig, FamilySpec, FunctionalSpec, MethodSpec,
    Protocol, SamplerSpec, TargetSpec,
};
pub use report::{
    emit_report, to_json_string, EstimatorSummary, FittedControlVariate, FittedMethod, MethodReport, Quartiles,
    RunInfo, VrfReport, SCHEMA_VERSION,
};
pub use run::{
    acf_dump, bn_sweep, evaluate_control_variates, evaluate_training, run_experiment, sample_stream, train_and_fit,
    vrf, write_sweep_csv, Evaluation, SweepRow, TrainingOutcome, VRF_FLOOR,
};
