//! End-to-end orchestration: dataset partitioning, run configuration,
//! disk-mediated processing stages, evaluation harnesses, and report
//! assembly. Every stage reads its inputs from the run directory and
//! writes its artifacts back there, so a full run and a stage-by-stage
//! rerun follow one code path and produce byte-identical outputs under a
//! fixed seed.

pub mod config;
pub mod harness;
pub mod partition;
pub mod stages;

pub use config::{config_hash, load_config, RunConfig, CONFIG_SCHEMA_VERSION};
pub use harness::{
    default_perturbations, run_baselines, run_blind_test, run_sensitivity, run_time_forward,
    verify_report, BaselineResults, EvaluationReport, MetricsRow, Perturbation,
};
pub use partition::{make_partition, ManifestRow, PartitionPlan, Split};
pub use stages::{run_all, run_stage, Stage, StageOutcome, Workspace};

/// Pipeline RNG stream purposes, disjoint from the generator's and the
/// model's so no stage perturbs another's draws.
pub(crate) const STREAM_SPLIT: u64 = 20;
pub(crate) const STREAM_SENSITIVITY: u64 = 22;

/// SplitMix64 finalizer over (seed, a, b); decorrelates derived seeds.
pub(crate) fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ (a.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (b.wrapping_add(1)).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
