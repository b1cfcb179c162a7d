//! Dataset assembly, the optimization loop, and gradient verification.

mod gradcheck;
mod samples;
mod trainer;

pub use gradcheck::{gradcheck, GradcheckReport, GroupReport, GRADCHECK_TOL};
pub use samples::{
    assemble_sample, build_samples, split_episodes, Dataset, SampleRef, SamplerVariant,
};
pub use trainer::{train_loop, write_metrics_csv, EpochMetrics, TrainConfig, TrainResult};
