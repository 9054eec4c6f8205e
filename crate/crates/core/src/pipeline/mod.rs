//! End-to-end orchestration: dataset generation, sweeps, the noise-type study,
//! the ablation, manifest evaluation and report emission.

mod config;
mod eval;
mod generate;
mod manifest;
mod masks;
mod report;
mod study;

pub use config::{JobConfig, NoiseMean, ScheduleSpec, StyleSource};
pub use eval::evaluate_manifest;
pub use generate::{
    generate_dataset, plan_sample, render_sample, write_config_echo, Rendered, ResolvedStyle, RunOptions, SamplePlan,
    Treatment, IMAGES_DIR,
};
pub use manifest::{Manifest, ManifestRecord, ManifestWriter, SampleSeeds, Status, CONFIG_ECHO_FILE, MANIFEST_FILE};
pub use masks::{load_masks, resolve_mask_paths, synthetic_dendrite};
pub use report::{emit_report, Report, REPORT_CSV, REPORT_JSON};
pub use study::{
    diversity, reference_stats, rms_distance, run_ablation, run_arms, run_noise_sweep, run_noise_type_study, AblationReport, Arm,
    ArmRow, EvalSample, Evaluator, NoiseTypeReport, NoiseTypeRow, SetMetrics, SweepPoint, SweepReport,
};
