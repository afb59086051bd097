//! End-to-end orchestration over a manifest of precomputed model outputs,
//! plus synthetic fixture generation and directory-level evaluation.

mod config;
mod eval;
mod manifest;
mod run;
mod synth;

pub use config::{PipelineConfig, PipelineParams, Toggles};
pub use eval::{
    align, eval_metric, eval_report, load_instance_dir, load_label_dir, EvalOptions, EvalReport, MetricKind,
};
pub use manifest::{FrameBundle, Manifest, SegformerSet, StagePair};
pub use run::{run_pipeline, run_pipeline_with, FrameRecord, RunMetrics, RunReport, REPORT_FILE};
pub use synth::{synth_fixtures, Defects, SynthSpec, CONFIG_FILE, MANIFEST_FILE};
