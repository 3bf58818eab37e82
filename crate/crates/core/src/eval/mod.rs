//! Metrics, synthetic scenes and the degradation sweep.

pub mod metrics;
pub mod sweep;
pub mod synthetic;

pub use metrics::{psnr, ssim, PSNR_CAP_DB};
pub use sweep::{
    collect_scenes, evaluate_scene, format_cell, run_sweep, Bicubic, ExternalDir, MetricReport, MetricRow, NamedScene, SrMethod,
    SweepSpec,
};
pub use synthetic::{make_synthetic_scene, make_texture, SyntheticScene};
