//! Training and evaluation: SSIM loss, NMSE/PSNR metrics, Adam with step
//! decay, the epoch loop, and deterministic validation.

pub mod adam;
pub mod eval;
pub mod metrics;
pub mod ssim;
pub mod trainer;

pub use adam::{adam_step, learning_rate, OptimConfig};
pub use eval::{evaluate, score, EvalReport, EvalRow, METHOD_MODEL, METHOD_ZERO_FILLED};
pub use metrics::{format_sig6, nmse, psnr, MetricsRow};
pub use ssim::{batch_loss, ssim, ssim_grad, ssim_with_grad, SsimConfig};
pub use trainer::{
    masked_kspace, record_target, resample_kspace, train, TrainOptions, TrainOutcome,
};
