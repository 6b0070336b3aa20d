//! Losses, metrics, the avatar model, staged training and synthetic data.

pub mod dataset;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synth;
pub mod train;

pub use dataset::{Dataset, Sample};
pub use loss::{compute_loss, image_loss, offset_loss, ImageHook, ImageLoss, LossHooks, LossOutput, LossTerms, LossWeights};
pub use metrics::{cap_psnr, mse, psnr, psnr_where, ssim, MetricsReport, MetricsSummary, ViewMetrics, PSNR_CAP};
pub use model::{pose_vector, root_normalized, AvatarModel, FrameInputs, ModelConfig, ModelGrads};
pub use optim::{cosine_lr, Adam};
pub use synth::{synthesize, SynthConfig, Teacher};
pub use train::{
    build_face_from_data, evaluate, render_pair, run_stage, supervised_step, train, view_metrics, LossRecord, Stage,
    TrainReport, TrainSchedule,
};
