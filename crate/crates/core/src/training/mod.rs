//! Corpus builders and the three training stages.

mod corpus;
mod losses;
mod stages;
pub mod toy;

pub use corpus::{build_surrogate_corpus, read_corpus, square_resize, CorpusEntry, CorpusReport, RecipeRanges, MANIFEST_NAME};
pub use losses::{
    codec_loss, flow_loss, kl_closed_form, kl_mean, perceptual_proxy, stage1_loss, stage2_loss, stage3_loss, LossTerms,
    PerceptualProxy, Stage1Weights, Stage3Weights, StageGraph, PROXY_SEED,
};
pub use stages::{
    checkpoint_path, codec_step, cosine_lr, encoder_means, frame_windows, integrate_baseline, metrics_path, prepare_pairs,
    prepare_videos, run_stage, stage1_step, stage2_step, stage3_step, teacher_latents, trainable_prefixes,
    validate_stage1, MetricsRow, StageOutcome, TrainingConfig, Validation, VideoSample, METRICS_HEADER,
};
