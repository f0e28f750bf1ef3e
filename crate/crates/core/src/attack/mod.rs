//! The optimisation core: transformation pools, the weighted expected
//! attack objective with its TV penalty, the curriculum weighting and the
//! momentum SGD loops.

mod curriculum;
mod objective;
mod optimizer;
mod runner;
mod sampling;
mod tv;

pub use curriculum::{caa_weights, solve_lambda, CurriculumSchedule, CurriculumStage, Lambda, LambdaSolution};
pub use objective::{
    eot_loss_and_grad, evaluate_batch, mean_pool_loss, pool_losses, AttackContext, BatchEvaluation,
};
pub use optimizer::{initial_sticker, OptimizerSettings, OptimizerState};
pub use runner::{
    run_caa, run_eot, AttackOutcome, ConvergenceTrace, Observer, RunSettings, TraceRecord, TRACE_HEADER,
};
pub use sampling::{
    sample_minibatch, FaceChoice, FaceTransformRanges, Range, StickerTransformRanges, TransformSample,
    TransformSet,
};
pub use tv::{tv_loss, tv_loss_grad, TV_EPS};
