use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::curriculum::{solve_lambda, CurriculumSchedule, Lambda};
use super::objective::{evaluate_batch, mean_pool_loss, pool_losses, AttackContext};
use super::optimizer::{initial_sticker, OptimizerSettings, OptimizerState};
use super::sampling::{sample_minibatch, TransformSample, TransformSet};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub stage: usize,
    /// `None` while every weight is forced to 1.
    pub lambda: Option<f64>,
    pub mean_weight: f64,
    /// Mean loss over the evaluation pool, on evaluation iterations only.
    pub pool_loss: Option<f64>,
    /// Unweighted mean attack loss of the minibatch before the update.
    pub batch_loss: f64,
    pub tv: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: &str = "iter,stage,lambda,mean_weight,pool_loss,batch_loss,tv";

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ConvergenceTrace {
    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iter <= last.iter {
                return Err(Error::Parameter(format!(
                    "trace iteration {} does not follow {}",
                    record.iter, last.iter
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(iteration, pool loss)` for every evaluated iteration.
    pub fn pool_points(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.pool_loss.map(|l| (r.iter, l)))
            .collect()
    }

    pub fn final_pool_loss(&self) -> Option<f64> {
        self.pool_points().last().map(|p| p.1)
    }

    /// Mean pool loss over evaluations within the first `fraction` of the run.
    pub fn early_pool_loss(&self, fraction: f64) -> Option<f64> {
        let cutoff = (self.records.len() as f64 * fraction).ceil() as usize;
        let pts: Vec<f64> = self
            .pool_points()
            .into_iter()
            .filter(|(i, _)| *i <= cutoff)
            .map(|p| p.1)
            .collect();
        if pts.is_empty() {
            None
        } else {
            Some(pts.iter().sum::<f64>() / pts.len() as f64)
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iter,
                r.stage,
                opt_field(r.lambda),
                r.mean_weight,
                opt_field(r.pool_loss),
                r.batch_loss,
                r.tv
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub optimizer: OptimizerSettings,
    /// Evaluate the pool every this many iterations (and at the end); 0
    /// evaluates only at the end.
    pub eval_interval: usize,
    pub batch_seed: u64,
    pub init_seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            optimizer: OptimizerSettings::default(),
            eval_interval: 50,
            batch_seed: 404,
            init_seed: 303,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub sticker: ImageTensor,
    pub trace: ConvergenceTrace,
    /// Pool loss of the initial sticker.
    pub initial_pool_loss: Option<f64>,
    /// Curriculum parameter per stage (`None` for all-ones stages).
    pub stage_lambdas: Vec<Option<f64>>,
}

enum Weighting {
    AllOnes,
    Proportion(f64),
}

struct StagePlan {
    iterations: usize,
    weighting: Weighting,
}

/// Called after every iteration with the 1-based iteration and the sticker.
pub type Observer<'a> = dyn FnMut(usize, &ImageTensor) + 'a;

fn optimize(
    plans: &[StagePlan],
    settings: &RunSettings,
    ctx: &AttackContext,
    train: &TransformSet,
    eval_pool: &[TransformSample],
    observer: &mut Observer<'_>,
) -> Result<AttackOutcome> {
    settings.optimizer.validate()?;
    if train.is_empty() {
        return Err(Error::Parameter("training pool is empty".into()));
    }
    let placement = ctx.placement;
    let init = initial_sticker(placement.sticker_height, placement.sticker_width, settings.init_seed);
    let mut state = OptimizerState::new(init, &settings.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.batch_seed);
    let mut trace = ConvergenceTrace::default();
    let total: usize = plans.iter().map(|p| p.iterations).sum();
    let initial_pool_loss = if eval_pool.is_empty() {
        None
    } else {
        Some(mean_pool_loss(ctx, &state.sticker, eval_pool)?)
    };
    let mut stage_lambdas = Vec::with_capacity(plans.len());
    let mut previous: Option<f64> = None;
    let mut iter = 0;

    for (stage, plan) in plans.iter().enumerate() {
        let lambda = match plan.weighting {
            Weighting::AllOnes => Lambda::AllOnes,
            Weighting::Proportion(beta) => {
                let (mapped, _) = ctx.map_sticker(&state.sticker)?;
                let losses = pool_losses(ctx, &mapped, &train.samples)?;
                match solve_lambda(&losses, beta)?.lambda {
                    Lambda::Finite(l) => {
                        // Curriculum parameters must strictly increase.
                        let l = match previous {
                            Some(p) if l <= p => p * (1.0 + 1e-6),
                            _ => l,
                        };
                        previous = Some(l);
                        Lambda::Finite(l)
                    }
                    Lambda::AllOnes => Lambda::AllOnes,
                }
            }
        };
        stage_lambdas.push(lambda.value());

        for _ in 0..plan.iterations {
            iter += 1;
            let idx = sample_minibatch(&mut rng, train.len(), settings.optimizer.batch_size);
            let batch: Vec<TransformSample> = idx.iter().map(|&i| train.samples[i]).collect();
            let eval = evaluate_batch(
                &state.sticker,
                &batch,
                |losses| lambda.weights(losses),
                ctx,
                settings.optimizer.tv_weight,
            )?;
            state.sgd_momentum_step(&eval.grad)?;
            let evaluate = !eval_pool.is_empty()
                && (iter == total || (settings.eval_interval > 0 && iter % settings.eval_interval == 0));
            let pool_loss = if evaluate {
                Some(mean_pool_loss(ctx, &state.sticker, eval_pool)?)
            } else {
                None
            };
            trace.push(TraceRecord {
                iter,
                stage,
                lambda: lambda.value(),
                mean_weight: eval.mean_weight(),
                pool_loss,
                batch_loss: eval.mean_loss(),
                tv: eval.tv,
            })?;
            observer(iter, &state.sticker);
        }
    }

    Ok(AttackOutcome {
        sticker: state.sticker,
        trace,
        initial_pool_loss,
        stage_lambdas,
    })
}

/// Plain expectation over transformation: every sampled condition carries
/// weight 1 for `iterations` minibatch steps.
pub fn run_eot(
    iterations: usize,
    settings: &RunSettings,
    ctx: &AttackContext,
    train: &TransformSet,
    eval_pool: &[TransformSample],
    observer: &mut Observer<'_>,
) -> Result<AttackOutcome> {
    let plans = [StagePlan {
        iterations,
        weighting: Weighting::AllOnes,
    }];
    optimize(&plans, settings, ctx, train, eval_pool, observer)
}

/// Curriculum attack: at each stage entry the curriculum parameter is
/// calibrated so the mean weight over the training pool equals the stage's
/// proportion; inside the stage weights are recomputed per minibatch.
pub fn run_caa(
    schedule: &CurriculumSchedule,
    settings: &RunSettings,
    ctx: &AttackContext,
    train: &TransformSet,
    eval_pool: &[TransformSample],
    observer: &mut Observer<'_>,
) -> Result<AttackOutcome> {
    schedule.validate()?;
    let plans: Vec<StagePlan> = schedule
        .stages()
        .into_iter()
        .map(|s| StagePlan {
            iterations: s.epochs,
            weighting: if s.beta >= 1.0 {
                Weighting::AllOnes
            } else {
                Weighting::Proportion(s.beta)
            },
        })
        .collect();
    optimize(&plans, settings, ctx, train, eval_pool, observer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iter: usize, pool: Option<f64>) -> TraceRecord {
        TraceRecord {
            iter,
            stage: 0,
            lambda: None,
            mean_weight: 1.0,
            pool_loss: pool,
            batch_loss: 0.5,
            tv: 1.0,
        }
    }

    #[test]
    fn trace_is_append_only_in_iteration_order() {
        let mut t = ConvergenceTrace::default();
        t.push(rec(1, None)).unwrap();
        t.push(rec(2, Some(0.4))).unwrap();
        assert!(t.push(rec(2, None)).is_err());
        assert_eq!(t.len(), 2);
        assert_eq!(t.final_pool_loss(), Some(0.4));
    }

    #[test]
    fn csv_layout() {
        let mut t = ConvergenceTrace::default();
        t.push(rec(1, None)).unwrap();
        t.push(TraceRecord {
            lambda: Some(0.75),
            ..rec(2, Some(0.25))
        })
        .unwrap();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines[1], "1,0,,1,,0.5,1");
        assert_eq!(lines[2], "2,0,0.75,1,0.25,0.5,1");
    }

    #[test]
    fn early_window_uses_leading_evaluations() {
        let mut t = ConvergenceTrace::default();
        for i in 1..=20 {
            t.push(rec(i, if i % 2 == 0 { Some(i as f64) } else { None })).unwrap();
        }
        // First 10% = iterations 1..=2.
        assert_eq!(t.early_pool_loss(0.1), Some(2.0));
    }
}
