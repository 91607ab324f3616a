//! The training loop with periodic evaluation, shared by the CLI and the
//! acceptance suite.

use super::env::EnvConfig;
use super::eval::{evaluate_policy, EvalResult};
use super::train::{StepRecord, Trainer};
use crate::Result;

/// One row of the metrics stream, emitted at every evaluation step.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub eval: EvalResult,
    /// Per-site mixture entropies (search networks only).
    pub entropies: Option<Vec<f64>>,
    pub edges_retained: Option<usize>,
}

impl MetricsRow {
    pub fn csv_header(sites: usize) -> Vec<String> {
        let mut h = vec!["step".to_string(), "loss".into(), "eval_success".into()];
        h.extend((1..=sites).map(|i| format!("entropy_site_{i}")));
        h.push("edges_retained".into());
        h
    }

    /// Fields in [`Self::csv_header`] order; architecture columns are empty
    /// for fixed networks.
    pub fn csv_record(&self, sites: usize) -> Vec<String> {
        let mut r = vec![self.step.to_string(), format!("{:.9}", self.loss), format!("{:.6}", self.eval.success_rate)];
        match &self.entropies {
            Some(e) => r.extend(e.iter().map(|v| format!("{v:.9}"))),
            None => r.extend(std::iter::repeat(String::new()).take(sites)),
        }
        r.push(self.edges_retained.map(|n| n.to_string()).unwrap_or_default());
        r
    }
}

/// Callbacks invoked by [`run_training`].
pub trait TrainingObserver {
    fn on_step(&mut self, _trainer: &Trainer, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    fn on_eval(&mut self, _trainer: &Trainer, _row: &MetricsRow) -> Result<()> {
        Ok(())
    }
}

impl TrainingObserver for () {}

/// Runs the trainer for its configured number of steps, evaluating the
/// greedy CEM policy on `eval_episodes` environments every `eval_every`
/// steps. Every evaluation uses the same episode seeds, so rows are
/// comparable across steps.
pub fn run_training<O: TrainingObserver>(
    trainer: &mut Trainer,
    env_cfg: &EnvConfig,
    eval_seed: u64,
    observer: &mut O,
) -> Result<Vec<MetricsRow>> {
    let cfg = trainer.config().clone();
    let mut rows = Vec::new();
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    while trainer.steps_done() < cfg.steps {
        let record = trainer.step()?;
        loss_sum += record.loss;
        loss_n += 1;
        observer.on_step(trainer, &record)?;
        if cfg.eval_every > 0 && record.step % cfg.eval_every == 0 {
            let eval = evaluate_policy(trainer.net(), env_cfg, trainer.cem(), cfg.eval_episodes, eval_seed)?;
            let row = MetricsRow {
                step: record.step,
                loss: loss_sum / loss_n as f64,
                eval,
                entropies: record.arch.as_ref().map(|a| a.entropies.clone()),
                edges_retained: record.arch.as_ref().map(|a| a.edges_retained),
            };
            (loss_sum, loss_n) = (0.0, 0);
            observer.on_eval(trainer, &row)?;
            rows.push(row);
        }
    }
    Ok(rows)
}
