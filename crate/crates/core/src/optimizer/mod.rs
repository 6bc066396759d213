//! Sequential surrogate-based optimization inside plausible intervals.
//!
//! The loop evaluates a Latin hypercube design, then repeatedly fits a Kriging
//! surrogate to every evaluation so far, proposes the point of maximal expected
//! improvement and evaluates it, until the evaluation budget is spent.

pub mod design;
pub mod infill;
pub mod kriging;

use std::path::Path;

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::mix_seed;
use crate::error::{Error, Result};
use crate::objective::{BlackBox, EvaluationRecord};

pub use design::{latin_hypercube, Design};
pub use infill::{expected_improvement, propose_infill, InfillOptions, Predictor};
pub use kriging::{fit_surrogate, Hyperparameters, Nugget, Surrogate, SurrogateOptions};

/// Default total number of objective evaluations.
pub const DEFAULT_BUDGET: usize = 200;

/// `max(2d, 10)`.
pub fn default_design_size(dimension: usize) -> usize {
    (2 * dimension).max(10)
}

#[derive(Clone, Debug)]
pub struct OptimizerOptions {
    pub budget: usize,
    /// Initial design size; `None` means [`default_design_size`].
    pub design_size: Option<usize>,
    pub seed: u64,
    pub surrogate: SurrogateOptions,
    pub infill: InfillOptions,
    /// Full multi-start hyperparameter search every this many infill steps;
    /// in between, a single warm-started local search.
    pub refit_interval: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            budget: DEFAULT_BUDGET,
            design_size: None,
            seed: 0,
            surrogate: SurrogateOptions::default(),
            infill: InfillOptions::default(),
            refit_interval: 10,
        }
    }
}

/// Evaluation history and loop position; also the checkpoint format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub history: Vec<EvaluationRecord>,
    pub best_index: Option<usize>,
    /// Number of infill iterations completed.
    pub iteration: usize,
    pub budget: usize,
    pub design_size: usize,
    /// Master seed; per-iteration streams are derived from it and `iteration`.
    pub seed: u64,
    pub bounds: Vec<(f64, f64)>,
    pub hyperparameters: Option<Hyperparameters>,
}

impl OptimizerState {
    pub fn new(bounds: Vec<(f64, f64)>, budget: usize, design_size: usize, seed: u64) -> Self {
        OptimizerState {
            history: Vec::new(),
            best_index: None,
            iteration: 0,
            budget,
            design_size,
            seed,
            bounds,
            hyperparameters: None,
        }
    }

    pub fn best(&self) -> Option<&EvaluationRecord> {
        self.best_index.map(|i| &self.history[i])
    }

    /// Best-so-far objective value after each evaluation.
    pub fn best_trace(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.history
            .iter()
            .map(|r| {
                best = best.min(r.epsilon);
                best
            })
            .collect()
    }

    fn push(&mut self, record: EvaluationRecord) {
        let better = self.best().is_none_or(|b| record.epsilon < b.epsilon);
        self.history.push(record);
        if better {
            self.best_index = Some(self.history.len() - 1);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: OptimizerState = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if s.best_index.is_some_and(|i| i >= s.history.len()) {
            return Err(Error::Structural("checkpoint best index out of range".into()));
        }
        Ok(s)
    }
}

/// Runs the loop from scratch.
pub fn optimize<B: BlackBox + ?Sized>(objective: &B, options: &OptimizerOptions) -> Result<OptimizerState> {
    let bounds = objective.bounds();
    let design_size = options.design_size.unwrap_or_else(|| default_design_size(bounds.len()));
    if options.budget < design_size {
        return Err(Error::param(format!(
            "budget {} is smaller than the initial design size {design_size}",
            options.budget
        )));
    }
    let state = OptimizerState::new(bounds, options.budget, design_size, options.seed);
    resume(objective, state, options, |_, _| Ok(()))
}

/// Continues `state` until its budget is spent, calling `on_eval` after every
/// new evaluation (with the record's index in the history).
pub fn resume<B, F>(
    objective: &B,
    mut state: OptimizerState,
    options: &OptimizerOptions,
    mut on_eval: F,
) -> Result<OptimizerState>
where
    B: BlackBox + ?Sized,
    F: FnMut(&OptimizerState, usize) -> Result<()>,
{
    let bounds = state.bounds.clone();
    if bounds != objective.bounds() {
        return Err(Error::Structural("checkpoint bounds do not match the objective".into()));
    }
    if state.budget < state.design_size {
        return Err(Error::param(format!(
            "budget {} is smaller than the initial design size {}",
            state.budget, state.design_size
        )));
    }
    if state.history.len() < state.design_size {
        let design = latin_hypercube(state.design_size, &bounds, mix_seed(state.seed, u64::MAX))?;
        for point in &design.points[state.history.len()..] {
            let record = objective.evaluate_point(point)?;
            state.push(record);
            on_eval(&state, state.history.len() - 1)?;
        }
        info!(
            "initial design of {} points done, best {:.4}",
            state.design_size,
            state.best().map_or(f64::NAN, |b| b.epsilon)
        );
    }
    while state.history.len() < state.budget {
        let iter_seed = mix_seed(state.seed, state.iteration as u64);
        let full = state.hyperparameters.is_none()
            || options.refit_interval <= 1
            || state.iteration.is_multiple_of(options.refit_interval);
        let mut sopts = options.surrogate.clone();
        sopts.seed = iter_seed;
        if !full {
            sopts.initial = state.hyperparameters.clone();
            sopts.restarts = 1;
        }
        let point = match fit_surrogate(&state.history, &bounds, &sopts) {
            Ok(surrogate) => {
                debug!(
                    "iteration {}: nugget {:.3e}, nll {:.3}",
                    state.iteration,
                    surrogate.nugget(),
                    surrogate.neg_log_likelihood()
                );
                let p = propose_infill(&surrogate, &bounds, iter_seed, &options.infill);
                state.hyperparameters = Some(surrogate.hyperparameters().clone());
                p
            }
            Err(e) => {
                warn!("surrogate fit failed ({e}); proposing a random point");
                let mut rng = ChaCha8Rng::seed_from_u64(iter_seed);
                design::uniform_point(&bounds, &mut rng)
            }
        };
        let record = objective.evaluate_point(&point)?;
        state.push(record);
        state.iteration += 1;
        on_eval(&state, state.history.len() - 1)?;
        if state.iteration.is_multiple_of(10) {
            info!(
                "{} evaluations, best {:.4}",
                state.history.len(),
                state.best().map_or(f64::NAN, |b| b.epsilon)
            );
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::FnObjective;

    fn sphere_objective(d: usize) -> FnObjective<impl Fn(&[f64]) -> f64 + Sync> {
        FnObjective::new(vec![(-1.0, 1.0); d], |x: &[f64]| x.iter().map(|v| v * v).sum())
    }

    #[test]
    fn budget_below_design_is_rejected() {
        let f = sphere_objective(5);
        let opts = OptimizerOptions { budget: 5, ..Default::default() };
        assert!(matches!(optimize(&f, &opts), Err(Error::Parameter(_))));
    }

    #[test]
    fn pure_design_run() {
        let f = sphere_objective(3);
        let opts = OptimizerOptions { budget: 10, seed: 4, ..Default::default() };
        let state = optimize(&f, &opts).unwrap();
        assert_eq!(state.history.len(), 10);
        assert_eq!(state.iteration, 0);
        let min = state.history.iter().map(|r| r.epsilon).fold(f64::INFINITY, f64::min);
        assert_eq!(state.best().unwrap().epsilon, min);
    }

    #[test]
    fn best_is_monotone_and_points_in_bounds() {
        let f = sphere_objective(2);
        let opts = OptimizerOptions { budget: 25, seed: 1, ..Default::default() };
        let state = optimize(&f, &opts).unwrap();
        let trace = state.best_trace();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        for r in &state.history {
            assert!(r.vector.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert!(state.best().unwrap().epsilon < 0.05);
    }

    #[test]
    fn reproducible_with_seed() {
        let f = sphere_objective(2);
        let opts = OptimizerOptions { budget: 16, seed: 9, ..Default::default() };
        assert_eq!(optimize(&f, &opts).unwrap(), optimize(&f, &opts).unwrap());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let f = sphere_objective(2);
        let full = OptimizerOptions { budget: 18, seed: 3, ..Default::default() };
        let straight = optimize(&f, &full).unwrap();

        let partial = optimize(&f, &OptimizerOptions { budget: 13, ..full.clone() }).unwrap();
        let json = serde_json::to_string(&partial).unwrap();
        let mut restored: OptimizerState = serde_json::from_str(&json).unwrap();
        restored.budget = 18;
        let resumed = resume(&f, restored, &full, |_, _| Ok(())).unwrap();
        assert_eq!(resumed.history.len(), 18);
        assert_eq!(resumed.history[..13], partial.history[..]);
        // refit schedule depends only on the iteration counter
        assert_eq!(resumed.history, straight.history);
    }
}
