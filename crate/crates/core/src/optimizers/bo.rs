use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gp::{expected_improvement, gp_fit, gp_fit_grid, gp_predict, GpModel, Matern52};
use super::random::RandomSearch;
use super::TuningHistory;
use crate::error::Result;
use crate::param_space::{Configuration, ParameterSpace};
use crate::sampling;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoSettings {
    pub n_init: usize,
    pub candidates: usize,
    pub jitter_points: usize,
    pub jitter_sigma: f64,
    /// Kernel hyperparameters are re-selected once this many new
    /// observations have arrived.
    pub refit_every: usize,
    /// Observation noise variance in standardized units.
    pub noise: f64,
}

impl Default for BoSettings {
    fn default() -> Self {
        BoSettings {
            n_init: 10,
            candidates: 1000,
            jitter_points: 10,
            jitter_sigma: 0.05,
            refit_every: 10,
            noise: 1e-4,
        }
    }
}

/// GP-based Bayesian optimization with expected improvement, maximized over
/// a fresh candidate pool each step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BayesOpt {
    settings: BoSettings,
    rng: ChaCha8Rng,
    initial: Vec<Configuration>,
    kernel: Option<Matern52>,
    kernel_observations: usize,
    fallback: RandomSearch,
}

impl BayesOpt {
    pub fn new(space: &ParameterSpace, settings: BoSettings, seed: u64) -> Result<BayesOpt> {
        let initial = if settings.n_init > 0 {
            sampling::symmetric_lhs(space, settings.n_init, seed)?.configs
        } else {
            Vec::new()
        };
        Ok(BayesOpt {
            settings,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xB0B0_5EED),
            initial,
            kernel: None,
            kernel_observations: 0,
            fallback: RandomSearch::new(seed.wrapping_add(1)),
        })
    }

    pub fn settings(&self) -> &BoSettings {
        &self.settings
    }

    pub fn suggest(&mut self, space: &ParameterSpace, history: &TuningHistory) -> Result<Configuration> {
        if let Some(c) = self.initial.get(history.len()) {
            return Ok(c.clone());
        }
        let (x, y) = training_set(space, history);
        let model = match self.fit(&x, &y) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("GP fit failed at step {} ({e}); using a random suggestion", history.len());
                return Ok(self.fallback.suggest(space));
            }
        };
        let pool = self.candidate_pool(space, &x, &y)?;
        let best = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(space.denormalize(&select_candidate(&model, &pool, best)))
    }

    fn fit(&mut self, x: &[Vec<f64>], y: &[f64]) -> Result<GpModel> {
        let m = y.len();
        match &self.kernel {
            Some(k) if m - self.kernel_observations < self.settings.refit_every => gp_fit(x, y, k, self.settings.noise),
            _ => {
                let model = gp_fit_grid(x, y, self.settings.noise)?;
                self.kernel = Some(model.kernel.clone());
                self.kernel_observations = m;
                Ok(model)
            }
        }
    }

    fn candidate_pool(&mut self, space: &ParameterSpace, x: &[Vec<f64>], y: &[f64]) -> Result<Vec<Vec<f64>>> {
        let seed = self.rng.gen();
        let mut pool: Vec<Vec<f64>> = sampling::symmetric_lhs(space, self.settings.candidates, seed)?
            .configs
            .iter()
            .map(|c| space.normalize(c))
            .collect();
        let mut ranked: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.0).collect();
        ranked.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
        let jitter = Normal::new(0.0, self.settings.jitter_sigma).expect("positive sigma");
        for &i in ranked.iter().take(self.settings.jitter_points) {
            let p = x[i]
                .iter()
                .map(|&v| (v + jitter.sample(&mut self.rng)).clamp(0.0, 1.0))
                .collect();
            pool.push(p);
        }
        Ok(pool)
    }
}

/// Default measurement plus every step, in unit coordinates; invalid steps
/// count as throughput 0.
fn training_set(space: &ParameterSpace, history: &TuningHistory) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x = vec![space.normalize(&history.default_config)];
    let mut y = vec![history.default_throughput];
    for s in &history.steps {
        x.push(space.normalize(&s.config));
        y.push(if s.outcome.valid { s.outcome.throughput } else { 0.0 });
    }
    (x, y)
}

/// Highest EI (first wins ties); if every EI is zero, highest mean.
pub(crate) fn select_candidate(model: &GpModel, pool: &[Vec<f64>], best: f64) -> Vec<f64> {
    let preds: Vec<(f64, f64)> = pool.iter().map(|p| gp_predict(model, p)).collect();
    let mut pick = 0;
    let mut pick_ei = 0.0;
    for (i, &(mean, var)) in preds.iter().enumerate() {
        let ei = expected_improvement(mean, var, best);
        if ei > pick_ei {
            pick = i;
            pick_ei = ei;
        }
    }
    if pick_ei == 0.0 {
        for (i, &(mean, _)) in preds.iter().enumerate() {
            if mean > preds[pick].0 {
                pick = i;
            }
        }
    }
    pool[pick].clone()
}
