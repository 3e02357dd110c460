//! Closed-loop Monte Carlo with a best-responding controller.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lqr::{riccati_backward, Chain};
use crate::matkit::sqrt_psd;
use crate::synthesis::{filter_gains, stack_len, Strategy};
use crate::sysmodel::{control_free_covariances, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub actual_type: String,
    pub trials: usize,
    pub seed: u64,
    pub empirical_mean: f64,
    /// Sample standard deviation over `sqrt(trials)`; zero for a single trial.
    pub standard_error: f64,
    /// Mean cost incurred at each stage `k` (state at `k+1`, input at `k`).
    pub stage_means: Vec<f64>,
}

// Noise sources, each on its own slice of the trial's keystream.
const SRC_INIT: usize = 0;
const SRC_PROCESS: usize = 1;
const SRC_MEASURE: usize = 2;
const SRC_SIGNAL: usize = 3;
const SOURCES: usize = 4;

/// Gaussian draws keyed by `(seed, trial, stage, source)`.
struct Draws {
    rng: ChaCha8Rng,
}

impl Draws {
    fn new(seed: u64, trial: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        Draws { rng }
    }

    fn gaussian(&mut self, stage: usize, source: usize, factor: &DMatrix<f64>) -> DVector<f64> {
        // 2^20 words per slot is far more than any draw here consumes.
        self.rng.set_word_pos(((stage * SOURCES + source) as u128) << 20);
        let z = DVector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(&mut self.rng));
        factor * z
    }
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

enum Sensor {
    Perfect {
        gains: Vec<DMatrix<f64>>,
        filter: Vec<DMatrix<f64>>,
        noise: Vec<DMatrix<f64>>,
    },
    Imperfect {
        gains: Vec<DMatrix<f64>>,
        noise: Vec<DMatrix<f64>>,
        compression: Vec<DMatrix<f64>>,
    },
}

/// Simulates `trials` closed-loop runs in which a controller of type
/// `actual_type` best-responds to the signals of `strategy`, and reports
/// the cost to the system: the state term always under the system type's
/// weight, the input term only when the controller is the system type.
pub fn simulate(
    scenario: &Scenario,
    strategy: &Strategy,
    actual_type: &str,
    trials: usize,
    seed: u64,
) -> Result<SimulationReport> {
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    if strategy.mode() != scenario.measurement_mode {
        return Err(Error::InvalidInput("strategy and scenario measurement modes differ".into()));
    }
    let model = &scenario.model;
    let kappa = model.horizon;
    if strategy.horizon() != kappa {
        return Err(Error::InvalidInput(format!(
            "strategy horizon {} differs from scenario horizon {kappa}",
            strategy.horizon()
        )));
    }
    let actual = scenario
        .type_by_label(actual_type)
        .ok_or_else(|| Error::InvalidInput(format!("unknown type {actual_type}")))?;
    let system = scenario.system_type();
    let ric = riccati_backward(model, &actual.q, &actual.r)?;
    let with_input = actual.is_system_type;
    let (m, n) = (model.m(), model.n());

    let sensor = match strategy {
        Strategy::Perfect(st) => {
            let chain = Chain::perfect(&control_free_covariances(model), &model.a);
            check_square(&st.gains, &st.noise, |_| m)?;
            Sensor::Perfect {
                gains: st.gains.clone(),
                filter: filter_gains(st, &chain),
                noise: st.noise.iter().map(sqrt_psd).collect(),
            }
        }
        Strategy::Imperfect(st) => {
            check_square(&st.inner.gains, &st.inner.noise, |k| n * k)?;
            Sensor::Imperfect {
                gains: st.inner.gains.clone(),
                noise: st.inner.noise.iter().map(sqrt_psd).collect(),
                compression: st.compression.clone(),
            }
        }
    };
    let f1 = sqrt_psd(&model.sigma1);
    let fw = sqrt_psd(&model.sigmaw);
    let fv = sqrt_psd(&model.sigmav);
    let (a, b, c) = (&model.a, &model.b, &model.c);

    let run = |trial: usize| -> Vec<f64> {
        let mut draws = Draws::new(seed, trial);
        let mut x = draws.gaussian(0, SRC_INIT, &f1);
        // control-driven part of the state, known to the controller
        let mut xc = DVector::zeros(m);
        let mut xhat_o: DVector<f64> = DVector::zeros(m);
        let mut y_hist: Vec<DVector<f64>> = Vec::new();
        let mut yc_hist: Vec<DVector<f64>> = Vec::new();
        let mut sig_hist: Vec<DVector<f64>> = Vec::new();
        let mut costs = Vec::with_capacity(kappa);
        for k in 1..=kappa {
            xhat_o = match &sensor {
                Sensor::Perfect { gains, filter, noise } => {
                    let l = &gains[k - 1];
                    let s = l.transpose() * &x + draws.gaussian(k, SRC_SIGNAL, &noise[k - 1]);
                    let s_o = s - l.transpose() * &xc;
                    let pred = if k == 1 { DVector::zeros(m) } else { a * &xhat_o };
                    let innov = s_o - l.transpose() * &pred;
                    pred + &filter[k - 1] * innov
                }
                Sensor::Imperfect { gains, noise, compression } => {
                    y_hist.push(c * &x + draws.gaussian(k, SRC_MEASURE, &fv));
                    yc_hist.push(c * &xc);
                    // stacks run newest first
                    let stack = |h: &[DVector<f64>]| {
                        DVector::from_iterator(n * k, h.iter().rev().flat_map(|v| v.iter().copied()))
                    };
                    let l = &gains[k - 1];
                    let s = l.transpose() * stack(&y_hist) + draws.gaussian(k, SRC_SIGNAL, &noise[k - 1]);
                    sig_hist.push(s - l.transpose() * stack(&yc_hist));
                    let sig = DVector::from_iterator(
                        stack_len(k, n),
                        sig_hist.iter().rev().flat_map(|v| v.iter().copied()),
                    );
                    &compression[k - 1] * sig
                }
            };
            let u = -(&ric.gains[k - 1] * (&xhat_o + &xc));
            let w = draws.gaussian(k, SRC_PROCESS, &fw);
            x = a * &x + b * &u + w;
            xc = a * &xc + b * &u;
            let mut cost = x.dot(&(&system.q * &x));
            if with_input {
                cost += u.dot(&(&system.r * &u));
            }
            costs.push(cost);
        }
        costs
    };

    let per_trial: Vec<Vec<f64>> = (0..trials).into_par_iter().map(run).collect();
    let totals: Vec<f64> = per_trial.iter().map(|c| pairwise_sum(c)).collect();
    let mean = pairwise_sum(&totals) / trials as f64;
    let standard_error = if trials > 1 {
        let dev: Vec<f64> = totals.iter().map(|t| (t - mean) * (t - mean)).collect();
        (pairwise_sum(&dev) / (trials - 1) as f64).sqrt() / (trials as f64).sqrt()
    } else {
        0.0
    };
    let stage_means = (0..kappa)
        .map(|k| {
            let col: Vec<f64> = per_trial.iter().map(|c| c[k]).collect();
            pairwise_sum(&col) / trials as f64
        })
        .collect();
    Ok(SimulationReport {
        actual_type: actual_type.to_string(),
        trials,
        seed,
        empirical_mean: mean,
        standard_error,
        stage_means,
    })
}

fn check_square(gains: &[DMatrix<f64>], noise: &[DMatrix<f64>], dim: impl Fn(usize) -> usize) -> Result<()> {
    for (k, (g, t)) in gains.iter().zip(noise).enumerate() {
        let d = dim(k + 1);
        if g.nrows() != d || t.nrows() != g.ncols() || !t.is_square() {
            return Err(Error::InvalidInput(format!("stage {} strategy blocks have the wrong shape", k + 1)));
        }
    }
    Ok(())
}
