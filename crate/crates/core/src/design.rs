//! Robust design: one SDP per candidate worst-case type, keep the cheapest.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lqr::{design_inputs, Chain, CostModel};
use crate::sdp::{build_design_program, solve, SolveReport, SolveStatus, ToleranceSettings};
use crate::sysmodel::Scenario;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    pub tol: ToleranceSettings,
    /// Solve pivots on the rayon pool.
    pub parallel: bool,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            tol: ToleranceSettings::default(),
            parallel: true,
        }
    }
}

/// Outcome of the subproblem that assumes `label` is the worst-case type.
#[derive(Debug, Clone)]
pub struct PivotOutcome {
    pub label: String,
    pub status: SolveStatus,
    /// `Some` only for `Optimal`.
    pub value: Option<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct DesignResult {
    /// Equilibrium value.
    pub mu: f64,
    /// One entry per design-set type, in declared order.
    pub per_type: Vec<PivotOutcome>,
    pub winner: String,
    /// Optimal posterior-covariance blocks, stage 1 first.
    pub s_star: Vec<DMatrix<f64>>,
    /// Design-set types whose cost at `s_star` is within tolerance of the max.
    pub worst_support: Vec<String>,
}

impl DesignResult {
    pub fn pivot(&self, label: &str) -> Option<&PivotOutcome> {
        self.per_type.iter().find(|p| p.label == label)
    }
}

/// Absolute tolerance used when comparing type costs against the max.
pub fn support_tolerance(mu: f64) -> f64 {
    1e-4 * mu.abs().max(1.0)
}

/// Indices into `scenario.types` of the design set, in declared order.
pub fn design_indices(scenario: &Scenario) -> Vec<usize> {
    scenario
        .types
        .iter()
        .enumerate()
        .filter(|(_, t)| scenario.design_set.contains(&t.label))
        .map(|(i, _)| i)
        .collect()
}

pub fn design(scenario: &Scenario) -> Result<DesignResult> {
    design_with(scenario, &DesignOptions::default())
}

pub fn design_with(scenario: &Scenario, opts: &DesignOptions) -> Result<DesignResult> {
    let (costs, chain) = design_inputs(scenario)?;
    let labels: Vec<String> = scenario.types.iter().map(|t| t.label.clone()).collect();
    design_from_inputs(&labels, &costs, &chain, &design_indices(scenario), opts)
}

/// Core of [`design`] on precomputed cost models (indexed like `labels`).
pub fn design_from_inputs(
    labels: &[String],
    costs: &[CostModel],
    chain: &Chain,
    design: &[usize],
    opts: &DesignOptions,
) -> Result<DesignResult> {
    if design.is_empty() {
        return Err(Error::InvalidInput("design set is empty".into()));
    }
    let run = |&pivot: &usize| -> Result<SolveReport> {
        solve(&build_design_program(costs, pivot, design, chain), &opts.tol)
    };
    let reports: Vec<Result<SolveReport>> = if opts.parallel {
        design.par_iter().map(run).collect()
    } else {
        design.iter().map(run).collect()
    };
    let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;

    let mut per_type = Vec::with_capacity(design.len());
    for (&w, rep) in design.iter().zip(&reports) {
        let value = (rep.status == SolveStatus::Optimal).then_some(rep.objective);
        per_type.push(PivotOutcome {
            label: labels[w].clone(),
            status: rep.status,
            value,
            iterations: rep.iterations,
        });
    }
    // Values within solver accuracy of the minimum tie; the first in declared order wins.
    let min = per_type
        .iter()
        .filter_map(|p| p.value)
        .fold(f64::INFINITY, f64::min);
    let tie = 10.0 * opts.tol.gap * (1.0 + min.abs());
    let best = per_type
        .iter()
        .enumerate()
        .find_map(|(slot, p)| p.value.filter(|&v| v <= min + tie).map(|v| (slot, v)));
    let Some((slot, mu)) = best else {
        let summary: Vec<String> = per_type
            .iter()
            .map(|p| format!("{}: {:?}", p.label, p.status))
            .collect();
        return Err(Error::SolverInconsistency(format!(
            "no pivot subproblem solved to optimality ({})",
            summary.join(", ")
        )));
    };
    let s_star = reports[slot].solution.clone();
    let worst_support = support_of(costs, design, &s_star, mu)
        .into_iter()
        .map(|w| labels[w].clone())
        .collect();
    Ok(DesignResult {
        mu,
        per_type,
        winner: labels[design[slot]].clone(),
        s_star,
        worst_support,
    })
}

fn support_of(costs: &[CostModel], design: &[usize], s: &[DMatrix<f64>], mu: f64) -> Vec<usize> {
    let values: Vec<f64> = design.iter().map(|&w| costs[w].value(s)).collect();
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = support_tolerance(mu);
    design
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v >= top - tol)
        .map(|(&w, _)| w)
        .collect()
}

/// Worst-case prior over the design set: uniform on the support, zero elsewhere.
///
/// `costs` are indexed like `labels`; the support is recomputed from `result.s_star`.
pub fn worst_case_distribution(
    result: &DesignResult,
    labels: &[String],
    costs: &[CostModel],
    design: &[usize],
) -> Vec<(String, f64)> {
    let support = support_of(costs, design, &result.s_star, result.mu);
    let p = 1.0 / support.len() as f64;
    design
        .iter()
        .map(|&w| {
            let mass = if support.contains(&w) { p } else { 0.0 };
            (labels[w].clone(), mass)
        })
        .collect()
}
