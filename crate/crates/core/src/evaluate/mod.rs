//! Cost evaluation of designed strategies: analytic tables and Monte Carlo.

pub mod reference;
mod simulate;

pub use simulate::{simulate, SimulationReport};

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::design::{design_from_inputs, DesignOptions, DesignResult};
use crate::error::{Error, Result};
use crate::lqr::{design_inputs, CostModel};
use crate::sysmodel::Scenario;

/// `xi + sum_k Tr{S_k W_k}` for the type behind `cost`.
pub fn analytic_cost(s: &[DMatrix<f64>], cost: &CostModel) -> Result<f64> {
    if s.len() != cost.blocks.len() {
        return Err(Error::InvalidInput(format!(
            "{} blocks given, cost model has {}",
            s.len(),
            cost.blocks.len()
        )));
    }
    for (k, (a, b)) in s.iter().zip(&cost.blocks).enumerate() {
        if a.shape() != b.shape() {
            return Err(Error::InvalidInput(format!("block {} has the wrong shape", k + 1)));
        }
    }
    Ok(cost.value(s))
}

#[derive(Debug, Clone)]
pub struct CostRow {
    pub design_set: Vec<String>,
    /// One cell per type column.
    pub cells: Vec<f64>,
    pub max: f64,
    pub design: DesignResult,
}

#[derive(Debug, Clone)]
pub struct CostTable {
    /// Type labels, in column order.
    pub columns: Vec<String>,
    pub rows: Vec<CostRow>,
}

impl CostTable {
    /// CSV with a `design_set,<labels>,Max` header and 2-decimal cells. With
    /// `full_precision`, each column is repeated with a `_full` suffix holding
    /// the shortest round-trip representation.
    pub fn to_csv(&self, full_precision: bool) -> String {
        let mut out = String::from("design_set");
        for c in self.columns.iter().chain(std::iter::once(&"Max".to_string())) {
            write!(out, ",{c}").unwrap();
        }
        if full_precision {
            for c in self.columns.iter().chain(std::iter::once(&"Max".to_string())) {
                write!(out, ",{c}_full").unwrap();
            }
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.design_set.join("+"));
            for v in r.cells.iter().chain(std::iter::once(&r.max)) {
                write!(out, ",{v:.2}").unwrap();
            }
            if full_precision {
                for v in r.cells.iter().chain(std::iter::once(&r.max)) {
                    write!(out, ",{v:?}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }
}

/// One row per design set: the designed `S*` evaluated against every type.
pub fn cost_table(scenario: &Scenario, design_sets: &[Vec<String>], opts: &DesignOptions) -> Result<CostTable> {
    let labels: Vec<String> = scenario.types.iter().map(|t| t.label.clone()).collect();
    let mut indices = Vec::with_capacity(design_sets.len());
    for set in design_sets {
        let mut idx = Vec::with_capacity(set.len());
        for name in set {
            let i = labels
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| Error::InvalidInput(format!("unknown type {name} in design set")))?;
            idx.push(i);
        }
        idx.sort_unstable();
        idx.dedup();
        indices.push(idx);
    }
    let (costs, chain) = design_inputs(scenario)?;
    let row = |idx: &Vec<usize>| -> Result<CostRow> {
        let design = design_from_inputs(&labels, &costs, &chain, idx, opts)?;
        let cells: Vec<f64> = costs.iter().map(|c| c.value(&design.s_star)).collect();
        let max = cells.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(CostRow {
            design_set: idx.iter().map(|&i| labels[i].clone()).collect(),
            cells,
            max,
            design,
        })
    };
    let rows: Vec<Result<CostRow>> = if opts.parallel {
        indices.par_iter().map(row).collect()
    } else {
        indices.iter().map(row).collect()
    };
    Ok(CostTable {
        columns: labels,
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

/// The benchmark's eight design-set rows, by label.
pub fn benchmark_design_sets() -> Vec<Vec<String>> {
    reference::BENCHMARK_ROWS
        .iter()
        .map(|r| {
            r.iter()
                .map(|&i| crate::sysmodel::BENCHMARK_LABELS[i].to_string())
                .collect()
        })
        .collect()
}
