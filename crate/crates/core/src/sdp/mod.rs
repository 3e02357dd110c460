//! Small semidefinite programs over sequences of symmetric blocks.
//!
//! A [`ConicProgram`] minimizes `offset + sum_k Tr{C_k S_k}` over symmetric
//! blocks `S_k` subject to affine PSD constraints built from congruence terms
//! `coef * M' S_k M` and scalar trace inequalities. [`solve`] runs an
//! interior-point method; programs with trace inequalities are first checked
//! by a phase-1 program so that infeasibility is reported with a margin.
//!
//! # Sparse dump format
//!
//! [`ConicProgram::write_sparse`] emits one whitespace-separated line per
//! nonzero: `constraint block row col value`. `constraint` is `obj`, `psd<j>`
//! or `lin<l>`; `block` is the variable block index, or `const` for constant
//! data. For a PSD term the listed entries are those of `coef * M`
//! (identity maps are written out explicitly).

mod ipm;
pub mod schur;
pub mod svec;

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lqr::{Chain, CostModel};
use crate::matkit::psd_dist;

/// `coef * M' S_block M`; `map == None` means the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub block: usize,
    pub map: Option<DMatrix<f64>>,
    pub coef: f64,
}

impl Term {
    pub fn identity(block: usize, coef: f64) -> Self {
        Term {
            block,
            map: None,
            coef,
        }
    }

    pub fn congruence(block: usize, map: DMatrix<f64>, coef: f64) -> Self {
        Term {
            block,
            map: Some(map),
            coef,
        }
    }
}

/// `constant + sum terms >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdConstraint {
    pub constant: DMatrix<f64>,
    pub terms: Vec<Term>,
}

/// `sum_k Tr{G_k S_k} >= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearInequality {
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub block_dims: Vec<usize>,
    pub objective: Vec<DMatrix<f64>>,
    pub offset: f64,
    pub psd: Vec<PsdConstraint>,
    pub linear: Vec<LinearInequality>,
}

impl ConicProgram {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        let nb = self.block_dims.len();
        if self.objective.len() != nb {
            return bad(format!("{} objective blocks for {nb} variables", self.objective.len()));
        }
        for (b, c) in self.objective.iter().enumerate() {
            if c.shape() != (self.block_dims[b], self.block_dims[b]) {
                return bad(format!("objective block {b} has wrong shape"));
            }
        }
        for (j, k) in self.psd.iter().enumerate() {
            let d = k.constant.nrows();
            if !k.constant.is_square() {
                return bad(format!("psd{j}: constant is not square"));
            }
            for t in &k.terms {
                if t.block >= nb {
                    return bad(format!("psd{j}: block {} does not exist", t.block));
                }
                let want = (self.block_dims[t.block], d);
                let got = t.map.as_ref().map_or(want, |m| m.shape());
                if t.map.is_none() && self.block_dims[t.block] != d || got != want {
                    return bad(format!("psd{j}: term on block {} has wrong shape", t.block));
                }
            }
        }
        for (l, row) in self.linear.iter().enumerate() {
            for (b, g) in &row.coeffs {
                if *b >= nb || g.shape() != (self.block_dims[*b], self.block_dims[*b]) {
                    return bad(format!("lin{l}: bad coefficient block {b}"));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, s: &[DMatrix<f64>]) -> f64 {
        self.offset
            + self
                .objective
                .iter()
                .zip(s)
                .map(|(c, s)| crate::matkit::trace_prod(c, s))
                .sum::<f64>()
    }

    /// Evaluates constraint `j` at `s`.
    pub fn psd_value(&self, j: usize, s: &[DMatrix<f64>]) -> DMatrix<f64> {
        let k = &self.psd[j];
        let mut out = k.constant.clone();
        for t in &k.terms {
            match &t.map {
                None => out += &s[t.block] * t.coef,
                Some(m) => out += m.transpose() * &s[t.block] * m * t.coef,
            }
        }
        crate::matkit::symmetrize(&out)
    }

    pub fn linear_slack(&self, l: usize, s: &[DMatrix<f64>]) -> f64 {
        let row = &self.linear[l];
        row.coeffs
            .iter()
            .map(|(b, g)| crate::matkit::trace_prod(g, &s[*b]))
            .sum::<f64>()
            - row.rhs
    }

    /// Largest PSD residual and largest linear shortfall at `s`.
    pub fn violation(&self, s: &[DMatrix<f64>]) -> (f64, f64) {
        let psd = (0..self.psd.len())
            .map(|j| psd_dist(&self.psd_value(j, s)))
            .fold(0.0, f64::max);
        let lin = (0..self.linear.len())
            .map(|l| (-self.linear_slack(l, s)).max(0.0))
            .fold(0.0, f64::max);
        (psd, lin)
    }

    /// Scale used for relative feasibility tolerances.
    pub fn scale(&self) -> f64 {
        1.0 + self
            .psd
            .iter()
            .map(|k| k.constant.norm())
            .chain(self.linear.iter().map(|l| l.rhs.abs()))
            .fold(0.0, f64::max)
    }

    pub fn write_sparse<W: Write>(&self, w: &mut W) -> io::Result<()> {
        fn entries<W: Write>(w: &mut W, tag: &str, blk: &str, m: &DMatrix<f64>) -> io::Result<()> {
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    let v = m[(i, j)];
                    if v != 0.0 {
                        writeln!(w, "{tag} {blk} {i} {j} {v:e}")?;
                    }
                }
            }
            Ok(())
        }
        for (b, c) in self.objective.iter().enumerate() {
            entries(w, "obj", &b.to_string(), c)?;
        }
        if self.offset != 0.0 {
            writeln!(w, "obj const 0 0 {:e}", self.offset)?;
        }
        for (j, k) in self.psd.iter().enumerate() {
            let tag = format!("psd{j}");
            entries(w, &tag, "const", &k.constant)?;
            for t in &k.terms {
                let m = t.map.clone().unwrap_or_else(|| {
                    DMatrix::identity(self.block_dims[t.block], self.block_dims[t.block])
                });
                entries(w, &tag, &t.block.to_string(), &(m * t.coef))?;
            }
        }
        for (l, row) in self.linear.iter().enumerate() {
            let tag = format!("lin{l}");
            for (b, g) in &row.coeffs {
                entries(w, &tag, &b.to_string(), g)?;
            }
            writeln!(w, "{tag} const 0 0 {:e}", row.rhs)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceSettings {
    /// Relative feasibility tolerance.
    pub feas: f64,
    /// Relative duality-gap tolerance.
    pub gap: f64,
    pub max_iter: usize,
}

impl Default for ToleranceSettings {
    fn default() -> Self {
        ToleranceSettings {
            feas: 1e-7,
            gap: 1e-6,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Objective at the returned blocks (including the offset).
    pub objective: f64,
    /// Lower bound certified by the dual iterate.
    pub dual_bound: f64,
    pub solution: Vec<DMatrix<f64>>,
    /// Independently re-checked constraint violation, relative to the program scale.
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    /// For `Infeasible`: the optimal phase-1 shortfall, a positive margin.
    pub infeasibility_margin: Option<f64>,
}

const PHASE1_TOL: f64 = 1e-6;

/// Phase-1 program: maximize `t` with `t <= 1` and each normalized row `>= t`.
fn phase_one(p: &ConicProgram) -> ConicProgram {
    let tb = p.block_dims.len();
    let mut q = p.clone();
    q.block_dims.push(1);
    for c in q.objective.iter_mut() {
        c.fill(0.0);
    }
    q.objective.push(DMatrix::from_element(1, 1, -1.0));
    q.offset = 0.0;
    q.psd.push(PsdConstraint {
        constant: DMatrix::from_element(1, 1, 1.0),
        terms: vec![Term::identity(tb, -1.0)],
    });
    for row in q.linear.iter_mut() {
        let norm = row.coeffs.iter().map(|(_, g)| g.norm_squared()).sum::<f64>().sqrt();
        let norm = if norm > 0.0 { norm } else { 1.0 };
        for (_, g) in row.coeffs.iter_mut() {
            *g /= norm;
        }
        row.rhs /= norm;
        row.coeffs.push((tb, DMatrix::from_element(1, 1, -1.0)));
    }
    q
}

fn strictly_feasible(p: &ConicProgram, s: &[DMatrix<f64>]) -> bool {
    let (psd, lin) = p.violation(s);
    psd == 0.0 && lin == 0.0
}

/// Solves `p`; infeasibility and iteration limits are statuses, not errors.
pub fn solve(p: &ConicProgram, tol: &ToleranceSettings) -> Result<SolveReport> {
    p.check()?;
    if !p.linear.is_empty() {
        let q = phase_one(p);
        let prep = ipm::Prepared::new(&q);
        let nb = p.block_dims.len();
        let mut stop = |y: &DVector<f64>| {
            let s = prep.blocks_of(y);
            strictly_feasible(p, &s[..nb])
        };
        let r1 = ipm::run(&prep, tol, Some(&mut stop));
        if r1.outcome == ipm::Outcome::Converged {
            let t_star = -r1.pobj;
            let t_bound = -r1.dobj;
            if t_bound < -PHASE1_TOL && t_star < -PHASE1_TOL {
                let s = prep.blocks_of(&r1.y);
                return Ok(SolveReport {
                    status: SolveStatus::Infeasible,
                    objective: p.value(&s[..nb]),
                    dual_bound: f64::INFINITY,
                    solution: s[..nb].to_vec(),
                    primal_residual: r1.pres,
                    dual_residual: r1.dres,
                    gap: r1.gap,
                    iterations: r1.iterations,
                    infeasibility_margin: Some(-t_bound),
                });
            }
        }
    }
    let prep = ipm::Prepared::new(p);
    let r = ipm::run(&prep, tol, None);
    let solution = prep.blocks_of(&r.y);
    let (vpsd, vlin) = p.violation(&solution);
    let scale = p.scale();
    let primal_residual = vpsd.max(vlin) / scale;
    let verified = primal_residual <= 10.0 * tol.feas;
    let status = if r.outcome == ipm::Outcome::Converged && verified {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIterations
    };
    Ok(SolveReport {
        status,
        objective: p.value(&solution),
        dual_bound: r.dobj + p.offset,
        solution,
        primal_residual,
        dual_residual: r.dres,
        gap: r.gap,
        iterations: r.iterations,
        infeasibility_margin: None,
    })
}

/// Chain constraints plus the dominance rows of one pivot.
///
/// `costs` are indexed like the scenario types; `design` lists the indices
/// in the design set and must contain `pivot`.
pub fn build_design_program(
    costs: &[CostModel],
    pivot: usize,
    design: &[usize],
    chain: &Chain,
) -> ConicProgram {
    let kappa = chain.horizon();
    let block_dims: Vec<usize> = chain.upper.iter().map(|u| u.nrows()).collect();
    let mut psd = Vec::with_capacity(2 * kappa);
    for k in 0..kappa {
        let d = block_dims[k];
        psd.push(PsdConstraint {
            constant: chain.upper[k].clone(),
            terms: vec![Term::identity(k, -1.0)],
        });
        let mut terms = vec![Term::identity(k, 1.0)];
        if k > 0 {
            terms.push(Term::congruence(k - 1, chain.maps[k].transpose(), -1.0));
        }
        psd.push(PsdConstraint {
            constant: DMatrix::zeros(d, d),
            terms,
        });
    }
    let own = &costs[pivot];
    let linear = design
        .iter()
        .filter(|&&o| o != pivot)
        .map(|&o| LinearInequality {
            coeffs: (0..kappa)
                .map(|k| (k, &own.blocks[k] - &costs[o].blocks[k]))
                .collect(),
            rhs: costs[o].offset - own.offset,
        })
        .collect();
    ConicProgram {
        block_dims,
        objective: own.blocks.clone(),
        offset: own.offset,
        psd,
        linear,
    }
}

/// Epigraph form `min t` s.t. `t >= cost_w(S)` for every design type.
/// Block `horizon` holds `t` as a `1 x 1` variable.
pub fn build_epigraph_program(costs: &[CostModel], design: &[usize], chain: &Chain) -> ConicProgram {
    let mut p = build_design_program(costs, design[0], &[], chain);
    let tb = p.block_dims.len();
    for c in p.objective.iter_mut() {
        c.fill(0.0);
    }
    p.offset = 0.0;
    p.block_dims.push(1);
    p.objective.push(DMatrix::from_element(1, 1, 1.0));
    // t bounded above keeps the Schur complement definite on the t block.
    let bound = 1.0
        + design
            .iter()
            .map(|&o| {
                costs[o].offset.abs()
                    + costs[o]
                        .blocks
                        .iter()
                        .zip(&chain.upper)
                        .map(|(w, u)| w.norm() * u.norm())
                        .sum::<f64>()
            })
            .fold(0.0, f64::max);
    p.psd.push(PsdConstraint {
        constant: DMatrix::from_element(1, 1, 2.0 * bound),
        terms: vec![Term::identity(tb, -1.0)],
    });
    for &o in design {
        let mut coeffs: Vec<(usize, DMatrix<f64>)> =
            costs[o].blocks.iter().enumerate().map(|(k, w)| (k, -w)).collect();
        coeffs.push((tb, DMatrix::from_element(1, 1, 1.0)));
        p.linear.push(LinearInequality {
            coeffs,
            rhs: costs[o].offset,
        });
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_block(c: DMatrix<f64>, lo: DMatrix<f64>, hi: DMatrix<f64>) -> ConicProgram {
        let d = c.nrows();
        ConicProgram {
            block_dims: vec![d],
            objective: vec![c],
            offset: 0.0,
            psd: vec![
                PsdConstraint {
                    constant: hi,
                    terms: vec![Term::identity(0, -1.0)],
                },
                PsdConstraint {
                    constant: -lo,
                    terms: vec![Term::identity(0, 1.0)],
                },
            ],
            linear: vec![],
        }
    }

    #[test]
    fn pinned_variable() {
        let i2 = DMatrix::identity(2, 2);
        let p = single_block(i2.clone(), i2.clone(), i2.clone());
        let r = solve(&p, &ToleranceSettings::default()).unwrap();
        // The feasible set has empty interior; the value is still exact enough.
        assert!((r.objective - 2.0).abs() < 1e-5, "{r:?}");
        assert!((&r.solution[0] - i2).norm() < 1e-4);
    }

    #[test]
    fn diagonal_separable() {
        let c = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, -1.0]));
        let p = single_block(c, DMatrix::zeros(2, 2), DMatrix::identity(2, 2) * 2.0);
        let r = solve(&p, &ToleranceSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective + 2.0).abs() < 1e-6);
        let want = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.0, 2.0]));
        assert!((&r.solution[0] - want).norm() < 1e-5);
        assert!(r.dual_bound <= r.objective + 1e-6);
    }

    #[test]
    fn infeasible_rows_reported() {
        // S in [0, I] but Tr{S} >= 3 in 2 dimensions.
        let mut p = single_block(DMatrix::identity(2, 2), DMatrix::zeros(2, 2), DMatrix::identity(2, 2));
        p.linear.push(LinearInequality {
            coeffs: vec![(0, DMatrix::identity(2, 2))],
            rhs: 3.0,
        });
        let r = solve(&p, &ToleranceSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.infeasibility_margin.unwrap() > 0.1);
    }

    #[test]
    fn active_row_respected() {
        let mut p = single_block(DMatrix::identity(2, 2), DMatrix::zeros(2, 2), DMatrix::identity(2, 2));
        p.linear.push(LinearInequality {
            coeffs: vec![(0, DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 3.0])))],
            rhs: 1.5,
        });
        let r = solve(&p, &ToleranceSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        // cheapest: put weight on the second coordinate: S = diag(0, 0.5)
        assert!((r.objective - 0.5).abs() < 1e-6, "{}", r.objective);
    }

    #[test]
    fn design_program_shapes() {
        use crate::lqr::Chain;
        let a = DMatrix::identity(2, 2);
        let chain = Chain {
            upper: vec![a.clone(), a.clone() * 2.0],
            maps: vec![DMatrix::zeros(0, 0), a.clone()],
        };
        let cost = |l: &str| CostModel {
            label: l.into(),
            blocks: vec![a.clone(), -&a],
            offset: 1.0,
        };
        let costs = vec![cost("x"), cost("y"), cost("z")];
        let p = build_design_program(&costs, 0, &[0], &chain);
        assert_eq!(p.psd.len(), 4);
        assert!(p.linear.is_empty());
        let p = build_design_program(&costs, 1, &[0, 1, 2], &chain);
        assert_eq!(p.linear.len(), 2);
        let mut buf = Vec::new();
        p.write_sparse(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().any(|l| l.starts_with("psd3 0 ")));
        assert!(text.lines().all(|l| l.split_whitespace().count() == 5));
    }
}
