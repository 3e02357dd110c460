//! Infeasible-start primal-dual interior-point method (HKM direction,
//! Mehrotra predictor-corrector) for programs of the form
//!
//! ```text
//! minimize    c'y
//! subject to  F_j(y) = F_j0 + sum_i y_i F_ji  >= 0   (PSD cones)
//!             g_l'y - h_l                    >= 0   (scalar rows)
//! ```
//!
//! where `y` collects orthonormal svec coordinates of the program blocks.
//! The Schur complement is block-sparse over program blocks; scalar rows
//! enter as a low-rank update solved by the Woodbury identity.

use nalgebra::{DMatrix, DVector};

use super::schur::{BlockCholesky, BlockSym};
use super::svec;
use super::{ConicProgram, ToleranceSettings};
use crate::matkit::symmetrize;

pub(crate) struct Prepared {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    index: Vec<Vec<(usize, usize, f64)>>,
    cones: Vec<Cone>,
    rows: Vec<DVector<f64>>,
    rhs: Vec<f64>,
    c: DVector<f64>,
    pattern: Vec<(usize, usize)>,
}

struct Cone {
    constant: DMatrix<f64>,
    terms: Vec<(usize, Option<DMatrix<f64>>, f64)>,
}

impl Prepared {
    pub(crate) fn new(p: &ConicProgram) -> Self {
        let dims = p.block_dims.clone();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut n = 0;
        for &d in &dims {
            offsets.push(n);
            n += svec::len(d);
        }
        let index = dims.iter().map(|&d| svec::index(d)).collect();
        let mut c = DVector::zeros(n);
        for (b, cb) in p.objective.iter().enumerate() {
            c.rows_mut(offsets[b], svec::len(dims[b]))
                .copy_from(&svec::svec(cb));
        }
        let mut pattern = Vec::new();
        let cones = p
            .psd
            .iter()
            .map(|k| {
                for (x, s) in k.terms.iter().enumerate() {
                    for t in &k.terms[..x] {
                        pattern.push((s.block.max(t.block), s.block.min(t.block)));
                    }
                }
                Cone {
                    constant: symmetrize(&k.constant),
                    terms: k
                        .terms
                        .iter()
                        .map(|t| (t.block, t.map.clone(), t.coef))
                        .collect(),
                }
            })
            .collect();
        let mut rows = Vec::with_capacity(p.linear.len());
        let mut rhs = Vec::with_capacity(p.linear.len());
        for l in &p.linear {
            let mut g = DVector::zeros(n);
            for (b, gb) in &l.coeffs {
                let mut seg = g.rows_mut(offsets[*b], svec::len(dims[*b]));
                seg += svec::svec(gb);
            }
            rows.push(g);
            rhs.push(l.rhs);
        }
        pattern.sort_unstable();
        pattern.dedup();
        Prepared {
            dims,
            offsets,
            index,
            cones,
            rows,
            rhs,
            c,
            pattern,
        }
    }

    pub(crate) fn nvars(&self) -> usize {
        self.c.len()
    }

    fn block_of<'a>(&self, y: &'a DVector<f64>, b: usize) -> &'a [f64] {
        &y.as_slice()[self.offsets[b]..self.offsets[b] + svec::len(self.dims[b])]
    }

    /// `sum_i y_i F_ji` for cone `j` (without the constant).
    fn fop(&self, j: usize, y: &DVector<f64>) -> DMatrix<f64> {
        let cone = &self.cones[j];
        let d = cone.constant.nrows();
        let mut out = DMatrix::zeros(d, d);
        for (b, map, coef) in &cone.terms {
            let s = svec::smat(self.block_of(y, *b), self.dims[*b]);
            match map {
                None => out += s * *coef,
                Some(m) => out += m.transpose() * s * m * *coef,
            }
        }
        out
    }

    /// Adds `<F_ji, X>` for every `i` into `acc`.
    fn fadj_add(&self, j: usize, x: &DMatrix<f64>, acc: &mut DVector<f64>) {
        for (b, map, coef) in &self.cones[j].terms {
            let v = match map {
                None => svec::svec(x),
                Some(m) => svec::svec(&(m * x * m.transpose())),
            };
            let mut seg = acc.rows_mut(self.offsets[*b], svec::len(self.dims[*b]));
            seg.axpy(*coef, &v, 1.0);
        }
    }

    pub(crate) fn blocks_of(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (0..self.dims.len())
            .map(|b| svec::smat(self.block_of(y, b), self.dims[b]))
            .collect()
    }

    /// Adds the cone-`j` Schur contribution `Tr{F_p X F_q Zinv}`.
    fn schur_add(&self, j: usize, x: &DMatrix<f64>, zinv: &DMatrix<f64>, m: &mut BlockSym) {
        let terms = &self.cones[j].terms;
        let conj = |map: &Option<DMatrix<f64>>, w: &DMatrix<f64>, other: &Option<DMatrix<f64>>| {
            let left = match map {
                None => w.clone(),
                Some(a) => a * w,
            };
            match other {
                None => left,
                Some(b) => left * b.transpose(),
            }
        };
        for (u, (b1, m1, c1)) in terms.iter().enumerate() {
            for (v, (b2, m2, c2)) in terms.iter().enumerate().skip(u) {
                // P = M1 X M2', R = M2 Zinv M1'
                let p = conj(m1, x, m2);
                let r = conj(m2, zinv, m1);
                let blk = self.pair_block(*b1, *b2, &p, &r, c1 * c2);
                if u == v {
                    *m.block_mut(*b1, *b1) += blk;
                } else if b1 == b2 {
                    let t = blk.transpose();
                    *m.block_mut(*b1, *b1) += blk + t;
                } else if b1 > b2 {
                    *m.block_mut(*b1, *b2) += blk;
                } else {
                    *m.block_mut(*b2, *b1) += blk.transpose();
                }
            }
        }
    }

    fn pair_block(&self, b1: usize, b2: usize, p: &DMatrix<f64>, r: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
        let i1 = &self.index[b1];
        let i2 = &self.index[b2];
        let mut out = DMatrix::zeros(i1.len(), i2.len());
        for (qi, &(c, d, aq)) in i2.iter().enumerate() {
            let mut col = out.column_mut(qi);
            for (pi, &(a, b, ap)) in i1.iter().enumerate() {
                let v = p[(b, c)] * r[(d, a)]
                    + p[(b, d)] * r[(c, a)]
                    + p[(a, c)] * r[(d, b)]
                    + p[(a, d)] * r[(c, b)];
                col[pi] = scale * ap * aq * v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Converged,
    Stalled,
    MaxIterations,
    EarlyStop,
}

pub(crate) struct IpmResult {
    pub y: DVector<f64>,
    pub pobj: f64,
    pub dobj: f64,
    /// Relative residual of the cone constraints at `y`.
    pub pres: f64,
    /// Relative residual of the certificate equations.
    pub dres: f64,
    pub gap: f64,
    pub iterations: usize,
    pub outcome: Outcome,
}

struct Factored {
    matrix: BlockSym,
    weights: Vec<f64>,
    chol: BlockCholesky,
    u: Vec<DVector<f64>>,
    small: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl Factored {
    fn apply(&self, rows: &[DVector<f64>], v: &DVector<f64>) -> DVector<f64> {
        let mut out = self.matrix.mul_vec(v);
        for (g, d) in rows.iter().zip(&self.weights) {
            out.axpy(d * g.dot(v), g, 1.0);
        }
        out
    }

    /// Solve with two rounds of iterative refinement.
    fn solve(&self, rows: &[DVector<f64>], r: &DVector<f64>) -> DVector<f64> {
        let mut x = self.solve_once(rows, r);
        for _ in 0..2 {
            let res = r - self.apply(rows, &x);
            x += self.solve_once(rows, &res);
        }
        x
    }

    fn solve_once(&self, rows: &[DVector<f64>], r: &DVector<f64>) -> DVector<f64> {
        let mut v = self.chol.solve(r);
        if let Some(lu) = &self.small {
            let gv = DVector::from_iterator(rows.len(), rows.iter().map(|g| g.dot(&v)));
            let w = lu.solve(&gv).unwrap_or_else(|| DVector::zeros(rows.len()));
            for (ul, wl) in self.u.iter().zip(w.iter()) {
                v.axpy(-wl, ul, 1.0);
            }
        }
        v
    }
}

/// Largest `a` with `M + a dM >= 0`, capped at `cap`.
fn max_step(m: &DMatrix<f64>, dm: &DMatrix<f64>, cap: f64) -> f64 {
    let l = match m.clone().cholesky() {
        Some(c) => c.l(),
        None => return 0.0,
    };
    let li = l.solve_lower_triangular(dm).expect("triangular");
    let w = l
        .solve_lower_triangular(&li.transpose())
        .expect("triangular");
    let lmin = crate::matkit::min_eig(&w);
    if lmin >= 0.0 {
        cap
    } else {
        cap.min(-1.0 / lmin)
    }
}

fn scalar_step(v: f64, dv: f64, cap: f64) -> f64 {
    if dv < 0.0 {
        cap.min(-v / dv)
    } else {
        cap
    }
}

fn inv_spd(z: &DMatrix<f64>) -> DMatrix<f64> {
    match z.clone().cholesky() {
        Some(c) => symmetrize(&c.inverse()),
        None => crate::matkit::pinv_sym(z, 1e-14),
    }
}

pub(crate) fn run(
    pp: &Prepared,
    tol: &ToleranceSettings,
    mut early: Option<&mut dyn FnMut(&DVector<f64>) -> bool>,
) -> IpmResult {
    let nv = pp.nvars();
    let nc = pp.cones.len();
    let nl = pp.rows.len();
    let nu: f64 = pp.cones.iter().map(|c| c.constant.nrows() as f64).sum::<f64>() + nl as f64;
    let dmax = pp.cones.iter().map(|c| c.constant.nrows()).max().unwrap_or(1).max(1) as f64;

    // Starting point.
    let mut fnorm = vec![0.0f64; pp.dims.len()];
    for cone in &pp.cones {
        for (b, map, coef) in &cone.terms {
            let s = match map {
                None => 1.0,
                Some(m) => m.norm_squared(),
            };
            fnorm[*b] += coef.abs() * s;
        }
    }
    for g in &pp.rows {
        for (b, f) in fnorm.iter_mut().enumerate() {
            *f += g.rows(pp.offsets[b], svec::len(pp.dims[b])).norm();
        }
    }
    let mut zeta = 10.0f64.max(dmax.sqrt());
    for b in 0..pp.dims.len() {
        let cmax = pp
            .c
            .rows(pp.offsets[b], svec::len(pp.dims[b]))
            .amax();
        zeta = zeta.max(dmax * (1.0 + cmax) / (1.0 + fnorm[b]));
    }
    let f0max = pp
        .cones
        .iter()
        .map(|c| c.constant.norm())
        .chain(pp.rhs.iter().map(|h| h.abs()))
        .fold(0.0, f64::max);
    let eta = 10.0f64
        .max(dmax.sqrt())
        .max(f0max)
        .max(1.0 + fnorm.iter().cloned().fold(0.0, f64::max));

    let mut y = DVector::<f64>::zeros(nv);
    let mut x: Vec<DMatrix<f64>> = pp
        .cones
        .iter()
        .map(|c| DMatrix::identity(c.constant.nrows(), c.constant.nrows()) * zeta)
        .collect();
    let mut z: Vec<DMatrix<f64>> = pp
        .cones
        .iter()
        .map(|c| DMatrix::identity(c.constant.nrows(), c.constant.nrows()) * eta)
        .collect();
    let mut xl = vec![zeta; nl];
    let mut zl = vec![eta; nl];

    let cnorm = pp.c.norm();
    let f0scale = 1.0 + f0max;
    let mut schur = BlockSym::with_pattern(
        &pp.dims.iter().map(|&d| svec::len(d)).collect::<Vec<_>>(),
        &pp.pattern,
    );

    // Gram operator of the constraint map; used to keep the certificate
    // equations satisfied to working precision when the Schur solve degrades.
    let gram = {
        let mut g = BlockSym::with_pattern(
            &pp.dims.iter().map(|&d| svec::len(d)).collect::<Vec<_>>(),
            &pp.pattern,
        );
        for (j, cone) in pp.cones.iter().enumerate() {
            let eye = DMatrix::identity(cone.constant.nrows(), cone.constant.nrows());
            pp.schur_add(j, &eye, &eye, &mut g);
        }
        factor(&mut g, pp, &vec![1.0; nl], &vec![1.0; nl])
    };

    let mut last = f64::INFINITY;
    let mut best: Option<(f64, IpmResult)> = None;
    let mut stall = 0usize;
    let mut prev_steps = (1.0f64, 1.0f64);

    for iter in 0..=tol.max_iter {
        // Residuals.
        let fy: Vec<DMatrix<f64>> = (0..nc).map(|j| &pp.cones[j].constant + pp.fop(j, &y)).collect();
        let rd: Vec<DMatrix<f64>> = (0..nc).map(|j| &fy[j] - &z[j]).collect();
        let fyl: Vec<f64> = (0..nl).map(|l| pp.rows[l].dot(&y) - pp.rhs[l]).collect();
        let rdl: Vec<f64> = (0..nl).map(|l| fyl[l] - zl[l]).collect();
        let mut fadj_x = DVector::zeros(nv);
        for j in 0..nc {
            pp.fadj_add(j, &x[j], &mut fadj_x);
        }
        for l in 0..nl {
            fadj_x.axpy(xl[l], &pp.rows[l], 1.0);
        }
        let rp = &pp.c - &fadj_x;
        let comp: f64 = (0..nc).map(|j| crate::matkit::trace_prod(&x[j], &z[j])).sum::<f64>()
            + (0..nl).map(|l| xl[l] * zl[l]).sum::<f64>();
        let mu = comp / nu;
        let pobj = pp.c.dot(&y);
        let dobj = -(0..nc)
            .map(|j| crate::matkit::trace_prod(&pp.cones[j].constant, &x[j]))
            .sum::<f64>()
            + (0..nl).map(|l| pp.rhs[l] * xl[l]).sum::<f64>();
        let pres = rd
            .iter()
            .map(|r| r.norm())
            .chain(rdl.iter().map(|r| r.abs()))
            .fold(0.0, f64::max)
            / f0scale;
        let dres = rp.norm() / (1.0 + cnorm);
        let gap = (pobj - dobj).abs().max(comp.abs()) / (1.0 + pobj.abs() + dobj.abs());

        let result = |outcome, y: &DVector<f64>| IpmResult {
            y: y.clone(),
            pobj,
            dobj,
            pres,
            dres,
            gap,
            iterations: iter,
            outcome,
        };
        if std::env::var_os("ROBSIG_TRACE").is_some() {
            eprintln!("it {iter:3} pobj {pobj:+.8e} dobj {dobj:+.8e} pres {pres:.2e} dres {dres:.2e} gap {gap:.2e} mu {mu:.2e} steps {:.3} {:.3}", prev_steps.0, prev_steps.1);
        }
        if pres <= tol.feas && dres <= tol.feas && gap <= tol.gap {
            return result(Outcome::Converged, &y);
        }
        if let Some(f) = early.as_mut() {
            if f(&y) {
                return result(Outcome::EarlyStop, &y);
            }
        }
        let score = (pres / tol.feas).max(dres / tol.feas).max(gap / tol.gap);
        if score.is_finite() && best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, result(Outcome::Stalled, &y)));
        }
        let best_score = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        if score > 0.5 * last && prev_steps.0.min(prev_steps.1) < 1e-3 {
            stall += 1;
        } else {
            stall = 0;
        }
        let diverging = score > 100.0 * best_score && best_score < 1e3;
        if iter == tol.max_iter || stall >= 4 || !score.is_finite() || diverging {
            let outcome = if iter == tol.max_iter { Outcome::MaxIterations } else { Outcome::Stalled };
            return match best.take() {
                Some((_, mut b)) if b.pres <= 10.0 * tol.feas && b.dres <= 10.0 * tol.feas && b.gap <= 10.0 * tol.gap => {
                    b.outcome = if b.pres <= tol.feas && b.dres <= tol.feas && b.gap <= tol.gap {
                        Outcome::Converged
                    } else {
                        outcome
                    };
                    b
                }
                Some((_, mut b)) if !score.is_finite() || diverging => {
                    b.outcome = outcome;
                    b
                }
                _ => result(outcome, &y),
            };
        }
        last = score;

        // Schur complement and factorization.
        let zinv: Vec<DMatrix<f64>> = z.iter().map(inv_spd).collect();
        schur.clear();
        for j in 0..nc {
            pp.schur_add(j, &x[j], &zinv[j], &mut schur);
        }
        let factored = factor(&mut schur, pp, &xl, &zl);
        let Some(factored) = factored else {
            return result(Outcome::Stalled, &y);
        };

        // Direction for a given centering and corrector.
        let direction = |sigma: f64, corr: Option<(&Vec<DMatrix<f64>>, &Vec<DMatrix<f64>>, &Vec<f64>, &Vec<f64>)>| {
            let mut g: Vec<DMatrix<f64>> = (0..nc)
                .map(|j| {
                    let mut gj = &zinv[j] * (sigma * mu) - &x[j] - symmetrize(&(&x[j] * &rd[j] * &zinv[j]));
                    if let Some((dx, dz, _, _)) = corr {
                        gj -= symmetrize(&(&dx[j] * &dz[j] * &zinv[j]));
                    }
                    gj
                })
                .collect();
            let gl: Vec<f64> = (0..nl)
                .map(|l| {
                    let mut v = sigma * mu / zl[l] - xl[l] - xl[l] * rdl[l] / zl[l];
                    if let Some((_, _, dxl, dzl)) = corr {
                        v -= dxl[l] * dzl[l] / zl[l];
                    }
                    v
                })
                .collect();
            let mut rhs = DVector::zeros(nv);
            for j in 0..nc {
                pp.fadj_add(j, &g[j], &mut rhs);
            }
            for l in 0..nl {
                rhs.axpy(gl[l], &pp.rows[l], 1.0);
            }
            rhs -= &rp;
            let dy = factored.solve(&pp.rows, &rhs);
            let dz: Vec<DMatrix<f64>> = (0..nc).map(|j| pp.fop(j, &dy) + &rd[j]).collect();
            let dzl: Vec<f64> = (0..nl).map(|l| pp.rows[l].dot(&dy) + rdl[l]).collect();
            // g already carries the rd part of dz
            for j in 0..nc {
                g[j] -= symmetrize(&(&x[j] * pp.fop(j, &dy) * &zinv[j]));
            }
            let mut dxl: Vec<f64> = (0..nl)
                .map(|l| gl[l] - xl[l] * pp.rows[l].dot(&dy) / zl[l])
                .collect();
            if let Some(gram) = &gram {
                let mut adj = DVector::zeros(nv);
                for j in 0..nc {
                    pp.fadj_add(j, &g[j], &mut adj);
                }
                let mut err = &rp - adj;
                for l in 0..nl {
                    err.axpy(-dxl[l], &pp.rows[l], 1.0);
                }
                let w = gram.solve(&pp.rows, &err);
                for j in 0..nc {
                    g[j] += pp.fop(j, &w);
                }
                for l in 0..nl {
                    dxl[l] += pp.rows[l].dot(&w);
                }
            }
            (dy, g, dz, dxl, dzl)
        };
        let steps = |dx: &Vec<DMatrix<f64>>, dz: &Vec<DMatrix<f64>>, dxl: &Vec<f64>, dzl: &Vec<f64>, cap: f64| {
            let mut ap = cap;
            let mut ad = cap;
            for j in 0..nc {
                ap = ap.min(max_step(&x[j], &dx[j], cap));
                ad = ad.min(max_step(&z[j], &dz[j], cap));
            }
            for l in 0..nl {
                ap = ap.min(scalar_step(xl[l], dxl[l], cap));
                ad = ad.min(scalar_step(zl[l], dzl[l], cap));
            }
            (ap, ad)
        };

        // Predictor.
        let (_, dxa, dza, dxla, dzla) = direction(0.0, None);
        let (apa, ada) = steps(&dxa, &dza, &dxla, &dzla, 1.0);
        let mut comp_aff = 0.0;
        for j in 0..nc {
            comp_aff += crate::matkit::trace_prod(&(&x[j] + &dxa[j] * apa), &(&z[j] + &dza[j] * ada));
        }
        for l in 0..nl {
            comp_aff += (xl[l] + apa * dxla[l]) * (zl[l] + ada * dzla[l]);
        }
        let sigma = ((comp_aff / nu) / mu).clamp(0.0, 1.0).powi(3).max(1e-10);

        // Corrector.
        let (dy, dx, dz, dxl, dzl) = direction(sigma, Some((&dxa, &dza, &dxla, &dzla)));
        let gamma = 0.9 + 0.09 * prev_steps.0.min(prev_steps.1);
        let (ap, ad) = steps(&dx, &dz, &dxl, &dzl, f64::INFINITY);
        let ap = (gamma * ap).min(1.0);
        let ad = (gamma * ad).min(1.0);
        prev_steps = (ap, ad);
        for j in 0..nc {
            x[j] = symmetrize(&(&x[j] + &dx[j] * ap));
            z[j] = symmetrize(&(&z[j] + &dz[j] * ad));
        }
        for l in 0..nl {
            xl[l] += ap * dxl[l];
            zl[l] += ad * dzl[l];
        }
        y.axpy(ad, &dy, 1.0);
    }
    unreachable!("loop returns on its last iteration")
}

fn factor(schur: &mut BlockSym, pp: &Prepared, xl: &[f64], zl: &[f64]) -> Option<Factored> {
    let matrix = schur.clone();
    let weights: Vec<f64> = xl.iter().zip(zl).map(|(x, z)| x / z).collect();
    let scale = schur.max_diag().max(1e-300);
    let mut reg = 0.0;
    let chol = loop {
        if let Some(c) = schur.factor() {
            break c;
        }
        let next = if reg == 0.0 { 1e-15 * scale } else { reg * 100.0 };
        if next > 1e-6 * scale {
            return None;
        }
        schur.add_diag(next - reg);
        reg = next;
    };
    let nl = pp.rows.len();
    if nl == 0 {
        return Some(Factored {
            matrix,
            weights,
            chol,
            u: Vec::new(),
            small: None,
        });
    }
    let u: Vec<DVector<f64>> = pp.rows.iter().map(|g| chol.solve(g)).collect();
    let mut small = DMatrix::zeros(nl, nl);
    for a in 0..nl {
        for b in 0..nl {
            small[(a, b)] = pp.rows[a].dot(&u[b]);
        }
        small[(a, a)] += zl[a] / xl[a];
    }
    Some(Factored {
        matrix,
        weights,
        chol,
        u,
        small: Some(small.lu()),
    })
}
