#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use robsig::lqr::{Chain, CostModel};
use robsig::sdp::{build_design_program, ConicProgram};
use robsig::sysmodel::{control_free_covariances, ControlObjective, MeasurementMode, Scenario, SystemModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Random PSD matrix with eigenvalues in `[lo, hi]`.
pub fn spd(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = gauss(rng, d, d).qr().q();
    let ev = DVector::from_fn(d, |_, _| rng.random_range(lo..=hi));
    &q * DMatrix::from_diagonal(&ev) * q.transpose()
}

/// Random square matrix with spectral norm `norm`.
pub fn scaled(rng: &mut ChaCha8Rng, d: usize, norm: f64) -> DMatrix<f64> {
    let g = gauss(rng, d, d);
    let s = g.clone().svd(false, false).singular_values.max();
    g * (norm / s)
}

pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    let d = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

pub fn rel_fro(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

pub struct Dims {
    pub m: usize,
    pub r: usize,
    pub n: usize,
    pub horizon: usize,
}

pub fn random_model(rng: &mut ChaCha8Rng, d: &Dims) -> SystemModel {
    let norm = rng.random_range(0.5..1.2);
    SystemModel::new(
        d.horizon,
        scaled(rng, d.m, norm),
        gauss(rng, d.m, d.r),
        gauss(rng, d.n, d.m),
        spd(rng, d.m, 0.2, 2.0),
        spd(rng, d.m, 0.2, 1.0),
        spd(rng, d.n, 0.1, 1.0),
    )
    .expect("random model is valid")
}

/// System type `o` plus attackers `a1..`, all types in the design set.
pub fn random_types(rng: &mut ChaCha8Rng, m: usize, r: usize, attackers: usize) -> Vec<ControlObjective> {
    let mut out = vec![ControlObjective {
        label: "o".into(),
        q: spd(rng, m, 0.1, 2.0),
        r: spd(rng, r, 0.5, 2.0),
        is_system_type: true,
    }];
    for i in 1..=attackers {
        // rank-deficient weights are common for attackers
        let rows = rng.random_range(1..=m);
        let g = gauss(rng, rows, m);
        out.push(ControlObjective {
            label: format!("a{i}"),
            q: g.transpose() * g,
            r: spd(rng, r, 0.5, 2.0),
            is_system_type: false,
        });
    }
    out
}

pub fn random_scenario(rng: &mut ChaCha8Rng, d: &Dims, attackers: usize, mode: MeasurementMode) -> Scenario {
    let model = random_model(rng, d);
    let types = random_types(rng, d.m, d.r, attackers);
    let design = types.iter().map(|t| t.label.clone()).collect();
    Scenario::new(model, types, design, mode).expect("random scenario is valid")
}

/// Random point of the chain: each stage adds a random fraction of the innovation.
pub fn random_chain_point(rng: &mut ChaCha8Rng, chain: &Chain) -> Vec<DMatrix<f64>> {
    let mut out: Vec<DMatrix<f64>> = Vec::new();
    for k in 1..=chain.horizon() {
        let prev = chain.propagate(k, out.last());
        let p = &chain.upper[k - 1] - &prev;
        let d = p.nrows();
        let q = gauss(rng, d, d).qr().q();
        // endpoints 0 and 1 are exercised often
        let ev = DVector::from_fn(d, |_, _| match rng.random_range(0..5) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..1.0),
        });
        let t = &q * DMatrix::from_diagonal(&ev) * q.transpose();
        let h = sym_sqrt(&p);
        let s = &prev + &h * t * &h;
        out.push((&s + s.transpose()) * 0.5);
    }
    out
}

/// Random chain program with up to two dominance rows, strictly feasible at `S = Sigma / 2`.
pub fn random_program(rng: &mut ChaCha8Rng) -> (ConicProgram, Chain) {
    let m = rng.random_range(1..=3);
    let d = Dims { m, r: 1, n: 1, horizon: rng.random_range(1..=4) };
    let model = random_model(rng, &d);
    let chain = Chain::perfect(&control_free_covariances(&model), &model.a);
    let sym = |rng: &mut ChaCha8Rng| {
        let g = gauss(rng, m, m);
        (&g + g.transpose()) * 0.5
    };
    let own = CostModel {
        label: "p".into(),
        blocks: (0..d.horizon).map(|_| sym(rng)).collect(),
        offset: rng.random_range(-1.0..1.0),
    };
    let half: Vec<DMatrix<f64>> = chain.upper.iter().map(|u| u * 0.5).collect();
    let mut costs = vec![own.clone()];
    for i in 0..rng.random_range(0..=2) {
        let blocks: Vec<DMatrix<f64>> = (0..d.horizon).map(|_| sym(rng)).collect();
        let gap: f64 = own.blocks.iter().zip(&blocks).zip(&half).map(|((c, o), s)| (c - o).dot(s)).sum();
        let margin = rng.random_range(0.05..1.0);
        costs.push(CostModel {
            label: format!("o{i}"),
            blocks,
            offset: own.offset + gap - margin,
        });
    }
    let design: Vec<usize> = (0..costs.len()).collect();
    (build_design_program(&costs, 0, &design, &chain), chain)
}

/// Finite-horizon LQG cost under full state feedback, from a separate
/// backward pass and a forward covariance propagation.
pub fn lqg_full_information_cost(model: &SystemModel, q: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let (a, b) = (&model.a, &model.b);
    let mut p = q.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); model.horizon];
    for k in (0..model.horizon).rev() {
        let s = b.transpose() * &p * b + r;
        let kk = s.clone().try_inverse().unwrap() * b.transpose() * &p * a;
        let acl = a - b * &kk;
        p = q + acl.transpose() * &p * &acl + kk.transpose() * r * &kk;
        gains[k] = kk;
    }
    let mut x = model.sigma1.clone();
    let mut cost = 0.0;
    for kk in &gains {
        let acl = a - b * kk;
        cost += (kk.transpose() * r * kk * &x).trace();
        x = &acl * &x * acl.transpose() + &model.sigmaw;
        cost += (q * &x).trace();
    }
    cost
}

/// Program `min offset + sum Tr{C_k S_k}` over the chain plus dominance rows,
/// in the form the cross-check oracle consumes.
pub struct ChainProgram {
    pub chain: Chain,
    pub objective: CostModel,
    /// `(G_k, rhs)`: `sum_k Tr{G_k S_k} >= rhs`.
    pub rows: Vec<(Vec<DMatrix<f64>>, f64)>,
}

impl ChainProgram {
    pub fn from_conic(p: &ConicProgram, chain: &Chain) -> Self {
        let kappa = chain.horizon();
        let rows = p
            .linear
            .iter()
            .map(|l| {
                let mut g: Vec<DMatrix<f64>> = chain.upper.iter().map(|u| DMatrix::zeros(u.nrows(), u.nrows())).collect();
                for (b, c) in &l.coeffs {
                    g[*b] += c;
                }
                (g, l.rhs)
            })
            .collect();
        ChainProgram {
            chain: chain.clone(),
            objective: CostModel {
                label: "obj".into(),
                blocks: p.objective[..kappa].to_vec(),
                offset: p.offset,
            },
            rows,
        }
    }
}

/// Largest chain violation at `s`, from plain eigenvalue checks.
pub fn chain_violation(chain: &Chain, s: &[DMatrix<f64>]) -> f64 {
    let neg = |m: DMatrix<f64>| -(m.symmetric_eigen().eigenvalues.min()).min(0.0);
    let mut v = 0.0f64;
    for k in 1..=chain.horizon() {
        let lower = if k == 1 {
            DMatrix::zeros(s[0].nrows(), s[0].nrows())
        } else {
            let a = &chain.maps[k - 1];
            a * &s[k - 2] * a.transpose()
        };
        v = v.max(neg(&chain.upper[k - 1] - &s[k - 1])).max(neg(&s[k - 1] - lower));
    }
    v
}

impl ChainProgram {
    /// Largest constraint violation at `s`.
    pub fn violation(&self, s: &[DMatrix<f64>]) -> f64 {
        let mut v = chain_violation(&self.chain, s);
        for (g, rhs) in &self.rows {
            v = v.max(rhs - dot(g, s));
        }
        v
    }

    pub fn scale(&self) -> f64 {
        self.chain.upper.iter().map(|u| u.norm()).fold(1.0, f64::max)
    }
}

fn clip(m: &DMatrix<f64>, lo: f64, hi: f64) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    let d = e.eigenvalues.map(|v| v.clamp(lo, hi));
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

fn psd_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    clip(m, 0.0, f64::INFINITY)
}

fn dot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

pub struct PpgResult {
    pub value: f64,
    pub s: Vec<DMatrix<f64>>,
    pub violation: f64,
}

/// Penalized projected gradient on the chain program.
///
/// Each block is written `S_k = U_k^(1/2) T_k U_k^(1/2)` with `U_k` the upper
/// bound, so `0 <= S_k <= U_k` becomes the eigenvalue box `0 <= T_k <= I` and
/// is enforced by projection. The lower chain links and the rows are handled
/// with an augmented-Lagrangian penalty; each subproblem is solved by
/// accelerated projected gradient with backtracking.
pub fn ppg_solve(prob: &ChainProgram) -> PpgResult {
    let chain = &prob.chain;
    let kappa = chain.horizon();
    let roots: Vec<DMatrix<f64>> = chain.upper.iter().map(sym_sqrt).collect();
    let scale = chain.upper.iter().map(|u| u.norm()).fold(1.0, f64::max);
    let to_s = |t: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> {
        t.iter().zip(&roots).map(|(t, h)| h * t * h).collect()
    };
    let links = |s: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> {
        (2..=kappa).map(|k| &s[k - 1] - chain.propagate(k, Some(&s[k - 2]))).collect()
    };
    let row_vals = |s: &[DMatrix<f64>]| -> Vec<f64> { prob.rows.iter().map(|(g, rhs)| dot(g, s) - rhs).collect() };

    let mut ylink: Vec<DMatrix<f64>> = chain.upper[1..]
        .iter()
        .map(|u| DMatrix::zeros(u.nrows(), u.nrows()))
        .collect();
    let mut yrow = vec![0.0; prob.rows.len()];
    let obj_scale = prob.objective.blocks.iter().map(|c| c.norm()).fold(1e-12, f64::max);
    let mut rho = obj_scale / scale;

    // augmented Lagrangian value and gradient in S coordinates
    let lagr = |s: &[DMatrix<f64>], yl: &[DMatrix<f64>], yr: &[f64], rho: f64| -> (f64, Vec<DMatrix<f64>>) {
        let mut f = prob.objective.value(s);
        let mut g: Vec<DMatrix<f64>> = prob.objective.blocks.clone();
        for (i, l) in links(s).iter().enumerate() {
            let k = i + 2;
            let m = psd_part(&(&yl[i] - l * rho));
            f += (m.norm_squared() - yl[i].norm_squared()) / (2.0 * rho);
            // d/dS_k of -<m, S_k - A S_{k-1} A'>
            g[k - 1] -= &m;
            let a = &chain.maps[k - 1];
            g[k - 2] += a.transpose() * &m * a;
        }
        for (j, v) in row_vals(s).iter().enumerate() {
            let m = (yr[j] - rho * v).max(0.0);
            f += (m * m - yr[j] * yr[j]) / (2.0 * rho);
            for (gk, rk) in g.iter_mut().zip(&prob.rows[j].0) {
                *gk -= rk * m;
            }
        }
        (f, g)
    };

    let mut t: Vec<DMatrix<f64>> = chain.upper.iter().map(|u| DMatrix::identity(u.nrows(), u.nrows()) * 0.5).collect();
    let mut step = 1.0 / (rho * scale * scale + 1.0);
    for _outer in 0..200 {
        // accelerated projected gradient on T
        let mut z = t.clone();
        let mut tk: f64 = 1.0;
        let mut f_prev = f64::INFINITY;
        for _inner in 0..3000 {
            let (fz, gs) = lagr(&to_s(&z), &ylink, &yrow, rho);
            let gt: Vec<DMatrix<f64>> = gs.iter().zip(&roots).map(|(g, h)| h * g * h).collect();
            let next = loop {
                let cand: Vec<DMatrix<f64>> = z
                    .iter()
                    .zip(&gt)
                    .map(|(z, g)| clip(&((z - g * step + (z - g * step).transpose()) * 0.5), 0.0, 1.0))
                    .collect();
                let diff: Vec<DMatrix<f64>> = cand.iter().zip(&z).map(|(c, z)| c - z).collect();
                let (fc, _) = lagr(&to_s(&cand), &ylink, &yrow, rho);
                if fc <= fz + dot(&gt, &diff) + dot(&diff, &diff) / (2.0 * step) + 1e-15 * fz.abs() {
                    break cand;
                }
                step *= 0.5;
            };
            let tn = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
            z = next.iter().zip(&t).map(|(n, o)| n + (n - o) * ((tk - 1.0) / tn)).collect();
            let moved: f64 = next.iter().zip(&t).map(|(n, o)| (n - o).norm_squared()).sum::<f64>().sqrt();
            t = next;
            tk = tn;
            let (fnow, _) = lagr(&to_s(&t), &ylink, &yrow, rho);
            if fnow > f_prev {
                // restart momentum
                z = t.clone();
                tk = 1.0;
            }
            f_prev = fnow;
            step *= 1.2;
            if moved < 1e-11 {
                break;
            }
        }
        let s = to_s(&t);
        let mut viol = 0.0f64;
        for (i, l) in links(&s).iter().enumerate() {
            let m = psd_part(&(&ylink[i] - l * rho));
            viol = viol.max(((&m - &ylink[i]) / rho).norm());
            ylink[i] = m;
        }
        for (j, v) in row_vals(&s).iter().enumerate() {
            let m = (yrow[j] - rho * v).max(0.0);
            viol = viol.max(((m - yrow[j]) / rho).abs());
            yrow[j] = m;
        }
        if viol < 1e-9 * scale {
            break;
        }
        rho *= 2.0;
    }
    let s = to_s(&t);
    let mut violation = 0.0f64;
    for l in links(&s) {
        violation = violation.max(-l.symmetric_eigen().eigenvalues.min());
    }
    for v in row_vals(&s) {
        violation = violation.max(-v);
    }
    PpgResult {
        value: prob.objective.value(&s),
        s,
        violation: violation.max(0.0),
    }
}
