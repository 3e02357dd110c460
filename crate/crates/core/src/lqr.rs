//! Riccati recursion, completion-of-squares parameters and per-stage weights.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matkit::{mat_pow, pinv_sym, symmetrize, trace_prod, RANK_TOL};
use crate::sysmodel::{stage_slot, ControlFreeStats, ControlObjective, Scenario, SystemModel};

const MAX_CONDITION: f64 = 1e12;

/// Backward Riccati solution for one objective.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// `Q~_1 .. Q~_{horizon+1}` (index k-1).
    pub q_tilde: Vec<DMatrix<f64>>,
    /// `K_1 .. K_horizon`.
    pub gains: Vec<DMatrix<f64>>,
    /// `Delta_1 .. Delta_horizon`.
    pub delta: Vec<DMatrix<f64>>,
    /// Constant part of the completed square.
    pub delta0: f64,
}

pub fn riccati_backward(
    model: &SystemModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<RiccatiSolution> {
    let kappa = model.horizon;
    let (a, b) = (&model.a, &model.b);
    let mut q_tilde = vec![DMatrix::zeros(0, 0); kappa + 1];
    let mut gains = vec![DMatrix::zeros(0, 0); kappa];
    let mut delta = vec![DMatrix::zeros(0, 0); kappa];
    q_tilde[kappa] = q.clone();
    for k in (1..=kappa).rev() {
        let qn = &q_tilde[k];
        let d = symmetrize(&(b.transpose() * qn * b + r));
        let sv = d.clone().svd(false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 0.0) || smax / smin > MAX_CONDITION {
            return Err(Error::IllConditioned(format!(
                "Delta_{k} has condition number {:.3e}",
                smax / smin
            )));
        }
        let chol = d.clone().cholesky().ok_or_else(|| {
            Error::IllConditioned(format!("Delta_{k} is not positive definite"))
        })?;
        let bq = b.transpose() * qn;
        let kk = chol.solve(&(&bq * a));
        let inner = qn - bq.transpose() * chol.solve(&bq);
        q_tilde[k - 1] = symmetrize(&(q + a.transpose() * inner * a));
        gains[k - 1] = kk;
        delta[k - 1] = d;
    }
    let mut delta0 = trace_prod(&(&q_tilde[0] - q), &model.sigma1);
    for k in 1..=kappa {
        delta0 += trace_prod(&q_tilde[k], &model.sigmaw);
    }
    Ok(RiccatiSolution {
        q_tilde,
        gains,
        delta,
        delta0,
    })
}

/// Stacked operators relating posteriors to closed-loop trajectories.
#[derive(Debug, Clone)]
pub struct BlockMatrices {
    pub phi: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub t: DMatrix<f64>,
}

/// Copies `blk` into stage position `(i, j)` of a stacked matrix.
fn put(out: &mut DMatrix<f64>, i: usize, j: usize, kappa: usize, blk: &DMatrix<f64>) {
    let (r, c) = blk.shape();
    out.view_mut((stage_slot(i, kappa) * r, stage_slot(j, kappa) * c), (r, c))
        .copy_from(blk);
}

/// Block `(i, j)` (stages) of a stacked matrix with `r x c` blocks.
pub fn stage_block(m: &DMatrix<f64>, i: usize, j: usize, kappa: usize, r: usize, c: usize) -> DMatrix<f64> {
    m.view((stage_slot(i, kappa) * r, stage_slot(j, kappa) * c), (r, c))
        .clone_owned()
}

pub fn block_matrices(model: &SystemModel, ric: &RiccatiSolution) -> BlockMatrices {
    let kappa = model.horizon;
    let (m, r) = (model.m(), model.r());
    let (a, b) = (&model.a, &model.b);
    let mut phi = DMatrix::zeros(kappa * r, kappa * r);
    let mut kb = DMatrix::zeros(kappa * r, kappa * m);
    let mut db = DMatrix::zeros(kappa * r, kappa * r);
    let mut z = DMatrix::zeros(kappa * m, kappa * r);
    let ir = DMatrix::identity(r, r);
    for k in 1..=kappa {
        put(&mut phi, k, k, kappa, &ir);
        put(&mut kb, k, k, kappa, &ric.gains[k - 1]);
        put(&mut db, k, k, kappa, &ric.delta[k - 1]);
        for j in 1..k {
            put(&mut phi, k, j, kappa, &(&ric.gains[k - 1] * mat_pow(a, k - 1 - j) * b));
        }
        for j in 1..=k {
            put(&mut z, k, j, kappa, &(mat_pow(a, k - j) * b));
        }
    }
    // Phi is unit block-triangular, so LU without pivoting issues is exact enough.
    let phi_inv_k = phi
        .clone()
        .lu()
        .solve(&kb)
        .expect("unit block-triangular matrix is invertible");
    let t = &z * phi_inv_k;
    BlockMatrices {
        phi,
        k: kb,
        delta: db,
        z,
        t,
    }
}

/// Reduced cost `xi + sum_k Tr{H_k Xi_k}` of one type.
#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights {
    pub label: String,
    pub xi_blocks: Vec<DMatrix<f64>>,
    pub xi: f64,
}

/// Folds a stacked weight `V` into per-stage blocks using `H_ij = A^{i-j} H_j`.
pub fn fold_stacked(v: &DMatrix<f64>, a: &DMatrix<f64>, kappa: usize) -> Vec<DMatrix<f64>> {
    let m = a.nrows();
    (1..=kappa)
        .map(|k| {
            let mut x = stage_block(v, k, k, kappa, m, m);
            for l in k + 1..=kappa {
                let al = mat_pow(a, l - k);
                x += stage_block(v, k, l, kappa, m, m) * &al
                    + al.transpose() * stage_block(v, l, k, kappa, m, m);
            }
            symmetrize(&x)
        })
        .collect()
}

/// Stacked `V` for the system type (`system == true`) or an attacker.
pub fn stacked_weight(
    model: &SystemModel,
    blocks: &BlockMatrices,
    q_system: &DMatrix<f64>,
    system: bool,
) -> DMatrix<f64> {
    if system {
        -(blocks.k.transpose() * &blocks.delta * &blocks.k)
    } else {
        let kappa = model.horizon;
        let ik = DMatrix::<f64>::identity(kappa, kappa);
        let abar = ik.kronecker(&model.a);
        let qbar = ik.kronecker(q_system);
        let t = &blocks.t;
        let tq = t.transpose() * &qbar;
        &tq * t - &tq * &abar - abar.transpose() * &qbar * t
    }
}

pub fn stage_weights(
    model: &SystemModel,
    stats: &ControlFreeStats,
    objective: &ControlObjective,
    ric: &RiccatiSolution,
    blocks: &BlockMatrices,
    q_system: &DMatrix<f64>,
) -> StageWeights {
    let kappa = model.horizon;
    let v = stacked_weight(model, blocks, q_system, objective.is_system_type);
    let xi_blocks = fold_stacked(&v, &model.a, kappa);
    let xi = if objective.is_system_type {
        ric.delta0
            - xi_blocks
                .iter()
                .zip(&stats.sigma)
                .map(|(x, s)| trace_prod(s, x))
                .sum::<f64>()
    } else {
        let aqa = model.a.transpose() * q_system * &model.a;
        stats.sigma.iter().map(|s| trace_prod(s, &aqa)).sum::<f64>()
            + kappa as f64 * trace_prod(&model.sigmaw, q_system)
    };
    StageWeights {
        label: objective.label.clone(),
        xi_blocks,
        xi,
    }
}

/// Stage weights of every declared type, in declaration order.
pub fn scenario_weights(scenario: &Scenario) -> Result<Vec<StageWeights>> {
    let model = &scenario.model;
    let stats = crate::sysmodel::control_free_covariances(model);
    let q_sys = &scenario.system_type().q;
    scenario
        .types
        .iter()
        .map(|t| {
            let ric = riccati_backward(model, &t.q, &t.r)?;
            let blocks = block_matrices(model, &ric);
            Ok(stage_weights(model, &stats, t, &ric, &blocks, q_sys))
        })
        .collect()
}

/// Second-order statistics of the stacked control-free measurements.
#[derive(Debug, Clone)]
pub struct MeasurementStats {
    /// `Sigma^y_k`, `nk x nk`, newest measurement first.
    pub sigma_y: Vec<DMatrix<f64>>,
    /// `A_k` for k >= 2 at index k-1; index 0 holds an empty matrix.
    pub a: Vec<DMatrix<f64>>,
    /// `D_k = E{x^o_k y'} Sigma^y_k^+`, `m x nk`.
    pub d: Vec<DMatrix<f64>>,
    pub n: usize,
}

pub fn measurement_stats(model: &SystemModel) -> MeasurementStats {
    let stats = crate::sysmodel::control_free_covariances(model);
    let kappa = model.horizon;
    let (m, n) = (model.m(), model.n());
    let c = &model.c;
    let mut sigma_y = Vec::with_capacity(kappa);
    let mut a_k = Vec::with_capacity(kappa);
    let mut d = Vec::with_capacity(kappa);
    for k in 1..=kappa {
        let mut sy = DMatrix::zeros(n * k, n * k);
        let mut exy = DMatrix::zeros(m, n * k);
        for i in 1..=k {
            let si = stage_slot(i, k);
            for j in 1..=k {
                let mut blk = c * stats.cross(i, j) * c.transpose();
                if i == j {
                    blk += &model.sigmav;
                }
                sy.view_mut((si * n, stage_slot(j, k) * n), (n, n)).copy_from(&blk);
            }
            exy.view_mut((0, si * n), (m, n))
                .copy_from(&(stats.cross(k, i) * c.transpose()));
        }
        let sy = symmetrize(&sy);
        let sy_pinv = pinv_sym(&sy, RANK_TOL);
        d.push(&exy * &sy_pinv);
        if k == 1 {
            a_k.push(DMatrix::zeros(0, 0));
        } else {
            let prev: &DMatrix<f64> = &sigma_y[k - 2];
            let top = sy.view((0, n), (n, n * (k - 1))) * pinv_sym(prev, RANK_TOL);
            let eye = DMatrix::<f64>::identity(n * (k - 1), n * (k - 1));
            a_k.push(nalgebra::stack![top; eye]);
        }
        sigma_y.push(sy);
    }
    MeasurementStats { sigma_y, a: a_k, d, n }
}

/// Measurement-space weights `W_k = D_k' Xi_k D_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementWeights {
    pub label: String,
    pub w_blocks: Vec<DMatrix<f64>>,
    pub xi: f64,
}

pub fn measurement_weights(stage: &StageWeights, mstats: &MeasurementStats) -> MeasurementWeights {
    let w_blocks = stage
        .xi_blocks
        .iter()
        .zip(&mstats.d)
        .map(|(x, d)| symmetrize(&(d.transpose() * x * d)))
        .collect();
    MeasurementWeights {
        label: stage.label.clone(),
        w_blocks,
        xi: stage.xi,
    }
}

/// A reduced cost in whichever space the design program lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub label: String,
    pub blocks: Vec<DMatrix<f64>>,
    pub offset: f64,
}

impl CostModel {
    /// `offset + sum_k Tr{S_k blocks_k}`.
    pub fn value(&self, s: &[DMatrix<f64>]) -> f64 {
        self.offset
            + self
                .blocks
                .iter()
                .zip(s)
                .map(|(w, s)| trace_prod(w, s))
                .sum::<f64>()
    }
}

impl From<StageWeights> for CostModel {
    fn from(w: StageWeights) -> Self {
        CostModel {
            label: w.label,
            blocks: w.xi_blocks,
            offset: w.xi,
        }
    }
}

impl From<MeasurementWeights> for CostModel {
    fn from(w: MeasurementWeights) -> Self {
        CostModel {
            label: w.label,
            blocks: w.w_blocks,
            offset: w.xi,
        }
    }
}

/// The chain `upper_k >= S_k >= maps_k S_{k-1} maps_k'`, `S_1 >= 0`.
#[derive(Debug, Clone)]
pub struct Chain {
    pub upper: Vec<DMatrix<f64>>,
    /// `maps[k-1]` acts on `S_{k-1}`; `maps[0]` is unused.
    pub maps: Vec<DMatrix<f64>>,
}

impl Chain {
    pub fn horizon(&self) -> usize {
        self.upper.len()
    }

    pub fn perfect(stats: &ControlFreeStats, a: &DMatrix<f64>) -> Self {
        let mut maps = vec![a.clone(); stats.horizon()];
        maps[0] = DMatrix::zeros(0, 0);
        Chain {
            upper: stats.sigma.clone(),
            maps,
        }
    }

    pub fn imperfect(ms: &MeasurementStats) -> Self {
        Chain {
            upper: ms.sigma_y.clone(),
            maps: ms.a.clone(),
        }
    }

    /// `maps_k S maps_k'` (zero for k = 1).
    pub fn propagate(&self, k: usize, prev: Option<&DMatrix<f64>>) -> DMatrix<f64> {
        let d = self.upper[k - 1].nrows();
        match prev {
            Some(p) if k > 1 => {
                let a = &self.maps[k - 1];
                symmetrize(&(a * p * a.transpose()))
            }
            _ => DMatrix::zeros(d, d),
        }
    }

    /// Largest PSD residual of the chain constraints at `s`.
    pub fn violation(&self, s: &[DMatrix<f64>]) -> f64 {
        use crate::matkit::psd_dist;
        let mut worst = 0.0f64;
        for k in 1..=self.horizon() {
            let lower = self.propagate(k, if k > 1 { Some(&s[k - 2]) } else { None });
            worst = worst
                .max(psd_dist(&(&self.upper[k - 1] - &s[k - 1])))
                .max(psd_dist(&(&s[k - 1] - lower)));
        }
        worst
    }
}

/// Cost models and chain for a scenario in its measurement mode.
pub fn design_inputs(scenario: &Scenario) -> Result<(Vec<CostModel>, Chain)> {
    use crate::sysmodel::MeasurementMode;
    let weights = scenario_weights(scenario)?;
    match scenario.measurement_mode {
        MeasurementMode::Perfect => {
            let stats = crate::sysmodel::control_free_covariances(&scenario.model);
            Ok((
                weights.into_iter().map(CostModel::from).collect(),
                Chain::perfect(&stats, &scenario.model.a),
            ))
        }
        MeasurementMode::Imperfect => {
            let ms = measurement_stats(&scenario.model);
            let costs = weights
                .iter()
                .map(|w| CostModel::from(measurement_weights(w, &ms)))
                .collect();
            Ok((costs, Chain::imperfect(&ms)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::control_free_covariances;
    use approx::assert_relative_eq;

    fn scalar_model(kappa: usize, s1: f64, sw: f64) -> SystemModel {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        SystemModel::new(kappa, one(1.), one(1.), one(1.), one(s1), one(sw), one(1.)).unwrap()
    }

    #[test]
    fn scalar_one_step() {
        let model = scalar_model(1, 2.0, 3.0);
        let one = DMatrix::from_element(1, 1, 1.0);
        let ric = riccati_backward(&model, &one, &one).unwrap();
        assert_relative_eq!(ric.q_tilde[1][(0, 0)], 1.0);
        assert_relative_eq!(ric.delta[0][(0, 0)], 2.0);
        assert_relative_eq!(ric.gains[0][(0, 0)], 0.5);
        // Optimal cost of one step from x ~ N(0, s1): s1/2 + sw.
        assert_relative_eq!(ric.delta0, 0.5 * 2.0 + 3.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_objective() {
        let model = scalar_model(4, 2.0, 3.0);
        let zero = DMatrix::zeros(1, 1);
        let ric = riccati_backward(&model, &zero, &DMatrix::identity(1, 1)).unwrap();
        assert!(ric.q_tilde.iter().all(|q| q.norm() == 0.0));
        assert!(ric.gains.iter().all(|k| k.norm() == 0.0));
        assert_eq!(ric.delta0, 0.0);
    }

    #[test]
    fn ill_conditioned_delta() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let model = SystemModel::new(2, i2.clone(), i2.clone(), i2.clone(), i2.clone(), i2.clone(), i2.clone())
            .unwrap();
        let r = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[1.0, 1e-13]));
        assert!(matches!(
            riccati_backward(&model, &DMatrix::zeros(2, 2), &r),
            Err(Error::IllConditioned(_))
        ));
    }

    #[test]
    fn single_stage_blocks() {
        let model = scalar_model(1, 1.0, 1.0);
        let one = DMatrix::identity(1, 1);
        let ric = riccati_backward(&model, &one, &one).unwrap();
        let bm = block_matrices(&model, &ric);
        assert_eq!(bm.phi, one);
        assert_eq!(bm.z, one);
        assert_relative_eq!(bm.t[(0, 0)], 0.5);
    }

    #[test]
    fn two_stage_blocks_match_unrolling() {
        let model = scalar_model(2, 1.0, 1.0);
        let one = DMatrix::identity(1, 1);
        let ric = riccati_backward(&model, &one, &one).unwrap();
        let (k1, k2) = (ric.gains[0][(0, 0)], ric.gains[1][(0, 0)]);
        let bm = block_matrices(&model, &ric);
        assert_eq!(bm.phi, DMatrix::from_row_slice(2, 2, &[1., k2, 0., 1.]));
        assert_eq!(bm.z, DMatrix::from_row_slice(2, 2, &[1., 1., 0., 1.]));
        // Unrolled: u1 = -k1 e1, u2 = -k2 (e2 + u1); x2 - x2o = u1, x3 - x3o = u1 + u2.
        // Stacks are (stage 2, stage 1).
        let t_unrolled = DMatrix::from_row_slice(2, 2, &[k2, k1 * (1.0 - k2), 0.0, k1]);
        assert!((bm.t - t_unrolled).norm() < 1e-14);
    }

    #[test]
    fn zero_gain_gives_zero_t() {
        let model = scalar_model(3, 1.0, 1.0);
        let ric = riccati_backward(&model, &DMatrix::zeros(1, 1), &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(block_matrices(&model, &ric).t.norm(), 0.0);
    }

    #[test]
    fn zero_system_weight_for_attackers() {
        let model = scalar_model(3, 1.0, 1.0);
        let stats = control_free_covariances(&model);
        let obj = ControlObjective {
            label: "a".into(),
            q: DMatrix::identity(1, 1),
            r: DMatrix::identity(1, 1),
            is_system_type: false,
        };
        let ric = riccati_backward(&model, &obj.q, &obj.r).unwrap();
        let bm = block_matrices(&model, &ric);
        let w = stage_weights(&model, &stats, &obj, &ric, &bm, &DMatrix::zeros(1, 1));
        assert!(w.xi_blocks.iter().all(|x| x.norm() == 0.0));
        assert_eq!(w.xi, 0.0);
    }

    #[test]
    fn single_stage_system_weight() {
        let model = scalar_model(1, 2.0, 1.0);
        let stats = control_free_covariances(&model);
        let obj = ControlObjective {
            label: "o".into(),
            q: DMatrix::identity(1, 1),
            r: DMatrix::identity(1, 1),
            is_system_type: true,
        };
        let ric = riccati_backward(&model, &obj.q, &obj.r).unwrap();
        let bm = block_matrices(&model, &ric);
        let w = stage_weights(&model, &stats, &obj, &ric, &bm, &obj.q);
        let kdk = ric.gains[0].transpose() * &ric.delta[0] * &ric.gains[0];
        assert_relative_eq!(w.xi_blocks[0][(0, 0)], -kdk[(0, 0)], epsilon = 1e-14);
        assert_relative_eq!(w.xi, ric.delta0 + 2.0 * kdk[(0, 0)], epsilon = 1e-14);
    }

    #[test]
    fn scalar_measurement_conditioning() {
        let model = scalar_model(1, 1.0, 1.0);
        let ms = measurement_stats(&model);
        assert_relative_eq!(ms.sigma_y[0][(0, 0)], 2.0);
        assert_relative_eq!(ms.d[0][(0, 0)], 0.5);
    }

    #[test]
    fn perfect_observation_selects_state() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]);
        let model = SystemModel::new(
            3,
            a,
            DMatrix::identity(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 0.5,
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let stats = control_free_covariances(&model);
        let ms = measurement_stats(&model);
        for k in 1..=3 {
            let d = &ms.d[k - 1];
            let mut sel = DMatrix::zeros(2, 2 * k);
            sel.view_mut((0, 0), (2, 2)).fill_with_identity();
            assert!((d - &sel).norm() < 1e-8);
            let h = d * &ms.sigma_y[k - 1] * d.transpose();
            assert!((h - &stats.sigma[k - 1]).norm() < 1e-8);
        }
    }

    #[test]
    fn measurement_weight_embeds_stage_weight() {
        let model = SystemModel::new(
            2,
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let ms = measurement_stats(&model);
        let xi = DMatrix::from_row_slice(2, 2, &[1., 2., 2., -3.]);
        let sw = StageWeights {
            label: "x".into(),
            xi_blocks: vec![xi.clone(), DMatrix::zeros(2, 2)],
            xi: 4.0,
        };
        let mw = measurement_weights(&sw, &ms);
        assert!((&mw.w_blocks[0] - &xi).norm() < 1e-9);
        assert_eq!(mw.w_blocks[1].shape(), (4, 4));
        assert_eq!(mw.xi, 4.0);
    }

    #[test]
    fn benchmark_riccati_is_finite_and_psd() {
        let sc = crate::sysmodel::tracking_benchmark(crate::sysmodel::MeasurementMode::Perfect);
        for t in &sc.types {
            let ric = riccati_backward(&sc.model, &t.q, &t.r).unwrap();
            for q in &ric.q_tilde {
                assert!(crate::matkit::psd_dist(q) < 1e-9);
            }
            assert!(ric.delta0.is_finite());
        }
    }
}
