//! Linear-plus-noise strategies that realize a target posterior-covariance chain.
//!
//! At stage `k` the sensor sends `s_k = L_k' z_k + noise` with noise covariance
//! `Theta_k`, where `z_k` is the chain variable (the control-free state, or the
//! stacked control-free measurements). [`synthesize`] picks `(L_k, Theta_k)` so
//! that the covariance of `E{z_k | s_1..s_k}` equals the target `S_k`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lqr::{Chain, MeasurementStats};
use crate::matkit::{eig_desc, pinv_sym, project_psd, psd_dist, symmetrize, RANK_TOL};
use crate::sysmodel::{control_free_covariances, stage_slot, SystemModel};

/// Relative size of chain violations that are projected away rather than rejected.
pub const PROJECTION_TOL: f64 = 1e-7;
/// Slack allowed on the normalized eigenvalues before they are clamped to `[0, 1]`.
pub const CLAMP_TOL: f64 = 1e-8;

/// Eigen-data of one synthesized stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSpectrum {
    /// Eigenvalues of the normalized increment, in `[0, 1]`.
    pub lambda: DVector<f64>,
    /// Gain scale per eigen-direction.
    pub lambda_o: DVector<f64>,
    /// Noise variance per eigen-direction.
    pub theta_sq: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalingStrategy {
    /// `L_k`, square, acting on the stage-k chain variable.
    pub gains: Vec<DMatrix<f64>>,
    /// `Theta_k`, PSD.
    pub noise: Vec<DMatrix<f64>>,
    /// Empty for strategies not built by [`synthesize`].
    pub spectra: Vec<StageSpectrum>,
}

impl SignalingStrategy {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// `S_k = O` everywhere.
    pub fn silent(dims: &[usize]) -> Self {
        SignalingStrategy {
            gains: dims.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
            noise: dims.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
            spectra: Vec::new(),
        }
    }

    /// Noise-free identity encoding.
    pub fn full_disclosure(dims: &[usize]) -> Self {
        SignalingStrategy {
            gains: dims.iter().map(|&d| DMatrix::identity(d, d)).collect(),
            noise: dims.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
            spectra: Vec::new(),
        }
    }
}

/// Two-layer strategy for noisy measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct ImperfectSignalingStrategy {
    /// Acts on the stacked measurements `y_{1:k}` (newest first).
    pub inner: SignalingStrategy,
    /// `G_k`, `m x sum_{j<=k} nj`: maps the stacked inner signals (newest
    /// first) to the emitted `E{x^o_k | inner signals}`.
    pub compression: Vec<DMatrix<f64>>,
}

/// A designed strategy in either measurement mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Perfect(SignalingStrategy),
    Imperfect(ImperfectSignalingStrategy),
}

impl Strategy {
    pub fn mode(&self) -> crate::sysmodel::MeasurementMode {
        match self {
            Strategy::Perfect(_) => crate::sysmodel::MeasurementMode::Perfect,
            Strategy::Imperfect(_) => crate::sysmodel::MeasurementMode::Imperfect,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Strategy::Perfect(s) => s.horizon(),
            Strategy::Imperfect(s) => s.inner.horizon(),
        }
    }
}

/// Synthesizes the strategy for `s` in the scenario's measurement mode.
pub fn synthesize_for(scenario: &crate::sysmodel::Scenario, s: &[DMatrix<f64>]) -> Result<Strategy> {
    use crate::sysmodel::MeasurementMode;
    let model = &scenario.model;
    match scenario.measurement_mode {
        MeasurementMode::Perfect => {
            let chain = Chain::perfect(&control_free_covariances(model), &model.a);
            synthesize(s, &chain).map(Strategy::Perfect)
        }
        MeasurementMode::Imperfect => {
            let ms = crate::lqr::measurement_stats(model);
            synthesize_imperfect(s, &ms).map(Strategy::Imperfect)
        }
    }
}

/// Orthonormal basis of the numerical range of a PSD matrix and its eigenvalues.
fn range_basis(p: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let e = eig_desc(p);
    let cut = RANK_TOL * e.values.get(0).copied().unwrap_or(0.0).max(1.0);
    let t = e.values.iter().take_while(|&&v| v > cut).count();
    (e.vectors.columns(0, t).into_owned(), e.values.rows(0, t).into_owned())
}

/// `diag(v)^(-1/2) M diag(v)^(-1/2)`.
fn normalize(m: &DMatrix<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let s = v.map(|x| 1.0 / x.sqrt());
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * s[i] * s[j])
}

/// Moves `s` onto the chain when it violates it by at most `tol` (relative).
///
/// Stage by stage, the increment over the propagated previous block is
/// clipped to the PSD cone, restricted to the range of the innovation
/// covariance, and shrunk by the least factor that restores the upper bound.
pub fn project(s: &[DMatrix<f64>], chain: &Chain, tol: f64) -> Result<Vec<DMatrix<f64>>> {
    check_dims(s, chain)?;
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(s.len());
    for k in 1..=chain.horizon() {
        let prev = chain.propagate(k, out.last());
        let upper = &chain.upper[k - 1];
        let p = symmetrize(&(upper - &prev));
        let d = symmetrize(&(&s[k - 1] - &prev));
        let scale = upper.norm().max(1.0);
        let below = psd_dist(&d);
        let above = psd_dist(&(&p - &d));
        if below > tol * scale || above > tol * scale {
            return Err(Error::InfeasibleTarget(format!(
                "stage {k}: chain violated by {:.3e} (allowed {:.3e})",
                below.max(above),
                tol * scale
            )));
        }
        let (u1, lb) = range_basis(&p);
        if u1.ncols() == 0 {
            out.push(prev);
            continue;
        }
        let m = symmetrize(&(u1.transpose() * project_psd(&d) * &u1));
        let top = eig_desc(&normalize(&m, &lb)).values[0];
        let c = if top > 1.0 { 1.0 / top } else { 1.0 };
        out.push(symmetrize(&(prev + &u1 * m * c * u1.transpose())));
    }
    Ok(out)
}

fn check_dims(s: &[DMatrix<f64>], chain: &Chain) -> Result<()> {
    if s.len() != chain.horizon() {
        return Err(Error::InvalidInput(format!(
            "expected {} blocks, got {}",
            chain.horizon(),
            s.len()
        )));
    }
    for (k, (sk, u)) in s.iter().zip(&chain.upper).enumerate() {
        if sk.shape() != u.shape() {
            return Err(Error::InvalidInput(format!(
                "block {} is {}x{}, expected {}x{}",
                k + 1,
                sk.nrows(),
                sk.ncols(),
                u.nrows(),
                u.ncols()
            )));
        }
    }
    Ok(())
}

fn synthesize_stage(p: &DMatrix<f64>, d: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, StageSpectrum)> {
    let dim = p.nrows();
    let (u1, lb) = range_basis(p);
    let t = u1.ncols();
    let mut gain = DMatrix::zeros(dim, dim);
    let mut noise = DMatrix::zeros(dim, dim);
    if t == 0 {
        let empty = DVector::zeros(0);
        return Ok((gain, noise, StageSpectrum { lambda: empty.clone(), lambda_o: empty.clone(), theta_sq: empty }));
    }
    let m = symmetrize(&(u1.transpose() * d * &u1));
    let e = eig_desc(&normalize(&m, &lb));
    let mut lambda = e.values.clone();
    for v in lambda.iter_mut() {
        if *v < -CLAMP_TOL || *v > 1.0 + CLAMP_TOL {
            return Err(Error::InfeasibleTarget(format!(
                "stage {k}: normalized eigenvalue {v:.3e} outside [0, 1]"
            )));
        }
        *v = v.clamp(0.0, 1.0);
    }
    let lambda_o = lambda.clone();
    let theta_sq = lambda.map(|l| l * (1.0 - l));
    let inv_sqrt = lb.map(|x| 1.0 / x.sqrt());
    let g = DMatrix::from_diagonal(&inv_sqrt) * &e.vectors * DMatrix::from_diagonal(&lambda_o);
    gain.columns_mut(0, t).copy_from(&(u1 * g));
    for i in 0..t {
        noise[(i, i)] = theta_sq[i];
    }
    Ok((gain, noise, StageSpectrum { lambda, lambda_o, theta_sq }))
}

/// Strategy whose posterior covariances reproduce `s` (after projection onto the chain).
pub fn synthesize(s: &[DMatrix<f64>], chain: &Chain) -> Result<SignalingStrategy> {
    let s = project(s, chain, PROJECTION_TOL)?;
    let mut gains = Vec::with_capacity(s.len());
    let mut noise = Vec::with_capacity(s.len());
    let mut spectra = Vec::with_capacity(s.len());
    for k in 1..=chain.horizon() {
        let prev = chain.propagate(k, if k > 1 { Some(&s[k - 2]) } else { None });
        let p = symmetrize(&(&chain.upper[k - 1] - &prev));
        let d = symmetrize(&(&s[k - 1] - &prev));
        let (g, n, sp) = synthesize_stage(&p, &d, k)?;
        gains.push(g);
        noise.push(n);
        spectra.push(sp);
    }
    Ok(SignalingStrategy { gains, noise, spectra })
}

/// Posterior covariances `H_k` induced by `strategy` on `chain`.
pub fn posterior_recursion(strategy: &SignalingStrategy, chain: &Chain) -> Vec<DMatrix<f64>> {
    let mut h: Vec<DMatrix<f64>> = Vec::with_capacity(strategy.horizon());
    for k in 1..=strategy.horizon() {
        let prev = chain.propagate(k, h.last());
        let p = symmetrize(&(&chain.upper[k - 1] - &prev));
        let l = &strategy.gains[k - 1];
        let pl = &p * l;
        let inner = symmetrize(&(l.transpose() * &pl + &strategy.noise[k - 1]));
        h.push(symmetrize(&(prev + &pl * pinv_sym(&inner, RANK_TOL) * pl.transpose())));
    }
    h
}

/// Joint second-order statistics of the control-free state and the inner signals.
#[derive(Debug, Clone)]
pub struct InnerSignalStats {
    /// Offsets of `s~_j` inside the stack `s~_{1:k}` are given by [`stack_offset`].
    /// `cov` is the covariance of the full stack `s~_{1:horizon}`.
    pub cov: DMatrix<f64>,
    /// `E{x^o_k s~_{1:horizon}'}` for each k.
    pub cross: Vec<DMatrix<f64>>,
    pub n: usize,
    pub horizon: usize,
}

/// Row offset of `s~_j` (dimension `n j`) in the stack `s~_{1:k}`, newest first.
pub fn stack_offset(j: usize, k: usize, n: usize) -> usize {
    debug_assert!(j >= 1 && j <= k);
    (j + 1..=k).map(|i| n * i).sum()
}

/// Dimension of the stack `s~_{1:k}`.
pub fn stack_len(k: usize, n: usize) -> usize {
    n * k * (k + 1) / 2
}

pub fn inner_signal_stats(inner: &SignalingStrategy, model: &SystemModel) -> InnerSignalStats {
    let stats = control_free_covariances(model);
    let kappa = model.horizon;
    let (m, n) = (model.m(), model.n());
    let c = &model.c;
    // Joint covariance of y_{1:kappa} (newest first) and E{x_k y_{1:kappa}'}.
    let mut yfull = DMatrix::zeros(n * kappa, n * kappa);
    for i in 1..=kappa {
        for j in 1..=kappa {
            let mut blk = c * stats.cross(i, j) * c.transpose();
            if i == j {
                blk += &model.sigmav;
            }
            yfull
                .view_mut((stage_slot(i, kappa) * n, stage_slot(j, kappa) * n), (n, n))
                .copy_from(&blk);
        }
    }
    // y_{1:j} is the trailing n*j rows of y_{1:kappa}.
    let sel = |j: usize| (n * (kappa - j), n * j);
    let total = stack_len(kappa, n);
    let mut cov = DMatrix::zeros(total, total);
    for i in 1..=kappa {
        let (oi, li) = sel(i);
        let ri = stack_offset(i, kappa, n);
        for j in 1..=kappa {
            let (oj, lj) = sel(j);
            let rj = stack_offset(j, kappa, n);
            let mut blk = inner.gains[i - 1].transpose()
                * yfull.view((oi, oj), (li, lj))
                * &inner.gains[j - 1];
            if i == j {
                blk += &inner.noise[i - 1];
            }
            cov.view_mut((ri, rj), (li, lj)).copy_from(&blk);
        }
    }
    let cross = (1..=kappa)
        .map(|k| {
            let mut exy = DMatrix::zeros(m, n * kappa);
            for l in 1..=kappa {
                exy.view_mut((0, stage_slot(l, kappa) * n), (m, n))
                    .copy_from(&(stats.cross(k, l) * c.transpose()));
            }
            let mut out = DMatrix::zeros(m, total);
            for j in 1..=kappa {
                let (oj, lj) = sel(j);
                out.view_mut((0, stack_offset(j, kappa, n)), (m, lj))
                    .copy_from(&(exy.columns(oj, lj) * &inner.gains[j - 1]));
            }
            out
        })
        .collect();
    InnerSignalStats {
        cov: symmetrize(&cov),
        cross,
        n,
        horizon: kappa,
    }
}

/// Filter gains `P_k L_k (L_k' P_k L_k + Theta_k)^+` of the posterior
/// recursion, with `P_k = upper_k - maps_k H_{k-1} maps_k'`.
pub fn filter_gains(strategy: &SignalingStrategy, chain: &Chain) -> Vec<DMatrix<f64>> {
    let mut h: Option<DMatrix<f64>> = None;
    let mut out = Vec::with_capacity(strategy.horizon());
    for k in 1..=strategy.horizon() {
        let prev = chain.propagate(k, h.as_ref());
        let p = symmetrize(&(&chain.upper[k - 1] - &prev));
        let l = &strategy.gains[k - 1];
        let pl = &p * l;
        let inner = symmetrize(&(l.transpose() * &pl + &strategy.noise[k - 1]));
        let gain = &pl * pinv_sym(&inner, RANK_TOL);
        h = Some(symmetrize(&(prev + &gain * pl.transpose())));
        out.push(gain);
    }
    out
}

/// `G_k = E{x^o_k s~_{1:k}'} E{s~_{1:k} s~_{1:k}'}^+`, evaluated through the
/// measurement-space filter: `E{x^o_k | s~} = D_k E{y_{1:k} | s~}`.
pub fn compression_gains(inner: &SignalingStrategy, mstats: &MeasurementStats) -> Vec<DMatrix<f64>> {
    let chain = Chain::imperfect(mstats);
    let gains = filter_gains(inner, &chain);
    let mut out = Vec::with_capacity(gains.len());
    // f maps s~_{1:k} to E{y_{1:k} | s~_{1:k}}.
    let mut f: Option<DMatrix<f64>> = None;
    for (k, kk) in gains.iter().enumerate() {
        let next = match &f {
            None => kk.clone(),
            Some(prev) => {
                let d = kk.nrows();
                let carry = (DMatrix::identity(d, d) - kk * inner.gains[k].transpose())
                    * &chain.maps[k]
                    * prev;
                let mut m = DMatrix::zeros(d, kk.ncols() + carry.ncols());
                m.columns_mut(0, kk.ncols()).copy_from(kk);
                m.columns_mut(kk.ncols(), carry.ncols()).copy_from(&carry);
                m
            }
        };
        out.push(&mstats.d[k] * &next);
        f = Some(next);
    }
    out
}

/// Two-layer strategy: an inner strategy on the measurement chain, then
/// compression of the inner signals to the state posterior.
pub fn synthesize_imperfect(s: &[DMatrix<f64>], mstats: &MeasurementStats) -> Result<ImperfectSignalingStrategy> {
    let inner = synthesize(s, &Chain::imperfect(mstats))?;
    let compression = compression_gains(&inner, mstats);
    Ok(ImperfectSignalingStrategy { inner, compression })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::control_free_covariances;

    fn scalar_chain(kappa: usize) -> Chain {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let model = SystemModel::new(kappa, one(0.9), one(1.), one(1.), one(1.), one(0.5), one(1.)).unwrap();
        Chain::perfect(&control_free_covariances(&model), &model.a)
    }

    #[test]
    fn silent_target_gives_zero_strategy() {
        let chain = scalar_chain(3);
        let s: Vec<_> = (0..3).map(|_| DMatrix::zeros(1, 1)).collect();
        let st = synthesize(&s, &chain).unwrap();
        assert!(st.gains.iter().chain(&st.noise).all(|g| g.norm() == 0.0));
        assert!(posterior_recursion(&st, &chain).iter().all(|h| h.norm() < 1e-14));
    }

    #[test]
    fn full_target_gives_noiseless_strategy() {
        let chain = scalar_chain(3);
        let st = synthesize(&chain.upper, &chain).unwrap();
        assert!(st.noise.iter().all(|n| n.norm() < 1e-12));
        for sp in &st.spectra {
            assert!((sp.lambda[0] - 1.0).abs() < 1e-12);
        }
        let h = posterior_recursion(&st, &chain);
        for (hk, sk) in h.iter().zip(&chain.upper) {
            assert!((hk - sk).norm() < 1e-10);
        }
    }

    #[test]
    fn scalar_midpoint_roundtrip() {
        // S_k halfway between the propagated previous block and Sigma_k.
        let chain = scalar_chain(4);
        let mut s: Vec<DMatrix<f64>> = Vec::new();
        for k in 1..=4 {
            let lo = chain.propagate(k, s.last());
            s.push((&lo + &chain.upper[k - 1]) * 0.5);
        }
        let st = synthesize(&s, &chain).unwrap();
        for sp in &st.spectra {
            assert!((sp.lambda[0] - 0.5).abs() < 1e-12);
            assert!((sp.theta_sq[0] - 0.25).abs() < 1e-12);
        }
        let h = posterior_recursion(&st, &chain);
        for (hk, sk) in h.iter().zip(&s) {
            assert!((hk - sk).norm() < 1e-12);
        }
    }

    #[test]
    fn outside_chain_is_rejected() {
        let chain = scalar_chain(2);
        let mut s = chain.upper.clone();
        s[1][(0, 0)] += 1e-3;
        assert!(matches!(synthesize(&s, &chain), Err(Error::InfeasibleTarget(_))));
    }

    #[test]
    fn tiny_violation_is_projected() {
        let chain = scalar_chain(2);
        let mut s = chain.upper.clone();
        s[1][(0, 0)] += 1e-9;
        s[0][(0, 0)] = -1e-9;
        let p = project(&s, &chain, PROJECTION_TOL).unwrap();
        assert!(chain.violation(&p) < 1e-14);
    }

    #[test]
    fn stack_offsets() {
        // s~_{1:3} with n = 2: [s~_3 (6); s~_2 (4); s~_1 (2)]
        assert_eq!(stack_len(3, 2), 12);
        assert_eq!(stack_offset(3, 3, 2), 0);
        assert_eq!(stack_offset(2, 3, 2), 6);
        assert_eq!(stack_offset(1, 3, 2), 10);
    }
}
