mod common;

use common::*;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use robsig::design::{design, design_with, DesignOptions};
use robsig::evaluate::simulate;
use robsig::synthesis::{synthesize_for, SignalingStrategy, Strategy};
use robsig::sysmodel::{MeasurementMode, Scenario, SystemModel};

/// Random scenario whose sensor reads the state exactly.
pub fn exact_sensor_scenario(rng: &mut ChaCha8Rng, attackers: usize) -> Scenario {
    let m = rng.random_range(1..=2);
    let horizon = rng.random_range(1..=4);
    let base = random_model(rng, &Dims { m, r: 1, n: m, horizon });
    let model = SystemModel::new(
        horizon,
        base.a,
        base.b,
        DMatrix::identity(m, m),
        base.sigma1,
        base.sigmaw,
        DMatrix::zeros(m, m),
    )
    .unwrap();
    let types = random_types(rng, m, 1, attackers);
    let labels = types.iter().map(|t| t.label.clone()).collect();
    Scenario::new(model, types, labels, MeasurementMode::Imperfect).unwrap()
}

#[test]
fn exact_sensor_imperfect_matches_perfect() {
    let mut r = rng(101);
    for case in 0..4 {
        let sc = exact_sensor_scenario(&mut r, 2);
        let noisy = design(&sc).unwrap().mu;
        let exact = design(&sc.with_mode(MeasurementMode::Perfect)).unwrap().mu;
        assert!((noisy - exact).abs() <= 1e-4 * exact.abs().max(1.0), "case {case}: {noisy} vs {exact}");
    }
}

#[test]
fn mu_grows_along_nested_design_sets() {
    let mut r = rng(202);
    for case in 0..4 {
        let d = Dims { m: r.random_range(1..=3), r: 1, n: 1, horizon: r.random_range(1..=4) };
        let sc = random_scenario(&mut r, &d, 3, MeasurementMode::Perfect);
        let labels: Vec<String> = sc.types.iter().map(|t| t.label.clone()).collect();
        let mut last = f64::NEG_INFINITY;
        for n in 1..=labels.len() {
            let mu = design(&sc.with_design_set(labels[..n].to_vec()).unwrap()).unwrap().mu;
            assert!(mu >= last - 1e-6 * last.abs().max(1.0), "case {case}: {mu} after {last}");
            last = mu;
        }
    }
}

#[test]
fn system_type_alone_gets_the_lqg_optimum() {
    let mut r = rng(303);
    for case in 0..6 {
        let d = Dims { m: r.random_range(1..=3), r: r.random_range(1..=2), n: 1, horizon: r.random_range(1..=6) };
        let sc = random_scenario(&mut r, &d, 1, MeasurementMode::Perfect)
            .with_design_set(vec!["o".into()])
            .unwrap();
        let mu = design(&sc).unwrap().mu;
        let o = sc.system_type();
        let want = lqg_full_information_cost(&sc.model, &o.q, &o.r);
        // a converged solve certifies |pobj - dobj| <= gap * (1 + |pobj| + |dobj|)
        let bound = 1e-6 * (1.0 + 2.0 * want.abs());
        assert!(mu >= want - 1e-9 * want.abs() && mu - want <= bound, "case {case}: {mu} vs {want}");
    }
}

#[test]
fn designed_strategy_cost_matches_simulation() {
    let mut r = rng(404);
    let d = Dims { m: 2, r: 1, n: 1, horizon: 3 };
    for mode in [MeasurementMode::Perfect, MeasurementMode::Imperfect] {
        let sc = random_scenario(&mut r, &d, 2, mode);
        let res = design_with(&sc, &DesignOptions::default()).unwrap();
        let st = synthesize_for(&sc, &res.s_star).unwrap();
        let (costs, _) = robsig::lqr::design_inputs(&sc).unwrap();
        for (t, c) in sc.types.iter().zip(&costs) {
            let rep = simulate(&sc, &st, &t.label, 20_000, 17).unwrap();
            let want = c.value(&res.s_star);
            let z = (rep.empirical_mean - want) / rep.standard_error;
            assert!(z.abs() <= 4.0, "{mode:?} {}: {} vs {want} (z = {z:.2})", t.label, rep.empirical_mean);
        }
    }
}

#[test]
fn silent_and_full_strategies_bracket_the_system_cost() {
    // the system's own cost can only improve when its controller learns more
    let mut r = rng(505);
    let d = Dims { m: 2, r: 1, n: 1, horizon: 4 };
    let sc = random_scenario(&mut r, &d, 1, MeasurementMode::Perfect);
    let dims = vec![2; 4];
    let silent = simulate(&sc, &Strategy::Perfect(SignalingStrategy::silent(&dims)), "o", 20_000, 1).unwrap();
    let full = simulate(&sc, &Strategy::Perfect(SignalingStrategy::full_disclosure(&dims)), "o", 20_000, 1).unwrap();
    let o = sc.system_type();
    let lqg = lqg_full_information_cost(&sc.model, &o.q, &o.r);
    assert!((full.empirical_mean - lqg).abs() <= 4.0 * full.standard_error);
    assert!(silent.empirical_mean > full.empirical_mean);
}
