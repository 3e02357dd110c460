//! Plant, sensor and type-set data model plus control-free statistics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matkit::{block_diag, mat_pow, min_eig, psd_dist, symmetrize};

const PSD_TOL: f64 = 1e-9;

/// Position of stage `k` (1-based) inside a stacked `horizon`-stage vector.
///
/// Stacks run from the newest stage at the top-left to stage 1 at the
/// bottom-right. Every stacked assembler goes through this helper.
pub fn stage_slot(k: usize, horizon: usize) -> usize {
    debug_assert!(k >= 1 && k <= horizon);
    horizon - k
}

/// Gauss-Markov plant `x+ = A x + B u + w` with sensor `y = C x + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub horizon: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sigma1: DMatrix<f64>,
    pub sigmaw: DMatrix<f64>,
    pub sigmav: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(
        horizon: usize,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        sigma1: DMatrix<f64>,
        sigmaw: DMatrix<f64>,
        sigmav: DMatrix<f64>,
    ) -> Result<Self> {
        let m = SystemModel {
            horizon,
            a,
            b,
            c,
            sigma1: symmetrize(&sigma1),
            sigmaw: symmetrize(&sigmaw),
            sigmav: symmetrize(&sigmav),
        };
        let issues = m.diagnostics();
        if issues.is_empty() {
            Ok(m)
        } else {
            Err(Error::InvalidInput(issues.join("; ")))
        }
    }

    /// State dimension.
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    /// Control dimension.
    pub fn r(&self) -> usize {
        self.b.ncols()
    }

    /// Measurement dimension.
    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let m = self.a.nrows();
        if self.horizon == 0 {
            out.push("horizon must be positive".into());
        }
        if !self.a.is_square() {
            out.push(format!("A must be square, got {}x{}", self.a.nrows(), self.a.ncols()));
        }
        if self.b.nrows() != m {
            out.push(format!("B must have {m} rows, got {}", self.b.nrows()));
        }
        if self.c.ncols() != m {
            out.push(format!("C must have {m} columns, got {}", self.c.ncols()));
        }
        for (name, s, d) in [
            ("Sigma1", &self.sigma1, m),
            ("Sigmaw", &self.sigmaw, m),
            ("Sigmav", &self.sigmav, self.c.nrows()),
        ] {
            if s.shape() != (d, d) {
                out.push(format!("{name} must be {d}x{d}, got {}x{}", s.nrows(), s.ncols()));
            } else if psd_dist(s) > PSD_TOL * s.norm().max(1.0) {
                out.push(format!("{name} not positive semidefinite"));
            }
        }
        let all = [&self.a, &self.b, &self.c, &self.sigma1, &self.sigmaw, &self.sigmav];
        if all.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
            out.push("non-finite matrix entry".into());
        }
        out
    }
}

/// Quadratic objective of one type.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlObjective {
    pub label: String,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub is_system_type: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    Perfect,
    Imperfect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: SystemModel,
    pub types: Vec<ControlObjective>,
    pub design_set: Vec<String>,
    pub measurement_mode: MeasurementMode,
}

impl Scenario {
    pub fn new(
        model: SystemModel,
        types: Vec<ControlObjective>,
        design_set: Vec<String>,
        measurement_mode: MeasurementMode,
    ) -> Result<Self> {
        let s = Scenario {
            model,
            types,
            design_set,
            measurement_mode,
        };
        let issues = validate_scenario(&s);
        if issues.is_empty() {
            Ok(s)
        } else {
            Err(Error::InvalidInput(issues.join("; ")))
        }
    }

    pub fn system_type(&self) -> &ControlObjective {
        self.types
            .iter()
            .find(|t| t.is_system_type)
            .expect("validated scenario has a system type")
    }

    pub fn type_by_label(&self, label: &str) -> Option<&ControlObjective> {
        self.types.iter().find(|t| t.label == label)
    }

    /// Same scenario with a different design set (validated).
    pub fn with_design_set(&self, design_set: Vec<String>) -> Result<Self> {
        Scenario::new(
            self.model.clone(),
            self.types.clone(),
            design_set,
            self.measurement_mode,
        )
    }

    pub fn with_mode(&self, mode: MeasurementMode) -> Self {
        Scenario {
            measurement_mode: mode,
            ..self.clone()
        }
    }
}

/// Lists violated invariants; empty iff the scenario is valid.
pub fn validate_scenario(s: &Scenario) -> Vec<String> {
    let mut out = s.model.diagnostics();
    let m = s.model.a.nrows();
    let r = s.model.b.ncols();
    let systems = s.types.iter().filter(|t| t.is_system_type).count();
    if systems != 1 {
        out.push(format!("expected exactly one system type, found {systems}"));
    }
    for (i, t) in s.types.iter().enumerate() {
        if s.types[..i].iter().any(|u| u.label == t.label) {
            out.push(format!("duplicate label {}", t.label));
        }
        if t.q.shape() != (m, m) {
            out.push(format!("{}: Q must be {m}x{m}", t.label));
        } else if psd_dist(&t.q) > PSD_TOL * t.q.norm().max(1.0) {
            out.push(format!("{}: Q not positive semidefinite", t.label));
        }
        if t.r.shape() != (r, r) {
            out.push(format!("{}: R must be {r}x{r}", t.label));
        } else if !(min_eig(&t.r) > 0.0) {
            out.push(format!("{}: R not positive definite", t.label));
        }
    }
    if s.design_set.is_empty() {
        out.push("design set is empty".into());
    }
    for (i, d) in s.design_set.iter().enumerate() {
        if !s.types.iter().any(|t| &t.label == d) {
            out.push(format!("design set member {d} is not a declared type"));
        }
        if s.design_set[..i].contains(d) {
            out.push(format!("design set lists {d} twice"));
        }
    }
    out
}

/// Covariances of the control-free state `x^o`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlFreeStats {
    /// `Sigma^o_k` for k = 1..horizon (index k-1).
    pub sigma: Vec<DMatrix<f64>>,
    a: DMatrix<f64>,
}

impl ControlFreeStats {
    pub fn horizon(&self) -> usize {
        self.sigma.len()
    }

    /// `E{x^o_k (x^o_l)'}` for 1-based stages.
    pub fn cross(&self, k: usize, l: usize) -> DMatrix<f64> {
        if k >= l {
            mat_pow(&self.a, k - l) * &self.sigma[l - 1]
        } else {
            self.cross(l, k).transpose()
        }
    }

    /// Joint covariance of the stacked `x^o_{1:horizon}`, newest stage first.
    pub fn full(&self) -> DMatrix<f64> {
        let kappa = self.horizon();
        let m = self.a.nrows();
        let mut out = DMatrix::zeros(kappa * m, kappa * m);
        for k in 1..=kappa {
            for l in 1..=kappa {
                let (i, j) = (stage_slot(k, kappa), stage_slot(l, kappa));
                out.view_mut((i * m, j * m), (m, m)).copy_from(&self.cross(k, l));
            }
        }
        out
    }
}

/// `Sigma^o_1 = Sigma1`, `Sigma^o_{k+1} = A Sigma^o_k A' + Sigmaw`.
pub fn control_free_covariances(model: &SystemModel) -> ControlFreeStats {
    let mut sigma = Vec::with_capacity(model.horizon);
    sigma.push(model.sigma1.clone());
    for k in 1..model.horizon {
        let next = &model.a * &sigma[k - 1] * model.a.transpose() + &model.sigmaw;
        sigma.push(symmetrize(&next));
    }
    ControlFreeStats {
        sigma,
        a: model.a.clone(),
    }
}

/// Exogenous Gauss-Markov process `z` that types try to track.
#[derive(Debug, Clone, PartialEq)]
pub struct ExoProcess {
    pub a: DMatrix<f64>,
    pub sigma1: DMatrix<f64>,
    pub sigmaw: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sigmav: DMatrix<f64>,
}

/// Objective `|P x_k - (-sign) P z_k|^2 + |u|_R^2` on the augmented state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSpec {
    pub label: String,
    pub selector: DMatrix<f64>,
    pub sign: f64,
    pub r: DMatrix<f64>,
    pub system: bool,
}

/// `[P, sign P]' [P, sign P]`.
pub fn tracking_weight(selector: &DMatrix<f64>, sign: f64) -> DMatrix<f64> {
    let row = nalgebra::stack![selector, selector * sign];
    row.transpose() * row
}

/// Stacks the plant and an exogenous process into one scenario.
pub fn augment_tracking(
    model: &SystemModel,
    exo: &ExoProcess,
    specs: &[TrackingSpec],
    design_set: Vec<String>,
    mode: MeasurementMode,
) -> Result<Scenario> {
    let mx = model.m();
    let mz = exo.a.nrows();
    if mz != mx {
        return Err(Error::InvalidInput(format!(
            "exogenous state dimension {mz} must equal plant dimension {mx}"
        )));
    }
    let nz = exo.c.nrows();
    let shapes_ok = exo.a.is_square()
        && exo.sigma1.shape() == (mz, mz)
        && exo.sigmaw.shape() == (mz, mz)
        && exo.c.ncols() == mz
        && exo.sigmav.shape() == (nz, nz);
    if !shapes_ok {
        return Err(Error::InvalidInput("exogenous process matrices are inconsistent".into()));
    }
    let a = block_diag(&[&model.a, &exo.a]);
    let b = nalgebra::stack![&model.b; DMatrix::<f64>::zeros(mz, model.r())];
    let c = block_diag(&[&model.c, &exo.c]);
    let aug = SystemModel::new(
        model.horizon,
        a,
        b,
        c,
        block_diag(&[&model.sigma1, &exo.sigma1]),
        block_diag(&[&model.sigmaw, &exo.sigmaw]),
        block_diag(&[&model.sigmav, &exo.sigmav]),
    )?;
    let mut types = Vec::with_capacity(specs.len());
    for s in specs {
        if s.selector.ncols() != mx {
            return Err(Error::InvalidInput(format!(
                "{}: selector must have {mx} columns, got {}",
                s.label,
                s.selector.ncols()
            )));
        }
        if s.sign.abs() != 1.0 {
            return Err(Error::InvalidInput(format!("{}: sign must be +1 or -1", s.label)));
        }
        types.push(ControlObjective {
            label: s.label.clone(),
            q: tracking_weight(&s.selector, s.sign),
            r: s.r.clone(),
            is_system_type: s.system,
        });
    }
    Scenario::new(aug, types, design_set, mode)
}

/// Type labels of the bundled tracking benchmark, in declaration order.
pub const BENCHMARK_LABELS: [&str; 4] = ["omega_o", "omega_a", "omega_b", "omega_c"];

/// The bundled two-dimensional tracking benchmark: horizon 10, identity
/// dynamics, a sheared input matrix, and an exogenous reference tracked with
/// the opposite sign by the legitimate controller and by three attackers.
pub fn tracking_benchmark(mode: MeasurementMode) -> Scenario {
    let i2 = DMatrix::<f64>::identity(2, 2);
    let plant = SystemModel::new(
        10,
        i2.clone(),
        DMatrix::from_row_slice(2, 2, &[1., 1., 0., 1.]),
        DMatrix::from_row_slice(1, 2, &[1., 1.]),
        i2.clone(),
        i2.clone(),
        DMatrix::identity(1, 1),
    )
    .expect("benchmark plant");
    let exo = ExoProcess {
        a: i2.clone(),
        sigma1: i2.clone(),
        sigmaw: i2.clone(),
        c: i2.clone(),
        sigmav: i2.clone(),
    };
    let e1 = DMatrix::from_row_slice(1, 2, &[1., 0.]);
    let e2 = DMatrix::from_row_slice(1, 2, &[0., 1.]);
    let spec = |label: &str, sel: &DMatrix<f64>, sign: f64, system: bool| TrackingSpec {
        label: label.into(),
        selector: sel.clone(),
        sign,
        r: i2.clone(),
        system,
    };
    let specs = [
        spec("omega_o", &i2, -1.0, true),
        spec("omega_a", &e1, 1.0, false),
        spec("omega_b", &e2, 1.0, false),
        spec("omega_c", &i2, 1.0, false),
    ];
    let design = BENCHMARK_LABELS.iter().map(|s| s.to_string()).collect();
    augment_tracking(&plant, &exo, &specs, design, mode).expect("benchmark scenario")
}
