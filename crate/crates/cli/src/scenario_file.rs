//! JSON scenario files.
//!
//! ```json
//! {
//!   "horizon": 10,
//!   "A": [[1, 0], [0, 1]], "B": [[1, 1], [0, 1]], "C": [[1, 1]],
//!   "Sigma1": [[1, 0], [0, 1]], "Sigmaw": [[1, 0], [0, 1]], "Sigmav": [[1]],
//!   "types": [{"name": "o", "Q": [[1, 0], [0, 1]], "R": [[1, 0], [0, 1]], "system": true}],
//!   "design_set": ["o"],
//!   "measurement_mode": "perfect"
//! }
//! ```
//!
//! Matrices are row-major nested arrays. With a `tracking` block the plant is
//! augmented with an exogenous process and `types` must be omitted; each
//! tracking type gives a `selector`, a `sign` (+1 or -1), `R` and `system`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use robsig::sysmodel::{
    augment_tracking, ControlObjective, ExoProcess, MeasurementMode, Scenario, SystemModel, TrackingSpec,
};

use crate::CliError;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeEntry {
    pub name: String,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    #[serde(default)]
    pub system: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingType {
    pub name: String,
    pub selector: Rows,
    pub sign: f64,
    #[serde(rename = "R")]
    pub r: Rows,
    #[serde(default)]
    pub system: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingBlock {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "Sigma1")]
    pub sigma1: Rows,
    #[serde(rename = "Sigmaw")]
    pub sigmaw: Rows,
    #[serde(rename = "Sigmav")]
    pub sigmav: Rows,
    pub types: Vec<TrackingType>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub horizon: usize,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "Sigma1")]
    pub sigma1: Rows,
    #[serde(rename = "Sigmaw")]
    pub sigmaw: Rows,
    #[serde(rename = "Sigmav")]
    pub sigmav: Rows,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub types: Vec<TypeEntry>,
    pub design_set: Vec<String>,
    pub measurement_mode: MeasurementMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingBlock>,
}

/// Dense matrix from row-major rows; `field` names the value in diagnostics.
pub fn to_matrix(rows: &Rows, field: &str) -> Result<DMatrix<f64>, CliError> {
    let nr = rows.len();
    if nr == 0 {
        return Err(CliError::Parse(format!("{field}: matrix has no rows")));
    }
    let nc = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != nc {
            return Err(CliError::Parse(format!(
                "{field}[{i}]: row has {} entries, expected {nc}",
                r.len()
            )));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(CliError::Parse(format!("{field}[{i}][{j}]: not a finite number")));
        }
    }
    if nc == 0 {
        return Err(CliError::Parse(format!("{field}: matrix has no columns")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn invalid(e: robsig::Error) -> CliError {
    CliError::Parse(e.to_string())
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Parse(format!("scenario: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn to_scenario(&self) -> Result<Scenario, CliError> {
        let model = SystemModel::new(
            self.horizon,
            to_matrix(&self.a, "A")?,
            to_matrix(&self.b, "B")?,
            to_matrix(&self.c, "C")?,
            to_matrix(&self.sigma1, "Sigma1")?,
            to_matrix(&self.sigmaw, "Sigmaw")?,
            to_matrix(&self.sigmav, "Sigmav")?,
        )
        .map_err(invalid)?;
        match &self.tracking {
            None => {
                let types = self
                    .types
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        Ok(ControlObjective {
                            label: t.name.clone(),
                            q: to_matrix(&t.q, &format!("types[{i}].Q"))?,
                            r: to_matrix(&t.r, &format!("types[{i}].R"))?,
                            is_system_type: t.system,
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                Scenario::new(model, types, self.design_set.clone(), self.measurement_mode).map_err(invalid)
            }
            Some(tr) => {
                if !self.types.is_empty() {
                    return Err(CliError::Parse(
                        "types: must be omitted when a tracking block is given".into(),
                    ));
                }
                let exo = ExoProcess {
                    a: to_matrix(&tr.a, "tracking.A")?,
                    sigma1: to_matrix(&tr.sigma1, "tracking.Sigma1")?,
                    sigmaw: to_matrix(&tr.sigmaw, "tracking.Sigmaw")?,
                    c: to_matrix(&tr.c, "tracking.C")?,
                    sigmav: to_matrix(&tr.sigmav, "tracking.Sigmav")?,
                };
                let specs = tr
                    .types
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        Ok(TrackingSpec {
                            label: t.name.clone(),
                            selector: to_matrix(&t.selector, &format!("tracking.types[{i}].selector"))?,
                            sign: t.sign,
                            r: to_matrix(&t.r, &format!("tracking.types[{i}].R"))?,
                            system: t.system,
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                augment_tracking(&model, &exo, &specs, self.design_set.clone(), self.measurement_mode)
                    .map_err(invalid)
            }
        }
    }

    /// Flat (already augmented) file for `s`.
    pub fn from_scenario(s: &Scenario) -> Self {
        let m = &s.model;
        ScenarioFile {
            horizon: m.horizon,
            a: to_rows(&m.a),
            b: to_rows(&m.b),
            c: to_rows(&m.c),
            sigma1: to_rows(&m.sigma1),
            sigmaw: to_rows(&m.sigmaw),
            sigmav: to_rows(&m.sigmav),
            types: s
                .types
                .iter()
                .map(|t| TypeEntry {
                    name: t.label.clone(),
                    q: to_rows(&t.q),
                    r: to_rows(&t.r),
                    system: t.is_system_type,
                })
                .collect(),
            design_set: s.design_set.clone(),
            measurement_mode: s.measurement_mode,
            tracking: None,
        }
    }
}
