//! Versioned JSON record of a designed strategy.
//!
//! `stages[k]` holds the stage-(k+1) gain and noise covariance. In imperfect
//! mode they act on the stacked measurements `y_{1:k}` (newest first) and
//! `compression[k]` maps the stacked inner signals to the emitted state
//! estimate. `design` carries the equilibrium summary and the posterior
//! covariance blocks it was built from.

use serde::{Deserialize, Serialize};

use robsig::design::DesignResult;
use robsig::sdp::SolveStatus;
use robsig::synthesis::{ImperfectSignalingStrategy, SignalingStrategy, Strategy};
use robsig::sysmodel::MeasurementMode;

use crate::scenario_file::{to_matrix, to_rows, Rows};
use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub gain: Rows,
    pub noise: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotRecord {
    pub label: String,
    pub status: SolveStatus,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub mu: f64,
    pub winner: String,
    pub per_type: Vec<PivotRecord>,
    pub worst_support: Vec<String>,
    pub s_star: Vec<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyFile {
    pub format_version: u32,
    pub mode: MeasurementMode,
    pub horizon: usize,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression: Option<Vec<Rows>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignRecord>,
}

fn stages_of(s: &SignalingStrategy) -> Vec<StageRecord> {
    s.gains
        .iter()
        .zip(&s.noise)
        .map(|(g, n)| StageRecord {
            gain: to_rows(g),
            noise: to_rows(n),
        })
        .collect()
}

impl StrategyFile {
    pub fn new(strategy: &Strategy, design: Option<&DesignResult>) -> Self {
        let (stages, compression) = match strategy {
            Strategy::Perfect(s) => (stages_of(s), None),
            Strategy::Imperfect(s) => (
                stages_of(&s.inner),
                Some(s.compression.iter().map(to_rows).collect()),
            ),
        };
        StrategyFile {
            format_version: FORMAT_VERSION,
            mode: strategy.mode(),
            horizon: strategy.horizon(),
            stages,
            compression,
            design: design.map(|d| DesignRecord {
                mu: d.mu,
                winner: d.winner.clone(),
                per_type: d
                    .per_type
                    .iter()
                    .map(|p| PivotRecord {
                        label: p.label.clone(),
                        status: p.status,
                        value: p.value,
                    })
                    .collect(),
                worst_support: d.worst_support.clone(),
                s_star: d.s_star.iter().map(to_rows).collect(),
            }),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let f: StrategyFile =
            serde_json::from_str(text).map_err(|e| CliError::Parse(format!("strategy: {e}")))?;
        if f.format_version != FORMAT_VERSION {
            return Err(CliError::Parse(format!(
                "strategy: unsupported format_version {} (expected {FORMAT_VERSION})",
                f.format_version
            )));
        }
        if f.stages.len() != f.horizon {
            return Err(CliError::Parse(format!(
                "strategy: {} stages for horizon {}",
                f.stages.len(),
                f.horizon
            )));
        }
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("strategy serializes")
    }

    pub fn to_strategy(&self) -> Result<Strategy, CliError> {
        let mut gains = Vec::with_capacity(self.stages.len());
        let mut noise = Vec::with_capacity(self.stages.len());
        for (k, st) in self.stages.iter().enumerate() {
            gains.push(to_matrix(&st.gain, &format!("stages[{k}].gain"))?);
            noise.push(to_matrix(&st.noise, &format!("stages[{k}].noise"))?);
        }
        let inner = SignalingStrategy {
            gains,
            noise,
            spectra: Vec::new(),
        };
        match (self.mode, &self.compression) {
            (MeasurementMode::Perfect, None) => Ok(Strategy::Perfect(inner)),
            (MeasurementMode::Imperfect, Some(c)) => {
                if c.len() != self.horizon {
                    return Err(CliError::Parse("compression: one matrix per stage expected".into()));
                }
                let compression = c
                    .iter()
                    .enumerate()
                    .map(|(k, g)| to_matrix(g, &format!("compression[{k}]")))
                    .collect::<Result<_, _>>()?;
                Ok(Strategy::Imperfect(ImperfectSignalingStrategy { inner, compression }))
            }
            (MeasurementMode::Perfect, Some(_)) => {
                Err(CliError::Parse("compression: not allowed in perfect mode".into()))
            }
            (MeasurementMode::Imperfect, None) => {
                Err(CliError::Parse("compression: required in imperfect mode".into()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_version_check() {
        let st = Strategy::Perfect(SignalingStrategy::full_disclosure(&[2, 2]));
        let f = StrategyFile::new(&st, None);
        let back = StrategyFile::parse(&f.to_json()).unwrap();
        assert_eq!(back.to_strategy().unwrap(), st);
        let bumped = f.to_json().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(StrategyFile::parse(&bumped).is_err());
    }
}
