//! Scenario files and built-in presets.
//!
//! A scenario is one JSON document. Parsing reports the JSON path of the
//! first offending field; a semantic pass then checks cross references.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocation::{UtilitySpec, DEFAULT_KKT_TOL};
use crate::desim::{check_dists, PolicySpec, RouteDists};
use crate::error::{Error, Result};
use crate::fluid::DEFAULT_STEP;
use crate::net_model::{
    LoadTolerance, NetworkTopology, RouteTraffic, ScalingSequenceSpec, TrafficProfile,
};
use crate::scaling::DiffusionStudyConfig;

pub const PRESETS: &[&str] = &[
    "single-link",
    "linear-2",
    "linear-3",
    "linear-2-critical",
    "mm1",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub seed: u64,
    /// Simulation horizon in model time units.
    pub horizon: f64,
    pub fluid_horizon: f64,
    pub step: f64,
    /// Fluid initial state.
    pub initial_state: Option<Vec<f64>>,
    pub attraction_eps: f64,
    pub kkt_tol: f64,
    pub load_tolerance: LoadTolerance,
    pub diffusion: DiffusionStudyConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            seed: 1,
            horizon: 10_000.0,
            fluid_horizon: 50.0,
            step: DEFAULT_STEP,
            initial_state: None,
            attraction_eps: 1e-3,
            kkt_tol: DEFAULT_KKT_TOL,
            load_tolerance: LoadTolerance::default(),
            diffusion: DiffusionStudyConfig::default(),
        }
    }
}

/// Serialized scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub topology: NetworkTopology,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<TrafficProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingSequenceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distributions: Option<Vec<RouteDists>>,
    #[serde(default)]
    pub policies: Vec<PolicySpec>,
    #[serde(default)]
    pub experiment: ExperimentSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

/// Validated scenario with its content hash.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    /// Base traffic: `traffic`, or `scaling.base` when only a sequence is given.
    pub traffic: TrafficProfile,
    /// Hex SHA-256 of the scenario bytes.
    pub hash: String,
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Scenario> {
        let mut de = serde_json::Deserializer::from_str(text);
        let file: ScenarioFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            // validation errors raised inside TryFrom carry their own field path
            let msg = inner.to_string();
            Error::config(if path == "." { String::new() } else { path }, msg)
        })?;
        de.end().map_err(|e| Error::config("", e.to_string()))?;
        Scenario::from_file(file, hash_bytes(text.as_bytes()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_json_str(&text)
    }

    pub fn from_file(file: ScenarioFile, hash: String) -> Result<Scenario> {
        let traffic = match (&file.traffic, &file.scaling) {
            (Some(t), Some(s)) => {
                if t != &s.base {
                    return Err(Error::config(
                        "traffic",
                        "traffic and scaling.base must agree when both are given",
                    ));
                }
                t.clone()
            }
            (Some(t), None) => t.clone(),
            (None, Some(s)) => s.base.clone(),
            (None, None) => {
                return Err(Error::config(
                    "traffic",
                    "either traffic or scaling is required",
                ))
            }
        };
        let topo = &file.topology;
        topo.check_route_count(traffic.num_routes(), "traffic.routes")?;
        if let Some(u) = &file.utility {
            topo.check_route_count(u.num_routes(), "utility.beta")?;
        }
        if let Some(d) = &file.distributions {
            check_dists(&traffic, d)?;
        }
        for (i, p) in file.policies.iter().enumerate() {
            p.build(topo).map_err(|e| match e {
                Error::Config { path, message } => {
                    Error::config(format!("policies[{i}].{path}"), message)
                }
                other => other,
            })?;
        }
        let ex = &file.experiment;
        if let Some(n0) = &ex.initial_state {
            topo.check_route_count(n0.len(), "experiment.initial_state")?;
            if n0.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                return Err(Error::config(
                    "experiment.initial_state",
                    "entries must be finite and >= 0",
                ));
            }
        }
        for (name, v) in [
            ("experiment.horizon", ex.horizon),
            ("experiment.fluid_horizon", ex.fluid_horizon),
            ("experiment.step", ex.step),
            ("experiment.attraction_eps", ex.attraction_eps),
            ("experiment.kkt_tol", ex.kkt_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and > 0"));
            }
        }
        ex.load_tolerance
            .validate()
            .map_err(|e| relabel(e, "experiment.load_tolerance"))?;
        ex.diffusion
            .validate()
            .map_err(|e| relabel(e, "experiment.diffusion"))?;
        Ok(Scenario {
            file,
            traffic,
            hash,
        })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.file.topology
    }

    pub fn utility(&self) -> Result<&UtilitySpec> {
        self.file
            .utility
            .as_ref()
            .ok_or_else(|| Error::config("utility", "missing utility section"))
    }

    pub fn scaling(&self) -> Result<&ScalingSequenceSpec> {
        self.file
            .scaling
            .as_ref()
            .ok_or_else(|| Error::config("scaling", "missing scaling section"))
    }

    pub fn experiment(&self) -> &ExperimentSpec {
        &self.file.experiment
    }

    pub fn distributions(&self) -> Option<&[RouteDists]> {
        self.file.distributions.as_deref()
    }

    /// Traffic of scale `k`, or the base traffic.
    pub fn traffic_at(&self, k: Option<u32>) -> Result<TrafficProfile> {
        match k {
            Some(k) => self.scaling()?.traffic_at_scale(k),
            None => Ok(self.traffic.clone()),
        }
    }

    /// Looks up a policy by name: `utility-max` uses the scenario utility,
    /// other names match [`PolicySpec::name`] or its kind.
    pub fn policy(&self, name: &str) -> Result<PolicySpec> {
        if name == "utility-max" {
            return Ok(PolicySpec::UtilityMax {
                utility: self.utility()?.clone(),
            });
        }
        self.file
            .policies
            .iter()
            .find(|p| p.name() == name || p.name().split('(').next() == Some(name))
            .cloned()
            .ok_or_else(|| {
                Error::config(
                    "policy",
                    format!(
                        "unknown policy {name:?}; available: utility-max{}",
                        self.file
                            .policies
                            .iter()
                            .map(|p| format!(", {}", p.name()))
                            .collect::<String>()
                    ),
                )
            })
    }
}

fn relabel(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { path, message } => Error::config(format!("{prefix}.{path}"), message),
        other => other,
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn exponential(lambda: &[f64], nu: &[f64]) -> TrafficProfile {
    TrafficProfile::new(
        lambda
            .iter()
            .zip(nu)
            .map(|(&l, &n)| RouteTraffic::markovian(l, n))
            .collect(),
    )
    .expect("preset traffic is valid")
}

/// One long route across all links, then one short route per link.
fn linear(links: usize) -> NetworkTopology {
    let mut routes = vec![(0..links).collect::<Vec<_>>()];
    routes.extend((0..links).map(|l| vec![l]));
    NetworkTopology::from_indices(&vec![1.0; links], &routes).expect("preset topology is valid")
}

/// Scenario document of a built-in preset.
pub fn preset_file(name: &str) -> Result<ScenarioFile> {
    let mut experiment = ExperimentSpec::default();
    let (topology, traffic, theta, policies) = match name {
        "single-link" => {
            let t = NetworkTopology::from_indices(&[1.0], &[vec![0], vec![0]]).expect("valid");
            experiment.initial_state = Some(vec![2.0, 0.0]);
            (
                t,
                exponential(&[0.5, 0.5], &[1.0, 1.0]),
                Some(vec![-0.25, -0.25]),
                vec![
                    PolicySpec::StaticPriority { order: None },
                    PolicySpec::FixedShare {
                        rates: vec![0.5, 0.5],
                    },
                ],
            )
        }
        "linear-2" => {
            experiment.initial_state = Some(vec![1.0, 1.0, 1.0]);
            (
                linear(2),
                exponential(&[0.4, 0.6, 0.3], &[1.0; 3]),
                Some(vec![-0.2, -0.3, 0.0]),
                vec![
                    PolicySpec::StaticPriority { order: None },
                    PolicySpec::FixedShare {
                        rates: vec![0.4, 0.6, 0.3],
                    },
                ],
            )
        }
        "linear-3" => {
            experiment.initial_state = Some(vec![1.0; 4]);
            (
                linear(3),
                exponential(&[0.4, 0.6, 0.3, 0.3], &[1.0; 4]),
                Some(vec![-0.2, -0.3, 0.0, 0.0]),
                vec![PolicySpec::StaticPriority { order: None }],
            )
        }
        "linear-2-critical" => {
            experiment.initial_state = Some(vec![1.0, 1.0, 1.0]);
            (
                linear(2),
                exponential(&[0.5, 0.5, 0.5], &[1.0; 3]),
                Some(vec![-0.25, -0.25, -0.25]),
                vec![PolicySpec::StaticPriority { order: None }],
            )
        }
        "mm1" => {
            let t = NetworkTopology::from_indices(&[1.0], &[vec![0]]).expect("valid");
            experiment.initial_state = Some(vec![1.0]);
            experiment.horizon = 1e6;
            (t, exponential(&[0.8], &[1.0]), None, vec![])
        }
        other => {
            return Err(Error::config(
                "preset",
                format!(
                    "unknown preset {other:?}; available: {}",
                    PRESETS.join(", ")
                ),
            ))
        }
    };
    let nr = topology.num_routes();
    let scaling = theta.map(|th| {
        ScalingSequenceSpec::new(traffic.clone(), th, vec![0.0; nr])
            .expect("preset scaling is valid")
    });
    Ok(ScenarioFile {
        name: Some(name.to_string()),
        topology,
        traffic: if scaling.is_some() {
            None
        } else {
            Some(traffic)
        },
        scaling,
        utility: Some(UtilitySpec::proportional_fair(nr)),
        distributions: None,
        policies,
        experiment,
        output_dir: None,
    })
}

/// Pretty JSON of a preset; the preset's hash is the hash of this text.
pub fn preset_json(name: &str) -> Result<String> {
    let mut text = serde_json::to_string_pretty(&preset_file(name)?)?;
    text.push('\n');
    Ok(text)
}

pub fn preset(name: &str) -> Result<Scenario> {
    Scenario::from_json_str(&preset_json(name)?)
}
