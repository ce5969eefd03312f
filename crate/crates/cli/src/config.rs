//! Run configuration, read from a JSON document.
//!
//! ```json
//! {
//!   "system": "cart_pendulum",
//!   "params": { "k_u": -40.0, "k_p": 0.05 },
//!   "samples": 200,
//!   "seed": 1,
//!   "integrator": { "method": "rk4", "dt": 0.001, "t_end": 40.0, "record_stride": 10 },
//!   "initial_state": { "q": [0.0, 0.3], "p": [0.0, 0.0] }
//! }
//! ```
//!
//! Only `system` is required. Parameter overrides are merged over the
//! system's defaults; unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sidapbc::sampling::{ProbeBox, DEFAULT_SAMPLES};
use sidapbc::sim::IntegratorConfig;
use sidapbc::systems::ball_beam::BallBeamParams;
use sidapbc::systems::cart_pendulum::CartPendulumParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemId {
    CartPendulum,
    BallBeam,
    /// Custom systems need analytic partials and are only available through
    /// the library API.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlChoice {
    #[default]
    Designed,
    Zero,
}

/// Deliberate perturbations of the target, for negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    pub md_scale: f64,
    pub lambda_scale: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation {
            md_scale: 1.0,
            lambda_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemId,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub probe_box: Option<ProbeBox>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub integrator: Option<IntegratorConfig>,
    #[serde(default)]
    pub initial_state: Option<InitialState>,
    #[serde(default)]
    pub control: ControlChoice,
    #[serde(default)]
    pub perturb: Perturbation,
    #[serde(default = "default_report")]
    pub report_file: String,
    #[serde(default = "default_trajectory")]
    pub trajectory_file: String,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}
fn default_report() -> String {
    "report.json".into()
}
fn default_trajectory() -> String {
    "trajectory.csv".into()
}

/// Anything wrong with the configuration document. Maps to exit code 2.
#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

/// The parameter set selected by a config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SystemParams {
    CartPendulum(CartPendulumParams),
    BallBeam(BallBeamParams),
}

/// A parsed config plus the hash of the bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub params: SystemParams,
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse(bytes: &[u8], seed_override: Option<u64>) -> Result<LoadedConfig, SchemaError> {
    let mut config: RunConfig = serde_json::from_slice(bytes).map_err(|e| SchemaError(e.to_string()))?;
    if let Some(s) = seed_override {
        config.seed = s;
    }
    if config.samples == 0 {
        return Err(SchemaError("samples must be positive".into()));
    }
    let overrides = serde_json::Value::Object(config.params.clone());
    let params = match config.system {
        SystemId::CartPendulum => {
            let p: CartPendulumParams = serde_json::from_value(overrides).map_err(|e| SchemaError(format!("params: {e}")))?;
            p.validate().map_err(|e| SchemaError(e.to_string()))?;
            SystemParams::CartPendulum(p)
        }
        SystemId::BallBeam => {
            let p: BallBeamParams = serde_json::from_value(overrides).map_err(|e| SchemaError(format!("params: {e}")))?;
            p.validate().map_err(|e| SchemaError(e.to_string()))?;
            SystemParams::BallBeam(p)
        }
        SystemId::Custom => {
            return Err(SchemaError(
                "custom systems are only available through the library API".into(),
            ))
        }
    };
    if let Some(bx) = &config.probe_box {
        bx.validate().map_err(|e| SchemaError(format!("probe_box: {e}")))?;
        if bx.dof() != 2 {
            return Err(SchemaError(format!("probe_box has {} coordinates, system has 2", bx.dof())));
        }
    }
    if let Some(cfg) = &config.integrator {
        cfg.validate().map_err(|e| SchemaError(e.to_string()))?;
    }
    if let Some(x) = &config.initial_state {
        if x.q.len() != 2 || x.p.len() != 2 {
            return Err(SchemaError("initial_state needs 2 positions and 2 momenta".into()));
        }
    }
    let scales = [config.perturb.md_scale, config.perturb.lambda_scale];
    if !scales.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(SchemaError("perturbation scales must be positive".into()));
    }
    Ok(LoadedConfig {
        config,
        params,
        hash: sha256_hex(bytes),
    })
}
