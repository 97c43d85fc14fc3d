//! TOML scenario files.
//!
//! Every key is optional; omitted keys take the default conjunction scenario.
//! Unknown keys are rejected. Units:
//!
//! | key | unit |
//! |-----|------|
//! | `time.dt`, `time.control_period`, `time.duration` | s |
//! | `satellite.position`, `debris.position` | km, ECI |
//! | `satellite.velocity`, `debris.velocity` | km/s, ECI |
//! | `*.mass` | kg |
//! | `*.drag_area` | m² |
//! | `debris.covariance_diag` | km² (×3), km²/s² (×3) |
//! | `noise.q_scale` | `noise.units`²/s (position), `noise.units`²/s³ (velocity) |
//! | `environment.mu` | km³/s² |
//! | `environment.omega` | rad/s |
//! | `environment.rho0` | kg/m³ |
//! | `environment.r0`, `risk.d_thres` | km |
//! | `control.u_min`, `control.u_max`, `cem.init_std`, `cem.std_floor` | km/s² |

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cem::CemParams;
use crate::dynamics::{BodyParams, ControlBounds, EnvironmentParams, Mat3, Mat6, SimConfig, StateVector, Vec3, Vec6};
use crate::error::{Error, Result};
use crate::risk::RiskParams;
use crate::scenario::{NoiseSpec, NoiseUnits, Scenario};
use crate::uncertainty::{GaussianBelief, PropagatorKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// `linear`, `ut` or `mc`.
    pub propagator: String,
    pub mc_samples: usize,
    pub time: TimeSection,
    pub satellite: SatelliteSection,
    pub debris: DebrisSection,
    pub noise: NoiseSection,
    pub environment: EnvironmentSection,
    pub risk: RiskSection,
    pub control: ControlSection,
    pub cem: CemSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub control_period: f64,
    pub horizon_steps: usize,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SatelliteSection {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub mass: f64,
    pub drag_area: f64,
    pub drag_coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebrisSection {
    /// Mean position.
    pub position: [f64; 3],
    /// Mean velocity.
    pub velocity: [f64; 3],
    pub covariance_diag: [f64; 6],
    pub mass: f64,
    pub drag_area: f64,
    pub drag_coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Q = q_scale·I₆.
    pub q_scale: f64,
    /// `m` or `km`.
    pub units: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentSection {
    pub mu: f64,
    pub omega: [f64; 3],
    pub rho0: f64,
    pub r0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskSection {
    pub epsilon: f64,
    pub d_thres: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub enabled: bool,
    pub u_min: [f64; 3],
    pub u_max: [f64; 3],
    /// Row-major fuel weight R.
    pub weight: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemSection {
    pub population: usize,
    pub elite_count: usize,
    pub max_iterations: usize,
    pub init_std: f64,
    pub std_floor: f64,
    pub smoothing: f64,
}

macro_rules! default_from_scenario {
    ($($section:ident => $field:ident),* $(,)?) => {
        $(impl Default for $section {
            fn default() -> Self {
                ScenarioConfig::default().$field
            }
        })*
    };
}

default_from_scenario!(
    TimeSection => time,
    SatelliteSection => satellite,
    DebrisSection => debris,
    NoiseSection => noise,
    EnvironmentSection => environment,
    RiskSection => risk,
    ControlSection => control,
    CemSection => cem,
);

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::from_scenario(&Scenario::default()).expect("default scenario is representable")
    }
}

fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn propagator_from_name(name: &str, samples: usize) -> Result<PropagatorKind> {
    match name {
        "linear" => Ok(PropagatorKind::LinearGaussian),
        "ut" => Ok(PropagatorKind::UnscentedTransform),
        "mc" => PropagatorKind::monte_carlo(samples).map_err(|e| Error::validation("mc_samples", e.to_string())),
        other => Err(Error::validation(
            "propagator",
            format!("expected one of linear, ut, mc; got {other:?}"),
        )),
    }
}

fn noise_units_from_name(name: &str) -> Result<NoiseUnits> {
    match name {
        "m" => Ok(NoiseUnits::Meters),
        "km" => Ok(NoiseUnits::Kilometers),
        other => Err(Error::validation("noise.units", format!("expected m or km, got {other:?}"))),
    }
}

fn check(ok: bool, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::validation(key, message))
    }
}

fn body(prefix: &str, mass: f64, area: f64, cd: f64) -> Result<BodyParams> {
    check(mass.is_finite() && mass > 0.0, &format!("{prefix}.mass"), "must be positive")?;
    check(area.is_finite() && area >= 0.0, &format!("{prefix}.drag_area"), "must be non-negative")?;
    check(cd.is_finite() && cd >= 0.0, &format!("{prefix}.drag_coeff"), "must be non-negative")?;
    BodyParams::new(mass, area, cd)
}

fn state(prefix: &str, r: [f64; 3], v: [f64; 3]) -> Result<StateVector> {
    check(r.iter().all(|c| c.is_finite()), &format!("{prefix}.position"), "must be finite")?;
    check(v.iter().all(|c| c.is_finite()), &format!("{prefix}.velocity"), "must be finite")?;
    StateVector::new(Vec3::from(r), Vec3::from(v)).map_err(|e| Error::validation(&format!("{prefix}.position"), e.to_string()))
}

impl ScenarioConfig {
    /// Exact config representation of `scenario`. The debris covariance must be
    /// diagonal.
    pub fn from_scenario(s: &Scenario) -> Result<Self> {
        let cov = &s.debris_belief0.cov;
        if cov != &Mat6::from_diagonal(&cov.diagonal()) {
            return Err(Error::Serialize(
                "debris covariance is not diagonal and has no config representation".into(),
            ));
        }
        let mean = &s.debris_belief0.mean;
        let mc_samples = match s.propagator {
            PropagatorKind::MonteCarlo { samples } => samples,
            _ => 50,
        };
        Ok(ScenarioConfig {
            seed: s.seed,
            propagator: s.propagator.name().to_string(),
            mc_samples,
            time: TimeSection {
                dt: s.sim.dt,
                control_period: s.sim.control_period,
                horizon_steps: s.horizon,
                duration: s.duration,
            },
            satellite: SatelliteSection {
                position: arr3(&s.satellite_x0.r),
                velocity: arr3(&s.satellite_x0.v),
                mass: s.satellite_body.mass,
                drag_area: s.satellite_body.drag_area,
                drag_coeff: s.satellite_body.drag_coeff,
            },
            debris: DebrisSection {
                position: [mean[0], mean[1], mean[2]],
                velocity: [mean[3], mean[4], mean[5]],
                covariance_diag: std::array::from_fn(|i| cov[(i, i)]),
                mass: s.debris_body.mass,
                drag_area: s.debris_body.drag_area,
                drag_coeff: s.debris_body.drag_coeff,
            },
            noise: NoiseSection {
                q_scale: s.noise.q_scale,
                units: s.noise.units.name().to_string(),
            },
            environment: EnvironmentSection {
                mu: s.env.mu_earth,
                omega: arr3(&s.env.omega_earth),
                rho0: s.env.rho0,
                r0: s.env.r0,
            },
            risk: RiskSection {
                epsilon: s.risk.epsilon,
                d_thres: s.risk.d_thres,
                gamma: s.risk.gamma,
            },
            control: ControlSection {
                enabled: s.control_enabled,
                u_min: arr3(&s.bounds.min),
                u_max: arr3(&s.bounds.max),
                weight: std::array::from_fn(|i| std::array::from_fn(|j| s.weight[(i, j)])),
            },
            cem: CemSection {
                population: s.cem.population,
                elite_count: s.cem.elite_count,
                max_iterations: s.cem.max_iterations,
                init_std: s.cem.init_std,
                std_floor: s.cem.std_floor,
                smoothing: s.cem.smoothing,
            },
        })
    }

    /// Validated scenario. Errors name the offending key.
    pub fn to_scenario(&self) -> Result<Scenario> {
        let t = &self.time;
        check(t.dt.is_finite() && t.dt > 0.0, "time.dt", "must be positive")?;
        check(
            t.control_period.is_finite() && t.control_period >= t.dt,
            "time.control_period",
            "must be at least dt",
        )?;
        let sim = SimConfig::new(t.dt, t.control_period)
            .map_err(|e| Error::validation("time.dt", e.to_string()))?;

        let d = &self.debris;
        check(
            d.covariance_diag.iter().all(|c| c.is_finite() && *c >= 0.0),
            "debris.covariance_diag",
            "entries must be non-negative",
        )?;
        let debris_state = state("debris", d.position, d.velocity)?;
        let debris_belief0 = GaussianBelief::new(
            debris_state.to_vec6(),
            Mat6::from_diagonal(&Vec6::from(d.covariance_diag)),
        )?;

        let e = &self.environment;
        check(e.mu.is_finite() && e.mu > 0.0, "environment.mu", "must be positive")?;
        check(e.omega.iter().all(|c| c.is_finite()), "environment.omega", "must be finite")?;
        check(e.rho0.is_finite() && e.rho0 >= 0.0, "environment.rho0", "must be non-negative")?;
        check(e.r0.is_finite() && e.r0 > 0.0, "environment.r0", "must be positive")?;
        let env = EnvironmentParams::new(e.mu, Vec3::from(e.omega), e.rho0, e.r0)?;

        let n = &self.noise;
        check(n.q_scale.is_finite() && n.q_scale >= 0.0, "noise.q_scale", "must be non-negative")?;
        let noise = NoiseSpec {
            q_scale: n.q_scale,
            units: noise_units_from_name(&n.units)?,
        };

        let r = &self.risk;
        check(r.epsilon > 0.0 && r.epsilon < 1.0, "risk.epsilon", "must lie in (0, 1)")?;
        check(r.d_thres.is_finite() && r.d_thres > 0.0, "risk.d_thres", "must be positive")?;
        check(r.gamma > 0.0 && r.gamma <= 1.0, "risk.gamma", "must lie in (0, 1]")?;
        let risk = RiskParams::new(r.epsilon, r.d_thres, r.gamma)?;

        let c = &self.control;
        check(
            c.u_min.iter().chain(&c.u_max).all(|x| x.is_finite()),
            "control.u_min",
            "bounds must be finite",
        )?;
        check(
            c.u_min.iter().zip(&c.u_max).all(|(lo, hi)| lo <= hi),
            "control.u_max",
            "must be at least u_min componentwise",
        )?;
        let bounds = ControlBounds::new(Vec3::from(c.u_min), Vec3::from(c.u_max))?;
        let weight = Mat3::from_fn(|i, j| c.weight[i][j]);
        check(weight.iter().all(|x| x.is_finite()), "control.weight", "must be finite")?;

        let m = &self.cem;
        check(m.population >= 2, "cem.population", "must be at least 2")?;
        check(
            m.elite_count >= 2 && m.elite_count <= m.population,
            "cem.elite_count",
            "must lie in [2, population]",
        )?;
        check(m.max_iterations >= 1, "cem.max_iterations", "must be at least 1")?;
        check(m.init_std.is_finite() && m.init_std > 0.0, "cem.init_std", "must be positive")?;
        check(m.std_floor.is_finite() && m.std_floor > 0.0, "cem.std_floor", "must be positive")?;
        check((0.0..1.0).contains(&m.smoothing), "cem.smoothing", "must lie in [0, 1)")?;
        let cem = CemParams::new(m.population, m.elite_count, m.max_iterations, m.init_std, m.std_floor, m.smoothing)?;

        let scenario = Scenario {
            satellite_x0: state("satellite", self.satellite.position, self.satellite.velocity)?,
            debris_belief0,
            satellite_body: body("satellite", self.satellite.mass, self.satellite.drag_area, self.satellite.drag_coeff)?,
            debris_body: body("debris", d.mass, d.drag_area, d.drag_coeff)?,
            env,
            noise,
            risk,
            horizon: t.horizon_steps,
            sim,
            duration: t.duration,
            weight,
            bounds,
            propagator: propagator_from_name(&self.propagator, self.mc_samples)?,
            cem,
            control_enabled: c.enabled,
            seed: self.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialization. Equal hashes mean equal
    /// resolved configs.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

/// Parses without validating field values.
pub fn parse_config_document(text: &str) -> Result<ScenarioConfig> {
    toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })
}

pub fn parse_config(text: &str) -> Result<Scenario> {
    parse_config_document(text)?.to_scenario()
}

pub fn read_config_document(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_document(&text)
}

pub fn load_config(path: &Path) -> Result<Scenario> {
    read_config_document(path)?.to_scenario()
}
