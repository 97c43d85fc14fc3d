//! Scenario definition and the default Starlink/CubeSat-style conjunction.

use crate::cem::CemParams;
use crate::dynamics::{
    propagate_satellite, BodyParams, ControlBounds, EnvironmentParams, Mat3, Mat6, OrbitalModel,
    ProcessNoise, SimConfig, StateVector, Vec3, Vec6, MU_EARTH, R_EARTH,
};
use crate::error::{Error, Result};
use crate::risk::RiskParams;
use crate::uncertainty::{GaussianBelief, PropagatorKind, StateBelief};

/// Unit system of the configured process-noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseUnits {
    /// m²/s on position rows and m²/s³ on velocity rows.
    Meters,
    /// km²/s on position rows and km²/s³ on velocity rows.
    Kilometers,
}

impl NoiseUnits {
    pub fn to_km2(self) -> f64 {
        match self {
            NoiseUnits::Meters => 1e-6,
            NoiseUnits::Kilometers => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseUnits::Meters => "m",
            NoiseUnits::Kilometers => "km",
        }
    }
}

/// Isotropic process noise `Q = q_scale·I₆` in the given units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub q_scale: f64,
    pub units: NoiseUnits,
}

impl NoiseSpec {
    pub fn process_noise(&self) -> Result<ProcessNoise> {
        if !(self.q_scale.is_finite() && self.q_scale >= 0.0) {
            return Err(Error::Domain(format!(
                "q_scale must be non-negative, got {}",
                self.q_scale
            )));
        }
        ProcessNoise::isotropic(self.q_scale * self.units.to_km2())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub satellite_x0: StateVector,
    pub debris_belief0: StateBelief,
    pub satellite_body: BodyParams,
    pub debris_body: BodyParams,
    pub env: EnvironmentParams,
    pub noise: NoiseSpec,
    pub risk: RiskParams,
    /// Control decisions per plan, K.
    pub horizon: usize,
    pub sim: SimConfig,
    /// Episode length, s.
    pub duration: f64,
    /// Fuel weight R.
    pub weight: Mat3,
    pub bounds: ControlBounds,
    pub propagator: PropagatorKind,
    pub cem: CemParams,
    /// When false the satellite coasts and no planning happens.
    pub control_enabled: bool,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let r = &self.risk;
        if !(r.epsilon > 0.0 && r.epsilon < 1.0) {
            return Err(Error::validation("risk.epsilon", "must lie in (0, 1)"));
        }
        if !(r.d_thres.is_finite() && r.d_thres > 0.0) {
            return Err(Error::validation("risk.d_thres", "must be positive"));
        }
        if !(r.gamma > 0.0 && r.gamma <= 1.0) {
            return Err(Error::validation("risk.gamma", "must lie in (0, 1]"));
        }
        let c = &self.cem;
        CemParams::new(c.population, c.elite_count, c.max_iterations, c.init_std, c.std_floor, c.smoothing)
            .map_err(|e| Error::validation("cem", e.to_string()))?;
        if let PropagatorKind::MonteCarlo { samples } = self.propagator {
            if samples < 2 {
                return Err(Error::validation("mc_samples", "must be at least 2"));
            }
        }
        if self.horizon == 0 {
            return Err(Error::validation("time.horizon_steps", "must be at least 1"));
        }
        if !(self.duration >= self.sim.control_period) {
            return Err(Error::validation(
                "time.duration",
                "must be at least one control period",
            ));
        }
        let periods = self.duration / self.sim.control_period;
        if (periods - periods.round()).abs() > 1e-9 * periods {
            return Err(Error::validation(
                "time.duration",
                "must be a whole number of control periods",
            ));
        }
        if self.weight.cholesky().is_none() || (self.weight - self.weight.transpose()).abs().max() > 0.0 {
            return Err(Error::validation(
                "control.weight",
                "must be symmetric positive definite",
            ));
        }
        self.noise
            .process_noise()
            .map_err(|e| Error::validation("noise.q_scale", e.to_string()))?;
        Ok(())
    }

    pub fn control_steps(&self) -> usize {
        (self.duration / self.sim.control_period).round() as usize
    }

    pub fn satellite_model(&self) -> OrbitalModel {
        OrbitalModel::new(self.satellite_body, self.env)
    }

    pub fn debris_model(&self) -> OrbitalModel {
        OrbitalModel::new(self.debris_body, self.env)
    }
}

/// Nominal satellite state at t = 0, km and km/s. Together with the debris mean
/// this is `construct_conjunction(550 km, 53°, 97.5°, 30°, 41 m, 15 s)`.
pub const DEFAULT_SATELLITE_R: [f64; 3] = [6056.018591026315, 2025.1510491367856, 2687.4662127555516];
pub const DEFAULT_SATELLITE_V: [f64; 3] = [-3.684161413857398, 3.990198286340332, 5.295171973201632];
/// Nominal debris mean at t = 0, km and km/s.
pub const DEFAULT_DEBRIS_R: [f64; 3] = [6036.3293548513875, 2114.5187673865685, 2662.926788136847];
pub const DEFAULT_DEBRIS_V: [f64; 3] = [-2.3692973921960965, -1.9662918086982561, 6.9320776317093555];

/// Initial debris covariance diagonal: 10 m and 1 m/s one-sigma.
pub const DEFAULT_DEBRIS_COV_DIAG: [f64; 6] = [1e-4, 1e-4, 1e-4, 1e-6, 1e-6, 1e-6];

impl Default for Scenario {
    fn default() -> Self {
        let u_max = 0.05;
        Scenario {
            satellite_x0: StateVector {
                r: Vec3::from(DEFAULT_SATELLITE_R),
                v: Vec3::from(DEFAULT_SATELLITE_V),
            },
            debris_belief0: GaussianBelief {
                mean: Vec6::new(
                    DEFAULT_DEBRIS_R[0],
                    DEFAULT_DEBRIS_R[1],
                    DEFAULT_DEBRIS_R[2],
                    DEFAULT_DEBRIS_V[0],
                    DEFAULT_DEBRIS_V[1],
                    DEFAULT_DEBRIS_V[2],
                ),
                cov: Mat6::from_diagonal(&Vec6::from(DEFAULT_DEBRIS_COV_DIAG)),
            },
            satellite_body: BodyParams {
                mass: 300.0,
                drag_area: 1.0,
                drag_coeff: 2.2,
            },
            debris_body: BodyParams {
                mass: 50.0,
                drag_area: 1.0,
                drag_coeff: 2.2,
            },
            env: EnvironmentParams::default(),
            noise: NoiseSpec {
                q_scale: 0.05,
                units: NoiseUnits::Meters,
            },
            risk: RiskParams {
                epsilon: 0.05,
                d_thres: 0.1,
                gamma: RiskParams::DEFAULT_GAMMA,
            },
            horizon: 10,
            sim: SimConfig::new(0.01, 1.0).expect("valid default grid"),
            duration: 30.0,
            weight: Mat3::identity(),
            bounds: ControlBounds::symmetric(u_max).expect("valid default bounds"),
            propagator: PropagatorKind::MonteCarlo { samples: 50 },
            cem: CemParams::defaults_for(u_max),
            control_enabled: true,
            seed: 0,
        }
    }
}

/// Circular-orbit state from inclination, RAAN and argument of latitude (rad).
pub fn circular_state(radius: f64, inclination: f64, raan: f64, arg_lat: f64) -> StateVector {
    let (su, cu) = arg_lat.sin_cos();
    let (si, ci) = inclination.sin_cos();
    let (so, co) = raan.sin_cos();
    let r = Vec3::new(co * cu - so * su * ci, so * cu + co * su * ci, su * si) * radius;
    let speed = (MU_EARTH / radius).sqrt();
    let v = Vec3::new(-co * su - so * cu * ci, -so * su + co * cu * ci, cu * si) * speed;
    StateVector { r, v }
}

/// Builds a conjunction: both objects meet at `tca` seconds with the debris
/// offset by `miss` km along `v_s × v_d`, then both are integrated back to
/// t = 0 without noise or control. Returns (satellite, debris) at t = 0.
pub fn construct_conjunction(
    altitude: f64,
    sat_inclination: f64,
    debris_inclination: f64,
    sat_arg_lat: f64,
    miss: f64,
    tca: f64,
    satellite: &OrbitalModel,
    debris: &OrbitalModel,
    sim: &SimConfig,
) -> Result<(StateVector, StateVector)> {
    let radius = R_EARTH + altitude;
    let sat_tca = circular_state(radius, sat_inclination, 0.0, sat_arg_lat);
    let p = sat_tca.r;
    let arg_lat = (p.z / (radius * debris_inclination.sin())).asin();
    let a = arg_lat.cos();
    let b = arg_lat.sin() * debris_inclination.cos();
    let raan = p.y.atan2(p.x) - b.atan2(a);
    let deb_on_sat = circular_state(radius, debris_inclination, raan, arg_lat);
    let normal = sat_tca.v.cross(&deb_on_sat.v).normalize();
    let deb_tca = StateVector::new(deb_on_sat.r + normal * miss, deb_on_sat.v)?;

    let periods = (tca / sim.control_period).round() as usize;
    let back = sim.reversed();
    let coast = vec![Vec3::zeros(); periods];
    let sat0 = *propagate_satellite(satellite, &sat_tca, &coast, &back)?.last().unwrap();
    let deb0 = *propagate_satellite(debris, &deb_tca, &coast, &back)?.last().unwrap();
    Ok((sat0, deb0))
}
