//! Two-body plus drag dynamics in the ECI frame and fixed-step RK4 rollouts.
//!
//! Units are km, km/s, km/s² and s throughout. Body parameters use SI (kg, m²)
//! and the atmosphere returns kg/m³; [`drag_acceleration`] does the conversion.
//!
//! Controls are held constant over a control period (zero-order hold) which is
//! integrated with `control_period / dt` RK4 substeps.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat6 = Matrix6<f64>;

/// Thrust acceleration, km/s².
pub type ControlVector = Vec3;

/// Standard gravitational parameter of the Earth, km³/s².
pub const MU_EARTH: f64 = 398_600.441_8;
/// Earth rotation rate about the ECI z axis, rad/s.
pub const OMEGA_EARTH: f64 = 7.292_115_9e-5;
/// Equatorial Earth radius, km.
pub const R_EARTH: f64 = 6378.1363;

/// `½ρ(A·C_d/m)‖v₀‖²` with ρ in kg/m³, A in m², m in kg and v₀ in km/s comes
/// out in m/s² after multiplying by 1e6 (km² → m²); dividing by 1e3 to get km/s²
/// leaves a net factor of 1e3.
pub const DRAG_UNIT_FACTOR: f64 = 1.0e3;

/// Position and velocity of one object in ECI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    /// km
    pub r: Vec3,
    /// km/s
    pub v: Vec3,
}

impl StateVector {
    pub fn new(r: Vec3, v: Vec3) -> Result<Self> {
        if !r.iter().chain(v.iter()).all(|c| c.is_finite()) {
            return Err(Error::Domain(format!(
                "state has non-finite components: r={r:?} v={v:?}"
            )));
        }
        if r.norm() <= 0.0 {
            return Err(Error::Domain("state at the geocentric singularity".into()));
        }
        Ok(StateVector { r, v })
    }

    pub fn from_vec6(x: &Vec6) -> Result<Self> {
        Self::new(x.fixed_rows::<3>(0).into(), x.fixed_rows::<3>(3).into())
    }

    pub fn to_vec6(&self) -> Vec6 {
        let mut x = Vec6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.r);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x
    }

    /// Specific orbital energy `v²/2 − μ/r`, km²/s².
    pub fn specific_energy(&self, mu: f64) -> f64 {
        0.5 * self.v.norm_squared() - mu / self.r.norm()
    }

    /// Specific angular momentum `r × v`, km²/s.
    pub fn angular_momentum(&self) -> Vec3 {
        self.r.cross(&self.v)
    }
}

/// Physical properties relevant to drag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    /// kg
    pub mass: f64,
    /// m²
    pub drag_area: f64,
    pub drag_coeff: f64,
}

impl BodyParams {
    pub fn new(mass: f64, drag_area: f64, drag_coeff: f64) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Domain(format!("mass must be positive, got {mass}")));
        }
        if !(drag_area.is_finite() && drag_area >= 0.0) {
            return Err(Error::Domain(format!(
                "drag area must be non-negative, got {drag_area}"
            )));
        }
        if !(drag_coeff.is_finite() && drag_coeff >= 0.0) {
            return Err(Error::Domain(format!(
                "drag coefficient must be non-negative, got {drag_coeff}"
            )));
        }
        Ok(BodyParams {
            mass,
            drag_area,
            drag_coeff,
        })
    }

    /// Ballistic factor `A·C_d/m`, m²/kg.
    pub fn ballistic_factor(&self) -> f64 {
        self.drag_area * self.drag_coeff / self.mass
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentParams {
    /// km³/s²
    pub mu_earth: f64,
    /// rad/s
    pub omega_earth: Vec3,
    /// Reference density, kg/m³.
    pub rho0: f64,
    /// Reference radius, km.
    pub r0: f64,
}

impl EnvironmentParams {
    /// Reference density giving ≈3.2e-13 kg/m³ at 550 km altitude with the
    /// exponential model below.
    pub const DEFAULT_RHO0: f64 = 3.5e-13;

    pub fn new(mu_earth: f64, omega_earth: Vec3, rho0: f64, r0: f64) -> Result<Self> {
        if !(mu_earth.is_finite() && mu_earth > 0.0) {
            return Err(Error::Domain(format!("mu_earth must be positive, got {mu_earth}")));
        }
        if !omega_earth.iter().all(|c| c.is_finite()) {
            return Err(Error::Domain("omega_earth must be finite".into()));
        }
        if !(rho0.is_finite() && rho0 >= 0.0) {
            return Err(Error::Domain(format!("rho0 must be non-negative, got {rho0}")));
        }
        if !(r0.is_finite() && r0 > 0.0) {
            return Err(Error::Domain(format!("r0 must be positive, got {r0}")));
        }
        Ok(EnvironmentParams {
            mu_earth,
            omega_earth,
            rho0,
            r0,
        })
    }
}

impl Default for EnvironmentParams {
    fn default() -> Self {
        EnvironmentParams {
            mu_earth: MU_EARTH,
            omega_earth: Vec3::new(0.0, 0.0, OMEGA_EARTH),
            rho0: Self::DEFAULT_RHO0,
            r0: R_EARTH,
        }
    }
}

/// Covariance of the white disturbance added to the debris state derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessNoise {
    q: Mat6,
    factor: Mat6,
    zero: bool,
}

impl ProcessNoise {
    pub fn new(q: Mat6) -> Result<Self> {
        if !q.iter().all(|c| c.is_finite()) {
            return Err(Error::Domain("process noise has non-finite entries".into()));
        }
        let scale = q.abs().max();
        if (q - q.transpose()).abs().max() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Domain("process noise must be symmetric".into()));
        }
        let q = 0.5 * (q + q.transpose());
        let eig = SymmetricEigen::new(q);
        if eig.eigenvalues.min() < -1e-10 * scale {
            return Err(Error::Domain(
                "process noise must be positive semidefinite".into(),
            ));
        }
        let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = eig.eigenvectors * Mat6::from_diagonal(&sqrt_vals);
        Ok(ProcessNoise {
            q,
            factor,
            zero: scale == 0.0,
        })
    }

    pub fn isotropic(q_scale: f64) -> Result<Self> {
        Self::new(Mat6::identity() * q_scale)
    }

    pub fn zero() -> Self {
        ProcessNoise {
            q: Mat6::zeros(),
            factor: Mat6::zeros(),
            zero: true,
        }
    }

    pub fn matrix(&self) -> &Mat6 {
        &self.q
    }

    /// A square root `L` with `L·Lᵀ = Q`.
    pub fn factor(&self) -> &Mat6 {
        &self.factor
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// Euler–Maruyama increment for one substep: `w·dt` with `w ~ N(0, Q/dt)`,
    /// i.e. a draw from `N(0, Q·dt)`.
    pub fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Vec6 {
        let z = Vec6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        self.factor * z * dt.abs().sqrt()
    }
}

/// Componentwise box bounds on the thrust acceleration, km/s².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl ControlBounds {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !min.iter().chain(max.iter()).all(|c| c.is_finite()) {
            return Err(Error::Domain("control bounds must be finite".into()));
        }
        if min.iter().zip(max.iter()).any(|(lo, hi)| lo > hi) {
            return Err(Error::Domain("control bounds require u_min <= u_max".into()));
        }
        Ok(ControlBounds { min, max })
    }

    pub fn symmetric(limit: f64) -> Result<Self> {
        Self::new(Vec3::repeat(-limit), Vec3::repeat(limit))
    }

    pub fn clamp(&self, u: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| u[i].clamp(self.min[i], self.max[i]))
    }

    pub fn contains(&self, u: &Vec3) -> bool {
        (0..3).all(|i| u[i] >= self.min[i] && u[i] <= self.max[i])
    }
}

/// Integration grid: fine step `dt` and the zero-order-hold control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub control_period: f64,
    substeps: usize,
}

impl SimConfig {
    pub fn new(dt: f64, control_period: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        if !(control_period.is_finite() && control_period >= dt) {
            return Err(Error::Domain(format!(
                "control period must be at least dt, got {control_period}"
            )));
        }
        let ratio = control_period / dt;
        let substeps = ratio.round();
        if (ratio - substeps).abs() > 1e-9 * ratio {
            return Err(Error::Domain(format!(
                "dt {dt} does not divide control period {control_period}"
            )));
        }
        Ok(SimConfig {
            dt,
            control_period,
            substeps: substeps as usize,
        })
    }

    /// The same grid integrated backwards in time.
    pub fn reversed(&self) -> Self {
        SimConfig {
            dt: -self.dt,
            control_period: -self.control_period,
            substeps: self.substeps,
        }
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }
}

/// Exponential atmosphere `ρ₀·exp(−(r − r₀)/r₀)`, kg/m³.
pub fn atmosphere_density(r: f64, env: &EnvironmentParams) -> Result<f64> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Domain(format!(
            "geocentric radius must be positive and finite, got {r}"
        )));
    }
    Ok(env.rho0 * (-(r - env.r0) / env.r0).exp())
}

fn drag_from_parts(r: &Vec3, r_norm: f64, v: &Vec3, body: &BodyParams, env: &EnvironmentParams) -> Vec3 {
    let bf = body.ballistic_factor();
    if bf == 0.0 || env.rho0 == 0.0 {
        return Vec3::zeros();
    }
    let v_rel = v - env.omega_earth.cross(r);
    let rho = env.rho0 * (-(r_norm - env.r0) / env.r0).exp();
    v_rel * (-0.5 * rho * bf * DRAG_UNIT_FACTOR * v_rel.norm())
}

/// Drag acceleration `−½ρ(r)(A·C_d/m)‖v₀‖v₀` with `v₀ = v − ω_E × r`, km/s².
pub fn drag_acceleration(x: &StateVector, body: &BodyParams, env: &EnvironmentParams) -> Vec3 {
    drag_from_parts(&x.r, x.r.norm(), &x.v, body, env)
}

/// Two-body plus drag on plain arrays. Every rollout path goes through this
/// function so batched and single rollouts agree bit for bit. Also returns `‖r‖`.
#[inline(always)]
fn orbital_raw(x: &[f64; 6], bf: f64, env: &EnvironmentParams) -> ([f64; 6], f64) {
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    let rn = r2.sqrt();
    let g = -env.mu_earth / (rn * rn * rn);
    let mut acc = [g * x[0], g * x[1], g * x[2]];
    if bf != 0.0 && env.rho0 != 0.0 {
        let w = &env.omega_earth;
        let vr = [
            x[3] - (w.y * x[2] - w.z * x[1]),
            x[4] - (w.z * x[0] - w.x * x[2]),
            x[5] - (w.x * x[1] - w.y * x[0]),
        ];
        let vn = (vr[0] * vr[0] + vr[1] * vr[1] + vr[2] * vr[2]).sqrt();
        let rho = env.rho0 * (-(rn - env.r0) / env.r0).exp();
        let c = -0.5 * rho * bf * DRAG_UNIT_FACTOR * vn;
        for i in 0..3 {
            acc[i] += vr[i] * c;
        }
    }
    ([x[3], x[4], x[5], acc[0], acc[1], acc[2]], rn)
}

/// Uncontrolled, noise-free two-body plus drag derivative of a raw 6-vector.
fn orbital_derivative(x: &Vec6, body: &BodyParams, env: &EnvironmentParams) -> Result<Vec6> {
    let (d, rn) = orbital_raw(&x.data.0[0], body.ballistic_factor(), env);
    if !(rn > 0.0 && rn.is_finite()) {
        return Err(Error::Domain(format!("singular or non-finite radius {rn}")));
    }
    Ok(Vec6::from(d))
}

/// Satellite derivative: `ṙ = v`, `v̇ = −μ r/‖r‖³ + a_drag + u`.
pub fn satellite_derivative(
    x: &StateVector,
    u: &ControlVector,
    body: &BodyParams,
    env: &EnvironmentParams,
) -> Result<Vec6> {
    let mut d = orbital_derivative(&x.to_vec6(), body, env)?;
    d[3] += u.x;
    d[4] += u.y;
    d[5] += u.z;
    Ok(d)
}

/// Debris derivative: the uncontrolled dynamics plus a disturbance on all six rows.
pub fn debris_derivative(
    x: &StateVector,
    w: &Vec6,
    body: &BodyParams,
    env: &EnvironmentParams,
) -> Result<Vec6> {
    Ok(orbital_derivative(&x.to_vec6(), body, env)? + w)
}

/// A time-invariant vector field on ℝ⁶.
pub trait Dynamics: Sync {
    fn derivative(&self, x: &Vec6) -> Result<Vec6>;
}

/// Two-body plus drag for one body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitalModel {
    pub body: BodyParams,
    pub env: EnvironmentParams,
}

impl OrbitalModel {
    pub fn new(body: BodyParams, env: EnvironmentParams) -> Self {
        OrbitalModel { body, env }
    }
}

impl Dynamics for OrbitalModel {
    #[inline]
    fn derivative(&self, x: &Vec6) -> Result<Vec6> {
        orbital_derivative(x, &self.body, &self.env)
    }
}

/// Adds a constant acceleration to the velocity rows of another model.
struct Thrusted<'a, D> {
    inner: &'a D,
    u: Vec3,
}

impl<D: Dynamics> Dynamics for Thrusted<'_, D> {
    #[inline]
    fn derivative(&self, x: &Vec6) -> Result<Vec6> {
        let mut d = self.inner.derivative(x)?;
        d[3] += self.u.x;
        d[4] += self.u.y;
        d[5] += self.u.z;
        Ok(d)
    }
}

/// One classical RK4 step. Negative `dt` integrates backwards.
pub fn rk4_step<F>(f: F, x: &Vec6, dt: f64) -> Result<Vec6>
where
    F: Fn(&Vec6) -> Result<Vec6>,
{
    if !(dt.is_finite() && dt != 0.0) {
        return Err(Error::Domain(format!("dt must be finite and nonzero, got {dt}")));
    }
    let k1 = f(x)?;
    let k2 = f(&(x + k1 * (0.5 * dt)))?;
    let k3 = f(&(x + k2 * (0.5 * dt)))?;
    let k4 = f(&(x + k3 * dt))?;
    let next = x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
    if !next.iter().all(|c| c.is_finite()) {
        return Err(Error::Numeric("RK4 step produced a non-finite state".into()));
    }
    Ok(next)
}

/// Integrates one control period. `observe` sees the state after every substep.
pub(crate) fn integrate_period<D, R, O>(
    dynamics: &D,
    x0: &Vec6,
    sim: &SimConfig,
    mut noise: Option<(&ProcessNoise, &mut R)>,
    mut observe: O,
) -> Result<Vec6>
where
    D: Dynamics + ?Sized,
    R: Rng + ?Sized,
    O: FnMut(&Vec6),
{
    let mut x = *x0;
    for step in 0..sim.substeps() {
        x = rk4_step(|s| dynamics.derivative(s), &x, sim.dt).map_err(|e| {
            Error::Propagation {
                step,
                reason: e.to_string(),
            }
        })?;
        if let Some((q, rng)) = noise.as_mut() {
            if !q.is_zero() {
                x += q.sample_increment(sim.dt, &mut **rng);
            }
        }
        observe(&x);
    }
    Ok(x)
}

fn validated(x: &Vec6, period: usize) -> Result<StateVector> {
    StateVector::from_vec6(x).map_err(|e| Error::Propagation {
        step: period,
        reason: e.to_string(),
    })
}

/// Rolls the satellite out under zero-order-hold controls. Returns the K+1
/// states at control-period boundaries; `observe` sees every fine-grid state.
pub fn propagate_satellite_observed<O>(
    model: &OrbitalModel,
    x0: &StateVector,
    controls: &[ControlVector],
    sim: &SimConfig,
    mut observe: O,
) -> Result<Vec<StateVector>>
where
    O: FnMut(&Vec6),
{
    let mut out = Vec::with_capacity(controls.len() + 1);
    out.push(*x0);
    let mut x = x0.to_vec6();
    for (k, u) in controls.iter().enumerate() {
        let thrusted = Thrusted { inner: model, u: *u };
        x = integrate_period::<_, crate::seed::StreamRng, _>(&thrusted, &x, sim, None, &mut observe)
            .map_err(|e| annotate_period(e, k))?;
        out.push(validated(&x, k)?);
    }
    Ok(out)
}

pub fn propagate_satellite(
    model: &OrbitalModel,
    x0: &StateVector,
    controls: &[ControlVector],
    sim: &SimConfig,
) -> Result<Vec<StateVector>> {
    propagate_satellite_observed(model, x0, controls, sim, |_| {})
}

/// Satellite state after each control period without intermediate validation
/// allocations; used in the optimizer's inner loop.
pub(crate) fn satellite_boundary_positions(
    model: &OrbitalModel,
    x0: &Vec6,
    controls: &[ControlVector],
    sim: &SimConfig,
    out: &mut Vec<Vec3>,
) -> Result<()> {
    out.clear();
    let mut x = *x0;
    for (k, u) in controls.iter().enumerate() {
        let thrusted = Thrusted { inner: model, u: *u };
        x = integrate_period::<_, crate::seed::StreamRng, _>(&thrusted, &x, sim, None, |_| {})
            .map_err(|e| annotate_period(e, k))?;
        out.push(x.fixed_rows::<3>(0).into());
    }
    Ok(())
}

/// Candidates advanced together by [`satellite_boundary_positions_lanes`].
pub(crate) const LANES: usize = 4;

/// [`satellite_boundary_positions`] for `LANES` control sequences in
/// lockstep, which lets independent arithmetic chains overlap. Results are
/// bitwise identical to the single-sequence path. Returns `false` if any lane
/// hit a singular or non-finite state; outputs are then unspecified.
pub(crate) fn satellite_boundary_positions_lanes(
    model: &OrbitalModel,
    x0: &Vec6,
    controls: [&[ControlVector]; LANES],
    sim: &SimConfig,
    out: &mut [Vec<Vec3>; LANES],
) -> bool {
    let periods = controls[0].len();
    debug_assert!(controls.iter().all(|c| c.len() == periods));
    let bf = model.body.ballistic_factor();
    let env = &model.env;
    let dt = sim.dt;
    let half = 0.5 * dt;
    let sixth = dt / 6.0;
    let mut ok = true;
    let mut f = |x: &[f64; 6], u: &Vec3| {
        let (mut d, rn) = orbital_raw(x, bf, env);
        ok &= rn > 0.0 && rn.is_finite();
        d[3] += u.x;
        d[4] += u.y;
        d[5] += u.z;
        d
    };
    let mut xs = [x0.data.0[0]; LANES];
    for o in out.iter_mut() {
        o.clear();
    }
    for k in 0..periods {
        let us: [Vec3; LANES] = std::array::from_fn(|l| controls[l][k]);
        for _ in 0..sim.substeps() {
            let k1: [[f64; 6]; LANES] = std::array::from_fn(|l| f(&xs[l], &us[l]));
            let a: [[f64; 6]; LANES] = std::array::from_fn(|l| std::array::from_fn(|j| xs[l][j] + k1[l][j] * half));
            let k2: [[f64; 6]; LANES] = std::array::from_fn(|l| f(&a[l], &us[l]));
            let b: [[f64; 6]; LANES] = std::array::from_fn(|l| std::array::from_fn(|j| xs[l][j] + k2[l][j] * half));
            let k3: [[f64; 6]; LANES] = std::array::from_fn(|l| f(&b[l], &us[l]));
            let c: [[f64; 6]; LANES] = std::array::from_fn(|l| std::array::from_fn(|j| xs[l][j] + k3[l][j] * dt));
            let k4: [[f64; 6]; LANES] = std::array::from_fn(|l| f(&c[l], &us[l]));
            xs = std::array::from_fn(|l| {
                std::array::from_fn(|j| xs[l][j] + (k1[l][j] + (k2[l][j] + k3[l][j]) * 2.0 + k4[l][j]) * sixth)
            });
        }
        for (o, x) in out.iter_mut().zip(&xs) {
            o.push(Vec3::new(x[0], x[1], x[2]));
        }
    }
    ok && xs.iter().flatten().all(|c| c.is_finite())
}

fn annotate_period(e: Error, period: usize) -> Error {
    match e {
        Error::Propagation { step, reason } => Error::Propagation {
            step,
            reason: format!("control period {period}: {reason}"),
        },
        other => other,
    }
}

/// Rolls out any dynamics with Euler–Maruyama process noise for `periods`
/// control periods. Returns `periods + 1` states including `x0`.
pub fn propagate_noisy<D, R>(
    dynamics: &D,
    noise: &ProcessNoise,
    x0: &Vec6,
    periods: usize,
    sim: &SimConfig,
    rng: &mut R,
) -> Result<Vec<Vec6>>
where
    D: Dynamics + ?Sized,
    R: Rng + ?Sized,
{
    let mut out = Vec::with_capacity(periods + 1);
    out.push(*x0);
    let mut x = *x0;
    for k in 0..periods {
        x = integrate_period(dynamics, &x, sim, Some((noise, &mut *rng)), |_| {})
            .map_err(|e| annotate_period(e, k))?;
        out.push(x);
    }
    Ok(out)
}

/// Debris rollout with process noise; with `Q = 0` the result is deterministic.
pub fn propagate_debris<R>(
    model: &OrbitalModel,
    noise: &ProcessNoise,
    x0: &StateVector,
    periods: usize,
    sim: &SimConfig,
    rng: &mut R,
) -> Result<Vec<StateVector>>
where
    R: Rng + ?Sized,
{
    propagate_noisy(model, noise, &x0.to_vec6(), periods, sim, rng)?
        .iter()
        .enumerate()
        .map(|(k, x)| validated(x, k))
        .collect()
}
