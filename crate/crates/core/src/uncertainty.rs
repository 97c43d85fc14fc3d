//! Debris moment propagation over the planning horizon.
//!
//! Three estimators produce the state mean and covariance at each control
//! period boundary `k = 1..K`:
//!
//! - [`linear_propagate`]: nominal nonlinear mean, covariance through the
//!   Jacobian of the one-period map, re-linearized every period.
//! - [`ut_propagate`]: 2n+1 sigma points from `chol(n·P)`, pushed one period at
//!   a time through the noise-free map and recombined with uniform weights.
//! - [`mc_propagate`]: N samples of the initial belief rolled out with process
//!   noise, summarized by sample moments.
//!
//! Linear and UT add `Q·Δt_control` to the state covariance once per period,
//! which is the same discretization the Monte Carlo noise injection integrates.

use nalgebra::{SMatrix, SVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::{integrate_period, Dynamics, Mat3, Mat6, ProcessNoise, SimConfig, Vec3, Vec6};
use crate::error::{Error, Result};
use crate::seed::{self, StreamRng};

/// State dimension.
pub const N_STATE: usize = 6;
/// Number of sigma points, 2n+1.
pub const N_SIGMA: usize = 2 * N_STATE + 1;

const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief<const D: usize> {
    pub mean: SVector<f64, D>,
    pub cov: SMatrix<f64, D, D>,
}

pub type StateBelief = GaussianBelief<6>;
pub type PositionBelief = GaussianBelief<3>;

impl<const D: usize> GaussianBelief<D> {
    /// Symmetrizes `cov` and checks it is positive semidefinite within
    /// `1e-10·‖cov‖`.
    pub fn new(mean: SVector<f64, D>, cov: SMatrix<f64, D, D>) -> Result<Self> {
        if !mean.iter().chain(cov.iter()).all(|c| c.is_finite()) {
            return Err(Error::Numeric("belief has non-finite entries".into()));
        }
        let cov = 0.5 * (cov + cov.transpose());
        let scale = cov.norm();
        // λ_min ≥ −tol·‖cov‖ exactly when cov + tol·‖cov‖·I admits a Cholesky factor.
        let shifted = cov + SMatrix::<f64, D, D>::identity() * (PSD_TOL * scale);
        if scale > 0.0 && shifted.cholesky().is_none() {
            return Err(Error::Numeric(
                "covariance is not positive semidefinite".into(),
            ));
        }
        Ok(GaussianBelief { mean, cov })
    }

    pub fn point(mean: SVector<f64, D>) -> Self {
        GaussianBelief {
            mean,
            cov: SMatrix::zeros(),
        }
    }
}

impl StateBelief {
    pub fn position(&self) -> PositionBelief {
        extract_position_belief(self)
    }
}

/// Mean and upper-left covariance block of the position components.
pub fn extract_position_belief(state: &StateBelief) -> PositionBelief {
    GaussianBelief {
        mean: state.mean.fixed_rows::<3>(0).into(),
        cov: state.cov.fixed_view::<3, 3>(0, 0).into(),
    }
}

/// Debris position moments at horizon steps `k = 1..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    pub steps: Vec<PositionBelief>,
}

impl MomentTrajectory {
    pub fn from_state_beliefs(beliefs: &[StateBelief]) -> Self {
        MomentTrajectory {
            steps: beliefs.iter().map(extract_position_belief).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn mean(&self, k: usize) -> &Vec3 {
        &self.steps[k].mean
    }

    pub fn cov(&self, k: usize) -> &Mat3 {
        &self.steps[k].cov
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagatorKind {
    LinearGaussian,
    UnscentedTransform,
    MonteCarlo { samples: usize },
}

impl PropagatorKind {
    pub fn monte_carlo(samples: usize) -> Result<Self> {
        if samples < 2 {
            return Err(Error::Domain(format!(
                "Monte Carlo needs at least 2 samples, got {samples}"
            )));
        }
        Ok(PropagatorKind::MonteCarlo { samples })
    }

    /// Short name used on the command line and in output tables.
    pub fn name(&self) -> &'static str {
        match self {
            PropagatorKind::LinearGaussian => "linear",
            PropagatorKind::UnscentedTransform => "ut",
            PropagatorKind::MonteCarlo { .. } => "mc",
        }
    }

    /// State beliefs at `k = 1..periods`. `seed` is only consumed by Monte Carlo.
    pub fn propagate<D: Dynamics + ?Sized>(
        &self,
        dynamics: &D,
        noise: &ProcessNoise,
        belief0: &StateBelief,
        periods: usize,
        sim: &SimConfig,
        seed: u64,
    ) -> Result<Vec<StateBelief>> {
        match *self {
            PropagatorKind::LinearGaussian => linear_propagate(dynamics, noise, belief0, periods, sim),
            PropagatorKind::UnscentedTransform => ut_propagate(dynamics, noise, belief0, periods, sim),
            PropagatorKind::MonteCarlo { samples } => {
                mc_propagate(dynamics, noise, belief0, samples, periods, sim, seed)
            }
        }
    }
}

/// Noise-free map over one control period.
pub fn period_map<D: Dynamics + ?Sized>(dynamics: &D, x: &Vec6, sim: &SimConfig) -> Result<Vec6> {
    integrate_period::<_, StreamRng, _>(dynamics, x, sim, None, |_| {})
}

/// Central-difference step sizes `max(1e-6·|x_i|, 1e-8)`.
pub fn jacobian_steps(x: &Vec6) -> Vec6 {
    x.map(|c| (1e-6 * c.abs()).max(1e-8))
}

/// Central-difference Jacobian of `map` at `x`.
pub fn numerical_jacobian<F>(map: F, x: &Vec6, h: &Vec6) -> Result<Mat6>
where
    F: Fn(&Vec6) -> Result<Vec6>,
{
    if !h.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::Domain("Jacobian step sizes must be positive".into()));
    }
    let mut jac = Mat6::zeros();
    for j in 0..N_STATE {
        let mut plus = *x;
        let mut minus = *x;
        plus[j] += h[j];
        minus[j] -= h[j];
        // Use the actually representable step.
        let width = plus[j] - minus[j];
        let col = (map(&plus)? - map(&minus)?) / width;
        jac.set_column(j, &col);
    }
    if !jac.iter().all(|c| c.is_finite()) {
        return Err(Error::Numeric("Jacobian has non-finite entries".into()));
    }
    Ok(jac)
}

fn discrete_noise(noise: &ProcessNoise, sim: &SimConfig) -> Mat6 {
    noise.matrix() * sim.control_period
}

fn symmetrize(m: Mat6) -> Mat6 {
    0.5 * (m + m.transpose())
}

/// Linear Gaussian covariance propagation about the nominal trajectory.
pub fn linear_propagate<D: Dynamics + ?Sized>(
    dynamics: &D,
    noise: &ProcessNoise,
    belief0: &StateBelief,
    periods: usize,
    sim: &SimConfig,
) -> Result<Vec<StateBelief>> {
    let q_d = discrete_noise(noise, sim);
    let mut mean = belief0.mean;
    let mut cov = belief0.cov;
    let mut out = Vec::with_capacity(periods);
    for _ in 0..periods {
        let a = numerical_jacobian(|x| period_map(dynamics, x, sim), &mean, &jacobian_steps(&mean))?;
        mean = period_map(dynamics, &mean, sim)?;
        cov = symmetrize(a * cov * a.transpose() + q_d);
        out.push(GaussianBelief::new(mean, cov)?);
    }
    Ok(out)
}

/// Lower-triangular `L` with `L·Lᵀ = n·P`. A zero covariance yields a zero
/// factor; otherwise a failed decomposition is retried with diagonal jitter
/// `1e-12·tr(P)/n`, doubled up to three times.
pub fn sigma_factor(cov: &Mat6) -> Result<Mat6> {
    if cov.iter().all(|c| *c == 0.0) {
        return Ok(Mat6::zeros());
    }
    let n = N_STATE as f64;
    let cov = symmetrize(*cov);
    if let Some(ch) = (cov * n).cholesky() {
        return Ok(ch.l());
    }
    let base = 1e-12 * cov.trace().abs().max(f64::MIN_POSITIVE) / n;
    let mut jitter = base;
    for _ in 0..4 {
        if let Some(ch) = ((cov + Mat6::identity() * jitter) * n).cholesky() {
            return Ok(ch.l());
        }
        jitter *= 2.0;
    }
    Err(Error::Numeric(
        "Cholesky factorization failed after maximum jitter".into(),
    ))
}

/// `s₀ = x̄`, `s_i = x̄ + L_i`, `s_{i+n} = x̄ − L_i` with `L·Lᵀ = n·P`.
pub fn sigma_points(belief: &StateBelief) -> Result<[Vec6; N_SIGMA]> {
    let l = sigma_factor(&belief.cov)?;
    let mut pts = [belief.mean; N_SIGMA];
    for i in 0..N_STATE {
        let col: Vec6 = l.column(i).into();
        pts[1 + i] = belief.mean + col;
        pts[1 + N_STATE + i] = belief.mean - col;
    }
    Ok(pts)
}

/// Uniform-weight sigma-point moments: mean with 1/(2n+1), covariance about
/// that mean with 1/(2n).
pub fn sigma_moments(points: &[Vec6; N_SIGMA]) -> (Vec6, Mat6) {
    let mean = points.iter().fold(Vec6::zeros(), |acc, p| acc + p) / N_SIGMA as f64;
    let cov = points.iter().fold(Mat6::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    }) / (2 * N_STATE) as f64;
    (mean, symmetrize(cov))
}

/// Unscented transform, one control period at a time.
pub fn ut_propagate<D: Dynamics + ?Sized>(
    dynamics: &D,
    noise: &ProcessNoise,
    belief0: &StateBelief,
    periods: usize,
    sim: &SimConfig,
) -> Result<Vec<StateBelief>> {
    let q_d = discrete_noise(noise, sim);
    let mut belief = belief0.clone();
    let mut out = Vec::with_capacity(periods);
    for _ in 0..periods {
        let pts = sigma_points(&belief)?;
        let mut next = pts;
        for (dst, src) in next.iter_mut().zip(pts.iter()) {
            *dst = period_map(dynamics, src, sim)?;
        }
        let (mean, cov) = sigma_moments(&next);
        belief = GaussianBelief::new(mean, cov + q_d)?;
        out.push(belief.clone());
    }
    Ok(out)
}

/// Square root of a PSD matrix through its eigendecomposition.
pub(crate) fn psd_sqrt(cov: &Mat6) -> Mat6 {
    let eig = SymmetricEigen::new(symmetrize(*cov));
    eig.eigenvectors * Mat6::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
}

pub(crate) fn sample_gaussian<R: Rng + ?Sized>(mean: &Vec6, sqrt_cov: &Mat6, rng: &mut R) -> Vec6 {
    let z = Vec6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    mean + sqrt_cov * z
}

/// Monte Carlo with one caller-supplied RNG per sample. Each stream draws the
/// initial state and then that sample's process noise.
pub fn mc_propagate_with_streams<D, R>(
    dynamics: &D,
    noise: &ProcessNoise,
    belief0: &StateBelief,
    periods: usize,
    sim: &SimConfig,
    streams: Vec<R>,
) -> Result<Vec<StateBelief>>
where
    D: Dynamics + ?Sized,
    R: Rng + Send,
{
    let n = streams.len();
    if n < 2 {
        return Err(Error::Domain(format!(
            "Monte Carlo needs at least 2 samples, got {n}"
        )));
    }
    let root = psd_sqrt(&belief0.cov);
    let paths: Vec<Vec<Vec6>> = streams
        .into_par_iter()
        .map(|mut rng| {
            let mut x = sample_gaussian(&belief0.mean, &root, &mut rng);
            let mut path = Vec::with_capacity(periods);
            for _ in 0..periods {
                x = integrate_period(dynamics, &x, sim, Some((noise, &mut rng)), |_| {})?;
                path.push(x);
            }
            Ok(path)
        })
        .collect::<Result<_>>()?;

    (0..periods)
        .map(|k| {
            let mean = paths.iter().fold(Vec6::zeros(), |acc, p| acc + p[k]) / n as f64;
            let cov = paths.iter().fold(Mat6::zeros(), |acc, p| {
                let d = p[k] - mean;
                acc + d * d.transpose()
            }) / (n - 1) as f64;
            GaussianBelief::new(mean, cov)
        })
        .collect()
}

/// Monte Carlo with per-sample substreams `(seed, i)`.
pub fn mc_propagate<D: Dynamics + ?Sized>(
    dynamics: &D,
    noise: &ProcessNoise,
    belief0: &StateBelief,
    samples: usize,
    periods: usize,
    sim: &SimConfig,
    seed: u64,
) -> Result<Vec<StateBelief>> {
    let streams: Vec<StreamRng> = (0..samples as u64)
        .map(|i| seed::stream(seed, &[seed::tag::MONTE_CARLO, i]))
        .collect();
    mc_propagate_with_streams(dynamics, noise, belief0, periods, sim, streams)
}
