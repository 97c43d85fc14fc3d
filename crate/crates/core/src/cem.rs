//! Constrained cross-entropy method over thrust sequences.
//!
//! Each iteration samples a population from a diagonal Gaussian clamped to the
//! control box, evaluates every candidate, and refits the distribution to an
//! elite set. When at least one candidate satisfies every per-step risk
//! constraint, the elite are the cheapest feasible candidates; otherwise they
//! are the candidates with the lowest discounted trajectory risk.
//!
//! The best elite member is carried into the next iteration's candidate pool,
//! so the reported best cost never gets worse while the feasible branch stays
//! active.

use std::ops::Deref;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::{
    satellite_boundary_positions, satellite_boundary_positions_lanes, ControlBounds, Mat3, OrbitalModel, SimConfig,
    StateVector, Vec3, LANES,
};
use crate::error::{Error, Result};
use crate::risk::{step_risk, trajectory_risk, RiskParams};
use crate::seed;
use crate::uncertainty::MomentTrajectory;

/// K thrust vectors, km/s².
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence(Vec<Vec3>);

impl ControlSequence {
    pub fn new(controls: Vec<Vec3>) -> Self {
        ControlSequence(controls)
    }

    pub fn zeros(horizon: usize) -> Self {
        ControlSequence(vec![Vec3::zeros(); horizon])
    }

    pub fn horizon(&self) -> usize {
        self.0.len()
    }

    /// Drops the first control and repeats the last one.
    pub fn shifted(&self) -> Self {
        let mut v: Vec<Vec3> = self.0.iter().skip(1).copied().collect();
        if let Some(last) = self.0.last() {
            v.push(*last);
        }
        ControlSequence(v)
    }

    pub fn within(&self, bounds: &ControlBounds) -> bool {
        self.0.iter().all(|u| bounds.contains(u))
    }

    pub fn into_inner(self) -> Vec<Vec3> {
        self.0
    }
}

impl Deref for ControlSequence {
    type Target = [Vec3];

    fn deref(&self) -> &[Vec3] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CemParams {
    pub population: usize,
    pub elite_count: usize,
    pub max_iterations: usize,
    /// Initial per-component standard deviation, km/s².
    pub init_std: f64,
    /// km/s²
    pub std_floor: f64,
    /// Weight on the previous distribution in the update, in [0, 1).
    pub smoothing: f64,
}

impl CemParams {
    pub fn new(
        population: usize,
        elite_count: usize,
        max_iterations: usize,
        init_std: f64,
        std_floor: f64,
        smoothing: f64,
    ) -> Result<Self> {
        if elite_count < 2 || elite_count > population {
            return Err(Error::Domain(format!(
                "need 2 <= elite_count <= population, got {elite_count} of {population}"
            )));
        }
        if max_iterations == 0 {
            return Err(Error::Domain("max_iterations must be at least 1".into()));
        }
        if !(init_std.is_finite() && init_std > 0.0) {
            return Err(Error::Domain(format!("init_std must be positive, got {init_std}")));
        }
        if !(std_floor.is_finite() && std_floor > 0.0) {
            return Err(Error::Domain(format!("std_floor must be positive, got {std_floor}")));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::Domain(format!("smoothing must be in [0, 1), got {smoothing}")));
        }
        Ok(CemParams {
            population,
            elite_count,
            max_iterations,
            init_std,
            std_floor,
            smoothing,
        })
    }

    /// 200 samples, 20 elite, 15 iterations, `init_std = 0.4·u_max`.
    pub fn defaults_for(u_max: f64) -> Self {
        CemParams {
            population: 200,
            elite_count: 20,
            max_iterations: 15,
            init_std: 0.4 * u_max,
            std_floor: 1e-4,
            smoothing: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEvaluation {
    pub fuel_cost: f64,
    /// Every per-step constraint value is ≤ 0.
    pub feasible: bool,
    pub trajectory_risk: f64,
    /// Per-step risk values for `k = 1..K`.
    pub step_risks: Vec<f64>,
}

pub trait CandidateEvaluator: Sync {
    fn evaluate(&self, controls: &ControlSequence) -> Result<CandidateEvaluation>;

    /// Scores several candidates; must equal mapping [`Self::evaluate`].
    fn evaluate_many(&self, batch: &[ControlSequence]) -> Vec<Result<CandidateEvaluation>> {
        batch.iter().map(|u| self.evaluate(u)).collect()
    }
}

/// `Σ_k u_kᵀ R u_k`.
pub fn fuel_cost(controls: &[Vec3], weight: &Mat3) -> f64 {
    controls.iter().map(|u| u.dot(&(weight * u))).sum()
}

/// Scores a candidate against the debris moments over the horizon.
pub struct ConjunctionEvaluator<'a> {
    pub model: &'a OrbitalModel,
    pub x0: StateVector,
    pub moments: &'a MomentTrajectory,
    pub risk: RiskParams,
    pub weight: Mat3,
    pub sim: SimConfig,
}

impl ConjunctionEvaluator<'_> {
    fn check_horizon(&self, controls: &ControlSequence) -> Result<()> {
        if controls.horizon() != self.moments.len() {
            return Err(Error::Domain(format!(
                "control horizon {} does not match moment horizon {}",
                controls.horizon(),
                self.moments.len()
            )));
        }
        Ok(())
    }

    fn score(&self, controls: &ControlSequence, positions: &[Vec3]) -> CandidateEvaluation {
        let step_risks: Vec<f64> = positions
            .iter()
            .zip(&self.moments.steps)
            .map(|(r_s, m)| step_risk(r_s, &m.mean, &m.cov, &self.risk))
            .collect();
        CandidateEvaluation {
            fuel_cost: fuel_cost(controls, &self.weight),
            feasible: step_risks.iter().all(|r| *r <= 0.0),
            trajectory_risk: trajectory_risk(&step_risks, self.risk.gamma),
            step_risks,
        }
    }
}

impl CandidateEvaluator for ConjunctionEvaluator<'_> {
    fn evaluate(&self, controls: &ControlSequence) -> Result<CandidateEvaluation> {
        self.check_horizon(controls)?;
        let mut positions = Vec::with_capacity(controls.horizon());
        satellite_boundary_positions(self.model, &self.x0.to_vec6(), controls, &self.sim, &mut positions)?;
        Ok(self.score(controls, &positions))
    }

    fn evaluate_many(&self, batch: &[ControlSequence]) -> Vec<Result<CandidateEvaluation>> {
        let x0 = self.x0.to_vec6();
        let mut out = Vec::with_capacity(batch.len());
        let mut positions: [Vec<Vec3>; LANES] = Default::default();
        for group in batch.chunks(LANES) {
            let fast = group.len() == LANES && group.iter().all(|u| self.check_horizon(u).is_ok()) && {
                let controls: [&[Vec3]; LANES] = std::array::from_fn(|l| &group[l][..]);
                satellite_boundary_positions_lanes(self.model, &x0, controls, &self.sim, &mut positions)
            };
            if fast {
                out.extend(group.iter().zip(&positions).map(|(u, p)| Ok(self.score(u, p))));
            } else {
                out.extend(group.iter().map(|u| self.evaluate(u)));
            }
        }
        out
    }
}

/// Rolls out the satellite under `controls` and scores it against `moments`.
pub fn evaluate_candidate(
    controls: &ControlSequence,
    model: &OrbitalModel,
    x0: &StateVector,
    moments: &MomentTrajectory,
    risk: &RiskParams,
    weight: &Mat3,
    sim: &SimConfig,
) -> Result<CandidateEvaluation> {
    ConjunctionEvaluator {
        model,
        x0: *x0,
        moments,
        risk: *risk,
        weight: *weight,
        sim: *sim,
    }
    .evaluate(controls)
}

/// Diagonal Gaussian over control sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    pub mean: Vec<Vec3>,
    pub std: Vec<Vec3>,
}

impl SamplingDistribution {
    pub fn new(mean: &ControlSequence, std: f64) -> Self {
        SamplingDistribution {
            mean: mean.to_vec(),
            std: vec![Vec3::repeat(std); mean.horizon()],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, bounds: &ControlBounds, rng: &mut R) -> ControlSequence {
        ControlSequence(
            self.mean
                .iter()
                .zip(&self.std)
                .map(|(m, s)| {
                    let z = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                    bounds.clamp(&(m + s.component_mul(&z)))
                })
                .collect(),
        )
    }
}

/// Blends the elite moments into the previous distribution:
/// `new = α·prev + (1 − α)·elite`, with the std floored componentwise.
pub fn update_distribution(
    elite: &[&ControlSequence],
    prev: &SamplingDistribution,
    smoothing: f64,
    std_floor: f64,
) -> SamplingDistribution {
    assert!(!elite.is_empty(), "elite set must be nonempty");
    let n = elite.len() as f64;
    let horizon = prev.mean.len();
    let mut mean = Vec::with_capacity(horizon);
    let mut std = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let m = elite.iter().fold(Vec3::zeros(), |acc, e| acc + e[k]) / n;
        let var = elite.iter().fold(Vec3::zeros(), |acc, e| {
            let d = e[k] - m;
            acc + d.component_mul(&d)
        }) / n;
        let s = var.map(f64::sqrt);
        mean.push(prev.mean[k] * smoothing + m * (1.0 - smoothing));
        std.push((prev.std[k] * smoothing + s * (1.0 - smoothing)).map(|c| c.max(std_floor)));
    }
    SamplingDistribution { mean, std }
}

/// Indices of the elite-eligible candidates in rank order, and whether the
/// feasible branch was taken. Stable, so ties keep candidate order.
pub fn rank_candidates(evals: &[CandidateEvaluation]) -> (Vec<usize>, bool) {
    let any_feasible = evals.iter().any(|e| e.feasible);
    let mut idx: Vec<usize> = if any_feasible {
        (0..evals.len()).filter(|&i| evals[i].feasible).collect()
    } else {
        (0..evals.len()).collect()
    };
    if any_feasible {
        idx.sort_by(|&a, &b| evals[a].fuel_cost.total_cmp(&evals[b].fuel_cost));
    } else {
        idx.sort_by(|&a, &b| evals[a].trajectory_risk.total_cmp(&evals[b].trajectory_risk));
    }
    (idx, any_feasible)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationDiagnostics {
    pub any_feasible: bool,
    /// Fraction of the candidate pool satisfying every constraint.
    pub feasible_fraction: f64,
    /// Fuel cost of the top-ranked candidate.
    pub best_cost: f64,
    /// Trajectory risk of the top-ranked candidate.
    pub best_risk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CemSolution {
    pub best: ControlSequence,
    pub evaluation: CandidateEvaluation,
    pub iterations: Vec<IterationDiagnostics>,
}

/// Runs `max_iterations` rounds of constrained CEM starting from `init_mean`.
pub fn cem_solve<E: CandidateEvaluator + ?Sized>(
    evaluator: &E,
    params: &CemParams,
    bounds: &ControlBounds,
    init_mean: &ControlSequence,
    seed: u64,
) -> Result<CemSolution> {
    let mut dist = SamplingDistribution::new(init_mean, params.init_std);
    let mut incumbent: Option<(ControlSequence, CandidateEvaluation)> = None;
    let mut iterations = Vec::with_capacity(params.max_iterations);

    for iter in 0..params.max_iterations {
        let mut pool: Vec<ControlSequence> = (0..params.population)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed::stream(seed, &[seed::tag::CEM, iter as u64, i as u64]);
                dist.sample(bounds, &mut rng)
            })
            .collect();
        let mut evals: Vec<CandidateEvaluation> = pool
            .par_chunks(LANES)
            .flat_map_iter(|group| evaluator.evaluate_many(group))
            .collect::<Vec<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.map_err(|e| Error::Candidate {
                    index: i,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?;
        if let Some((u, e)) = incumbent.take() {
            pool.push(u);
            evals.push(e);
        }

        let (ranked, any_feasible) = rank_candidates(&evals);
        let elite_n = params.elite_count.min(ranked.len());
        let elite: Vec<&ControlSequence> = ranked[..elite_n].iter().map(|&i| &pool[i]).collect();
        let top = ranked[0];
        iterations.push(IterationDiagnostics {
            any_feasible,
            feasible_fraction: evals.iter().filter(|e| e.feasible).count() as f64 / evals.len() as f64,
            best_cost: evals[top].fuel_cost,
            best_risk: evals[top].trajectory_risk,
        });
        dist = update_distribution(&elite, &dist, params.smoothing, params.std_floor);
        incumbent = Some((pool[top].clone(), evals[top].clone()));
    }

    let (best, evaluation) = incumbent.expect("at least one iteration");
    Ok(CemSolution {
        best,
        evaluation,
        iterations,
    })
}
