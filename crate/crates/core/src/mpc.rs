//! Receding-horizon control loop and closed-loop episodes.
//!
//! Each MPC step propagates the debris belief over the horizon, solves the
//! chance-constrained plan with CEM and applies its first control for one
//! period. The planning belief is advanced open loop by one period per step.
//! Ground truth is a single debris realization drawn from the initial belief
//! and driven by process noise on streams disjoint from planning.

use rayon::prelude::*;

use crate::cem::{cem_solve, CandidateEvaluation, ConjunctionEvaluator, ControlSequence, IterationDiagnostics};
use crate::dynamics::{integrate_period, propagate_satellite_observed, StateVector, Vec3, Vec6};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::seed::{self, tag};
use crate::uncertainty::{psd_sqrt, sample_gaussian, MomentTrajectory, PropagatorKind, StateBelief};

/// Output of one receding-horizon solve.
#[derive(Debug, Clone)]
pub struct MpcStep {
    /// First control of the plan, applied for one period.
    pub control: Vec3,
    pub plan: ControlSequence,
    pub evaluation: CandidateEvaluation,
    pub iterations: Vec<IterationDiagnostics>,
    /// Debris position moments used for planning, `k = 1..K`.
    pub moments: MomentTrajectory,
    /// Planning belief one period ahead.
    pub next_belief: StateBelief,
}

/// Plans from `satellite` against `belief`. `seed` drives Monte Carlo
/// propagation and CEM sampling.
pub fn mpc_step(
    scenario: &Scenario,
    satellite: &StateVector,
    belief: &StateBelief,
    warm_start: Option<&ControlSequence>,
    seed: u64,
) -> Result<MpcStep> {
    let noise = scenario.noise.process_noise()?;
    let debris_model = scenario.debris_model();
    let satellite_model = scenario.satellite_model();
    let k = scenario.horizon;

    let beliefs = scenario.propagator.propagate(
        &debris_model,
        &noise,
        belief,
        k,
        &scenario.sim,
        seed::derive(seed, &[tag::MONTE_CARLO]),
    )?;
    let moments = MomentTrajectory::from_state_beliefs(&beliefs);
    let evaluator = ConjunctionEvaluator {
        model: &satellite_model,
        x0: *satellite,
        moments: &moments,
        risk: scenario.risk,
        weight: scenario.weight,
        sim: scenario.sim,
    };
    let init = match warm_start {
        Some(plan) if plan.horizon() == k => plan.shifted(),
        _ => ControlSequence::zeros(k),
    };
    let solution = cem_solve(&evaluator, &scenario.cem, &scenario.bounds, &init, seed::derive(seed, &[tag::CEM]))?;
    Ok(MpcStep {
        control: solution.best[0],
        plan: solution.best,
        evaluation: solution.evaluation,
        iterations: solution.iterations,
        moments,
        next_belief: beliefs[0].clone(),
    })
}

/// State at the start of one control period and the control applied over it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub time: f64,
    pub satellite: StateVector,
    pub debris: StateVector,
    pub control: Vec3,
    /// Planned per-step risks; `None` when control is disabled.
    pub step_risks: Option<Vec<f64>>,
    pub feasible: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub final_time: f64,
    pub final_satellite: StateVector,
    pub final_debris: StateVector,
    /// ‖r_s − r_d‖ on the fine grid, starting at t = 0.
    pub distances: Vec<f64>,
    pub min_distance: f64,
    pub total_delta_v: f64,
    /// `min_distance < d_thres`.
    pub collision: bool,
}

/// Ground-truth debris state at t = 0 for `seed`.
pub fn truth_initial_debris(scenario: &Scenario, seed: u64) -> Result<StateVector> {
    let b = &scenario.debris_belief0;
    let mut rng = seed::stream(seed, &[tag::TRUTH_INIT]);
    StateVector::from_vec6(&sample_gaussian(&b.mean, &psd_sqrt(&b.cov), &mut rng))
}

/// Simulates `scenario.duration` seconds of closed-loop flight.
pub fn run_episode(scenario: &Scenario, seed: u64) -> Result<EpisodeRecord> {
    scenario.validate()?;
    let noise = scenario.noise.process_noise()?;
    let satellite_model = scenario.satellite_model();
    let debris_model = scenario.debris_model();
    let sim = scenario.sim;
    let n_steps = scenario.control_steps();

    let mut truth_rng = seed::stream(seed, &[tag::TRUTH_NOISE]);
    let mut sat = scenario.satellite_x0;
    let mut deb = truth_initial_debris(scenario, seed)?;
    let mut belief = scenario.debris_belief0.clone();
    let mut warm: Option<ControlSequence> = None;

    let mut steps = Vec::with_capacity(n_steps);
    let mut distances = Vec::with_capacity(n_steps * sim.substeps() + 1);
    distances.push((sat.r - deb.r).norm());
    let mut total_delta_v = 0.0;

    for j in 0..n_steps {
        let time = j as f64 * sim.control_period;
        let (control, step_risks, feasible) = if scenario.control_enabled {
            let step = mpc_step(scenario, &sat, &belief, warm.as_ref(), seed::derive(seed, &[tag::PLANNING, j as u64]))
                .map_err(|e| Error::MpcStep {
                    step: j,
                    source: Box::new(e),
                })?;
            belief = step.next_belief;
            warm = Some(step.plan);
            (step.control, Some(step.evaluation.step_risks), Some(step.evaluation.feasible))
        } else {
            (Vec3::zeros(), None, None)
        };

        let mut sat_path: Vec<Vec3> = Vec::with_capacity(sim.substeps());
        let next_sat = propagate_satellite_observed(&satellite_model, &sat, &[control], &sim, |x| {
            sat_path.push(x.fixed_rows::<3>(0).into())
        })
        .map_err(|e| step_error(j, e))?[1];
        let mut sub = 0;
        let next_deb: Vec6 = integrate_period(&debris_model, &deb.to_vec6(), &sim, Some((&noise, &mut truth_rng)), |x| {
            let r: Vec3 = x.fixed_rows::<3>(0).into();
            distances.push((sat_path[sub] - r).norm());
            sub += 1;
        })
        .map_err(|e| step_error(j, e))?;

        steps.push(StepRecord {
            time,
            satellite: sat,
            debris: deb,
            control,
            step_risks,
            feasible,
        });
        total_delta_v += control.norm() * sim.control_period;
        sat = next_sat;
        deb = StateVector::from_vec6(&next_deb).map_err(|e| step_error(j, e))?;
    }

    let min_distance = distances.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EpisodeRecord {
        seed,
        steps,
        final_time: n_steps as f64 * sim.control_period,
        final_satellite: sat,
        final_debris: deb,
        distances,
        min_distance,
        total_delta_v,
        collision: min_distance < scenario.risk.d_thres,
    })
}

fn step_error(step: usize, e: Error) -> Error {
    Error::MpcStep {
        step,
        source: Box::new(e),
    }
}

/// One scenario modification applied before a batch point runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Override {
    Epsilon(f64),
    QScale(f64),
    Propagator(PropagatorKind),
}

impl Override {
    pub fn apply(&self, scenario: &mut Scenario) {
        match *self {
            Override::Epsilon(eps) => scenario.risk.epsilon = eps,
            Override::QScale(q) => scenario.noise.q_scale = q,
            Override::Propagator(p) => scenario.propagator = p,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Override::Epsilon(eps) => format!("epsilon={eps}"),
            Override::QScale(q) => format!("q_scale={q}"),
            Override::Propagator(p) => format!("propagator={}", p.name()),
        }
    }
}

/// Copy of `base` with `overrides` applied and re-validated.
pub fn apply_overrides(base: &Scenario, overrides: &[Override]) -> Result<Scenario> {
    let mut s = base.clone();
    for o in overrides {
        o.apply(&mut s);
    }
    s.validate()?;
    Ok(s)
}

/// Aggregate over the episodes of one batch point.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRow {
    pub overrides: Vec<Override>,
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<u64>,
    pub min_distances: Vec<f64>,
    pub delta_vs: Vec<f64>,
    pub mean_min_distance: f64,
    pub std_min_distance: f64,
    pub mean_delta_v: f64,
    pub std_delta_v: f64,
    pub collisions: usize,
}

/// Sample mean and `n − 1` standard deviation; the deviation of one value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Seed of episode `i` in a batch.
pub fn episode_seed(master_seed: u64, i: usize) -> u64 {
    master_seed.wrapping_add(i as u64)
}

impl BatchRow {
    pub fn from_results(
        overrides: Vec<Override>,
        scenario: Scenario,
        results: &[(u64, Result<EpisodeRecord>)],
    ) -> Self {
        let mut failed_seeds = Vec::new();
        let mut min_distances = Vec::new();
        let mut delta_vs = Vec::new();
        let mut collisions = 0;
        for (seed, r) in results {
            match r {
                Ok(ep) => {
                    min_distances.push(ep.min_distance);
                    delta_vs.push(ep.total_delta_v);
                    collisions += ep.collision as usize;
                }
                Err(_) => failed_seeds.push(*seed),
            }
        }
        let (mean_min_distance, std_min_distance) = mean_std(&min_distances);
        let (mean_delta_v, std_delta_v) = mean_std(&delta_vs);
        BatchRow {
            overrides,
            scenario,
            seeds: results.iter().map(|(s, _)| *s).collect(),
            failed_seeds,
            min_distances,
            delta_vs,
            mean_min_distance,
            std_min_distance,
            mean_delta_v,
            std_delta_v,
            collisions,
        }
    }
}

/// Runs `n_runs` episodes with seeds `master_seed + i` for every override set
/// in `points`. Episode failures are recorded in the row, not propagated.
pub fn run_batch(scenario: &Scenario, n_runs: usize, points: &[Vec<Override>], master_seed: u64) -> Result<Vec<BatchRow>> {
    if n_runs == 0 {
        return Err(Error::Domain("a batch needs at least one run".into()));
    }
    let scenarios: Vec<Scenario> = points
        .iter()
        .map(|p| apply_overrides(scenario, p))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| (0..n_runs).map(move |i| (p, episode_seed(master_seed, i))))
        .collect();
    let mut results: Vec<(usize, u64, Result<EpisodeRecord>)> = jobs
        .into_par_iter()
        .map(|(p, seed)| (p, seed, run_episode(&scenarios[p], seed)))
        .collect();
    let mut rows = Vec::with_capacity(points.len());
    for (p, sc) in scenarios.into_iter().enumerate() {
        let mine: Vec<(u64, Result<EpisodeRecord>)> = results
            .iter_mut()
            .filter(|(q, _, _)| *q == p)
            .map(|(_, s, r)| (*s, std::mem::replace(r, Err(Error::Domain(String::new())))))
            .collect();
        rows.push(BatchRow::from_results(points[p].clone(), sc, &mine));
    }
    Ok(rows)
}
