//! Dynamics-adapted empirical measures on pairwise distances, estimation
//! errors in the induced L^2 norms, trajectory prediction errors, and the
//! empirical convergence-rate study.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Estimator;
use crate::dynamics::ModelSpec;
use crate::geometry::{self, IcSpec, Manifold, Vec3};
use crate::integrate::{
    self, IntegratorConfig, ObservationSet, TrajectoryDataset,
};
use crate::kernels::PiecewiseKernel;
use crate::{basis, learn, Error, Result};

/// Weighted samples of pairwise distances; weights are uniform over all
/// (trajectory, time, pair) triples and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    pub samples: Vec<(f64, f64)>,
}

impl EmpiricalMeasure {
    pub fn total_weight(&self) -> f64 {
        self.samples.iter().map(|&(_, w)| w).sum()
    }

    pub fn support(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &(r, _) in &self.samples {
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    }

    /// Mass per bin on a uniform grid over `[lo, hi]`, as
    /// `(bin center, mass)` rows for plotting export.
    pub fn histogram(&self, bins: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        let width = (hi - lo) / bins as f64;
        let mut mass = vec![0.0; bins];
        for &(r, w) in &self.samples {
            if r < lo || r > hi {
                continue;
            }
            let idx = (((r - lo) / width) as usize).min(bins - 1);
            mass[idx] += w;
        }
        mass.into_iter()
            .enumerate()
            .map(|(j, m)| (lo + (j as f64 + 0.5) * width, m))
            .collect()
    }
}

/// Empirical pairwise-distance measure of the dataset. Unfiltered (or
/// same-type filtered) it runs over unordered pairs `i < i'`; a cross-type
/// filter `(k, k')` runs over ordered pairs, which makes the `(k, k')` and
/// `(k', k)` measures identical.
pub fn rho_empirical(
    ds: &TrajectoryDataset,
    pair_filter: Option<(usize, usize)>,
) -> Result<EmpiricalMeasure> {
    let n = ds.n_agents();
    let mut distances = Vec::new();
    for traj in &ds.trajectories {
        for pts in &traj.positions {
            for i in 0..n {
                for ip in (i + 1)..n {
                    let keep = match pair_filter {
                        None => true,
                        Some((k, kp)) => {
                            (ds.types[i] == k && ds.types[ip] == kp)
                                || (ds.types[i] == kp && ds.types[ip] == k)
                        }
                    };
                    if keep {
                        distances.push(geometry::distance(&ds.manifold, &pts[i], &pts[ip]));
                    }
                }
            }
        }
    }
    if distances.is_empty() {
        return Err(Error::EmptyMeasure(format!(
            "no pairs for filter {pair_filter:?}"
        )));
    }
    let w = 1.0 / distances.len() as f64;
    Ok(EmpiricalMeasure {
        samples: distances.into_iter().map(|r| (r, w)).collect(),
    })
}

/// `sqrt(sum_j w_j (f(r_j) r_j)^2)`, the norm in which estimation errors
/// are measured.
pub fn l2_rho(f: impl Fn(f64) -> f64, mu: &EmpiricalMeasure) -> f64 {
    mu.samples
        .iter()
        .map(|&(r, w)| {
            let v = f(r) * r;
            w * v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Relative L^2(rho) estimation error. A zero-norm truth (the structurally
/// zero kernels) yields 0 against a zero estimator and otherwise falls back
/// to the absolute error with `absolute_fallback` set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RelError {
    pub value: f64,
    pub absolute_fallback: bool,
}

pub fn rel_error(est: &Estimator, truth: &PiecewiseKernel, mu: &EmpiricalMeasure) -> RelError {
    let diff = l2_rho(|r| est.eval(r) - truth.eval(r), mu);
    let denom = l2_rho(|r| truth.eval(r), mu);
    if denom > 0.0 {
        RelError {
            value: diff / denom,
            absolute_fallback: false,
        }
    } else if diff == 0.0 {
        RelError {
            value: 0.0,
            absolute_fallback: false,
        }
    } else {
        RelError {
            value: diff,
            absolute_fallback: true,
        }
    }
}

/// Sup over the observation grid of the root-mean-square geodesic distance
/// between paired agents.
pub fn traj_error(
    x: &ObservationSet,
    xhat: &ObservationSet,
    manifold: &Manifold,
) -> Result<f64> {
    if x.times.len() != xhat.times.len() {
        return Err(Error::GridMismatch(format!(
            "{} vs {} observation times",
            x.times.len(),
            xhat.times.len()
        )));
    }
    let n = x.positions.first().map_or(0, Vec::len);
    if n == 0 || n != xhat.positions.first().map_or(0, Vec::len) {
        return Err(Error::GridMismatch("agent count mismatch".into()));
    }
    let mut sup = 0.0f64;
    for (l, (ta, tb)) in x.times.iter().zip(&xhat.times).enumerate() {
        if (ta - tb).abs() > 1e-9 * ta.abs().max(1.0) {
            return Err(Error::GridMismatch(format!(
                "observation times differ at index {l}: {ta} vs {tb}"
            )));
        }
        let mut acc = 0.0;
        for i in 0..n {
            let d = geometry::distance(manifold, &x.positions[l][i], &xhat.positions[l][i]);
            acc += d * d;
        }
        sup = sup.max((acc / n as f64).sqrt());
    }
    Ok(sup)
}

/// Simulates the true and estimated models from each initial condition with
/// the same integrator and returns the mean and (population) standard
/// deviation of the trajectory errors.
pub fn traj_error_stats(
    model_true: &ModelSpec,
    model_est: &ModelSpec,
    ics: &[Vec<Vec3>],
    l_obs: usize,
    t_final: f64,
    cfg: IntegratorConfig,
) -> Result<(f64, f64)> {
    if ics.is_empty() {
        return Err(Error::InvalidModel("no initial conditions".into()));
    }
    let errors: Vec<f64> = ics
        .par_iter()
        .map(|ic| -> Result<f64> {
            let truth = integrate::simulate(model_true, model_true.state(ic.clone(), 0.0), t_final, cfg)?;
            let est = integrate::simulate(model_est, model_est.state(ic.clone(), 0.0), t_final, cfg)?;
            let obs_truth = integrate::observe(model_true, &truth, l_obs, t_final)?;
            let obs_est = integrate::observe(model_est, &est, l_obs, t_final)?;
            traj_error(&obs_truth, &obs_est, &model_true.manifold)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// One sample point of the convergence study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyPoint {
    pub m_traj: usize,
    pub n_basis: usize,
    pub mean_rel_error: f64,
    pub std_rel_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    pub points: Vec<StudyPoint>,
    /// Least-squares slope of log(rel error) against log(M), averaged over
    /// repeats.
    pub slope: f64,
    /// Half-width `2 std / sqrt(repeats)` of the per-repeat slope spread.
    pub ci_half_width: f64,
    pub per_repeat_slopes: Vec<f64>,
    pub flags: Vec<String>,
}

/// Parameters of `convergence_study`.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub m_list: Vec<usize>,
    pub repeats: usize,
    pub l_obs: usize,
    pub t_final: f64,
    pub integrator: IntegratorConfig,
    pub basis_degree: usize,
    pub seed: u64,
}

fn lsq_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let den: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    num / den
}

/// Learns on nested datasets of increasing M (per repeat, prefixes of one
/// master dataset) with the basis dimension following the `n_star` rule,
/// and fits the log-log slope of relative error against M. Errors are
/// measured against the master dataset's empirical measure.
pub fn convergence_study(
    model: &ModelSpec,
    ic: &IcSpec,
    study: &StudyConfig,
) -> Result<StudyResult> {
    if study.m_list.len() < 3 {
        return Err(Error::InvalidModel(
            "the convergence study needs at least three M values".into(),
        ));
    }
    if model.kernels.n_types != 1 {
        return Err(Error::InvalidModel(
            "the convergence study covers homogeneous systems".into(),
        ));
    }
    let mut m_list = study.m_list.clone();
    m_list.sort_unstable();
    let m_max = *m_list.last().unwrap();
    let truth = model.kernels.get(0, 0);
    let n_agents = model.n_agents();
    let dim = model.manifold.dim;

    let mut flags: Vec<String> = Vec::new();
    let mut per_repeat_slopes = Vec::with_capacity(study.repeats);
    let mut errors = vec![Vec::with_capacity(study.repeats); m_list.len()];
    let mut n_used = vec![0usize; m_list.len()];
    for rep in 0..study.repeats {
        let seed = study.seed.wrapping_add(0x9E3779B97F4A7C15u64.wrapping_mul(rep as u64 + 1));
        let master = integrate::generate_dataset(
            model,
            ic,
            m_max,
            study.l_obs,
            study.t_final,
            study.integrator,
            seed,
        )?;
        let mu = rho_empirical(&master, None)?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (j, &m) in m_list.iter().enumerate() {
            let subset = master.prefix(m);
            let n_basis = basis::n_star(m, study.l_obs, n_agents, dim)?;
            n_used[j] = n_basis;
            let set = learn::fit(&subset, &[n_basis], &[study.basis_degree])?;
            let err = rel_error(set.get(0, 0), truth, &mu);
            if !err.value.is_finite() {
                flags.push(format!("non-finite error at M={m} repeat {rep}"));
                continue;
            }
            errors[j].push(err.value);
            xs.push((m as f64).ln());
            ys.push(err.value.max(1e-300).ln());
        }
        if xs.len() >= 2 {
            per_repeat_slopes.push(lsq_slope(&xs, &ys));
        } else {
            flags.push(format!("degenerate fit in repeat {rep}"));
        }
    }

    let points: Vec<StudyPoint> = m_list
        .iter()
        .zip(&errors)
        .zip(&n_used)
        .map(|((&m, errs), &n_basis)| {
            let n = errs.len().max(1) as f64;
            let mean = errs.iter().sum::<f64>() / n;
            let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
            StudyPoint {
                m_traj: m,
                n_basis,
                mean_rel_error: mean,
                std_rel_error: var.sqrt(),
            }
        })
        .collect();

    if points.iter().all(|p| p.mean_rel_error < 1e-8) {
        flags.push("floor-limited: errors at the solver floor".into());
    }
    let n_rep = per_repeat_slopes.len().max(1) as f64;
    let slope = per_repeat_slopes.iter().sum::<f64>() / n_rep;
    let slope_var = per_repeat_slopes
        .iter()
        .map(|s| (s - slope) * (s - slope))
        .sum::<f64>()
        / n_rep;
    if slope.abs() < 0.05 {
        flags.push("flat-slope: no error decay with M".into());
    }
    Ok(StudyResult {
        points,
        slope,
        ci_half_width: 2.0 * slope_var.sqrt() / n_rep.sqrt(),
        per_repeat_slopes,
        flags,
    })
}
