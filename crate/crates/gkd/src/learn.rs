//! Geometric least squares for the interaction kernel: assembles the
//! learning matrix `A` and right-hand side `b` from trajectory data via
//! metric inner products of per-agent regression fields, solves the normal
//! equations, and extends to heterogeneous (multi-type) systems.
//!
//! All normalizations are folded into a single `1/(L M N)` convention: with
//! the product-metric factor `1/N` this makes `A alpha = b` exactly the
//! stationarity condition of the empirical loss.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{self, Estimator, SplineBasis, MAX_DEGREE};
use crate::dynamics;
use crate::geometry::{self, Manifold, ManifoldKind, Vec3};
use crate::integrate::TrajectoryDataset;
use crate::kernels::{KernelMatrix, PiecewiseKernel};
use crate::{Error, Result};

/// One coefficient block of a per-observer-type system: the columns for the
/// influence of `partner`-type agents on `observer`-type agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub observer: usize,
    pub partner: usize,
    pub offset: usize,
    pub n: usize,
}

/// Assembled normal equations with the `1/(L M N)` scale already applied.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `(1/LMN) sum |xdot|_g^2`; lets the loss at the solution be recovered
    /// as `rhs_norm - 2 b.alpha + alpha.A.alpha`.
    pub rhs_norm: f64,
    /// Observed distances that fell outside the basis range (contributing
    /// zero, counted rather than erroring).
    pub out_of_range: u64,
    pub blocks: Vec<Block>,
    pub timings: AssemblyTimings,
}

/// Cumulative per-phase work across worker threads.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct AssemblyTimings {
    pub pairwise_secs: f64,
    pub assembly_secs: f64,
    pub solve_secs: f64,
}

/// Solve diagnostics and the fitted coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnReport {
    pub coeffs: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub cond: f64,
    /// Value of the empirical loss at the fitted coefficients.
    pub residual_loss: f64,
    /// `|A alpha - b| / max(|b|, tiny)`.
    pub solve_residual: f64,
    /// True when the spectral-cutoff minimum-norm fallback was used.
    pub flagged_min_norm: bool,
    pub out_of_range: u64,
    pub timings: AssemblyTimings,
}

fn metric_factor(manifold: &Manifold, x: &Vec3) -> f64 {
    match manifold.kind {
        ManifoldKind::PoincareDisk => {
            let f = 1.0 - x.norm_squared();
            4.0 / (f * f)
        }
        _ => 1.0,
    }
}

struct PartialSums {
    a: DMatrix<f64>,
    b: DVector<f64>,
    rhs_norm: f64,
    out_of_range: u64,
    pairwise: Duration,
    assembly: Duration,
}

/// Assembles the homogeneous (single-type) normal equations:
/// for every snapshot, `Psi_eta(i) = (1/N) sum_{i'} psi_eta(r_ii') w_ii'`,
/// then `A += (1/N) <Psi_eta(i), Psi_eta'(i)>_g` and
/// `b += (1/N) <xdot_i, Psi_eta(i)>_g`, scaled by `1/(L M)` at the end.
pub fn assemble(ds: &TrajectoryDataset, basis: &SplineBasis) -> Result<NormalEquations> {
    if ds.n_types != 1 {
        return Err(Error::InvalidDataset(
            "assemble expects a homogeneous dataset; use assemble_hetero".into(),
        ));
    }
    let n_basis = basis.n;
    let n_agents = ds.n_agents();
    let manifold = &ds.manifold;
    let inv_n = 1.0 / n_agents as f64;

    let partials: Vec<PartialSums> = ds
        .trajectories
        .par_iter()
        .map(|traj| {
            let mut p = PartialSums {
                a: DMatrix::zeros(n_basis, n_basis),
                b: DVector::zeros(n_basis),
                rhs_norm: 0.0,
                out_of_range: 0,
                pairwise: Duration::ZERO,
                assembly: Duration::ZERO,
            };
            let mut psi_row = vec![Vec3::zeros(); n_basis];
            let mut marker = vec![false; n_basis];
            let mut touched: Vec<usize> = Vec::with_capacity(2 * n_agents * (MAX_DEGREE + 1));
            let mut vals = [0.0; MAX_DEGREE + 1];
            for (points, vels) in traj.positions.iter().zip(&traj.velocities) {
                let t0 = Instant::now();
                let dists = dynamics::distance_matrix(manifold, points);
                p.pairwise += t0.elapsed();
                let t1 = Instant::now();
                for i in 0..n_agents {
                    for &eta in &touched {
                        psi_row[eta] = Vec3::zeros();
                        marker[eta] = false;
                    }
                    touched.clear();
                    for ip in 0..n_agents {
                        if ip == i {
                            continue;
                        }
                        let r = dists[i * n_agents + ip];
                        match basis.nonzero_at(r, &mut vals) {
                            Some(start) => {
                                let w = geometry::log_weight(manifold, &points[i], &points[ip]);
                                for (k, &v) in vals[..=basis.degree].iter().enumerate() {
                                    let eta = start + k;
                                    if !marker[eta] {
                                        marker[eta] = true;
                                        touched.push(eta);
                                    }
                                    psi_row[eta] += w.vec * (v * inv_n);
                                }
                            }
                            None => p.out_of_range += 1,
                        }
                    }
                    touched.sort_unstable();
                    let gf = metric_factor(manifold, &points[i]) * inv_n;
                    p.rhs_norm += gf * vels[i].norm_squared();
                    for (slot, &eta) in touched.iter().enumerate() {
                        p.b[eta] += gf * vels[i].dot(&psi_row[eta]);
                        for &eta2 in &touched[slot..] {
                            p.a[(eta, eta2)] += gf * psi_row[eta].dot(&psi_row[eta2]);
                        }
                    }
                }
                p.assembly += t1.elapsed();
            }
            p
        })
        .collect();

    finalize(
        partials,
        ds.m_traj(),
        ds.l_obs(),
        vec![Block {
            observer: 0,
            partner: 0,
            offset: 0,
            n: n_basis,
        }],
    )
}

fn finalize(
    partials: Vec<PartialSums>,
    m_traj: usize,
    l_obs: usize,
    blocks: Vec<Block>,
) -> Result<NormalEquations> {
    let dim = partials.first().map(|p| p.a.nrows()).unwrap_or(0);
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    let mut rhs_norm = 0.0;
    let mut out_of_range = 0;
    let mut timings = AssemblyTimings::default();
    // fixed reduction order keeps the result independent of thread count
    for p in partials {
        a += p.a;
        b += p.b;
        rhs_norm += p.rhs_norm;
        out_of_range += p.out_of_range;
        timings.pairwise_secs += p.pairwise.as_secs_f64();
        timings.assembly_secs += p.assembly.as_secs_f64();
    }
    let scale = 1.0 / (m_traj as f64 * l_obs as f64);
    a *= scale;
    b *= scale;
    rhs_norm *= scale;
    for eta in 0..dim {
        for eta2 in (eta + 1)..dim {
            a[(eta2, eta)] = a[(eta, eta2)];
        }
    }
    Ok(NormalEquations {
        a,
        b,
        rhs_norm,
        out_of_range,
        blocks,
        timings,
    })
}

/// Counts of agents per type, from the label array.
fn type_counts(ds: &TrajectoryDataset) -> Vec<usize> {
    let mut counts = vec![0usize; ds.n_types];
    for &t in &ds.types {
        counts[t] += 1;
    }
    counts
}

/// Whether any ordered pair (observer of type `k`, partner of type `kp`,
/// distinct agents) exists.
pub fn pair_populated(counts: &[usize], k: usize, kp: usize) -> bool {
    if k == kp {
        counts[k] >= 2
    } else {
        counts[k] >= 1 && counts[kp] >= 1
    }
}

/// One per-observer-type system of a heterogeneous fit.
#[derive(Debug, Clone)]
pub struct TypeSystem {
    pub observer: usize,
    pub ne: NormalEquations,
}

/// Assembles one block system per observer type `k` over the concatenated
/// coefficients of the kernels `{phi_{k, k'}}_{k'}`. Pairs with no agent
/// population (such as predator-predator with a single predator) collapse to
/// zero-dimension blocks and are excluded from the system.
pub fn assemble_hetero(ds: &TrajectoryDataset, bases: &[SplineBasis]) -> Result<Vec<TypeSystem>> {
    let kt = ds.n_types;
    if bases.len() != kt * kt {
        return Err(Error::InvalidBasis(format!(
            "expected {} pair bases, got {}",
            kt * kt,
            bases.len()
        )));
    }
    if ds.types.iter().any(|&t| t >= kt) {
        return Err(Error::InvalidDataset("type label out of range".into()));
    }
    let counts = type_counts(ds);
    let n_agents = ds.n_agents();
    let manifold = &ds.manifold;
    let inv_n = 1.0 / n_agents as f64;

    let mut systems = Vec::with_capacity(kt);
    for k in 0..kt {
        let mut blocks = Vec::new();
        let mut offset = 0;
        for kp in 0..kt {
            if pair_populated(&counts, k, kp) {
                let n = bases[k * kt + kp].n;
                blocks.push(Block { observer: k, partner: kp, offset, n });
                offset += n;
            } else {
                blocks.push(Block { observer: k, partner: kp, offset, n: 0 });
            }
        }
        let dim = offset;

        let partials: Vec<PartialSums> = ds
            .trajectories
            .par_iter()
            .map(|traj| {
                let mut p = PartialSums {
                    a: DMatrix::zeros(dim, dim),
                    b: DVector::zeros(dim),
                    rhs_norm: 0.0,
                    out_of_range: 0,
                    pairwise: Duration::ZERO,
                    assembly: Duration::ZERO,
                };
                let mut psi_row = vec![Vec3::zeros(); dim];
                let mut marker = vec![false; dim];
                let mut touched: Vec<usize> = Vec::new();
                let mut vals = [0.0; MAX_DEGREE + 1];
                for (points, vels) in traj.positions.iter().zip(&traj.velocities) {
                    let t0 = Instant::now();
                    let dists = dynamics::distance_matrix(manifold, points);
                    p.pairwise += t0.elapsed();
                    let t1 = Instant::now();
                    for i in 0..n_agents {
                        if ds.types[i] != k {
                            continue;
                        }
                        for &eta in &touched {
                            psi_row[eta] = Vec3::zeros();
                            marker[eta] = false;
                        }
                        touched.clear();
                        for ip in 0..n_agents {
                            if ip == i {
                                continue;
                            }
                            let kp = ds.types[ip];
                            let block = blocks[kp];
                            if block.n == 0 {
                                continue;
                            }
                            let pair_basis = &bases[k * kt + kp];
                            let r = dists[i * n_agents + ip];
                            match pair_basis.nonzero_at(r, &mut vals) {
                                Some(start) => {
                                    let w =
                                        geometry::log_weight(manifold, &points[i], &points[ip]);
                                    for (kk, &v) in
                                        vals[..=pair_basis.degree].iter().enumerate()
                                    {
                                        let eta = block.offset + start + kk;
                                        if !marker[eta] {
                                            marker[eta] = true;
                                            touched.push(eta);
                                        }
                                        psi_row[eta] += w.vec * (v * inv_n);
                                    }
                                }
                                None => p.out_of_range += 1,
                            }
                        }
                        touched.sort_unstable();
                        let gf = metric_factor(manifold, &points[i]) * inv_n;
                        p.rhs_norm += gf * vels[i].norm_squared();
                        for (slot, &eta) in touched.iter().enumerate() {
                            p.b[eta] += gf * vels[i].dot(&psi_row[eta]);
                            for &eta2 in &touched[slot..] {
                                p.a[(eta, eta2)] += gf * psi_row[eta].dot(&psi_row[eta2]);
                            }
                        }
                    }
                    p.assembly += t1.elapsed();
                }
                p
            })
            .collect();

        let ne = finalize(partials, ds.m_traj(), ds.l_obs(), blocks)?;
        systems.push(TypeSystem { observer: k, ne });
    }
    Ok(systems)
}

/// Symmetric positive-definite solve with a flagged spectral-cutoff
/// minimum-norm fallback on near-singular systems. Reports the extreme
/// eigenvalues, condition number, and the loss at the solution.
pub fn solve(ne: &NormalEquations) -> Result<LearnReport> {
    let t0 = Instant::now();
    let dim = ne.a.nrows();
    if ne.a.iter().any(|v| !v.is_finite()) || ne.b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteSystem);
    }
    if dim == 0 {
        return Ok(LearnReport {
            coeffs: Vec::new(),
            lambda_min: 0.0,
            lambda_max: 0.0,
            cond: f64::INFINITY,
            residual_loss: ne.rhs_norm,
            solve_residual: 0.0,
            flagged_min_norm: false,
            out_of_range: ne.out_of_range,
            timings: ne.timings,
        });
    }
    let eig = ne.a.clone().symmetric_eigen();
    let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let lambda_max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = 1e-12 * lambda_max.max(0.0);
    let well_posed = lambda_min > cutoff && lambda_min > 0.0;
    let (alpha, flagged) = if well_posed {
        match ne.a.clone().cholesky() {
            Some(chol) => (chol.solve(&ne.b), false),
            None => (spectral_solve(&eig, &ne.b, cutoff), true),
        }
    } else {
        (spectral_solve(&eig, &ne.b, cutoff), true)
    };
    let resid = (&ne.a * &alpha - &ne.b).norm();
    let bnorm = ne.b.norm().max(f64::MIN_POSITIVE);
    let residual_loss =
        (ne.rhs_norm - 2.0 * ne.b.dot(&alpha) + (&ne.a * &alpha).dot(&alpha)).max(0.0);
    let cond = if lambda_min > 0.0 {
        lambda_max / lambda_min
    } else {
        f64::INFINITY
    };
    let mut timings = ne.timings;
    timings.solve_secs = t0.elapsed().as_secs_f64();
    Ok(LearnReport {
        coeffs: alpha.iter().cloned().collect(),
        lambda_min,
        lambda_max,
        cond,
        residual_loss,
        solve_residual: resid / bnorm,
        flagged_min_norm: flagged,
        out_of_range: ne.out_of_range,
        timings,
    })
}

fn spectral_solve(
    eig: &nalgebra::SymmetricEigen<f64, nalgebra::Dyn>,
    b: &DVector<f64>,
    cutoff: f64,
) -> DVector<f64> {
    let mut alpha = DVector::zeros(b.len());
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let q = eig.eigenvectors.column(j);
            alpha += q * (q.dot(b) / lambda);
        }
    }
    alpha
}

/// Empirical loss of a kernel matrix on the dataset:
/// `(1/MLN) sum_{m,l,i} |xdot_i - f_i(phi)|_{g(x_i)}^2`.
pub fn loss(ds: &TrajectoryDataset, kernels: &KernelMatrix) -> Result<f64> {
    if kernels.n_types != ds.n_types {
        return Err(Error::InvalidDataset(format!(
            "kernel matrix has {} types, dataset {}",
            kernels.n_types, ds.n_types
        )));
    }
    let n_agents = ds.n_agents();
    let inv_n = 1.0 / n_agents as f64;
    let total: f64 = ds
        .trajectories
        .par_iter()
        .map(|traj| {
            let mut acc = 0.0;
            for (points, vels) in traj.positions.iter().zip(&traj.velocities) {
                let field = dynamics::velocity_field(&ds.manifold, kernels, points, &ds.types);
                for i in 0..n_agents {
                    let diff = vels[i] - field[i].vec;
                    acc += metric_factor(&ds.manifold, &points[i]) * diff.norm_squared() * inv_n;
                }
            }
            acc
        })
        .sum();
    Ok(total / (ds.m_traj() as f64 * ds.l_obs() as f64))
}

/// Learned kernels for every type pair plus per-observer-type reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSet {
    pub n_types: usize,
    /// Row-major `(k, k')` estimators.
    pub estimators: Vec<Estimator>,
    /// One report per observer type.
    pub reports: Vec<LearnReport>,
}

impl EstimatorSet {
    pub fn get(&self, k: usize, kp: usize) -> &Estimator {
        &self.estimators[k * self.n_types + kp]
    }

    /// Piecewise kernel matrix of the estimators, optionally smoothed for
    /// driving the dynamics.
    pub fn to_kernel_matrix(&self, smoothed: bool) -> Result<KernelMatrix> {
        let kernels: Vec<PiecewiseKernel> = self
            .estimators
            .iter()
            .map(|e| {
                if smoothed {
                    basis::smooth(e).to_piecewise()
                } else {
                    e.to_piecewise()
                }
            })
            .collect::<Result<_>>()?;
        KernelMatrix::new(self.n_types, kernels)
    }
}

/// Observed distance range restricted to one ordered type pair.
pub fn observed_range_pair(ds: &TrajectoryDataset, k: usize, kp: usize) -> Result<(f64, f64)> {
    let n = ds.n_agents();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for traj in &ds.trajectories {
        for pts in &traj.positions {
            for i in 0..n {
                if ds.types[i] != k {
                    continue;
                }
                for ip in 0..n {
                    if ip == i || ds.types[ip] != kp {
                        continue;
                    }
                    let d = geometry::distance(&ds.manifold, &pts[i], &pts[ip]);
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
            }
        }
    }
    if !lo.is_finite() {
        return Err(Error::InvalidDataset(format!(
            "no observed pairs for types ({k}, {kp})"
        )));
    }
    Ok((lo, hi))
}

/// End-to-end fit: builds each pair basis on its observed range (`ns` and
/// `degrees` are row-major `K x K`, or length 1 for homogeneous data),
/// assembles, solves, and packages the estimators.
pub fn fit(ds: &TrajectoryDataset, ns: &[usize], degrees: &[usize]) -> Result<EstimatorSet> {
    let kt = ds.n_types;
    if ns.len() != kt * kt || degrees.len() != kt * kt {
        return Err(Error::InvalidBasis(format!(
            "need {} basis sizes and degrees, got {} and {}",
            kt * kt,
            ns.len(),
            degrees.len()
        )));
    }
    if kt == 1 {
        let (rmin, rmax) = basis::observed_range(ds)?;
        let sb = SplineBasis::build(rmin, rmax, ns[0], degrees[0])?;
        let ne = assemble(ds, &sb)?;
        let report = solve(&ne)?;
        let est = Estimator::new(sb, report.coeffs.clone())?;
        return Ok(EstimatorSet {
            n_types: 1,
            estimators: vec![est],
            reports: vec![report],
        });
    }

    let counts = type_counts(ds);
    let (glob_lo, glob_hi) = basis::observed_range(ds)?;
    let mut bases = Vec::with_capacity(kt * kt);
    for k in 0..kt {
        for kp in 0..kt {
            let (lo, hi) = if pair_populated(&counts, k, kp) {
                observed_range_pair(ds, k, kp)?
            } else {
                (glob_lo, glob_hi)
            };
            bases.push(SplineBasis::build(lo, hi, ns[k * kt + kp], degrees[k * kt + kp])?);
        }
    }
    let systems = assemble_hetero(ds, &bases)?;
    let mut estimators: Vec<Option<Estimator>> = vec![None; kt * kt];
    let mut reports = Vec::with_capacity(kt);
    for sys in &systems {
        let report = solve(&sys.ne)?;
        for block in &sys.ne.blocks {
            let idx = block.observer * kt + block.partner;
            let est = if block.n == 0 {
                let sb = &bases[idx];
                Estimator::zero(sb.rmin, sb.rmax)
            } else {
                Estimator::new(
                    bases[idx].clone(),
                    report.coeffs[block.offset..block.offset + block.n].to_vec(),
                )?
            };
            estimators[idx] = Some(est);
        }
        reports.push(report);
    }
    Ok(EstimatorSet {
        n_types: kt,
        estimators: estimators.into_iter().map(Option::unwrap).collect(),
        reports,
    })
}
