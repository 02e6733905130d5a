//! Right-hand side of the interacting-agent ODE on `M^N` for homogeneous and
//! heterogeneous systems, and the pairwise system energy used by the
//! gradient-flow checks.

use crate::geometry::{self, Manifold, Tangent, Vec3};
use crate::kernels::KernelMatrix;
use crate::{Error, Result};

/// Positions and type labels of all agents at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub points: Vec<Vec3>,
    /// 0-based type index per agent.
    pub types: Vec<usize>,
    pub time: f64,
}

/// Manifold, kernel matrix, and agent counts per type. Agents are laid out
/// blockwise: the first `type_counts[0]` agents are type 0, and so on.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub manifold: Manifold,
    pub kernels: KernelMatrix,
    pub type_counts: Vec<usize>,
}

impl ModelSpec {
    pub fn new(manifold: Manifold, kernels: KernelMatrix, type_counts: Vec<usize>) -> Result<Self> {
        if type_counts.len() != kernels.n_types {
            return Err(Error::InvalidModel(format!(
                "{} type counts for a {}-type kernel matrix",
                type_counts.len(),
                kernels.n_types
            )));
        }
        if type_counts.iter().sum::<usize>() < 2 {
            return Err(Error::InvalidModel("need at least two agents".into()));
        }
        Ok(ModelSpec {
            manifold,
            kernels,
            type_counts,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.type_counts.iter().sum()
    }

    /// Blockwise type labels implied by `type_counts`.
    pub fn type_labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_agents());
        for (k, &c) in self.type_counts.iter().enumerate() {
            out.extend(std::iter::repeat(k).take(c));
        }
        out
    }

    pub fn state(&self, points: Vec<Vec3>, time: f64) -> SystemState {
        SystemState {
            types: self.type_labels(),
            points,
            time,
        }
    }
}

/// Full pairwise geodesic distance matrix (row-major N x N), each unordered
/// pair computed once.
pub fn distance_matrix(manifold: &Manifold, points: &[Vec3]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for ip in (i + 1)..n {
            let dist = geometry::distance(manifold, &points[i], &points[ip]);
            d[i * n + ip] = dist;
            d[ip * n + i] = dist;
        }
    }
    d
}

/// The vector field
/// `f_i = (1/N) sum_{i'} phi_{k(i), k(i')}(d(x_i, x_{i'})) w(x_i, x_{i'})`,
/// one tangent per agent. The self term contributes zero through
/// `w(x, x) = 0`; pairs beyond a kernel's support are skipped outright.
pub fn velocity_field(
    manifold: &Manifold,
    kernels: &KernelMatrix,
    points: &[Vec3],
    types: &[usize],
) -> Vec<Tangent> {
    let n = points.len();
    let dists = distance_matrix(manifold, points);
    let inv_n = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = Vec3::zeros();
        for ip in 0..n {
            if ip == i {
                continue;
            }
            let phi = kernels.get(types[i], types[ip]).eval(dists[i * n + ip]);
            if phi == 0.0 {
                continue;
            }
            let w = geometry::log_weight(manifold, &points[i], &points[ip]);
            acc += w.vec * phi;
        }
        out.push(Tangent {
            base: points[i],
            vec: acc * inv_n,
        });
    }
    out
}

/// Evaluates the model ODE right-hand side at `state`.
pub fn rhs(model: &ModelSpec, state: &SystemState) -> Vec<Tangent> {
    velocity_field(&model.manifold, &model.kernels, &state.points, &state.types)
}

/// System energy `E = (1/N) sum_{i < i'} V(d(x_i, x_{i'}))` with
/// `V(d) = int_0^d u phi(u) du`; the dynamics are its (metric-consistent)
/// gradient flow. Defined for homogeneous models only.
pub fn energy(model: &ModelSpec, state: &SystemState) -> Result<f64> {
    if model.kernels.n_types != 1 {
        return Err(Error::InvalidModel(
            "energy is defined for homogeneous models only".into(),
        ));
    }
    let kernel = model.kernels.get(0, 0);
    let n = state.points.len();
    let mut acc = 0.0;
    for i in 0..n {
        for ip in (i + 1)..n {
            let d = geometry::distance(&model.manifold, &state.points[i], &state.points[ip]);
            acc += kernel.integral_r_phi(d);
        }
    }
    Ok(acc / n as f64)
}
