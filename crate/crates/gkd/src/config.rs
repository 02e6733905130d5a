//! Experiment configuration: a flat TOML file with one section per
//! subsystem, mirroring the parameter tables the experiments come from.
//! `ExperimentConfig` is the raw file; `Experiment` is the validated,
//! ready-to-run form.

use serde::{Deserialize, Serialize};

use crate::dynamics::ModelSpec;
use crate::geometry::{DistanceConvention, IcSpec, Manifold};
use crate::integrate::{IntegratorConfig, Scheme};
use crate::kernels::{self, KernelMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifold: ManifoldSection,
    pub dynamics: DynamicsSection,
    pub integrator: IntegratorSection,
    pub observation: ObservationSection,
    pub initial: InitialSection,
    pub basis: BasisSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSection {
    /// "euclidean" | "sphere" | "poincare"
    pub kind: String,
    /// Sphere radius (required for the sphere).
    pub radius: Option<f64>,
    /// "paper" | "factor2" (Poincaré only; default "paper").
    pub distance_convention: Option<String>,
    /// Interaction-radius cap; omitted means unbounded.
    pub r_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    /// "od" | "lj" | "ps1"
    pub name: String,
    pub epsilon: Option<f64>,
    pub sigma: Option<f64>,
    /// Agents per type; one entry for homogeneous systems, `[preys, 1]`
    /// for the predator-swarm system.
    pub type_counts: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    /// "rk4p" | "bdf4p"
    pub scheme: String,
    pub h: f64,
    pub startup_steps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSection {
    pub t_final: f64,
    pub l_obs: usize,
    pub m_traj: usize,
    /// Trajectory count for measure-only datasets (`rho` runs); defaults to
    /// `m_traj`.
    pub m_rho: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// "uniform_sphere" | "hyperbolic_ball" | "ps1_sphere" | "ps1_poincare"
    /// | "euclidean_ball"
    pub spec: String,
    /// Geodesic diameter for "hyperbolic_ball".
    pub diameter: Option<f64>,
    /// Euclidean radius for "euclidean_ball".
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    /// Basis dimensions, row-major over type pairs (one entry when
    /// homogeneous).
    pub n: Vec<usize>,
    pub degree: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Agent count of the transfer run (default `2 N`).
    pub transfer_n: Option<usize>,
    /// Fresh initial conditions for evaluation (default 20).
    pub fresh_ics: Option<usize>,
}

/// Validated, ready-to-run experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: ModelSpec,
    pub ic: IcSpec,
    pub integrator: IntegratorConfig,
    pub t_final: f64,
    pub l_obs: usize,
    pub m_traj: usize,
    pub m_rho: usize,
    pub ns: Vec<usize>,
    pub degrees: Vec<usize>,
    pub seed: u64,
    pub transfer_n: usize,
    pub fresh_ics: usize,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn build(&self) -> Result<Experiment> {
        let r_max = self.manifold.r_max.unwrap_or(f64::INFINITY);
        let convention = match self.manifold.distance_convention.as_deref() {
            None | Some("paper") => DistanceConvention::PaperFormula,
            Some("factor2") => DistanceConvention::Factor2,
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown distance convention '{other}'"
                )))
            }
        };
        let manifold = match self.manifold.kind.as_str() {
            "euclidean" => Manifold::euclidean(r_max)?,
            "sphere" => {
                let radius = self.manifold.radius.ok_or_else(|| {
                    Error::Config("sphere manifold needs a radius".into())
                })?;
                Manifold::sphere(radius, r_max)?
            }
            "poincare" => Manifold::poincare(convention, r_max)?,
            other => return Err(Error::Config(format!("unknown manifold kind '{other}'"))),
        };

        let counts = &self.dynamics.type_counts;
        let kernels: KernelMatrix = match self.dynamics.name.as_str() {
            "od" => {
                if counts.len() != 1 {
                    return Err(Error::Config("od is a single-type system".into()));
                }
                KernelMatrix::homogeneous(kernels::make_od())
            }
            "lj" => {
                if counts.len() != 1 {
                    return Err(Error::Config("lj is a single-type system".into()));
                }
                let eps = self
                    .dynamics
                    .epsilon
                    .ok_or_else(|| Error::Config("lj needs epsilon".into()))?;
                let sigma = self
                    .dynamics
                    .sigma
                    .ok_or_else(|| Error::Config("lj needs sigma".into()))?;
                KernelMatrix::homogeneous(kernels::make_lj(eps, sigma, r_max)?)
            }
            "ps1" => {
                if counts.len() != 2 || counts[1] != 1 {
                    return Err(Error::Config(
                        "ps1 needs type_counts = [preys, 1] (a single predator)".into(),
                    ));
                }
                kernels::make_ps1(r_max)?
            }
            other => return Err(Error::Config(format!("unknown dynamics '{other}'"))),
        };
        let model = ModelSpec::new(manifold, kernels, counts.clone())?;

        let ic = match self.initial.spec.as_str() {
            "uniform_sphere" => IcSpec::UniformSphere,
            "hyperbolic_ball" => IcSpec::HyperbolicBall {
                diameter: self
                    .initial
                    .diameter
                    .ok_or_else(|| Error::Config("hyperbolic_ball needs diameter".into()))?,
            },
            "ps1_sphere" => IcSpec::Ps1Sphere,
            "ps1_poincare" => IcSpec::Ps1Poincare,
            "euclidean_ball" => IcSpec::EuclideanBall {
                radius: self
                    .initial
                    .radius
                    .ok_or_else(|| Error::Config("euclidean_ball needs radius".into()))?,
            },
            other => return Err(Error::UnknownIcSpec(other.into())),
        };

        let scheme = match self.integrator.scheme.as_str() {
            "rk4p" => Scheme::Rk4p,
            "bdf4p" => Scheme::Bdf4p,
            other => return Err(Error::Config(format!("unknown scheme '{other}'"))),
        };
        let integrator = IntegratorConfig {
            scheme,
            h: self.integrator.h,
            startup_steps: self.integrator.startup_steps.unwrap_or(3),
        };
        integrator.validate()?;
        if self.integrator.h > self.observation.t_final {
            return Err(Error::Config(format!(
                "step size {} exceeds the horizon {}",
                self.integrator.h, self.observation.t_final
            )));
        }
        if self.observation.l_obs < 2 {
            return Err(Error::Config("need at least two observation times".into()));
        }
        if self.observation.m_traj < 1 {
            return Err(Error::Config("need at least one trajectory".into()));
        }

        let kt = model.kernels.n_types;
        if self.basis.n.len() != kt * kt || self.basis.degree.len() != kt * kt {
            return Err(Error::Config(format!(
                "basis.n and basis.degree need {} entries for {} types",
                kt * kt,
                kt
            )));
        }

        let n_agents = model.n_agents();
        Ok(Experiment {
            ic,
            integrator,
            t_final: self.observation.t_final,
            l_obs: self.observation.l_obs,
            m_traj: self.observation.m_traj,
            m_rho: self.observation.m_rho.unwrap_or(self.observation.m_traj),
            ns: self.basis.n.clone(),
            degrees: self.basis.degree.clone(),
            seed: self.run.seed,
            transfer_n: self.run.transfer_n.unwrap_or(2 * n_agents),
            fresh_ics: self.run.fresh_ics.unwrap_or(20),
            model,
        })
    }
}

impl Experiment {
    /// The same dynamics with a different agent count (transfer runs). The
    /// predator-swarm layout keeps its single predator.
    pub fn model_with_agents(&self, n_agents: usize) -> Result<ModelSpec> {
        let counts = if self.model.kernels.n_types == 1 {
            vec![n_agents]
        } else {
            if n_agents < 2 {
                return Err(Error::InvalidModel("transfer needs at least 2 agents".into()));
            }
            vec![n_agents - 1, 1]
        };
        ModelSpec::new(self.model.manifold.clone(), self.model.kernels.clone(), counts)
    }
}
