//! Points, tangent vectors, metric inner products, geodesic distances and
//! unit tangents, retractions, and initial-condition samplers for the
//! Euclidean plane, the 2-sphere, and the Poincaré disk.
//!
//! Points are carried in ambient coordinates: `R^3` for the sphere (natural
//! embedding), `R^2` for the disk and the plane (third coordinate fixed to
//! zero). All operations are pure; samplers take an explicit seeded
//! generator.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Ambient displacement below which two points are treated as coincident.
const COINCIDENT_TOL: f64 = 1e-14;
/// Sphere cut-locus band: zero tangent when the central angle exceeds
/// `pi - ANTIPODAL_TOL`. The kernels' compact support keeps dynamics away
/// from this band; it only matters for direct geometry calls.
const ANTIPODAL_TOL: f64 = 1e-6;
/// Relative threshold on the 2x2 determinant of `(y - x, y' - x)` deciding
/// the diameter branch of the disk geodesic; avoids catastrophic
/// cancellation in the circle construction.
const COLLINEAR_TOL: f64 = 1e-12;
/// Disk points are clamped to `norm <= 1 - DISK_GUARD` by `retract`.
pub const DISK_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldKind {
    Euclidean,
    Sphere,
    PoincareDisk,
}

/// Convention for the Poincaré-disk distance.
///
/// The disk metric `g = 4 delta_ij / (1 - |x|^2)^2` induces
/// `acosh(1 + 2 |x-y|^2 / ((1-|x|^2)(1-|y|^2)))` (`Factor2`), but the
/// formula without the factor 2 (`PaperFormula`) is kept as the default
/// because it is what the reference experiments evolve. Note that
/// `PaperFormula` is a strictly convex increasing transform of the metric
/// distance and therefore fails the triangle inequality; see the tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DistanceConvention {
    #[default]
    PaperFormula,
    Factor2,
}

/// Descriptor of one of the three supported model spaces plus the
/// interaction-radius cap `R_M` used when building kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifold {
    pub kind: ManifoldKind,
    /// Intrinsic dimension (2 for every implemented case).
    pub dim: usize,
    /// Sphere radius; 1.0 placeholder for the other kinds.
    pub radius: f64,
    /// Poincaré distance convention; ignored elsewhere.
    pub convention: DistanceConvention,
    /// Interaction-radius cap `R_M` (may be infinite).
    pub r_max: f64,
}

impl Manifold {
    pub fn euclidean(r_max: f64) -> Result<Self> {
        Self::validated(Manifold {
            kind: ManifoldKind::Euclidean,
            dim: 2,
            radius: 1.0,
            convention: DistanceConvention::default(),
            r_max,
        })
    }

    pub fn sphere(radius: f64, r_max: f64) -> Result<Self> {
        Self::validated(Manifold {
            kind: ManifoldKind::Sphere,
            dim: 2,
            radius,
            convention: DistanceConvention::default(),
            r_max,
        })
    }

    pub fn poincare(convention: DistanceConvention, r_max: f64) -> Result<Self> {
        Self::validated(Manifold {
            kind: ManifoldKind::PoincareDisk,
            dim: 2,
            radius: 1.0,
            convention,
            r_max,
        })
    }

    fn validated(m: Manifold) -> Result<Self> {
        if m.dim != 2 {
            return Err(Error::InvalidManifold(format!(
                "only intrinsic dimension 2 is implemented, got {}",
                m.dim
            )));
        }
        if m.kind == ManifoldKind::Sphere && !(m.radius > 0.0) {
            return Err(Error::InvalidManifold(format!(
                "sphere radius must be positive, got {}",
                m.radius
            )));
        }
        if !(m.r_max > 0.0) {
            return Err(Error::InvalidManifold(format!(
                "interaction radius cap must be positive, got {}",
                m.r_max
            )));
        }
        Ok(m)
    }

    /// Ambient coordinate count: 3 on the sphere, 2 otherwise.
    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Sphere => 3,
            _ => 2,
        }
    }

    /// Checks the point invariants (sphere norm residual, disk interior,
    /// vanishing third coordinate for planar kinds).
    pub fn check_point(&self, x: &Vec3) -> Result<()> {
        match self.kind {
            ManifoldKind::Sphere => {
                let res = (x.norm() - self.radius).abs();
                if res > 1e-10 {
                    return Err(Error::InvalidManifold(format!(
                        "point off the sphere by {res:.3e}"
                    )));
                }
            }
            ManifoldKind::PoincareDisk => {
                if x.z != 0.0 || x.norm() >= 1.0 {
                    return Err(Error::InvalidManifold(format!(
                        "point outside the open unit disk: norm {}",
                        x.norm()
                    )));
                }
            }
            ManifoldKind::Euclidean => {
                if x.z != 0.0 {
                    return Err(Error::InvalidManifold(
                        "planar point with nonzero third coordinate".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Tangent vector `vec` attached at `base`, in ambient coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent {
    pub base: Vec3,
    pub vec: Vec3,
}

impl Tangent {
    pub fn zero(base: Vec3) -> Self {
        Tangent {
            base,
            vec: Vec3::zeros(),
        }
    }
}

/// Geodesic distance between two points of `m`.
///
/// Sphere: `r * acos(<x,y> / (|x||y|))` with the argument clamped to
/// `[-1, 1]`. Disk: `acosh(1 + c q)` with
/// `q = |x-y|^2 / ((1-|x|^2)(1-|y|^2))` and `c = 1` (`PaperFormula`) or
/// `c = 2` (`Factor2`). Plane: `|x - y|`.
pub fn distance(m: &Manifold, x: &Vec3, y: &Vec3) -> f64 {
    match m.kind {
        ManifoldKind::Euclidean => (y - x).norm(),
        ManifoldKind::Sphere => {
            let c = (x.dot(y) / (x.norm() * y.norm())).clamp(-1.0, 1.0);
            m.radius * c.acos()
        }
        ManifoldKind::PoincareDisk => {
            let q = (x - y).norm_squared()
                / ((1.0 - x.norm_squared()) * (1.0 - y.norm_squared()));
            let scale = match m.convention {
                DistanceConvention::PaperFormula => 1.0,
                DistanceConvention::Factor2 => 2.0,
            };
            (1.0 + scale * q).acosh()
        }
    }
}

/// Metric inner product of two tangent vectors at `x`.
pub fn inner(m: &Manifold, x: &Vec3, u: &Vec3, z: &Vec3) -> f64 {
    match m.kind {
        ManifoldKind::Euclidean | ManifoldKind::Sphere => u.dot(z),
        ManifoldKind::PoincareDisk => {
            let f = 1.0 - x.norm_squared();
            4.0 * u.dot(z) / (f * f)
        }
    }
}

/// Metric norm of a tangent vector at `x`.
pub fn norm_g(m: &Manifold, x: &Vec3, u: &Vec3) -> f64 {
    inner(m, x, u, u).sqrt()
}

/// Unit tangent at `x` along the minimizing geodesic toward `y`
/// (`|v|_{g(x)} = 1`). Returns the zero tangent when the points coincide or
/// `y` lies in the cut locus of `x`.
pub fn unit_tangent(m: &Manifold, x: &Vec3, y: &Vec3) -> Tangent {
    let diff = y - x;
    if diff.norm() <= COINCIDENT_TOL {
        return Tangent::zero(*x);
    }
    match m.kind {
        ManifoldKind::Euclidean => Tangent {
            base: *x,
            vec: diff / diff.norm(),
        },
        ManifoldKind::Sphere => {
            let cosang = (x.dot(y) / (x.norm() * y.norm())).clamp(-1.0, 1.0);
            if cosang.acos() > std::f64::consts::PI - ANTIPODAL_TOL {
                return Tangent::zero(*x);
            }
            // Remove the radial component, then normalize (the ambient dot
            // product restricts to the round metric).
            let u = diff - x * (diff.dot(x) / x.norm_squared());
            let n = u.norm();
            if n <= COINCIDENT_TOL {
                return Tangent::zero(*x);
            }
            Tangent { base: *x, vec: u / n }
        }
        ManifoldKind::PoincareDisk => {
            let gx = 1.0 - x.norm_squared();
            if y.norm() <= COINCIDENT_TOL {
                // y at the origin: the geodesic is a diameter.
                return Tangent {
                    base: *x,
                    vec: diff * (gx / (2.0 * diff.norm())),
                };
            }
            // Inversion of y in the unit circle; x, y, y' collinear exactly
            // when x, y, and the origin are.
            let y_inv = y / y.norm_squared();
            let a = diff;
            let b = y_inv - x;
            let det = a.x * b.y - a.y * b.x;
            if det.abs() <= COLLINEAR_TOL * a.norm() * b.norm() {
                return Tangent {
                    base: *x,
                    vec: diff * (gx / (2.0 * diff.norm())),
                };
            }
            // Center of the circle through x, y, y' (the geodesic arc is
            // perpendicular to the boundary).
            let e1 = 0.5 * (y.norm_squared() - x.norm_squared());
            let e2 = 0.5 * (y_inv.norm_squared() - x.norm_squared());
            let ox = (e1 * b.y - e2 * a.y) / det;
            let oy = (a.x * e2 - b.x * e1) / det;
            let radial = Vec3::new(ox, oy, 0.0) - x;
            let u = diff - radial * (diff.dot(&radial) / radial.norm_squared());
            let n = u.norm();
            if n <= COINCIDENT_TOL {
                return Tangent::zero(*x);
            }
            Tangent {
                base: *x,
                vec: u * (gx / (2.0 * n)),
            }
        }
    }
}

/// Weight vector `w(x, y) = d(x, y) * v(x, y)`; zero at coincidence or the
/// cut locus. On the plane this is exactly `y - x`.
pub fn log_weight(m: &Manifold, x: &Vec3, y: &Vec3) -> Tangent {
    if m.kind == ManifoldKind::Euclidean {
        return Tangent {
            base: *x,
            vec: y - x,
        };
    }
    let v = unit_tangent(m, x, y);
    Tangent {
        base: v.base,
        vec: v.vec * distance(m, x, y),
    }
}

/// Sends the ambient step `x + step` back onto the manifold: radial
/// projection on the sphere, radial clamp to the open disk, identity on the
/// plane.
pub fn retract(m: &Manifold, x: &Vec3, step: &Vec3) -> Result<Vec3> {
    let s = x + step;
    match m.kind {
        ManifoldKind::Euclidean => Ok(s),
        ManifoldKind::Sphere => {
            let n = s.norm();
            if n < 1e-12 {
                return Err(Error::ProjectionUndefined { norm: n });
            }
            Ok(s * (m.radius / n))
        }
        ManifoldKind::PoincareDisk => {
            let n = s.norm();
            let cap = 1.0 - DISK_GUARD;
            if n > cap {
                Ok(s * (cap / n))
            } else {
                Ok(s)
            }
        }
    }
}

/// Initial-condition distributions used by the experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum IcSpec {
    /// Uniform on the sphere.
    UniformSphere,
    /// Uniform (in the chart) on the Euclidean ball of radius
    /// `hyperbolic_ball_radius(diameter)` of the disk.
    HyperbolicBall { diameter: f64 },
    /// Predator-swarm start on the sphere: predator in the plane disk of
    /// radius 0.1, preys in the annulus [0.3, 0.8], lifted by stereographic
    /// projection and rotated by a Haar-random rotation.
    Ps1Sphere,
    /// Predator-swarm start on the disk: predator within
    /// `hyperbolic_ball_radius(0.5)`, preys in the annulus between
    /// `hyperbolic_ball_radius(1)` and `hyperbolic_ball_radius(2)`.
    Ps1Poincare,
    /// Uniform on a Euclidean ball of the plane.
    EuclideanBall { radius: f64 },
}

/// Euclidean radius `r_0` of the disk ball used by the hyperbolic initial
/// conditions, as a function of the nominal geodesic diameter `d`:
///
/// ```text
/// r_0 = (2 + c - sqrt(4 c + c^2)) / 2,   c = 1 / (cosh(d) - 1)
/// ```
pub fn hyperbolic_ball_radius(diameter: f64) -> f64 {
    let c = 1.0 / (diameter.cosh() - 1.0);
    (2.0 + c - (4.0 * c + c * c).sqrt()) / 2.0
}

/// Draws `n` i.i.d. initial positions. For the predator-swarm specs the
/// last agent is the predator; all draws are made in agent order so the
/// output is a pure function of the generator state.
pub fn sample_initial<R: Rng>(m: &Manifold, spec: &IcSpec, n: usize, rng: &mut R) -> Result<Vec<Vec3>> {
    match spec {
        IcSpec::UniformSphere => {
            if m.kind != ManifoldKind::Sphere {
                return Err(Error::UnknownIcSpec(
                    "uniform_sphere requires a sphere manifold".into(),
                ));
            }
            Ok((0..n).map(|_| sample_sphere_point(m.radius, rng)).collect())
        }
        IcSpec::HyperbolicBall { diameter } => {
            if m.kind != ManifoldKind::PoincareDisk {
                return Err(Error::UnknownIcSpec(
                    "hyperbolic_ball requires a Poincaré-disk manifold".into(),
                ));
            }
            let r0 = hyperbolic_ball_radius(*diameter);
            Ok((0..n).map(|_| sample_disk_point(0.0, r0, rng)).collect())
        }
        IcSpec::EuclideanBall { radius } => {
            if m.kind != ManifoldKind::Euclidean {
                return Err(Error::UnknownIcSpec(
                    "euclidean_ball requires a Euclidean manifold".into(),
                ));
            }
            Ok((0..n).map(|_| sample_disk_point(0.0, *radius, rng)).collect())
        }
        IcSpec::Ps1Sphere => {
            if m.kind != ManifoldKind::Sphere || n < 2 {
                return Err(Error::UnknownIcSpec(
                    "ps1_sphere requires a sphere manifold and n >= 2".into(),
                ));
            }
            let mut planar: Vec<Vec3> = (0..n - 1)
                .map(|_| sample_disk_point(0.3, 0.8, rng))
                .collect();
            planar.push(sample_disk_point(0.0, 0.1, rng));
            let rot = random_rotation(rng);
            Ok(planar
                .iter()
                .map(|p| rot * stereographic_lift(m.radius, p))
                .collect())
        }
        IcSpec::Ps1Poincare => {
            if m.kind != ManifoldKind::PoincareDisk || n < 2 {
                return Err(Error::UnknownIcSpec(
                    "ps1_poincare requires a Poincaré-disk manifold and n >= 2".into(),
                ));
            }
            let inner = hyperbolic_ball_radius(1.0);
            let outer = hyperbolic_ball_radius(2.0);
            let predator = hyperbolic_ball_radius(0.5);
            let mut pts: Vec<Vec3> = (0..n - 1)
                .map(|_| sample_disk_point(inner, outer, rng))
                .collect();
            pts.push(sample_disk_point(0.0, predator, rng));
            Ok(pts)
        }
    }
}

fn sample_sphere_point<R: Rng>(radius: f64, rng: &mut R) -> Vec3 {
    let z = 2.0 * rng.gen::<f64>() - 1.0;
    let phi = std::f64::consts::TAU * rng.gen::<f64>();
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(radius * s * phi.cos(), radius * s * phi.sin(), radius * z)
}

/// Area-uniform draw from the planar annulus `r_lo <= |p| <= r_hi`.
fn sample_disk_point<R: Rng>(r_lo: f64, r_hi: f64, rng: &mut R) -> Vec3 {
    let u = rng.gen::<f64>();
    let rho = (r_lo * r_lo + u * (r_hi * r_hi - r_lo * r_lo)).sqrt();
    let theta = std::f64::consts::TAU * rng.gen::<f64>();
    Vec3::new(rho * theta.cos(), rho * theta.sin(), 0.0)
}

/// Inverse stereographic projection from the equatorial plane, mapping the
/// planar origin to the south pole of the sphere of radius `r`.
fn stereographic_lift(r: f64, p: &Vec3) -> Vec3 {
    let s = p.x * p.x + p.y * p.y;
    let denom = s + r * r;
    Vec3::new(
        2.0 * r * r * p.x / denom,
        2.0 * r * r * p.y / denom,
        r * (s - r * r) / denom,
    )
}

/// Haar-uniform rotation from a normalized Gaussian quaternion.
fn random_rotation<R: Rng>(rng: &mut R) -> nalgebra::Rotation3<f64> {
    let mut normals = [0.0; 4];
    for pair in normals.chunks_exact_mut(2) {
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        pair[0] = r * (std::f64::consts::TAU * u2).cos();
        pair[1] = r * (std::f64::consts::TAU * u2).sin();
    }
    let q = Quaternion::new(normals[0], normals[1], normals[2], normals[3]);
    UnitQuaternion::from_quaternion(q).to_rotation_matrix()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere() -> Manifold {
        Manifold::sphere(5.0 / std::f64::consts::PI, 5.0).unwrap()
    }

    fn disk(conv: DistanceConvention) -> Manifold {
        Manifold::poincare(conv, f64::INFINITY).unwrap()
    }

    fn plane() -> Manifold {
        Manifold::euclidean(f64::INFINITY).unwrap()
    }

    #[test]
    fn sphere_distance_antipodal_and_quarter() {
        let m = sphere();
        let r = m.radius;
        let x = Vec3::new(r, 0.0, 0.0);
        assert_relative_eq!(distance(&m, &x, &Vec3::new(-r, 0.0, 0.0)), 5.0, epsilon = 1e-12);
        assert_relative_eq!(distance(&m, &x, &Vec3::new(0.0, r, 0.0)), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn poincare_distance_matches_closed_form() {
        let m = disk(DistanceConvention::PaperFormula);
        let d = distance(&m, &Vec3::zeros(), &Vec3::new(0.5, 0.0, 0.0));
        // acosh(4/3), evaluated independently
        assert_relative_eq!(d, (4.0f64 / 3.0).acosh(), epsilon = 1e-15);
        assert_relative_eq!(d, 0.795365, epsilon = 1e-6);
    }

    #[test]
    fn factor2_distance_is_two_atanh() {
        let m = disk(DistanceConvention::Factor2);
        for t in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
            let d = distance(&m, &Vec3::zeros(), &Vec3::new(t, 0.0, 0.0));
            assert_relative_eq!(d, 2.0 * t.atanh(), epsilon = 1e-10);
        }
    }

    #[test]
    fn sphere_unit_tangent_quarter_circle() {
        let m = sphere();
        let r = m.radius;
        let v = unit_tangent(&m, &Vec3::new(r, 0.0, 0.0), &Vec3::new(0.0, r, 0.0));
        assert_relative_eq!(v.vec.x, 0.0, epsilon = 1e-14);
        assert_relative_eq!(v.vec.y, 1.0, epsilon = 1e-14);
        assert_relative_eq!(v.vec.z, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn coincident_and_antipodal_give_zero() {
        let m = sphere();
        let r = m.radius;
        let x = Vec3::new(r, 0.0, 0.0);
        assert_eq!(unit_tangent(&m, &x, &x).vec, Vec3::zeros());
        let w = log_weight(&m, &x, &Vec3::new(-r, 0.0, 0.0));
        assert_eq!(w.vec, Vec3::zeros());
        // distance is still the half-circumference
        assert_relative_eq!(distance(&m, &x, &Vec3::new(-r, 0.0, 0.0)), 5.0);
    }

    #[test]
    fn poincare_unit_tangent_at_origin() {
        let m = disk(DistanceConvention::PaperFormula);
        let v = unit_tangent(&m, &Vec3::zeros(), &Vec3::new(0.5, 0.0, 0.0));
        // diameters are geodesics; |u|_g = 2|u| at the origin
        assert_relative_eq!(v.vec.x, 0.5, epsilon = 1e-14);
        assert_relative_eq!(v.vec.y, 0.0, epsilon = 1e-14);
        let w = log_weight(&m, &Vec3::zeros(), &Vec3::new(0.5, 0.0, 0.0));
        assert_relative_eq!(w.vec.x, 0.397683, epsilon = 1e-6);
        assert_relative_eq!(
            norm_g(&m, &Vec3::zeros(), &w.vec),
            distance(&m, &Vec3::zeros(), &Vec3::new(0.5, 0.0, 0.0)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn poincare_metric_factors() {
        let m = disk(DistanceConvention::PaperFormula);
        let e1 = Vec3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(inner(&m, &Vec3::zeros(), &e1, &e1), 4.0);
        let x = Vec3::new(0.5, 0.0, 0.0);
        assert_relative_eq!(inner(&m, &x, &e1, &e1), 4.0 / (0.75 * 0.75), epsilon = 1e-12);
    }

    #[test]
    fn sphere_inner_orthogonal() {
        let m = sphere();
        let x = Vec3::new(m.radius, 0.0, 0.0);
        assert_eq!(
            inner(&m, &x, &Vec3::new(0.0, 1.0, 0.0), &Vec3::new(0.0, 0.0, 1.0)),
            0.0
        );
    }

    #[test]
    fn retract_examples() {
        let unit = Manifold::sphere(1.0, 5.0).unwrap();
        let p = retract(&unit, &Vec3::new(1.0, 0.0, 0.0), &Vec3::new(0.0, 1.0, 0.0)).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        assert_relative_eq!(p.x, s, epsilon = 1e-15);
        assert_relative_eq!(p.y, s, epsilon = 1e-15);

        let m = disk(DistanceConvention::PaperFormula);
        let q = retract(&m, &Vec3::new(0.9, 0.0, 0.0), &Vec3::new(0.2, 0.0, 0.0)).unwrap();
        assert_relative_eq!(q.x, 1.0 - DISK_GUARD, epsilon = 1e-15);

        let x = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(retract(&unit, &x, &Vec3::zeros()).unwrap(), x);

        assert!(matches!(
            retract(&unit, &x, &Vec3::new(-1.0, 0.0, 0.0)),
            Err(Error::ProjectionUndefined { .. })
        ));
    }

    #[test]
    fn hyperbolic_ball_radius_reference_value() {
        assert_relative_eq!(hyperbolic_ball_radius(5.0), 0.889757, epsilon = 1e-6);
    }

    #[test]
    fn samplers_are_deterministic_and_valid() {
        let m = sphere();
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let a = sample_initial(&m, &IcSpec::UniformSphere, 16, &mut r1).unwrap();
        let b = sample_initial(&m, &IcSpec::UniformSphere, 16, &mut r2).unwrap();
        assert_eq!(a, b);
        for p in &a {
            m.check_point(p).unwrap();
        }
    }

    #[test]
    fn ps1_poincare_radii_honor_the_closed_forms() {
        let m = disk(DistanceConvention::PaperFormula);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = sample_initial(&m, &IcSpec::Ps1Poincare, 11, &mut rng).unwrap();
        let inner = hyperbolic_ball_radius(1.0);
        let outer = hyperbolic_ball_radius(2.0);
        let predator_cap = hyperbolic_ball_radius(0.5);
        for prey in &pts[..10] {
            let rho = prey.norm();
            assert!(rho >= inner - 1e-12 && rho <= outer + 1e-12);
        }
        assert!(pts[10].norm() <= predator_cap + 1e-12);
    }

    #[test]
    fn ps1_sphere_preserves_pairwise_distances_under_rotation() {
        // the random rotation is a gauge choice: re-sampling with the same
        // planar draws but a different rotation keeps all pairwise distances
        let m = sphere();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = sample_initial(&m, &IcSpec::Ps1Sphere, 8, &mut rng).unwrap();
        for p in &pts {
            m.check_point(p).unwrap();
        }
        // predator (last agent) starts near the configuration center: its
        // planar radius <= 0.1 while preys are >= 0.3
        let d_pred: Vec<f64> = (0..7).map(|i| distance(&m, &pts[7], &pts[i])).collect();
        let d_min = d_pred.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(d_min > 0.1, "predator should be separated from the annulus");
    }

    #[test]
    fn euclidean_log_weight_is_exact_difference() {
        let m = plane();
        let x = Vec3::new(0.3, -1.7, 0.0);
        let y = Vec3::new(-0.4, 2.2, 0.0);
        assert_eq!(log_weight(&m, &x, &y).vec, y - x);
    }

    #[test]
    fn paper_formula_violates_triangle_inequality() {
        // The no-factor-2 distance is acosh((cosh(d_true) + 1) / 2), a convex
        // increasing transform of the metric distance, hence superadditive
        // along geodesics. Kept deliberately; the metric checks run on the
        // Factor2 convention.
        let m = disk(DistanceConvention::PaperFormula);
        let x = Vec3::zeros();
        let y = Vec3::new(0.5, 0.0, 0.0);
        let z = Vec3::new(0.8, 0.0, 0.0);
        let lhs = distance(&m, &x, &z);
        let rhs = distance(&m, &x, &y) + distance(&m, &y, &z);
        assert!(lhs > rhs + 1e-3);
    }

    #[test]
    fn sphere_first_order_consistency() {
        let m = sphere();
        let x = Vec3::new(m.radius, 0.0, 0.0);
        let u = Vec3::new(0.0, 1.0, 0.0);
        let mut qs = Vec::new();
        for eps in [1e-4, 1e-5] {
            let p = retract(&m, &x, &(u * eps)).unwrap();
            qs.push(distance(&m, &x, &p) / eps);
        }
        assert_relative_eq!(qs[0], 1.0, epsilon = 1e-3);
        assert_relative_eq!(qs[1], 1.0, epsilon = 1e-3);
        assert_relative_eq!(qs[0] / qs[1], 1.0, epsilon = 1e-3);
    }
}
