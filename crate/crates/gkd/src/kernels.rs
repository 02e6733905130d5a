//! Ground-truth interaction kernels (opinion dynamics, Lennard-Jones,
//! predator-swarm) represented as ordered piecewise segments with C^1 cubic
//! blends, plus the generic evaluator shared with learned estimators.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One term `coeff * r^exponent` of a closed-form segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerTerm {
    pub coeff: f64,
    pub exponent: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SegmentForm {
    /// `c[0] + c[1] u + c[2] u^2 + c[3] u^3` in the local variable
    /// `u = r - r_lo` of the owning segment. Local coefficients keep the
    /// cubic blends exact where monomials in `r` would cancel by ~1e6.
    Cubic([f64; 4]),
    /// Sum of power terms in `r` itself; used for the Lennard-Jones and
    /// predator-swarm tails that are not polynomial.
    PowerSum(Vec<PowerTerm>),
}

impl SegmentForm {
    fn eval(&self, r: f64, r_lo: f64) -> f64 {
        match self {
            SegmentForm::Cubic(c) => {
                let u = r - r_lo;
                ((c[3] * u + c[2]) * u + c[1]) * u + c[0]
            }
            SegmentForm::PowerSum(terms) => {
                terms.iter().map(|t| t.coeff * r.powi(t.exponent)).sum()
            }
        }
    }

    fn eval_deriv(&self, r: f64, r_lo: f64) -> f64 {
        match self {
            SegmentForm::Cubic(c) => {
                let u = r - r_lo;
                (3.0 * c[3] * u + 2.0 * c[2]) * u + c[1]
            }
            SegmentForm::PowerSum(terms) => terms
                .iter()
                .map(|t| t.coeff * f64::from(t.exponent) * r.powi(t.exponent - 1))
                .sum(),
        }
    }

    /// Exact antiderivative of `r * f(r)` evaluated as the definite integral
    /// over `[a, b]`. Power terms with exponent -2 integrate to a logarithm.
    fn integral_r_times(&self, a: f64, b: f64, r_lo: f64) -> f64 {
        match self {
            SegmentForm::Cubic(c) => {
                // r f(r) = (u + r_lo) p(u) with u = r - r_lo
                let prim = |u: f64| {
                    let up = u * (c[0] / 2.0 + u * (c[1] / 3.0 + u * (c[2] / 4.0 + u * c[3] / 5.0)));
                    let p = c[0] + u * (c[1] / 2.0 + u * (c[2] / 3.0 + u * c[3] / 4.0));
                    u * (up + r_lo * p)
                };
                prim(b - r_lo) - prim(a - r_lo)
            }
            SegmentForm::PowerSum(terms) => terms
                .iter()
                .map(|t| {
                    if t.exponent == -2 {
                        t.coeff * (b / a).ln()
                    } else {
                        let p = t.exponent + 2;
                        t.coeff * (b.powi(p) - a.powi(p)) / f64::from(p)
                    }
                })
                .sum(),
        }
    }
}

/// Half-open segment `[r_lo, r_hi)` with its closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub r_lo: f64,
    pub r_hi: f64,
    pub form: SegmentForm,
}

impl Segment {
    pub fn eval(&self, r: f64) -> f64 {
        self.form.eval(r, self.r_lo)
    }

    pub fn eval_deriv(&self, r: f64) -> f64 {
        self.form.eval_deriv(r, self.r_lo)
    }
}

/// An interaction kernel `phi: [0, support_end) -> R` as ordered segments;
/// identically zero at and beyond `support_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseKernel {
    pub segments: Vec<Segment>,
    pub support_end: f64,
}

impl PiecewiseKernel {
    /// The identically-zero kernel.
    pub fn zero() -> Self {
        PiecewiseKernel {
            segments: Vec::new(),
            support_end: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.segments.is_empty()
    }

    fn segment_index(&self, r: f64) -> Option<usize> {
        if r >= self.support_end || self.segments.is_empty() {
            return None;
        }
        // partition_point: first segment with r_lo > r, minus one
        let idx = self.segments.partition_point(|s| s.r_lo <= r);
        if idx == 0 {
            return None;
        }
        let seg = &self.segments[idx - 1];
        (r < seg.r_hi).then_some(idx - 1)
    }

    /// Kernel value at distance `r >= 0`.
    pub fn eval(&self, r: f64) -> f64 {
        assert!(r >= 0.0, "kernel evaluated at negative distance {r}");
        match self.segment_index(r) {
            Some(i) => self.segments[i].eval(r),
            None => 0.0,
        }
    }

    /// Kernel derivative at `r >= 0` (one-sided from the owning segment).
    pub fn eval_deriv(&self, r: f64) -> f64 {
        assert!(r >= 0.0, "kernel derivative at negative distance {r}");
        match self.segment_index(r) {
            Some(i) => self.segments[i].eval_deriv(r),
            None => 0.0,
        }
    }

    /// `V(d) = int_0^d u phi(u) du`, the radial potential whose pairwise sum
    /// is the system energy (exact segmentwise antidifferentiation).
    pub fn integral_r_phi(&self, d: f64) -> f64 {
        assert!(d >= 0.0);
        let mut acc = 0.0;
        for seg in &self.segments {
            if d <= seg.r_lo {
                break;
            }
            let hi = d.min(seg.r_hi);
            acc += seg.form.integral_r_times(seg.r_lo, hi, seg.r_lo);
        }
        acc
    }

    /// Sup of `|phi|` and `|phi'|` over a uniform grid on `[0, r_hi]`; the
    /// admissible-space bounds reported by the diagnostics.
    pub fn sup_bounds(&self, grid: usize, r_hi: f64) -> (f64, f64) {
        let mut sup_v = 0.0f64;
        let mut sup_d = 0.0f64;
        for j in 0..=grid {
            let r = r_hi * j as f64 / grid as f64;
            sup_v = sup_v.max(self.eval(r).abs());
            sup_d = sup_d.max(self.eval_deriv(r).abs());
        }
        (sup_v, sup_d)
    }

    /// Verifies that the segments partition `[0, support_end)` and meet the
    /// continuity tolerances (C^0 at 1e-9, C^1 at blend knots at 1e-6,
    /// both relative to the local scale).
    pub fn validate(&self) -> Result<()> {
        if self.is_zero() {
            return Ok(());
        }
        if self.segments[0].r_lo != 0.0 {
            return Err(Error::InvalidKernel("first segment must start at 0".into()));
        }
        for w in self.segments.windows(2) {
            if (w[0].r_hi - w[1].r_lo).abs() > 1e-14 {
                return Err(Error::InvalidKernel(format!(
                    "gap/overlap between segments at {}",
                    w[0].r_hi
                )));
            }
            let k = w[1].r_lo;
            let scale = w[0].eval(k).abs().max(1.0);
            if (w[0].eval(k) - w[1].eval(k)).abs() > 1e-9 * scale {
                return Err(Error::InvalidKernel(format!("C0 break at knot {k}")));
            }
            let dscale = w[0].eval_deriv(k).abs().max(1.0);
            if (w[0].eval_deriv(k) - w[1].eval_deriv(k)).abs() > 1e-6 * dscale {
                return Err(Error::InvalidKernel(format!("C1 break at knot {k}")));
            }
        }
        let last = self.segments.last().unwrap();
        if (last.r_hi - self.support_end).abs() > 1e-14 && last.r_hi.is_finite() {
            return Err(Error::InvalidKernel(
                "last segment must end at support_end".into(),
            ));
        }
        Ok(())
    }
}

/// K x K array of kernels; `get(k, kp)` is the influence of agents of type
/// `kp` on agents of type `k` (type indices are 0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub n_types: usize,
    pub kernels: Vec<PiecewiseKernel>,
}

impl KernelMatrix {
    pub fn homogeneous(kernel: PiecewiseKernel) -> Self {
        KernelMatrix {
            n_types: 1,
            kernels: vec![kernel],
        }
    }

    pub fn new(n_types: usize, kernels: Vec<PiecewiseKernel>) -> Result<Self> {
        if n_types == 0 || kernels.len() != n_types * n_types {
            return Err(Error::InvalidKernel(format!(
                "kernel matrix needs {}^2 entries, got {}",
                n_types,
                kernels.len()
            )));
        }
        Ok(KernelMatrix { n_types, kernels })
    }

    pub fn get(&self, k: usize, kp: usize) -> &PiecewiseKernel {
        &self.kernels[k * self.n_types + kp]
    }
}

/// Unique cubic with `p(r0) = f0`, `p(r1) = f1`, `p'(r0) = d0`, `p'(r1) = d1`,
/// returned as coefficients `[c0, c1, c2, c3]` in the local variable
/// `u = r - r0` (the convention of `SegmentForm::Cubic`).
pub fn hermite_blend(r0: f64, r1: f64, f0: f64, f1: f64, d0: f64, d1: f64) -> Result<[f64; 4]> {
    if !(r1 > r0) {
        return Err(Error::InvalidKernel(format!(
            "blend interval must be increasing: [{r0}, {r1}]"
        )));
    }
    let h = r1 - r0;
    // Hermite coefficients in t = u / h, then rescale to u
    let a3 = 2.0 * f0 + h * d0 - 2.0 * f1 + h * d1;
    let a2 = -3.0 * f0 - 2.0 * h * d0 + 3.0 * f1 - h * d1;
    Ok([f0, d0, a2 / (h * h), a3 / (h * h * h)])
}

fn constant(c: f64) -> SegmentForm {
    SegmentForm::Cubic([c, 0.0, 0.0, 0.0])
}

/// Opinion-dynamics kernel: 1 up to `1/sqrt(2) - 0.01`, cubic blend down to
/// 0.1 at `1/sqrt(2)`, 0.1 up to 0.99, cubic blend to 0 at 1, zero beyond.
pub fn make_od() -> PiecewiseKernel {
    let k2 = std::f64::consts::FRAC_1_SQRT_2;
    let k1 = k2 - 0.01;
    let blend1 = hermite_blend(k1, k2, 1.0, 0.1, 0.0, 0.0).unwrap();
    let blend2 = hermite_blend(0.99, 1.0, 0.1, 0.0, 0.0, 0.0).unwrap();
    PiecewiseKernel {
        segments: vec![
            Segment { r_lo: 0.0, r_hi: k1, form: constant(1.0) },
            Segment { r_lo: k1, r_hi: k2, form: SegmentForm::Cubic(blend1) },
            Segment { r_lo: k2, r_hi: 0.99, form: constant(0.1) },
            Segment { r_lo: 0.99, r_hi: 1.0, form: SegmentForm::Cubic(blend2) },
        ],
        support_end: 1.0,
    }
}

fn phi_lj(eps: f64, sigma: f64, r: f64) -> f64 {
    24.0 * eps / (sigma * sigma) * ((sigma / r).powi(8) - 2.0 * (sigma / r).powi(14))
}

fn phi_lj_deriv(eps: f64, sigma: f64, r: f64) -> f64 {
    24.0 * eps / (sigma * sigma)
        * (-8.0 * sigma.powi(8) * r.powi(-9) + 28.0 * sigma.powi(14) * r.powi(-15))
}

/// Lennard-Jones kernel `phi(r) = U'(r)/r` of the 12-6 potential, flattened
/// below r = 1/2 by the quadratic/constant branches and (for finite `r_m`)
/// tapered to zero on `[0.99 r_m, r_m)`.
pub fn make_lj(eps: f64, sigma: f64, r_m: f64) -> Result<PiecewiseKernel> {
    if !(eps > 0.0) || !(sigma > 0.0) {
        return Err(Error::InvalidKernel(
            "Lennard-Jones parameters must be positive".into(),
        ));
    }
    if r_m.is_finite() && 0.99 * r_m <= 1.0 {
        return Err(Error::InvalidKernel(format!(
            "Lennard-Jones cap too small: 0.99 * {r_m} <= 1"
        )));
    }
    let p1 = phi_lj(eps, sigma, 1.0);
    let dp1 = phi_lj_deriv(eps, sigma, 1.0);
    let tail = SegmentForm::PowerSum(vec![
        PowerTerm { coeff: 24.0 * eps * sigma.powi(6), exponent: -8 },
        PowerTerm { coeff: -48.0 * eps * sigma.powi(12), exponent: -14 },
    ]);
    // the quadratic branch dp1 r^2 - dp1 r + p1, recentered at r = 1/2,
    // is (p1 - dp1/4) + dp1 u^2: it meets the constant branch exactly
    let mut segments = vec![
        Segment { r_lo: 0.0, r_hi: 0.5, form: constant(p1 - dp1 / 4.0) },
        Segment { r_lo: 0.5, r_hi: 1.0, form: SegmentForm::Cubic([p1 - dp1 / 4.0, 0.0, dp1, 0.0]) },
    ];
    if r_m.is_finite() {
        let cut = 0.99 * r_m;
        segments.push(Segment { r_lo: 1.0, r_hi: cut, form: tail });
        let blend = hermite_blend(
            cut,
            r_m,
            phi_lj(eps, sigma, cut),
            0.0,
            phi_lj_deriv(eps, sigma, cut),
            0.0,
        )?;
        segments.push(Segment { r_lo: cut, r_hi: r_m, form: SegmentForm::Cubic(blend) });
    } else {
        segments.push(Segment { r_lo: 1.0, r_hi: f64::INFINITY, form: tail });
    }
    Ok(PiecewiseKernel { segments, support_end: r_m })
}

/// One predator-swarm kernel: linear ramp on `(0, 0.01]` matching the value
/// and slope of the main power law at 0.01, the power law up to the taper,
/// and a cubic taper to zero when `r_m` is finite.
fn ps1_kernel(terms: Vec<PowerTerm>, r_m: f64) -> Result<PiecewiseKernel> {
    let main = SegmentForm::PowerSum(terms);
    let v0 = main.eval(0.01, 0.0);
    let s0 = main.eval_deriv(0.01, 0.0);
    let ramp = SegmentForm::Cubic([v0 - s0 * 0.01, s0, 0.0, 0.0]);
    let mut segments = vec![Segment { r_lo: 0.0, r_hi: 0.01, form: ramp }];
    if r_m.is_finite() {
        let cut = 0.99 * r_m;
        let blend = hermite_blend(cut, r_m, main.eval(cut, 0.0), 0.0, main.eval_deriv(cut, 0.0), 0.0)?;
        segments.push(Segment { r_lo: 0.01, r_hi: cut, form: main });
        segments.push(Segment { r_lo: cut, r_hi: r_m, form: SegmentForm::Cubic(blend) });
    } else {
        segments.push(Segment { r_lo: 0.01, r_hi: f64::INFINITY, form: main });
    }
    Ok(PiecewiseKernel { segments, support_end: r_m })
}

/// Predator-swarm kernel matrix (type 0 = prey, type 1 = predator):
/// `phi_00 = 1 - 1/r^2`, `phi_01 = -2/r^2`, `phi_10 = 3.5/r^3`,
/// `phi_11 = 0` (a single predator does not interact with itself).
pub fn make_ps1(r_m: f64) -> Result<KernelMatrix> {
    let phi_pp = ps1_kernel(
        vec![
            PowerTerm { coeff: 1.0, exponent: 0 },
            PowerTerm { coeff: -1.0, exponent: -2 },
        ],
        r_m,
    )?;
    let phi_pq = ps1_kernel(vec![PowerTerm { coeff: -2.0, exponent: -2 }], r_m)?;
    let phi_qp = ps1_kernel(vec![PowerTerm { coeff: 3.5, exponent: -3 }], r_m)?;
    KernelMatrix::new(2, vec![phi_pp, phi_pq, phi_qp, PiecewiseKernel::zero()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_blend_constant() {
        let c = hermite_blend(0.2, 0.9, 3.5, 3.5, 0.0, 0.0).unwrap();
        assert_eq!(c, [3.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn hermite_blend_smoothstep() {
        let c = hermite_blend(0.0, 1.0, 0.0, 1.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(c[0], 0.0);
        assert_relative_eq!(c[1], 0.0);
        assert_relative_eq!(c[2], 3.0);
        assert_relative_eq!(c[3], -2.0);
    }

    #[test]
    fn hermite_blend_midpoint_symmetry() {
        let k2 = std::f64::consts::FRAC_1_SQRT_2;
        let k1 = k2 - 0.01;
        let c = hermite_blend(k1, k2, 1.0, 0.1, 0.0, 0.0).unwrap();
        let seg = Segment { r_lo: k1, r_hi: k2, form: SegmentForm::Cubic(c) };
        let mid = 0.5 * (k1 + k2);
        assert_relative_eq!(seg.eval(mid), 0.55, epsilon = 1e-12);
    }

    #[test]
    fn hermite_blend_rejects_bad_interval() {
        assert!(hermite_blend(1.0, 1.0, 0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn od_branch_values() {
        let k = make_od();
        k.validate().unwrap();
        assert_eq!(k.eval(0.3), 1.0);
        assert_eq!(k.eval(0.8), 0.1);
        assert_eq!(k.eval(1.2), 0.0);
        assert_eq!(k.eval(1.0), 0.0);
        assert_eq!(k.eval_deriv(0.5), 0.0);
    }

    #[test]
    fn lj_reference_values() {
        let k = make_lj(10.0, 1.0, f64::INFINITY).unwrap();
        k.validate().unwrap();
        assert_relative_eq!(k.eval(1.0), -240.0, epsilon = 1e-12);
        assert_relative_eq!(k.eval(0.25), -1440.0, epsilon = 1e-12);
        assert_relative_eq!(k.eval(2.0), 240.0 * (0.00390625 - 2.0 / 16384.0), epsilon = 1e-12);
        assert_relative_eq!(k.eval(2.0), 0.908203, epsilon = 1e-6);
        // derivative of the quadratic branch at 1^- equals phi_LJ'(1) = 4800
        let left = k.eval_deriv(1.0 - 1e-12);
        assert_relative_eq!(left, 4800.0, epsilon = 1e-6);
    }

    #[test]
    fn lj_blend_consistency_at_half_and_one() {
        let k = make_lj(10.0, 1.0, 5.0).unwrap();
        k.validate().unwrap();
        assert_relative_eq!(k.eval(0.5), -1440.0, epsilon = 1e-9);
        assert_relative_eq!(k.eval(1.0), -240.0, epsilon = 1e-9);
        assert_eq!(k.eval(5.0), 0.0);
        assert_eq!(k.eval(6.0), 0.0);
    }

    #[test]
    fn ps1_reference_values() {
        let m = make_ps1(f64::INFINITY).unwrap();
        assert_relative_eq!(m.get(0, 0).eval(1.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(m.get(0, 1).eval(1.0), -2.0, epsilon = 1e-12);
        assert_relative_eq!(m.get(1, 0).eval(1.0), 3.5, epsilon = 1e-12);
        for r in [0.0, 0.5, 1.0, 7.0] {
            assert_eq!(m.get(1, 1).eval(r), 0.0);
        }
        // ramp continuity at 0.01
        for (k, kp) in [(0, 0), (0, 1), (1, 0)] {
            let ker = m.get(k, kp);
            ker.validate().unwrap();
            let below = ker.eval(0.01 - 1e-9);
            let above = ker.eval(0.01 + 1e-9);
            assert_relative_eq!(below, above, epsilon = 1e-4, max_relative = 1e-4);
        }
    }

    #[test]
    fn ps1_finite_cap_tapers_to_zero() {
        let m = make_ps1(5.0).unwrap();
        for (k, kp) in [(0, 0), (0, 1), (1, 0)] {
            let ker = m.get(k, kp);
            ker.validate().unwrap();
            assert_eq!(ker.eval(5.0), 0.0);
            assert!(ker.eval(4.96).abs() > 0.0);
        }
    }

    #[test]
    fn c1_at_all_knots_by_central_difference() {
        // at a C1 junction the central difference deviates from 2h*phi' by
        // h^2/2 * |second-derivative jump|, so the tolerance scales with the
        // local curvature estimated from one-sided slopes
        let h = 1e-5;
        let kernels = [
            make_od(),
            make_lj(10.0, 1.0, 5.0).unwrap(),
            make_ps1(5.0).unwrap().get(0, 0).clone(),
        ];
        for ker in &kernels {
            for seg in &ker.segments[1..] {
                let r = seg.r_lo;
                if r <= h {
                    continue;
                }
                let d2_plus = (ker.eval_deriv(r + h) - ker.eval_deriv(r)) / h;
                let d2_minus = (ker.eval_deriv(r) - ker.eval_deriv(r - h)) / h;
                let scale = d2_plus.abs().max(d2_minus.abs()).max(1.0);
                let sym = ker.eval(r + h) - ker.eval(r - h);
                let lhs = (sym - 2.0 * h * ker.eval_deriv(r)).abs();
                assert!(
                    lhs <= 5.0 * h * h * scale,
                    "C1 defect {lhs:.3e} at knot {r} (scale {scale})"
                );
            }
        }
    }

    #[test]
    fn od_admissibility_bounds() {
        let k = make_od();
        let (sup_v, sup_d) = k.sup_bounds(10_000, 1.0);
        assert_eq!(sup_v, 1.0);
        // max slope of the first blend is 3 * 0.9 / (2 * 0.01) = 135 at the
        // midpoint; the grid sits within 1.4e-2 of it
        assert!(sup_d > 134.9 && sup_d <= 135.0 + 1e-9, "sup_d = {sup_d}");
    }

    #[test]
    fn zero_kernel_and_compact_support() {
        let z = PiecewiseKernel::zero();
        assert_eq!(z.eval(0.0), 0.0);
        assert_eq!(z.eval(17.0), 0.0);
        let od = make_od();
        for r in [1.0, 1.0 + 1e-15, 2.0, 100.0] {
            assert_eq!(od.eval(r), 0.0);
        }
    }

    #[test]
    #[should_panic(expected = "negative distance")]
    fn negative_distance_panics() {
        make_od().eval(-0.1);
    }

    #[test]
    fn potential_integral_matches_quadrature() {
        let k = make_lj(10.0, 1.0, 5.0).unwrap();
        for d in [0.3f64, 0.7, 1.5, 4.0, 4.997, 6.0] {
            // midpoint quadrature of r*phi(r) as an independent check
            let n = 200_000;
            let hi = d.min(k.support_end);
            let mut acc = 0.0;
            let dh = hi / n as f64;
            for j in 0..n {
                let r = (j as f64 + 0.5) * dh;
                acc += r * k.eval(r) * dh;
            }
            assert_relative_eq!(k.integral_r_phi(d), acc, epsilon = 1e-4, max_relative = 1e-5);
        }
    }

    #[test]
    fn json_round_trip() {
        let k = make_lj(10.0, 1.0, 5.0).unwrap();
        let text = serde_json::to_string(&k).unwrap();
        let back: PiecewiseKernel = serde_json::from_str(&text).unwrap();
        assert_eq!(k, back);
    }
}
