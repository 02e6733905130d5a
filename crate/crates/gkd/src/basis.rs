//! Clamped B-spline hypothesis space on the observed distance range, and
//! estimators (coefficient vectors over that space) with the post-learning
//! smoothing used when estimators drive the dynamics.

use serde::{Deserialize, Serialize};

use crate::geometry;
use crate::integrate::TrajectoryDataset;
use crate::kernels::{PiecewiseKernel, Segment, SegmentForm};
use crate::{Error, Result};

/// Highest supported spline degree (the experiments use 0 and 1).
pub const MAX_DEGREE: usize = 3;

/// Clamped B-spline basis of `n` functions of degree `degree` on
/// `[rmin, rmax]`, with uniform interior knots and full end-knot
/// multiplicity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub degree: usize,
    pub rmin: f64,
    pub rmax: f64,
    pub n: usize,
    pub knots: Vec<f64>,
}

impl SplineBasis {
    pub fn build(rmin: f64, rmax: f64, n: usize, degree: usize) -> Result<Self> {
        if !(rmax > rmin) {
            return Err(Error::InvalidBasis(format!(
                "invalid range [{rmin}, {rmax}]"
            )));
        }
        if degree > MAX_DEGREE {
            return Err(Error::InvalidBasis(format!(
                "degree {degree} exceeds the supported maximum {MAX_DEGREE}"
            )));
        }
        if n < degree + 1 {
            return Err(Error::InvalidBasis(format!(
                "need at least degree + 1 = {} basis functions, got {n}",
                degree + 1
            )));
        }
        let spans = n - degree;
        let dx = (rmax - rmin) / spans as f64;
        let mut knots = Vec::with_capacity(n + degree + 1);
        knots.extend(std::iter::repeat(rmin).take(degree + 1));
        for j in 1..spans {
            knots.push(rmin + dx * j as f64);
        }
        knots.extend(std::iter::repeat(rmax).take(degree + 1));
        Ok(SplineBasis {
            degree,
            rmin,
            rmax,
            n,
            knots,
        })
    }

    /// Width of one (uniform) knot span.
    pub fn span_width(&self) -> f64 {
        (self.rmax - self.rmin) / (self.n - self.degree) as f64
    }

    /// Knot-span index holding `r`, i.e. the largest `s` with
    /// `knots[s] <= r < knots[s+1]`; the right endpoint is closed.
    fn span(&self, r: f64) -> Option<usize> {
        if r < self.rmin || r > self.rmax {
            return None;
        }
        if r >= self.knots[self.n] {
            return Some(self.n - 1);
        }
        let idx = self.knots.partition_point(|&k| k <= r);
        Some((idx - 1).clamp(self.degree, self.n - 1))
    }

    /// Writes the `degree + 1` basis values that are nonzero at `r` into
    /// `vals` and returns the index of the first of them, or `None` when `r`
    /// lies outside `[rmin, rmax]`.
    pub fn nonzero_at(&self, r: f64, vals: &mut [f64; MAX_DEGREE + 1]) -> Option<usize> {
        let s = self.span(r)?;
        let p = self.degree;
        vals[0] = 1.0;
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        for j in 1..=p {
            left[j] = r - self.knots[s + 1 - j];
            right[j] = self.knots[s + j] - r;
            let mut saved = 0.0;
            for k in 0..j {
                let tmp = vals[k] / (right[k + 1] + left[j - k]);
                vals[k] = saved + right[k + 1] * tmp;
                saved = left[j - k] * tmp;
            }
            vals[j] = saved;
        }
        Some(s - p)
    }

    /// Value of basis function `eta` at `r` (zero outside its support).
    pub fn eval_basis(&self, eta: usize, r: f64) -> f64 {
        assert!(eta < self.n, "basis index {eta} out of range");
        let mut vals = [0.0; MAX_DEGREE + 1];
        match self.nonzero_at(r, &mut vals) {
            Some(start) if eta >= start && eta <= start + self.degree => vals[eta - start],
            _ => 0.0,
        }
    }
}

/// Observed distance range `(R_min, R_max)` over all ordered pairs, times,
/// and trajectories of the dataset.
pub fn observed_range(ds: &TrajectoryDataset) -> Result<(f64, f64)> {
    let n = ds.n_agents();
    if n < 2 || ds.trajectories.is_empty() {
        return Err(Error::InvalidDataset(
            "observed range needs at least two agents and one trajectory".into(),
        ));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for traj in &ds.trajectories {
        for pts in &traj.positions {
            for i in 0..n {
                for ip in (i + 1)..n {
                    let d = geometry::distance(&ds.manifold, &pts[i], &pts[ip]);
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
            }
        }
    }
    Ok((lo, hi))
}

/// Theory-suggested basis dimension
/// `round((ML / ln(ML))^{1/3} N^{1/d})`, clamped to at least 1. Advisory:
/// the experiment configs carry their own `n`.
pub fn n_star(m_traj: usize, l_obs: usize, n_agents: usize, dim: usize) -> Result<usize> {
    let ml = (m_traj * l_obs) as f64;
    if ml <= std::f64::consts::E {
        return Err(Error::InvalidBasis(format!(
            "n_star needs M * L > e, got {ml}"
        )));
    }
    let v = (ml / ml.ln()).powf(1.0 / 3.0) * (n_agents as f64).powf(1.0 / dim as f64);
    Ok((v.round() as usize).max(1))
}

/// Post-learning smoothing descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Smoothing {
    /// Sliding average over a window of the given width, with the boundary
    /// value extended outside the basis range. Raises the piecewise degree
    /// by one and makes degree-1 estimators C^1.
    BoxFilter { width: f64 },
}

/// A kernel estimate `sum_eta coeffs[eta] psi_eta`, evaluable on
/// `[rmin, rmax]` and defined as zero outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub basis: SplineBasis,
    pub coeffs: Vec<f64>,
    pub smoothing: Option<Smoothing>,
}

impl Estimator {
    pub fn new(basis: SplineBasis, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.n {
            return Err(Error::InvalidBasis(format!(
                "{} coefficients for a basis of dimension {}",
                coeffs.len(),
                basis.n
            )));
        }
        Ok(Estimator {
            basis,
            coeffs,
            smoothing: None,
        })
    }

    /// The identically-zero estimator on a one-function degree-0 basis,
    /// standing in for kernels that are structurally zero (e.g. the
    /// predator-predator pair with a single predator).
    pub fn zero(rmin: f64, rmax: f64) -> Self {
        Estimator {
            basis: SplineBasis::build(rmin, rmax, 1, 0).expect("valid trivial basis"),
            coeffs: vec![0.0],
            smoothing: None,
        }
    }

    fn eval_base(&self, r: f64) -> f64 {
        let mut vals = [0.0; MAX_DEGREE + 1];
        match self.basis.nonzero_at(r, &mut vals) {
            Some(start) => (0..=self.basis.degree)
                .map(|k| self.coeffs[start + k] * vals[k])
                .sum(),
            None => 0.0,
        }
    }

    /// Exact integral of the (boundary-extended) base spline over `[a, b]`,
    /// by two-point Gauss quadrature per knot span (exact through cubics).
    fn integral_base_extended(&self, a: f64, b: f64) -> f64 {
        debug_assert!(b >= a);
        let (rmin, rmax) = (self.basis.rmin, self.basis.rmax);
        let mut acc = 0.0;
        if a < rmin {
            acc += (b.min(rmin) - a) * self.eval_base(rmin);
        }
        if b > rmax {
            acc += (b - a.max(rmax)) * self.eval_base(rmax);
        }
        let lo = a.max(rmin);
        let hi = b.min(rmax);
        if hi <= lo {
            return acc;
        }
        let g = 0.5 / 3.0f64.sqrt();
        let mut x = lo;
        while hi - x > 1e-15 * (rmax - rmin) {
            let span_end = match self.basis.span(x) {
                Some(s) => {
                    let e = self.basis.knots[s + 1];
                    if e > x { e.min(hi) } else { hi }
                }
                None => hi,
            };
            let mid = 0.5 * (x + span_end);
            let half = 0.5 * (span_end - x);
            acc +=
                half * (self.eval_base(mid - 2.0 * g * half) + self.eval_base(mid + 2.0 * g * half));
            x = span_end;
        }
        acc
    }

    /// Estimator value at `r`; zero outside `[rmin, rmax]`.
    pub fn eval(&self, r: f64) -> f64 {
        if r < self.basis.rmin || r > self.basis.rmax {
            return 0.0;
        }
        match self.smoothing {
            None => self.eval_base(r),
            Some(Smoothing::BoxFilter { width }) => {
                self.integral_base_extended(r - 0.5 * width, r + 0.5 * width) / width
            }
        }
    }

    /// Exact conversion to the shared piecewise representation: per-span
    /// polynomials for raw estimators, half-span-shifted pieces of one
    /// degree higher for smoothed ones; a zero segment covers `[0, rmin)`.
    pub fn to_piecewise(&self) -> Result<PiecewiseKernel> {
        let (rmin, rmax) = (self.basis.rmin, self.basis.rmax);
        let mut brk: Vec<f64> = Vec::new();
        for s in self.basis.degree..=self.basis.n {
            brk.push(self.basis.knots[s]);
        }
        if let Some(Smoothing::BoxFilter { width }) = self.smoothing {
            let shifted: Vec<f64> = brk
                .iter()
                .flat_map(|&k| [k - 0.5 * width, k + 0.5 * width])
                .collect();
            brk.extend(shifted);
            brk.retain(|&k| k >= rmin - 1e-12 && k <= rmax + 1e-12);
        }
        brk.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tol = 1e-12 * (rmax - rmin).max(1.0);
        brk.dedup_by(|a, b| (*a - *b).abs() <= tol);
        let piece_degree = self.basis.degree + usize::from(self.smoothing.is_some());
        if piece_degree > 3 {
            return Err(Error::InvalidBasis(
                "piecewise conversion supports degree <= 3".into(),
            ));
        }
        let mut segments = Vec::new();
        if rmin > 0.0 {
            segments.push(Segment {
                r_lo: 0.0,
                r_hi: rmin,
                form: SegmentForm::Cubic([0.0; 4]),
            });
        }
        for w in brk.windows(2) {
            let (a, b) = (w[0].max(rmin), w[1].min(rmax));
            if b - a <= tol {
                continue;
            }
            // interior samples sidestep one-sided values at the breakpoints
            let us: Vec<f64> = (0..4)
                .map(|j| (b - a) * (2 * j + 1) as f64 / 8.0)
                .collect();
            let ys: Vec<f64> = us.iter().map(|&u| self.eval(a + u)).collect();
            let coeffs = lagrange_cubic(&us, &ys);
            segments.push(Segment {
                r_lo: a,
                r_hi: b,
                form: SegmentForm::Cubic(coeffs),
            });
        }
        // keep r = rmax (attained by the observed maximum) inside the last
        // segment: the estimator is defined there, zero only beyond
        let end = rmax.next_up();
        if let Some(last) = segments.last_mut() {
            last.r_hi = end;
        }
        Ok(PiecewiseKernel {
            segments,
            support_end: end,
        })
    }
}

/// Coefficients of the cubic through four points `(us[j], ys[j])` in the
/// local variable; exact for polynomial data of degree <= 3.
fn lagrange_cubic(us: &[f64], ys: &[f64]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for j in 0..4 {
        // numerator polynomial prod_{k != j} (u - us[k])
        let mut num = [1.0, 0.0, 0.0, 0.0];
        let mut denom = 1.0;
        for k in 0..4 {
            if k == j {
                continue;
            }
            denom *= us[j] - us[k];
            let mut next = [0.0; 4];
            for (d, &c) in num.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                next[d + 1] += c;
                next[d] -= c * us[k];
            }
            num = next;
        }
        for d in 0..4 {
            out[d] += ys[j] * num[d] / denom;
        }
    }
    out
}

/// Integral-preserving smoothing: a sliding average over one knot span.
/// The output is one degree higher (C^1 for degree-1 inputs) and agrees
/// with the input away from scales below the knot spacing.
pub fn smooth(est: &Estimator) -> Estimator {
    Estimator {
        basis: est.basis.clone(),
        coeffs: est.coeffs.clone(),
        smoothing: Some(Smoothing::BoxFilter {
            width: est.basis.span_width(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn clamped_knot_vector_shape() {
        let b = SplineBasis::build(0.0, 1.0, 5, 1).unwrap();
        assert_eq!(b.knots.len(), 7);
        assert_eq!(b.knots[0], 0.0);
        assert_eq!(b.knots[1], 0.0);
        assert_eq!(*b.knots.last().unwrap(), 1.0);
    }

    #[test]
    fn two_hat_basis_values() {
        let b = SplineBasis::build(0.0, 1.0, 2, 1).unwrap();
        assert_relative_eq!(b.eval_basis(0, 0.25), 0.75);
        assert_relative_eq!(b.eval_basis(1, 0.25), 0.25);
        assert_relative_eq!(b.eval_basis(0, 0.0), 1.0);
        assert_relative_eq!(b.eval_basis(1, 1.0), 1.0);
        assert_eq!(b.eval_basis(0, 1.5), 0.0);
    }

    #[test]
    fn rejects_bad_ranges_and_degrees() {
        assert!(SplineBasis::build(1.0, 1.0, 3, 1).is_err());
        assert!(SplineBasis::build(0.0, 1.0, 1, 1).is_err());
        assert!(SplineBasis::build(0.0, 1.0, 9, 7).is_err());
    }

    #[test]
    fn n_star_reference_values() {
        assert_eq!(n_star(500, 500, 20, 2).unwrap(), 122);
        let tiny = n_star(3, 1, 1, 1).unwrap();
        assert!(tiny >= 1);
        assert!(n_star(1, 1, 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn partition_of_unity(n in 2usize..40, degree in 0usize..=3, x in 0.0f64..=1.0) {
            prop_assume!(n >= degree + 1);
            let b = SplineBasis::build(0.0, 1.0, n, degree).unwrap();
            let total: f64 = (0..n).map(|eta| b.eval_basis(eta, x)).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn local_support(n in 4usize..30, x in 0.0f64..1.0) {
            let b = SplineBasis::build(0.0, 1.0, n, 1).unwrap();
            let nonzero = (0..n).filter(|&eta| b.eval_basis(eta, x) != 0.0).count();
            prop_assert!(nonzero <= 2);
        }
    }

    #[test]
    fn degree_one_reproduces_piecewise_linear() {
        // knot-breakpoint piecewise-linear functions are represented exactly
        // by their knot values as coefficients
        let b = SplineBasis::build(0.0, 2.0, 6, 1).unwrap();
        let f = |r: f64| 0.3 * r - (r - 0.8).abs();
        let coeffs: Vec<f64> = (0..6).map(|j| f(0.4 * j as f64)).collect();
        let est = Estimator::new(b, coeffs).unwrap();
        for j in 0..=100 {
            let r = 2.0 * j as f64 / 100.0;
            assert_relative_eq!(est.eval(r), f(r), epsilon = 1e-12);
        }
    }

    #[test]
    fn smoothing_keeps_constants() {
        let b = SplineBasis::build(0.5, 1.5, 8, 1).unwrap();
        let est = Estimator::new(b, vec![2.5; 8]).unwrap();
        let sm = smooth(&est);
        for j in 0..=50 {
            let r = 0.5 + j as f64 / 50.0;
            assert_relative_eq!(sm.eval(r), 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn smoothing_preserves_interior_mass_and_lowers_peak() {
        let n = 11;
        let b = SplineBasis::build(0.0, 1.0, n, 1).unwrap();
        let mut coeffs = vec![0.0; n];
        coeffs[5] = 1.0;
        let est = Estimator::new(b, coeffs).unwrap();
        let sm = smooth(&est);
        let quad = |f: &dyn Fn(f64) -> f64| -> f64 {
            let steps = 200_000;
            (0..steps)
                .map(|j| f((j as f64 + 0.5) / steps as f64) / steps as f64)
                .sum()
        };
        let m0 = quad(&|r| est.eval(r));
        let m1 = quad(&|r| sm.eval(r));
        assert_relative_eq!(m0, m1, epsilon = 1e-10);
        assert!(sm.eval(0.5) < est.eval(0.5));
    }

    #[test]
    fn smoothed_estimator_is_c1_piecewise_quadratic() {
        let b = SplineBasis::build(0.0, 1.0, 7, 1).unwrap();
        let est = Estimator::new(b, vec![0.1, 0.9, -0.4, 0.7, 0.0, 0.3, -0.2]).unwrap();
        let sm = smooth(&est);
        let pk = sm.to_piecewise().unwrap();
        pk.validate().unwrap();
        let (sup_v, sup_d) = pk.sup_bounds(5_000, 1.0);
        assert!(sup_v.is_finite() && sup_d.is_finite());
        for j in 1..200 {
            let r = j as f64 / 200.0;
            assert_relative_eq!(pk.eval(r), sm.eval(r), epsilon = 1e-10);
        }
    }

    #[test]
    fn to_piecewise_matches_raw_estimator() {
        let b = SplineBasis::build(0.4, 1.9, 9, 1).unwrap();
        let coeffs: Vec<f64> = (0..9).map(|j| ((j * 7) % 5) as f64 - 2.0).collect();
        let est = Estimator::new(b, coeffs).unwrap();
        let pk = est.to_piecewise().unwrap();
        for j in 0..=300 {
            let r = 2.2 * j as f64 / 300.0;
            assert_relative_eq!(pk.eval(r), est.eval(r), epsilon = 1e-11);
        }
        assert_eq!(pk.eval(0.2), 0.0);
        assert_eq!(pk.eval(2.0), 0.0);
    }

    #[test]
    fn zero_estimator_is_zero_everywhere() {
        let z = Estimator::zero(0.0, 1.0);
        for r in [0.0, 0.3, 0.9999, 2.0] {
            assert_eq!(z.eval(r), 0.0);
        }
        assert!(z.to_piecewise().unwrap().eval(0.5) == 0.0);
    }
}
