//! Rational density surrogate `P(x) θ(x) / Q(x)`.

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::poly;

/// Relative evaluation error below which a nonpositive numerator counts as
/// zero rather than a positivity violation.
const ROUNDING: f64 = 1e-12;

/// `P θ / Q` with polynomials stored in the shifted variable
/// `u = (x - center) / scale` for stable evaluation, and zero outside the
/// support window on which positivity was established.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalSurrogate {
    center: f64,
    scale: f64,
    /// numerator coefficients in `u`, ascending
    num_u: Vec<f64>,
    /// denominator coefficients in `u`, ascending
    den_u: Vec<f64>,
    theta: Density,
    support: (f64, f64),
}

impl RationalSurrogate {
    /// Builds the surrogate from coefficients in `x`: `p = (p_1..p_2n)` with
    /// the constant of `P` fixed to one, and `q = (q_0..q_2n)`.
    pub fn from_x_coeffs(p: &[f64], q: &[f64], theta: Density, support: (f64, f64)) -> Result<Self> {
        if q.len() != p.len() + 1 || p.is_empty() || !p.len().is_multiple_of(2) {
            return Err(Error::Model(format!("need 2n numerator and 2n + 1 denominator coefficients, got {} and {}", p.len(), q.len())));
        }
        let mut num = Vec::with_capacity(q.len());
        num.push(1.0);
        num.extend_from_slice(p);
        Self::from_parts(0.0, 1.0, num, q.to_vec(), theta, support)
    }

    pub(crate) fn from_parts(
        center: f64,
        scale: f64,
        num_u: Vec<f64>,
        den_u: Vec<f64>,
        theta: Density,
        support: (f64, f64),
    ) -> Result<Self> {
        if !(support.0 < support.1) || !(scale > 0.0) {
            return Err(Error::Model(format!("bad support {support:?} or scale {scale}")));
        }
        if num_u.len() != den_u.len() || num_u.iter().chain(&den_u).any(|c| !c.is_finite()) {
            return Err(Error::Model("inconsistent surrogate coefficients".into()));
        }
        Ok(Self { center, scale, num_u, den_u, theta, support })
    }

    /// Surrogate equal to `θ` (`P = Q = 1`).
    pub fn identity(theta: Density, order: usize, support: (f64, f64)) -> Result<Self> {
        let mut num = vec![0.0; order + 1];
        num[0] = 1.0;
        Self::from_parts(0.0, 1.0, num.clone(), num, theta, support)
    }

    /// Moment order `2n` (common polynomial degree bound).
    pub fn order(&self) -> usize {
        self.num_u.len() - 1
    }

    pub fn theta(&self) -> &Density {
        &self.theta
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    /// Full numerator coefficients in `x`, `(p_0, p_1, .., p_2n)`.
    pub fn numerator(&self) -> Vec<f64> {
        poly::compose_affine(&self.num_u, self.center, self.scale)
    }

    pub fn denominator(&self) -> Vec<f64> {
        poly::compose_affine(&self.den_u, self.center, self.scale)
    }

    /// Free numerator coefficients `p_1..p_2n` after dividing by `P(0)`.
    pub fn p(&self) -> Vec<f64> {
        let num = self.numerator();
        num[1..].iter().map(|c| c / num[0]).collect()
    }

    /// Denominator coefficients `q_0..q_2n` on the `P(0) = 1` slice.
    pub fn q(&self) -> Vec<f64> {
        let p0 = self.numerator()[0];
        self.denominator().iter().map(|c| c / p0).collect()
    }

    /// Number of free parameters: `2n` numerator plus `2n + 1` denominator.
    pub fn free_parameter_count(&self) -> usize {
        2 * self.order() + 1
    }

    /// Multiplies both polynomials by `c > 0`; the density is unchanged.
    pub fn rescaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.num_u.iter_mut().chain(out.den_u.iter_mut()).for_each(|v| *v *= c);
        out
    }

    #[inline]
    fn to_u(&self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }

    pub fn p_eval(&self, x: f64) -> f64 {
        poly::eval(&self.num_u, self.to_u(x))
    }

    pub fn q_eval(&self, x: f64) -> f64 {
        poly::eval(&self.den_u, self.to_u(x))
    }

    pub fn in_support(&self, x: f64) -> bool {
        (self.support.0..=self.support.1).contains(&x)
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !self.in_support(x) {
            return Ok(0.0);
        }
        let u = self.to_u(x);
        let (p, q) = (poly::eval(&self.num_u, u), poly::eval(&self.den_u, u));
        if q > 0.0 && p <= 0.0 && -p <= ROUNDING * poly::eval_abs(&self.num_u, u) {
            // numerator zero to working precision
            return Ok(0.0);
        }
        if !(p > 0.0 && q > 0.0) {
            return Err(Error::Positivity { x, p, q });
        }
        Ok(p * self.theta.eval(x)? / q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal() -> Density {
        Density::gaussian(0.0, 1.0).unwrap()
    }

    #[test]
    fn identity_collapses_to_theta() {
        let s = RationalSurrogate::from_x_coeffs(&[0.0; 4], &[1.0, 0.0, 0.0, 0.0, 0.0], std_normal(), (-10.0, 10.0)).unwrap();
        for &x in &[-3.0, 0.0, 0.7, 2.2] {
            assert_eq!(s.eval(x).unwrap(), std_normal().eval(x).unwrap());
        }
        assert_eq!(s.eval(11.0).unwrap(), 0.0);
    }

    #[test]
    fn nine_free_parameters_at_order_four() {
        let s = RationalSurrogate::identity(std_normal(), 4, (-10.0, 10.0)).unwrap();
        assert_eq!(s.free_parameter_count(), 9);
        assert_eq!(s.p().len() + s.q().len(), 9);
    }

    #[test]
    fn nonpositive_denominator_is_an_error() {
        let s = RationalSurrogate::from_x_coeffs(&[0.0; 4], &[1.0, 0.0, -1.0, 0.0, 0.0], std_normal(), (-10.0, 10.0)).unwrap();
        assert!(matches!(s.eval(2.0), Err(Error::Positivity { .. })));
    }

    #[test]
    fn rescaling_preserves_density_and_canonical_coefficients() {
        let s = RationalSurrogate::from_x_coeffs(&[0.1, 0.2, 0.0, 0.05], &[1.2, 0.0, 0.3, 0.0, 0.01], std_normal(), (-10.0, 10.0)).unwrap();
        let r = s.rescaled(3.7);
        for &x in &[-2.0, 0.3, 1.9] {
            let (a, b) = (s.eval(x).unwrap(), r.eval(x).unwrap());
            assert!((a - b).abs() <= 1e-15 * a);
        }
        for (a, b) in s.q().iter().zip(r.q()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_mismatched_lengths() {
        assert!(RationalSurrogate::from_x_coeffs(&[0.0; 4], &[1.0; 4], std_normal(), (-1.0, 1.0)).is_err());
    }
}
