//! Tensor Gaussian kernel on `Z` and its Riemannian gradient.
//!
//! `k(z, z̄) = exp(−α‖x−x̄‖² − β‖μ−μ̄‖² − γ‖Σ−Σ̄‖_F²)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{Particle, SymMatrix, TangentVector};
use crate::measure::EmpiricalMeasure;
use crate::scalar::Real;

/// Bandwidths of the tensor Gaussian kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    /// Feature bandwidth.
    pub alpha: T,
    /// Lifted-mean bandwidth.
    pub beta: T,
    /// Lifted-covariance bandwidth.
    pub gamma: T,
}

impl<T: Real> KernelParams<T> {
    pub fn new(alpha: T, beta: T, gamma: T) -> Result<Self> {
        let p = Self { alpha, beta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v > T::zero() && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("kernel {name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Exponent `α‖x−x̄‖² + β‖μ−μ̄‖² + γ‖Σ−Σ̄‖_F²` (dimensions assumed equal).
fn exponent<T: Real>(p: &KernelParams<T>, z: &Particle<T>, zbar: &Particle<T>) -> T {
    let dx = (&z.x - &zbar.x).norm_squared();
    let dmu = (&z.mu - &zbar.mu).norm_squared();
    let dsigma = (z.sigma.as_matrix() - zbar.sigma.as_matrix()).norm_squared();
    p.alpha * dx + p.beta * dmu + p.gamma * dsigma
}

pub fn kernel_eval<T: Real>(p: &KernelParams<T>, z: &Particle<T>, zbar: &Particle<T>) -> Result<T> {
    z.same_shape(zbar)?;
    Ok((-exponent(p, z, zbar)).exp())
}

/// Riemannian gradient of `z ↦ k(z, z̄)`:
/// `−2k · (α(x−x̄), β(μ−μ̄), 2γ(2Σ² − ΣΣ̄ − Σ̄Σ))`.
pub fn kernel_grad1<T: Real>(p: &KernelParams<T>, z: &Particle<T>, zbar: &Particle<T>) -> Result<TangentVector<T>> {
    z.same_shape(zbar)?;
    Ok(grad_unchecked(p, z, zbar))
}

fn grad_unchecked<T: Real>(p: &KernelParams<T>, z: &Particle<T>, zbar: &Particle<T>) -> TangentVector<T> {
    let k = (-exponent(p, z, zbar)).exp();
    let coef = k * T::lit(-2.0);
    let sigma = z.sigma.as_matrix();
    let diff = sigma - zbar.sigma.as_matrix();
    // (Σ−Σ̄)Σ + Σ(Σ−Σ̄) = 2Σ² − Σ̄Σ − ΣΣ̄
    let ds = &diff * sigma;
    let anti = &ds + ds.transpose();
    TangentVector {
        x: (&z.x - &zbar.x) * (coef * p.alpha),
        mu: (&z.mu - &zbar.mu) * (coef * p.beta),
        sigma: SymMatrix::symmetric_part(&(anti * (coef * p.gamma * T::lit(2.0)))),
    }
}

/// Sums tangents by recursive halving; the order depends only on the length.
pub fn pairwise_sum<T: Real>(items: &[TangentVector<T>]) -> Option<TangentVector<T>> {
    match items.len() {
        0 => None,
        1 => Some(items[0].clone()),
        len => {
            let (lo, hi) = items.split_at(len / 2);
            Some(pairwise_sum(lo)?.add(&pairwise_sum(hi)?))
        }
    }
}

/// Riemannian gradient of the kernel mean embedding of `measure` at `z`:
/// the average of `kernel_grad1(z, z_j)` over the measure's particles.
pub fn witness_field<T: Real>(
    p: &KernelParams<T>,
    measure: &EmpiricalMeasure<T>,
    z: &Particle<T>,
) -> Result<TangentVector<T>> {
    if measure.is_empty() {
        return Err(Error::Empty("witness measure"));
    }
    measure.particles()[0].same_shape(z)?;
    let grads: Vec<_> = measure.particles().iter().map(|zj| grad_unchecked(p, z, zj)).collect();
    let total = pairwise_sum(&grads).expect("nonempty");
    Ok(total.scaled(T::one() / T::from_count(measure.len())))
}

/// Gram matrix `G_ij = k(a_i, b_j)`.
pub fn kernel_gram<T: Real>(
    p: &KernelParams<T>,
    a: &EmpiricalMeasure<T>,
    b: &EmpiricalMeasure<T>,
) -> Result<DMatrix<T>> {
    a.same_shape(b)?;
    let pa = a.particles();
    let pb = b.particles();
    Ok(DMatrix::from_fn(pa.len(), pb.len(), |i, j| (-exponent(p, &pa[i], &pb[j])).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{riemannian_lift, EuclideanGradient, SpdMatrix};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, DVector};

    fn params() -> KernelParams<f64> {
        KernelParams::new(0.3, 0.15, 1.0).unwrap()
    }

    fn particle(x: &[f64], mu: &[f64], sigma: DMatrix<f64>) -> Particle<f64> {
        Particle::new(
            DVector::from_column_slice(x),
            DVector::from_column_slice(mu),
            SpdMatrix::try_new(sigma).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_bandwidths() {
        assert!(KernelParams::new(0.0, 1.0, 1.0).is_err());
        assert!(KernelParams::new(1.0, f64::NAN, 1.0).is_err());
        assert!(KernelParams::new(1.0, 1.0, -2.0).is_err());
    }

    #[test]
    fn self_kernel_is_one_and_self_gradient_vanishes() {
        let z = particle(&[1.0, -2.0], &[0.5], dmatrix![2.0]);
        assert_eq!(kernel_eval(&params(), &z, &z).unwrap(), 1.0);
        assert!(kernel_grad1(&params(), &z, &z).unwrap().is_zero());
    }

    #[test]
    fn mean_only_difference() {
        let s = dmatrix![1.0, 0.2; 0.2, 0.7];
        let z = particle(&[1.0], &[1.0, 0.0], s.clone());
        let zb = particle(&[1.0], &[0.0, 2.0], s);
        let p = params();
        let k = kernel_eval(&p, &z, &zb).unwrap();
        assert_relative_eq!(k, (-0.15f64 * 5.0).exp(), epsilon = 1e-15);
        let g = kernel_grad1(&p, &z, &zb).unwrap();
        assert!(g.x.iter().all(|v| *v == 0.0));
        assert!(g.sigma.as_matrix().iter().all(|v| *v == 0.0));
        let expect = (&z.mu - &zb.mu) * (-2.0 * 0.15 * k);
        assert_relative_eq!(g.mu, expect, epsilon = 1e-15);
    }

    #[test]
    fn covariance_leg_matches_lift_of_euclidean_gradient() {
        let p = params();
        let z = particle(&[0.1, 0.2], &[1.0, -1.0], dmatrix![1.5, 0.3; 0.3, 0.8]);
        let zb = particle(&[0.4, -0.3], &[0.2, 0.1], dmatrix![0.6, -0.1; -0.1, 1.1]);
        let k = kernel_eval(&p, &z, &zb).unwrap();
        let diff = z.sigma.as_matrix() - zb.sigma.as_matrix();
        let euclid = EuclideanGradient {
            x: (&z.x - &zb.x) * (-2.0 * k * p.alpha),
            mu: (&z.mu - &zb.mu) * (-2.0 * k * p.beta),
            sigma: SymMatrix::try_new(diff * (-2.0 * k * p.gamma)).unwrap(),
        };
        let lifted = riemannian_lift(&z, &euclid).unwrap();
        let grad = kernel_grad1(&p, &z, &zb).unwrap();
        assert_relative_eq!(lifted.sigma.as_matrix(), grad.sigma.as_matrix(), epsilon = 1e-12);
        assert_relative_eq!(lifted.x, grad.x, epsilon = 1e-15);
    }

    #[test]
    fn witness_of_singletons() {
        let p = params();
        let z = particle(&[0.0], &[0.0], dmatrix![1.0]);
        let zb = particle(&[1.0], &[2.0], dmatrix![0.5]);
        let self_measure = EmpiricalMeasure::new(vec![z.clone()]).unwrap();
        assert!(witness_field(&p, &self_measure, &z).unwrap().is_zero());
        let other = EmpiricalMeasure::new(vec![zb.clone()]).unwrap();
        assert_eq!(witness_field(&p, &other, &z).unwrap(), kernel_grad1(&p, &z, &zb).unwrap());
    }

    #[test]
    fn witness_is_linear_in_the_measure() {
        let p = params();
        let z = particle(&[0.0, 1.0], &[0.3], dmatrix![1.0]);
        let a = particle(&[1.0, 0.0], &[2.0], dmatrix![0.5]);
        let b = particle(&[-1.0, 0.5], &[-1.0], dmatrix![2.0]);
        let both = EmpiricalMeasure::new(vec![a.clone(), b.clone()]).unwrap();
        let fa = witness_field(&p, &EmpiricalMeasure::new(vec![a]).unwrap(), &z).unwrap();
        let fb = witness_field(&p, &EmpiricalMeasure::new(vec![b]).unwrap(), &z).unwrap();
        let avg = fa.add(&fb).scaled(0.5);
        let got = witness_field(&p, &both, &z).unwrap();
        assert_relative_eq!(got.x, avg.x, epsilon = 1e-15);
        assert_relative_eq!(got.mu, avg.mu, epsilon = 1e-15);
        assert_relative_eq!(got.sigma.as_matrix(), avg.sigma.as_matrix(), epsilon = 1e-15);
    }

    #[test]
    fn gram_entries() {
        let p = params();
        let z = particle(&[0.0], &[0.0], dmatrix![1.0]);
        let m = EmpiricalMeasure::new(vec![z.clone()]).unwrap();
        assert_eq!(kernel_gram(&p, &m, &m).unwrap(), dmatrix![1.0]);
        let far = particle(&[3.0], &[1.0], dmatrix![4.0]);
        let m2 = EmpiricalMeasure::new(vec![z.clone(), far.clone()]).unwrap();
        let g = kernel_gram(&p, &m2, &m).unwrap();
        assert!(g.iter().all(|v| *v > 0.0 && *v <= 1.0));
        assert_eq!(g[(1, 0)], kernel_eval(&p, &far, &z).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = params();
        let a = particle(&[0.0], &[0.0], dmatrix![1.0]);
        let b = particle(&[0.0, 1.0], &[0.0], dmatrix![1.0]);
        assert!(matches!(kernel_eval(&p, &a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(kernel_grad1(&p, &a, &b).is_err());
    }
}
