//! Squared maximum mean discrepancy, the flow objective and its dissipation.

use crate::error::{Error, Result};
use crate::kernel::{kernel_gram, witness_field, KernelParams};
use crate::manifold::tangent_norm_squared;
use crate::measure::EmpiricalMeasure;
use crate::scalar::Real;

/// Mean of all Gram entries `(1/(|a||b|)) Σ_ij k(a_i, b_j)`.
pub fn mean_kernel<T: Real>(p: &KernelParams<T>, a: &EmpiricalMeasure<T>, b: &EmpiricalMeasure<T>) -> Result<T> {
    let gram = kernel_gram(p, a, b)?;
    Ok(gram.sum() / T::from_count(a.len() * b.len()))
}

/// Biased (V-statistic) squared MMD between two empirical measures.
pub fn mmd_squared<T: Real>(p: &KernelParams<T>, rho: &EmpiricalMeasure<T>, target: &EmpiricalMeasure<T>) -> Result<T> {
    let target_term = mean_kernel(p, target, target)?;
    mmd_squared_cached(p, rho, target, target_term)
}

/// Squared MMD reusing the iteration-invariant term `‖m_target‖²`.
pub fn mmd_squared_cached<T: Real>(
    p: &KernelParams<T>,
    rho: &EmpiricalMeasure<T>,
    target: &EmpiricalMeasure<T>,
    target_term: T,
) -> Result<T> {
    if rho.is_empty() || target.is_empty() {
        return Err(Error::Empty("mmd measure"));
    }
    let own = mean_kernel(p, rho, rho)?;
    let cross = mean_kernel(p, rho, target)?;
    Ok((own - cross * T::lit(2.0) + target_term).max(T::zero()))
}

/// `½ MMD²`.
pub fn loss<T: Real>(p: &KernelParams<T>, rho: &EmpiricalMeasure<T>, target: &EmpiricalMeasure<T>) -> Result<T> {
    Ok(mmd_squared(p, rho, target)? * T::lit(0.5))
}

/// Instantaneous decrease rate of the loss along the flow:
/// `(1/N) Σ_i ‖∇̃(m_ρ − m_target)(z_i)‖²_{z_i}`.
pub fn dissipation<T: Real>(p: &KernelParams<T>, rho: &EmpiricalMeasure<T>, target: &EmpiricalMeasure<T>) -> Result<T> {
    rho.same_shape(target)?;
    let mut total = T::zero();
    for z in rho.particles() {
        let field = witness_field(p, rho, z)?.sub(&witness_field(p, target, z)?);
        total += tangent_norm_squared(z, &field)?;
    }
    Ok(total / T::from_count(rho.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::kernel_eval;
    use crate::manifold::{Particle, SpdMatrix};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, DVector};

    fn particle(x: f64, mu: f64, s: f64) -> Particle<f64> {
        Particle::new(
            DVector::from_element(1, x),
            DVector::from_element(1, mu),
            SpdMatrix::try_new(dmatrix![s]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identical_measures_are_zero() {
        let p = KernelParams::new(0.5, 0.5, 0.5).unwrap();
        let rho = EmpiricalMeasure::new(vec![particle(0.0, 1.0, 1.0), particle(2.0, -1.0, 0.3)]).unwrap();
        assert_eq!(mmd_squared(&p, &rho, &rho).unwrap(), 0.0);
        assert_eq!(loss(&p, &rho, &rho).unwrap(), 0.0);
        assert_eq!(dissipation(&p, &rho, &rho).unwrap(), 0.0);
    }

    #[test]
    fn singleton_closed_form() {
        let p = KernelParams::new(0.5, 0.2, 1.5).unwrap();
        let a = particle(0.0, 1.0, 1.0);
        let b = particle(1.0, 0.0, 2.0);
        let k = kernel_eval(&p, &a, &b).unwrap();
        let rho = EmpiricalMeasure::new(vec![a]).unwrap();
        let target = EmpiricalMeasure::new(vec![b]).unwrap();
        assert_relative_eq!(mmd_squared(&p, &rho, &target).unwrap(), 2.0 * (1.0 - k), epsilon = 1e-15);
        assert_relative_eq!(loss(&p, &rho, &target).unwrap(), 1.0 - k, epsilon = 1e-15);
        let single = EmpiricalMeasure::new(vec![particle(3.0, 3.0, 3.0)]).unwrap();
        assert_eq!(dissipation(&p, &single, &single).unwrap(), 0.0);
    }

    #[test]
    fn empty_target_term_is_rejected_by_construction() {
        assert!(EmpiricalMeasure::<f64>::new(vec![]).is_err());
    }
}
