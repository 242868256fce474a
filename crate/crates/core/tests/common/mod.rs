#![allow(dead_code)]

use fgflow::{EmpiricalMeasure, Particle, SpdMatrix, SymMatrix, TangentVector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SpdMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let shift = rng.gen_range(0.05..1.0);
    let s = &a * a.transpose() + DMatrix::identity(n, n) * shift;
    SpdMatrix::try_new((&s + s.transpose()) * 0.5).unwrap()
}

pub fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    SymMatrix::symmetric_part(&a)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

pub fn random_particle(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Particle<f64> {
    let x = random_vec(rng, m, 1.0);
    let mu = random_vec(rng, n, 1.0);
    Particle::new(x, mu, random_spd(rng, n)).unwrap()
}

pub fn random_tangent(rng: &mut ChaCha8Rng, m: usize, n: usize) -> TangentVector<f64> {
    TangentVector::new(random_vec(rng, m, 1.0), random_vec(rng, n, 1.0), random_sym(rng, n)).unwrap()
}

pub fn random_measure(rng: &mut ChaCha8Rng, count: usize, m: usize, n: usize, shift: f64) -> EmpiricalMeasure<f64> {
    let particles = (0..count)
        .map(|_| {
            let mut z = random_particle(rng, m, n);
            z.x.add_scalar_mut(shift);
            z
        })
        .collect();
    EmpiricalMeasure::new(particles).unwrap()
}
