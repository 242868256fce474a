use crate::error::{Error, Result};
use crate::manifold::Particle;
use crate::scalar::Real;

/// A uniformly weighted finite set of particles on `Z`, optionally tagged
/// with one categorical label per particle.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure<T: Real> {
    particles: Vec<Particle<T>>,
    labels: Option<Vec<String>>,
}

impl<T: Real> EmpiricalMeasure<T> {
    pub fn new(particles: Vec<Particle<T>>) -> Result<Self> {
        let first = particles.first().ok_or(Error::Empty("empirical measure"))?;
        for p in &particles[1..] {
            first.same_shape(p)?;
        }
        Ok(Self {
            particles,
            labels: None,
        })
    }

    pub fn with_labels(particles: Vec<Particle<T>>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != particles.len() {
            return Err(Error::DimensionMismatch {
                context: "labels per particle",
                expected: particles.len(),
                found: labels.len(),
            });
        }
        let mut measure = Self::new(particles)?;
        measure.labels = Some(labels);
        Ok(measure)
    }

    pub fn particles(&self) -> &[Particle<T>] {
        &self.particles
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Feature dimension `m`.
    pub fn m(&self) -> usize {
        self.particles[0].m()
    }

    /// Lifted dimension `n`.
    pub fn n(&self) -> usize {
        self.particles[0].n()
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        self.particles[0].same_shape(&other.particles[0])
    }

    /// Replaces the particles, keeping labels. Lengths must agree.
    pub fn with_particles(&self, particles: Vec<Particle<T>>) -> Result<Self> {
        match &self.labels {
            Some(labels) => Self::with_labels(particles, labels.clone()),
            None => Self::new(particles),
        }
    }

    pub fn into_parts(self) -> (Vec<Particle<T>>, Option<Vec<String>>) {
        (self.particles, self.labels)
    }
}
