//! Two-dimensional Gaussian-mixture experiments.
//!
//! Each sampled point becomes the particle `(x, μ_c, Σ_c)` where `c` is the
//! mixture component it was drawn from, and `c` is also its label.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::kernel::KernelParams;
use crate::lifting::{ClassMoment, ClassMoments};
use crate::manifold::{Particle, SpdMatrix};
use crate::measure::EmpiricalMeasure;
use crate::scalar::Real;

pub const PARTICLES_PER_MIXTURE: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

const fn comp(weight: f64, mean: [f64; 2], cov: [[f64; 2]; 2]) -> GaussianComponent {
    GaussianComponent { weight, mean, cov }
}

const FOUR_SOURCE: [GaussianComponent; 4] = [
    comp(0.25, [2.0, -0.3], [[0.14, 0.0], [0.0, 0.22]]),
    comp(0.25, [2.0, 0.3], [[0.43, 0.18], [0.18, 0.26]]),
    comp(0.25, [-0.3, 2.0], [[0.66, 0.02], [0.02, 0.63]]),
    comp(0.25, [0.3, -2.0], [[0.39, -0.02], [-0.02, 0.13]]),
];

const FOUR_TARGET: [GaussianComponent; 4] = [
    comp(0.25, [2.9, 0.1], [[0.16, 0.03], [0.03, 0.20]]),
    comp(0.25, [0.9, 0.5], [[0.22, 0.16], [0.16, 0.46]]),
    comp(0.25, [0.8, 2.2], [[0.63, 0.02], [0.02, 0.66]]),
    comp(0.25, [1.4, -1.8], [[0.18, 0.10], [0.10, 0.36]]),
];

const TWO_SOURCE: [GaussianComponent; 2] = [
    comp(0.5, [0.0, 0.0], [[0.18, -0.24], [-0.24, 0.70]]),
    comp(0.5, [5.8, 0.0], [[0.44, 0.0], [0.0, 0.87]]),
];

const TWO_TARGET: [GaussianComponent; 4] = [
    comp(0.25, [2.0, 0.7], [[0.63, -0.30], [-0.30, 0.26]]),
    comp(0.25, [2.2, -0.8], [[0.77, -0.18], [-0.18, 0.55]]),
    comp(0.25, [7.0, 0.8], [[0.63, -0.30], [-0.30, 0.26]]),
    comp(0.25, [7.7, -0.8], [[0.77, -0.18], [-0.18, 0.55]]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureScenario {
    FourToFour,
    TwoToFour,
}

/// Reference hyperparameters of a scenario.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioDefaults {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub step_size: f64,
    pub noise_level: f64,
    pub iterations: usize,
}

impl ScenarioDefaults {
    pub fn kernel<T: Real>(&self) -> KernelParams<T> {
        KernelParams {
            alpha: T::lit(self.alpha),
            beta: T::lit(self.beta),
            gamma: T::lit(self.gamma),
        }
    }

    pub fn flow<T: Real>(&self, seed: u64) -> FlowConfig<T> {
        FlowConfig::new(T::lit(self.step_size), self.iterations)
            .with_noise(T::lit(self.noise_level))
            .with_seed(seed)
    }
}

impl MixtureScenario {
    pub fn name(&self) -> &'static str {
        match self {
            Self::FourToFour => "four_to_four",
            Self::TwoToFour => "two_to_four",
        }
    }

    pub fn source(&self) -> &'static [GaussianComponent] {
        match self {
            Self::FourToFour => &FOUR_SOURCE,
            Self::TwoToFour => &TWO_SOURCE,
        }
    }

    pub fn target(&self) -> &'static [GaussianComponent] {
        match self {
            Self::FourToFour => &FOUR_TARGET,
            Self::TwoToFour => &TWO_TARGET,
        }
    }

    pub fn defaults(&self) -> ScenarioDefaults {
        match self {
            Self::FourToFour => ScenarioDefaults {
                alpha: 0.3,
                beta: 0.15,
                gamma: 1.0,
                step_size: 0.05,
                noise_level: 0.0,
                iterations: 2000,
            },
            Self::TwoToFour => ScenarioDefaults {
                alpha: 0.3,
                beta: 0.1,
                gamma: 0.5,
                step_size: 0.03,
                noise_level: 0.1,
                iterations: 2500,
            },
        }
    }
}

impl std::str::FromStr for MixtureScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "four_to_four" | "4to4" => Ok(Self::FourToFour),
            "two_to_four" | "2to4" => Ok(Self::TwoToFour),
            other => Err(Error::InvalidConfig(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Draws from the mixture, returning points and their component indices.
pub fn sample_components<R: Rng + ?Sized>(
    components: &[GaussianComponent],
    count: usize,
    rng: &mut R,
) -> (Vec<[f64; 2]>, Vec<usize>) {
    let factors: Vec<DMatrix<f64>> = components
        .iter()
        .map(|c| {
            let cov = DMatrix::from_fn(2, 2, |i, j| c.cov[i][j]);
            Cholesky::new(cov).expect("mixture covariances are SPD").l()
        })
        .collect();
    let total: f64 = components.iter().map(|c| c.weight).sum();
    let mut points = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut idx = components.len() - 1;
        for (k, c) in components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                idx = k;
                break;
            }
        }
        let e = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let p = &factors[idx] * e;
        let c = &components[idx];
        points.push([c.mean[0] + p[0], c.mean[1] + p[1]]);
        labels.push(idx);
    }
    (points, labels)
}

fn component_particle<T: Real>(c: &GaussianComponent, x: [f64; 2]) -> Result<Particle<T>> {
    Particle::new(
        DVector::from_vec(vec![T::lit(x[0]), T::lit(x[1])]),
        DVector::from_vec(vec![T::lit(c.mean[0]), T::lit(c.mean[1])]),
        SpdMatrix::try_new(DMatrix::from_fn(2, 2, |i, j| T::lit(c.cov[i][j])))?,
    )
}

/// Labeled measure with one particle per sampled point.
pub fn sample_measure<T: Real, R: Rng + ?Sized>(
    components: &[GaussianComponent],
    count: usize,
    rng: &mut R,
) -> Result<EmpiricalMeasure<T>> {
    let (points, idx) = sample_components(components, count, rng);
    let particles = points
        .iter()
        .zip(&idx)
        .map(|(x, &k)| component_particle(&components[k], *x))
        .collect::<Result<Vec<_>>>()?;
    EmpiricalMeasure::with_labels(particles, idx.iter().map(|k| k.to_string()).collect())
}

/// Exact component moments weighted by how often each label occurs in
/// `measure`; components that were never drawn are left out.
pub fn component_moments<T: Real>(
    components: &[GaussianComponent],
    measure: &EmpiricalMeasure<T>,
) -> Result<ClassMoments<T>> {
    let labels = measure.labels().ok_or(Error::Empty("component labels"))?;
    let classes = components
        .iter()
        .enumerate()
        .filter_map(|(k, c)| {
            let label = k.to_string();
            let count = labels.iter().filter(|y| **y == label).count();
            (count > 0).then(|| {
                let z = component_particle::<T>(c, c.mean)?;
                Ok(ClassMoment {
                    label,
                    mu: z.mu,
                    sigma: z.sigma,
                    count,
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ClassMoments::new(classes)
}

/// Source measure, target measure and target class moments for a seed.
#[derive(Clone, Debug)]
pub struct MixtureInstance<T: Real> {
    pub scenario: MixtureScenario,
    pub source: EmpiricalMeasure<T>,
    pub target: EmpiricalMeasure<T>,
    pub target_moments: ClassMoments<T>,
}

/// Samples the source then the target from one seeded stream.
pub fn build_instance<T: Real>(scenario: MixtureScenario, seed: u64) -> Result<MixtureInstance<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = sample_measure(scenario.source(), PARTICLES_PER_MIXTURE, &mut rng)?;
    let target = sample_measure(scenario.target(), PARTICLES_PER_MIXTURE, &mut rng)?;
    let target_moments = component_moments(scenario.target(), &target)?;
    Ok(MixtureInstance {
        scenario,
        source,
        target,
        target_moments,
    })
}

/// Label of the target particle closest in feature space (lowest index on
/// ties).
pub fn nearest_target_labels<T: Real>(flowed: &EmpiricalMeasure<T>, target: &EmpiricalMeasure<T>) -> Result<Vec<String>> {
    let labels = target.labels().ok_or(Error::Empty("target labels"))?;
    flowed.same_shape(target)?;
    Ok(flowed
        .particles()
        .iter()
        .map(|z| {
            let mut best = 0;
            let mut best_d = (&z.x - &target.particles()[0].x).norm_squared();
            for (j, t) in target.particles().iter().enumerate().skip(1) {
                let d = (&z.x - &t.x).norm_squared();
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            labels[best].clone()
        })
        .collect())
}

/// Fraction of positions where the two label lists agree.
pub fn agreement(a: &[String], b: &[String]) -> f64 {
    assert_eq!(a.len(), b.len(), "label lists differ in length");
    if a.is_empty() {
        return 1.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}
