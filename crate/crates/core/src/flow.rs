//! Discretized gradient-flow engine.
//!
//! Each iteration freezes the current measure `ρ^τ`, evaluates the descent
//! field `Φ^τ = ∇̃m_target − ∇̃m_ρτ` at every particle and moves the particle
//! along the geodesic `exp_z(s Φ^τ(z))`. The noisy variant first pushes each
//! particle along a random tangent scaled by the noise level and evaluates
//! `Φ^τ` at the perturbed location, with `m_ρτ` still taken from the
//! unperturbed measure.
//!
//! Steps that would leave the SPD cone are halved per particle (the
//! "safeguard") and the retries are reported in the trace.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{witness_field, KernelParams};
use crate::manifold::{exp_map_with_floor, tangent_norm_squared, Particle, SymMatrix, TangentVector, DEFAULT_SPD_FLOOR};
use crate::measure::EmpiricalMeasure;
use crate::mmd::{mean_kernel, mmd_squared_cached};
use crate::scalar::Real;

pub const RMS_DECAY: f64 = 0.9;
pub const RMS_EPSILON: f64 = 1e-8;

/// How the step size evolves with the iteration counter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    Constant,
    /// `s₀ / (1 + τ/τ₀)`.
    Harmonic { tau0: f64 },
}

/// How the noise level evolves with the iteration counter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSchedule {
    Constant,
    /// `β₀ · (max(τ,1) · s_τ)^{-1/2}`.
    InverseSqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    None,
    /// Per-coordinate running second moment (decay 0.9, epsilon 1e-8).
    Rms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig<T> {
    /// Initial step size `s₀`.
    pub step_size: T,
    pub step_schedule: StepSchedule,
    /// Initial noise level `β₀`; zero selects the noiseless scheme.
    pub noise_level: T,
    pub noise_schedule: NoiseSchedule,
    pub iterations: usize,
    /// Factor applied to a step that leaves the SPD cone.
    pub backoff: T,
    pub max_retries: usize,
    pub seed: u64,
    pub preconditioner: Preconditioner,
    pub spd_floor: T,
    /// Worker threads for per-particle updates; 0 uses the global pool.
    pub workers: usize,
    /// Record wall-clock milliseconds in the trace (breaks byte determinism).
    pub record_timing: bool,
}

impl<T: Real> FlowConfig<T> {
    pub fn new(step_size: T, iterations: usize) -> Self {
        Self {
            step_size,
            step_schedule: StepSchedule::Constant,
            noise_level: T::zero(),
            noise_schedule: NoiseSchedule::Constant,
            iterations,
            backoff: T::lit(0.5),
            max_retries: 30,
            seed: 0,
            preconditioner: Preconditioner::None,
            spd_floor: T::lit(DEFAULT_SPD_FLOOR),
            workers: 1,
            record_timing: false,
        }
    }

    pub fn with_noise(mut self, level: T) -> Self {
        self.noise_level = level;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.step_size > T::zero() && self.step_size.is_finite()) {
            return bad(format!("step size must be positive, got {}", self.step_size));
        }
        if let StepSchedule::Harmonic { tau0 } = self.step_schedule {
            if !(tau0 > 0.0 && tau0.is_finite()) {
                return bad(format!("harmonic tau0 must be positive, got {tau0}"));
            }
        }
        if !(self.noise_level >= T::zero() && self.noise_level.is_finite()) {
            return bad(format!("noise level must be nonnegative, got {}", self.noise_level));
        }
        if !(self.backoff > T::zero() && self.backoff < T::one()) {
            return bad(format!("backoff must lie in (0, 1), got {}", self.backoff));
        }
        if !(self.spd_floor > T::zero()) {
            return bad("spd floor must be positive".into());
        }
        Ok(())
    }

    pub fn step_at(&self, tau: usize) -> T {
        match self.step_schedule {
            StepSchedule::Constant => self.step_size,
            StepSchedule::Harmonic { tau0 } => self.step_size / (T::one() + T::from_count(tau) / T::lit(tau0)),
        }
    }

    pub fn noise_at(&self, tau: usize) -> T {
        match self.noise_schedule {
            NoiseSchedule::Constant => self.noise_level,
            NoiseSchedule::InverseSqrt => {
                let t = T::from_count(tau.max(1));
                self.noise_level / (t * self.step_at(tau)).sqrt()
            }
        }
    }
}

/// One row per completed iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow<T> {
    pub tau: usize,
    /// Squared MMD of the measure the step started from.
    pub mmd2: T,
    /// Mean squared norm of the descent field at the evaluation points
    /// (the particles, or their perturbations in the noisy scheme).
    pub dissipation: T,
    /// Smallest effective step size over particles.
    pub step: T,
    /// Smallest effective noise level over particles.
    pub noise: T,
    /// Total safeguard halvings in this iteration.
    pub retries: usize,
    pub ms: u64,
    /// `dissipation / (β² · ½MMD²)`, reported for noisy steps only.
    pub noise_ratio: Option<T>,
}

pub const TRACE_HEADER: &str = "tau,mmd2,dissipation,step,noise,retries,ms";

impl<T: Real> TraceRow<T> {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.tau,
            self.mmd2.to_f64_lossy(),
            self.dissipation.to_f64_lossy(),
            self.step.to_f64_lossy(),
            self.noise.to_f64_lossy(),
            self.retries,
            self.ms
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowTrace<T> {
    pub rows: Vec<TraceRow<T>>,
}

impl<T> Default for FlowTrace<T> {
    fn default() -> Self {
        Self { rows: Vec::new() }
    }
}

impl<T: Real> FlowTrace<T> {
    pub fn mmd2(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.mmd2).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for row in &self.rows {
            writeln!(out, "{}", row.csv_line())?;
        }
        Ok(())
    }
}

/// Running second-moment estimates for one particle.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsAccumulator<T: Real> {
    pub x: DVector<T>,
    pub mu: DVector<T>,
    pub sigma: DMatrix<T>,
}

impl<T: Real> RmsAccumulator<T> {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            x: DVector::zeros(m),
            mu: DVector::zeros(n),
            sigma: DMatrix::zeros(n, n),
        }
    }
}

/// RMS-scales a tangent coordinatewise: `acc ← 0.9·acc + 0.1·g²`,
/// `g ← g / (√acc + 1e-8)`. The covariance leg is re-symmetrized.
pub fn precondition<T: Real>(acc: &mut RmsAccumulator<T>, g: &TangentVector<T>) -> TangentVector<T> {
    let decay = T::lit(RMS_DECAY);
    let fresh = T::one() - decay;
    let eps = T::lit(RMS_EPSILON);
    let scale = |a: &mut T, v: T| {
        *a = decay * *a + fresh * v * v;
        v / (a.sqrt() + eps)
    };
    let x = DVector::from_iterator(g.x.len(), acc.x.iter_mut().zip(g.x.iter()).map(|(a, v)| scale(a, *v)));
    let mu = DVector::from_iterator(g.mu.len(), acc.mu.iter_mut().zip(g.mu.iter()).map(|(a, v)| scale(a, *v)));
    let n = g.sigma.dim();
    let raw = g.sigma.as_matrix();
    let scaled: Vec<T> = acc.sigma.iter_mut().zip(raw.iter()).map(|(a, v)| scale(a, *v)).collect();
    TangentVector {
        x,
        mu,
        sigma: SymMatrix::symmetric_part(&DMatrix::from_column_slice(n, n, &scaled)),
    }
}

/// Draws `U ~ N(0,I_m) ⊗ N(0,I_n) ⊗ N_{S^n}(0,1)`; the symmetric leg has
/// i.i.d. standard normal upper triangle (diagonal included), mirrored.
pub fn sample_tangent_noise<T: Real, R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize) -> TangentVector<T> {
    let mut normal = || T::lit(rng.sample::<f64, _>(StandardNormal));
    let x = DVector::from_fn(m, |_, _| normal());
    let mu = DVector::from_fn(n, |_, _| normal());
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let e = normal();
            v[(i, j)] = e;
            v[(j, i)] = e;
        }
    }
    TangentVector {
        x,
        mu,
        sigma: SymMatrix::from_symmetric_unchecked(v),
    }
}

/// Generator for particle `particle` at iteration `tau`: ChaCha stream `tau`,
/// positioned at a particle-specific block so draws never overlap.
pub fn particle_rng(seed: u64, tau: usize, particle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tau as u64);
    rng.set_word_pos((particle as u128) << 40);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState<T: Real> {
    pub tau: usize,
    pub measure: EmpiricalMeasure<T>,
    pub seed: u64,
    pub accumulators: Option<Vec<RmsAccumulator<T>>>,
}

impl<T: Real> FlowState<T> {
    pub fn new(measure: EmpiricalMeasure<T>, config: &FlowConfig<T>) -> Self {
        let accumulators = match config.preconditioner {
            Preconditioner::None => None,
            Preconditioner::Rms => Some(vec![RmsAccumulator::zeros(measure.m(), measure.n()); measure.len()]),
        };
        Self {
            tau: 0,
            measure,
            seed: config.seed,
            accumulators,
        }
    }
}

/// `Φ(z) = ∇̃m_target(z) − ∇̃m_ρ(z)`.
pub fn descent_direction<T: Real>(
    p: &KernelParams<T>,
    rho: &EmpiricalMeasure<T>,
    target: &EmpiricalMeasure<T>,
    z: &Particle<T>,
) -> Result<TangentVector<T>> {
    Ok(witness_field(p, target, z)?.sub(&witness_field(p, rho, z)?))
}

struct Moved<T: Real> {
    particle: Particle<T>,
    t: T,
    retries: usize,
}

fn is_infeasible(e: &Error) -> bool {
    matches!(e, Error::InfeasibleStep { .. } | Error::NotSpd { .. } | Error::NonFinite(_))
}

/// Geodesic move with per-particle halving until the step stays in the cone.
/// Returns `None` once `max_retries` halvings are exhausted.
fn safeguarded_move<T: Real>(
    z: &Particle<T>,
    dir: &TangentVector<T>,
    t0: T,
    config: &FlowConfig<T>,
) -> Result<Option<Moved<T>>> {
    let mut t = t0;
    for retries in 0..=config.max_retries {
        match exp_map_with_floor(z, dir, t, config.spd_floor) {
            Ok(particle) => return Ok(Some(Moved { particle, t, retries })),
            Err(e) if is_infeasible(&e) => t *= config.backoff,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

struct ParticleUpdate<T: Real> {
    particle: Particle<T>,
    accumulator: Option<RmsAccumulator<T>>,
    field_norm2: T,
    step: T,
    noise: T,
    retries: usize,
}

/// Per-run state that does not change across iterations.
pub struct FlowEngine<'a, T: Real> {
    params: &'a KernelParams<T>,
    target: &'a EmpiricalMeasure<T>,
    config: &'a FlowConfig<T>,
    target_term: T,
    pool: Option<rayon::ThreadPool>,
}

impl<'a, T: Real> FlowEngine<'a, T> {
    pub fn new(params: &'a KernelParams<T>, target: &'a EmpiricalMeasure<T>, config: &'a FlowConfig<T>) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        let pool = if config.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.workers)
                    .build()
                    .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            params,
            target,
            config,
            target_term: mean_kernel(params, target, target)?,
            pool,
        })
    }

    pub fn mmd_squared(&self, rho: &EmpiricalMeasure<T>) -> Result<T> {
        mmd_squared_cached(self.params, rho, self.target, self.target_term)
    }

    fn update_particle(&self, state: &FlowState<T>, i: usize, s: T, beta: T) -> Result<ParticleUpdate<T>> {
        let rho = &state.measure;
        let z = &rho.particles()[i];
        let mut retries = 0;
        let mut noise = beta;
        let perturbed;
        let eval_point = if beta > T::zero() {
            let mut rng = particle_rng(state.seed, state.tau, i);
            let u = sample_tangent_noise::<T, _>(&mut rng, z.m(), z.n());
            let moved = safeguarded_move(z, &u, beta, self.config)?.ok_or(Error::SafeguardExhausted {
                tau: state.tau,
                particle: i,
                retries: self.config.max_retries,
            })?;
            retries += moved.retries;
            noise = moved.t;
            perturbed = moved.particle;
            &perturbed
        } else {
            z
        };
        let field = descent_direction(self.params, rho, self.target, eval_point)?;
        let field_norm2 = tangent_norm_squared(eval_point, &field)?;
        let (direction, accumulator) = match &state.accumulators {
            Some(accs) => {
                let mut acc = accs[i].clone();
                let d = precondition(&mut acc, &field);
                (d, Some(acc))
            }
            None => (field, None),
        };
        let moved = safeguarded_move(eval_point, &direction, s, self.config)?.ok_or(Error::SafeguardExhausted {
            tau: state.tau,
            particle: i,
            retries: self.config.max_retries,
        })?;
        Ok(ParticleUpdate {
            particle: moved.particle,
            accumulator,
            field_norm2,
            step: moved.t,
            noise,
            retries: retries + moved.retries,
        })
    }

    fn map_particles(&self, state: &FlowState<T>, order: &[usize], s: T, beta: T) -> Vec<Result<ParticleUpdate<T>>> {
        let run = || order.par_iter().map(|&i| self.update_particle(state, i, s, beta)).collect::<Vec<_>>();
        match (&self.pool, self.config.workers) {
            (Some(pool), _) => pool.install(run),
            (None, 0) => run(),
            (None, _) => order.iter().map(|&i| self.update_particle(state, i, s, beta)).collect(),
        }
    }

    /// One iteration with step `s` and noise level `beta` (zero for the
    /// noiseless scheme). Particles are processed in `order`, but every
    /// update reads only the frozen input state.
    pub(crate) fn step_in_order(
        &self,
        state: &FlowState<T>,
        s: T,
        beta: T,
        order: &[usize],
    ) -> Result<(FlowState<T>, TraceRow<T>)> {
        if !(s > T::zero()) {
            return Err(Error::InvalidConfig(format!("step size must be positive, got {s}")));
        }
        if !(beta >= T::zero()) {
            return Err(Error::InvalidConfig(format!("noise level must be nonnegative, got {beta}")));
        }
        state.measure.same_shape(self.target)?;
        let started = Instant::now();
        let mmd2 = self.mmd_squared(&state.measure)?;
        let n = state.measure.len();
        let mut slots: Vec<Option<ParticleUpdate<T>>> = (0..n).map(|_| None).collect();
        for (&i, update) in order.iter().zip(self.map_particles(state, order, s, beta)) {
            slots[i] = Some(update?);
        }
        let updates: Vec<ParticleUpdate<T>> = slots
            .into_iter()
            .map(|u| u.ok_or(Error::InvalidConfig("processing order must cover every particle".into())))
            .collect::<Result<_>>()?;

        let mut dissipation = T::zero();
        let mut step = s;
        let mut noise = beta;
        let mut retries = 0;
        let mut particles = Vec::with_capacity(n);
        let mut accumulators = state.accumulators.as_ref().map(|_| Vec::with_capacity(n));
        for u in updates {
            dissipation += u.field_norm2;
            step = step.min(u.step);
            noise = noise.min(u.noise);
            retries += u.retries;
            particles.push(u.particle);
            if let (Some(accs), Some(acc)) = (accumulators.as_mut(), u.accumulator) {
                accs.push(acc);
            }
        }
        dissipation /= T::from_count(n);
        let loss = mmd2 * T::lit(0.5);
        let noise_ratio = (beta > T::zero() && loss > T::zero()).then(|| dissipation / (noise * noise * loss));
        let row = TraceRow {
            tau: state.tau,
            mmd2,
            dissipation,
            step,
            noise,
            retries,
            ms: if self.config.record_timing {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
            noise_ratio,
        };
        let next = FlowState {
            tau: state.tau + 1,
            measure: state.measure.with_particles(particles)?,
            seed: state.seed,
            accumulators,
        };
        Ok((next, row))
    }

    pub fn step(&self, state: &FlowState<T>, s: T, beta: T) -> Result<(FlowState<T>, TraceRow<T>)> {
        let order: Vec<usize> = (0..state.measure.len()).collect();
        self.step_in_order(state, s, beta, &order)
    }

    /// Runs the configured number of iterations, handing every trace row and
    /// resulting state to `observer` as soon as the iteration completes.
    pub fn run<F>(&self, rho0: EmpiricalMeasure<T>, mut observer: F) -> Result<(EmpiricalMeasure<T>, FlowTrace<T>)>
    where
        F: FnMut(&TraceRow<T>, &FlowState<T>) -> Result<()>,
    {
        rho0.same_shape(self.target)?;
        let mut state = FlowState::new(rho0, self.config);
        let mut trace = FlowTrace::default();
        for tau in 0..self.config.iterations {
            let (next, row) = self.step(&state, self.config.step_at(tau), self.config.noise_at(tau))?;
            observer(&row, &next)?;
            trace.rows.push(row);
            state = next;
        }
        Ok((state.measure, trace))
    }
}

/// One noiseless forward-Euler step from `state` with step size `s`.
pub fn euler_step<T: Real>(
    state: &FlowState<T>,
    p: &KernelParams<T>,
    target: &EmpiricalMeasure<T>,
    s: T,
    config: &FlowConfig<T>,
) -> Result<(FlowState<T>, TraceRow<T>)> {
    FlowEngine::new(p, target, config)?.step(state, s, T::zero())
}

/// One noisy step: perturb by `beta·U`, then descend from the perturbed point.
pub fn noisy_step<T: Real>(
    state: &FlowState<T>,
    p: &KernelParams<T>,
    target: &EmpiricalMeasure<T>,
    s: T,
    beta: T,
    config: &FlowConfig<T>,
) -> Result<(FlowState<T>, TraceRow<T>)> {
    FlowEngine::new(p, target, config)?.step(state, s, beta)
}

/// Runs `config.iterations` steps, noisy whenever the scheduled noise level
/// is positive.
pub fn run_flow<T: Real>(
    rho0: EmpiricalMeasure<T>,
    target: &EmpiricalMeasure<T>,
    p: &KernelParams<T>,
    config: &FlowConfig<T>,
) -> Result<(EmpiricalMeasure<T>, FlowTrace<T>)> {
    FlowEngine::new(p, target, config)?.run(rho0, |_, _| Ok(()))
}
