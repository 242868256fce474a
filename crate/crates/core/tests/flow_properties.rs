mod common;

use common::*;
use fgflow::flow::{descent_direction, euler_step, FlowEngine, FlowState};
use fgflow::manifold::tangent_norm;
use fgflow::mmd::{dissipation, loss, mmd_squared};
use fgflow::{run_flow, EmpiricalMeasure, FlowConfig, KernelParams, Particle, SpdMatrix};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain MMD particle descent on R^d with the Gaussian kernel
/// `exp(−Σ_k w_k (a_k − b_k)²)`.
struct FlatFlow {
    weights: Vec<f64>,
    target: Vec<Vec<f64>>,
}

impl FlatFlow {
    fn grad1(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut e = 0.0;
        for k in 0..a.len() {
            e += self.weights[k] * (a[k] - b[k]) * (a[k] - b[k]);
        }
        let kv = (-e).exp();
        (0..a.len()).map(|k| -2.0 * kv * self.weights[k] * (a[k] - b[k])).collect()
    }

    fn step(&self, pts: &[Vec<f64>], s: f64) -> Vec<Vec<f64>> {
        pts.iter()
            .map(|a| {
                let d = a.len();
                let mut pull = vec![0.0; d];
                for t in &self.target {
                    for (acc, g) in pull.iter_mut().zip(self.grad1(a, t)) {
                        *acc += g / self.target.len() as f64;
                    }
                }
                let mut push = vec![0.0; d];
                for b in pts {
                    for (acc, g) in push.iter_mut().zip(self.grad1(a, b)) {
                        *acc += g / pts.len() as f64;
                    }
                }
                (0..d).map(|k| a[k] + s * (pull[k] - push[k])).collect()
            })
            .collect()
    }
}

fn flat_measure(pts: &[Vec<f64>], m: usize, n: usize) -> EmpiricalMeasure<f64> {
    EmpiricalMeasure::new(
        pts.iter()
            .map(|p| {
                Particle::new(
                    DVector::from_column_slice(&p[..m]),
                    DVector::from_column_slice(&p[m..]),
                    SpdMatrix::identity(n),
                )
                .unwrap()
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn identity_covariances_follow_flat_mmd_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..5 {
        let (m, n) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let d = m + n;
        let mut pts: Vec<Vec<f64>> = (0..8).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let target: Vec<Vec<f64>> = (0..6).map(|_| (0..d).map(|_| rng.gen_range(0.0..2.0)).collect()).collect();
        let (alpha, beta) = (0.4, 0.7);
        let p = KernelParams::new(alpha, beta, 1.0).unwrap();
        let weights: Vec<f64> = (0..d).map(|k| if k < m { alpha } else { beta }).collect();
        let oracle = FlatFlow {
            weights,
            target: target.clone(),
        };
        let target_measure = flat_measure(&target, m, n);
        let config = FlowConfig::new(0.3, 1);
        let mut state = FlowState::new(flat_measure(&pts, m, n), &config);
        for _ in 0..100 {
            state = euler_step(&state, &p, &target_measure, 0.3, &config).unwrap().0;
            pts = oracle.step(&pts, 0.3);
            for (z, q) in state.measure.particles().iter().zip(&pts) {
                for k in 0..m {
                    assert!((z.x[k] - q[k]).abs() <= 1e-9);
                }
                for k in 0..n {
                    assert!((z.mu[k] - q[m + k]).abs() <= 1e-9);
                }
                assert_eq!(z.sigma, SpdMatrix::identity(n));
            }
        }
    }
}

/// Small random instance with the source displaced from the target.
fn instance(rng: &mut ChaCha8Rng) -> (EmpiricalMeasure<f64>, EmpiricalMeasure<f64>, KernelParams<f64>) {
    let (m, n) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    let (big_n, big_m) = (rng.gen_range(2..=20), rng.gen_range(2..=20));
    let rho = random_measure(rng, big_n, m, n, 0.0);
    let target = random_measure(rng, big_m, m, n, 1.0);
    let p = KernelParams::new(rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)).unwrap();
    (rho, target, p)
}

fn mmd_trace(rho: &EmpiricalMeasure<f64>, target: &EmpiricalMeasure<f64>, p: &KernelParams<f64>, s: f64, steps: usize) -> Vec<f64> {
    let config = FlowConfig::new(s, steps);
    let (last, trace) = run_flow(rho.clone(), target, p, &config).unwrap();
    let mut values = trace.mmd2();
    values.push(mmd_squared(p, &last, target).unwrap());
    values
}

fn nonincreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] + 1e-12)
}

#[test]
fn noiseless_flow_decreases_mmd_monotonically() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for case in 0..20 {
        let (rho, target, p) = instance(&mut rng);
        // Halve from s = 1 until the whole run decreases; smaller steps must
        // then decrease as well.
        let mut s = 1.0;
        while !nonincreasing(&mmd_trace(&rho, &target, &p, s, 100)) {
            s *= 0.5;
            assert!(s > 1e-4, "case {case}: no decreasing step found");
        }
        for shrink in [1.0, 0.5, 0.25] {
            let values = mmd_trace(&rho, &target, &p, s * shrink, 100);
            assert!(nonincreasing(&values), "case {case}: s = {}", s * shrink);
        }
        let values = mmd_trace(&rho, &target, &p, s, 100);
        assert!(values[values.len() - 1] < values[0]);
    }
}

#[test]
fn loss_slope_matches_dissipation() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let s = 1e-4;
    for case in 0..10 {
        let (rho, target, p) = instance(&mut rng);
        let config = FlowConfig::new(s, 1);
        let next = euler_step(&FlowState::new(rho.clone(), &config), &p, &target, s, &config).unwrap().0;
        let slope = (loss(&p, &next.measure, &target).unwrap() - loss(&p, &rho, &target).unwrap()) / s;
        let diss = dissipation(&p, &rho, &target).unwrap();
        let rel = (slope + diss).abs() / diss;
        assert!(rel <= 0.05, "case {case}: slope {slope}, dissipation {diss}");
    }
}

#[test]
fn dissipation_vanishes_only_with_the_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (rho, _, p) = instance(&mut rng);
    assert!(dissipation(&p, &rho, &rho).unwrap() <= 1e-18);
    for z in rho.particles() {
        let phi = descent_direction(&p, &rho, &rho, z).unwrap();
        assert!(tangent_norm(z, &phi).unwrap() <= 1e-9);
    }
}

#[test]
fn worker_count_does_not_change_the_result() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (rho, target, p) = instance(&mut rng);
    let mut one = FlowConfig::new(0.05, 20).with_noise(0.05).with_seed(3);
    one.workers = 1;
    let mut many = one.clone();
    many.workers = 4;
    let a = FlowEngine::new(&p, &target, &one).unwrap().run(rho.clone(), |_, _| Ok(())).unwrap();
    let b = FlowEngine::new(&p, &target, &many).unwrap().run(rho, |_, _| Ok(())).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mmd_is_symmetric_nonnegative_and_order_free(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rho, target, p) = instance(&mut rng);
        let ab = mmd_squared(&p, &rho, &target).unwrap();
        let ba = mmd_squared(&p, &target, &rho).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12);
        let mut shuffled = rho.particles().to_vec();
        shuffled.shuffle(&mut rng);
        let rho2 = EmpiricalMeasure::new(shuffled).unwrap();
        prop_assert!((mmd_squared(&p, &rho2, &target).unwrap() - ab).abs() <= 1e-12);
        prop_assert!((loss(&p, &rho2, &target).unwrap() - 0.5 * ab).abs() <= 1e-12);
        let d1 = dissipation(&p, &rho, &target).unwrap();
        let d2 = dissipation(&p, &rho2, &target).unwrap();
        prop_assert!((d1 - d2).abs() <= 1e-12 * d1.max(1.0));
    }
}
