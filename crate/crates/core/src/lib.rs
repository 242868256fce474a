//! Maximum-mean-discrepancy gradient flows of labeled datasets lifted to the
//! feature-Gaussian manifold `Z = R^m × R^n × S^n_++`.
//!
//! The pipeline is: lift a labeled dataset to an empirical measure on `Z`
//! ([`lifting`]), flow it towards a target measure with the Riemannian
//! forward-Euler scheme ([`flow`]), then recover categorical labels for the
//! flowed particles ([`transport`]). Everything numeric is generic over
//! [`Real`]; the `*64` aliases below fix the scalar to `f64`.

pub mod error;
pub mod flow;
pub mod io;
pub mod kernel;
pub mod lifting;
pub mod manifold;
pub mod measure;
pub mod mmd;
pub mod scalar;
pub mod scenario;
pub mod transport;

pub use error::{Error, Result};
pub use flow::{run_flow, FlowConfig, FlowEngine, FlowState, FlowTrace, TraceRow};
pub use kernel::KernelParams;
pub use manifold::{Particle, SpdMatrix, SymMatrix, TangentVector};
pub use measure::EmpiricalMeasure;
pub use scalar::Real;

pub type Particle64 = Particle<f64>;
pub type TangentVector64 = TangentVector<f64>;
pub type SpdMatrix64 = SpdMatrix<f64>;
pub type SymMatrix64 = SymMatrix<f64>;
pub type Measure64 = EmpiricalMeasure<f64>;
pub type KernelParams64 = KernelParams<f64>;
pub type FlowConfig64 = FlowConfig<f64>;
pub type FlowTrace64 = FlowTrace<f64>;

pub type Particle32 = Particle<f32>;
pub type Measure32 = EmpiricalMeasure<f32>;
pub type KernelParams32 = KernelParams<f32>;
pub type FlowConfig32 = FlowConfig<f32>;
