//! Disproportionation redox flow battery (DRFB) toolkit.
//!
//! * [`battery`]: isothermal lumped-parameter model, Nernst output map and
//!   its inverse, linear crossover baseline, RK4 simulation.
//! * [`basis`]: normalized Gaussian radial basis used to approximate the
//!   crossover flux.
//! * [`observer`]: adaptive Luenberger observer for state of charge and
//!   crossover flux.
//! * [`synthesis`]: polytopic LMI program producing certified observer gains.
//! * [`sdp`]: small barrier interior-point SDP solver backing the synthesis.
//! * [`bounds`]: ultimate-bound radii and related constants.
//! * [`telemetry`]: CSV ingestion, resampling and synthetic twin traces.
//!
//! Everything numerical is generic over [`Real`]; the `*64` aliases below
//! are the concrete `f64` types used by the CLI.

// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod battery;
pub mod bounds;
pub mod linalg;
pub mod observer;
pub mod scalar;
pub mod sdp;
pub mod synthesis;
pub mod telemetry;

pub use scalar::Real;

pub type Mat64 = linalg::Mat<f64>;
pub type BatteryParams64 = battery::BatteryParams<f64>;
pub type ModelMatrices64 = battery::ModelMatrices<f64>;
pub type StateVector64 = battery::StateVector<f64>;
pub type LinearCrossover64 = battery::LinearCrossover<f64>;
pub type RbfBasis64 = basis::RbfBasis<f64>;
pub type ParameterVector64 = basis::ParameterVector<f64>;
pub type ObserverConfig64 = observer::ObserverConfig<f64>;
pub type ObserverState64 = observer::ObserverState<f64>;
pub type EstimateRecord64 = observer::EstimateRecord<f64>;
pub type SynthesisConfig64 = synthesis::SynthesisConfig<f64>;
pub type GainSolution64 = synthesis::GainSolution<f64>;
pub type SdpProblem64 = sdp::SdpProblem<f64>;
pub type SdpSolution64 = sdp::SdpSolution<f64>;
pub type TelemetryTrace64 = telemetry::TelemetryTrace<f64>;
pub type TelemetrySample64 = telemetry::TelemetrySample<f64>;
pub type BoundAssumptions64 = bounds::BoundAssumptions<f64>;
pub type BoundReport64 = bounds::BoundReport<f64>;

pub type BatteryParams32 = battery::BatteryParams<f32>;
pub type RbfBasis32 = basis::RbfBasis<f32>;
