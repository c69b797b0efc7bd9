//! Synthetic data: the simulation DGP family, enumerated discrete
//! instances, and the benchmark harness.

pub mod bench;
pub mod dgp;
pub mod toy;
pub mod toys;

pub use bench::{run_benchmark, BenchmarkConfig, BenchmarkReport};
pub use dgp::{simulate_dgp, DgpCoeffs, DgpOracle, DgpSpec, DgpVariant, SimulatedData};
pub use toy::DiscreteToy;
