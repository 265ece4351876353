//! Simulation, verification and design of probabilistic quantum resetting
//! protocols: sequential probe circuits, link operators, tester Choi chains,
//! randomized central-subspace identification, an embedded SDP solver for
//! optimal testers, and a reproducible Monte Carlo harness.

pub mod design;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod network;
pub mod protocols;
pub mod subspace;

pub use linalg::{ComplexMatrix, HermitianMatrix, PureState};



