//! Simulation and joint estimation of interacting particle systems on weighted
//! directed graphs.
//!
//! Each agent `i` follows
//!
//! ```text
//! dX_i = sum_{j != i} a_ij Phi(X_j - X_i) dt + sigma dW_i,   Phi = sum_k c_k psi_k
//! ```
//!
//! and the crate recovers the weight matrix `a` together with the kernel
//! coefficients `c` from multi-trajectory observations, either by alternating
//! least squares ([`als`]), by operator regression followed by a rank-1
//! factorization ([`orals`]), or, for systems with several kernel types, by the
//! three-fold alternating scheme in [`multitype`].

pub mod als;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod linsolve;
pub mod metrics;
pub mod model;
pub mod multitype;
pub mod orals;
pub mod rng;
pub mod simulate;
pub mod tensors;

pub use error::{Error, Result};
pub use model::{BasisFn, BasisKind, BasisSpec, InitDist, KernelCoef, SystemSpec, WeightMatrix};
pub use simulate::TrajectoryData;
