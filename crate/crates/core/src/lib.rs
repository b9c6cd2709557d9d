// SPDX-License-Identifier: Apache-2.0

//! Tricubic B-spline orbital evaluation and benchmark harness.
//!
//! The crate evaluates `N` periodic tricubic B-spline orbitals at a position
//! (value; value, gradient and Laplacian; value, gradient and Hessian) over a
//! shared single-precision coefficient table stored spline-major (AoS),
//! spline-minor (SoA) or split into spline tiles (AoSoA). A walker driver
//! measures throughput with walker-level and nested tile-level threading, and
//! [`metrics`] turns runs into throughput, traffic and roofline records.
//!
//! ```
//! use bspb::{CoeffTableSoA, FillSpec, GridSpec, KernelKind, SplineKernels};
//!
//! let grid = GridSpec::cubic(8).unwrap();
//! let table = CoeffTableSoA::build(grid, 16, FillSpec::Constant(2.5)).unwrap();
//! let out = table.evaluate(KernelKind::Vgh, [1.25, 3.5, 7.75]).unwrap();
//! assert!((out.stream("v").unwrap()[0] - 2.5).abs() < 1e-5);
//! ```

pub mod aligned;
pub mod coeff;
pub mod driver;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod verify;

pub use coeff::{
    build_table, convert_aos_to_soa, memory_footprint, tile_table, CoeffTable, CoeffTableAoS,
    CoeffTableSoA, Coefficients, FillSpec, TableLayout, TiledCoeffTable,
};
pub use driver::{run_nested, run_population, BenchResult, Layout, PreparedTable, RunConfig};
pub use error::{Error, Result};
pub use grid::{basis_weights, compute_prefactors, map_to_grid, BasisWeights, GridPoint, GridSpec};
pub use kernels::{
    eval_tiled, AccessCounts, Evaluation, KernelKind, SplineKernels, WalkerOutputsAoS,
    WalkerOutputsSoA,
};
pub use oracle::oracle_f64;
