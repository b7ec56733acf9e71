//! Damping-control toolkit for inter-area oscillations in multi-machine
//! power grids.
//!
//! The crate covers the full loop from raw ringdown data to a verified
//! wide-area damping controller (WADC):
//!
//! * [`grid`] — a linear classical-swing surrogate with fixed-step
//!   simulation, discrete controllers with transport delay, and eigensolve
//!   oracles for true modes and residues;
//! * [`coherency`] — generator grouping via Nystrom-approximated spectral
//!   clustering on speed-deviation similarity;
//! * [`sysid`] — shared-denominator ARX regression blocks and the
//!   alternating least-squares sub-solvers;
//! * [`admm`] — consensus ADMM across areas for the shared denominator;
//! * [`modal`] — discrete poles, partial-fraction residues, and control
//!   loop ranking;
//! * [`wadc`] — residue-method washout + lead-lag controller design and
//!   its discrete realization;
//! * [`net`] — the length-prefixed JSON wire protocol run by the global
//!   and local processors over TCP;
//! * [`pipeline`] — the end-to-end orchestration used by the `wadc`
//!   binary.

pub mod admm;
pub mod coherency;
pub mod control;
pub mod grid;
pub mod linalg;
pub mod modal;
pub mod mode;
pub mod net;
pub mod pipeline;
pub mod sysid;
pub mod wadc;

pub use mode::Mode;
