//! Finite-difference reference solvers for the one-dimensional cell and
//! boundary-value problems. These exist so the test suites can compare the
//! spectral and finite-element implementations against an independently
//! discretized path; nothing here is exported by the main library.

pub mod banded;
pub mod bvp1d;
pub mod cell1d;
