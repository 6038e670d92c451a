//! Oscillation-eliminating discontinuous Galerkin methods on triangles.
//!
//! - [`mesh`]: conforming triangulations, file format, structured generator.
//! - [`quadrature`], [`basis`]: reference rules and the orthogonal modal basis.
//! - [`physics`]: advection, Burgers and Euler fluxes.
//! - [`dg`]: modal state, projection, Lax-Friedrichs residual.
//! - [`oe`]: componentwise and rotation-invariant oscillation-eliminating filters.
//! - [`bp`]: convex decompositions, CFL constants and the bound-preserving limiter.
//! - [`time`]: SSP Runge-Kutta stepping with per-stage filter and limiter.
//! - [`harness`]: test problems, error norms, convergence and invariance studies.
//! - [`cli`]: configuration parsing and the command-line front end.

#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod basis;
pub mod bp;
pub mod cli;
pub mod dg;
pub mod harness;
pub mod mesh;
pub mod oe;
pub mod physics;
pub mod quadrature;
pub mod time;
