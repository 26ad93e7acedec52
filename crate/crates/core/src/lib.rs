//! Cycle-level software model of the YANA event-driven SNN accelerator.
//!
//! The crate is organized around the deployment flow:
//!
//! - [`numerics`]: fixed-point arithmetic, leak LUTs and the LIF/LI kernels;
//! - [`events`]: source/destination event encodings, `.events` files,
//!   timestep binning and deterministic event dropping;
//! - [`netgraph`]: the SNN graph, magnitude pruning, quantization and
//!   capacity validation;
//! - [`compiler`]: mapping a quantized graph onto per-core memory images and
//!   the `.memcfg` text format;
//! - [`refsim`]: the golden functional simulator that defines bit-exact
//!   behavior;
//! - [`coresim`]: the cycle-stepped five-stage core pipeline model;
//! - [`socsim`]: three-core system composition with workload-driven timestep
//!   progression and run reporting.

pub mod compiler;
pub mod coresim;
pub mod events;
pub mod netgraph;
pub mod numerics;
pub mod refsim;
pub mod rng;
pub mod socsim;
