//! Numerical laboratory for finite-time collapsing Kahler-Ricci flow on
//! symmetry-reduced Fano fibrations.
//!
//! The library integrates the scalar complex Monge-Ampere flow on two model
//! fibrations (`P^1 x torus` and `P^1 x P^1`), solves the auxiliary elliptic
//! Monge-Ampere problems (fibre prescribed-Ricci, fibre Kahler-Einstein, and
//! the twisted Kahler-Einstein equations on the base), measures the scalar
//! observables controlled by the collapse estimates, and fits power laws in
//! the collapse factor `E(t)` to produce pass/fail verdicts.

pub mod cohomology;
pub mod elliptic;
pub mod error;
pub mod estimators;
pub mod flow;
pub mod grid;
pub mod models;
pub mod pipeline;
pub mod verdicts;

pub use cohomology::{ClassData, ReferenceVolume};
pub use grid::{Field, Grid, StencilOrder};
pub use models::{
    GridSpec, InitialPerturbation, MetricField, Model, ModelKind, ModelSpec, PerturbationProfile,
};
