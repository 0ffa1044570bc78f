//! Cancellative spin-flip systems on finite tori, their annihilating duals,
//! voter-model perturbations and oriented-percolation comparisons.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod cancellative;
pub mod dual;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod lattice;
pub mod models;
pub mod percolation;
pub mod reaction;
pub mod rng;
pub mod stats;

pub use cancellative::{extract_cancellative, lv_closed_form, CancellativeSpec};
pub use dual::{DualChain, DualState};
pub use error::{Error, Result};
pub use experiments::{exact_duality_check, mc_duality_check, nu_half_probe, oddgoal_probe, ExactSystem};
pub use forward::{evolve_gillespie, evolve_graphical, walk_dual, CompiledModel, EventLog, InitialState};
pub use lattice::{Configuration, Kernel, Offset, Site, SiteSet, TorusLattice};
pub use models::{perturbation_view, ModelSpec, PerturbationView, RateTable};
pub use percolation::{front_evolve, Mode as PercolationMode, PercField};
pub use stats::Estimate;
