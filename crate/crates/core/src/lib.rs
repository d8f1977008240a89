//! Exact and asymptotic sampling probabilities for the typed ancestral
//! selection graph: the backward jump chain, its normalization recursion,
//! the Wright–Fisher diffusion dual, and Dirichlet limit theorems.

pub mod chain;
pub mod cli;
pub mod asymptotics;
pub mod config;
pub mod diffusion;
pub mod dirichlet;
pub mod lattice;
pub mod output;
pub mod params;
pub mod pim;
pub mod recursion;
pub mod simplex;
pub mod special;
pub mod table;
