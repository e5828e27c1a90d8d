//! Multi-domain CTR prediction with a clustering stage and a classification
//! stage.
//!
//! Instances are routed to latent clusters by dynamic routing over their
//! embeddings ([`routing`]). Each cluster owns a branch MLP that is fused with
//! a shared MLP by element-wise weight product ([`model`]). Everything runs in
//! `f64` on the CPU with hand-written backpropagation ([`nn`]).

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod routing;
