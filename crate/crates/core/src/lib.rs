//! Gait learning for a simulated hexapod: a central pattern generator
//! controller, a planar surrogate simulator, Gaussian-process Bayesian
//! optimization (single-objective, ParEGO and contextual), and learned motor
//! primitives used for shooting-based path planning.

pub mod bayesopt;
pub mod cpg;
pub mod experiment;
pub mod gp;
pub mod primitives;
pub mod sim;
pub mod tasks;
