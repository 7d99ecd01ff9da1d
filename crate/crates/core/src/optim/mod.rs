//! Derivative-free optimizers.

pub mod cobyla;
pub mod pso;
