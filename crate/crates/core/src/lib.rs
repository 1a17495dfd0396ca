//! Robust self-ensembling network (RSEN) for hyperspectral patch
//! classification from few labels and many unlabeled pixels.

pub mod basenet;
pub mod cli;
pub mod data;
pub mod ensemble;
pub mod evaluation;
pub mod rng;
pub mod tensor;
