//! Simulation of a stochastic delay heat equation with memory, driven by
//! fractional Brownian motion, solved block by block over the delay.

pub mod error;
pub mod density;
pub mod fbm;
pub mod grid;
pub mod model;
pub mod moments;
pub mod quadrature;
pub mod resolvent;
pub mod rng;
pub mod seed;
pub mod solver;
pub mod spectral;
pub mod stochastic;

pub use error::{Error, Result};
