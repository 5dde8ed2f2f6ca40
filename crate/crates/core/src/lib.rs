//! Numerical lab for the Schrödinger evolution with complex time,
//! `P_γ f(x,t) = (2π)^{-d} ∫ e^{i(x·ξ + t|ξ|²)} e^{-t^γ|ξ|²} f̂(ξ) dξ`.

pub mod counterexample;
pub mod error;
pub mod fit;
pub mod maximal;
pub mod numbertheory;
pub mod profiles;
pub mod propagator;
pub mod quad;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
