//! Utility-maximizing bandwidth sharing: allocation, cost duality, static
//! planning, fluid and diffusion limits, and a discrete-event simulator.

pub mod allocation;
pub mod costfix;
pub mod desim;
pub mod error;
pub mod fluid;
pub mod net_model;
pub mod planning;
mod pricing;
pub mod scaling;
pub mod scenario;

pub use error::{Error, Result};
