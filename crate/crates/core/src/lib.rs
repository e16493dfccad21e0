//! Safe multi-agent lane-change planning on a microscopic traffic simulator.
//!
//! CAVs pick lane-level actions from a recurrent actor over their own
//! observation history plus features shared by the CAVs ahead of them. Every
//! action goes through a shield that forward-simulates worst-case braking and
//! falls back to an emergency stop. A centralized critic trains the actors.

pub mod action;
pub mod error;
pub mod harness;
pub mod marl;
pub mod neural;
pub mod perception;
pub mod safety;
pub mod traffic;
pub mod world;

pub use action::Action;
pub use error::{Error, Result};
