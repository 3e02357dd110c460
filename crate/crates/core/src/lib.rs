//! Robust linear-plus-noise sensor signaling for LQG systems.
//!
//! The sensor commits to a signaling strategy before an attacker of unknown
//! type reads its outputs and applies its own LQG-optimal control. The design
//! problem reduces to one semidefinite program per candidate worst-case type
//! over posterior covariances; strategies are then synthesized in closed form.

#![forbid(unsafe_code)]

pub mod design;
pub mod error;
pub mod evaluate;
pub mod lqr;
pub mod matkit;
pub mod sdp;
pub mod synthesis;
pub mod sysmodel;

pub use error::{Error, Result};
pub use nalgebra::DMatrix;
