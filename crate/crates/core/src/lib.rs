//! Simulation and control library for OCT-guided robotic subretinal needle
//! insertion with a deformation-aware virtual target layer.
//!
//! The pipeline per B⁵-scan frame is
//! [`oct::acquire`] → [`perception::segment`] → [`perception::perceive`] →
//! [`targeting::virtual_layer`] → [`control::velocity_command`], orchestrated
//! in virtual time by [`simloop::run_trial`] and batched by [`harness`].

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod harness;
pub mod oct;
pub mod perception;
pub mod phantom;
pub mod simloop;
pub mod targeting;
