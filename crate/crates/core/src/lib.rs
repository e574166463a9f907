//! Supervised-autonomy control stack for an inspection multirotor.
//!
//! The crate is organised along the data flow of one control tick:
//! [`sim`] produces truth and sensor frames, [`estimation`] rebuilds the
//! vehicle state, [`behaviors`] turn a context snapshot into motion
//! suggestions, [`control`] fuses them and closes the velocity loops, and
//! [`mission`] supplies autonomous intentions. [`bridge`] wires everything
//! into headless runs, the ground-station server and log metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod behaviors;
pub mod bridge;
pub mod config;
pub mod control;
pub mod error;
pub mod estimation;
pub mod events;
pub mod mission;
pub mod sim;

pub use error::*;

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}
