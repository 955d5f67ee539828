#![cfg_attr(not(test), no_std)]
//! Core of a traffic-assignment experiment framework: road networks, demand,
//! routing, map matching, a discrete-time microsimulator, impact metrics and
//! the curve-fitting analysis used to study navigation-service adoption.
//!
//! Everything here is deterministic given explicit seeds and needs only
//! `alloc`.

// `!(x > 0.0)` is how parameter checks reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod analysis;
pub mod benchmark;
pub mod demand;
pub mod experiments;
pub mod hash;
pub mod mapmatch;
pub mod metrics;
pub mod network;
pub mod routing;
pub mod sim;
