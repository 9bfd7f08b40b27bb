//! Prophet inequality with buyback.
//!
//! Solves the Y-function differential equation for the optimal ratio
//! `theta_f`, derives the selection density `phi` and threshold map `tau`,
//! builds the matching worst-case instances, and evaluates the optimal
//! dynamic program alongside online policies by exact enumeration or
//! Monte Carlo.

pub mod acceptance;
pub mod distributions;
pub mod ode;
pub mod phi;
pub mod dp;
pub mod instances;
pub mod reductions;
pub mod policies;
pub mod ppp;
pub mod lpcheck;
pub mod harness;
