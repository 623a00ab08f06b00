//! Day-to-day congestion pricing as an average-cost Markov decision
//! process.
//!
//! The pipeline: [`pwl`] approximates polynomial travel-time curves by
//! continuous increasing piecewise-linear functions; [`network`] collapses
//! series-parallel and chained multi-OD topologies to parallel routes;
//! [`equilibrium`] assigns demand to routes at user equilibrium and exposes
//! the total system travel time in piecewise form; [`mdp`] builds the finite
//! control model with truncated-Poisson (or aggregated-normal) transitions;
//! [`solver`] runs average-cost policy iteration, relative value iteration,
//! and seeded simulation; [`conditions`] verifies the drift and weighted
//! sup-norm bounds that certify the model is well posed.

pub mod conditions;
pub mod equilibrium;
pub mod mdp;
pub mod network;
pub mod pwl;
pub mod solver;
