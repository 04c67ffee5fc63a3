//! Constrained f-entropic risk measures (CVaR, EVaR) over data subgroups,
//! PAC-Bayesian generalization bounds for them, and self-bounding training
//! of Gaussian-posterior classifiers that minimizes those bounds directly.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod risk;
pub mod data;
pub mod model;
pub mod bounds;
pub mod trainer;
pub mod experiment;
