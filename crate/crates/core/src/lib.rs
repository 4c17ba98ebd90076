//! Microgrid restoration: DistFlow modelling, convex relaxations, an LP-based
//! model-predictive controller and a constrained policy-optimization learner.

pub mod bench;
pub mod cmdp;
pub mod cpo;
pub mod lp;
pub mod mpc;
pub mod netmodel;
pub mod policy;
pub mod powerflow;
pub mod relaxations;
pub mod synth;
