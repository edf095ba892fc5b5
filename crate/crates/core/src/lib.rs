//! Inertial gradient solver with two Tikhonov regularization terms.
pub mod problems;
pub mod schedules;
pub mod solver;
