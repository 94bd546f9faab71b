//! Core library of the `finray` toolkit: a desk-scale simulator for a
//! reconfigurable fin-ray gripper with a force-sensing tactile skin.
//!
//! The crate is organised around the gripper's subsystems:
//!
//! * [`kinematics`] — closed-form four-bar linkage solve mapping linear
//!   actuator displacement to finger bend angle, gripper configuration
//!   presets and fingertip forward kinematics.
//! * [`compliance`] — quasi-static pseudo-rigid-body model of a fin-ray
//!   finger pressing on rigid object primitives.
//! * [`workspace`] — Monte Carlo sampling of fingertip contact geometry,
//!   circumradius statistics, Gaussian-KDE dexterity maps and in-hand
//!   translation ranges.
//! * [`tactile`] — tactile frame model, trace generation, low-pass
//!   filtering and threshold-based slip calibration/detection.
//! * [`slipnet`] — the 48-node sensor graph and a from-scratch
//!   graph-convolutional slip classifier with training and evaluation.
//! * [`control`] — synthetic grasp plant, grasp/cap-removal scenarios and
//!   the controller benchmark harness.
//!
//! All randomised operations take explicit seeds and draw from
//! counter-based sub-streams ([`rng`]), so results are reproducible and
//! independent of thread count.

pub mod compliance;
pub mod control;
pub mod kinematics;
pub mod rng;
pub mod slipnet;
pub mod tactile;
pub mod workspace;
