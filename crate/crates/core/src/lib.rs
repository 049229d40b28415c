//! Kinematics and data-pipeline toolkit for a wearable hand exoskeleton.
//!
//! The crate covers two halves of the system:
//!
//! - the pose-tolerant thumb coupling: passive-hand forward kinematics
//!   ([`hand_model`]), the two distance constraints that tie the exoskeleton
//!   to the passive thumb and the self-motion manifold they leave behind
//!   ([`thumb_coupling`]), slider fit bounds ([`anthropometry`]) and
//!   covariance-ellipsoid summaries of measured wiggle space ([`wiggle`]);
//! - the demonstration pipeline: binary encoder stream and text log ingest
//!   ([`stream_ingest`]), alignment against video timestamps
//!   ([`sync_align`]), encoder-to-actuator retargeting ([`retarget`]) and
//!   episode storage plus training export ([`episode_store`]).
//!
//! Lengths are meters and angles radians unless a module says otherwise;
//! [`anthropometry`] works in millimeters.

pub mod anthropometry;
pub mod episode_store;
pub mod hand_model;
pub mod keyvalue;
pub mod pose;
pub mod retarget;
pub mod stream_ingest;
pub mod sync_align;
pub mod thumb_coupling;
pub mod wiggle;

pub use nalgebra::{Matrix3, UnitQuaternion, Vector3};
pub use pose::{Pose, Twist};

/// Number of encoder channels carried by every stream record and calibration table.
pub const FINGER_CHANNELS: usize = 6;
