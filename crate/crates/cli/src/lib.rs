//! Application layer for the capture pipeline: the synthetic oracle rig,
//! dataset manifest conversion and the command implementations behind the
//! `posechain` binary.

pub mod commands;
pub mod manifest;
pub mod synth;
