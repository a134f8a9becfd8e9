//! ProMode: masked prosody encoding into fixed-length latents, dual-decoder
//! reconstruction and DTW-aligned continuation evaluation, together with a
//! synthetic prosody corpus to train and test on.

pub mod cli;
pub mod container;
pub mod data;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod synth;
pub mod trainer;
