//! Signal processing, calibration, inference and power modeling for a
//! dual-accelerometer chest wearable.

pub mod binio;
pub mod bp_calib;
pub mod datastore;
pub mod demo;
pub mod dsp;
pub mod labeler;
pub mod pipeline;
pub mod power;
pub mod quant;
pub mod siggen;
pub mod tcn;
