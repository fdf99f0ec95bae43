//! Desk-scale pulsar survey processing: synthetic filterbank beams, a
//! dedispersion and FFT search pipeline, a coordinator-less work queue in a
//! shared directory, a calibrated cluster simulator and a DVD archive
//! planner.

pub mod archive;
pub mod beamio;
pub mod clientloop;
pub mod cli;
pub mod clustersim;
pub mod config;
pub mod dedisp;
pub mod fsutil;
pub mod periodsearch;
pub mod sensitivity;
pub mod workqueue;
