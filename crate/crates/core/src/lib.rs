//! Energy-efficient rate-splitting (RS-CMD) downlink beamforming.
//!
//! The pipeline is: [`scenario`] draws a cell, [`grouping`] forms the
//! common-message decoding groups, [`optimizer`] maximizes energy efficiency
//! under exact HD/SD rate targets, and [`pmr`] removes private messages one
//! at a time while re-optimizing. [`experiment`] wraps it all in a CLI.

pub mod conic;
pub mod experiment;
pub mod error;
pub mod grouping;
pub mod optimizer;
pub mod oracle;
pub mod pmr;
pub mod rates;
pub mod scenario;

pub use error::{Error, Result};
