//! Category-conditioned text GAN with relativistic losses and hierarchical
//! evolutionary training.
//!
//! The crate is organised bottom-up: [`autodiff`] provides the reverse-mode
//! engine every model is built on; [`corpus`], [`oracle`], [`generator`] and
//! [`discriminator`] hold data and models; [`objectives`] and [`metrics`]
//! define what is optimised and measured; [`evolution`] and [`trainer`] run
//! training; [`config`] and [`runner`] wire it together for the command line.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod discriminator;
pub mod error;
pub mod evolution;
pub mod generator;
pub mod metrics;
pub mod objectives;
pub mod oracle;
pub mod params;
pub mod runner;
pub mod trainer;

pub use error::{Error, Result};
