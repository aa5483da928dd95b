//! Cross-reservoir inflow forecasting with domain generalization.
//!
//! The crate bundles a small reverse-mode differentiation engine
//! ([`tensor`]), the forecasting model with its pseudo-domain projector,
//! adversarial discriminator and metadata-conditioned FiLM adapter
//! ([`model`]), the training objectives and NSE metric ([`losses`]), a
//! synthetic many-reservoir benchmark plus CSV ingestion ([`data`]), the
//! two-stage training harness ([`train`]) and the experiment drivers used by
//! the command-line tool ([`config`], [`harness`]).

pub mod tensor;
pub mod data;
pub mod losses;
pub mod model;
pub mod config;
pub mod train;
pub mod harness;
