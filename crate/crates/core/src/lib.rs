//! Missing-data GAN laboratory.
//!
//! Two halves share this crate. The identifiability half ([`identify`]) works
//! with exact transition matrices over small discrete state spaces and
//! decides when a data distribution can be recovered from MCAR-masked
//! observations. The learning half ([`misgan`], [`imputer`]) trains small
//! dense MisGAN generators, critics and imputers on toy data, using the
//! crate's own reverse-mode autodiff ([`autodiff`], [`nn`]).

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod identify;
pub mod imputer;
pub mod masking;
pub mod misgan;
pub mod nn;
pub mod rng;
pub mod run;
pub mod tensor;
pub mod toy;
