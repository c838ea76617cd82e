//! Rotation-equivariant unrolled sparse-coding networks.
//!
//! Every dictionary is generated from a small set of basis filters by a finite
//! cyclic group of image rotations; inference is a fixed number of unrolled
//! ISTA or FISTA steps, trained end to end.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod filterbank;
pub mod network;
pub mod optim;
pub mod rotation;
pub mod sparse_coding;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
