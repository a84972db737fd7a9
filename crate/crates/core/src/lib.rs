//! Self-correction training and step-level tree search over a synthetic
//! arithmetic reasoning environment.
//!
//! The crate is split along the two training stages and the pieces they
//! share:
//!
//! - [`env`]: tasks, reasoning states, candidate steps and the answer checker.
//! - [`policy`]: a linear-softmax step policy with a logistic self-evaluation
//!   head, analytic gradients and KL divergence to a frozen reference.
//! - [`selfcorrect`]: multi-attempt episodes trained with REINFORCE plus a KL
//!   penalty; fits the self-evaluation head used as the verifier.
//! - [`search`]: PUCT tree search whose state rewards combine outcome
//!   correctness with self-evaluation and verifier confidence.
//! - [`prefopt`]: preference pairs mined from search trees and optimized
//!   with a DPO objective against a per-round reference.
//! - [`pipeline`]: evaluation, ablation variants and the shared run config.
//!
//! Everything here is pure computation over owned values and builds without
//! `std`; file formats and the command-line front end live in the `scmcts`
//! crate.

#![no_std]

extern crate alloc;

pub mod env;
pub mod error;
mod math;
pub mod optim;
pub mod pipeline;
pub mod policy;
pub mod prefopt;
pub mod rng;
pub mod search;
pub mod selfcorrect;

pub use error::{Error, Result};
