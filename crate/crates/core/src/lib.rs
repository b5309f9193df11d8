//! Low-rank loopy belief propagation on discrete factor graphs.
//!
//! Factor potentials can be stored densely or as a sum of `R` rank-one
//! outer products (CP form). For a CP factor the factor-to-variable message
//! never materializes the `d^n` table: every incoming message is projected
//! into rank space, the projections are multiplied elementwise and the
//! product is mapped back with the receiving slot's weight matrix. One
//! message therefore costs `O(n * d * R)` instead of `O(d^n)`.
//!
//! The crate also ships
//!
//! * a dense sum-product path and a brute-force enumerator used as oracles,
//! * a neuralized variant of the low-rank update operating on real-valued
//!   hidden states, with a hand-written backward pass and a finite
//!   difference checker,
//! * builders for higher-order factor graphs over sequences and typed
//!   (molecule-like) graphs with several parameter sharing schemes,
//! * timing harnesses for the per-message cost.
//!
//! Parallel sweeps use rayon when the `parallel` feature is enabled (the
//! default). Without it every sweep runs on the calling thread; results are
//! bitwise identical either way.

pub mod als;
pub mod bench;
pub mod builder;
pub mod error;
pub mod graph;
pub mod lbp;
pub mod neural;
pub mod par;
pub mod rng;
pub mod seq;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{FactorBinding, FactorGraph, ParamId, Payload};
pub use lbp::{BeliefSet, LbpOptions, MessageState};
pub use tensor::{CpFactor, DenseTensor, Limits};
