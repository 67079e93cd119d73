//! Rate/purity region evaluation and random-coding simulation for
//! three-party catalytic purity distillation.
//!
//! Layering, bottom up: [`qmat`] (dense linear algebra), [`povm`],
//! [`infoq`] (cq states and entropies), [`region`], [`typical`], [`proto`].

pub mod infoq;
pub mod povm;
pub mod proto;
pub mod qmat;
pub mod region;
pub mod typical;

use thiserror::Error;

pub use qmat::{QmatError, Tolerances};

/// Errors raised above the linear-algebra layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Qmat(#[from] QmatError),
    #[error("invalid POVM: {0}")]
    Povm(String),
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("bad selection: {0}")]
    Selection(String),
    #[error("{0} is not prime")]
    NotPrime(usize),
    #[error("invalid outcome maps: {0}")]
    Maps(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("typical set is empty")]
    EmptyTypicalSet,
    #[error("resource cap exceeded: {0}")]
    CapExceeded(String),
    #[error("invariant breach: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
