//! Simulation of a nonlocal nondegenerate optical parametric amplifier (NOPA).
//!
//! Two inputs and two outputs sit at four remote stations. A four-mode
//! entangled resource, built from two EPR pairs and one beam splitter, is
//! consumed by homodyne detection at the input stations, classical
//! feedforward, and local displacement at the output stations.
//!
//! The crate carries two independent engines that must agree:
//!
//! * [`gaussian`]: mean vector and covariance matrix, with sampled homodyne
//!   outcomes and Gaussian conditioning.
//! * [`ledger`]: an exact Heisenberg-picture linear map from every live
//!   quadrature onto a fixed basis of source quadratures.
//!
//! On top of these sit the protocol itself ([`protocol`]), the four-partite
//! inseparability criteria ([`criteria`]) and a message-passing version of
//! the five stations ([`station`]).
//!
//! Quadratures follow `X = a + a†`, `P = -i(a - a†)`, so `[X, P] = 2i` and the
//! vacuum variance is 1.

pub mod criteria;
mod error;
pub mod gaussian;
pub mod json;
pub mod ledger;
pub mod protocol;
pub mod station;
pub mod stats;

pub use error::{Error, Result};
pub use gaussian::{
    GaussianState, InputSpec, ModeLabel, Physicality, Quadrature, QuadratureCombination,
    SymplecticOp,
};
pub use ledger::{BasisSpec, HeisenbergLedger};
pub use protocol::{
    DisplacementSignal, FeedforwardGains, MeasurementRecord, ProtocolConfig, RunResult,
};
