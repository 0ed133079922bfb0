//! Preference-based training of per-instance tour policies for the
//! Euclidean TSP.
//!
//! The crate trains a per-instance edge-logit ("heatmap") policy with one of
//! two policy-gradient schemes:
//!
//! * preference optimization — rewards are reduced to pairwise (or listwise)
//!   win labels between sampled tours, and the policy is pushed to rank tours
//!   the way the reward does, via a statistical comparison model
//!   (Bradley-Terry, Thurstone, Plackett-Luce, or an unbounded exponential);
//! * a classic score-function baseline (`reinforce`) with a shared mean
//!   baseline, kept as the head-to-head competitor.
//!
//! Supporting pieces: instance generation and file formats ([`instance`]),
//! exact solvers for optimality gaps ([`oracle`]), masked autoregressive
//! sampling and scoring ([`policy`]), 2-opt local search and fine-tuning
//! pair construction ([`local_search`]), and the training loop plus
//! diagnostics ([`trainer`]).

// Parameter checks use the negated form `!(x > 0.0)` so that NaN fails
// validation along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod instance;
pub mod local_search;
pub mod oracle;
pub mod policy;
pub mod preference;
pub mod reinforce;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
