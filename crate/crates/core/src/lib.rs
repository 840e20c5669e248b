//! Ranked bandits over tree-structured document collections.
//!
//! Documents are the leaves of a rooted tree whose ε-exponential metric says
//! how similar two documents are. Users follow a Bayesian tree network in
//! which relevance flips rarely along short edges, so similar documents tend
//! to be relevant to the same users. A ranking algorithm fills `k` slots,
//! the user clicks the first relevant document, and the goal is to maximize
//! the click probability.
//!
//! The crate has four layers:
//!
//! - [`tree`], [`user`] and [`inference`] hold the document tree, the
//!   generative user model, and exact queries such as `Pr[no click]` and
//!   `μ(x | Z_S)`.
//! - [`bandit`], [`metric`] and [`contextual`] hold the single-slot learners:
//!   UCB1, EXP3, the grid meta-algorithm, zooming (optionally with the
//!   correlation cap), and contextual zooming.
//! - [`ranked`] stacks one learner per slot and routes click feedback.
//! - [`config`], [`harness`] and [`properties`] run experiments, write CSV,
//!   and check the model's correlation guarantees exactly on small instances.
//!
//! ```
//! use rankbandit::inference::{brute_force_opt, slate_click_prob};
//! use rankbandit::user::discussion3_instance;
//!
//! let users = discussion3_instance();
//! let docs = users.tree().leaves().to_vec();
//! let (best, value) = brute_force_opt(&users, &docs, 2).unwrap();
//! assert!((value - 0.75).abs() < 1e-12);
//! assert!((slate_click_prob(&users, &best) - 0.75).abs() < 1e-12);
//! ```

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod config;
pub mod contextual;
pub mod error;
pub mod harness;
pub mod inference;
pub mod metric;
pub mod properties;
pub mod ranked;
pub mod tree;
pub mod user;

pub use error::{Error, Result};
pub use tree::{DocTree, NodeId};
pub use user::UserDistribution;
