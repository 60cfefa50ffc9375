//! Time-bounded reachability for Markov automata via menu-based game
//! abstraction and scheduler-guided partition refinement.
//!
//! The pipeline is: [`io::parse_model`] a model, make goals absorbing,
//! start from [`abstraction::initial_partition`], then repeatedly
//! [`abstraction::build_game`], [`analysis::solve`] and
//! [`refinement::refine`] until the bound interval is narrow enough.
//! [`driver::check`] runs the whole loop.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abstraction;
pub mod analysis;
pub mod driver;
pub mod error;
mod graph;
pub mod io;
pub mod model;
pub mod refinement;

pub use abstraction::{build_game, initial_partition, AbstractGame, Partition};
pub use analysis::{solve, Bound, Objective};
pub use driver::{check, check_concrete, CheckRequest, CheckResult, Mode, Status};
pub use error::{Error, ParseError, Result};
pub use io::{parse_model, serialize_model, ModelDocument};
pub use model::{Distribution, MarkovAutomaton, MarkovAutomatonBuilder, RateDistribution, StateSet};
