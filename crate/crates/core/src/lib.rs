//! Continuous relaxation of discrete algorithms.
//!
//! Every variable that needs a gradient is treated as a logistic random
//! variable centered at its value with scale `1/beta`. Comparisons become
//! probabilities, conditionals become convex combinations of their
//! branches, and while loops become series weighted by the probability of
//! running exactly `i` iterations. As `beta` grows the relaxed program
//! converges to the discrete one ("hard mode").
//!
//! Modules, bottom-up:
//! - [`autodiff`]: reverse-mode tape over fp64 tensors.
//! - [`relax`]: relaxed comparators, soft argmax/min/max, categorical equality.
//! - [`indexing`]: real-valued (logistic-kernel) and categorical indexing.
//! - [`program`]: statement AST and its relaxed / hard executor.
//! - [`algorithms`]: bubble sort, Bellman-Ford, two silhouette rasterizers,
//!   Levenshtein distance, plus plain discrete twins.
//! - [`supervision`]: desk-scale algorithmic-supervision training tasks.
//! - [`cli`]: command-line workflows.

pub mod algorithms;
pub mod autodiff;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod indexing;
pub mod io;
pub mod program;
pub mod relax;
pub mod supervision;

pub use error::{Error, Result};
