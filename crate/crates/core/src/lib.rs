//! Voronoi-margin geometry for token classifiers.
//!
//! The crate measures how far each prediction sits from the nearest decision
//! boundary of a softmax classifier (the top-1 minus top-2 logit gap), fits the
//! small-threshold scaling law of the fraction of positions below a margin,
//! and trains against two margin-refinement objectives:
//!
//! * [`objectives::margin_loss`]: raise the margin of low-margin positions.
//! * [`objectives::fisher_loss`]: spread the top-k candidates apart under the
//!   Fisher metric of the renormalized top-k softmax.
//!
//! Around that core sit a small reverse-mode differentiation engine
//! ([`autodiff`]), a tied-embedding toy language model with a dose-response
//! harness ([`toy`]), per-position audit comparisons ([`audit`]), and a
//! synthetic-manifold validator for the linear gap law ([`synth`]).
//!
//! Runnable walkthroughs for each capability live in the crate's `examples/`
//! directory; the `margin-lab` binary exposes the same pipeline on files.

pub mod audit;
pub mod autodiff;
pub mod cli;
pub mod error;
pub mod io;
pub mod margin;
pub mod objectives;
pub mod synth;
pub mod toy;

pub use error::{Error, Result};
pub use margin::{compute_margins, GapFit, GridSpec, MarginQuantiles, MarginRecord};
