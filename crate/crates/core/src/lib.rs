//! Engine for authoring LLM-driven interactive stories.
//!
//! - [`model`]: storyworlds, rules, playthrough batches and dimension labels
//! - [`batch_format`]: the playthrough batch exchange file
//! - [`bsv`]: bundled storyline graphs, highlights and batch comparison
//! - [`oracle`]: the single boundary for model calls, with live and mock backends
//! - [`dimensions`]: defining, inducing and classifying narrative dimensions
//! - [`runtime`]: game-master sessions with end-of-round rule checks
//! - [`player_sim`]: simulated playthroughs driven by player profiles

pub mod batch_format;
pub mod bsv;
pub mod dimensions;
pub mod fanout;
pub mod hash;
pub mod model;
pub mod oracle;
pub mod player_sim;
pub mod prompts;
pub mod runtime;

pub use model::*;
