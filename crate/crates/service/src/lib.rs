//! Project persistence and the REST service.
//!
//! - [`project`]: the project document and every operation on it
//! - [`store`]: atomic on-disk storage with one writer per project
//! - [`jobs`]: background jobs for model-bound operations
//! - [`api`]: the HTTP routes

pub mod api;
pub mod jobs;
pub mod project;
pub mod store;

pub use api::{router, serve, AppState};
pub use project::{Panel, Position, Project, ProjectError};
pub use store::{ProjectHandle, ProjectStore, StoreError};
