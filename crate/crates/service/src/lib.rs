//! Annotation store and HTTP service.
//!
//! [`Store`] owns a directory of JSON records and serializes every mutation
//! through one writer; [`api::router`] exposes it over HTTP.

pub mod api;
pub mod error;
mod fsio;
pub mod store;

pub use error::ServiceError;
pub use fsio::FailPoint;
pub use store::{Assignment, Clock, ManualClock, ReportKind, ReportParams, Store, StoreConfig, SystemClock};
