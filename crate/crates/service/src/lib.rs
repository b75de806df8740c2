//! Job service and command-line front end for `eegbench`.
//!
//! [`pipeline::run`] executes one job end to end. [`jobs::JobManager`]
//! queues jobs onto a fixed worker pool and keeps an ordered event log per
//! job. [`server::router`] exposes both over HTTP, and [`cli`] drives the
//! same pipeline without the service.

pub mod cli;
mod error;
pub mod jobs;
pub mod pipeline;
pub mod server;

pub use error::{ErrorClass, ServiceError, ServiceResult};
